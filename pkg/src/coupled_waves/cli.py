"""Command-line entry point: ``coupled-waves <command> SCENARIO [options]``.

Every run writes its CSV outputs, a gnuplot script per curve, PNG figures
(unless ``--no-figures``) and ``manifest.json``. ``coupled-waves replay``
re-runs a manifest and compares the CSV digests.

Exit codes: 0 success, 1 invalid input, 2 a geometric hypothesis fails,
3 a numerical solver failed, 4 a replay did not reproduce its outputs.
"""

from __future__ import annotations

import argparse
import logging
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__
from .control import HumContext, hum_solve, observability_estimate
from .dynamics import fit_decay, simulate
from .errors import CoupledWavesError, ParseError, SolverFailure, ValidationError
from .geometry import check_hypotheses, gcc_check, pmgc_check, pmgc_required_mask, ray_sample
from .output import read_manifest, resolve_output_dir, sha256_file, write_csv, write_manifest, write_plot_script
from .scenario import Scenario, parse_scenario
from .spectral import assemble_generator, resolvent_scan, spectral_seeds, spectrum

log = logging.getLogger("coupled_waves")

EXIT_OK, EXIT_INPUT, EXIT_HYPOTHESIS, EXIT_SOLVER, EXIT_REPLAY = 0, 1, 2, 3, 4


class Run:
    """Collects the artifacts of one command."""

    def __init__(self, outdir: Path, figures: bool):
        self.outdir = outdir
        self.figures = figures
        self.csv_files = []
        self.steps = 0
        self.results = {}
        self.exit_code = EXIT_OK

    def csv(self, name, columns, plot=None):
        path = write_csv(self.outdir / name, columns)
        self.csv_files.append(path)
        if plot is not None:
            x, ys, logy = plot
            write_plot_script(path, x, ys, logy=logy)
        return path

    def figure(self, fn, name, *args, **kwargs):
        if self.figures:
            from . import plotting

            getattr(plotting, fn)(*args, self.outdir / name, **kwargs)

    def text(self, name, body: str):
        (self.outdir / name).write_text(body.rstrip("\n") + "\n")


def _hypotheses(scenario, grid=None):
    coeffs = scenario.coefficients(grid)
    return check_hypotheses(coeffs.b, coeffs.c, scenario.pmgc)


# -- commands ------------------------------------------------------------------


def cmd_simulate(scenario: Scenario, opts: dict, run: Run):
    problem = scenario.problem(opts.get("horizon"), opts.get("n"))
    report = check_hypotheses(problem.coeffs.b, problem.coeffs.c, scenario.pmgc)
    print(f"hypotheses: {report.as_dict()}")
    res = simulate(problem, scenario.initial_state(problem.grid))
    run.steps = res.steps
    run.csv("energy.csv", res.trace.columns(), ("t", ["E", "Em"], True))
    run.figure("energy_figure", "energy.png", res.trace)
    run.results = {"E0": float(res.trace.E[0]), "ET": float(res.trace.E[-1]), "steps": res.steps}
    print(f"E(0) = {float(res.trace.E[0])!r}  E(T) = {float(res.trace.E[-1])!r}  steps = {res.steps}")
    return res


def cmd_decay_fit(scenario: Scenario, opts: dict, run: Run):
    res = cmd_simulate(scenario, opts, run)
    which = opts.get("which") or scenario.config["fit"]["which"]
    window = opts.get("window") or scenario.config["fit"]["window"]
    fit = fit_decay(res.trace, which, tuple(window) if window else None)
    run.csv(
        "fit.csv",
        {
            "theta": [fit.theta],
            "M": [fit.M],
            "residual": [fit.residual],
            "t_min": [fit.window[0]],
            "t_max": [fit.window[1]],
            "amplitude": [fit.amplitude],
            "decay_not_observed": [fit.decay_not_observed],
        },
    )
    run.figure("energy_figure", "energy.png", res.trace, fit=fit, which=which)
    run.results.update(theta=fit.theta, M=fit.M, residual=fit.residual, which=which)
    flag = "  (decay not observed)" if fit.decay_not_observed else ""
    print(f"{which} fit on {fit.window}: theta = {fit.theta!r}  M = {fit.M!r}  residual = {fit.residual!r}{flag}")


def _generator(scenario, opts):
    grid = scenario.grid_for(opts.get("n"))
    space = opts.get("space") or scenario.config["spectral"]["space"]
    return assemble_generator(grid, scenario.coefficients(grid), space)


def cmd_spectrum(scenario: Scenario, opts: dict, run: Run):
    gen = _generator(scenario, opts)
    spec = spectrum(gen)
    run.csv("spectrum.csv", {"re": spec.eigenvalues.real, "im": spec.eigenvalues.imag})
    run.figure("spectrum_figure", "spectrum.png", spec.eigenvalues)
    run.results = {"abscissa": spec.abscissa, "dimension": gen.dimension}
    print(f"spectral abscissa = {spec.abscissa!r}  (dimension {gen.dimension})")


def cmd_resolvent_scan(scenario: Scenario, opts: dict, run: Run):
    gen = _generator(scenario, opts)
    cfg = scenario.config["spectral"]
    beta_max = opts.get("beta_max") or cfg["beta_max"]
    n_points = opts.get("points") or cfg["n_points"]
    seeds = spectral_seeds(gen, beta_max, cfg["seeds"]) if cfg["seeds"] else ()
    curve = resolvent_scan(gen, beta_max, n_points, refine=cfg["refine"], seeds=seeds, jobs=opts.get("jobs", 1))
    run.csv("resolvent.csv", curve.columns(), ("beta", ["norm"], True))
    run.figure("resolvent_figure", "resolvent.png", curve)
    run.results = {"sup": curve.sup, "sup_beta": curve.sup_beta, "flagged": int(curve.flagged.sum())}
    print(f"sup resolvent norm = {curve.sup!r} at beta = {curve.sup_beta!r}; {int(curve.flagged.sum())} flagged point(s)")
    for b in curve.flagged_betas:
        print(f"  on spectrum: beta = {b!r}")


def cmd_gcc_check(scenario: Scenario, opts: dict, run: Run):
    cfg = scenario.config["gcc"]
    which = opts.get("region") or cfg["region"]
    horizon = opts.get("horizon") or cfg["horizon"]
    n_rays = opts.get("rays") or cfg["n_rays"]
    a = float(scenario.config["coefficients"]["a"])
    region = scenario.region(which)
    report = gcc_check(region, scenario.domain, a, horizon, n_rays)
    dim = scenario.domain.dim
    starts, dirs = ray_sample(scenario.domain, n_rays)
    cols = {}
    for i, ax in enumerate("xy"[:dim]):
        cols[f"start_{ax}"] = starts[:, i]
    for i, ax in enumerate("xy"[:dim]):
        cols[f"dir_{ax}"] = dirs[:, i]
    cols["entry_time"] = report.entry_times
    run.csv("gcc.csv", cols)
    run.figure("gcc_figure", "gcc.png", scenario.domain, report, region=region, horizon=horizon, speed=a)
    run.results = {"holds": report.holds, "max_entry_time": report.max_entry_time, "n_failing": report.n_failing}
    if report.holds:
        print(f"GCC holds for {which} region at T = {horizon}: max first-entry time {report.max_entry_time!r} over {report.n_rays} rays")
    else:
        print(f"GCC fails for {which} region at T = {horizon}: {report.n_failing} of {report.n_rays} rays never enter")
        print(f"offending ray: {report.describe_worst()}")
        run.exit_code = EXIT_HYPOTHESIS


def cmd_pmgc_check(scenario: Scenario, opts: dict, run: Run):
    if scenario.pmgc is None:
        raise ValidationError([("pmgc", "pmgc-check needs a [pmgc] table")])
    grid = scenario.grid_for(opts.get("n"))
    region = scenario.region("damping")
    required = pmgc_required_mask(scenario.domain, scenario.pmgc, grid)
    inside = region.contains(grid.nodes)
    ok = pmgc_check(region, scenario.domain, scenario.pmgc, grid)
    report = _hypotheses(scenario, grid)
    cols = {ax: grid.nodes[:, i] for i, ax in enumerate("xy"[: grid.dim])}
    cols.update(required=required.astype(int), in_region=inside.astype(int))
    run.csv("pmgc.csv", cols)
    run.results = {"pmgc": ok, "LH3": report.lh3, "hypotheses": report.as_dict()}
    print(f"PMGC {'holds' if ok else 'fails'}: {int(required.sum())} required node(s), {int((required & ~inside).sum())} outside the damping region")
    print(f"hypotheses: {report.as_dict()}")
    if not ok or not report.lh3:
        run.exit_code = EXIT_HYPOTHESIS


def cmd_observability(scenario: Scenario, opts: dict, run: Run):
    seed = opts.get("seed")
    seed = seed if seed is not None else scenario.require_seed()
    cfg = scenario.config["control"]
    problem = _control_problem(scenario, opts)
    ctx = HumContext(problem, cfg["space"])
    est = observability_estimate(
        seed=seed, n_random=cfg["n_random"], n_iterates=cfg["n_iterates"], modes=cfg["modes"], ctx=ctx
    )
    run.steps = ctx.steps
    kinds = np.concatenate([np.zeros(est.random_ratios.size, int), np.ones(est.iterate_ratios.size, int)])
    idx = np.concatenate([np.arange(est.random_ratios.size), np.arange(est.iterate_ratios.size)])
    run.csv("observability.csv", {"iterate": kinds, "index": idx, "ratio": np.concatenate([est.random_ratios, est.iterate_ratios])})
    run.figure("observability_figure", "observability.png", est)
    run.results = {"minimum": est.minimum, "space": ctx.space, "horizon": problem.horizon}
    print(f"minimum observability ratio = {est.minimum!r} ({ctx.space} space, T = {problem.horizon!r}, {est.modes} modes per component)")


def _control_problem(scenario, opts):
    problem = scenario.control_problem()
    if opts.get("horizon") or opts.get("n"):
        cfg = scenario.config["control"]
        n = opts.get("n") or cfg["n"]
        horizon = opts.get("horizon") or cfg["horizon"]
        if horizon is None:
            from .control import default_horizon

            horizon = default_horizon(scenario.grid_for(n), float(scenario.config["coefficients"]["a"]))
        problem = scenario.problem(horizon, n)
    return problem


def cmd_hum_control(scenario: Scenario, opts: dict, run: Run):
    cfg = scenario.config["control"]
    problem = _control_problem(scenario, opts)
    ctx = HumContext(problem, cfg["space"])
    tol = opts.get("tol") or scenario.config["tolerances"]["cg"]
    u0 = scenario.initial_state(problem.grid)
    report = hum_solve(u0, tol=tol, tikhonov=cfg["tikhonov"], maxiter=cfg["maxiter"], ctx=ctx)
    run.steps = ctx.steps
    run.csv("control.csv", report.control.columns())
    run.csv("cg_history.csv", {"iteration": np.arange(len(report.history)), "residual": report.history}, ("iteration", ["residual"], True))
    run.text("gramian.txt", report.summary())
    run.figure("control_figure", "control.png", report)
    run.results = {
        "iterations": report.iterations,
        "terminal_residual": report.terminal_residual,
        "observability_ratio": report.observability_ratio,
        "space": ctx.space,
        "horizon": problem.horizon,
    }
    print(report.summary())


COMMANDS = {
    "simulate": cmd_simulate,
    "decay-fit": cmd_decay_fit,
    "spectrum": cmd_spectrum,
    "resolvent-scan": cmd_resolvent_scan,
    "gcc-check": cmd_gcc_check,
    "pmgc-check": cmd_pmgc_check,
    "observability": cmd_observability,
    "hum-control": cmd_hum_control,
}


# -- dispatch ------------------------------------------------------------------


def execute(command: str, scenario: Scenario, opts: dict, outdir: Path, figures: bool = True) -> Run:
    """Run ``command`` and write its artifacts and manifest into ``outdir``."""
    outdir.mkdir(parents=True, exist_ok=True)
    run = Run(outdir, figures)
    start = time.perf_counter()
    COMMANDS[command](scenario, opts, run)
    write_manifest(outdir, command, scenario, opts, run.csv_files, time.perf_counter() - start, run.steps, run.results)
    return run


def replay(manifest_path, outdir=None) -> int:
    manifest = read_manifest(manifest_path)
    scenario = Scenario.from_dict(manifest["scenario"], source=manifest.get("source"))
    target = Path(outdir) if outdir else Path(tempfile.mkdtemp(prefix="coupled_waves_replay_"))
    run = execute(manifest["command"], scenario, manifest["options"], target, figures=False)
    mismatched = []
    for path in run.csv_files:
        expected = manifest["outputs"].get(path.name)
        status = "identical" if expected == sha256_file(path) else "DIFFERS"
        if status != "identical":
            mismatched.append(path.name)
        print(f"{path.name}: {status}")
    missing = set(manifest["outputs"]) - {p.name for p in run.csv_files}
    for name in sorted(missing):
        print(f"{name}: not produced")
    print(f"replay written to {target}")
    return EXIT_REPLAY if mismatched or missing else EXIT_OK


def _positive_float(text):
    val = float(text)
    if not val > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return val


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coupled-waves", description="Coupled damped wave laboratory.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("scenario", help="scenario TOML file")
    common.add_argument("-o", "--output", help="output directory (overrides $COUPLED_WAVES_OUTPUT and the scenario)")
    common.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
    common.add_argument("--n", type=int, help="interior nodes per axis (overrides the scenario)")

    p = sub.add_parser("simulate", parents=[common], help="integrate the damped system and record energies")
    p.add_argument("--horizon", type=_positive_float)
    p = sub.add_parser("decay-fit", parents=[common], help="simulate, then fit an exponential decay")
    p.add_argument("--horizon", type=_positive_float)
    p.add_argument("--which", choices=("strong", "mixed"))
    p.add_argument("--window", type=float, nargs=2, metavar=("T_MIN", "T_MAX"))
    p = sub.add_parser("spectrum", parents=[common], help="dense eigenvalues of the generator")
    p.add_argument("--space", choices=("strong", "weak"))
    p = sub.add_parser("resolvent-scan", parents=[common], help="resolvent norm on the imaginary axis")
    p.add_argument("--space", choices=("strong", "weak"))
    p.add_argument("--beta-max", type=_positive_float)
    p.add_argument("--points", type=int)
    p.add_argument("--jobs", type=int, default=1, help="threads for independent scan points")
    p = sub.add_parser("gcc-check", parents=[common], help="sampled geometric control condition")
    p.add_argument("--horizon", type=_positive_float)
    p.add_argument("--rays", type=int)
    p.add_argument("--region", choices=("damping", "coupling"))
    sub.add_parser("pmgc-check", parents=[common], help="piecewise multiplier condition and LH3")
    p = sub.add_parser("observability", parents=[common], help="observability ratio estimates")
    p.add_argument("--horizon", type=_positive_float)
    p.add_argument("--seed", type=int)
    p = sub.add_parser("hum-control", parents=[common], help="synthesize and verify an exact control")
    p.add_argument("--horizon", type=_positive_float)
    p.add_argument("--tol", type=_positive_float)

    p = sub.add_parser("replay", help="re-run a manifest and compare CSV digests")
    p.add_argument("manifest", help="manifest.json or the directory holding it")
    p.add_argument("-o", "--output", help="directory for the replayed outputs")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        if args.command == "replay":
            return replay(args.manifest, args.output)
        scenario = parse_scenario(args.scenario)
        opts = {
            k: v
            for k, v in vars(args).items()
            if k not in ("command", "scenario", "output", "no_figures", "verbose") and v is not None
        }
        outdir = resolve_output_dir(args.output, scenario.config["output"]["directory"], args.command)
        figures = scenario.config["output"]["figures"] and not args.no_figures
        run = execute(args.command, scenario, opts, outdir, figures)
        print(f"outputs written to {outdir}")
        return run.exit_code
    except SolverFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ParseError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (CoupledWavesError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
