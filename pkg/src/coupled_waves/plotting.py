"""PNG figures for CLI runs, rendered off-screen with the Agg backend."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (6.0, 3.8),
    "figure.dpi": 120,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
    "font.size": 9,
}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    # fixed metadata keeps repeated renders byte-stable
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def energy_figure(trace, path, fit=None, which="strong") -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.semilogy(trace.times, trace.E, label="E (strong)")
        if np.all(np.isfinite(trace.Em)):
            ax.semilogy(trace.times, trace.Em, label="E_m (mixed)", ls="--")
        if fit is not None:
            base = trace.E if which == "strong" else trace.Em
            ax.semilogy(trace.times, fit.bound(trace.times, base[0]), color="k", lw=0.8, label=f"M e^(-{fit.theta:.3g} t) E(0)")
            ax.axvspan(*fit.window, color="0.9", zorder=0)
        ax.set_xlabel("t")
        ax.set_ylabel("energy")
        ax.legend()
        return _save(fig, path)


def spectrum_figure(eigenvalues, path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(eigenvalues.real, eigenvalues.imag, ".", ms=3)
        ax.axvline(0.0, color="k", lw=0.6)
        ax.set_xlabel("Re")
        ax.set_ylabel("Im")
        return _save(fig, path)


def resolvent_figure(curve, path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ok = ~curve.flagged
        ax.semilogy(curve.betas[ok], curve.norms[ok], lw=0.8)
        for b in curve.flagged_betas:
            ax.axvline(b, color="r", lw=0.5, alpha=0.6)
        ax.set_xlabel("beta")
        ax.set_ylabel("resolvent norm")
        return _save(fig, path)


def gcc_figure(domain, report, path, region=None, horizon=None, speed=1.0) -> Path:
    from .geometry import trace_ray

    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        if domain.dim == 1:
            ax.hist(report.entry_times[np.isfinite(report.entry_times)], bins=50)
            ax.set_xlabel("first entry time")
            ax.set_ylabel("rays")
        else:
            lx, ly = domain.extents
            ax.add_patch(plt.Rectangle((0, 0), lx, ly, fill=False))
            if region is not None:
                for box in region.box_arrays():
                    ax.add_patch(plt.Rectangle((box[0, 0], box[1, 0]), *(box[:, 1] - box[:, 0]), alpha=0.3))
            if horizon is not None:
                segs = trace_ray(domain, report.worst_start, report.worst_direction, np.sqrt(speed), horizon)
                t0, p_last, v_last = segs[-1]
                pts = np.array([p for _, p, _ in segs] + [p_last + v_last * (horizon - t0)])
                ax.plot(pts[:, 0], pts[:, 1], "r-", lw=0.8)
            ax.set_aspect("equal")
        return _save(fig, path)


def observability_figure(estimate, path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.semilogy(np.sort(estimate.random_ratios), ".", label="random data")
        ax.semilogy(estimate.iterate_ratios, "-", label="inverse-power iterates")
        ax.set_xlabel("sample / iteration")
        ax.set_ylabel("observability ratio")
        ax.legend()
        return _save(fig, path)


def control_figure(report, path) -> Path:
    with plt.rc_context(STYLE):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.0, 3.6))
        ctl = report.control
        if ctl.nodes.size:
            im = ax1.imshow(ctl.control.T, aspect="auto", origin="lower", extent=(0, ctl.times[-1] + ctl.times[0], 0, ctl.nodes.size))
            fig.colorbar(im, ax=ax1)
        ax1.set_xlabel("t")
        ax1.set_ylabel("node on supp c")
        ax2.semilogy(report.history)
        ax2.set_xlabel("CG iteration")
        ax2.set_ylabel("relative residual")
        return _save(fig, path)
