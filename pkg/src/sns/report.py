"""Figures for run reports (Agg backend, reproducible PNG bytes)."""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_STYLE = {
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.2,
    "figure.dpi": 100,
}
# no timestamps or version strings in the PNG
_META = {"Software": None}


def _save(fig, path: Path) -> None:
    fig.tight_layout()
    fig.savefig(path, format="png", metadata=_META)
    plt.close(fig)


def plot_trajectory(rows: list[dict], path: Path, envelope_c: float | None = None) -> None:
    """Norm history of ``w`` and its low/high parts, with the fitted envelope."""
    with plt.rc_context(_STYLE):
        fig, (ax0, ax1) = plt.subplots(2, 1, figsize=(6.0, 5.0), sharex=True)
        t = [r["t"] for r in rows]
        ax0.plot(t, [r["norm_w_L2"] for r in rows], label=r"$\|w\|$")
        ax0.plot(t, [r["norm_wL_L2"] for r in rows], label=r"$\|w^L\|$")
        ax0.plot(t, [r["norm_wH"] for r in rows], label=r"$\|w^H\|$")
        if envelope_c is not None and envelope_c > 0:
            env = [math.exp(math.exp(envelope_c * s)) for s in t]
            ax0.plot(t, env, "k--", lw=0.8, label="envelope")
        ax0.set_yscale("log")
        ax0.set_ylabel("L2 norm")
        ax0.legend(loc="best", fontsize=8)
        ax1.step(t, [r["lambda"] for r in rows], where="post", label=r"$\lambda_t$")
        ax1.plot(t, [r["N_kappa"] for r in rows], label=r"$N_t$")
        ax1.set_yscale("log")
        ax1.set_xlabel("t")
        ax1.legend(loc="best", fontsize=8)
        _save(fig, path)


def plot_energy(reports: list, path: Path) -> None:
    """The four energy terms against the finite-difference derivative."""
    with plt.rc_context(_STYLE):
        fig, (ax0, ax1) = plt.subplots(2, 1, figsize=(6.0, 5.0), sharex=True)
        t = [r.t for r in reports]
        for k in range(1, 5):
            ax0.plot(t, [getattr(r, f"term{k}") for r in reports], label=f"term{k}")
        ax0.plot(t, [r.fd_derivative for r in reports], "k:", label="finite difference")
        ax0.set_ylabel("rate")
        ax0.legend(loc="best", fontsize=8)
        ax1.plot(t, [abs(r.residual) / r.magnitude if r.magnitude else 0.0 for r in reports])
        ax1.axhline(0.05, color="r", lw=0.8, ls="--")
        ax1.set_ylabel("relative residual")
        ax1.set_xlabel("t")
        _save(fig, path)


def plot_crossings(table: list, path: Path) -> None:
    """Observed gaps ``T_{i+1} - T_i`` next to the interval lower bound."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(6.0, 3.0))
        rows = [c for c in table if math.isfinite(c.observed_gap)]
        ax.plot([c.i for c in rows], [c.observed_gap for c in rows], "o", label="observed gap")
        ax.plot([c.i for c in rows], [c.lower_bound for c in rows], "s", mfc="none",
                label="lower bound")
        ax.set_xlabel("i")
        ax.set_ylabel("time")
        ax.legend(loc="best", fontsize=8)
        _save(fig, path)
