"""Static PNG figures for campaign outputs (Agg backend, no display needed)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata={"Software": None})
    plt.close(fig)
    return path


def cost_vs_iteration(records: list[dict], path: Path, title: str = "") -> Path:
    it = np.array([r["iteration"] for r in records])
    target = np.array([r["target"] for r in records])
    failed = np.array([r["failed"] for r in records])
    best = np.array([np.nan if r["best_observed"] is None else r["best_observed"] for r in records])
    inc = np.array([r["incumbent_cost"] for r in records], dtype=float)
    init = sum(r["phase"] == "init" for r in records)

    fig, ax = plt.subplots(figsize=(6.4, 3.6))
    ax.plot(it[~failed], target[~failed], "o", ms=4, color="0.45", label="observed")
    if failed.any():
        ax.plot(it[failed], target[failed], "x", color="tab:red", label="failed (imputed)")
    ax.step(it, best, where="post", color="tab:blue", label="best observed")
    ax.plot(it, inc, "--", color="tab:orange", label="incumbent estimate")
    if 0 < init < len(records):
        ax.axvline(init - 0.5, color="0.7", lw=0.8)
    ax.set_xlabel("evaluation")
    ax.set_ylabel("J")
    if title:
        ax.set_title(title)
    ax.legend(fontsize=8)
    return _save(fig, path)


def frequency_response(freq, S, T, path: Path, band=None) -> Path:
    fig, ax = plt.subplots(figsize=(6.4, 3.6))
    ax.semilogx(freq, 20 * np.log10(np.maximum(S, 1e-12)), label="|S|")
    ax.semilogx(freq, 20 * np.log10(np.maximum(T, 1e-12)), label="|T|")
    ax.axhline(20 * np.log10(0.5), color="0.6", lw=0.8, ls=":")
    if band is not None:
        ax.set_xlim(*band)
    ax.set_xlabel("frequency [Hz]")
    ax.set_ylabel("magnitude [dB]")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    return _save(fig, path)


def trajectory(t, r, y, path: Path, u=None) -> Path:
    rows = 2 if u is not None else 1
    fig, axes = plt.subplots(rows, 1, figsize=(6.4, 2.4 * rows + 0.6), sharex=True, squeeze=False)
    ax = axes[0, 0]
    ax.plot(t, r, color="0.3", lw=1.0, label="r")
    ax.plot(t, y, color="tab:blue", lw=0.8, label="y")
    ax.set_ylabel("angle [deg]")
    ax.legend(fontsize=8)
    if u is not None:
        axes[1, 0].plot(t, u, color="tab:green", lw=0.8)
        axes[1, 0].set_ylabel("u")
    axes[-1, 0].set_xlabel("time [s]")
    return _save(fig, path)


def pmin_projection(points, mass, path: Path, names=("t_set", "t_obs", "p1", "p2"),
                    dims=(0, 1)) -> Path:
    """Representers projected onto two encoded coordinates, sized by mass."""
    points = np.asarray(points)
    mass = np.asarray(mass)
    fig, ax = plt.subplots(figsize=(4.4, 4.0))
    size = 4 + 400 * mass / max(mass.max(), 1e-12)
    ax.scatter(points[:, dims[0]], points[:, dims[1]], s=size, c=mass, cmap="viridis", alpha=0.8)
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    ax.set_xlabel(f"{names[dims[0]]} (encoded)")
    ax.set_ylabel(f"{names[dims[1]]} (encoded)")
    return _save(fig, path)
