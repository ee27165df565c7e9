"""Figures for a run directory.

A run directory gets a standalone ``plot_run.py`` that only needs numpy and
matplotlib and reads the CSV artifacts next to it. ``render_run`` executes that
same script, so the PNGs and the script never drift apart.
"""
from __future__ import annotations

import logging
import runpy
from pathlib import Path

log = logging.getLogger(__name__)

SCRIPT_NAME = "plot_run.py"

PLOT_SCRIPT = '''\
"""Render density evolution, value-function slices and the gap curve of this run."""
import csv
import json
import sys
from pathlib import Path

import numpy as np
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def load_field(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    k = len(rows[0]) - 1
    idx = np.array([[int(c) for c in r[:k]] for r in rows[1:]], dtype=int)
    vals = np.array([float(r[k]) for r in rows[1:]])
    out = np.empty(tuple(idx.max(axis=0) + 1))
    out[tuple(idx.T)] = vals
    return out


def load_history(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    it = np.array([float(r["iter"]) for r in rows])
    gap = np.array([abs(float(r["gap_relative"])) for r in rows])
    cont = np.array([float(r["continuity_residual"]) for r in rows])
    return it, gap, cont


def main(run_dir):
    run = Path(run_dir)
    grid = json.loads((run / "grid.json").read_text())
    m = load_field(run / "fields" / "m.csv")
    phi = load_field(run / "fields" / "phi.csv")
    T, nt, n, d = grid["T"], grid["nt"], grid["n"], grid["d"]
    if d > 1:
        # show the section through the first spatial axis at index 0 of the others
        m = m[(slice(None), slice(None)) + (0,) * (d - 1)]
        phi = phi[(slice(None), slice(None)) + (0,) * (d - 1)]
    x = np.arange(n) / n

    fig, ax = plt.subplots(figsize=(6, 4))
    im = ax.imshow(m, origin="lower", aspect="auto", extent=(0, 1, 0, T), cmap="viridis")
    fig.colorbar(im, ax=ax, label="m")
    ax.set_xlabel("x")
    ax.set_ylabel("t")
    ax.set_title("density evolution")
    fig.tight_layout()
    fig.savefig(run / "density.png", dpi=120)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(6, 4))
    for k in np.linspace(0, nt, 5).astype(int):
        ax.plot(x, phi[k], label=f"t={k * T / nt:.2f}")
    ax.set_xlabel("x")
    ax.set_ylabel("phi")
    ax.legend(fontsize=8)
    ax.set_title("value function slices")
    fig.tight_layout()
    fig.savefig(run / "phi_slices.png", dpi=120)
    plt.close(fig)

    it, gap, cont = load_history(run / "history.csv")
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.semilogy(it, np.maximum(gap, 1e-17), label="|relative gap|")
    ax.semilogy(it, np.maximum(cont, 1e-17), label="continuity residual")
    ax.set_xlabel("iteration")
    ax.legend()
    ax.set_title("convergence")
    fig.tight_layout()
    fig.savefig(run / "gap.png", dpi=120)
    plt.close(fig)


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else Path(__file__).resolve().parent)
'''


def write_plot_script(run_dir) -> Path:
    path = Path(run_dir) / SCRIPT_NAME
    path.write_text(PLOT_SCRIPT)
    return path


def render_run(run_dir) -> bool:
    """Render the PNGs of a run directory; returns False if matplotlib is unavailable."""
    run_dir = Path(run_dir)
    script = run_dir / SCRIPT_NAME
    if not script.exists():
        write_plot_script(run_dir)
    try:
        import matplotlib  # noqa: F401
    except ImportError:
        log.warning("matplotlib not installed; run %s by hand to render figures", script)
        return False
    ns = runpy.run_path(str(script), run_name="mfgdual_plot")
    ns["main"](run_dir)
    return True
