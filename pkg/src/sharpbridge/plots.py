"""Figure rendering for the CLI report paths.

Figures are written next to the delimited output, never shown
interactively; the Agg backend is forced before pyplot is imported so
the CLI works on headless machines.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def sweep_figure(path, pred_rows, mc_rows) -> None:
    """Predicted q(t) against Monte Carlo estimates on a log scale.

    pred_rows: sequence of (t, q_hat); mc_rows: sequence of
    (t, p_hat, half_width).
    """
    fig, ax = plt.subplots(figsize=(5.5, 3.8))
    tp = np.array([r[0] for r in pred_rows])
    qp = np.array([r[1] for r in pred_rows])
    order = np.argsort(1.0 / tp)
    ax.plot(1.0 / tp[order], qp[order], "-o", ms=4, label="sharp estimate")
    tm = np.array([r[0] for r in mc_rows])
    pm = np.array([r[1] for r in mc_rows])
    hw = np.array([r[2] for r in mc_rows])
    ax.errorbar(1.0 / tm, pm, yerr=hw, fmt="s", ms=4, capsize=3,
                label="Monte Carlo")
    ax.set_yscale("log")
    ax.set_xlabel("1 / t")
    ax.set_ylabel("exit probability")
    ax.legend(frameon=False)
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def geodesic_figure(path, times, nodes, domain=None) -> None:
    """Minimizing path: coordinate traces in d = 1, the planar curve
    with the boundary line otherwise."""
    nodes = np.asarray(nodes)
    fig, ax = plt.subplots(figsize=(5.5, 3.8))
    if nodes.shape[1] == 1:
        ax.plot(times, nodes[:, 0], "-")
        if domain is not None and abs(domain.normal[0]) > 0:
            ax.axhline(domain.level / domain.normal[0], color="k",
                       lw=0.8, ls="--")
        ax.set_xlabel("curve parameter")
        ax.set_ylabel("z")
    else:
        ax.plot(nodes[:, 0], nodes[:, 1], "-")
        ax.plot(*nodes[0, :2], "o", ms=5)
        ax.plot(*nodes[-1, :2], "s", ms=5)
        if domain is not None:
            v = domain.normal[:2]
            if abs(v[1]) > 1e-12 or abs(v[0]) > 1e-12:
                lo = nodes[:, :2].min() - 0.5
                hi = nodes[:, :2].max() + 0.5
                if abs(v[1]) > abs(v[0]):
                    xs = np.linspace(lo, hi, 2)
                    ax.plot(xs, (domain.level - v[0] * xs) / v[1], "k--", lw=0.8)
                else:
                    ys = np.linspace(lo, hi, 2)
                    ax.plot((domain.level - v[1] * ys) / v[0], ys, "k--", lw=0.8)
        ax.set_xlabel("z1")
        ax.set_ylabel("z2")
        ax.set_aspect("equal", adjustable="datalim")
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
