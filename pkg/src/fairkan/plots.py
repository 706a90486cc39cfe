"""Figure rendering for the report paths.

Everything here draws to files through the Agg backend, so the module is
safe to import on headless boxes. Each function takes data already
computed elsewhere plus an output path, writes one PNG and returns the
path; nothing is displayed.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def fairness_surface(p1, p2, values, path, alpha=None):
    """Heatmap of a two-user fairness sweep.

    p1, p2 are the per-UE power grids; values[i, j] is the objective at
    (p1[i], p2[j]). The argmax cell gets a marker. Log axes because the
    grids are geometric.
    """
    p1 = np.asarray(p1, float)
    p2 = np.asarray(p2, float)
    values = np.asarray(values, float)
    if values.shape != (len(p1), len(p2)):
        raise ValueError(f"values shape {values.shape} does not match "
                         f"grids ({len(p1)}, {len(p2)})")
    fig, ax = plt.subplots(figsize=(6.0, 4.8))
    mesh = ax.pcolormesh(p1, p2, values.T, shading="nearest", cmap="viridis")
    fig.colorbar(mesh, ax=ax, label="objective")
    i, j = np.unravel_index(np.argmax(values), values.shape)
    ax.plot(p1[i], p2[j], marker="*", color="red", markersize=14,
            markeredgecolor="white")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("p1 [W]")
    ax.set_ylabel("p2 [W]")
    title = "fairness surface"
    if alpha is not None:
        title += f" (alpha={alpha:g})"
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def error_curves(metrics, path):
    """Per-alpha error breakdown from an evaluation metrics dict.

    Two panels: mean absolute power error (% of the power range) and
    fairness gap (%), both against alpha.
    """
    rows = metrics.get("per_alpha", [])
    if not rows:
        raise ValueError("metrics carry no per-alpha breakdown")
    alphas = np.array([r["alpha"] for r in rows])
    mape = np.array([r["power_mape_percent"] for r in rows])
    gap = np.array([r["fairness_gap_percent"] for r in rows])
    fig, axes = plt.subplots(1, 2, figsize=(9.0, 3.8))
    axes[0].plot(alphas, mape, marker="o")
    axes[0].set_ylabel("power error [% of range]")
    axes[1].plot(alphas, gap, marker="s", color="tab:orange")
    axes[1].set_ylabel("fairness gap [%]")
    for ax in axes:
        ax.set_xlabel("alpha")
        ax.grid(True, alpha=0.3)
    fig.suptitle(f"{metrics['n_ue']} UEs, {metrics['n_bs']} BSs, "
                 f"{metrics['n_records']} test records")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def loss_curves(histories, path):
    """Training loss per epoch, one line per BS network, log scale."""
    if not histories:
        raise ValueError("no loss histories to plot")
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for k, hist in enumerate(histories):
        ax.semilogy(np.arange(len(hist)), hist, label=f"BS {k}")
    ax.set_xlabel("epoch")
    ax.set_ylabel("MSE (normalized targets)")
    ax.grid(True, which="both", alpha=0.3)
    if len(histories) > 1:
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
