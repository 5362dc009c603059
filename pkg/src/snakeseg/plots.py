"""Figure rendering for the report-producing CLI paths (Agg backend, files only)."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_probmap(pm, path) -> None:
    """Heatmap of a probability map."""
    fig, ax = plt.subplots(figsize=(5.0, 4.2))
    im = ax.imshow(pm.p, origin="upper", cmap="magma", vmin=0.0, vmax=max(pm.p.max(), 1e-9))
    ax.set_xlabel("x [px]")
    ax.set_ylabel("y [px]")
    ax.set_title("organ occupancy frequency")
    fig.colorbar(im, ax=ax, label="p")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_hu_histogram(values: np.ndarray, mean: float, std: float, path) -> None:
    """Histogram of foreground HU values with the mean marked."""
    fig, ax = plt.subplots(figsize=(5.0, 3.5))
    ax.hist(np.asarray(values).ravel(), bins=60, color="#4878d0", edgecolor="none")
    ax.axvline(mean, color="#d65f5f", lw=1.5, label=f"mean {mean:.1f} HU")
    ax.set_xlabel("HU")
    ax.set_ylabel("voxels")
    ax.set_title(f"organ intensity ({mean:.1f} $\\pm$ {std:.1f} HU)")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_dice_cases(rep, path) -> None:
    """Per-case Dice bars with the mean drawn across."""
    names = [n for n, _ in sorted(rep.cases)]
    values = [v for _, v in sorted(rep.cases)]
    fig, ax = plt.subplots(figsize=(max(4.0, 0.6 * len(names) + 2.0), 3.5))
    ax.bar(range(len(values)), values, color="#4878d0")
    ax.axhline(rep.mean, color="#d65f5f", lw=1.5, label=f"mean {rep.mean:.3f}")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=45, ha="right", fontsize=8)
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("Dice")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_pr_curves(curves: dict[int, object], path) -> None:
    """Ranked-sweep PR points plus the 11-point interpolation, per class."""
    fig, ax = plt.subplots(figsize=(4.5, 4.0))
    for class_id, curve in sorted(curves.items()):
        if curve is None:
            continue
        pts = list(curve.points)
        if pts:
            rec, prec = zip(*pts)
            ax.plot(rec, prec, marker="o", ms=3, lw=1.0, label=f"class {class_id} sweep")
        lv, lp = zip(*curve.eleven_point())
        ax.step(lv, lp, where="post", lw=1.2, ls="--", label=f"class {class_id} 11-pt")
    ax.set_xlim(-0.02, 1.02)
    ax.set_ylim(-0.02, 1.02)
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_title("precision / recall")
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
