"""Matplotlib report figures, rendered to SVG next to the CSV output.

Figures are deterministic: fixed hash salt, no embedded timestamps.
"""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

matplotlib.rcParams["svg.hashsalt"] = "servosim"

_SAVE_KW = {"metadata": {"Date": None}, "bbox_inches": "tight"}


def save_trajectory_plot(records, desired_pose, path: Path, max_trials: int = 50) -> None:
    """Top-down (x, y) camera paths, colored by trial outcome."""
    fig, ax = plt.subplots(figsize=(6, 6))
    for record in records[:max_trials]:
        t = record.translations
        color = "tab:green" if record.converged else "tab:red"
        ax.plot(t[:, 0], t[:, 1], color=color, alpha=0.5, linewidth=0.8)
        ax.plot(t[0, 0], t[0, 1], marker=".", color=color, markersize=3)
    d = desired_pose.translation
    ax.plot(d[0], d[1], marker="*", color="black", markersize=12, label="desired")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_title("Camera trajectories (top-down)")
    ax.set_aspect("equal")
    ax.legend(loc="upper right")
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def save_trial_detail_plot(record, dt: float, path: Path) -> None:
    """Velocity components and pose error over one trial."""
    n = record.smoothed_twists.shape[0]
    t = np.arange(n) * dt
    fig, axes = plt.subplots(3, 1, figsize=(7, 8), sharex=True)

    for i, label in enumerate(("vx", "vy", "vz")):
        axes[0].plot(t, record.smoothed_twists[:, i], label=label, linewidth=0.9)
    axes[0].set_ylabel("linear [m/s]")
    axes[0].legend(loc="upper right", fontsize=8)

    for i, label in enumerate(("wx", "wy", "wz")):
        axes[1].plot(t, record.smoothed_twists[:, 3 + i], label=label, linewidth=0.9)
    axes[1].set_ylabel("angular [rad/s]")
    axes[1].legend(loc="upper right", fontsize=8)

    desired = record.desired_pose.translation
    trans_err = np.linalg.norm(record.translations - desired, axis=1)
    axes[2].plot(t, trans_err, color="tab:blue", label="translation error [m]")
    axes[2].plot(t, record.error_norms, color="tab:orange",
                 label="feature error norm", linewidth=0.9)
    axes[2].set_ylabel("error")
    axes[2].set_xlabel("time [s]")
    axes[2].legend(loc="upper right", fontsize=8)

    fig.suptitle(f"Trial {record.trial_id} "
                 f"({'converged' if record.converged else 'not converged'})")
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def save_alpha_sweep_plot(rows: list[dict], path: Path) -> None:
    """Length ratio and end error versus the velocity-filter alpha."""
    alphas = [r["alpha"] for r in rows]
    ratio = [r["length_ratio_mean"] for r in rows]
    ratio_std = [r["length_ratio_std"] for r in rows]
    err = [r["end_error_trans_mm_mean"] for r in rows]
    err_std = [r["end_error_trans_mm_std"] for r in rows]

    fig, ax1 = plt.subplots(figsize=(6, 4))
    ax1.errorbar(alphas, ratio, yerr=ratio_std, color="tab:blue", marker="o",
                 capsize=3, label="length ratio")
    ax1.set_xlabel("alpha")
    ax1.set_ylabel("length ratio", color="tab:blue")
    ax2 = ax1.twinx()
    ax2.errorbar(alphas, err, yerr=err_std, color="tab:red", marker="s",
                 capsize=3, label="end error [mm]")
    ax2.set_ylabel("end error [mm]", color="tab:red")
    fig.suptitle("Velocity filter sweep")
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def save_match_image(desired_rgb, current_rgb, pairs_px, path: Path) -> None:
    """Side-by-side correspondence visualization.

    pairs_px: list of ((x_d, y_d), (x_c, y_c)) pixel pairs in each image.
    """
    import cv2

    h = max(desired_rgb.shape[0], current_rgb.shape[0])
    w1, w2 = desired_rgb.shape[1], current_rgb.shape[1]
    canvas = np.full((h, w1 + w2 + 8, 3), 255, dtype=np.uint8)
    canvas[:desired_rgb.shape[0], :w1] = desired_rgb
    canvas[:current_rgb.shape[0], w1 + 8:] = current_rgb
    rng = np.random.Generator(np.random.PCG64(0))
    for (xd, yd), (xc, yc) in pairs_px:
        color = tuple(int(c) for c in rng.integers(40, 230, size=3))
        p1 = (int(round(xd)), int(round(yd)))
        p2 = (int(round(xc)) + w1 + 8, int(round(yc)))
        cv2.circle(canvas, p1, 4, color, -1)
        cv2.circle(canvas, p2, 4, color, -1)
        cv2.line(canvas, p1, p2, color, 1, lineType=cv2.LINE_AA)
    cv2.imwrite(str(path), canvas[..., ::-1])
