"""SVG figures: rollout trajectories, learning curves and the fixed-follower grid."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "fishformation"

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed metadata so identical figures give identical files
_SVG_META = {"Date": None, "Creator": None}


def _save(fig, path) -> None:
    fig.savefig(path, format="svg", metadata=_SVG_META)
    plt.close(fig)


def plot_trajectories(path, rollouts, tank, title: str = "") -> None:
    """Leader and follower nose tracks of a few rollouts inside the tank outline."""
    n = max(1, len(rollouts))
    fig, axes = plt.subplots(n, 1, figsize=(9, 1.9 * n + 0.4), squeeze=False)
    for ax, r in zip(axes[:, 0], rollouts):
        ax.plot([0, tank.length, tank.length, 0, 0], [0, 0, tank.width, tank.width, 0],
                color="0.6", lw=0.8)
        ax.plot(r.leader[:, 0], r.leader[:, 1], color="tab:blue", lw=1.2, label="leader")
        ax.plot(r.follower[:, 0], r.follower[:, 1], color="tab:orange", lw=1.2, label="follower")
        ax.plot(*r.follower[-1, :2], marker="o", ms=3, color="tab:orange")
        ax.set_aspect("equal")
        ax.set_xlim(-20, tank.length + 20)
        ax.set_ylim(-20, tank.width + 20)
        ax.set_ylabel("y (mm)")
        ax.set_title(f"seed {r.seed}, leader {r.side}: {r.termination}, "
                     f"reward {r.reward.sum():.0f}", fontsize=8)
    axes[0, 0].legend(loc="upper right", fontsize=7)
    axes[-1, 0].set_xlabel("x (mm)")
    if title:
        fig.suptitle(title, fontsize=10)
    fig.tight_layout()
    _save(fig, path)


def plot_learning_curve(path, labels, reward_q, mae_q, baselines=None) -> None:
    """Median and quartiles per learning iteration; ``*_q`` are (q25, median, q75) rows.

    ``baselines`` maps a policy name to its (reward quartiles, mae quartiles).
    """
    x = np.arange(len(labels))
    fig, (ax_r, ax_m) = plt.subplots(2, 1, figsize=(6, 5.5), sharex=True)
    for ax, q, name in ((ax_r, reward_q, "cumulative reward"), (ax_m, mae_q, "MAE vs expert")):
        q = np.asarray(q, dtype=float).reshape(-1, 3)
        ax.errorbar(x, q[:, 1], yerr=np.vstack([q[:, 1] - q[:, 0], q[:, 2] - q[:, 1]]), fmt="o-",
                    color="tab:green", capsize=3, label="learner")
        ax.set_ylabel(name)
    for i, (bname, (rq, mq)) in enumerate((baselines or {}).items()):
        color = f"C{i + 3}"
        for ax, q in ((ax_r, rq), (ax_m, mq)):
            ax.axhline(q[1], color=color, ls="--", lw=1, label=bname)
            ax.axhspan(q[0], q[2], color=color, alpha=0.12, lw=0)
    ax_r.set_ylim(0, 520)
    ax_r.legend(fontsize=7, loc="lower right")
    ax_m.set_xticks(x)
    ax_m.set_xticklabels(labels)
    ax_m.set_xlabel("learning iteration")
    fig.tight_layout()
    _save(fig, path)


def plot_fixed_follower(path, cells) -> None:
    """Pressure traces per grid cell (rows: lateral, columns: longitudinal)."""
    lats = sorted({c.lateral for c in cells})
    lons = sorted({c.longitudinal for c in cells})
    fig, axes = plt.subplots(len(lats), len(lons), figsize=(2.2 * len(lons), 1.7 * len(lats)),
                             sharex=True, sharey=True, squeeze=False)
    for c in cells:
        ax = axes[lats.index(c.lateral), lons.index(c.longitudinal)]
        ax.plot(c.times, c.pressures[:, 0], lw=0.8, color="tab:blue", label="left")
        ax.plot(c.times, c.pressures[:, 1], lw=0.8, color="tab:red", label="right")
        if c.lag_tick >= 0:
            ax.axvline(c.lag, color="0.5", lw=0.6, ls=":")
        ax.set_title(f"lat {c.lateral:g}, lon {c.longitudinal:g}: rms {c.rms:.2g}", fontsize=7)
    for ax in axes[-1]:
        ax.set_xlabel("t (s)")
    for ax in axes[:, 0]:
        ax.set_ylabel("p (Pa)")
    axes[0, 0].legend(fontsize=6)
    fig.tight_layout()
    _save(fig, path)
