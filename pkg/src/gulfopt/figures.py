"""Figure rendering for experiment reports.

Renders the loss-path and stage-trend figures next to the trajectory CSV:
test loss against train loss (the path the stages trace out), the
alpha-regularized loss against stage index, and the squared parameter norm
against train loss.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .diagnostics import StageRecord


def _annotate_path(ax, xs, ys):
    for i in range(len(xs) - 1):
        ax.annotate(
            "",
            xy=(xs[i + 1], ys[i + 1]),
            xytext=(xs[i], ys[i]),
            arrowprops=dict(arrowstyle="->", color="0.5", lw=0.8),
        )


def plot_loss_path(records: list[StageRecord], path, title: str = "test loss vs train loss") -> None:
    xs = [r.train_loss for r in records]
    ys = [r.test_loss for r in records]
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    ax.plot(xs, ys, "o-", ms=4)
    _annotate_path(ax, xs, ys)
    ax.plot(xs[0], ys[0], "s", ms=8, mfc="none", label="start")
    ax.plot(xs[-1], ys[-1], "x", ms=8, label="end")
    ax.set_xlabel("train loss")
    ax.set_ylabel("test loss")
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_reg_alpha_loss(records: list[StageRecord], path) -> None:
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    ax.plot([r.stage for r in records], [r.reg_alpha_loss for r in records], "o-", ms=4)
    ax.set_xlabel("stage t")
    ax.set_ylabel("alpha-regularized loss")
    ax.set_title("regularized objective per stage")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_param_norm_path(records: list[StageRecord], path) -> None:
    xs = [r.train_loss for r in records]
    ys = [r.param_norm_sq for r in records]
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    ax.plot(xs, ys, "o-", ms=4)
    _annotate_path(ax, xs, ys)
    ax.set_xlabel("train loss")
    ax.set_ylabel("||theta||^2")
    ax.set_title("parameter size vs train loss")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_run_figures(records: list[StageRecord], out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    targets = [
        (plot_loss_path, out_dir / "loss_path.png"),
        (plot_reg_alpha_loss, out_dir / "reg_alpha_loss.png"),
        (plot_param_norm_path, out_dir / "param_norm_path.png"),
    ]
    written = []
    for fn, path in targets:
        fn(records, path)
        written.append(path)
    return written
