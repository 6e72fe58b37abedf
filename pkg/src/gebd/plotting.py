"""Figures written next to the text outputs of ``train``, ``detect`` and ``eval``."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "lines.linewidth": 1.2,
    "savefig.dpi": 120,
}
# no software/version stamp, so reruns produce identical bytes
_PNG_META = {"Software": None}


def _save(fig, path) -> None:
    fig.savefig(path, format="png", metadata=_PNG_META)
    plt.close(fig)


def plot_curve(curve, path, val_f1=None) -> None:
    """Training loss per epoch, with validation F1 on a twin axis if given."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3.0))
        epochs = [c[0] for c in curve]
        ax.plot(epochs, [c[1] for c in curve], "o-", ms=3, color="C0", label="train loss")
        ax.set_xlabel("epoch")
        ax.set_ylabel("loss")
        drops = [c[0] for prev, c in zip(curve[1:], curve[2:]) if c[2] != prev[2]]
        for d in drops:
            ax.axvline(d - 0.5, color="0.7", ls=":", lw=0.8)
        if val_f1:
            ax2 = ax.twinx()
            ax2.plot(epochs[1:1 + len(val_f1)], val_f1, "s-", ms=3, color="C1", label="val F1")
            ax2.set_ylabel("F1")
            ax2.set_ylim(0, 1.02)
            ax2.spines["right"].set_visible(True)
        fig.tight_layout()
        _save(fig, path)


def plot_report(reports, path) -> None:
    """Precision, recall and F1 against the relative-distance threshold."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3.0))
        x = [r.rel_dis_threshold for r in reports]
        marker = "o-" if len(x) > 1 else "o"
        ax.plot(x, [r.f1 for r in reports], marker, ms=3, label="F1")
        ax.plot(x, [r.precision for r in reports], marker, ms=3, label="precision")
        ax.plot(x, [r.recall for r in reports], marker, ms=3, label="recall")
        ax.set_xlabel("Rel.Dis threshold")
        ax.set_ylim(0, 1.02)
        ax.legend(frameon=False, loc="lower right")
        fig.tight_layout()
        _save(fig, path)


def plot_scores(scores, detection, path, annotation=None, threshold=None) -> None:
    """One video's boundary-score trace with detections and ground truth."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6.0, 2.4))
        t = [(i + 0.5) / scores.fps for i in range(scores.T)]
        ax.plot(t, scores.p, color="C0", label="score")
        if threshold is not None:
            ax.axhline(threshold, color="0.6", ls="--", lw=0.8)
        for i, b in enumerate(detection.boundary_times_s):
            ax.axvline(b, color="C3", lw=0.9, label="detected" if i == 0 else None)
        if annotation is not None:
            for i, b in enumerate(annotation.boundaries_s):
                ax.axvline(b, color="C2", ls=":", lw=1.2, label="ground truth" if i == 0 else None)
        ax.set_xlim(0, scores.duration_s)
        ax.set_ylim(0, 1.02)
        ax.set_xlabel("time (s)")
        ax.set_title(scores.video_id, fontsize=9)
        ax.legend(frameon=False, loc="upper right", ncol=3)
        fig.tight_layout()
        _save(fig, path)
