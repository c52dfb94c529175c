"""PNG figures for CLI reports, rendered off-screen."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed metadata keeps repeated renders byte-identical
_META = {"Software": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata=_META)
    plt.close(fig)


def plot_confidence(C: np.ndarray, path, title: str = "confidence", order=None) -> None:
    """Heatmap of a confidence matrix, optionally with rows and columns reordered.

    ``order`` is a ``(row_order, col_order)`` pair, e.g. sorting by the
    planted groups so block structure is visible.
    """
    A = np.asarray(C, dtype=float)
    if order is not None:
        A = A[np.ix_(order[0], order[1])]
    fig, ax = plt.subplots(figsize=(4.6, 4))
    im = ax.imshow(A, cmap="viridis", interpolation="nearest")
    fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
    ax.set_title(title)
    ax.set_xlabel("column")
    ax.set_ylabel("row")
    _save(fig, path)


def plot_buckets(confidence, mse, count, path, title: str = "held-out error by confidence") -> None:
    """Bar chart of per-bucket squared error against mean bucket confidence."""
    confidence, mse, count = (np.asarray(a) for a in (confidence, mse, count))
    keep = count > 0
    fig, ax = plt.subplots(figsize=(5, 3.4))
    x = np.arange(keep.sum())
    ax.bar(x, mse[keep], color="tab:blue")
    ax.set_xticks(x)
    ax.set_xticklabels([f"{c:.1e}" for c in confidence[keep]], rotation=45, ha="right", fontsize=7)
    ax.set_xlabel("mean confidence of bucket")
    ax.set_ylabel("mean squared error")
    ax.set_title(title)
    _save(fig, path)


def plot_trace(trace, path) -> None:
    """Coverage and per-step regret curves from an online trace."""
    t = np.array([r["t"] for r in trace], dtype=float)
    cov = np.array([r["coverage"] for r in trace], dtype=float)
    reg_C = np.array([r["regret_C"] for r in trace], dtype=float)
    pts = [(r["t"], r["regret_M"]) for r in trace if r.get("regret_M") is not None]
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(8, 3.2))
    a1.plot(t, cov, lw=1)
    a1.set_xlabel("t")
    a1.set_ylabel("sum / max of averaged C")
    a1.set_title("coverage")
    a2.plot(t, reg_C / t, lw=1, label="confidence player")
    if pts:
        tm, rm = np.array(pts, dtype=float).T
        a2.plot(tm, rm / tm, "o-", ms=3, lw=1, label="completion player")
    a2.set_xscale("log")
    a2.set_xlabel("t")
    a2.set_ylabel("regret / t")
    a2.legend(fontsize=8)
    a2.set_title("average regret")
    _save(fig, path)
