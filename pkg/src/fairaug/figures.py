"""Figure rendering for run artifacts. Kept out of the core: callers hand in
already-computed rows and get PNG files back."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)


def render_trace(trace_rows, path, title: str = "") -> None:
    """Two panels over epochs: relaxed loss terms, and the rounded
    checkpoint's group gap with the running edge count."""
    epochs = [r.epoch for r in trace_rows]
    fig, (ax_loss, ax_gap) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)

    ax_loss.plot(epochs, [r.loss for r in trace_rows], label="total", color="black")
    ax_loss.plot(epochs, [r.fairness_loss for r in trace_rows], label="group gap",
                 color="tab:red", linestyle="--")
    ax_loss.plot(epochs, [r.dist_loss for r in trace_rows], label="perturbation size",
                 color="tab:blue", linestyle=":")
    ax_loss.set_ylabel("relaxed loss")
    ax_loss.legend(frameon=False, fontsize=8)
    if title:
        ax_loss.set_title(title)

    ax_gap.plot(epochs, [r.abs_delta_ndcg for r in trace_rows], color="tab:red")
    ax_gap.set_ylabel("|group gap| (exact)", color="tab:red")
    ax_gap.set_xlabel("epoch")
    ax_edges = ax_gap.twinx()
    ax_edges.plot(epochs, [r.num_edges for r in trace_rows], color="tab:gray", alpha=0.7)
    ax_edges.set_ylabel("# added edges", color="tab:gray")

    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_scatter(points, path, title: str = "") -> None:
    """Trade-off scatter: utility change (x) vs group-gap change (y), in %.

    ``points`` holds (label, x, y) triples; None coordinates are skipped.
    The lower-left-of-origin region is where mitigation costs utility;
    points below the x-axis reduced the gap.
    """
    fig, ax = plt.subplots(figsize=(6, 5))
    for label, x, y in points:
        if x is None or y is None:
            continue
        ax.scatter([x], [y], s=36)
        ax.annotate(label, (x, y), textcoords="offset points", xytext=(5, 4), fontsize=8)
    ax.axhline(0.0, color="gray", linewidth=0.8)
    ax.axvline(0.0, color="gray", linewidth=0.8)
    ax.set_xlabel("rel. diff NDCG (%)")
    ax.set_ylabel("rel. diff |ΔNDCG| (%)")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
