"""Render simulation metrics to figure files next to the CSV output."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)


def render_report(records, out_dir, exact: float | None = None,
                  window: int = 10) -> list[Path]:
    """Write convergence and difficulty figures for one run.

    ``records`` are per-block rows (height, miner, k, block_time_s,
    pow_value, chain_best).  Returns the paths written.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    heights = [r.height for r in records]
    written = []

    fig, ax = plt.subplots(figsize=(7, 4.2))
    ax.plot(heights, [r.pow_value for r in records], ".", color="0.6",
            markersize=4, label="block value")
    ax.plot(heights, [r.chain_best for r in records], color="tab:red",
            linewidth=1.6, label="chain best")
    if exact is not None:
        ax.axhline(exact, color="tab:blue", linestyle="--", linewidth=1.2,
                   label="exact optimum")
    ax.set_xlabel("block height")
    ax.set_ylabel("objective value")
    ax.legend(frameon=False)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    path = out_dir / "convergence.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    written.append(path)

    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 5.4), sharex=True)
    times = [r.block_time_s for r in records]
    means = []
    for i in range(len(times)):
        lo = max(0, i - window + 1)
        chunk = times[lo:i + 1]
        means.append(sum(chunk) / len(chunk))
    ax1.plot(heights, times, ".", color="0.6", markersize=4,
             label="block time")
    ax1.plot(heights, means, color="tab:green", linewidth=1.6,
             label=f"trailing mean ({window})")
    ax1.set_ylabel("seconds")
    ax1.legend(frameon=False)
    ax1.grid(alpha=0.3)
    ax2.step(heights, [r.k for r in records], where="mid",
             color="tab:purple", linewidth=1.6)
    ax2.set_xlabel("block height")
    ax2.set_ylabel("difficulty K")
    ax2.grid(alpha=0.3)
    fig.tight_layout()
    path = out_dir / "difficulty.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    written.append(path)
    return written
