"""Figure rendering for experiment summaries.

Uses the non-interactive Agg backend; every helper writes a file next to the
delimited output rather than opening a window.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def plot_quantile_trajectory(summary: dict, path: str) -> str | None:
    """Median/IQR band of the quantile trajectory across seeds."""
    qt = summary.get("quantile_trajectory")
    if not qt:
        return None
    fig, ax = plt.subplots(figsize=(6, 4))
    xs = range(len(qt["median"]))
    ax.plot(xs, qt["median"], color="C0", label="median")
    ax.fill_between(xs, qt["q25"], qt["q75"], color="C0", alpha=0.25, label="IQR")
    ax.set_xlabel("iteration")
    ax.set_ylabel("empirical quantile of f")
    ax.set_yscale("symlog", linthresh=1e-8)
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_check_pass_rates(summary: dict, path: str) -> str:
    """Bar chart of per-check run pass rates."""
    checks = summary["checks"]
    names = list(checks)
    rates = [checks[n]["run_pass_rate"] for n in names]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.barh(names, rates, color="C2")
    ax.set_xlim(0, 1.05)
    ax.set_xlabel("run pass rate")
    ax.axvline(1.0, color="k", lw=0.8, ls="--")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_summary_figures(summary: dict, out_dir: str, stem: str = "summary") -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    written = []
    p = plot_quantile_trajectory(summary, os.path.join(out_dir, f"{stem}_quantiles.png"))
    if p:
        written.append(p)
    written.append(plot_check_pass_rates(summary, os.path.join(out_dir, f"{stem}_checks.png")))
    return written
