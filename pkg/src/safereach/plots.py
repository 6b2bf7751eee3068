"""Static SVG figures from seed-averaged curves."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

LABELS = {"psrl": "pSRL", "er-psrl": "ER-pSRL"}


def _figure(path: Path, series: list[tuple[str, object, object]], ylabel: str, zero_line=False):
    # fixed hash salt and metadata keep reruns byte-identical
    with plt.rc_context({"svg.hashsalt": "safereach"}):
        fig, ax = plt.subplots(figsize=(6, 4))
        _draw(ax, series, ylabel, zero_line)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    return path


def _draw(ax, series, ylabel, zero_line):
    for label, k, y in series:
        ax.plot(k, y, label=label, linewidth=1)
    if zero_line:
        ax.axhline(0.0, color="grey", linewidth=0.8, linestyle="--")
    ax.set_xlabel("episode k")
    ax.set_ylabel(ylabel)
    ax.legend()


def write_figures(averages: dict, out: Path) -> list[Path]:
    out = Path(out)
    paths = []
    main = {algo: avg for (algo, proxy), avg in averages.items() if proxy == "declared"}
    if not main:
        main = {algo: avg for (algo, proxy), avg in averages.items()}
    for name, col, ylabel, zero in (
        ("fig1_per_episode_objective_regret.svg", "mean_R", "per-episode objective regret", False),
        ("fig2_cumulative_objective_regret.svg", "mean_cumulative_regret", "cumulative objective regret", False),
        ("fig3_per_episode_constraint_regret.svg", "mean_C", "per-episode constraint regret", True),
    ):
        series = [(LABELS[a], avg["k"], avg[col]) for a, avg in sorted(main.items())]
        paths.append(_figure(out / name, series, ylabel, zero))
    er = {proxy: avg for (algo, proxy), avg in averages.items() if algo == "er-psrl"}
    if len(er) > 1:
        series = [
            (f"ER-pSRL, proxy {proxy}", avg["k"], avg["mean_cumulative_regret"])
            for proxy, avg in sorted(er.items())
        ]
        paths.append(_figure(out / "fig4_proxy_ablation.svg", series, "cumulative objective regret"))
    return paths
