"""Matplotlib renderings of the corpus statistics, written next to the CSVs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .stats import REF_CATEGORIES, CorpusStats, pronoun_person

_PNG_KWARGS = {"dpi": 120, "metadata": {"Software": None}}


def save_stats_figures(stats: CorpusStats, out_dir: str | Path) -> list[Path]:
    """Render one PNG per statistic family; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [
        _persistence_figure(stats, out / "persistence_curves.png"),
        _refs_figure(stats, out / "refs_per_story.png"),
        _density_figure(stats, out / "phase_density.png"),
        _pronoun_figure(stats, out / "pronoun_grounding.png"),
    ]
    return written


def _persistence_figure(stats: CorpusStats, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    if stats.char_persistence:
        xs = range(1, len(stats.char_persistence) + 1)
        ax.plot(xs, [100 * v for v in stats.char_persistence], marker="o",
                label="characters")
    if stats.obj_persistence:
        xs = range(1, len(stats.obj_persistence) + 1)
        ax.plot(xs, [100 * v for v in stats.obj_persistence], marker="s",
                label="objects")
    ax.set_xlabel("appears in at least N frames")
    ax.set_ylabel("% of entities")
    ax.set_title("Entity persistence across frames")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, **_PNG_KWARGS)
    plt.close(fig)
    return path


def _refs_figure(stats: CorpusStats, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    values = [stats.refs_per_story.get(c, 0.0) for c in REF_CATEGORIES]
    ax.bar(REF_CATEGORIES, values, color="#5b8dd9")
    ax.set_ylabel("mean references per story")
    ax.set_title("Grounding references by category")
    fig.tight_layout()
    fig.savefig(path, **_PNG_KWARGS)
    plt.close(fig)
    return path


def _density_figure(stats: CorpusStats, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(7, 4))
    phases = list(stats.phase_density)
    width = 0.8 / max(len(REF_CATEGORIES), 1)
    for i, category in enumerate(REF_CATEGORIES):
        xs = [p + i * width for p in range(len(phases))]
        ax.bar(xs, [stats.phase_density[ph].category_density(category) for ph in phases],
               width=width, label=category)
    ax.set_xticks([p + 1.5 * width for p in range(len(phases))])
    ax.set_xticklabels(phases, rotation=20, ha="right")
    ax.set_ylabel("references per 100 words")
    ax.set_title("Grounding density by narrative phase")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, **_PNG_KWARGS)
    plt.close(fig)
    return path


def _pronoun_figure(stats: CorpusStats, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(7, 4))
    items = sorted(stats.pronoun_grounding.items(),
                   key=lambda kv: (pronoun_person(kv[0]), kv[0]))
    labels = [p for p, _ in items]
    rates = [100 * s.rate for _, s in items]
    colors = {"first": "#d9775b", "second": "#d9b75b", "third": "#5b8dd9"}
    ax.bar(labels, rates, color=[colors[pronoun_person(p)] for p in labels])
    ax.set_ylabel("% of occurrences grounded")
    ax.set_title("Pronoun grounding rate")
    ax.set_ylim(0, 100)
    fig.tight_layout()
    fig.savefig(path, **_PNG_KWARGS)
    plt.close(fig)
    return path
