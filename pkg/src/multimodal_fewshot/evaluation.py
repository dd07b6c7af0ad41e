"""Aggregating episode results into accuracies, confidence intervals,
confusion matrices, and report files.

Accuracy is an exact integer ratio (correct count over total count). The
95% interval is 1.96 * sample std / sqrt(n) over model-level accuracies
across the batch-size x seed grid; the same episode set is used for every
arm and grid entry so arm differences are paired.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .data.sets import PairLabels
from .data.synth import SPOKEN_CLASSES, VISUAL_CLASSES, visual_class_for
from .errors import ArgumentError, IoError
from .fewshot import Episode, MatchResult, score_query


def run_episodes(matcher: Callable, episodes: Sequence[Episode], labels: PairLabels) -> list[MatchResult]:
    """Run a matcher over every (episode, query); one result per query.

    ``matcher(episode, query)`` returns an index into the episode's
    matching set.
    """
    if not episodes:
        raise ArgumentError("no episodes to run")
    results = []
    for episode in episodes:
        for query in episode.queries:
            predicted = int(matcher(episode, query))
            image = episode.matching[predicted]
            predicted_class = int(labels.image_to_class[image.id])
            spoken = labels.speech_to_class[query.id]
            results.append(
                MatchResult(
                    episode_id=episode.episode_id,
                    query_id=query.id,
                    predicted_image_id=image.id,
                    predicted_visual_class=predicted_class,
                    true_spoken_class=spoken,
                    true_visual_class=visual_class_for(spoken),
                    correct=score_query(predicted_class, spoken, labels),
                )
            )
    return results


class RandomMatcher:
    """Uniform-random predictions; the chance-level harness check."""

    def __init__(self, seed: int = 0):
        self._rng = np.random.default_rng(seed)

    def __call__(self, episode: Episode, query) -> int:
        return int(self._rng.integers(len(episode.matching)))


class OracleMatcher:
    """Label-reading matcher; the perfect-accuracy harness check."""

    def __init__(self, labels: PairLabels):
        self.labels = labels

    def __call__(self, episode: Episode, query) -> int:
        target = visual_class_for(self.labels.speech_to_class[query.id])
        for i, image in enumerate(episode.matching):
            if int(self.labels.image_to_class[image.id]) == target:
                return i
        raise ArgumentError(f"matching set has no image of class {target}")


def accuracy(results: Sequence[MatchResult]) -> float:
    if not results:
        raise ArgumentError("no results to score")
    return sum(1 for r in results if r.correct) / len(results)


@dataclass
class RunGrid:
    """Accuracy per (batch_size, seed) grid cell."""

    accuracies: dict = field(default_factory=dict)

    def add(self, batch_size: int, seed: int, value: float) -> None:
        self.accuracies[(int(batch_size), int(seed))] = float(value)

    def __len__(self) -> int:
        return len(self.accuracies)


def aggregate(grid) -> tuple[float, float]:
    """Mean accuracy in percent and the 95% CI half-width over grid cells."""
    values = grid.accuracies if isinstance(grid, RunGrid) else dict(grid)
    if len(values) < 2:
        raise ArgumentError(f"need >= 2 grid entries to aggregate, got {len(values)}")
    accs = np.array([values[k] for k in sorted(values)], dtype=np.float64)
    mean = float(accs.mean() * 100.0)
    half = float(1.96 * accs.std(ddof=1) / np.sqrt(len(accs)) * 100.0)
    return mean, half


@dataclass
class ConfusionMatrix:
    """Counts indexed [spoken class row][predicted visual class column]."""

    counts: np.ndarray
    row_names: tuple
    col_names: tuple

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def class_consistent_mass(self) -> int:
        """Counts on cells where the row's visual class equals the column
        ("zero" and "oh" rows both score column 0)."""
        mass = 0
        for r, name in enumerate(self.row_names):
            col = self.col_names.index(visual_class_for(name))
            mass += int(self.counts[r, col])
        return mass


def confusion(
    results: Sequence[MatchResult],
    class_names: Sequence[str] = SPOKEN_CLASSES,
    visual_classes: Sequence[int] = VISUAL_CLASSES,
) -> ConfusionMatrix:
    """Tally spoken class vs predicted visual class; zero/oh stay separate rows."""
    if not results:
        raise ArgumentError("no results to tally")
    row_of = {name: i for i, name in enumerate(class_names)}
    col_of = {cls: j for j, cls in enumerate(visual_classes)}
    counts = np.zeros((len(class_names), len(visual_classes)), dtype=np.int64)
    for r in results:
        counts[row_of[r.true_spoken_class], col_of[r.predicted_visual_class]] += 1
    return ConfusionMatrix(counts=counts, row_names=tuple(class_names), col_names=tuple(visual_classes))


@dataclass
class ArmReport:
    """Everything reported for one arm/application-mode combination."""

    arm: str
    grid: RunGrid
    confusion: ConfusionMatrix
    confusion_cell: tuple
    confusion_cell_accuracy: float

    def mean_ci(self) -> tuple[float, Optional[float]]:
        if len(self.grid) >= 2:
            return aggregate(self.grid)
        (only,) = self.grid.accuracies.values()
        return float(only * 100.0), None


def _provenance_line(meta: dict) -> str:
    return f"# seed={meta.get('master_seed')} config={meta.get('config_hash')}\n"


def emit_report(arm_reports: Sequence[ArmReport], meta: dict, out_dir) -> dict:
    """Write summary.json, per-arm grid and confusion CSVs, and a text table.

    Deterministic: identical inputs produce byte-identical files. Returns
    the summary dictionary.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create report directory {out}: {exc}") from exc
    if not arm_reports:
        raise ArgumentError("no arm reports to emit")

    summary: dict = {
        "master_seed": meta.get("master_seed"),
        "config_hash": meta.get("config_hash"),
        "config": meta.get("config"),
        "arms": {},
    }
    for report in sorted(arm_reports, key=lambda r: r.arm):
        mean, ci = report.mean_ci()
        summary["arms"][report.arm] = {
            "mean_pct": mean,
            "ci95_pct": ci,
            "n_models": len(report.grid),
            "grid": [
                [bs, seed, report.grid.accuracies[(bs, seed)]]
                for bs, seed in sorted(report.grid.accuracies)
            ],
            "confusion": report.confusion.counts.tolist(),
            "confusion_rows": list(report.confusion.row_names),
            "confusion_cols": list(report.confusion.col_names),
            "confusion_cell": list(report.confusion_cell),
            "confusion_cell_accuracy": report.confusion_cell_accuracy,
        }

        grid_path = out / f"grid_{report.arm}.csv"
        with open(grid_path, "w", encoding="utf-8") as fh:
            fh.write(_provenance_line(meta))
            fh.write("batch_size,seed,accuracy\n")
            for bs, seed in sorted(report.grid.accuracies):
                fh.write(f"{bs},{seed},{report.grid.accuracies[(bs, seed)]!r}\n")

        conf_path = out / f"confusion_{report.arm}.csv"
        with open(conf_path, "w", encoding="utf-8") as fh:
            fh.write(_provenance_line(meta))
            fh.write("spoken," + ",".join(str(c) for c in report.confusion.col_names) + "\n")
            for name, row in zip(report.confusion.row_names, report.confusion.counts):
                fh.write(name + "," + ",".join(str(int(v)) for v in row) + "\n")

    with open(out / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
        fh.write("\n")

    _write_text_table(summary, meta, out / "results.txt")
    return summary


_INDIRECT_ARMS = ("dtw_pixels", "indirect_classifier", "indirect_cae")


def _format_row(name: str, mean: float, ci: Optional[float]) -> str:
    spread = f" +/- {ci:4.1f}" if ci is not None else ""
    return f"  {name:<42s} {mean:5.1f}{spread}\n"


def _write_text_table(summary: dict, meta: dict, path) -> None:
    arms = summary["arms"]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_provenance_line(meta))
        fh.write("Multimodal five-shot speech-to-image matching accuracy (%)\n\n")
        indirect = [a for a in _INDIRECT_ARMS if a in arms]
        if indirect:
            fh.write("Indirect models\n")
            for arm in indirect:
                fh.write(_format_row(arm, arms[arm]["mean_pct"], arms[arm]["ci95_pct"]))
            fh.write("\n")
        direct = [a for a in sorted(arms) if a not in _INDIRECT_ARMS]
        if direct:
            fh.write("Direct models (by application mode)\n")
            for arm in direct:
                fh.write(_format_row(arm, arms[arm]["mean_pct"], arms[arm]["ci95_pct"]))
