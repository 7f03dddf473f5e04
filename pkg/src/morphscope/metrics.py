"""Presentation-attack error metrics over labeled score sets.

A sample is classified as a morph when its score is >= threshold.  Two
error rates follow:

    BPCER(t) = |{bona fide scores >= t}| / |bona fide|   (bona called morph)
    MACER(t) = |{morph scores     <  t}| / |morph|       (morph called bona)

Thresholds sweep the midpoints between adjacent distinct pooled scores,
with -inf and +inf sentinels at the ends, so every achievable operating
point appears exactly once.  The detection equal error rate (D-EER) is the
crossing of the two staircases, linearly interpolated between the two
bracketing points.  All public rates are percentages.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, DataError, SchemaError

LABELS = ("bona", "morph")


@dataclass
class LabeledScores:
    """Scores split by ground-truth label; higher score means more morph-like."""

    bona: np.ndarray
    morph: np.ndarray

    def __post_init__(self):
        self.bona = np.asarray(self.bona, dtype=np.float64)
        self.morph = np.asarray(self.morph, dtype=np.float64)
        if self.bona.ndim != 1 or self.morph.ndim != 1:
            raise ArgumentError("score arrays must be 1-D")
        if self.bona.size == 0 or self.morph.size == 0:
            raise ArgumentError("both classes need at least one score")
        if not (np.isfinite(self.bona).all() and np.isfinite(self.morph).all()):
            raise DataError("scores contain non-finite values")


@dataclass
class DetCurve:
    """Deduplicated DET staircase: (macer, bpcer) fraction pairs."""

    points: list[tuple[float, float]]


def error_rates(scores: LabeledScores, threshold: float) -> tuple[float, float]:
    """Return (bpcer, macer) as fractions at one decision threshold."""
    bpcer = float(np.mean(scores.bona >= threshold))
    macer = float(np.mean(scores.morph < threshold))
    return bpcer, macer


def sweep_thresholds(scores: LabeledScores) -> np.ndarray:
    """Midpoints between adjacent distinct pooled scores, plus inf sentinels."""
    pooled = np.unique(np.concatenate([scores.bona, scores.morph]))
    mids = (pooled[:-1] + pooled[1:]) / 2.0
    return np.concatenate(([-np.inf], mids, [np.inf]))


def _staircase(scores: LabeledScores) -> tuple[np.ndarray, np.ndarray]:
    """Deduplicated operating points sorted by macer: for every reachable
    MACER keep the smallest BPCER."""
    thresholds = sweep_thresholds(scores)
    bpcer = (scores.bona[None, :] >= thresholds[:, None]).mean(axis=1)
    macer = (scores.morph[None, :] < thresholds[:, None]).mean(axis=1)
    best: dict[float, float] = {}
    for m, b in zip(macer, bpcer):
        if m not in best or b < best[m]:
            best[m] = b
    ms = np.array(sorted(best))
    return ms, np.array([best[m] for m in ms])


def det_curve(scores: LabeledScores) -> DetCurve:
    """DET staircase with strictly increasing MACER, nonincreasing BPCER."""
    ms, bs = _staircase(scores)
    return DetCurve(points=[(float(m), float(b)) for m, b in zip(ms, bs)])


def d_eer(scores: LabeledScores) -> float:
    """Detection equal error rate in percent.

    Walks the DET staircase for the sign change of BPCER - MACER and
    linearly interpolates between the bracketing points; an exact tie
    returns that point directly.
    """
    ms, bs = _staircase(scores)
    gap = bs - ms
    idx = int(np.argmax(gap <= 0))  # first nonpositive gap; gap[0] >= 0, gap[-1] <= 0
    if gap[idx] == 0:
        return 100.0 * float(ms[idx])
    m1, m2 = ms[idx - 1], ms[idx]
    g1, g2 = gap[idx - 1], gap[idx]
    s = g1 / (g1 - g2)
    return 100.0 * float(m1 + s * (m2 - m1))


def bpcer_at_macer(scores: LabeledScores, target_percent: float) -> float:
    """Smallest BPCER (percent) over thresholds with MACER <= target."""
    if not 0 <= target_percent <= 100:
        raise ArgumentError(f"target must be in [0, 100] percent, got {target_percent}")
    ms, bs = _staircase(scores)
    feasible = bs[ms <= target_percent / 100.0]
    if feasible.size == 0:
        # -inf sentinel always yields macer 0, so this cannot happen
        raise ArgumentError("no feasible threshold for the requested MACER target")
    return 100.0 * float(feasible.min())


@dataclass
class ScoreRecord:
    image_id: str
    label: str
    score: float


def save_scores_csv(records: list[ScoreRecord], path) -> None:
    """Write per-image scores as CSV with header image_id,label,score."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "label", "score"])
        for rec in records:
            if rec.label not in LABELS:
                raise DataError(f"illegal label {rec.label!r} for {rec.image_id!r}")
            writer.writerow([rec.image_id, rec.label, repr(rec.score)])


def load_scores_csv(path) -> list[ScoreRecord]:
    """Read a score CSV written by :func:`save_scores_csv`."""
    records: list[ScoreRecord] = []
    with open(path, "r", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["image_id", "label", "score"]:
            raise SchemaError(f"{path}: expected header image_id,label,score, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 3:
                raise SchemaError(f"{path}:{lineno}: expected 3 columns, got {len(row)}")
            ident, label, score_text = row
            if label not in LABELS:
                raise SchemaError(f"{path}:{lineno}: unknown label {label!r}")
            try:
                value = float(score_text)
            except ValueError as exc:
                raise SchemaError(f"{path}:{lineno}: bad score {score_text!r}") from exc
            records.append(ScoreRecord(image_id=ident, label=label, score=value))
    return records


def scores_from_records(records: list[ScoreRecord], flip: bool = False) -> LabeledScores:
    """Group score records by label; ``flip`` negates scores whose source
    used the opposite orientation."""
    sign = -1.0 if flip else 1.0
    bona = [sign * r.score for r in records if r.label == "bona"]
    morph = [sign * r.score for r in records if r.label == "morph"]
    return LabeledScores(bona=np.array(bona), morph=np.array(morph))


def det_points_csv(curve: DetCurve, path) -> None:
    """Write DET staircase points as CSV with columns macer,bpcer (fractions)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["macer", "bpcer"])
        for m, b in curve.points:
            writer.writerow([repr(m), repr(b)])
