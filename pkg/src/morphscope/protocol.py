"""Cross-dataset evaluation protocol: manifests, grid runs, aggregation.

A dataset manifest is JSON-lines, one record per image:

    {"path": "img/001.png", "label": "morph", "morph_algorithm": "MIPGAN-I",
     "processing": "digital", "bbox": [x, y, w, h], "split": "train",
     "subject_id": "s042"}

``bbox``, ``split`` and ``subject_id`` are optional; bona fide records may
omit ``morph_algorithm`` (it defaults to "none").  The grid runner trains
one detector per (processing type, training algorithm) on that cell's
training morphs plus the same processing type's bona fide training images,
then scores every algorithm's test morphs against the bona fide test
images of that processing type.  Processing types never mix.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import metrics, svm
from .errors import ArgumentError, DataError, ProtocolError, SchemaError

ALGORITHMS = ("Landmark-I", "Landmark-II", "StyleGAN-IWBF", "MIPGAN-I", "MIPGAN-II")
PROCESSING_TYPES = ("digital", "print-scan", "print-scan-compressed")
NO_ALGORITHM = "none"
SPLITS = ("train", "test")
STD_CONVENTIONS = ("population", "sample")
STATS_MODES = ("all", "inter", "intra")


@dataclass
class ManifestRecord:
    path: str
    label: str
    processing: str
    morph_algorithm: str = NO_ALGORITHM
    bbox: tuple[float, float, float, float] | None = None
    split: str | None = None
    subject_id: str | None = None


@dataclass
class DatasetManifest:
    records: list[ManifestRecord]

    def select(
        self,
        label: str | None = None,
        processing: str | None = None,
        morph_algorithm: str | None = None,
        split: str | None = None,
    ) -> list[ManifestRecord]:
        out = []
        for r in self.records:
            if label is not None and r.label != label:
                continue
            if processing is not None and r.processing != processing:
                continue
            if morph_algorithm is not None and r.morph_algorithm != morph_algorithm:
                continue
            if split is not None and r.split != split:
                continue
            out.append(r)
        return out

    def processing_types(self) -> list[str]:
        present = {r.processing for r in self.records}
        return [p for p in PROCESSING_TYPES if p in present]

    def algorithms(self) -> list[str]:
        present = {r.morph_algorithm for r in self.records if r.label == "morph"}
        return [a for a in ALGORITHMS if a in present]


def _parse_record(obj: dict, where: str) -> ManifestRecord:
    if not isinstance(obj, dict):
        raise SchemaError(f"{where}: record must be a JSON object")
    path = obj.get("path")
    if not isinstance(path, str) or not path:
        raise SchemaError(f"{where}: missing or empty 'path'")
    label = obj.get("label")
    if label not in ("bona", "morph"):
        raise SchemaError(f"{where}: label must be 'bona' or 'morph', got {label!r}")
    processing = obj.get("processing")
    if processing not in PROCESSING_TYPES:
        raise SchemaError(
            f"{where}: unknown processing {processing!r}, expected one of {PROCESSING_TYPES}"
        )
    algorithm = obj.get("morph_algorithm", NO_ALGORITHM)
    if label == "morph":
        if algorithm not in ALGORITHMS:
            raise SchemaError(
                f"{where}: unknown morph_algorithm {algorithm!r}, "
                f"expected one of {ALGORITHMS}"
            )
    else:
        if algorithm != NO_ALGORITHM:
            raise DataError(
                f"{where}: bona fide record must not carry a morph algorithm "
                f"(got {algorithm!r})"
            )
    split = obj.get("split")
    if split is not None and split not in SPLITS:
        raise SchemaError(f"{where}: split must be 'train' or 'test', got {split!r}")
    bbox = obj.get("bbox")
    parsed_bbox = None
    if bbox is not None:
        if (
            not isinstance(bbox, (list, tuple))
            or len(bbox) != 4
            or not all(isinstance(v, (int, float)) for v in bbox)
        ):
            raise SchemaError(f"{where}: bbox must be [x, y, w, h] numbers")
        if bbox[2] <= 0 or bbox[3] <= 0:
            raise SchemaError(f"{where}: bbox width and height must be positive")
        parsed_bbox = tuple(float(v) for v in bbox)
    subject = obj.get("subject_id")
    if subject is not None and not isinstance(subject, str):
        raise SchemaError(f"{where}: subject_id must be a string")
    return ManifestRecord(
        path=path,
        label=label,
        processing=processing,
        morph_algorithm=algorithm,
        bbox=parsed_bbox,
        split=split,
        subject_id=subject,
    )


def load_manifest(path) -> DatasetManifest:
    """Parse a JSON-lines manifest, validating every record."""
    records: list[ManifestRecord] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            where = f"{path}:{lineno}"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{where}: invalid JSON ({exc})") from exc
            rec = _parse_record(obj, where)
            if rec.path in seen:
                raise DataError(f"{where}: duplicate path {rec.path!r}")
            seen.add(rec.path)
            records.append(rec)
    return DatasetManifest(records=records)


def save_manifest(manifest: DatasetManifest, path) -> None:
    """Write a manifest as JSON lines (used by synthetic-corpus tooling)."""
    with open(path, "w", encoding="utf-8") as fh:
        for r in manifest.records:
            obj: dict = {
                "path": r.path,
                "label": r.label,
                "processing": r.processing,
            }
            if r.label == "morph" or r.morph_algorithm != NO_ALGORITHM:
                obj["morph_algorithm"] = r.morph_algorithm
            if r.bbox is not None:
                obj["bbox"] = list(r.bbox)
            if r.split is not None:
                obj["split"] = r.split
            if r.subject_id is not None:
                obj["subject_id"] = r.subject_id
            fh.write(json.dumps(obj, sort_keys=True) + "\n")


def assign_splits(manifest: DatasetManifest, seed: int = 42) -> DatasetManifest:
    """Fill in missing train/test assignments.

    Records are grouped by (label, morph algorithm, processing type).  Within
    each group the unassigned records are split half/half by a seeded
    permutation; when every unassigned record carries a subject id the split
    is made over subjects instead, so no subject straddles the boundary.
    Explicit assignments are never changed.  Groups are processed in sorted
    order, making the result deterministic for a fixed seed.
    """
    rng = np.random.default_rng(seed)
    by_group: dict[tuple[str, str, str], list[ManifestRecord]] = {}
    for r in manifest.records:
        if r.split is None:
            by_group.setdefault((r.label, r.morph_algorithm, r.processing), []).append(r)

    assignment: dict[str, str] = {}
    for key in sorted(by_group):
        group = sorted(by_group[key], key=lambda r: r.path)
        if all(r.subject_id is not None for r in group):
            subjects = sorted({r.subject_id for r in group})
            order = rng.permutation(len(subjects))
            n_train = (len(subjects) + 1) // 2
            train_subjects = {subjects[i] for i in order[:n_train]}
            for r in group:
                assignment[r.path] = "train" if r.subject_id in train_subjects else "test"
        else:
            order = rng.permutation(len(group))
            n_train = (len(group) + 1) // 2
            train_paths = {group[i].path for i in order[:n_train]}
            for r in group:
                assignment[r.path] = "train" if r.path in train_paths else "test"

    new_records = [
        ManifestRecord(
            path=r.path,
            label=r.label,
            processing=r.processing,
            morph_algorithm=r.morph_algorithm,
            bbox=r.bbox,
            split=r.split if r.split is not None else assignment[r.path],
            subject_id=r.subject_id,
        )
        for r in manifest.records
    ]
    return DatasetManifest(records=new_records)


@dataclass
class GridCell:
    """Metrics of one (processing, train algorithm, test algorithm) cell."""

    d_eer: float
    bpcer_at_5: float
    bpcer_at_10: float


@dataclass
class GridReport:
    """Full cross-dataset grid plus bookkeeping."""

    processing_types: list[str]
    algorithms: list[str]
    cells: dict[tuple[str, str, str], GridCell]
    n_models: int = 0
    metadata: dict = field(default_factory=dict)


@dataclass
class StatsSummary:
    """Mean/spread of D-EER cells per processing type."""

    mode: str
    convention: str
    per_processing: dict[str, tuple[float, float]]


def _check_subject_disjointness(manifest: DatasetManifest) -> None:
    for proc in manifest.processing_types():
        bona = manifest.select(label="bona", processing=proc)
        train_subjects = {r.subject_id for r in bona if r.split == "train" and r.subject_id}
        test_subjects = {r.subject_id for r in bona if r.split == "test" and r.subject_id}
        overlap = train_subjects & test_subjects
        if overlap:
            raise DataError(
                f"bona fide subjects appear in both splits for {proc}: "
                f"{sorted(overlap)[:5]}"
            )


def _features_for(
    records: list[ManifestRecord], features: Mapping[str, np.ndarray]
) -> np.ndarray:
    rows = []
    for r in records:
        if r.path not in features:
            raise DataError(f"no feature vector for image {r.path!r}")
        rows.append(np.asarray(features[r.path], dtype=np.float64))
    return np.stack(rows)


def run_grid(
    manifest: DatasetManifest,
    features: Mapping[str, np.ndarray],
    c: float = 1.0,
    tol: float = 1e-4,
    max_iter: int = 1000,
    seed: int = 42,
    scaling: str = "none",
) -> GridReport:
    """Train and evaluate every (processing, train alg, test alg) cell.

    One detector is trained per processing type and training algorithm, so a
    full five-algorithm manifest yields 15 models and 75 evaluated cells.
    Any empty selection aborts with a ProtocolError naming the cell.
    """
    if any(r.split is None for r in manifest.records):
        manifest = assign_splits(manifest, seed=seed)
    _check_subject_disjointness(manifest)

    procs = manifest.processing_types()
    algs = manifest.algorithms()
    if not procs or not algs:
        raise ProtocolError("manifest has no evaluable processing types or algorithms")

    cells: dict[tuple[str, str, str], GridCell] = {}
    n_models = 0
    for proc in procs:
        bona_train = manifest.select(label="bona", processing=proc, split="train")
        bona_test = manifest.select(label="bona", processing=proc, split="test")
        if not bona_train:
            raise ProtocolError(f"no bona fide training images for processing {proc!r}")
        if not bona_test:
            raise ProtocolError(f"no bona fide test images for processing {proc!r}")
        x_bona_train = _features_for(bona_train, features)
        x_bona_test = _features_for(bona_test, features)

        test_morphs = {
            alg: manifest.select(
                label="morph", processing=proc, morph_algorithm=alg, split="test"
            )
            for alg in algs
        }
        for alg, records in test_morphs.items():
            if not records:
                raise ProtocolError(
                    f"no test morphs for cell (processing={proc!r}, algorithm={alg!r})"
                )

        for train_alg in algs:
            morph_train = manifest.select(
                label="morph", processing=proc, morph_algorithm=train_alg, split="train"
            )
            if not morph_train:
                raise ProtocolError(
                    f"no training morphs for cell (processing={proc!r}, "
                    f"algorithm={train_alg!r})"
                )
            x_morph_train = _features_for(morph_train, features)
            x_train = np.vstack([x_bona_train, x_morph_train])
            y_train = np.concatenate(
                [-np.ones(len(x_bona_train)), np.ones(len(x_morph_train))]
            )
            model = svm.train(
                x_train, y_train, c=c, tol=tol, max_iter=max_iter, seed=seed,
                scaling=scaling,
            )
            n_models += 1

            bona_scores = svm.score_many(model, x_bona_test)
            for test_alg in algs:
                x_morph_test = _features_for(test_morphs[test_alg], features)
                morph_scores = svm.score_many(model, x_morph_test)
                ls = metrics.LabeledScores(bona=bona_scores, morph=morph_scores)
                cells[(proc, train_alg, test_alg)] = GridCell(
                    d_eer=metrics.d_eer(ls),
                    bpcer_at_5=metrics.bpcer_at_macer(ls, 5.0),
                    bpcer_at_10=metrics.bpcer_at_macer(ls, 10.0),
                )

    return GridReport(
        processing_types=procs,
        algorithms=algs,
        cells=cells,
        n_models=n_models,
    )


def aggregate_stats(
    report: GridReport, mode: str = "all", convention: str = "population"
) -> StatsSummary:
    """Mean and standard deviation of D-EER cells per processing type.

    ``mode`` selects which cells enter: every cell ("all"), train algorithm
    different from test algorithm ("inter"), or the diagonal ("intra").
    ``convention`` picks the divisor of the deviation: n ("population") or
    n - 1 ("sample").
    """
    if mode not in STATS_MODES:
        raise ArgumentError(f"mode must be one of {STATS_MODES}, got {mode!r}")
    if convention not in STD_CONVENTIONS:
        raise ArgumentError(
            f"convention must be one of {STD_CONVENTIONS}, got {convention!r}"
        )
    ddof = 0 if convention == "population" else 1
    per: dict[str, tuple[float, float]] = {}
    for proc in report.processing_types:
        values = []
        for train_alg in report.algorithms:
            for test_alg in report.algorithms:
                if mode == "inter" and train_alg == test_alg:
                    continue
                if mode == "intra" and train_alg != test_alg:
                    continue
                values.append(report.cells[(proc, train_alg, test_alg)].d_eer)
        arr = np.array(values, dtype=np.float64)
        per[proc] = (float(arr.mean()), float(arr.std(ddof=ddof)))
    return StatsSummary(mode=mode, convention=convention, per_processing=per)


def _sorted_cells(report: GridReport):
    for proc in report.processing_types:
        for train_alg in report.algorithms:
            for test_alg in report.algorithms:
                yield proc, train_alg, test_alg, report.cells[(proc, train_alg, test_alg)]


def grid_to_csv(report: GridReport, path) -> None:
    """One row per cell: processing, train, test, D-EER, BPCER@5, BPCER@10."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "processing",
                "train_algorithm",
                "test_algorithm",
                "d_eer",
                "bpcer_at_macer5",
                "bpcer_at_macer10",
            ]
        )
        for proc, train_alg, test_alg, cell in _sorted_cells(report):
            writer.writerow(
                [
                    proc,
                    train_alg,
                    test_alg,
                    repr(cell.d_eer),
                    repr(cell.bpcer_at_5),
                    repr(cell.bpcer_at_10),
                ]
            )


def grid_to_json(report: GridReport, path, stats: list[StatsSummary] | None = None) -> None:
    """Lossless JSON serialization of the grid, stats and metadata."""
    payload = {
        "version": 1,
        "processing_types": report.processing_types,
        "algorithms": report.algorithms,
        "n_models": report.n_models,
        "cells": [
            {
                "processing": proc,
                "train_algorithm": train_alg,
                "test_algorithm": test_alg,
                "d_eer": cell.d_eer,
                "bpcer_at_macer5": cell.bpcer_at_5,
                "bpcer_at_macer10": cell.bpcer_at_10,
            }
            for proc, train_alg, test_alg, cell in _sorted_cells(report)
        ],
        "stats": [
            {
                "mode": s.mode,
                "convention": s.convention,
                "per_processing": {
                    proc: {"mean": mu, "std": sd}
                    for proc, (mu, sd) in s.per_processing.items()
                },
            }
            for s in (stats or [])
        ],
        "metadata": report.metadata,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_grid_json(path) -> GridReport:
    """Read a grid report written by :func:`grid_to_json`."""
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    for key in ("processing_types", "algorithms", "cells"):
        if key not in payload:
            raise SchemaError(f"{path}: grid JSON is missing {key!r}")
    cells: dict[tuple[str, str, str], GridCell] = {}
    for item in payload["cells"]:
        key = (item["processing"], item["train_algorithm"], item["test_algorithm"])
        cells[key] = GridCell(
            d_eer=float(item["d_eer"]),
            bpcer_at_5=float(item["bpcer_at_macer5"]),
            bpcer_at_10=float(item["bpcer_at_macer10"]),
        )
    return GridReport(
        processing_types=list(payload["processing_types"]),
        algorithms=list(payload["algorithms"]),
        cells=cells,
        n_models=int(payload.get("n_models", 0)),
        metadata=payload.get("metadata", {}),
    )


def grid_to_markdown(
    report: GridReport, path, stats: list[StatsSummary] | None = None
) -> None:
    """Human-readable grid tables, one D-EER matrix per processing type."""
    lines = ["# Cross-dataset evaluation", ""]
    for proc in report.processing_types:
        lines.append(f"## Processing: {proc}")
        lines.append("")
        header = "| train \\ test | " + " | ".join(report.algorithms) + " |"
        rule = "|" + " --- |" * (len(report.algorithms) + 1)
        lines.append(header)
        lines.append(rule)
        for train_alg in report.algorithms:
            row = [train_alg]
            for test_alg in report.algorithms:
                cell = report.cells[(proc, train_alg, test_alg)]
                row.append(f"{cell.d_eer:.2f}")
            lines.append("| " + " | ".join(row) + " |")
        lines.append("")
    if stats:
        lines.append("## Aggregate D-EER (%)")
        lines.append("")
        lines.append("| processing | mode | mean | std |")
        lines.append("| --- | --- | --- | --- |")
        for s in stats:
            for proc in report.processing_types:
                mu, sd = s.per_processing[proc]
                lines.append(f"| {proc} | {s.mode} | {mu:.2f} | {sd:.2f} |")
        lines.append("")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines))


def emit_report(
    report: GridReport,
    out_dir,
    stats: list[StatsSummary] | None = None,
    formats: tuple[str, ...] = ("csv", "json", "markdown"),
) -> dict[str, str]:
    """Write the grid in the requested formats; returns {format: path}."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    written: dict[str, str] = {}
    for fmt in formats:
        if fmt == "csv":
            p = os.path.join(out_dir, "grid.csv")
            grid_to_csv(report, p)
        elif fmt == "json":
            p = os.path.join(out_dir, "grid.json")
            grid_to_json(report, p, stats)
        elif fmt == "markdown":
            p = os.path.join(out_dir, "grid.md")
            grid_to_markdown(report, p, stats)
        else:
            raise ArgumentError(f"unknown report format {fmt!r}")
        written[fmt] = p
    return written
