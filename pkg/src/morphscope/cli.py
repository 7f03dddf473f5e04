"""Command line interface.

Subcommands: extract, train, eval, grid, stats, tsne, plot,
validate-weights.  Every option can also come from a JSON config file
(--config); explicit flags win.  Exit codes: 0 success, 1 usage error,
2 data or schema error, 3 numeric failure.

Runs that write outputs also drop a small metadata record (resolved
options, option digest, tool and format versions) next to them.  Feature
extraction caches per (weights, preprocessing) pair under --cache-dir or
the MORPHSCOPE_CACHE environment variable.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import hashlib
import json
import os
import sys

import numpy as np

from . import __version__, metrics, protocol, svm, tsne, viz
from . import preprocess as pp
from . import vit_encoder as vit
from . import weight_store as ws
from .errors import DataError, MorphscopeError, UsageError

CACHE_ENV = "MORPHSCOPE_CACHE"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _triple(value) -> tuple[float, float, float]:
    if isinstance(value, (list, tuple)):
        parts = [float(v) for v in value]
    else:
        parts = [float(v) for v in str(value).split(",")]
    if len(parts) != 3:
        raise UsageError(f"expected three comma-separated channel values, got {value!r}")
    return tuple(parts)


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    return cfg


def _resolve(args, defaults: dict):
    """Merge flag values over config-file values over defaults."""
    config = _load_config_file(getattr(args, "config", None))
    resolved = {}
    for key, default in defaults.items():
        value = getattr(args, key, None)
        if value is None:
            value = config.get(key, default)
        resolved[key] = value
    return resolved


def _options_digest(options: dict) -> str:
    blob = json.dumps(options, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _write_metadata(path, command: str, options: dict) -> None:
    record = {
        "command": command,
        "tool_version": __version__,
        "weight_format_version": ws.FORMAT_VERSION,
        "options": options,
        "options_digest": _options_digest(options),
        "seed": options.get("seed"),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(record, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _resolve_image_path(manifest_path: str, record_path: str) -> str:
    if os.path.isabs(record_path):
        return record_path
    return os.path.join(os.path.dirname(os.path.abspath(manifest_path)), record_path)


def _encode_one(record, manifest_path, bundle, prep_config):
    with open(_resolve_image_path(manifest_path, record.path), "rb") as fh:
        data = fh.read()
    bbox = pp.BBox(*record.bbox) if record.bbox is not None else None
    tensor = pp.preprocess_bytes(data, bbox, prep_config)
    return vit.extract_cls(tensor, bundle, image_id=record.path)


def _extract_features(
    manifest: protocol.DatasetManifest,
    manifest_path: str,
    weights_path: str,
    bundle: ws.WeightBundle,
    prep_config: pp.PreprocessConfig,
    workers: int,
    cache_dir: str | None,
) -> dict[str, np.ndarray]:
    """Encode every manifest image, using and refreshing the cache if set."""
    cache_file = None
    cached: dict[str, np.ndarray] = {}
    if cache_dir:
        os.makedirs(cache_dir, exist_ok=True)
        key = f"{_file_digest(weights_path)[:16]}_{prep_config.digest()[:16]}"
        cache_file = os.path.join(cache_dir, f"features_{key}.msf")
        if os.path.exists(cache_file):
            cached = {fv.image_id: fv.values for fv in vit.load_features(cache_file)}

    todo = [r for r in manifest.records if r.path not in cached]
    results: dict[str, np.ndarray] = {}
    if workers > 1 and len(todo) > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {
                pool.submit(_encode_one, r, manifest_path, bundle, prep_config): r
                for r in todo
            }
            for future in concurrent.futures.as_completed(futures):
                fv = future.result()
                results[fv.image_id] = fv.values
    else:
        for r in todo:
            fv = _encode_one(r, manifest_path, bundle, prep_config)
            results[fv.image_id] = fv.values

    features = dict(cached)
    features.update(results)
    if cache_file is not None and results:
        merged = [
            vit.FeatureVector(image_id=ident, values=features[ident])
            for ident in sorted(features)
        ]
        vit.save_features(merged, cache_file)
    return {r.path: features[r.path] for r in manifest.records}


def _prep_config(options: dict, bundle: ws.WeightBundle) -> pp.PreprocessConfig:
    return pp.PreprocessConfig(
        side=bundle.config.image_side,
        margin=float(options["margin"]),
        mean=_triple(options["mean"]),
        std=_triple(options["std"]),
    )


def _cache_dir(options: dict) -> str | None:
    return options.get("cache_dir") or os.environ.get(CACHE_ENV) or None


def _check_workers(n) -> int:
    n = int(n)
    if n < 1:
        raise UsageError(f"--workers must be at least 1, got {n}")
    return n


# ---------------------------------------------------------------- extract

_EXTRACT_DEFAULTS = {
    "margin": 0.0,
    "mean": "0.5,0.5,0.5",
    "std": "0.5,0.5,0.5",
    "workers": 1,
    "cache_dir": None,
    "seed": 42,
}


def _cmd_extract(args) -> int:
    options = _resolve(args, _EXTRACT_DEFAULTS)
    options.update(weights=args.weights, manifest=args.manifest, out=args.out)
    workers = _check_workers(options["workers"])

    bundle = ws.load_weights(args.weights)
    manifest = protocol.load_manifest(args.manifest)
    prep = _prep_config(options, bundle)
    features = _extract_features(
        manifest, args.manifest, args.weights, bundle, prep,
        workers, _cache_dir(options),
    )
    vectors = [
        vit.FeatureVector(image_id=r.path, values=features[r.path])
        for r in manifest.records
    ]
    vit.save_features(vectors, args.out)
    _write_metadata(args.out + ".meta.json", "extract", options)
    print(f"extracted {len(vectors)} feature vectors -> {args.out}")
    return 0


# ------------------------------------------------------------------ train

_TRAIN_DEFAULTS = {
    "c": 1.0,
    "tol": 1e-4,
    "max_iter": 1000,
    "seed": 42,
    "scaling": "none",
    "processing": None,
    "algorithm": None,
    "split": None,
}


def _select_records(manifest, options) -> list[protocol.ManifestRecord]:
    split = options["split"]
    if split is None:
        has_splits = any(r.split is not None for r in manifest.records)
        split = "train" if has_splits else "all"
    records = manifest.select(
        processing=options["processing"],
        split=None if split == "all" else split,
    )
    if options["algorithm"] is not None:
        records = [
            r
            for r in records
            if r.label == "bona" or r.morph_algorithm == options["algorithm"]
        ]
    return records


def _cmd_train(args) -> int:
    options = _resolve(args, _TRAIN_DEFAULTS)
    options.update(features=args.features, manifest=args.manifest, out=args.out)

    manifest = protocol.load_manifest(args.manifest)
    features = {fv.image_id: fv.values for fv in vit.load_features(args.features)}
    records = _select_records(manifest, options)
    if not records:
        raise DataError("no manifest records match the training selection")
    missing = [r.path for r in records if r.path not in features]
    if missing:
        raise DataError(f"no feature vectors for {len(missing)} images, e.g. {missing[0]!r}")

    x = np.stack([features[r.path] for r in records])
    y = np.array([1.0 if r.label == "morph" else -1.0 for r in records])
    model = svm.train(
        x, y,
        c=float(options["c"]),
        tol=float(options["tol"]),
        max_iter=int(options["max_iter"]),
        seed=int(options["seed"]),
        scaling=options["scaling"],
    )
    svm.save_model(model, args.out)
    _write_metadata(args.out + ".meta.json", "train", options)
    print(
        f"trained on {len(records)} images ({int((y > 0).sum())} morph, "
        f"{int((y < 0).sum())} bona fide), {model.n_sweeps} sweeps -> {args.out}"
    )
    return 0


# ------------------------------------------------------------------- eval

_EVAL_DEFAULTS = {
    "processing": None,
    "algorithm": None,
    "split": None,
    "flip_scores": False,
}


def _cmd_eval(args) -> int:
    options = _resolve(args, _EVAL_DEFAULTS)
    options.update(
        model=args.model,
        features=args.features,
        manifest=args.manifest,
        out_scores=args.out_scores,
        out_metrics=args.out_metrics,
    )

    manifest = protocol.load_manifest(args.manifest)
    features = {fv.image_id: fv.values for fv in vit.load_features(args.features)}
    model = svm.load_model(args.model)

    split = options["split"]
    if split is None:
        has_splits = any(r.split is not None for r in manifest.records)
        split = "test" if has_splits else "all"
    records = manifest.select(
        processing=options["processing"],
        split=None if split == "all" else split,
    )
    if options["algorithm"] is not None:
        records = [
            r
            for r in records
            if r.label == "bona" or r.morph_algorithm == options["algorithm"]
        ]
    if not records:
        raise DataError("no manifest records match the evaluation selection")
    missing = [r.path for r in records if r.path not in features]
    if missing:
        raise DataError(f"no feature vectors for {len(missing)} images, e.g. {missing[0]!r}")

    sign = -1.0 if options["flip_scores"] else 1.0
    score_records = [
        metrics.ScoreRecord(
            image_id=r.path,
            label=r.label,
            score=sign * svm.score(model, features[r.path]),
        )
        for r in records
    ]
    metrics.save_scores_csv(score_records, args.out_scores)

    labeled = metrics.scores_from_records(score_records)
    summary = {
        "d_eer": metrics.d_eer(labeled),
        "bpcer_at_macer5": metrics.bpcer_at_macer(labeled, 5.0),
        "bpcer_at_macer10": metrics.bpcer_at_macer(labeled, 10.0),
        "n_bona": int(labeled.bona.size),
        "n_morph": int(labeled.morph.size),
    }
    with open(args.out_metrics, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
        fh.write("\n")
    _write_metadata(args.out_metrics + ".meta.json", "eval", options)
    print(
        f"d_eer={summary['d_eer']:.2f}% bpcer@5={summary['bpcer_at_macer5']:.2f}% "
        f"bpcer@10={summary['bpcer_at_macer10']:.2f}%"
    )
    return 0


# ------------------------------------------------------------------- grid

_GRID_DEFAULTS = {
    "margin": 0.0,
    "mean": "0.5,0.5,0.5",
    "std": "0.5,0.5,0.5",
    "workers": 1,
    "cache_dir": None,
    "c": 1.0,
    "tol": 1e-4,
    "max_iter": 1000,
    "seed": 42,
    "scaling": "none",
    "std_convention": "population",
    "formats": "csv,json,markdown",
}


def _cmd_grid(args) -> int:
    options = _resolve(args, _GRID_DEFAULTS)
    options.update(weights=args.weights, manifest=args.manifest, out_dir=args.out_dir)
    workers = _check_workers(options["workers"])

    bundle = ws.load_weights(args.weights)
    manifest = protocol.load_manifest(args.manifest)
    prep = _prep_config(options, bundle)
    features = _extract_features(
        manifest, args.manifest, args.weights, bundle, prep,
        workers, _cache_dir(options),
    )

    report = protocol.run_grid(
        manifest,
        features,
        c=float(options["c"]),
        tol=float(options["tol"]),
        max_iter=int(options["max_iter"]),
        seed=int(options["seed"]),
        scaling=options["scaling"],
    )
    report.metadata = {
        "options_digest": _options_digest(options),
        "seed": int(options["seed"]),
        "std_convention": options["std_convention"],
        "tool_version": __version__,
    }
    stats = [
        protocol.aggregate_stats(report, mode=m, convention=options["std_convention"])
        for m in protocol.STATS_MODES
    ]

    formats = tuple(f.strip() for f in str(options["formats"]).split(",") if f.strip())
    written = protocol.emit_report(report, args.out_dir, stats=stats, formats=formats)

    box_data = {
        proc: [
            report.cells[(proc, a, b)].d_eer
            for a in report.algorithms
            for b in report.algorithms
        ]
        for proc in report.processing_types
    }
    figure_path = os.path.join(args.out_dir, "d_eer_boxplot.svg")
    with open(figure_path, "w", encoding="utf-8") as fh:
        fh.write(viz.emit_svg("boxplot", box_data, title="D-EER by processing type"))
    written["figure"] = figure_path

    _write_metadata(os.path.join(args.out_dir, "run_metadata.json"), "grid", options)
    for fmt, path in sorted(written.items()):
        print(f"{fmt}: {path}")
    return 0


# ------------------------------------------------------------------ stats

_STATS_DEFAULTS = {
    "mode": "all",
    "std_convention": "population",
}


def _cmd_stats(args) -> int:
    options = _resolve(args, _STATS_DEFAULTS)
    options.update(grid=args.grid, out=args.out)

    report = protocol.load_grid_json(args.grid)
    summary = protocol.aggregate_stats(
        report, mode=options["mode"], convention=options["std_convention"]
    )
    for proc in report.processing_types:
        mu, sd = summary.per_processing[proc]
        print(f"{proc} {summary.mode} mean={mu:.2f} std={sd:.2f}")
    if args.out:
        payload = {
            "mode": summary.mode,
            "convention": summary.convention,
            "per_processing": {
                proc: {"mean": mu, "std": sd}
                for proc, (mu, sd) in summary.per_processing.items()
            },
        }
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, sort_keys=True, indent=2)
            fh.write("\n")
        _write_metadata(args.out + ".meta.json", "stats", options)
    return 0


# ------------------------------------------------------------------- tsne

_TSNE_DEFAULTS = {
    "perplexity": 30.0,
    "iterations": 1000,
    "learning_rate": 200.0,
    "seed": 42,
    "pca": False,
    "pca_dims": 50,
    "processing": None,
    "split": None,
}


def _cmd_tsne(args) -> int:
    options = _resolve(args, _TSNE_DEFAULTS)
    options.update(features=args.features, manifest=args.manifest, out=args.out)

    manifest = protocol.load_manifest(args.manifest)
    features = {fv.image_id: fv.values for fv in vit.load_features(args.features)}
    records = manifest.select(
        processing=options["processing"],
        split=options["split"],
    )
    records = [r for r in records if r.path in features]
    if not records:
        raise DataError("no manifest records with features match the selection")

    x = np.stack([features[r.path] for r in records])
    if options["pca"]:
        x = tsne.pca_reduce(x, dims=int(options["pca_dims"]))
    y, trace = tsne.tsne_embed(
        x,
        perplexity=float(options["perplexity"]),
        n_iter=int(options["iterations"]),
        learning_rate=float(options["learning_rate"]),
        seed=int(options["seed"]),
    )
    ids = [r.path for r in records]
    groups = [
        "bona fide" if r.label == "bona" else r.morph_algorithm for r in records
    ]
    tsne.export_layout_csv(ids, y, groups, args.out)
    options["final_kl"] = trace[-1]
    _write_metadata(args.out + ".meta.json", "tsne", options)
    print(f"embedded {len(ids)} points, final KL {trace[-1]:.4f} -> {args.out}")
    return 0


# ------------------------------------------------------------------- plot

def _cmd_plot(args) -> int:
    options = {
        "kind": args.kind,
        "input": args.input,
        "out": args.out,
        "title": args.title,
        "flip_scores": bool(args.flip_scores),
    }
    if args.kind == "det":
        records = metrics.load_scores_csv(args.input)
        labeled = metrics.scores_from_records(records, flip=options["flip_scores"])
        svg = viz.emit_svg("det", metrics.det_curve(labeled), title=args.title)
    elif args.kind == "boxplot":
        report = protocol.load_grid_json(args.input)
        data = {
            proc: [
                report.cells[(proc, a, b)].d_eer
                for a in report.algorithms
                for b in report.algorithms
            ]
            for proc in report.processing_types
        }
        svg = viz.emit_svg("boxplot", data, title=args.title)
    elif args.kind == "scatter":
        ids, y, groups = tsne.load_layout_csv(args.input)
        data: dict[str, list] = {}
        for (px, py), group in zip(y, groups):
            data.setdefault(group, []).append((px, py))
        svg = viz.emit_svg("scatter", data, title=args.title)
    else:
        raise UsageError(f"unknown plot kind {args.kind!r}")

    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(svg)
    _write_metadata(args.out + ".meta.json", "plot", options)
    print(f"wrote {args.out}")
    return 0


# ------------------------------------------------------- validate-weights

def _cmd_validate_weights(args) -> int:
    bundle = ws.load_weights(args.weights)  # raises on any violation
    n_params = ws.total_parameter_count(bundle.config)
    print(
        f"ok: {len(bundle.entries)} tensors, {n_params} parameters, "
        f"config {json.dumps(bundle.config.to_dict(), sort_keys=True)}"
    )
    return 0


# ------------------------------------------------------------------ parser

def _build_parser() -> _Parser:
    parser = _Parser(prog="morphscope", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="JSON config file; flags override its values")

    p = sub.add_parser("extract", help="encode manifest images to a feature file")
    add_common(p)
    p.add_argument("--weights", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--margin", type=float)
    p.add_argument("--mean")
    p.add_argument("--std")
    p.add_argument("--workers", type=int)
    p.add_argument("--cache-dir", dest="cache_dir")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_extract)

    p = sub.add_parser("train", help="fit a linear detector on extracted features")
    add_common(p)
    p.add_argument("--features", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--c", type=float)
    p.add_argument("--tol", type=float)
    p.add_argument("--max-iter", dest="max_iter", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--scaling", choices=svm.SCALING_KINDS)
    p.add_argument("--processing", choices=protocol.PROCESSING_TYPES)
    p.add_argument("--algorithm", choices=protocol.ALGORITHMS)
    p.add_argument("--split", choices=("train", "test", "all"))
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="score features against a model and report metrics")
    add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-scores", dest="out_scores", required=True)
    p.add_argument("--out-metrics", dest="out_metrics", required=True)
    p.add_argument("--processing", choices=protocol.PROCESSING_TYPES)
    p.add_argument("--algorithm", choices=protocol.ALGORITHMS)
    p.add_argument("--split", choices=("train", "test", "all"))
    p.add_argument("--flip-scores", dest="flip_scores", action="store_true", default=None)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("grid", help="run the full cross-dataset evaluation grid")
    add_common(p)
    p.add_argument("--weights", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.add_argument("--margin", type=float)
    p.add_argument("--mean")
    p.add_argument("--std")
    p.add_argument("--workers", type=int)
    p.add_argument("--cache-dir", dest="cache_dir")
    p.add_argument("--c", type=float)
    p.add_argument("--tol", type=float)
    p.add_argument("--max-iter", dest="max_iter", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--scaling", choices=svm.SCALING_KINDS)
    p.add_argument("--std-convention", dest="std_convention", choices=protocol.STD_CONVENTIONS)
    p.add_argument("--formats")
    p.set_defaults(func=_cmd_grid)

    p = sub.add_parser("stats", help="aggregate D-EER statistics from a grid report")
    add_common(p)
    p.add_argument("--grid", required=True)
    p.add_argument("--mode", choices=protocol.STATS_MODES)
    p.add_argument("--std-convention", dest="std_convention", choices=protocol.STD_CONVENTIONS)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_stats)

    p = sub.add_parser("tsne", help="project features to 2-D for inspection")
    add_common(p)
    p.add_argument("--features", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--perplexity", type=float)
    p.add_argument("--iterations", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--pca", action="store_true", default=None)
    p.add_argument("--pca-dims", dest="pca_dims", type=int)
    p.add_argument("--processing", choices=protocol.PROCESSING_TYPES)
    p.add_argument("--split", choices=("train", "test"))
    p.set_defaults(func=_cmd_tsne)

    p = sub.add_parser("plot", help="render a deterministic SVG figure")
    p.add_argument("--kind", required=True, choices=("det", "boxplot", "scatter"))
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--title")
    p.add_argument("--flip-scores", dest="flip_scores", action="store_true", default=False)
    p.set_defaults(func=_cmd_plot)

    p = sub.add_parser("validate-weights", help="check a weight file against its schema")
    p.add_argument("--weights", required=True)
    p.set_defaults(func=_cmd_validate_weights)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except MorphscopeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
