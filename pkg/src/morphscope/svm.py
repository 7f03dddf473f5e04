"""Linear support vector machine trained by dual coordinate descent.

Solves the L2-regularized L1-loss (hinge) problem

    min_w  0.5 ||w~||^2 + C sum_i max(0, 1 - y_i w~ . x~_i)

over augmented vectors x~ = [x, 1], so the bias is the last weight
coordinate and is regularized like every other one.  The dual

    min_a  0.5 a^T Q a - e^T a,   0 <= a_i <= C,  Q_ij = y_i y_j x~_i . x~_j

is optimized one coordinate at a time with a seeded random permutation per
sweep, maintaining w~ = sum_i a_i y_i x~_i incrementally.  Iteration stops
when the largest projected gradient magnitude over a sweep drops to the
tolerance.  Solver state is float64 throughout; convention: positive scores
mean morph.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ArgumentError,
    CorruptionError,
    DataError,
    FormatError,
    SchemaError,
    TrainingError,
)

MODEL_MAGIC = b"MSM1"
MODEL_VERSION = 1

SCALING_KINDS = ("none", "standard")


@dataclass
class ScalingRecord:
    """Feature scaling applied before the dot product."""

    kind: str = "none"
    mean: np.ndarray | None = None
    std: np.ndarray | None = None

    def apply(self, x: np.ndarray) -> np.ndarray:
        if self.kind == "none":
            return x
        return (x - self.mean) / self.std


@dataclass
class LinearModel:
    """Trained hyperplane plus the hyperparameters that produced it."""

    w: np.ndarray
    b: float
    c: float = 1.0
    tol: float = 1e-4
    max_iter: int = 1000
    seed: int = 42
    n_sweeps: int = 0
    scaling: ScalingRecord = field(default_factory=ScalingRecord)
    dual_objective_trace: list[float] = field(default_factory=list)


def _validate_training_set(x: np.ndarray, y: np.ndarray) -> None:
    if x.ndim != 2:
        raise ArgumentError(f"training features must be 2-D, got shape {x.shape}")
    if y.shape != (x.shape[0],):
        raise ArgumentError(
            f"labels shape {y.shape} does not match {x.shape[0]} feature rows"
        )
    if x.shape[0] < 2:
        raise TrainingError(f"need at least 2 training points, got {x.shape[0]}")
    if not np.isfinite(x).all():
        raise DataError("training features contain non-finite values")
    labels = np.unique(y)
    if not np.all(np.isin(labels, (-1, 1))):
        raise DataError(f"labels must be -1 or +1, got values {labels}")
    if labels.size < 2:
        raise TrainingError("training set contains a single class")


def train(
    x,
    y,
    c: float = 1.0,
    tol: float = 1e-4,
    max_iter: int = 1000,
    seed: int = 42,
    scaling: str = "none",
) -> LinearModel:
    """Fit the hinge-loss linear separator on labeled feature rows.

    ``y`` holds -1 (bona fide) and +1 (morph).  Deterministic and
    single-threaded for a fixed seed.  Returns a model whose per-sweep dual
    objective trace is nondecreasing.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _validate_training_set(x, y)
    if c <= 0:
        raise ArgumentError(f"C must be positive, got {c}")
    if scaling not in SCALING_KINDS:
        raise ArgumentError(f"scaling must be one of {SCALING_KINDS}, got {scaling!r}")

    record = ScalingRecord()
    if scaling == "standard":
        mean = x.mean(axis=0)
        std = x.std(axis=0)
        std = np.where(std == 0, 1.0, std)
        record = ScalingRecord(kind="standard", mean=mean, std=std)
        x = (x - mean) / std

    n, dim = x.shape
    xa = np.hstack([x, np.ones((n, 1))])
    q_diag = np.einsum("ij,ij->i", xa, xa)

    alpha = np.zeros(n)
    w = np.zeros(dim + 1)
    rng = np.random.default_rng(seed)
    trace: list[float] = []
    sweeps = 0

    for _ in range(max_iter):
        sweeps += 1
        worst = 0.0
        for i in rng.permutation(n):
            g = y[i] * (xa[i] @ w) - 1.0
            a = alpha[i]
            if a <= 0.0:
                pg = min(g, 0.0)
            elif a >= c:
                pg = max(g, 0.0)
            else:
                pg = g
            worst = max(worst, abs(pg))
            if abs(pg) > 1e-12:
                new_a = min(max(a - g / q_diag[i], 0.0), c)
                if new_a != a:
                    w += (new_a - a) * y[i] * xa[i]
                    alpha[i] = new_a
        trace.append(float(alpha.sum() - 0.5 * (w @ w)))
        if worst <= tol:
            break

    return LinearModel(
        w=w[:dim].copy(),
        b=float(w[dim]),
        c=c,
        tol=tol,
        max_iter=max_iter,
        seed=seed,
        n_sweeps=sweeps,
        scaling=record,
        dual_objective_trace=trace,
    )


def score(model: LinearModel, x) -> float:
    """Decision value w . x + b for one feature vector; higher means morph."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != model.w.shape:
        raise ArgumentError(f"feature shape {x.shape} does not match model dim {model.w.shape}")
    return float(model.scaling.apply(x) @ model.w + model.b)


def score_many(model: LinearModel, x) -> np.ndarray:
    """Decision values for a (n, dim) block of feature rows."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.w.shape[0]:
        raise ArgumentError(
            f"feature block shape {x.shape} does not match model dim {model.w.shape[0]}"
        )
    return model.scaling.apply(x) @ model.w + model.b


def save_model(model: LinearModel, path) -> None:
    """Write the model to an MSM1 file (JSON header + float32 payload)."""
    header = {
        "version": MODEL_VERSION,
        "dim": int(model.w.shape[0]),
        "c": model.c,
        "tol": model.tol,
        "max_iter": model.max_iter,
        "seed": model.seed,
        "n_sweeps": model.n_sweeps,
        "scaling": model.scaling.kind,
        "convention": "higher=morph",
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(model.w, dtype="<f4").tobytes())
        fh.write(struct.pack("<f", model.b))
        if model.scaling.kind == "standard":
            fh.write(np.ascontiguousarray(model.scaling.mean, dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(model.scaling.std, dtype="<f4").tobytes())


def load_model(path) -> LinearModel:
    """Read an MSM1 model file back."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 8 or blob[:4] != MODEL_MAGIC:
        raise FormatError(f"{path}: not an MSM1 model file (bad magic)")
    (header_len,) = struct.unpack("<I", blob[4:8])
    if 8 + header_len > len(blob):
        raise CorruptionError(f"{path}: header length exceeds file size")
    try:
        header = json.loads(blob[8 : 8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: header is not valid JSON ({exc})") from exc
    for key in ("version", "dim", "scaling"):
        if key not in header:
            raise SchemaError(f"{path}: model header is missing {key!r}")

    dim = int(header["dim"])
    pos = 8 + header_len
    need = dim * 4 + 4
    if header["scaling"] == "standard":
        need += dim * 8
    if pos + need > len(blob):
        raise CorruptionError(f"{path}: truncated model payload")

    w = np.frombuffer(blob, dtype="<f4", count=dim, offset=pos).astype(np.float64)
    pos += dim * 4
    (b,) = struct.unpack("<f", blob[pos : pos + 4])
    pos += 4
    scaling = ScalingRecord()
    if header["scaling"] == "standard":
        mean = np.frombuffer(blob, dtype="<f4", count=dim, offset=pos).astype(np.float64)
        pos += dim * 4
        std = np.frombuffer(blob, dtype="<f4", count=dim, offset=pos).astype(np.float64)
        scaling = ScalingRecord(kind="standard", mean=mean, std=std)
    elif header["scaling"] != "none":
        raise SchemaError(f"{path}: unknown scaling kind {header['scaling']!r}")

    return LinearModel(
        w=w,
        b=float(b),
        c=float(header.get("c", 1.0)),
        tol=float(header.get("tol", 1e-4)),
        max_iter=int(header.get("max_iter", 1000)),
        seed=int(header.get("seed", 42)),
        n_sweeps=int(header.get("n_sweeps", 0)),
        scaling=scaling,
    )
