"""Exact t-SNE for qualitative feature-space inspection.

This is the O(n^2) formulation: per-point gaussian bandwidths calibrated by
bisection to a target perplexity, symmetrized input affinities

    P_ij = (P(j|i) + P(i|j)) / (2n)

a Student-t (one degree of freedom) low-dimensional kernel

    q~_ij = 1 / (1 + ||y_i - y_j||^2),   Q_ij = q~_ij / sum q~

and gradient descent with momentum on KL(P || Q):

    dKL/dy_i = 4 sum_j (P_ij - Q_ij) q~_ij (y_i - y_j)

Early exaggeration multiplies P for the first phase.  Everything runs in
float64 and is deterministic for a fixed seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, NumericError

_Q_FLOOR = 1e-12


@dataclass
class AffinityMatrix:
    """Symmetrized input affinities and the perplexity they were fit to."""

    p: np.ndarray
    perplexity: float
    row_perplexities: np.ndarray | None = None


def _squared_distances(x: np.ndarray) -> np.ndarray:
    sq = np.einsum("ij,ij->i", x, x)
    d = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.maximum(d, 0.0, out=d)
    np.fill_diagonal(d, 0.0)
    return d


def _row_affinities(dist_row: np.ndarray, beta: float) -> tuple[np.ndarray, float]:
    """Conditional affinities and perplexity (2^entropy) for one row.

    ``dist_row`` excludes the diagonal entry.  Numerically shifted so the
    largest exponent is zero.
    """
    logits = -beta * dist_row
    logits -= logits.max()
    p = np.exp(logits)
    total = p.sum()
    p /= total
    nz = p > 0
    entropy = -np.sum(p[nz] * np.log2(p[nz]))
    return p, float(2.0**entropy)


def pairwise_affinities(
    x,
    perplexity: float = 30.0,
    tol: float = 1e-4,
    max_bisect: int = 200,
) -> AffinityMatrix:
    """Fit per-row bandwidths by bisection and symmetrize.

    Each row's gaussian precision beta is adjusted until the realized
    perplexity matches the target within ``tol`` (or the iteration cap is
    hit).  Requires 2 <= perplexity < n.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ArgumentError(f"expected (n, dim) features, got shape {x.shape}")
    n = x.shape[0]
    if n < 3:
        raise ArgumentError(f"t-SNE needs at least 3 points, got {n}")
    if not 2.0 <= perplexity < n:
        raise ArgumentError(
            f"perplexity must lie in [2, n_points), got {perplexity} with n={n}"
        )

    dist = _squared_distances(x)
    p_cond = np.zeros((n, n))
    realized = np.zeros(n)
    mask = ~np.eye(n, dtype=bool)
    for i in range(n):
        row = dist[i][mask[i]]
        beta, lo, hi = 1.0, 0.0, np.inf
        p_row, perp = _row_affinities(row, beta)
        for _ in range(max_bisect):
            if abs(perp - perplexity) <= tol:
                break
            if perp > perplexity:  # too flat: sharpen
                lo = beta
                beta = beta * 2.0 if hi == np.inf else (beta + hi) / 2.0
            else:
                hi = beta
                beta = beta / 2.0 if lo == 0.0 else (beta + lo) / 2.0
            p_row, perp = _row_affinities(row, beta)
        p_cond[i][mask[i]] = p_row
        realized[i] = perp

    p = (p_cond + p_cond.T) / (2.0 * n)
    return AffinityMatrix(p=p, perplexity=perplexity, row_perplexities=realized)


def _student_t_kernel(y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unnormalized and normalized Student-t affinities of an embedding."""
    num = 1.0 / (1.0 + _squared_distances(y))
    np.fill_diagonal(num, 0.0)
    q = num / num.sum()
    return num, q


def kl_divergence(p: np.ndarray, y: np.ndarray) -> float:
    """KL(P || Q(y)) with zero P entries contributing zero."""
    _, q = _student_t_kernel(np.asarray(y, dtype=np.float64))
    mask = p > 0
    return float(np.sum(p[mask] * np.log(p[mask] / np.maximum(q[mask], _Q_FLOOR))))


def kl_gradient(p: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Exact gradient of KL(P || Q) with respect to the embedding rows."""
    y = np.asarray(y, dtype=np.float64)
    num, q = _student_t_kernel(y)
    mult = (p - q) * num
    diff = y[:, None, :] - y[None, :, :]
    return 4.0 * np.einsum("ij,ijk->ik", mult, diff)


def tsne_embed(
    x,
    out_dims: int = 2,
    perplexity: float = 30.0,
    n_iter: int = 1000,
    learning_rate: float = 200.0,
    early_exaggeration: float = 12.0,
    exaggeration_iters: int = 250,
    momentum_start: float = 0.5,
    momentum_final: float = 0.8,
    momentum_switch: int = 250,
    seed: int = 42,
) -> tuple[np.ndarray, list[float]]:
    """Embed feature rows into ``out_dims`` dimensions.

    Returns the (n, out_dims) embedding and the per-iteration trace of the
    unexaggerated KL divergence.  The embedding starts from seeded gaussian
    noise of scale 1e-4 and is re-centered every step; momentum switches
    from its start to its final value at ``momentum_switch``.
    """
    x = np.asarray(x, dtype=np.float64)
    affinities = pairwise_affinities(x, perplexity=perplexity)
    p = affinities.p
    n = p.shape[0]

    rng = np.random.default_rng(seed)
    y = rng.normal(0.0, 1e-4, size=(n, out_dims))
    velocity = np.zeros_like(y)
    trace: list[float] = []

    # overflow inside the loop is handled by the explicit divergence check
    with np.errstate(over="ignore", invalid="ignore"):
        for it in range(n_iter):
            p_eff = p * early_exaggeration if it < exaggeration_iters else p
            num, q = _student_t_kernel(y)
            mult = (p_eff - q) * num
            diff = y[:, None, :] - y[None, :, :]
            grad = 4.0 * np.einsum("ij,ijk->ik", mult, diff)

            momentum = momentum_start if it < momentum_switch else momentum_final
            velocity = momentum * velocity - learning_rate * grad
            y = y + velocity
            y = y - y.mean(axis=0)

            mask = p > 0
            kl = float(np.sum(p[mask] * np.log(p[mask] / np.maximum(q[mask], _Q_FLOOR))))
            trace.append(kl)
            if not np.isfinite(kl) or not np.isfinite(y).all():
                raise NumericError(f"t-SNE diverged at iteration {it}")

    return y, trace


def pca_reduce(x, dims: int = 50) -> np.ndarray:
    """Deterministic PCA projection used as an optional t-SNE front end.

    Centers the data and projects onto the top right-singular vectors; each
    component's sign is fixed by making its largest-magnitude coordinate
    positive.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ArgumentError(f"expected (n, dim) features, got shape {x.shape}")
    dims = min(dims, x.shape[0], x.shape[1])
    centered = x - x.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    components = vt[:dims]
    signs = np.sign(components[np.arange(dims), np.abs(components).argmax(axis=1)])
    signs[signs == 0] = 1.0
    return centered @ (components * signs[:, None]).T


def export_layout_csv(ids: list[str], y: np.ndarray, groups: list[str], path) -> None:
    """Write an embedding as CSV columns image_id,group,x,y."""
    import csv

    y = np.asarray(y)
    if not (len(ids) == y.shape[0] == len(groups)):
        raise ArgumentError("ids, embedding rows and groups must align")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "group", "x", "y"])
        for ident, group, row in zip(ids, groups, y):
            writer.writerow([ident, group, repr(float(row[0])), repr(float(row[1]))])


def load_layout_csv(path) -> tuple[list[str], np.ndarray, list[str]]:
    """Read a layout CSV back as (ids, (n, 2) array, groups)."""
    import csv

    from .errors import SchemaError

    ids: list[str] = []
    groups: list[str] = []
    rows: list[tuple[float, float]] = []
    with open(path, "r", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["image_id", "group", "x", "y"]:
            raise SchemaError(f"{path}: expected header image_id,group,x,y, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 4:
                raise SchemaError(f"{path}:{lineno}: expected 4 columns")
            try:
                xy = (float(row[2]), float(row[3]))
            except ValueError as exc:
                raise SchemaError(f"{path}:{lineno}: bad coordinates") from exc
            ids.append(row[0])
            groups.append(row[1])
            rows.append(xy)
    return ids, np.array(rows, dtype=np.float64), groups
