"""Dense symmetric linear algebra and PCA.

The eigen-solver is a cyclic Jacobi iteration; PCA is covariance based by
default with an optional per-column standardization.
"""

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import (
    DegenerateData,
    DimensionMismatch,
    EmptyMatrix,
    NoConvergence,
    NotSymmetric,
)
from .fileio import read_csv, write_csv

JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100


@dataclass(frozen=True)
class DataMatrix:
    """N samples x D features with a (pixel_row, pixel_col) index per row."""

    values: np.ndarray
    row_index: np.ndarray = field(default=None)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2:
            raise DimensionMismatch(f"expected a 2-D matrix, got shape {values.shape}")
        if values.shape[0] < 2:
            raise EmptyMatrix(f"need at least 2 rows, got {values.shape[0]}")
        if values.shape[1] < 1:
            raise EmptyMatrix("need at least one column")
        if not np.all(np.isfinite(values)):
            raise DimensionMismatch("matrix contains non-finite values")
        if self.row_index is None:
            idx = np.column_stack([np.arange(values.shape[0]), np.zeros(values.shape[0], dtype=np.int64)])
        else:
            idx = np.asarray(self.row_index, dtype=np.int64)
            if idx.shape != (values.shape[0], 2):
                raise DimensionMismatch(
                    f"row_index shape {idx.shape} does not match {values.shape[0]} rows"
                )
            if len(np.unique(idx, axis=0)) != len(idx):
                raise DimensionMismatch("row_index entries must be unique")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "row_index", idx)

    @property
    def n_samples(self):
        return self.values.shape[0]

    @property
    def n_features(self):
        return self.values.shape[1]

    def take(self, rows):
        rows = np.asarray(rows)
        return DataMatrix(self.values[rows], self.row_index[rows])


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray
    eigenvalues: np.ndarray
    explained_variance_ratio: np.ndarray
    scale: np.ndarray = None

    def __post_init__(self):
        if self.scale is None:
            object.__setattr__(self, "scale", np.ones_like(self.mean))

    @property
    def n_components(self):
        return self.components.shape[0]

    @property
    def n_features(self):
        return self.components.shape[1]


def _as_values(X):
    return X.values if isinstance(X, DataMatrix) else np.asarray(X, dtype=np.float64)


def column_mean_center(X):
    """Subtract the column means. Returns (centered, mean)."""
    values = _as_values(X)
    if values.ndim != 2 or values.shape[0] < 2:
        raise EmptyMatrix("mean centering needs at least 2 rows")
    mean = values.mean(axis=0)
    centered = values - mean
    if isinstance(X, DataMatrix):
        centered = DataMatrix(centered, X.row_index)
    return centered, mean


def covariance_matrix(Xc):
    """Sample covariance (divisor N-1) of already centered data."""
    values = _as_values(Xc)
    n = values.shape[0]
    if n < 2:
        raise EmptyMatrix("covariance needs at least 2 rows")
    S = values.T @ values / (n - 1)
    # symmetrize exactly; the BLAS product can differ in the last ulp
    return 0.5 * (S + S.T)


@njit(cache=True)
def _jacobi_sweeps(a, v, tol, max_sweeps):
    n = a.shape[0]
    for sweep in range(max_sweeps):
        off = 0.0
        for i in range(n):
            for j in range(n):
                if i != j:
                    off += a[i, j] * a[i, j]
        off = np.sqrt(off)
        if off <= tol:
            return sweep, off
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = 1.0 / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta < 0.0:
                    t = -t
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                for k in range(n):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = c * akp - s * akq
                    a[k, q] = s * akp + c * akq
                for k in range(n):
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = c * apk - s * aqk
                    a[q, k] = s * apk + c * aqk
                a[p, q] = 0.0
                a[q, p] = 0.0
                for k in range(n):
                    vkp = v[k, p]
                    vkq = v[k, q]
                    v[k, p] = c * vkp - s * vkq
                    v[k, q] = s * vkp + c * vkq
    off = 0.0
    for i in range(n):
        for j in range(n):
            if i != j:
                off += a[i, j] * a[i, j]
    return -1, np.sqrt(off)


def _orient(vectors):
    """Flip each column so its largest-magnitude entry is positive."""
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def jacobi_eigendecomposition(S, tol=JACOBI_TOL, max_sweeps=JACOBI_MAX_SWEEPS):
    """Eigen-decompose a symmetric matrix with cyclic Jacobi rotations.

    Returns eigenvalues in descending order and the matching eigenvectors as
    columns. Equal eigenvalues keep their diagonal order, and every
    eigenvector is oriented so its largest-magnitude entry is positive.

    Raises NotSymmetric when S deviates from its transpose by more than
    1e-9 relative, and NoConvergence when the off-diagonal norm is still
    above ``tol * ||S||_F`` after ``max_sweeps`` sweeps.
    """
    S = np.array(S, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise NotSymmetric(f"expected a square matrix, got shape {S.shape}")
    scale = np.max(np.abs(S)) if S.size else 0.0
    if np.max(np.abs(S - S.T), initial=0.0) > 1e-9 * max(scale, np.finfo(float).tiny):
        raise NotSymmetric("matrix is not symmetric within 1e-9 relative")
    a = 0.5 * (S + S.T)
    n = a.shape[0]
    v = np.eye(n)
    fro = np.linalg.norm(a)
    sweeps, off = _jacobi_sweeps(a, v, tol * fro, max_sweeps)
    if sweeps < 0:
        raise NoConvergence(
            f"Jacobi did not converge in {max_sweeps} sweeps (off-diagonal norm {off:.3e})",
            residual=off,
        )
    vals = np.diag(a).copy()
    order = np.argsort(-vals, kind="stable")
    return vals[order], _orient(v[:, order])


def fit_pca(X, k=None, standardize=False):
    """Fit PCA on the covariance (or correlation, if standardize) of X."""
    values = _as_values(X)
    if values.ndim != 2 or values.shape[0] < 2:
        raise EmptyMatrix("PCA needs at least 2 rows")
    d = values.shape[1]
    if k is None:
        k = d
    if not 1 <= k <= d:
        raise DimensionMismatch(f"k must be in [1, {d}], got {k}")
    centered, mean = column_mean_center(values)
    scale = np.ones(d)
    if standardize:
        sd = centered.std(axis=0, ddof=1)
        scale = np.where(sd > 0, sd, 1.0)
        centered = centered / scale
    S = covariance_matrix(centered)
    vals, vecs = jacobi_eigendecomposition(S)
    vals = np.where(vals < 0, 0.0, vals)
    total = vals.sum()
    if not total > 0:
        raise DegenerateData("total variance is zero; all rows are identical")
    ratios = vals / total
    return PcaModel(
        mean=mean,
        components=vecs[:, :k].T.copy(),
        eigenvalues=vals[:k].copy(),
        explained_variance_ratio=ratios[:k].copy(),
        scale=scale,
    )


def project(model, X):
    """PC scores, ``((x - mean) / scale) . component_j`` for each row."""
    values = _as_values(X)
    if values.ndim != 2 or values.shape[1] != model.n_features:
        raise DimensionMismatch(
            f"data has {values.shape[-1]} columns, model expects {model.n_features}"
        )
    return ((values - model.mean) / model.scale) @ model.components.T


def reconstruct(model, scores):
    return model.mean + (np.asarray(scores) @ model.components) * model.scale


def explained_variance_ratio(model):
    return model.explained_variance_ratio.copy()


# -- serialization ---------------------------------------------------------

def write_model_csv(path, model):
    d = model.n_features
    header = ["component_index", "eigenvalue", "ratio"] + [f"v_{i + 1}" for i in range(d)]
    rows = []
    for j in range(model.n_components):
        rows.append([j + 1, float(model.eigenvalues[j]), float(model.explained_variance_ratio[j])]
                    + [float(x) for x in model.components[j]])
    if np.any(model.scale != 1.0):
        rows.append(["scale", "", ""] + [float(x) for x in model.scale])
    rows.append(["mean", "", ""] + [float(x) for x in model.mean])
    write_csv(path, header, rows)


def read_model_csv(path):
    header, rows = read_csv(path)
    comps, vals, ratios = [], [], []
    mean = scale = None
    for row in rows:
        tag = row[0].strip()
        vec = np.array([float(x) for x in row[3:]])
        if tag == "mean":
            mean = vec
        elif tag == "scale":
            scale = vec
        else:
            vals.append(float(row[1]))
            ratios.append(float(row[2]))
            comps.append(vec)
    if mean is None:
        raise DimensionMismatch(f"{path}: model CSV has no mean row")
    return PcaModel(mean=mean, components=np.array(comps), eigenvalues=np.array(vals),
                    explained_variance_ratio=np.array(ratios), scale=scale)


def write_scores_csv(path, row_index, scores):
    k = scores.shape[1]
    header = ["pixel_row", "pixel_col"] + [f"pc{j + 1}" for j in range(k)]
    rows = ([int(r), int(c)] + [float(x) for x in s] for (r, c), s in zip(row_index, scores))
    write_csv(path, header, rows)
