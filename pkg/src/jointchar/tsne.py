"""t-SNE: perplexity-calibrated affinities and KL gradient descent.

Hot loops (affinity bisection, exact gradient, Barnes-Hut traversal) are
numba kernels with a fixed loop order, so results are bit-reproducible for
a given seed. ``kl_gradient_exact`` is a plain numpy version of the same
gradient and serves as the reference the kernels are checked against.
"""

import math
import warnings
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from numba import njit
from scipy import sparse
from scipy.spatial.distance import cdist

from .errors import DegenerateRow, InvalidConfig, NonFinite
from .fileio import atomic_write, write_csv
from .linalg import DataMatrix

FLOOR = 1e-12
SIGMA_MIN = 1e-20
SIGMA_MAX = 1e20
BISECTION_STEPS = 50
ENTROPY_TOL = 1e-5  # bits
GAIN_FLOOR = 0.01
BH_AUTO_THRESHOLD = 5000
KL_EVERY = 50


@dataclass(frozen=True)
class TsneConfig:
    perplexity: float = 30.0
    early_exaggeration: float = 12.0
    exaggeration_iters: int = 250
    learning_rate: float = 200.0
    iterations: int = 1000
    momentum_early: float = 0.5
    momentum_late: float = 0.8
    momentum_switch: int = 250
    init_scale: float = 1e-4
    theta: float | None = None  # None: 0.5 when N > 5000, exact otherwise
    seed: int = 0

    def validate(self, n_samples=None):
        if not (self.perplexity > 0 and math.isfinite(self.perplexity)):
            raise InvalidConfig(f"perplexity must be positive, got {self.perplexity}")
        if n_samples is not None and not self.perplexity < n_samples:
            raise InvalidConfig(
                f"perplexity ({self.perplexity}) must be smaller than the sample count ({n_samples})"
            )
        if self.iterations < 1:
            raise InvalidConfig("iterations must be >= 1")
        if not self.learning_rate > 0:
            raise InvalidConfig("learning_rate must be positive")
        if self.theta is not None and not 0.0 <= self.theta <= 1.0:
            raise InvalidConfig(f"theta must lie in [0, 1], got {self.theta}")
        if self.seed < 0:
            raise InvalidConfig("seed must be a non-negative integer")
        if self.init_scale <= 0:
            raise InvalidConfig("init_scale must be positive")

    def resolved_theta(self, n_samples):
        if self.theta is None:
            return 0.5 if n_samples > BH_AUTO_THRESHOLD else 0.0
        return float(self.theta)


@dataclass(frozen=True)
class AffinityMatrix:
    """Symmetric joint probabilities; dense ndarray or scipy CSR."""

    p: object

    def __post_init__(self):
        p = self.p
        total = p.sum()
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"affinities sum to {total}, expected 1")

    @property
    def is_sparse(self):
        return sparse.issparse(self.p)

    @property
    def n(self):
        return self.p.shape[0]


@dataclass
class Embedding:
    y: np.ndarray
    final_kl: float
    config: TsneConfig
    initial_kl: float = float("nan")
    n_iter: int = 0
    theta: float = 0.0
    kl_history: list = field(default_factory=list)
    row_index: np.ndarray = None  # pixel coordinates when embedded from a DataMatrix


# -- affinities ----------------------------------------------------------------

def pairwise_squared_distances(X):
    values = X.values if isinstance(X, DataMatrix) else np.asarray(X, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    D2 = cdist(values, values, "sqeuclidean")
    np.fill_diagonal(D2, 0.0)
    return D2


@njit(cache=True)
def _calibrate_row(d, target_bits, out):
    """Bisection over log(sigma) so the row entropy hits target_bits.

    ``d`` holds squared distances to candidate neighbors only. Returns sigma.
    """
    m = d.shape[0]
    dmin = np.inf
    for j in range(m):
        if d[j] < dmin:
            dmin = d[j]
    lo = math.log(SIGMA_MIN)
    hi = math.log(SIGMA_MAX)
    ln2 = math.log(2.0)
    log_sigma = 0.0
    for step in range(BISECTION_STEPS):
        sigma = math.exp(log_sigma)
        beta = 1.0 / (2.0 * sigma * sigma)
        s = 0.0
        for j in range(m):
            out[j] = math.exp(-beta * (d[j] - dmin))
            s += out[j]
        wd = 0.0
        for j in range(m):
            wd += out[j] * (d[j] - dmin)
        h = (math.log(s) + beta * wd / s) / ln2
        diff = h - target_bits
        if abs(diff) <= ENTROPY_TOL:
            break
        if diff > 0.0:
            hi = log_sigma
        else:
            lo = log_sigma
        log_sigma = 0.5 * (lo + hi)
    # final probabilities at the chosen sigma
    sigma = math.exp(log_sigma)
    beta = 1.0 / (2.0 * sigma * sigma)
    s = 0.0
    for j in range(m):
        out[j] = math.exp(-beta * (d[j] - dmin))
        s += out[j]
    for j in range(m):
        out[j] /= s
    return sigma


@njit(cache=True)
def _calibrate_dense(D2, target_bits, P, sigmas):
    n = D2.shape[0]
    row = np.empty(n - 1)
    buf = np.empty(n - 1)
    for i in range(n):
        k = 0
        for j in range(n):
            if j != i:
                row[k] = D2[i, j]
                k += 1
        sigmas[i] = _calibrate_row(row, target_bits, buf)
        k = 0
        for j in range(n):
            if j == i:
                P[i, j] = 0.0
            else:
                P[i, j] = buf[k]
                k += 1


@njit(cache=True)
def _calibrate_neighbors(D2nn, target_bits, P, sigmas):
    n = D2nn.shape[0]
    buf = np.empty(D2nn.shape[1])
    for i in range(n):
        sigmas[i] = _calibrate_row(D2nn[i], target_bits, buf)
        P[i, :] = buf


def _check_perplexity(perplexity, n):
    if not perplexity > 0:
        raise InvalidConfig(f"perplexity must be positive, got {perplexity}")
    if not perplexity < n:
        raise InvalidConfig(f"perplexity ({perplexity}) must be smaller than N ({n})")


def conditional_affinities(D2, perplexity):
    """Row-wise Gaussian conditionals p_{j|i} with entropy log2(perplexity).

    Returns (P_conditional, sigmas). Rows whose target entropy cannot be
    reached (e.g. equidistant neighbors) end with sigma at a search bound.
    """
    D2 = np.ascontiguousarray(D2, dtype=np.float64)
    n = D2.shape[0]
    _check_perplexity(perplexity, n)
    zero_rows = np.flatnonzero(np.all(D2 == 0.0, axis=1))  # diagonal is zero anyway
    if n > 2 and len(zero_rows):
        raise DegenerateRow(f"row {zero_rows[0]} has zero distance to every other point")
    P = np.empty((n, n))
    sigmas = np.empty(n)
    _calibrate_dense(D2, math.log2(perplexity), P, sigmas)
    return P, sigmas


def nearest_neighbors(X, k, chunk=1024):
    """Exact k nearest neighbors (excluding self), ties broken by index.

    Returns (indices N x k, squared distances N x k).
    """
    values = X.values if isinstance(X, DataMatrix) else np.asarray(X, dtype=np.float64)
    n = values.shape[0]
    idx = np.empty((n, k), dtype=np.int64)
    dist = np.empty((n, k))
    cols = np.arange(n)
    for start in range(0, n, chunk):
        stop = min(n, start + chunk)
        block = cdist(values[start:stop], values, "sqeuclidean")
        block[np.arange(stop - start), np.arange(start, stop)] = np.inf
        part = np.argpartition(block, k, axis=1)[:, : k + 1]
        for r in range(stop - start):
            cand = part[r]
            order = np.lexsort((cols[cand], block[r, cand]))[:k]
            idx[start + r] = cand[order]
            dist[start + r] = block[r, cand[order]]
    return idx, dist


def neighbor_affinities(X, perplexity, n_neighbors=None):
    """Sparse conditionals restricted to the nearest ~3*perplexity points.

    Returns (CSR P_conditional, sigmas).
    """
    values = X.values if isinstance(X, DataMatrix) else np.asarray(X, dtype=np.float64)
    n = values.shape[0]
    _check_perplexity(perplexity, n)
    if n_neighbors is None:
        n_neighbors = min(n - 1, int(3.0 * perplexity + 1))
    idx, d2 = nearest_neighbors(values, n_neighbors)
    P = np.empty_like(d2)
    sigmas = np.empty(n)
    _calibrate_neighbors(np.ascontiguousarray(d2), math.log2(perplexity), P, sigmas)
    indptr = np.arange(0, n * n_neighbors + 1, n_neighbors)
    Pc = sparse.csr_matrix((P.ravel(), idx.ravel(), indptr), shape=(n, n))
    return Pc, sigmas


def symmetrize_affinities(p_conditional):
    """p_ij = (p_{j|i} + p_{i|j}) / 2N, floored at 1e-12 and renormalized."""
    if sparse.issparse(p_conditional):
        P = (p_conditional + p_conditional.T).tocsr()
        P.setdiag(0.0)
        P.eliminate_zeros()
        P.sort_indices()
        P.data = np.maximum(P.data, FLOOR)
        P.data /= P.data.sum()
        return AffinityMatrix(P)
    Pc = np.asarray(p_conditional, dtype=np.float64)
    n = Pc.shape[0]
    P = (Pc + Pc.T) / (2.0 * n)
    P = np.maximum(P, FLOOR)
    np.fill_diagonal(P, 0.0)
    P /= P.sum()
    return AffinityMatrix(P)


def compute_affinities(X, perplexity, sparse_neighbors=False):
    if sparse_neighbors:
        Pc, sigmas = neighbor_affinities(X, perplexity)
    else:
        Pc, sigmas = conditional_affinities(pairwise_squared_distances(X), perplexity)
    return symmetrize_affinities(Pc), sigmas


# -- objective and gradients ------------------------------------------------------

def _dense(P):
    p = P.p if isinstance(P, AffinityMatrix) else P
    return p.toarray() if sparse.issparse(p) else np.asarray(p, dtype=np.float64)


def student_t_affinities(y):
    """q_ij proportional to (1 + |y_i - y_j|^2)^-1. Returns (q, Z)."""
    y = np.asarray(y, dtype=np.float64)
    d2 = pairwise_squared_distances(y)
    num = 1.0 / (1.0 + d2)
    np.fill_diagonal(num, 0.0)
    Z = num.sum()
    return num / Z, Z


def kl_divergence(P, q):
    """KL(P || q) in nats, q floored at 1e-12; zero entries of P are skipped."""
    p = _dense(P)
    q = np.maximum(np.asarray(q, dtype=np.float64), FLOOR)
    mask = p > 0
    return float(max(np.sum(p[mask] * np.log(p[mask] / q[mask])), 0.0))


def kl_gradient_exact(P, y):
    """dKL/dy_i = 4 sum_j (p_ij - q_ij)(1 + |y_i - y_j|^2)^-1 (y_i - y_j)."""
    p = _dense(P)
    y = np.asarray(y, dtype=np.float64)
    d2 = pairwise_squared_distances(y)
    num = 1.0 / (1.0 + d2)
    np.fill_diagonal(num, 0.0)
    q = num / num.sum()
    W = (p - q) * num
    return 4.0 * (W.sum(axis=1)[:, None] * y - W @ y)


@njit(cache=True)
def _exact_grad_kernel(P, y, exaggeration, grad):
    """Fills grad in place for exaggeration * P; returns Z."""
    n = y.shape[0]
    attr = np.zeros((n, 2))
    rep = np.zeros((n, 2))
    Z = 0.0
    for i in range(n):
        yi0 = y[i, 0]
        yi1 = y[i, 1]
        zi = 0.0
        for j in range(i + 1, n):
            dx = yi0 - y[j, 0]
            dy = yi1 - y[j, 1]
            num = 1.0 / (1.0 + dx * dx + dy * dy)
            zi += num
            a_ij = P[i, j] * num
            a_ji = P[j, i] * num
            attr[i, 0] += a_ij * dx
            attr[i, 1] += a_ij * dy
            attr[j, 0] -= a_ji * dx
            attr[j, 1] -= a_ji * dy
            nn = num * num
            rep[i, 0] += nn * dx
            rep[i, 1] += nn * dy
            rep[j, 0] -= nn * dx
            rep[j, 1] -= nn * dy
        Z += 2.0 * zi
    for i in range(n):
        grad[i, 0] = 4.0 * (exaggeration * attr[i, 0] - rep[i, 0] / Z)
        grad[i, 1] = 4.0 * (exaggeration * attr[i, 1] - rep[i, 1] / Z)
    return Z


@njit(cache=True)
def _exact_kl_kernel(P, y):
    n = y.shape[0]
    Z = 0.0
    for i in range(n):
        zi = 0.0
        for j in range(i + 1, n):
            dx = y[i, 0] - y[j, 0]
            dy = y[i, 1] - y[j, 1]
            zi += 1.0 / (1.0 + dx * dx + dy * dy)
        Z += 2.0 * zi
    kl = 0.0
    for i in range(n):
        for j in range(n):
            p = P[i, j]
            if j == i or p <= 0.0:
                continue
            dx = y[i, 0] - y[j, 0]
            dy = y[i, 1] - y[j, 1]
            q = 1.0 / (1.0 + dx * dx + dy * dy) / Z
            if q < FLOOR:
                q = FLOOR
            kl += p * math.log(p / q)
    return max(kl, 0.0)


# -- Barnes-Hut --------------------------------------------------------------------

# node field layout in the float table
_CX, _CY, _HW, _SX, _SY, _PX, _PY = range(7)
_MAX_DEPTH = 60


@njit(cache=True)
def _build_quadtree(y, fnode, inode, capacity):
    """Insert all points. fnode[k] = (cx, cy, half width, sum x, sum y,
    leaf point x, leaf point y); inode[k] = (count, child0..child3, is_leaf).

    Returns the node count, or -1 when ``capacity`` is exceeded.
    """
    n = y.shape[0]
    xmin = xmax = y[0, 0]
    ymin = ymax = y[0, 1]
    for i in range(n):
        xmin = min(xmin, y[i, 0])
        xmax = max(xmax, y[i, 0])
        ymin = min(ymin, y[i, 1])
        ymax = max(ymax, y[i, 1])
    hw = 0.5 * max(xmax - xmin, ymax - ymin)
    hw = hw * (1.0 + 1e-9) + 1e-12
    fnode[0, _CX] = 0.5 * (xmin + xmax)
    fnode[0, _CY] = 0.5 * (ymin + ymax)
    fnode[0, _HW] = hw
    fnode[0, _SX] = 0.0
    fnode[0, _SY] = 0.0
    inode[0, :] = 0
    inode[0, 1:5] = -1
    inode[0, 5] = 1
    used = 1
    for i in range(n):
        px = y[i, 0]
        py = y[i, 1]
        node = 0
        depth = 0
        while True:
            count = inode[node, 0]
            if inode[node, 5] == 1:
                if count == 0:
                    fnode[node, _PX] = px
                    fnode[node, _PY] = py
                    inode[node, 0] = 1
                    fnode[node, _SX] = px
                    fnode[node, _SY] = py
                    break
                same = fnode[node, _PX] == px and fnode[node, _PY] == py
                if same or depth >= _MAX_DEPTH:
                    # coincident points share one leaf
                    inode[node, 0] = count + 1
                    fnode[node, _SX] += px
                    fnode[node, _SY] += py
                    break
                # split: push the resident point(s) one level down
                if used + 4 > capacity:
                    return -1
                ox = fnode[node, _PX]
                oy = fnode[node, _PY]
                q = (1 if ox >= fnode[node, _CX] else 0) + (2 if oy >= fnode[node, _CY] else 0)
                child = used
                used += 1
                h = 0.5 * fnode[node, _HW]
                fnode[child, _CX] = fnode[node, _CX] + (h if q & 1 else -h)
                fnode[child, _CY] = fnode[node, _CY] + (h if q & 2 else -h)
                fnode[child, _HW] = h
                fnode[child, _SX] = fnode[node, _SX]
                fnode[child, _SY] = fnode[node, _SY]
                fnode[child, _PX] = ox
                fnode[child, _PY] = oy
                inode[child, 0] = count
                inode[child, 1:5] = -1
                inode[child, 5] = 1
                inode[node, 1:5] = -1
                inode[node, 1 + q] = child
                inode[node, 5] = 0
                continue
            # internal node: accumulate and descend
            inode[node, 0] = count + 1
            fnode[node, _SX] += px
            fnode[node, _SY] += py
            q = (1 if px >= fnode[node, _CX] else 0) + (2 if py >= fnode[node, _CY] else 0)
            child = inode[node, 1 + q]
            if child < 0:
                if used + 1 > capacity:
                    return -1
                child = used
                used += 1
                h = 0.5 * fnode[node, _HW]
                fnode[child, _CX] = fnode[node, _CX] + (h if q & 1 else -h)
                fnode[child, _CY] = fnode[node, _CY] + (h if q & 2 else -h)
                fnode[child, _HW] = h
                fnode[child, _SX] = 0.0
                fnode[child, _SY] = 0.0
                inode[child, 0] = 0
                inode[child, 1:5] = -1
                inode[child, 5] = 1
                inode[node, 1 + q] = child
            node = child
            depth += 1
    return used


@njit(cache=True)
def _bh_repulsion(y, fnode, inode, theta, rep, zrow, counts):
    """Approximate sum_j num_ij^2 (y_i - y_j) and sum_j num_ij for each i.

    ``counts[i]`` receives the number of cell interactions used for point i.
    """
    n = y.shape[0]
    stack = np.empty(4 * _MAX_DEPTH + 8, dtype=np.int64)
    for i in range(n):
        px = y[i, 0]
        py = y[i, 1]
        rx = 0.0
        ry = 0.0
        z = 0.0
        used = 0
        top = 0
        stack[top] = 0
        top += 1
        while top > 0:
            top -= 1
            node = stack[top]
            cnt = inode[node, 0]
            if cnt == 0:
                continue
            cx = fnode[node, _SX] / cnt
            cy = fnode[node, _SY] / cnt
            dx = px - cx
            dy = py - cy
            d2 = dx * dx + dy * dy
            if inode[node, 5] == 1:
                if fnode[node, _PX] == px and fnode[node, _PY] == py:
                    # leaf holding point i (and exact duplicates)
                    z += cnt - 1.0
                    continue
                dx = px - fnode[node, _PX]
                dy = py - fnode[node, _PY]
                num = 1.0 / (1.0 + dx * dx + dy * dy)
                z += cnt * num
                rx += cnt * num * num * dx
                ry += cnt * num * num * dy
                used += 1
                continue
            hw = fnode[node, _HW]
            inside = abs(px - fnode[node, _CX]) <= hw and abs(py - fnode[node, _CY]) <= hw
            if not inside and d2 > 0.0 and 2.0 * hw < theta * math.sqrt(d2):
                num = 1.0 / (1.0 + d2)
                z += cnt * num
                rx += cnt * num * num * dx
                ry += cnt * num * num * dy
                used += 1
                continue
            for c in range(4):
                child = inode[node, 1 + c]
                if child >= 0:
                    stack[top] = child
                    top += 1
        rep[i, 0] = rx
        rep[i, 1] = ry
        zrow[i] = z
        counts[i] = used


@njit(cache=True)
def _sparse_attraction(indptr, indices, data, y, attr):
    n = y.shape[0]
    for i in range(n):
        ax = 0.0
        ay = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            j = indices[k]
            dx = y[i, 0] - y[j, 0]
            dy = y[i, 1] - y[j, 1]
            w = data[k] / (1.0 + dx * dx + dy * dy)
            ax += w * dx
            ay += w * dy
        attr[i, 0] = ax
        attr[i, 1] = ay


@njit(cache=True)
def _sparse_kl(indptr, indices, data, y, Z):
    n = y.shape[0]
    kl = 0.0
    for i in range(n):
        for k in range(indptr[i], indptr[i + 1]):
            j = indices[k]
            p = data[k]
            if p <= 0.0:
                continue
            dx = y[i, 0] - y[j, 0]
            dy = y[i, 1] - y[j, 1]
            q = 1.0 / (1.0 + dx * dx + dy * dy) / Z
            if q < FLOOR:
                q = FLOOR
            kl += p * math.log(p / q)
    return max(kl, 0.0)


class _Quadtree:
    def __init__(self, y):
        y = np.ascontiguousarray(y, dtype=np.float64)
        capacity = 8 * len(y) + 16
        while True:
            fnode = np.zeros((capacity, 7))
            inode = np.zeros((capacity, 6), dtype=np.int64)
            used = _build_quadtree(y, fnode, inode, capacity)
            if used >= 0:
                break
            capacity *= 2
        self.y = y
        self.fnode = fnode[:used]
        self.inode = inode[:used]

    def repulsion(self, theta):
        n = len(self.y)
        rep = np.empty((n, 2))
        zrow = np.empty(n)
        counts = np.empty(n, dtype=np.int64)
        _bh_repulsion(self.y, self.fnode, self.inode, theta, rep, zrow, counts)
        return rep, zrow, counts


def _as_csr(P):
    p = P.p if isinstance(P, AffinityMatrix) else P
    if not sparse.issparse(p):
        p = sparse.csr_matrix(np.asarray(p, dtype=np.float64))
    p = p.tocsr()
    p.sort_indices()
    return p


def _bh_gradient(csr, y, theta, exaggeration=1.0):
    tree = _Quadtree(y)
    rep, zrow, _ = tree.repulsion(theta)
    Z = float(np.sum(zrow))
    attr = np.empty_like(tree.y)
    _sparse_attraction(csr.indptr, csr.indices, csr.data, tree.y, attr)
    return 4.0 * (exaggeration * attr - rep / Z), Z


def kl_gradient_bh(P, y, theta=0.5):
    """Barnes-Hut gradient: exact sparse attraction, quadtree repulsion.

    A cell is summarized by its center of mass when its side length over
    the distance to that center is below ``theta``; theta = 0 reduces to the
    exact gradient.
    """
    if not 0.0 <= theta <= 1.0:
        raise InvalidConfig(f"theta must lie in [0, 1], got {theta}")
    grad, _ = _bh_gradient(_as_csr(P), np.asarray(y, dtype=np.float64), theta)
    return grad


def bh_interaction_counts(y, theta):
    """Number of cell interactions each point uses under Barnes-Hut."""
    _, _, counts = _Quadtree(y).repulsion(theta)
    return counts


# -- optimizer ---------------------------------------------------------------------

class _ExactObjective:
    def __init__(self, P):
        self.P = np.ascontiguousarray(_dense(P))

    def gradient(self, y, exaggeration):
        grad = np.empty_like(y)
        _exact_grad_kernel(self.P, y, exaggeration, grad)
        return grad

    def kl(self, y):
        return _exact_kl_kernel(self.P, y)


class _BarnesHutObjective:
    def __init__(self, P, theta):
        self.csr = _as_csr(P)
        self.theta = theta

    def gradient(self, y, exaggeration):
        grad, _ = _bh_gradient(self.csr, y, self.theta, exaggeration)
        return grad

    def kl(self, y):
        _, zrow, _ = _Quadtree(y).repulsion(self.theta)
        return _sparse_kl(self.csr.indptr, self.csr.indices, self.csr.data, y, float(np.sum(zrow)))


def initial_embedding(n, config):
    rng = np.random.default_rng(config.seed)
    return config.init_scale * rng.standard_normal((n, 2))


def optimize_embedding(P, config, theta=0.0, y0=None, callback=None):
    """Gradient descent with momentum and per-coordinate gains."""
    n = P.n if isinstance(P, AffinityMatrix) else P.shape[0]
    objective = _ExactObjective(P) if theta == 0.0 else _BarnesHutObjective(P, theta)
    y = initial_embedding(n, config) if y0 is None else np.array(y0, dtype=np.float64)
    update = np.zeros_like(y)
    gains = np.ones_like(y)
    initial_kl = objective.kl(y)
    history = [(0, initial_kl)]
    for it in range(config.iterations):
        if it == config.exaggeration_iters:
            # fresh descent state once the exaggerated phase ends; gains grown
            # under the exaggerated attraction otherwise fling points far out
            update = np.zeros_like(y)
            gains = np.ones_like(y)
        exaggeration = config.early_exaggeration if it < config.exaggeration_iters else 1.0
        momentum = config.momentum_early if it < config.momentum_switch else config.momentum_late
        grad = objective.gradient(y, exaggeration)
        flipped = update * grad < 0.0
        gains = np.where(flipped, gains + 0.2, gains * 0.8)
        np.maximum(gains, GAIN_FLOOR, out=gains)
        update = momentum * update - config.learning_rate * gains * grad
        y = y + update
        if not np.all(np.isfinite(y)):
            raise NonFinite(f"embedding became non-finite at iteration {it + 1}", iteration=it + 1)
        if (it + 1) % KL_EVERY == 0 and it + 1 < config.iterations:
            history.append((it + 1, objective.kl(y)))
        if callback is not None:
            callback(it + 1, y)
    final_kl = objective.kl(y)
    history.append((config.iterations, final_kl))
    return Embedding(y=y, final_kl=final_kl, config=config, initial_kl=initial_kl,
                     n_iter=config.iterations, theta=theta, kl_history=history)


def run_tsne(X, config=None, callback=None):
    """Embed the rows of X in 2-D."""
    config = config or TsneConfig()
    values = X.values if isinstance(X, DataMatrix) else np.asarray(X, dtype=np.float64)
    n = values.shape[0]
    config.validate(n)
    if n < 2 * config.perplexity:
        warnings.warn(
            f"N={n} is below 2 * perplexity ({config.perplexity}); neighborhoods span most of the data",
            stacklevel=2,
        )
    theta = config.resolved_theta(n)
    P, _ = compute_affinities(values, config.perplexity, sparse_neighbors=theta > 0.0)
    emb = optimize_embedding(P, config, theta=theta, callback=callback)
    if isinstance(X, DataMatrix):
        emb.row_index = X.row_index
    return emb


# -- output ------------------------------------------------------------------------

def write_embedding_csv(path, row_index, embedding):
    y = embedding.y if isinstance(embedding, Embedding) else np.asarray(embedding)
    rows = ([int(r), int(c), float(a), float(b)] for (r, c), (a, b) in zip(row_index, y))
    write_csv(path, ["pixel_row", "pixel_col", "tsne1", "tsne2"], rows)


def embedding_metadata(embedding, extra=None):
    meta = {f"config.{k}": v for k, v in asdict(embedding.config).items()}
    meta.update(
        seed=embedding.config.seed,
        perplexity=embedding.config.perplexity,
        theta=embedding.theta,
        iterations=embedding.n_iter,
        initial_kl=embedding.initial_kl,
        final_kl=embedding.final_kl,
    )
    if extra:
        meta.update(extra)
    return meta


def write_metadata(path, meta):
    lines = []
    for key, value in meta.items():
        if isinstance(value, float):
            value = f"{value:.9g}"
        lines.append(f"{key}={value}")
    atomic_write(path, "\n".join(lines) + "\n")


def read_metadata(path):
    meta = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line or "=" not in line:
                continue
            key, value = line.split("=", 1)
            meta[key] = value
    return meta


def with_seed(config, seed):
    return replace(config, seed=seed)
