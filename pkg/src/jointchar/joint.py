"""Joint PC + t-SNE feature space.

A JointSpace pairs each sample's leading PC scores with its t-SNE
coordinates so regions of interest can be drawn in any two of those axes.
Members of a region are then summarized spectrally (mean, covariance,
pairwise differences, transformed divergence) and mapped back to image
coordinates.
"""

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .errors import (
    CoordinateOutOfBounds,
    EmptyGroup,
    EmptyRoi,
    GridMismatch,
    InvalidRoi,
    LengthMismatch,
    RowOrderMismatch,
    SingularCovariance,
    UnknownAxis,
)
from .fileio import read_csv, write_csv
from .linalg import DataMatrix
from .tsne import TsneConfig, run_tsne

REGULARIZATION = 1e-6
MAX_CONDITION = 1e14


@dataclass(frozen=True)
class JointSpace:
    row_index: np.ndarray  # N x 2 (pixel_row, pixel_col)
    pc_scores: np.ndarray  # N x k
    tsne: np.ndarray  # N x 2

    @property
    def n(self):
        return len(self.row_index)

    @property
    def k(self):
        return self.pc_scores.shape[1]

    @property
    def axes(self):
        return [f"PC{j + 1}" for j in range(self.k)] + ["TSNE1", "TSNE2"]

    def axis(self, name):
        key = name.strip().upper()
        axes = self.axes
        if key not in axes:
            raise UnknownAxis(f"unknown axis {name!r}; available: {', '.join(axes)}")
        j = axes.index(key)
        return self.pc_scores[:, j] if j < self.k else self.tsne[:, j - self.k]

    def matrix(self):
        return np.column_stack([self.pc_scores, self.tsne])


def build_joint_space(scores, embedding, row_index, embedding_index=None):
    """Join PC scores and t-SNE coordinates row by row.

    ``embedding`` may be an Embedding or an N x 2 array. The embedding's own
    row index (``embedding.row_index`` or ``embedding_index``) must match
    ``row_index`` exactly; rows are never reordered.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim == 1:
        scores = scores[:, None]
    y = np.asarray(getattr(embedding, "y", embedding), dtype=np.float64)
    row_index = np.asarray(row_index, dtype=np.int64)
    if embedding_index is None:
        embedding_index = getattr(embedding, "row_index", None)
    if not (len(scores) == len(y) == len(row_index)):
        raise LengthMismatch(
            f"scores ({len(scores)}), embedding ({len(y)}) and row index ({len(row_index)}) differ in length"
        )
    if y.shape[1] != 2:
        raise LengthMismatch("embedding must have two columns")
    if embedding_index is not None:
        embedding_index = np.asarray(embedding_index, dtype=np.int64)
        if embedding_index.shape != row_index.shape or not np.array_equal(embedding_index, row_index):
            bad = np.flatnonzero(np.any(embedding_index != row_index, axis=1)) if embedding_index.shape == row_index.shape else [0]
            raise RowOrderMismatch(f"embedding rows are not in score order (first mismatch at row {bad[0]})")
    if len(np.unique(row_index, axis=0)) != len(row_index):
        raise RowOrderMismatch("pixel coordinates must be unique")
    return JointSpace(row_index=row_index, pc_scores=scores, tsne=y)


def write_joint_csv(path, space):
    header = ["pixel_row", "pixel_col"] + [f"pc{j + 1}" for j in range(space.k)] + ["tsne1", "tsne2"]
    rows = ([int(r), int(c)] + [float(v) for v in s] + [float(a), float(b)]
            for (r, c), s, (a, b) in zip(space.row_index, space.pc_scores, space.tsne))
    write_csv(path, header, rows)


def read_joint_csv(path):
    header, rows = read_csv(path)
    cols = [h.lower() for h in header]
    data = np.array([[float(x) for x in r] for r in rows]) if rows else np.zeros((0, len(cols)))
    pcs = [i for i, c in enumerate(cols) if c.startswith("pc")]
    t1, t2 = cols.index("tsne1"), cols.index("tsne2")
    idx = data[:, [cols.index("pixel_row"), cols.index("pixel_col")]].astype(np.int64)
    return JointSpace(row_index=idx, pc_scores=data[:, pcs], tsne=data[:, [t1, t2]])


# -- regions of interest ----------------------------------------------------------

def _segments_intersect(p1, p2, p3, p4):
    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        return 0 if v == 0 else (1 if v > 0 else -1)

    def on_seg(a, b, c):
        return min(a[0], b[0]) <= c[0] <= max(a[0], b[0]) and min(a[1], b[1]) <= c[1] <= max(a[1], b[1])

    o1, o2 = orient(p1, p2, p3), orient(p1, p2, p4)
    o3, o4 = orient(p3, p4, p1), orient(p3, p4, p2)
    if o1 != o2 and o3 != o4:
        return True
    return ((o1 == 0 and on_seg(p1, p2, p3)) or (o2 == 0 and on_seg(p1, p2, p4))
            or (o3 == 0 and on_seg(p3, p4, p1)) or (o4 == 0 and on_seg(p3, p4, p2)))


def is_simple_polygon(vertices):
    v = [tuple(p) for p in np.asarray(vertices, dtype=np.float64)]
    m = len(v)
    edges = [(v[i], v[(i + 1) % m]) for i in range(m)]
    for i in range(m):
        for j in range(i + 1, m):
            if j == i + 1 or (i == 0 and j == m - 1):
                continue  # neighbours share a vertex
            if _segments_intersect(*edges[i], *edges[j]):
                return False
    return True


@dataclass(frozen=True)
class Roi:
    name: str
    x_axis: str
    y_axis: str
    polygon: np.ndarray
    line: int = 0  # source line in an ROI file, 0 when built in code

    def __post_init__(self):
        poly = np.asarray(self.polygon, dtype=np.float64)
        where = f" (line {self.line})" if self.line else ""
        if poly.ndim != 2 or poly.shape[1] != 2 or len(poly) < 3:
            raise InvalidRoi(f"ROI {self.name!r}{where} needs at least 3 (x, y) vertices")
        if self.x_axis.strip().upper() == self.y_axis.strip().upper():
            raise InvalidRoi(f"ROI {self.name!r}{where} uses the same axis twice")
        if not is_simple_polygon(poly):
            raise InvalidRoi(f"ROI {self.name!r}{where} polygon is self-intersecting")
        object.__setattr__(self, "polygon", poly)

    @classmethod
    def rectangle(cls, name, x_axis, y_axis, x0, x1, y0, y1):
        return cls(name, x_axis, y_axis, [(x0, y0), (x1, y0), (x1, y1), (x0, y1)])


def parse_roi_file(text, axes=None):
    """``name;x_axis;y_axis;x1,y1 x2,y2 ...`` per line; '#' starts a comment.

    When ``axes`` is given, unknown axis names raise UnknownAxis naming the
    offending line.
    """
    rois = []
    known = {a.upper() for a in axes} if axes is not None else None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split(";")]
        if len(parts) != 4:
            raise InvalidRoi(f"line {lineno}: expected 'name;x_axis;y_axis;vertices'")
        name, xa, ya, verts = parts
        if known is not None:
            for ax in (xa, ya):
                if ax.upper() not in known:
                    raise UnknownAxis(f"line {lineno}: unknown axis {ax!r}; available: {', '.join(sorted(known))}")
        try:
            poly = [tuple(float(c) for c in v.split(",")) for v in verts.split()]
        except ValueError as exc:
            raise InvalidRoi(f"line {lineno}: malformed vertex list") from exc
        if any(len(p) != 2 for p in poly):
            raise InvalidRoi(f"line {lineno}: vertices must be x,y pairs")
        rois.append(Roi(name, xa, ya, poly, line=lineno))
    return rois


def read_roi_file(path, axes=None):
    with open(path, encoding="utf-8") as fh:
        return parse_roi_file(fh.read(), axes)


def format_roi(roi):
    verts = " ".join(f"{x:.9g},{y:.9g}" for x, y in roi.polygon)
    return f"{roi.name};{roi.x_axis};{roi.y_axis};{verts}"


def points_in_polygon(x, y, polygon):
    """Even-odd rule; points on an edge or vertex count as inside."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    poly = np.asarray(polygon, dtype=np.float64)
    inside = np.zeros(x.shape, dtype=bool)
    boundary = np.zeros(x.shape, dtype=bool)
    scale = max(np.max(np.abs(poly)), 1.0)
    for k in range(len(poly)):
        x1, y1 = poly[k]
        x2, y2 = poly[(k + 1) % len(poly)]
        cross = (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1)
        seg_len = math.hypot(x2 - x1, y2 - y1)
        on_line = np.abs(cross) <= 1e-12 * scale * max(seg_len, 1e-300)
        within = ((x >= min(x1, x2)) & (x <= max(x1, x2)) & (y >= min(y1, y2)) & (y <= max(y1, y2)))
        boundary |= on_line & within
        crosses = (y1 > y) != (y2 > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_at = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (x < x_at)
    return inside | boundary


def select_roi(space, roi):
    return points_in_polygon(space.axis(roi.x_axis), space.axis(roi.y_axis), roi.polygon)


# -- spectral statistics ---------------------------------------------------------

@dataclass(frozen=True)
class RoiStats:
    member_count: int
    mean: np.ndarray
    covariance: np.ndarray  # None for a single member
    wavelengths: np.ndarray = None
    name: str = ""


def roi_stats(X, mask, wavelengths=None, name=""):
    values = X.values if isinstance(X, DataMatrix) else np.asarray(X, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (values.shape[0],):
        raise LengthMismatch(f"mask has {mask.shape} entries for {values.shape[0]} rows")
    members = values[mask]
    n = len(members)
    if n == 0:
        raise EmptyRoi(f"ROI {name!r} has no members" if name else "ROI has no members")
    mean = members.mean(axis=0)
    cov = None
    if n >= 2:
        centered = members - mean
        cov = centered.T @ centered / (n - 1)
        cov = 0.5 * (cov + cov.T)
        d = cov.shape[0]
        cov = cov + (REGULARIZATION * np.trace(cov) / d) * np.eye(d)
    wl = None if wavelengths is None else np.asarray(wavelengths, dtype=np.float64)
    return RoiStats(member_count=n, mean=mean, covariance=cov, wavelengths=wl, name=name)


def pairwise_spectrum_difference(a, b):
    """Elementwise a - b of two mean spectra. Returns (wavelengths, diff)."""
    ma = a.mean if isinstance(a, RoiStats) else np.asarray(a, dtype=np.float64)
    mb = b.mean if isinstance(b, RoiStats) else np.asarray(b, dtype=np.float64)
    if ma.shape != mb.shape:
        raise GridMismatch(f"spectra have {ma.shape[0]} and {mb.shape[0]} bands")
    wa = getattr(a, "wavelengths", None)
    wb = getattr(b, "wavelengths", None)
    if wa is not None and wb is not None and not np.array_equal(wa, wb):
        raise GridMismatch("spectra are on different wavelength grids")
    wl = wa if wa is not None else (wb if wb is not None else np.arange(1, len(ma) + 1, dtype=np.float64))
    return wl, ma - mb


def _inverse(cov, label):
    cond = np.linalg.cond(cov)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise SingularCovariance(f"{label} covariance is singular (condition ~{cond:.3g})", condition=cond)
    inv = np.linalg.inv(cov)
    return 0.5 * (inv + inv.T)


def gaussian_divergence(a, b):
    """Divergence between two Gaussian classes.

    D = 1/2 tr[(S1 - S2)(S2^-1 - S1^-1)] + 1/2 tr[(S1^-1 + S2^-1) dd^T]
    with d = m1 - m2. Computed so that swapping a and b is exact.
    """
    for s in (a, b):
        if s.covariance is None or s.member_count < 2:
            raise EmptyRoi(f"ROI {s.name!r} needs at least 2 members for a covariance")
    if a.mean.shape != b.mean.shape:
        raise GridMismatch("classes have different band counts")
    s1, s2 = a.covariance, b.covariance
    i1 = _inverse(s1, a.name or "first")
    i2 = _inverse(s2, b.name or "second")
    d = a.mean - b.mean
    dim = len(d)
    # tr[(S1 - S2)(S2^-1 - S1^-1)] = tr(S1 S2^-1) + tr(S2 S1^-1) - 2 dim
    t12 = float(np.sum(s1 * i2.T))
    t21 = float(np.sum(s2 * i1.T))
    cov_term = 0.5 * ((t12 + t21) - 2.0 * dim)
    mean_term = 0.5 * float(d @ (i1 + i2) @ d)
    return max(cov_term + mean_term, 0.0)


def transformed_divergence(a, b):
    """2 (1 - exp(-D / 8)); 0 for identical classes, 2 for full separation."""
    return 2.0 * (1.0 - math.exp(-gaussian_divergence(a, b) / 8.0))


def td_matrix(stats):
    n = len(stats)
    M = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            M[i, j] = M[j, i] = transformed_divergence(stats[i], stats[j])
    return M


# -- geography ---------------------------------------------------------------------

def geographic_footprint(space, masks, lines, samples, origin=(0, 0)):
    """Label image: 0 unlabeled, i for pixels in masks[i-1]; earlier masks win."""
    labels = np.zeros((lines, samples), dtype=np.int32)
    r = space.row_index[:, 0] - origin[0]
    c = space.row_index[:, 1] - origin[1]
    if len(r) and (r.min() < 0 or c.min() < 0 or r.max() >= lines or c.max() >= samples):
        raise CoordinateOutOfBounds(f"pixel coordinates fall outside the {lines}x{samples} image")
    for i in range(len(masks) - 1, -1, -1):
        m = np.asarray(masks[i], dtype=bool)
        if m.shape != (space.n,):
            raise LengthMismatch(f"mask {i + 1} has {m.shape} entries for {space.n} samples")
        labels[r[m], c[m]] = i + 1
    return labels


PALETTE = np.array(
    [
        [230, 25, 75], [60, 180, 75], [255, 225, 25], [0, 130, 200], [245, 130, 48],
        [145, 30, 180], [70, 240, 240], [240, 50, 230], [210, 245, 60], [250, 190, 212],
        [0, 128, 128], [220, 190, 255], [170, 110, 40], [255, 250, 200], [128, 0, 0],
        [170, 255, 195], [128, 128, 0], [255, 215, 180], [0, 0, 128], [128, 128, 128],
    ],
    dtype=np.uint8,
)


def footprint_overlay(labels, background=None):
    """RGB overlay: palette colors on labelled pixels over an optional gray
    background (dimmed), black otherwise."""
    h, w = labels.shape
    if background is None:
        rgb = np.zeros((h, w, 3), dtype=np.uint8)
    else:
        bg = np.asarray(background, dtype=np.float64)
        if bg.ndim == 3:
            bg = bg.mean(axis=2)
        lo, hi = np.nanmin(bg), np.nanmax(bg)
        g = np.zeros_like(bg) if hi <= lo else (bg - lo) / (hi - lo)
        g = np.nan_to_num(g)
        rgb = np.repeat((g * 160).astype(np.uint8)[:, :, None], 3, axis=2)
    lab = labels > 0
    rgb[lab] = PALETTE[(labels[lab] - 1) % len(PALETTE)]
    return rgb


# -- dispersion ---------------------------------------------------------------------

def mean_pairwise_distance(y, chunk=2048):
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    if n < 2:
        return 0.0
    if n <= chunk:
        return float(pdist(y).mean())
    total = 0.0
    for start in range(0, n, chunk):
        block = cdist(y[start:start + chunk], y)
        total += float(block.sum())
    return total / (n * (n - 1))


def _group_indices(groups, n):
    if isinstance(groups, dict):
        out = {}
        for name, idx in groups.items():
            idx = np.asarray(idx)
            if idx.dtype == bool:
                idx = np.flatnonzero(idx)
            if len(idx) == 0:
                raise EmptyGroup(f"group {name!r} is empty")
            out[name] = idx
        return out
    labels = np.asarray(groups)
    if labels.shape != (n,):
        raise LengthMismatch(f"group labels have {labels.shape} entries for {n} samples")
    return {g: np.flatnonzero(labels == g) for g in np.unique(labels)}


def cluster_dispersion(embedding, groups):
    """Mean within-group pairwise t-SNE distance over the global mean.

    ``embedding`` is a JointSpace, Embedding or N x 2 array; ``groups`` is a
    label per sample or a {name: indices} mapping.
    """
    if isinstance(embedding, JointSpace):
        y = embedding.tsne
    else:
        y = np.asarray(getattr(embedding, "y", embedding), dtype=np.float64)
    idx = _group_indices(groups, len(y))
    glob = mean_pairwise_distance(y)
    out = {}
    for name, members in idx.items():
        within = mean_pairwise_distance(y[members])
        out[name] = within / glob if glob > 0 else 0.0
    return out


def perplexity_sweep(X, groups, perplexities, seeds, base_config=None, progress=None):
    """Run t-SNE over the (perplexity, seed) grid and tabulate dispersion.

    Returns a list of (perplexity, seed, group, dispersion) rows ordered by
    grid position, then group.
    """
    base_config = base_config or TsneConfig()
    n = X.n_samples if isinstance(X, DataMatrix) else len(X)
    _group_indices(groups, n)
    rows = []
    for perplexity in perplexities:
        for seed in seeds:
            cfg = replace(base_config, perplexity=float(perplexity), seed=int(seed))
            emb = run_tsne(X, cfg)
            for group, value in cluster_dispersion(emb, groups).items():
                rows.append((perplexity, seed, group, value))
            if progress is not None:
                progress(perplexity, seed)
    return rows


def write_dispersion_csv(path, rows):
    write_csv(path, ["perplexity", "seed", "group", "dispersion"], rows)
