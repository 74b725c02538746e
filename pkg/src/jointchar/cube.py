"""ENVI-style hyperspectral cubes: header parsing, raw body decoding,
band exclusion, spatial windows and flattening to a DataMatrix.

Band numbers in user-facing range strings are 1-based and inclusive;
everything internal is 0-based.
"""

import re
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import (
    MalformedList,
    MissingKey,
    NoBandsRetained,
    RangeOutOfBounds,
    SizeMismatch,
    UnsupportedDataType,
    WindowOutOfBounds,
)
from .fileio import atomic_write
from .linalg import DataMatrix

DATA_TYPES = {2: "int16", 4: "float32", 12: "uint16"}
DATA_TYPE_CODES = {v: k for k, v in DATA_TYPES.items()}
INTERLEAVES = ("bsq", "bil", "bip")

DEFAULT_EXCLUDE = "1-14,49-64,75-84,90-120,150-180,210-224"

# pixels with any retained band outside this range are treated as no-data
VALID_MIN = -0.5
VALID_MAX = 1.5


@dataclass(frozen=True)
class CubeMeta:
    samples: int
    lines: int
    bands: int
    interleave: str = "bsq"
    data_type: str = "float32"
    byte_order: str = "little"
    header_offset: int = 0
    wavelengths: tuple = None
    reflectance_scale: float = 1.0

    @property
    def dtype(self):
        endian = "<" if self.byte_order == "little" else ">"
        return np.dtype(self.data_type).newbyteorder(endian)

    @property
    def body_bytes(self):
        return self.samples * self.lines * self.bands * np.dtype(self.data_type).itemsize

    @property
    def file_bytes(self):
        return self.header_offset + self.body_bytes


@dataclass(frozen=True)
class SpectralCube:
    meta: CubeMeta
    values: np.ndarray  # lines x samples x bands
    band_mask: np.ndarray = None
    origin: tuple = (0, 0)  # (line, sample) of values[0, 0] in the parent cube

    def __post_init__(self):
        if self.band_mask is None:
            object.__setattr__(self, "band_mask", np.ones(self.values.shape[2], dtype=bool))

    @property
    def lines(self):
        return self.values.shape[0]

    @property
    def samples(self):
        return self.values.shape[1]

    @property
    def bands(self):
        return self.values.shape[2]

    @property
    def retained_bands(self):
        return int(np.count_nonzero(self.band_mask))

    @property
    def wavelengths(self):
        if self.meta.wavelengths is None:
            return np.arange(1, self.bands + 1, dtype=np.float64)
        return np.asarray(self.meta.wavelengths, dtype=np.float64)

    @property
    def retained_wavelengths(self):
        return self.wavelengths[self.band_mask]


# -- header ---------------------------------------------------------------

_ENTRY = re.compile(r"^\s*([^=]+?)\s*=\s*(.*)$")


def _header_entries(text):
    entries = {}
    lines = text.splitlines()
    i = 0
    while i < len(lines):
        line = lines[i]
        i += 1
        m = _ENTRY.match(line)
        if not m:
            continue
        key = m.group(1).strip().lower()
        value = m.group(2).strip()
        if value.startswith("{"):
            while "}" not in value:
                if i >= len(lines):
                    raise MalformedList(f"unterminated list for key {key!r}")
                value += " " + lines[i].strip()
                i += 1
        entries[key] = value
    return entries


def _parse_list(key, value):
    if not (value.startswith("{") and value.endswith("}")):
        raise MalformedList(f"{key!r} is not a {{...}} list")
    items = [x.strip() for x in value[1:-1].split(",")]
    items = [x for x in items if x]
    try:
        return [float(x) for x in items]
    except ValueError as exc:
        raise MalformedList(f"non-numeric entry in {key!r}") from exc


def _int(entries, key, default=None):
    if key not in entries:
        if default is None:
            raise MissingKey(key)
        return default
    try:
        return int(entries[key])
    except ValueError as exc:
        raise MalformedList(f"{key!r} must be an integer, got {entries[key]!r}") from exc


def parse_envi_header(text):
    """Parse ENVI header text into CubeMeta. Unknown keys are ignored."""
    entries = _header_entries(text)
    for key in ("samples", "lines", "bands", "interleave", "data type"):
        if key not in entries:
            raise MissingKey(key)
    samples = _int(entries, "samples")
    lines = _int(entries, "lines")
    bands = _int(entries, "bands")
    code = _int(entries, "data type")
    if code not in DATA_TYPES:
        raise UnsupportedDataType(f"ENVI data type {code} is not supported (use 2, 4 or 12)")
    interleave = entries["interleave"].strip().lower()
    if interleave not in INTERLEAVES:
        raise UnsupportedDataType(f"unknown interleave {interleave!r}")
    byte_order = "big" if _int(entries, "byte order", 0) == 1 else "little"
    offset = _int(entries, "header offset", 0)

    wavelengths = None
    if "wavelength" in entries:
        wl = _parse_list("wavelength", entries["wavelength"])
        if len(wl) != bands:
            raise MalformedList(f"wavelength list has {len(wl)} entries for {bands} bands")
        units = entries.get("wavelength units", "nanometers").strip().lower()
        if units.startswith("micro") or units in ("um", "µm"):
            wl = [w * 1000.0 for w in wl]
        if any(b <= a for a, b in zip(wl, wl[1:])):
            raise MalformedList("wavelengths must be strictly increasing")
        wavelengths = tuple(wl)

    return CubeMeta(samples=samples, lines=lines, bands=bands, interleave=interleave,
                    data_type=DATA_TYPES[code], byte_order=byte_order,
                    header_offset=offset, wavelengths=wavelengths)


def render_envi_header(meta):
    out = [
        "ENVI",
        f"samples = {meta.samples}",
        f"lines = {meta.lines}",
        f"bands = {meta.bands}",
        f"header offset = {meta.header_offset}",
        "file type = ENVI Standard",
        f"data type = {DATA_TYPE_CODES[meta.data_type]}",
        f"interleave = {meta.interleave}",
        f"byte order = {1 if meta.byte_order == 'big' else 0}",
    ]
    if meta.wavelengths is not None:
        out.append("wavelength units = Nanometers")
        out.append("wavelength = {" + ", ".join(f"{w:.6f}" for w in meta.wavelengths) + "}")
    return "\n".join(out) + "\n"


# -- body ----------------------------------------------------------------

# storage shape, and the transpose that brings it to (line, sample, band)
_LAYOUT = {
    "bsq": (lambda m: (m.bands, m.lines, m.samples), (1, 2, 0)),
    "bil": (lambda m: (m.lines, m.bands, m.samples), (0, 2, 1)),
    "bip": (lambda m: (m.lines, m.samples, m.bands), (0, 1, 2)),
}


def load_cube(meta, data):
    """Decode a raw ENVI body (bytes) into a SpectralCube."""
    if len(data) != meta.file_bytes:
        raise SizeMismatch(
            f"file has {len(data)} bytes, header implies {meta.file_bytes} "
            f"({meta.lines}x{meta.samples}x{meta.bands} {meta.data_type} + {meta.header_offset} offset)"
        )
    shape_of, to_lsb = _LAYOUT[meta.interleave]
    raw = np.frombuffer(data, dtype=meta.dtype, offset=meta.header_offset)
    raw = raw.reshape(shape_of(meta)).transpose(to_lsb)
    values = raw.astype(np.float64)
    if np.issubdtype(np.dtype(meta.data_type), np.integer):
        values = values * meta.reflectance_scale
    return SpectralCube(meta=meta, values=np.ascontiguousarray(values))


def encode_cube(values, meta):
    """Inverse of load_cube: (line, sample, band) values -> raw bytes."""
    values = np.asarray(values)
    if values.shape != (meta.lines, meta.samples, meta.bands):
        raise SizeMismatch(f"values shape {values.shape} does not match header")
    if np.issubdtype(np.dtype(meta.data_type), np.integer):
        info = np.iinfo(meta.data_type)
        stored = np.round(values / meta.reflectance_scale)
        stored = np.clip(stored, info.min, info.max)
    else:
        stored = values
    order = {"bsq": (2, 0, 1), "bil": (0, 2, 1), "bip": (0, 1, 2)}[meta.interleave]
    body = np.ascontiguousarray(stored.transpose(order)).astype(meta.dtype).tobytes()
    return b"\0" * meta.header_offset + body


def data_path_for(header_path):
    header_path = Path(header_path)
    stem = header_path.with_suffix("")
    for cand in (stem, stem.with_suffix(".img"), stem.with_suffix(".dat"),
                 stem.with_suffix(".bin"), stem.with_suffix(".raw")):
        if cand.exists() and cand != header_path:
            return cand
    raise FileNotFoundError(f"no data file found next to {header_path}")


def read_cube(header_path, data_path=None, reflectance_scale=1.0):
    header_path = Path(header_path)
    meta = parse_envi_header(header_path.read_text(encoding="utf-8", errors="replace"))
    meta = replace(meta, reflectance_scale=reflectance_scale)
    data_path = Path(data_path) if data_path else data_path_for(header_path)
    return load_cube(meta, data_path.read_bytes())


def write_cube(data_path, values, meta):
    """Write body and ``<data_path>.hdr``; returns the header path."""
    data_path = Path(data_path)
    header_path = data_path.with_suffix(".hdr") if data_path.suffix else Path(str(data_path) + ".hdr")
    atomic_write(data_path, encode_cube(values, meta))
    atomic_write(header_path, render_envi_header(meta))
    return header_path


# -- band and spatial selection -----------------------------------------------

def parse_band_ranges(text):
    """'1-14,49-64,90' -> [(1, 14), (49, 64), (90, 90)]."""
    ranges = []
    text = (text or "").strip()
    if not text:
        return ranges
    for part in text.split(","):
        part = part.strip()
        m = re.fullmatch(r"(\d+)\s*(?:-\s*(\d+))?", part)
        if not m:
            raise RangeOutOfBounds(f"cannot parse band range {part!r}")
        lo = int(m.group(1))
        hi = int(m.group(2)) if m.group(2) else lo
        if hi < lo:
            raise RangeOutOfBounds(f"band range {part!r} is reversed")
        ranges.append((lo, hi))
    return ranges


def exclusion_mask(bands, ranges):
    mask = np.ones(bands, dtype=bool)
    for lo, hi in ranges:
        if lo < 1 or hi > bands or hi < lo:
            raise RangeOutOfBounds(f"band range {lo}-{hi} is outside 1..{bands}")
        mask[lo - 1:hi] = False
    return mask


def apply_band_exclusions(cube, ranges):
    if isinstance(ranges, str):
        ranges = parse_band_ranges(ranges)
    return replace(cube, band_mask=exclusion_mask(cube.bands, ranges))


def spatial_subset(cube, origin_line, origin_sample, height, width):
    if (origin_line < 0 or origin_sample < 0 or height < 1 or width < 1
            or origin_line + height > cube.lines or origin_sample + width > cube.samples):
        raise WindowOutOfBounds(
            f"window ({origin_line},{origin_sample}) {height}x{width} exceeds {cube.lines}x{cube.samples}"
        )
    values = cube.values[origin_line:origin_line + height, origin_sample:origin_sample + width].copy()
    meta = replace(cube.meta, lines=height, samples=width)
    origin = (cube.origin[0] + origin_line, cube.origin[1] + origin_sample)
    return SpectralCube(meta=meta, values=values, band_mask=cube.band_mask.copy(), origin=origin)


def pixel_index(cube):
    rr, cc = np.meshgrid(np.arange(cube.lines), np.arange(cube.samples), indexing="ij")
    return np.column_stack([rr.ravel() + cube.origin[0], cc.ravel() + cube.origin[1]])


def flatten_cube(cube):
    """Row-major pixels x retained bands; row_index holds (line, sample)."""
    if not cube.band_mask.any():
        raise NoBandsRetained("band mask excludes every band")
    values = cube.values[:, :, cube.band_mask].reshape(-1, cube.retained_bands)
    return DataMatrix(values, pixel_index(cube))


def unflatten(matrix, cube):
    """Scatter DataMatrix rows back into a lines x samples x retained cube."""
    out = np.full((cube.lines, cube.samples, matrix.n_features), np.nan)
    r = matrix.row_index[:, 0] - cube.origin[0]
    c = matrix.row_index[:, 1] - cube.origin[1]
    out[r, c] = matrix.values
    return out


def flag_invalid_pixels(cube, lo=VALID_MIN, hi=VALID_MAX):
    """True where any retained band is non-finite or outside [lo, hi]."""
    v = cube.values[:, :, cube.band_mask]
    return np.any(~np.isfinite(v) | (v < lo) | (v > hi), axis=2)


def cube_to_matrix(cube):
    """Flatten, dropping flagged pixels. Returns (DataMatrix, n_flagged)."""
    if not cube.band_mask.any():
        raise NoBandsRetained("band mask excludes every band")
    flagged = flag_invalid_pixels(cube).ravel()
    values = cube.values[:, :, cube.band_mask].reshape(-1, cube.retained_bands)
    keep = ~flagged
    return DataMatrix(values[keep], pixel_index(cube)[keep]), int(flagged.sum())
