"""Deterministic synthetic test images and the PPM/PGM raster formats.

Three RGB images exercise increasingly rich color structure:

* a 10 x 10 grid of gray chips whose level is constant along each
  anti-diagonal (19 distinct values),
* that grid plus three binary-mixing quadrants (R,G), (R,B), (G,B),
* a continuous hue/value ramp above a discrete grid of color chips.

A fourth generator builds a small vegetation-like hyperspectral cube with
planted classes, used as a desk-scale analog of an airborne scene.
"""

import re
from dataclasses import dataclass

import numpy as np

from .errors import ImageFormatError
from .fileio import atomic_write
from .linalg import DataMatrix

CHIP = 10
GRID = 10


@dataclass(frozen=True)
class RgbImage:
    pixels: np.ndarray  # height x width x 3, uint8

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ImageFormatError(f"expected H x W x 3 pixels, got {px.shape}")
        if px.dtype != np.uint8:
            if np.any(px < 0) or np.any(px > 255):
                raise ImageFormatError("channel values must lie in [0, 255]")
            px = px.astype(np.uint8)
        object.__setattr__(self, "pixels", px)

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]


def _chips_to_image(chip_values):
    """Expand a GRID x GRID x 3 table of chip colors to pixels."""
    return np.repeat(np.repeat(chip_values, CHIP, axis=0), CHIP, axis=1).astype(np.uint8)


def _gray_chips():
    i, j = np.meshgrid(np.arange(GRID), np.arange(GRID), indexing="ij")
    g = np.round(255.0 * (i + j) / (2 * (GRID - 1))).astype(np.uint8)
    return np.repeat(g[:, :, None], 3, axis=2)


def gen_grayscale_grid():
    return RgbImage(_chips_to_image(_gray_chips()))


def _mixing_chips(a, b):
    i, j = np.meshgrid(np.arange(GRID), np.arange(GRID), indexing="ij")
    chips = np.zeros((GRID, GRID, 3), dtype=np.uint8)
    chips[:, :, a] = np.round(255.0 * i / (GRID - 1))
    chips[:, :, b] = np.round(255.0 * j / (GRID - 1))
    return chips


def gen_binary_mixture():
    """200 x 200: gray grid top-left, (R,G) top-right, (R,B) bottom-left,
    (G,B) bottom-right."""
    top = np.concatenate([_gray_chips(), _mixing_chips(0, 1)], axis=1)
    bottom = np.concatenate([_mixing_chips(0, 2), _mixing_chips(1, 2)], axis=1)
    return RgbImage(_chips_to_image(np.concatenate([top, bottom], axis=0)))


def hsv_to_rgb(h, s, v):
    """Vectorized piecewise-linear HSV -> RGB; h in degrees, s and v in [0,1]."""
    h = np.mod(np.asarray(h, dtype=np.float64), 360.0) / 60.0
    s = np.broadcast_to(np.asarray(s, dtype=np.float64), h.shape)
    v = np.broadcast_to(np.asarray(v, dtype=np.float64), h.shape)
    c = v * s
    x = c * (1 - np.abs(np.mod(h, 2.0) - 1))
    m = v - c
    sector = np.floor(h).astype(int) % 6
    zeros = np.zeros_like(c)
    table = [
        (c, x, zeros),
        (x, c, zeros),
        (zeros, c, x),
        (zeros, x, c),
        (x, zeros, c),
        (c, zeros, x),
    ]
    r = np.select([sector == k for k in range(6)], [t[0] for t in table])
    g = np.select([sector == k for k in range(6)], [t[1] for t in table])
    b = np.select([sector == k for k in range(6)], [t[2] for t in table])
    return np.stack([r + m, g + m, b + m], axis=-1)


# RGB cube corners then face centers
_ANCHORS = np.array(
    [
        [0, 0, 0], [255, 0, 0], [0, 255, 0], [0, 0, 255],
        [255, 255, 0], [0, 255, 255], [255, 0, 255], [255, 255, 255],
        [128, 128, 0], [128, 128, 255], [128, 0, 128],
        [128, 255, 128], [0, 128, 128], [255, 128, 128],
    ],
    dtype=np.float64,
)


def gen_continuous_discrete():
    """256 x 256: continuous hue ramp on top, 16 x 8 chip table below.

    Top half: hue runs 0..360 degrees across columns, value falls from 1 to
    0.25 down the rows, saturation 1. Bottom half: seven rows of chips
    cycling through the RGB cube corners and face centers at decreasing
    brightness, then one row of 16 gray levels.
    """
    size = 256
    half = size // 2
    cols = np.arange(size)
    rows = np.arange(half)
    hue = 360.0 * cols / (size - 1)
    value = 1.0 - 0.75 * rows / (half - 1)
    hh, vv = np.meshgrid(hue, value)
    top = np.round(255.0 * hsv_to_rgb(hh, 1.0, vv))

    n_cols, n_rows, chip = 16, 8, 16
    chips = np.zeros((n_rows, n_cols, 3))
    for r in range(n_rows - 1):
        for c in range(n_cols):
            k = r * n_cols + c
            scale = 1.0 - 0.5 * (k // len(_ANCHORS)) / 8.0
            chips[r, c] = np.round(_ANCHORS[k % len(_ANCHORS)] * scale)
    chips[n_rows - 1] = np.round(255.0 * np.arange(n_cols) / (n_cols - 1))[:, None]
    bottom = np.repeat(np.repeat(chips, chip, axis=0), chip, axis=1)
    return RgbImage(np.concatenate([top, bottom], axis=0).astype(np.uint8))


def gen_figure(figure):
    generators = {1: gen_grayscale_grid, 2: gen_binary_mixture, 3: gen_continuous_discrete}
    if figure not in generators:
        raise ValueError(f"unknown figure id {figure!r}; choose 1, 2 or 3")
    return generators[figure]()


def image_to_matrix(image):
    """Flatten an RgbImage to a DataMatrix in row-major pixel order."""
    h, w = image.height, image.width
    rr, cc = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    idx = np.column_stack([rr.ravel(), cc.ravel()])
    return DataMatrix(image.pixels.reshape(-1, 3).astype(np.float64), idx)


# -- PPM / PGM -----------------------------------------------------------------

def encode_ppm(image):
    header = f"P6\n{image.width} {image.height}\n255\n".encode("ascii")
    return header + np.ascontiguousarray(image.pixels).tobytes()


def encode_pgm(gray):
    gray = np.asarray(gray)
    if gray.ndim != 2:
        raise ImageFormatError("PGM data must be 2-D")
    if gray.min(initial=0) < 0 or gray.max(initial=0) > 255:
        raise ImageFormatError("PGM values must lie in [0, 255]")
    h, w = gray.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + gray.astype(np.uint8).tobytes()


def write_ppm(path, image):
    atomic_write(path, encode_ppm(image))


def write_pgm(path, gray):
    atomic_write(path, encode_pgm(gray))


_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _parse_netpbm(data, magic, channels):
    pos = 0
    tokens = []
    for _ in range(4):
        m = _TOKEN.match(data, pos)
        if m is None:
            raise ImageFormatError("truncated PNM header")
        tokens.append(m.group(1))
        pos = m.end()
    if tokens[0] != magic:
        raise ImageFormatError(f"expected {magic.decode()} magic, got {tokens[0][:2]!r}")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise ImageFormatError("non-integer PNM header field") from exc
    if maxval != 255:
        raise ImageFormatError(f"only maxval 255 is supported, got {maxval}")
    pos += 1  # single whitespace byte after maxval
    n = width * height * channels
    body = data[pos:pos + n]
    if len(body) != n:
        raise ImageFormatError(f"PNM body has {len(body)} bytes, expected {n}")
    arr = np.frombuffer(body, dtype=np.uint8)
    return arr.reshape(height, width, channels) if channels > 1 else arr.reshape(height, width)


def decode_ppm(data):
    return RgbImage(_parse_netpbm(data, b"P6", 3).copy())


def decode_pgm(data):
    return _parse_netpbm(data, b"P5", 1).copy()


def read_ppm(path):
    with open(path, "rb") as fh:
        return decode_ppm(fh.read())


def read_pgm(path):
    with open(path, "rb") as fh:
        return decode_pgm(fh.read())


# -- vegetation analog cube ------------------------------------------------------

AVIRIS_FIRST_NM = 365.0
AVIRIS_LAST_NM = 2496.0

# 1-based inclusive band windows, all inside retained SWIR bands
VEGETATION_WINDOWS = ((123, 135), (137, 149), (182, 194), (196, 208))
VEGETATION_DEPTHS = (0.15, 0.13, 0.13, 0.12)


def aviris_wavelengths(bands=224):
    return np.linspace(AVIRIS_FIRST_NM, AVIRIS_LAST_NM, bands)


def green_vegetation_spectrum(wavelengths):
    """Smooth reflectance curve with the usual green-vegetation landmarks:
    green peak, red absorption, red edge, NIR plateau and the 1.4 / 1.9 um
    water bands."""
    wl = np.asarray(wavelengths, dtype=np.float64)

    def bump(center, width):
        return np.exp(-0.5 * ((wl - center) / width) ** 2)

    visible = 0.04 + 0.06 * bump(550, 35)
    red_edge = 1.0 / (1.0 + np.exp(-(wl - 725) / 14))
    nir = 0.42 * red_edge * (1.0 - 0.45 * (1.0 / (1.0 + np.exp(-(wl - 1300) / 60))))
    water = 1.0 - 0.55 * bump(1450, 60) - 0.75 * bump(1940, 70) - 0.2 * bump(1180, 40)
    swir = 0.10 * bump(1660, 110) + 0.06 * bump(2210, 90)
    return np.clip((visible + nir + swir) * water + 0.01, 0.005, 1.0)


def gen_vegetation_cube(lines=64, samples=64, bands=224, noise=0.01, seed=0,
                        windows=VEGETATION_WINDOWS, depths=VEGETATION_DEPTHS):
    """Four planted classes on a 2 x 2 block layout.

    Every class shares one vegetation base spectrum; class ``c`` additionally
    has a Hann-shaped absorption of ``depths[c]`` inside ``windows[c]``
    (1-based inclusive bands) and nothing anywhere else. Multiplicative
    Gaussian noise with relative sd ``noise`` is added per pixel and band.

    Returns (values lines x samples x bands, wavelengths, labels lines x
    samples with classes 1..4).
    """
    wl = aviris_wavelengths(bands)
    base = green_vegetation_spectrum(wl)
    spectra = np.repeat(base[None, :], len(windows), axis=0)
    for c, ((lo, hi), depth) in enumerate(zip(windows, depths)):
        width = hi - lo + 1
        shape = np.hanning(width + 2)[1:-1]
        spectra[c, lo - 1:hi] -= depth * shape

    labels = np.zeros((lines, samples), dtype=np.int64)
    half_l, half_s = lines // 2, samples // 2
    labels[:half_l, :half_s] = 1
    labels[:half_l, half_s:] = 2
    labels[half_l:, :half_s] = 3
    labels[half_l:, half_s:] = 4

    rng = np.random.default_rng(seed)
    clean = spectra[labels - 1]
    values = clean * (1.0 + noise * rng.standard_normal(clean.shape))
    return values, wl, labels
