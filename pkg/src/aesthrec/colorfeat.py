"""Color embeddings: RGB/HSV conversion and concatenated per-channel histograms.

Images are plain uint8 arrays, either (height, width, 3) or a flat (pixels, 3)
list; photos keep no spatial structure here because histograms discard it.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from sklearn.base import BaseEstimator, TransformerMixin

from .features import FeatureTable
from .runtime import thread_count

logger = logging.getLogger(__name__)

SPACES = ("rgb", "hsv")


def rgb_to_hsv(r, g, b):
    """Hexcone conversion of one 8-bit RGB pixel.

    Returns (hue in degrees [0, 360), saturation [0, 1], value [0, 1]).
    Achromatic pixels get hue 0 by convention; saturation is 0 when value is 0.
    """
    for channel in (r, g, b):
        if not 0 <= channel <= 255:
            raise ValueError(f"channel value {channel} outside [0, 255]")
    rf, gf, bf = r / 255.0, g / 255.0, b / 255.0
    mx = max(rf, gf, bf)
    mn = min(rf, gf, bf)
    delta = mx - mn
    v = mx
    s = 0.0 if mx == 0.0 else delta / mx
    if delta == 0.0:
        h = 0.0
    elif mx == rf:
        h = 60.0 * (((gf - bf) / delta) % 6.0)
    elif mx == gf:
        h = 60.0 * ((bf - rf) / delta + 2.0)
    else:
        h = 60.0 * ((rf - gf) / delta + 4.0)
    return h, s, v


def hsv_to_rgb(h, s, v):
    """Inverse hexcone conversion back to rounded 8-bit RGB."""
    if not (0.0 <= s <= 1.0 and 0.0 <= v <= 1.0):
        raise ValueError("saturation and value must lie in [0, 1]")
    hp = (h % 360.0) / 60.0
    c = v * s
    x = c * (1.0 - abs(hp % 2.0 - 1.0))
    sector = int(hp) % 6
    rgb1 = [(c, x, 0.0), (x, c, 0.0), (0.0, c, x), (0.0, x, c), (x, 0.0, c), (c, 0.0, x)][sector]
    m = v - c
    return tuple(int(round((ch + m) * 255.0)) for ch in rgb1)


def _as_pixels(image):
    if isinstance(image, Image.Image):
        image = np.asarray(image.convert("RGB"))
    pixels = np.asarray(image)
    if pixels.ndim == 3 and pixels.shape[2] == 3:
        pixels = pixels.reshape(-1, 3)
    if pixels.ndim != 2 or pixels.shape[1] != 3:
        raise ValueError(f"expected (h, w, 3) or (n, 3) pixel data, got shape {np.shape(image)}")
    if pixels.shape[0] == 0:
        raise ValueError("image has no pixels")
    if pixels.dtype != np.uint8:
        if np.issubdtype(pixels.dtype, np.floating) or pixels.min() < 0 or pixels.max() > 255:
            raise ValueError("pixel values must be 8-bit integers in [0, 255]")
        pixels = pixels.astype(np.uint8)
    return pixels


def _hsv_channels(pixels):
    scaled = pixels.astype(np.float64) / 255.0
    r, g, b = scaled[:, 0], scaled[:, 1], scaled[:, 2]
    mx = scaled.max(axis=1)
    mn = scaled.min(axis=1)
    delta = mx - mn
    v = mx
    s = np.where(mx > 0.0, delta / np.where(mx > 0.0, mx, 1.0), 0.0)
    safe = np.where(delta > 0.0, delta, 1.0)
    is_r = (delta > 0.0) & (mx == r)
    is_g = (delta > 0.0) & ~is_r & (mx == g)
    is_b = (delta > 0.0) & ~is_r & ~is_g
    h = np.select(
        [is_r, is_g, is_b],
        [
            60.0 * (((g - b) / safe) % 6.0),
            60.0 * ((b - r) / safe + 2.0),
            60.0 * ((r - g) / safe + 4.0),
        ],
        default=0.0,
    )
    return h, s, v


@dataclass(frozen=True)
class ColorHistogram:
    """Concatenated per-channel histogram; each channel block is L1-normalized."""

    space: str
    bins_per_channel: int
    values: np.ndarray

    def channel_block(self, index):
        b = self.bins_per_channel
        return self.values[index * b : (index + 1) * b]


def extract_histogram(image, space="hsv", bins_per_channel=32):
    """Histogram each channel over its native range and concatenate the blocks.

    Ranges are H: [0, 360), S and V: [0, 1], R/G/B: [0, 256). Every block sums
    to 1, so the full vector sums to 3 regardless of image size.
    """
    if space not in SPACES:
        raise ValueError(f"space must be one of {SPACES}, got {space!r}")
    if bins_per_channel < 1:
        raise ValueError("bins_per_channel must be >= 1")
    pixels = _as_pixels(image)
    if space == "hsv":
        channels = _hsv_channels(pixels)
        ranges = ((0.0, 360.0), (0.0, 1.0), (0.0, 1.0))
    else:
        as_float = pixels.astype(np.float64)
        channels = (as_float[:, 0], as_float[:, 1], as_float[:, 2])
        ranges = ((0.0, 256.0), (0.0, 256.0), (0.0, 256.0))
    count = pixels.shape[0]
    blocks = [
        np.histogram(channel, bins=bins_per_channel, range=rng)[0] / count
        for channel, rng in zip(channels, ranges)
    ]
    return ColorHistogram(space, bins_per_channel, np.concatenate(blocks))


def batch_extract(directory, space="hsv", bins_per_channel=32):
    """Extract histograms for every decodable image in a directory.

    Files are keyed by stem; undecodable ones are logged and skipped. Raises
    if the directory yields no vectors at all.
    """
    directory = Path(directory)
    paths = sorted(p for p in directory.iterdir() if p.is_file())

    def extract_one(path):
        try:
            with Image.open(path) as im:
                pixels = np.asarray(im.convert("RGB"))
            return extract_histogram(pixels, space, bins_per_channel).values
        except (OSError, ValueError) as exc:
            logger.warning("skipping %s: %s", path.name, exc)
            return None

    workers = min(thread_count(), len(paths)) if paths else 1
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(extract_one, paths))
    else:
        results = [extract_one(path) for path in paths]

    ids = []
    vectors = []
    for path, values in zip(paths, results):
        if values is None:
            continue
        if path.stem in ids:
            raise ValueError(f"duplicate photo id {path.stem!r} in {directory}")
        ids.append(path.stem)
        vectors.append(values)
    if not ids:
        raise ValueError(f"no decodable images in {directory}")
    return FeatureTable(ids, np.stack(vectors))


class ColorHistogramExtractor(BaseEstimator, TransformerMixin):
    """Stateless transformer from images to concatenated channel histograms."""

    def __init__(self, space="hsv", bins_per_channel=32):
        self.space = space
        self.bins_per_channel = bins_per_channel

    def fit(self, X, y=None):
        if self.space not in SPACES:
            raise ValueError(f"space must be one of {SPACES}, got {self.space!r}")
        if self.bins_per_channel < 1:
            raise ValueError("bins_per_channel must be >= 1")
        return self

    def transform(self, X):
        return np.stack(
            [extract_histogram(img, self.space, self.bins_per_channel).values for img in X]
        )
