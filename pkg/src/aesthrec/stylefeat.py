"""Gram-matrix style embeddings, the binary feature formats, and layer selection.

A style vector is the flattened Gram matrix G = F F^T / (C M) of one convnet
layer's feature map F (C channels x M spatial positions). The layer/kernel
selection experiment ranks photo pairs by style similarity and scores how many
of the closest pairs fall inside the same human-annotated aesthetic set.
"""

import json
import struct
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .features import FeatureTable, MissingFeatureError
from .simcore import KERNEL_ORDER, kernel_rank, pairwise_feature_similarity

FEATURE_MAGIC = b"PHFV"
MAP_MAGIC = b"PHFM"
FORMAT_VERSION = 1


class FeatureFormatError(ValueError):
    """Base for malformed feature-file input."""


class BadMagicError(FeatureFormatError):
    pass


class UnsupportedVersionError(FeatureFormatError):
    pass


class TruncatedStreamError(FeatureFormatError):
    pass


class DimensionError(FeatureFormatError):
    pass


@dataclass(frozen=True)
class FeatureMap:
    """One photo's activations at one convolutional layer, channels x positions."""

    photo_id: str
    layer_index: int
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise ValueError(f"feature map must be a non-empty 2-D array, got shape {data.shape}")
        if not np.isfinite(data).all():
            raise ValueError(f"feature map for {self.photo_id!r} contains NaN or Inf")
        object.__setattr__(self, "data", data)

    @property
    def channels(self):
        return self.data.shape[0]

    @property
    def positions(self):
        return self.data.shape[1]


@dataclass(frozen=True)
class StyleVector:
    """Flattened C x C Gram matrix for one photo and layer."""

    photo_id: str
    layer_index: int
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float32)
        side = int(round(np.sqrt(values.size)))
        if side * side != values.size:
            raise ValueError(f"style vector length {values.size} is not a perfect square")
        object.__setattr__(self, "values", values)

    @property
    def channels(self):
        return int(round(np.sqrt(self.values.size)))

    def as_matrix(self):
        c = self.channels
        return self.values.reshape(c, c)


def gram(feature_map):
    """Normalized Gram matrix G = F F^T / (C M), flattened row-major.

    Positions are put into a canonical (lexicographic) order first so the
    accumulated sums do not depend on spatial traversal order; any permutation
    of positions therefore yields a bit-identical result.
    """
    f = feature_map.data.astype(np.float64)
    c, m = f.shape
    order = np.lexsort(f[::-1])
    f = f[:, order]
    g = (f @ f.T) / (c * m)
    return StyleVector(feature_map.photo_id, feature_map.layer_index, g.reshape(-1))


def style_table(style_vectors):
    """Stack StyleVectors into a FeatureTable; dimensions must agree."""
    vectors = list(style_vectors)
    if not vectors:
        return FeatureTable((), np.zeros((0, 0), dtype=np.float32))
    dims = {v.values.size for v in vectors}
    if len(dims) != 1:
        raise DimensionError(f"style vectors mix dimensions {sorted(dims)}")
    return FeatureTable([v.photo_id for v in vectors], np.stack([v.values for v in vectors]))


class GramStyleTransformer(BaseEstimator, TransformerMixin):
    """Transformer from feature maps (or raw C x M arrays) to style vectors."""

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        rows = []
        for entry in X:
            if not isinstance(entry, FeatureMap):
                entry = FeatureMap(photo_id="", layer_index=0, data=entry)
            rows.append(gram(entry).values)
        return np.stack(rows)


# -- binary formats ---------------------------------------------------------


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, count, what):
        end = self.pos + count
        if end > len(self.data):
            raise TruncatedStreamError(f"stream ended inside {what}")
        chunk = self.data[self.pos : end]
        self.pos = end
        return chunk

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def remaining(self):
        return len(self.data) - self.pos


def _read_all(source):
    if isinstance(source, (str, Path)):
        return Path(source).read_bytes()
    return source.read()


def _check_header(reader, magic, kind):
    got = bytes(reader.take(4, "magic"))
    if got != magic:
        raise BadMagicError(f"not a {kind} file: magic {got!r}")
    (version,) = reader.unpack("<H", "version")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"unsupported {kind} version {version}")


def write_features(table, sink):
    """Write a FeatureTable in the binary feature-file format; returns byte count.

    Layout: magic PHFV, version u16, record count u64, dimension u32, then per
    record an id (u16 length + UTF-8 bytes) and dimension float32 values, all
    little-endian with records sorted by id.
    """
    table = table.sorted_by_id()
    out = bytearray()
    out += FEATURE_MAGIC
    out += struct.pack("<HQI", FORMAT_VERSION, len(table), table.dim)
    for photo_id, vector in table.items():
        encoded = photo_id.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise ValueError(f"photo id too long to encode: {photo_id[:32]!r}...")
        out += struct.pack("<H", len(encoded))
        out += encoded
        out += np.ascontiguousarray(vector, dtype="<f4").tobytes()
    close = False
    if isinstance(sink, (str, Path)):
        sink = open(sink, "wb")
        close = True
    try:
        sink.write(bytes(out))
    finally:
        if close:
            sink.close()
    return len(out)


def read_features(source):
    """Read a feature file back into a FeatureTable (exact float32 payloads)."""
    reader = _Reader(_read_all(source))
    _check_header(reader, FEATURE_MAGIC, "feature")
    count, dim = reader.unpack("<QI", "record count and dimension")
    ids = []
    rows = []
    for _ in range(count):
        (id_len,) = reader.unpack("<H", "id length")
        try:
            photo_id = bytes(reader.take(id_len, "photo id")).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FeatureFormatError(f"undecodable photo id: {exc}") from None
        payload = reader.take(4 * dim, f"vector for {photo_id!r}")
        rows.append(np.frombuffer(payload, dtype="<f4"))
        ids.append(photo_id)
    if reader.remaining():
        raise FeatureFormatError(
            f"{reader.remaining()} trailing bytes after {count} declared records"
        )
    matrix = np.stack(rows) if rows else np.zeros((0, dim), dtype=np.float32)
    return FeatureTable(ids, matrix)


def write_feature_maps(maps, sink):
    """Write FeatureMaps in the raw-map fixture format; returns byte count.

    Layout: magic PHFM, version u16, then per record the photo id (u16 length
    + UTF-8), layer u16, C u32, M u32, and C*M float32 values, little-endian.
    """
    out = bytearray()
    out += MAP_MAGIC
    out += struct.pack("<H", FORMAT_VERSION)
    for fmap in maps:
        encoded = fmap.photo_id.encode("utf-8")
        out += struct.pack("<H", len(encoded))
        out += encoded
        out += struct.pack("<HII", fmap.layer_index, fmap.channels, fmap.positions)
        out += np.ascontiguousarray(fmap.data, dtype="<f4").tobytes()
    close = False
    if isinstance(sink, (str, Path)):
        sink = open(sink, "wb")
        close = True
    try:
        sink.write(bytes(out))
    finally:
        if close:
            sink.close()
    return len(out)


def read_feature_maps(source):
    """Read a raw-map file; records run to end of stream."""
    reader = _Reader(_read_all(source))
    _check_header(reader, MAP_MAGIC, "feature-map")
    maps = []
    while reader.remaining():
        (id_len,) = reader.unpack("<H", "id length")
        try:
            photo_id = bytes(reader.take(id_len, "photo id")).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FeatureFormatError(f"undecodable photo id: {exc}") from None
        layer, channels, positions = reader.unpack("<HII", f"map header for {photo_id!r}")
        payload = reader.take(4 * channels * positions, f"map data for {photo_id!r}")
        data = np.frombuffer(payload, dtype="<f4").reshape(channels, positions)
        maps.append(FeatureMap(photo_id, layer, data))
    return maps


# -- layer/kernel selection experiment ---------------------------------------


class AestheticSets:
    """Disjoint groups of photo ids annotated as aesthetically similar."""

    def __init__(self, groups):
        groups = tuple(tuple(str(p) for p in g) for g in groups)
        seen = set()
        for g in groups:
            if len(g) < 2:
                raise ValueError(f"aesthetic set {g} has fewer than 2 photos")
            for p in g:
                if p in seen:
                    raise ValueError(f"photo {p!r} appears in more than one aesthetic set")
                seen.add(p)
        self.groups = groups
        self._group_of = {p: gi for gi, g in enumerate(groups) for p in g}

    @classmethod
    def from_json(cls, source):
        if isinstance(source, (str, Path)):
            payload = Path(source).read_text(encoding="utf-8")
        else:
            payload = source.read()
        groups = json.loads(payload)
        if not isinstance(groups, list) or not all(isinstance(g, list) for g in groups):
            raise ValueError("aesthetic sets file must be a JSON array of arrays")
        return cls(groups)

    def to_json(self, sink):
        text = json.dumps([list(g) for g in self.groups], ensure_ascii=False)
        if isinstance(sink, (str, Path)):
            Path(sink).write_text(text + "\n", encoding="utf-8")
        else:
            sink.write(text + "\n")

    def photos(self):
        """All annotated ids, sorted."""
        return sorted(self._group_of)

    def same_group(self, a, b):
        return self._group_of.get(a) is not None and self._group_of.get(a) == self._group_of.get(b)

    def pair_count(self):
        n = len(self._group_of)
        return n * (n - 1) // 2

    def within_pair_count(self):
        return sum(len(g) * (len(g) - 1) // 2 for g in self.groups)


def _topk_pair_precision(table, sets, kernel, k):
    photos = sets.photos()
    for p in photos:
        if p not in table:
            raise MissingFeatureError(p)
    total_pairs = sets.pair_count()
    if not 1 <= k <= total_pairs:
        raise ValueError(f"k must lie in [1, {total_pairs}], got {k}")
    vectors = np.stack([table.vector(p) for p in photos]).astype(np.float64)
    sims = pairwise_feature_similarity(vectors, kernel)
    scored = [
        (-sims[a, b], photos[a], photos[b])
        for a, b in combinations(range(len(photos)), 2)
    ]
    scored.sort()
    hits = sum(1 for _, pa, pb in scored[:k] if sets.same_group(pa, pb))
    return hits / k


def pairwise_topk_precision(tables, sets, kernel, k):
    """Precision@k of same-set membership among the k most similar photo pairs.

    tables maps layer index -> FeatureTable; the result maps layer index to
    the fraction of the top-k pairs (ties broken by lexicographic pair id)
    whose photos share an aesthetic set.
    """
    kernel_rank(kernel)
    return {layer: _topk_pair_precision(table, sets, kernel, k) for layer, table in tables.items()}


def sweep_layers(tables, sets, kernels=KERNEL_ORDER, ks=(10, 15)):
    """Precision@k for every (layer, kernel, k) combination.

    Returns {(layer, kernel): [precision per k]} in the k order given.
    """
    results = {}
    for kernel in kernels:
        for k in ks:
            per_layer = pairwise_topk_precision(tables, sets, kernel, k)
            for layer, precision in per_layer.items():
                results.setdefault((layer, kernel), []).append(precision)
    return results


def select_best_configuration(results):
    """Pick the (layer, kernel) with the highest mean precision across k values.

    Ties go to the lower layer index, then to kernel order
    cosine < euclidean < pearson.
    """
    if not results:
        raise ValueError("no layer/kernel results to select from")
    return min(
        results,
        key=lambda lk: (-float(np.mean(results[lk])), lk[0], kernel_rank(lk[1])),
    )
