"""Interaction logs, the binary user-photo matrix, and temporal splits."""

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import sparse

from .features import FeatureTable


class ParseError(ValueError):
    """Malformed input line; carries the 1-based line number."""

    def __init__(self, line_no, message):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class InsufficientDataError(ValueError):
    """Too few interactions (or a degenerate timeline) for the requested splits."""


@dataclass(frozen=True)
class Interaction:
    """One observed positive user-photo event."""

    user_id: str
    photo_id: str
    timestamp: int


@dataclass(frozen=True)
class MetadataRecord:
    """Editorial metadata attached to one photo."""

    photo_id: str
    categories: frozenset
    keywords: frozenset
    editors_choice: bool


def _open_lines(source):
    if isinstance(source, (str, Path)):
        return open(source, "r", encoding="utf-8", newline="")
    if isinstance(source, (bytes, bytearray)):
        return io.StringIO(source.decode("utf-8"))
    if hasattr(source, "read"):
        first = source.read(0)
        if isinstance(first, bytes):
            return io.TextIOWrapper(source, encoding="utf-8")
        return source
    raise TypeError(f"cannot read interactions from {type(source).__name__}")


def load_interactions(source):
    """Parse a `user_id\\tphoto_id\\ttimestamp` TSV into Interactions.

    Duplicate (user, photo) pairs collapse to the earliest timestamp. The
    result is sorted by timestamp, ties broken by (user_id, photo_id).
    """
    earliest = {}
    stream = _open_lines(source)
    try:
        for line_no, raw in enumerate(stream, start=1):
            line = raw.rstrip("\r\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError(line_no, f"expected 3 tab-separated fields, got {len(parts)}")
            user_id, photo_id, ts_text = parts
            if not user_id or not photo_id:
                raise ParseError(line_no, "empty user or photo id")
            try:
                timestamp = int(ts_text)
            except ValueError:
                raise ParseError(line_no, f"bad timestamp {ts_text!r}") from None
            if timestamp < 0:
                raise ValueError(f"line {line_no}: negative timestamp {timestamp}")
            key = (user_id, photo_id)
            if key not in earliest or timestamp < earliest[key]:
                earliest[key] = timestamp
    finally:
        if stream is not source:
            stream.close()
    records = [Interaction(u, p, t) for (u, p), t in earliest.items()]
    records.sort(key=lambda r: (r.timestamp, r.user_id, r.photo_id))
    return records


def write_interactions(interactions, sink):
    """Serialize interactions back to the TSV interchange format."""
    close = False
    if isinstance(sink, (str, Path)):
        sink = open(sink, "w", encoding="utf-8", newline="")
        close = True
    try:
        for r in interactions:
            sink.write(f"{r.user_id}\t{r.photo_id}\t{r.timestamp}\n")
    finally:
        if close:
            sink.close()


class InteractionMatrix:
    """Sparse binary user x photo matrix with per-cell timestamps.

    Stored cells are implicit ones; token maps are bijections onto dense
    indices assigned in first-appearance order. Immutable after construction.
    """

    def __init__(self, users, items, indptr, item_idx, times):
        self.users = tuple(users)
        self.items = tuple(items)
        self.user_index = {u: i for i, u in enumerate(self.users)}
        self.item_index = {p: j for j, p in enumerate(self.items)}
        self._indptr = np.asarray(indptr, dtype=np.int64)
        self._item_idx = np.asarray(item_idx, dtype=np.int64)
        self._times = np.asarray(times, dtype=np.int64)
        for arr in (self._indptr, self._item_idx, self._times):
            arr.setflags(write=False)
        self._csr = None
        self._csc = None

    @classmethod
    def from_interactions(cls, interactions, user_index=None, item_index=None):
        if user_index is None:
            user_index = {}
            for r in interactions:
                user_index.setdefault(r.user_id, len(user_index))
        if item_index is None:
            item_index = {}
            for r in interactions:
                item_index.setdefault(r.photo_id, len(item_index))

        per_user = [[] for _ in range(len(user_index))]
        seen = {}
        for r in interactions:
            try:
                u = user_index[r.user_id]
                j = item_index[r.photo_id]
            except KeyError as exc:
                raise KeyError(f"token {exc.args[0]!r} missing from the shared index maps") from None
            key = (u, j)
            if key in seen:
                prev = seen[key]
                if r.timestamp < per_user[u][prev][1]:
                    per_user[u][prev] = (j, r.timestamp)
            else:
                seen[key] = len(per_user[u])
                per_user[u].append((j, r.timestamp))

        indptr = np.zeros(len(user_index) + 1, dtype=np.int64)
        item_idx = []
        times = []
        for u, row in enumerate(per_user):
            row.sort()
            indptr[u + 1] = indptr[u] + len(row)
            item_idx.extend(j for j, _ in row)
            times.extend(t for _, t in row)

        users = [None] * len(user_index)
        for token, u in user_index.items():
            users[u] = token
        items = [None] * len(item_index)
        for token, j in item_index.items():
            items[j] = token
        return cls(users, items, indptr, item_idx, times)

    @classmethod
    def from_csr(cls, matrix):
        """Wrap a plain scipy matrix, synthesizing u<i>/p<j> tokens (timestamps 0)."""
        matrix = sparse.csr_matrix(matrix)
        m, n = matrix.shape
        indptr = matrix.indptr.astype(np.int64)
        item_idx = matrix.indices.astype(np.int64)
        for u in range(m):
            lo, hi = indptr[u], indptr[u + 1]
            item_idx[lo:hi] = np.sort(item_idx[lo:hi])
        return cls(
            [f"u{i}" for i in range(m)],
            [f"p{j}" for j in range(n)],
            indptr,
            item_idx,
            np.zeros(len(item_idx), dtype=np.int64),
        )

    @property
    def m(self):
        return len(self.users)

    @property
    def n(self):
        return len(self.items)

    @property
    def nnz(self):
        return int(self._indptr[-1])

    def density(self):
        cells = self.m * self.n
        return self.nnz / cells if cells else 0.0

    def user_items(self, u):
        """Item indices the user interacted with, strictly increasing."""
        return self._item_idx[self._indptr[u] : self._indptr[u + 1]]

    def user_times(self, u):
        return self._times[self._indptr[u] : self._indptr[u + 1]]

    def tocsr(self):
        if self._csr is None:
            self._csr = sparse.csr_matrix(
                (np.ones(self.nnz, dtype=np.float64), self._item_idx, self._indptr),
                shape=(self.m, self.n),
            )
        return self._csr

    def tocsc(self):
        if self._csc is None:
            self._csc = self.tocsr().tocsc()
        return self._csc

    def item_counts(self):
        """Number of likes per item over this matrix."""
        counts = np.zeros(self.n, dtype=np.int64)
        np.add.at(counts, self._item_idx, 1)
        return counts

    def to_interactions(self):
        out = []
        for u in range(self.m):
            for j, t in zip(self.user_items(u), self.user_times(u)):
                out.append(Interaction(self.users[u], self.items[int(j)], int(t)))
        out.sort(key=lambda r: (r.timestamp, r.user_id, r.photo_id))
        return out

    def __repr__(self):
        return f"InteractionMatrix(m={self.m}, n={self.n}, nnz={self.nnz})"


def build_matrix(interactions, user_index=None, item_index=None):
    """Build an InteractionMatrix; optional shared token maps keep splits aligned."""
    return InteractionMatrix.from_interactions(interactions, user_index, item_index)


def as_interaction_matrix(X):
    """Accept an InteractionMatrix or any scipy-convertible binary matrix."""
    if isinstance(X, InteractionMatrix):
        return X
    return InteractionMatrix.from_csr(X)


@dataclass(frozen=True)
class SplitTriple:
    """One temporally ordered train/validation/test partition of a window."""

    train: InteractionMatrix
    validation: InteractionMatrix
    test: InteractionMatrix
    boundaries: tuple


def temporal_split(interactions, num_splits, train_frac=0.8, valid_frac=0.1):
    """Cut the timeline into overlapping windows and split each by timestamp quantile.

    Windows slide with 50% overlap across the timestamp-sorted interactions;
    within a window the boundaries t1 and t2 sit at the train_frac and
    train_frac+valid_frac quantiles, so train < t1 <= validation < t2 <= test.
    All triples share the token maps built from the full input.
    """
    if num_splits < 1:
        raise ValueError("num_splits must be >= 1")
    if not (0 < train_frac and 0 < valid_frac and train_frac + valid_frac < 1):
        raise ValueError("need 0 < train_frac, 0 < valid_frac, train_frac + valid_frac < 1")
    n = len(interactions)
    if n < 3 * num_splits:
        raise InsufficientDataError(f"{n} interactions cannot produce {num_splits} splits")
    for a, b in zip(interactions, interactions[1:]):
        if a.timestamp > b.timestamp:
            raise ValueError("interactions must be sorted by timestamp")

    user_index = {}
    item_index = {}
    for r in interactions:
        user_index.setdefault(r.user_id, len(user_index))
        item_index.setdefault(r.photo_id, len(item_index))

    width = 2.0 / (num_splits + 1)
    stride = width / 2.0
    triples = []
    for s in range(num_splits):
        lo = round(n * s * stride)
        hi = round(n * (s * stride + width))
        window = interactions[lo:hi]
        w = len(window)
        if w < 3:
            raise InsufficientDataError(f"split {s}: window of {w} interactions is too small")
        t1 = window[min(int(w * train_frac), w - 1)].timestamp
        t2 = window[min(int(w * (train_frac + valid_frac)), w - 1)].timestamp
        train = [r for r in window if r.timestamp < t1]
        valid = [r for r in window if t1 <= r.timestamp < t2]
        test = [r for r in window if r.timestamp >= t2]
        if not train or not valid or not test:
            raise InsufficientDataError(
                f"split {s}: degenerate timeline, boundaries ({t1}, {t2}) leave an empty part"
            )
        triples.append(
            SplitTriple(
                train=build_matrix(train, user_index, item_index),
                validation=build_matrix(valid, user_index, item_index),
                test=build_matrix(test, user_index, item_index),
                boundaries=(t1, t2),
            )
        )
    return triples


def load_metadata(source):
    """Parse `photo_id\\tcategories\\tkeywords\\teditors_choice` TSV records."""
    records = []
    seen = set()
    stream = _open_lines(source)
    try:
        for line_no, raw in enumerate(stream, start=1):
            line = raw.rstrip("\r\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ParseError(line_no, f"expected 4 tab-separated fields, got {len(parts)}")
            photo_id, cats, keys, choice = parts
            if not photo_id:
                raise ParseError(line_no, "empty photo id")
            if photo_id in seen:
                raise ParseError(line_no, f"duplicate metadata for photo {photo_id!r}")
            if choice not in ("0", "1"):
                raise ParseError(line_no, f"editors_choice must be 0 or 1, got {choice!r}")
            seen.add(photo_id)
            records.append(
                MetadataRecord(
                    photo_id=photo_id,
                    categories=frozenset(t for t in cats.split(",") if t),
                    keywords=frozenset(t for t in keys.split(",") if t),
                    editors_choice=choice == "1",
                )
            )
    finally:
        if stream is not source:
            stream.close()
    return records


def metadata_to_features(records, vocabulary=None):
    """Multi-hot metadata vectors over categories+keywords, plus an editors-choice dim.

    The vocabulary defaults to the sorted union of all tokens so the layout is
    reproducible; photos with no matching tokens get all-zero blocks.
    """
    if vocabulary is None:
        vocab = set()
        for r in records:
            vocab |= r.categories
            vocab |= r.keywords
        vocabulary = sorted(vocab)
    slot = {token: i for i, token in enumerate(vocabulary)}
    dim = len(vocabulary) + 1
    matrix = np.zeros((len(records), dim), dtype=np.float32)
    ids = []
    for row, r in enumerate(records):
        ids.append(r.photo_id)
        for token in r.categories | r.keywords:
            i = slot.get(token)
            if i is not None:
                matrix[row, i] = 1.0
        matrix[row, dim - 1] = 1.0 if r.editors_choice else 0.0
    return FeatureTable(ids, matrix)
