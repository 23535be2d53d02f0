"""Per-photo dense feature vectors with a uniform dimension."""

import numpy as np


class MissingFeatureError(LookupError):
    """A photo required by a computation has no feature vector."""

    def __init__(self, photo_id):
        super().__init__(f"no feature vector for photo {photo_id!r}")
        self.photo_id = photo_id


class FeatureTable:
    """Immutable table of float32 feature vectors keyed by photo id.

    Vectors share one dimension; ids are unique. Used for color histograms,
    style vectors, and metadata multi-hots alike.
    """

    def __init__(self, ids, matrix):
        ids = tuple(str(i) for i in ids)
        matrix = np.asarray(matrix, dtype=np.float32)
        if matrix.ndim != 2:
            raise ValueError(f"feature matrix must be 2-D, got shape {matrix.shape}")
        if len(ids) != matrix.shape[0]:
            raise ValueError(f"{len(ids)} ids but {matrix.shape[0]} vectors")
        if len(set(ids)) != len(ids):
            seen, dup = set(), None
            for i in ids:
                if i in seen:
                    dup = i
                    break
                seen.add(i)
            raise ValueError(f"duplicate photo id {dup!r}")
        self._ids = ids
        self._index = {photo_id: row for row, photo_id in enumerate(ids)}
        self._matrix = matrix
        self._matrix.setflags(write=False)

    @classmethod
    def from_mapping(cls, mapping):
        """Build from a {photo_id: vector} mapping, preserving iteration order."""
        ids = list(mapping)
        if not ids:
            return cls((), np.zeros((0, 0), dtype=np.float32))
        return cls(ids, np.stack([np.asarray(mapping[i], dtype=np.float32) for i in ids]))

    @property
    def ids(self):
        return self._ids

    @property
    def matrix(self):
        return self._matrix

    @property
    def dim(self):
        return self._matrix.shape[1]

    def __len__(self):
        return len(self._ids)

    def __contains__(self, photo_id):
        return photo_id in self._index

    def row_of(self, photo_id):
        return self._index[photo_id]

    def vector(self, photo_id):
        try:
            return self._matrix[self._index[photo_id]]
        except KeyError:
            raise MissingFeatureError(photo_id) from None

    def items(self):
        for photo_id in self._ids:
            yield photo_id, self._matrix[self._index[photo_id]]

    def sorted_by_id(self):
        order = sorted(range(len(self._ids)), key=lambda r: self._ids[r])
        return FeatureTable([self._ids[r] for r in order], self._matrix[order])

    def __eq__(self, other):
        if not isinstance(other, FeatureTable):
            return NotImplemented
        return (
            self._ids == other._ids
            and self._matrix.shape == other._matrix.shape
            and np.array_equal(
                self._matrix.view(np.uint32), other._matrix.view(np.uint32)
            )
        )

    def __repr__(self):
        return f"FeatureTable({len(self)} photos, dim={self.dim})"
