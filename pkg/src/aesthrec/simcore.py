"""Similarity kernels and the theta-blended item-item similarity.

Kernels apply to dense side-information vectors and to the sparse binary
interaction columns of the training matrix. The blend is
theta * side_kernel(p_j, p_k) + (1 - theta) * interaction_kernel(r_j, r_k).
"""

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .dataset import as_interaction_matrix
from .features import FeatureTable, MissingFeatureError

KERNEL_ORDER = ("cosine", "euclidean", "pearson")


def kernel_rank(name):
    """Deterministic tie-break order for kernels."""
    try:
        return KERNEL_ORDER.index(name)
    except ValueError:
        raise ValueError(f"unknown kernel {name!r}, expected one of {KERNEL_ORDER}") from None


def _as_pair(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 1 or y.ndim != 1:
        raise ValueError("kernel inputs must be 1-D vectors")
    if x.shape[0] != y.shape[0]:
        raise ValueError(f"dimension mismatch: {x.shape[0]} vs {y.shape[0]}")
    return x, y


def cosine(x, y):
    """x.y / (|x||y|); 0 when either vector has zero norm."""
    x, y = _as_pair(x, y)
    nx = np.linalg.norm(x)
    ny = np.linalg.norm(y)
    if nx == 0.0 or ny == 0.0:
        return 0.0
    return float(np.clip(np.dot(x, y) / (nx * ny), -1.0, 1.0))


def pearson(x, y):
    """Cosine of the mean-centered vectors; 0 when either has zero variance."""
    x, y = _as_pair(x, y)
    if x.shape[0] < 2:
        raise ValueError("pearson requires vectors of length >= 2")
    return cosine(x - x.mean(), y - y.mean())


def euclidean_sim(x, y):
    """Distance mapped into (0, 1] by 1 / (1 + |x - y|)."""
    x, y = _as_pair(x, y)
    return 1.0 / (1.0 + float(np.linalg.norm(x - y)))


KERNELS = {"cosine": cosine, "euclidean": euclidean_sim, "pearson": pearson}


def pairwise_feature_similarity(features, kernel):
    """Dense n x n kernel matrix over the rows of a feature matrix."""
    P = np.asarray(features, dtype=np.float64)
    if P.ndim != 2:
        raise ValueError("feature matrix must be 2-D")
    kernel_rank(kernel)
    n = P.shape[0]
    if kernel == "euclidean":
        S = np.empty((n, n), dtype=np.float64)
        for j in range(n):
            d = np.sqrt(((P - P[j]) ** 2).sum(axis=1))
            S[j] = 1.0 / (1.0 + d)
        return S
    if kernel == "pearson":
        if P.shape[1] < 2:
            raise ValueError("pearson requires vectors of length >= 2")
        P = P - P.mean(axis=1, keepdims=True)
    norms = np.linalg.norm(P, axis=1)
    safe = np.where(norms > 0.0, norms, 1.0)
    N = P / safe[:, None]
    S = N @ N.T
    np.clip(S, -1.0, 1.0, out=S)
    S[norms == 0.0, :] = 0.0
    S[:, norms == 0.0] = 0.0
    return S


def pairwise_interaction_similarity(R, kernel):
    """Dense n x n kernel matrix over the binary columns of a user x item matrix.

    Works from co-occurrence counts, so it never densifies the columns.
    """
    kernel_rank(kernel)
    R = sparse.csr_matrix(R).astype(np.float64)
    m = R.shape[0]
    co = np.asarray((R.T @ R).todense(), dtype=np.float64)
    counts = co.diagonal().copy()
    if kernel == "cosine":
        safe = np.where(counts > 0.0, counts, 1.0)
        S = co / np.sqrt(np.outer(safe, safe))
        np.clip(S, -1.0, 1.0, out=S)
        S[counts == 0.0, :] = 0.0
        S[:, counts == 0.0] = 0.0
        return S
    if kernel == "euclidean":
        d2 = counts[:, None] + counts[None, :] - 2.0 * co
        np.clip(d2, 0.0, None, out=d2)
        return 1.0 / (1.0 + np.sqrt(d2))
    if m < 2:
        raise ValueError("pearson over interaction columns requires at least 2 users")
    var = counts - counts * counts / m
    zero = var <= 0.0
    safe = np.where(zero, 1.0, var)
    S = (co - np.outer(counts, counts) / m) / np.sqrt(np.outer(safe, safe))
    np.clip(S, -1.0, 1.0, out=S)
    S[zero, :] = 0.0
    S[:, zero] = 0.0
    return S


def align_features(features, item_tokens, require_all=True):
    """Order a FeatureTable's rows by item token.

    Returns (matrix, covered) where covered flags tokens with a vector; with
    require_all, an uncovered token raises MissingFeatureError instead.
    """
    if isinstance(features, FeatureTable):
        covered = np.array([t in features for t in item_tokens])
        if require_all and not covered.all():
            raise MissingFeatureError(item_tokens[int(np.argmin(covered))])
        matrix = np.zeros((len(item_tokens), features.dim), dtype=np.float64)
        for row, token in enumerate(item_tokens):
            if covered[row]:
                matrix[row] = features.vector(token)
        return matrix, covered
    matrix = np.asarray(features, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] != len(item_tokens):
        raise ValueError(
            f"feature array must have one row per item ({len(item_tokens)}), got shape {matrix.shape}"
        )
    return matrix, np.ones(len(item_tokens), dtype=bool)


@dataclass(frozen=True)
class BlendConfig:
    """Blend weight theta plus the kernel used on each side of the sum."""

    theta: float
    side_kernel: str = "cosine"
    interaction_kernel: str = "cosine"

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError(f"theta must lie in [0, 1], got {self.theta}")
        kernel_rank(self.side_kernel)
        kernel_rank(self.interaction_kernel)


def truncate_row(row, limit):
    """Zero all but the `limit` largest entries; ties keep the lower index."""
    if limit is None or limit >= row.shape[0]:
        return row
    keep = np.argsort(-row, kind="stable")[:limit]
    out = np.zeros_like(row)
    out[keep] = row[keep]
    return out


class SimilarityModel:
    """Item-item blended similarity over a training matrix.

    Read-only after construction; rows are independent, so callers may compute
    them from parallel workers. Feature coverage is checked on access: asking
    for an item without a vector while theta > 0 raises MissingFeatureError.
    """

    def __init__(
        self,
        train,
        config,
        features=None,
        neighbor_limit=None,
        side_matrix=None,
        interaction_matrix=None,
    ):
        self.train = as_interaction_matrix(train)
        if not isinstance(config, BlendConfig):
            raise TypeError("config must be a BlendConfig")
        self.config = config
        if neighbor_limit is not None and neighbor_limit < 1:
            raise ValueError("neighbor_limit must be >= 1")
        self.neighbor_limit = neighbor_limit

        n = self.train.n
        theta = config.theta
        if theta > 0.0 and features is None and side_matrix is None:
            raise ValueError("theta > 0 requires item features")
        if theta < 1.0 and config.interaction_kernel == "pearson" and self.train.m < 2:
            raise ValueError("pearson over interaction columns requires at least 2 users")

        if features is not None:
            self._features, self._covered = align_features(
                features, self.train.items, require_all=False
            )
        else:
            self._features = None
            self._covered = np.ones(n, dtype=bool)

        self._side_full = side_matrix
        self._inter_full = interaction_matrix
        self._counts = self.train.item_counts().astype(np.float64)
        self._csc = None
        self._side_cache = None
        self._matrix = None

    @property
    def n(self):
        return self.train.n

    def _check_covered(self, *indices):
        if self.config.theta <= 0.0:
            return
        for j in indices:
            if not self._covered[j]:
                raise MissingFeatureError(self.train.items[j])

    def _require_full_coverage(self):
        if self.config.theta > 0.0 and not self._covered.all():
            raise MissingFeatureError(self.train.items[int(np.argmin(self._covered))])

    def _check_index(self, j):
        if not 0 <= j < self.n:
            raise IndexError(f"item index {j} outside [0, {self.n})")

    # -- scalar path -------------------------------------------------------

    def _side_pair(self, j, k):
        if self._features is None:
            return float(self._side_full[j, k])
        return KERNELS[self.config.side_kernel](self._features[j], self._features[k])

    def _interaction_pair(self, j, k):
        if self._csc is None:
            self._csc = self.train.tocsc()
        csc = self._csc
        a = csc.indices[csc.indptr[j] : csc.indptr[j + 1]]
        b = csc.indices[csc.indptr[k] : csc.indptr[k + 1]]
        co = float(np.intersect1d(a, b, assume_unique=True).size)
        cj, ck = self._counts[j], self._counts[k]
        kern = self.config.interaction_kernel
        if kern == "cosine":
            if cj == 0.0 or ck == 0.0:
                return 0.0
            return float(np.clip(co / np.sqrt(cj * ck), -1.0, 1.0))
        if kern == "euclidean":
            return 1.0 / (1.0 + np.sqrt(max(cj + ck - 2.0 * co, 0.0)))
        m = self.train.m
        vj = cj - cj * cj / m
        vk = ck - ck * ck / m
        if vj <= 0.0 or vk <= 0.0:
            return 0.0
        return float(np.clip((co - cj * ck / m) / np.sqrt(vj * vk), -1.0, 1.0))

    def blended_similarity(self, j, k):
        """Blend of the two kernels for one unordered item pair (j != k)."""
        self._check_index(j)
        self._check_index(k)
        if j == k:
            raise ValueError("blended similarity is defined for distinct items only")
        theta = self.config.theta
        value = 0.0
        if theta > 0.0:
            self._check_covered(j, k)
            value += theta * self._side_pair(j, k)
        if theta < 1.0:
            value += (1.0 - theta) * self._interaction_pair(j, k)
        return value

    # -- row path ----------------------------------------------------------

    def _side_state(self):
        if self._side_cache is None:
            kern = self.config.side_kernel
            P = self._features
            if kern == "pearson":
                if P.shape[1] < 2:
                    raise ValueError("pearson requires vectors of length >= 2")
                P = P - P.mean(axis=1, keepdims=True)
            if kern == "euclidean":
                self._side_cache = (P, None, None)
            else:
                norms = np.linalg.norm(P, axis=1)
                safe = np.where(norms > 0.0, norms, 1.0)
                self._side_cache = (P, norms, P / safe[:, None])
        return self._side_cache

    def _side_row(self, j):
        if self._features is None:
            return self._side_full[j].astype(np.float64, copy=True)
        P, norms, normalized = self._side_state()
        if self.config.side_kernel == "euclidean":
            d = np.sqrt(((P - P[j]) ** 2).sum(axis=1))
            return 1.0 / (1.0 + d)
        row = normalized @ normalized[j]
        np.clip(row, -1.0, 1.0, out=row)
        row[norms == 0.0] = 0.0
        if norms[j] == 0.0:
            row[:] = 0.0
        return row

    def _interaction_row(self, j):
        R = self.train.tocsr()
        col = R.getcol(j)
        co = np.asarray((R.T @ col).todense(), dtype=np.float64).ravel()
        counts = self._counts
        cj = counts[j]
        kern = self.config.interaction_kernel
        if kern == "cosine":
            if cj == 0.0:
                return np.zeros(self.n)
            safe = np.where(counts > 0.0, counts, 1.0)
            row = co / np.sqrt(cj * safe)
            np.clip(row, -1.0, 1.0, out=row)
            row[counts == 0.0] = 0.0
            return row
        if kern == "euclidean":
            d2 = np.clip(cj + counts - 2.0 * co, 0.0, None)
            return 1.0 / (1.0 + np.sqrt(d2))
        m = self.train.m
        var = counts - counts * counts / m
        vj = var[j]
        if vj <= 0.0:
            return np.zeros(self.n)
        zero = var <= 0.0
        safe = np.where(zero, 1.0, var)
        row = (co - cj * counts / m) / np.sqrt(vj * safe)
        np.clip(row, -1.0, 1.0, out=row)
        row[zero] = 0.0
        return row

    def similarity_row(self, j):
        """Blended similarity of item j against all items; entry j is 0.

        When a neighbor limit is set, only the largest `limit` entries survive.
        """
        self._check_index(j)
        if self._matrix is not None:
            return self._matrix[j].copy()
        self._require_full_coverage()
        theta = self.config.theta
        row = np.zeros(self.n, dtype=np.float64)
        if theta > 0.0:
            row += theta * self._side_row(j)
        if theta < 1.0:
            row += (1.0 - theta) * self._interaction_row(j)
        row[j] = 0.0
        return truncate_row(row, self.neighbor_limit)

    def matrix(self):
        """Full n x n blended similarity with zero diagonal (cached).

        Respects the neighbor limit row-wise, matching similarity_row.
        """
        if self._matrix is None:
            theta = self.config.theta
            self._require_full_coverage()
            n = self.n
            S = np.zeros((n, n), dtype=np.float64)
            if theta > 0.0:
                side = self._side_full
                if side is None:
                    side = pairwise_feature_similarity(self._features, self.config.side_kernel)
                S += theta * side
            if theta < 1.0:
                inter = self._inter_full
                if inter is None:
                    inter = pairwise_interaction_similarity(
                        self.train.tocsr(), self.config.interaction_kernel
                    )
                S += (1.0 - theta) * inter
            np.fill_diagonal(S, 0.0)
            if self.neighbor_limit is not None and self.neighbor_limit < n:
                S = np.vstack([truncate_row(S[j], self.neighbor_limit) for j in range(n)])
            self._matrix = S
        return self._matrix
