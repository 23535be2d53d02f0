"""Recommenders: item-item NN scoring plus Random and Popular baselines.

All models follow the estimator convention: parameters at construction, state
built by fit(train), then score/rank/rank_all over the training matrix. Ranked
lists never contain items from the user's training row.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .dataset import as_interaction_matrix
from .runtime import thread_count
from .simcore import BlendConfig, SimilarityModel


@dataclass(frozen=True)
class RankedList:
    """Strictly ordered recommendations for one user."""

    user_id: str
    items: np.ndarray
    scores: np.ndarray

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        return iter(zip(self.items.tolist(), self.scores.tolist()))


class _RankingMixin:
    """Shared ranking given a per-user score vector over all items."""

    def _user_index(self, user):
        if isinstance(user, str):
            try:
                return self.train_.user_index[user]
            except KeyError:
                raise ValueError(f"unknown user token {user!r}") from None
        u = int(user)
        if not 0 <= u < self.train_.m:
            raise ValueError(f"user index {u} outside [0, {self.train_.m})")
        return u

    def score(self, user, item):
        """Predicted affinity of one user for one item."""
        check_is_fitted(self, "train_")
        u = self._user_index(user)
        j = int(item)
        if not 0 <= j < self.train_.n:
            raise ValueError(f"item index {j} outside [0, {self.train_.n})")
        return float(self.score_items(u)[j])

    def rank(self, user, k):
        """Top-k items by score, excluding the user's training items.

        Ties break toward the lower item index; fewer than k candidates yield
        a shorter list.
        """
        check_is_fitted(self, "train_")
        if k < 1:
            raise ValueError("k must be >= 1")
        u = self._user_index(user)
        scores = self.score_items(u)
        candidates = np.setdiff1d(
            np.arange(self.train_.n), self.train_.user_items(u), assume_unique=True
        )
        order = np.argsort(-scores[candidates], kind="stable")[:k]
        chosen = candidates[order]
        return RankedList(self.train_.users[u], chosen, scores[chosen])

    def rank_all(self, users=None, k=10):
        """rank() for many users; unknown tokens are reported together."""
        check_is_fitted(self, "train_")
        if users is None:
            users = list(range(self.train_.m))
        unknown = [u for u in users if isinstance(u, str) and u not in self.train_.user_index]
        if unknown:
            raise ValueError(f"unknown user tokens: {', '.join(repr(u) for u in unknown)}")
        threads = min(thread_count(), len(users)) if users else 1
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                return list(pool.map(lambda u: self.rank(u, k), users))
        return [self.rank(u, k) for u in users]


def _mix64(x):
    # splitmix64 finalizer over uint64 arrays; wrapping arithmetic is intended
    x = x + np.uint64(0x9E3779B97F4A7C15)
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


class RandomRecommender(BaseEstimator, _RankingMixin):
    """Uniform pseudo-random scores from a stateless hash of (seed, user, item).

    The same seed gives identical rankings on every run and platform; no
    counter or RNG state is kept.
    """

    def __init__(self, seed=0):
        self.seed = seed

    def fit(self, X, y=None):
        self.train_ = as_interaction_matrix(X)
        return self

    def score_items(self, u):
        n = self.train_.n
        x = np.full(n, self.seed & 0xFFFFFFFFFFFFFFFF, dtype=np.uint64)
        x = _mix64(x)
        x ^= np.uint64(int(u) & 0xFFFFFFFFFFFFFFFF)
        x = _mix64(x)
        x ^= np.arange(n, dtype=np.uint64)
        x = _mix64(x)
        return x.astype(np.float64) / 2.0**64


class PopularityRecommender(BaseEstimator, _RankingMixin):
    """Scores every item by its number of training likes, identically per user."""

    def fit(self, X, y=None):
        self.train_ = as_interaction_matrix(X)
        self.counts_ = self.train_.item_counts().astype(np.float64)
        return self

    def score_items(self, u):
        return self.counts_


class ItemNNRecommender(BaseEstimator, _RankingMixin):
    """Item-item nearest-neighbor scoring over the blended similarity.

    The unnormalized score of item j for user i sums the blended similarity of
    j to every item in the user's training row; the normalized variant divides
    by the similarity of j to all items (score 0 when that sum is exactly 0).
    """

    def __init__(
        self,
        theta=0.0,
        side_kernel="cosine",
        interaction_kernel="cosine",
        normalize=False,
        neighbor_limit=None,
        dense_cutoff=4096,
    ):
        self.theta = theta
        self.side_kernel = side_kernel
        self.interaction_kernel = interaction_kernel
        self.normalize = normalize
        self.neighbor_limit = neighbor_limit
        self.dense_cutoff = dense_cutoff

    def fit(self, X, item_features=None):
        """Build the similarity model over the training matrix.

        item_features (FeatureTable or array aligned to item indices) is
        required when theta > 0.
        """
        train = as_interaction_matrix(X)
        config = BlendConfig(self.theta, self.side_kernel, self.interaction_kernel)
        model = SimilarityModel(
            train, config, features=item_features, neighbor_limit=self.neighbor_limit
        )
        return self._adopt(model)

    @classmethod
    def from_similarity_model(cls, model, normalize=False, dense_cutoff=4096):
        """Wrap an existing SimilarityModel as a fitted recommender."""
        est = cls(
            theta=model.config.theta,
            side_kernel=model.config.side_kernel,
            interaction_kernel=model.config.interaction_kernel,
            normalize=normalize,
            neighbor_limit=model.neighbor_limit,
            dense_cutoff=dense_cutoff,
        )
        return est._adopt(model)

    def _adopt(self, model):
        self.similarity_ = model
        self.train_ = model.train
        n = model.n
        # materialize S when small; truncation is row-defined, so it always
        # materializes rather than relying on symmetry
        if self.neighbor_limit is not None or n <= self.dense_cutoff:
            self._S = model.matrix()
            self._row_sums = self._S.sum(axis=1)
        else:
            self._S = None
            self._row_sums = None
        return self

    def _ensure_row_sums(self):
        if self._row_sums is None:
            sums = np.empty(self.train_.n, dtype=np.float64)
            for j in range(self.train_.n):
                sums[j] = self.similarity_.similarity_row(j).sum()
            self._row_sums = sums
        return self._row_sums

    def score_items(self, u):
        liked = self.train_.user_items(u)
        n = self.train_.n
        if liked.size == 0:
            return np.zeros(n, dtype=np.float64)
        if self._S is not None:
            raw = self._S[:, liked].sum(axis=1)
        else:
            raw = np.zeros(n, dtype=np.float64)
            for k in liked:
                # symmetric untruncated blend: column k equals row k
                raw += self.similarity_.similarity_row(int(k))
        if not self.normalize:
            return raw
        denom = self._ensure_row_sums()
        out = np.zeros(n, dtype=np.float64)
        nonzero = denom != 0.0
        out[nonzero] = raw[nonzero] / denom[nonzero]
        return out


def write_ranked_lists(ranked_lists, item_tokens, sink):
    """Serialize ranked lists as `user_id\\trank\\tphoto_id\\tscore` (rank from 1)."""
    close = False
    if isinstance(sink, (str, Path)):
        sink = open(sink, "w", encoding="utf-8", newline="")
        close = True
    try:
        for ranked in ranked_lists:
            for position, (item, score) in enumerate(ranked, start=1):
                sink.write(f"{ranked.user_id}\t{position}\t{item_tokens[item]}\t{score!r}\n")
    finally:
        if close:
            sink.close()
