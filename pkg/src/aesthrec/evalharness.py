"""Ranking metrics, per-split evaluation, confidence intervals, and grid tuning."""

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .recommender import ItemNNRecommender
from .simcore import (
    BlendConfig,
    KERNEL_ORDER,
    SimilarityModel,
    align_features,
    kernel_rank,
    pairwise_feature_similarity,
    pairwise_interaction_similarity,
)

OBJECTIVES = ("precision", "r_precision", "average_precision")


class EmptyEvaluationError(ValueError):
    """The requested phase contains no user with a positive interaction."""


def _ranked_items(ranked):
    items = getattr(ranked, "items", ranked)
    return np.asarray(items, dtype=np.int64)


def precision_at_k(ranked, relevant, k):
    """Fraction of the top-k ranked items that are relevant.

    The divisor stays k even when the list is shorter; an empty relevant set
    scores 0.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    items = _ranked_items(ranked)[:k]
    relevant = np.asarray(list(relevant), dtype=np.int64)
    return float(np.isin(items, relevant).sum()) / k


def r_precision(ranked, relevant):
    """Precision at R where R is the number of relevant items (0 if R = 0)."""
    relevant = np.asarray(list(relevant), dtype=np.int64)
    R = relevant.size
    if R == 0:
        return 0.0
    items = _ranked_items(ranked)[:R]
    return float(np.isin(items, relevant).sum()) / R


def average_precision(ranked, relevant):
    """Mean of precision-at-rank over the relevant items.

    Relevant items missing from the ranking contribute 0; the divisor is the
    full relevant count.
    """
    relevant = np.asarray(list(relevant), dtype=np.int64)
    R = relevant.size
    if R == 0:
        return 0.0
    items = _ranked_items(ranked)
    hits = np.isin(items, relevant)
    if not hits.any():
        return 0.0
    ranks = np.flatnonzero(hits) + 1
    found = np.arange(1, ranks.size + 1)
    return float((found / ranks).sum()) / R


def metric_key(objective, k):
    if objective == "precision":
        return f"precision_at_{k}"
    if objective in ("r_precision", "average_precision"):
        return objective
    raise ValueError(f"objective must be one of {OBJECTIVES}, got {objective!r}")


def evaluate(model, split, phase="test", k=10, rank_len=None):
    """Mean Precision@k, R-Precision, and AP over users with phase positives.

    Users without a positive in the phase matrix are skipped. Ranking sees
    only the training matrix; relevance comes only from the phase matrix. The
    generated list length defaults to max(100, 10 * |relevant|) so truncation
    barely affects AP.
    """
    if phase not in ("validation", "test"):
        raise ValueError(f"phase must be 'validation' or 'test', got {phase!r}")
    phase_matrix = split.validation if phase == "validation" else split.test
    per_user = {metric_key("precision", k): [], "r_precision": [], "average_precision": []}
    for u in range(phase_matrix.m):
        relevant = phase_matrix.user_items(u)
        if relevant.size == 0:
            continue
        length = rank_len if rank_len is not None else max(100, 10 * relevant.size, k)
        ranked = model.rank(u, length)
        per_user[metric_key("precision", k)].append(precision_at_k(ranked, relevant, k))
        per_user["r_precision"].append(r_precision(ranked, relevant))
        per_user["average_precision"].append(average_precision(ranked, relevant))
    if not per_user["r_precision"]:
        raise EmptyEvaluationError(f"no user has a positive interaction in the {phase} set")
    return {name: float(np.mean(values)) for name, values in per_user.items()}


def aggregate_ci(per_split_means, method="t"):
    """Mean and 95% CI halfwidth over per-split metric means.

    Student-t by default (n - 1 degrees of freedom); method='normal' switches
    to the normal approximation.
    """
    values = np.asarray(list(per_split_means), dtype=np.float64)
    if values.size < 2:
        raise ValueError("confidence interval needs at least 2 split means")
    mean = float(values.mean())
    s = float(values.std(ddof=1))
    if method == "t":
        multiplier = float(stats.t.ppf(0.975, values.size - 1))
    elif method == "normal":
        multiplier = float(stats.norm.ppf(0.975))
    else:
        raise ValueError(f"method must be 't' or 'normal', got {method!r}")
    return mean, multiplier * s / math.sqrt(values.size)


@dataclass(frozen=True)
class MetricResult:
    """One metric aggregated across splits."""

    name: str
    per_split: tuple
    mean: float
    ci_halfwidth: float


def summarize_metric(name, per_split, ci_method="t"):
    per_split = tuple(float(v) for v in per_split)
    if len(per_split) == 1:
        return MetricResult(name, per_split, per_split[0], 0.0)
    mean, half = aggregate_ci(per_split, method=ci_method)
    return MetricResult(name, per_split, mean, half)


@dataclass(frozen=True)
class TuneGrid:
    """Search space for the blend weight and the two kernels."""

    thetas: tuple = (0.0, 0.01, 0.02, 0.04, 0.08, 0.1, 0.2, 0.4, 0.8, 1.0)
    side_kernels: tuple = KERNEL_ORDER
    interaction_kernels: tuple = KERNEL_ORDER

    def __post_init__(self):
        if not self.thetas or not self.side_kernels or not self.interaction_kernels:
            raise ValueError("grid axes must be non-empty")
        for theta in self.thetas:
            if not 0.0 <= theta <= 1.0:
                raise ValueError(f"theta must lie in [0, 1], got {theta}")
        for kern in tuple(self.side_kernels) + tuple(self.interaction_kernels):
            kernel_rank(kern)

    def cells(self):
        for theta in self.thetas:
            for side in self.side_kernels:
                for inter in self.interaction_kernels:
                    yield BlendConfig(float(theta), side, inter)


@dataclass(frozen=True)
class TuneCell:
    config: BlendConfig
    per_split: tuple
    mean: float


@dataclass(frozen=True)
class TuneResult:
    best: BlendConfig
    objective: str
    k: int
    cells: tuple


def tune(grid, splits, features=None, objective="precision", k=10, normalize=False):
    """Grid-search theta and the kernel pair on the validation sets.

    Side and interaction kernel matrices are computed once per kernel (and
    split) and reused across theta values. The winner maximizes the mean
    validation objective; ties prefer smaller theta, then kernel order.
    """
    if objective not in OBJECTIVES:
        raise ValueError(f"objective must be one of {OBJECTIVES}, got {objective!r}")
    splits = list(splits)
    if not splits:
        raise ValueError("tune needs at least one split")
    key = metric_key(objective, k)

    needs_side = any(theta > 0.0 for theta in grid.thetas)
    needs_inter = any(theta < 1.0 for theta in grid.thetas)
    side_mats = {}
    if needs_side:
        if features is None:
            raise ValueError("grid includes theta > 0 but no item features were given")
        first_items = splits[0].train.items
        for split in splits[1:]:
            if split.train.items != first_items:
                raise ValueError("splits must share one item index map")
        aligned, _ = align_features(features, first_items, require_all=True)
        for kern in grid.side_kernels:
            side_mats[kern] = pairwise_feature_similarity(aligned, kern)

    inter_mats = []
    for split in splits:
        per_kernel = {}
        if needs_inter:
            R = split.train.tocsr()
            for kern in grid.interaction_kernels:
                per_kernel[kern] = pairwise_interaction_similarity(R, kern)
        inter_mats.append(per_kernel)

    cells = []
    for config in grid.cells():
        per_split = []
        for split, inter in zip(splits, inter_mats):
            model = SimilarityModel(
                split.train,
                config,
                features=features,
                side_matrix=side_mats.get(config.side_kernel),
                interaction_matrix=inter.get(config.interaction_kernel),
            )
            recommender = ItemNNRecommender.from_similarity_model(model, normalize=normalize)
            per_split.append(evaluate(recommender, split, "validation", k)[key])
        cells.append(TuneCell(config, tuple(per_split), float(np.mean(per_split))))

    best = min(
        cells,
        key=lambda cell: (
            -cell.mean,
            cell.config.theta,
            kernel_rank(cell.config.side_kernel),
            kernel_rank(cell.config.interaction_kernel),
        ),
    )
    return TuneResult(best.config, objective, k, tuple(cells))
