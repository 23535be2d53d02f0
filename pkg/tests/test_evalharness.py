import math

import numpy as np
import pytest
from scipy import sparse

from aesthrec.dataset import Interaction, InteractionMatrix, SplitTriple, temporal_split
from aesthrec.evalharness import (
    EmptyEvaluationError,
    TuneGrid,
    aggregate_ci,
    average_precision,
    evaluate,
    precision_at_k,
    r_precision,
    summarize_metric,
    tune,
)
from aesthrec.features import FeatureTable
from aesthrec.recommender import ItemNNRecommender, PopularityRecommender
from aesthrec.simcore import BlendConfig

from testutil import make_interactions
from reference import ref_average_precision, ref_precision_at_k, ref_r_precision


class TestMetrics:
    def test_precision_examples(self):
        assert precision_at_k(list(range(10)), set(range(10)), 10) == 1.0
        assert precision_at_k([5, 6, 7], {1, 2}, 3) == 0.0
        assert precision_at_k([9, 1, 2, 8, 3], {9, 8}, 5) == pytest.approx(0.4)

    def test_precision_short_list_keeps_divisor(self):
        assert precision_at_k([4], {4}, 10) == pytest.approx(0.1)

    def test_precision_empty_relevant(self):
        assert precision_at_k([1, 2, 3], set(), 3) == 0.0

    def test_r_precision_examples(self):
        assert r_precision([3, 1, 4], {3, 1, 4}) == 1.0
        assert r_precision([5, 7], {7}) == 0.0
        assert r_precision([9, 0, 1, 2, 3, 4, 8], {9, 1, 8}) == pytest.approx(2 / 3)

    def test_average_precision_examples(self):
        assert average_precision([6], {6}) == 1.0
        assert average_precision([4, 0, 5], {4, 5}) == pytest.approx((1.0 + 2.0 / 3.0) / 2.0)
        assert average_precision([7, 1], {7, 99}) == pytest.approx(0.5)

    def test_metric_bounds_random(self, rng):
        for _ in range(200):
            n = int(rng.integers(1, 30))
            ranked = rng.permutation(n)[: int(rng.integers(1, n + 1))]
            relevant = set(rng.integers(0, n, size=int(rng.integers(0, n + 1))).tolist())
            k = int(rng.integers(1, 15))
            for value in (
                precision_at_k(ranked, relevant, k),
                r_precision(ranked, relevant),
                average_precision(ranked, relevant),
            ):
                assert 0.0 <= value <= 1.0

    def test_r_precision_equals_precision_when_sizes_match(self, rng):
        for _ in range(50):
            ranked = rng.permutation(20)
            relevant = set(rng.choice(20, size=6, replace=False).tolist())
            assert r_precision(ranked, relevant) == precision_at_k(ranked, relevant, 6)

    def test_ap_is_one_iff_relevant_fill_top_ranks(self, rng):
        ranked = [3, 9, 4, 1, 0]
        assert average_precision(ranked, {3, 9, 4}) == 1.0
        assert average_precision(ranked, {3, 4}) < 1.0

    def test_matches_rational_reference(self, rng):
        for _ in range(100):
            n = int(rng.integers(2, 40))
            ranked = rng.permutation(n)[: int(rng.integers(1, n + 1))].tolist()
            relevant = set(rng.integers(0, n, size=int(rng.integers(1, 10))).tolist())
            k = int(rng.integers(1, 20))
            assert precision_at_k(ranked, relevant, k) == float(
                ref_precision_at_k(ranked, relevant, k)
            )
            assert r_precision(ranked, relevant) == float(ref_r_precision(ranked, relevant))
            assert average_precision(ranked, relevant) == pytest.approx(
                float(ref_average_precision(ranked, relevant)), abs=1e-12
            )

    def test_accepts_ranked_list_objects(self):
        from aesthrec.recommender import RankedList

        ranked = RankedList("u", np.array([4, 2]), np.array([0.9, 0.1]))
        assert precision_at_k(ranked, {4}, 1) == 1.0


def triple_from_dense(train_dense, valid_dense, test_dense):
    mats = [
        InteractionMatrix.from_csr(sparse.csr_matrix(part))
        for part in (train_dense, valid_dense, test_dense)
    ]
    return SplitTriple(mats[0], mats[1], mats[2], (0, 0))


class TestEvaluate:
    def test_empty_phase_errors(self):
        train = np.array([[1.0, 0.0], [0.0, 1.0]])
        empty = np.zeros((2, 2))
        split = triple_from_dense(train, empty, empty)
        model = PopularityRecommender().fit(split.train)
        with pytest.raises(EmptyEvaluationError):
            evaluate(model, split, "test", k=1)

    def test_perfect_recommender_fixture(self):
        # user 0 likes item 0; item 1 is most popular among others and is the
        # held-out positive, so the ranking puts it first
        train = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 1.0, 0.0]])
        test = np.zeros((3, 3))
        test[0, 1] = 1.0
        split = triple_from_dense(train, np.zeros((3, 3)), test)
        model = PopularityRecommender().fit(split.train)
        scores = evaluate(model, split, "test", k=1)
        assert scores == {"precision_at_1": 1.0, "r_precision": 1.0, "average_precision": 1.0}

    def test_matches_scripted_oracle(self, rng):
        records = make_interactions(rng, num_users=12, num_items=10, per_user=5)
        (split,) = temporal_split(records, 1, 0.6, 0.2)
        model = PopularityRecommender().fit(split.train)
        got = evaluate(model, split, "test", k=3)
        per_user = {"p": [], "r": [], "a": []}
        test_matrix = split.test
        for u in range(test_matrix.m):
            relevant = set(test_matrix.user_items(u).tolist())
            if not relevant:
                continue
            ranked = model.rank(u, max(100, 10 * len(relevant), 3)).items.tolist()
            per_user["p"].append(float(ref_precision_at_k(ranked, relevant, 3)))
            per_user["r"].append(float(ref_r_precision(ranked, relevant)))
            per_user["a"].append(float(ref_average_precision(ranked, relevant)))
        assert got["precision_at_3"] == pytest.approx(np.mean(per_user["p"]), abs=1e-12)
        assert got["r_precision"] == pytest.approx(np.mean(per_user["r"]), abs=1e-12)
        assert got["average_precision"] == pytest.approx(np.mean(per_user["a"]), abs=1e-12)

    def test_phases_never_read_each_other(self):
        class Booby(InteractionMatrix):
            def user_items(self, u):
                raise AssertionError("the other phase's matrix was read")

        train = np.array([[1.0, 0.0], [0.0, 1.0]])
        positives = np.array([[0.0, 1.0], [0.0, 0.0]])
        trap = Booby.from_csr(sparse.csr_matrix(np.ones((2, 2))))
        train_matrix = InteractionMatrix.from_csr(sparse.csr_matrix(train))
        phase_matrix = InteractionMatrix.from_csr(sparse.csr_matrix(positives))
        model = PopularityRecommender().fit(train_matrix)

        split = SplitTriple(train_matrix, phase_matrix, trap, (0, 0))
        assert evaluate(model, split, "validation", k=1)["precision_at_1"] == 1.0
        split = SplitTriple(train_matrix, trap, phase_matrix, (0, 0))
        assert evaluate(model, split, "test", k=1)["precision_at_1"] == 1.0

    def test_bad_phase(self):
        with pytest.raises(ValueError, match="phase"):
            evaluate(None, None, "train", 1)


class TestAggregateCI:
    def test_identical_values(self):
        mean, half = aggregate_ci([0.4, 0.4, 0.4])
        assert mean == pytest.approx(0.4)
        assert half == pytest.approx(0.0, abs=1e-12)
        assert aggregate_ci([0.5, 0.5])[1] == 0.0  # dyadic values are exact

    def test_two_values_t_table(self):
        mean, half = aggregate_ci([0.0, 1.0])
        s = math.sqrt(0.5)
        assert mean == pytest.approx(0.5)
        assert half == pytest.approx(12.7062047361747 * s / math.sqrt(2), rel=1e-9)
        assert half == pytest.approx(6.353, abs=2e-3)

    def test_five_equally_spaced(self):
        values = [0.1, 0.2, 0.3, 0.4, 0.5]
        mean, half = aggregate_ci(values)
        s = math.sqrt(0.025)
        assert mean == pytest.approx(0.3)
        assert half == pytest.approx(2.77644510519779 * s / math.sqrt(5), rel=1e-9)

    def test_five_split_multiplier_is_2_776(self):
        _, half = aggregate_ci([0.0, 0.0, 0.0, 0.0, 1.0])
        s = np.std([0, 0, 0, 0, 1], ddof=1)
        assert half / (s / math.sqrt(5)) == pytest.approx(2.776, abs=1e-3)

    def test_normal_method(self):
        _, half = aggregate_ci([0.0, 1.0], method="normal")
        assert half == pytest.approx(1.959963984540054 * math.sqrt(0.5) / math.sqrt(2), rel=1e-9)

    def test_order_invariance(self, rng):
        values = rng.random(7).tolist()
        base = aggregate_ci(values)
        for _ in range(5):
            rng.shuffle(values)
            assert aggregate_ci(values) == base

    def test_needs_two(self):
        with pytest.raises(ValueError):
            aggregate_ci([0.5])

    def test_summarize_single_split(self):
        result = summarize_metric("precision_at_10", [0.25])
        assert result.mean == 0.25
        assert result.ci_halfwidth == 0.0


def clustered_splits(rng, informative_features=True, num_users=30, num_items=24, clusters=4):
    """Likes concentrated in per-user clusters; features match or are noise."""
    records = []
    for u in range(num_users):
        cluster = u % clusters
        block = num_items // clusters
        for _ in range(6):
            if rng.random() < 0.85:
                j = cluster * block + int(rng.integers(0, block))
            else:
                j = int(rng.integers(0, num_items))
            records.append(
                Interaction(f"u{u}", f"p{j}", int(rng.integers(0, 10_000)))
            )
    records = sorted(set(records), key=lambda r: (r.timestamp, r.user_id, r.photo_id))
    splits = temporal_split(records, 2, 0.7, 0.15)
    items = splits[0].train.items
    dim = 6
    if informative_features:
        centers = rng.normal(size=(clusters, dim)) * 4.0
        rows = [
            centers[int(p[1:]) // (num_items // clusters)] + rng.normal(size=dim) * 0.3
            for p in items
        ]
    else:
        rows = [rng.normal(size=dim) for p in items]
    return splits, FeatureTable(items, np.stack(rows).astype(np.float32))


class TestTune:
    def test_single_cell_grid(self, rng):
        splits, features = clustered_splits(rng)
        grid = TuneGrid(thetas=(0.5,), side_kernels=("euclidean",), interaction_kernels=("cosine",))
        result = tune(grid, splits, features=features, k=5)
        assert result.best == BlendConfig(0.5, "euclidean", "cosine")
        assert len(result.cells) == 1

    def test_noise_features_select_theta_zero(self, rng):
        splits, features = clustered_splits(rng, informative_features=False)
        grid = TuneGrid(thetas=(0.0, 0.9), side_kernels=("cosine",), interaction_kernels=("cosine",))
        result = tune(grid, splits, features=features, k=5)
        assert result.best.theta == 0.0

    def test_tie_breaks_prefer_smaller_theta_then_kernel_order(self, rng):
        # validation users have every candidate relevant, so all configs tie
        train = np.eye(4)
        valid = 1.0 - np.eye(4)
        test = np.zeros((4, 4))
        test[0, 1] = 1.0
        split = triple_from_dense(train, valid, test)
        features = np.abs(np.random.default_rng(3).normal(size=(4, 3)))
        grid = TuneGrid(
            thetas=(0.6, 0.2), side_kernels=("pearson", "cosine"), interaction_kernels=("cosine",)
        )
        result = tune(grid, [split], features=features, k=3)
        assert result.best.theta == 0.2
        assert result.best.side_kernel == "cosine"
        means = {cell.mean for cell in result.cells}
        assert len(means) == 1  # genuinely tied

    def test_best_cell_matches_standard_evaluation(self, rng):
        splits, features = clustered_splits(rng)
        grid = TuneGrid(
            thetas=(0.0, 0.4, 1.0),
            side_kernels=("cosine", "euclidean"),
            interaction_kernels=("cosine",),
        )
        result = tune(grid, splits, features=features, k=5)
        best_cell = next(cell for cell in result.cells if cell.config == result.best)
        for split, expected in zip(splits, best_cell.per_split):
            model = ItemNNRecommender(
                theta=result.best.theta,
                side_kernel=result.best.side_kernel,
                interaction_kernel=result.best.interaction_kernel,
            ).fit(split.train, item_features=features)
            fresh = evaluate(model, split, "validation", k=5)
            assert fresh["precision_at_5"] == pytest.approx(expected, abs=1e-12)

    def test_objectives_and_errors(self, rng):
        splits, features = clustered_splits(rng)
        grid = TuneGrid(thetas=(0.0,), side_kernels=("cosine",), interaction_kernels=("cosine",))
        for objective in ("r_precision", "average_precision"):
            result = tune(grid, splits, objective=objective, k=5)
            assert result.objective == objective
        with pytest.raises(ValueError, match="objective"):
            tune(grid, splits, objective="ndcg", k=5)
        with pytest.raises(ValueError, match="features"):
            tune(TuneGrid(thetas=(0.5,)), splits, features=None, k=5)
        with pytest.raises(ValueError):
            TuneGrid(thetas=())

    def test_theta_one_cells_skip_interaction_kernel(self, rng):
        splits, features = clustered_splits(rng)
        grid = TuneGrid(thetas=(1.0,), side_kernels=("cosine",), interaction_kernels=("cosine", "pearson"))
        result = tune(grid, splits, features=features, k=5)
        a, b = result.cells
        assert a.per_split == b.per_split  # interaction kernel is inert at theta=1
        assert result.best.interaction_kernel == "cosine"
