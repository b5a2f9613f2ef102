import math
import random

import numpy as np
import pytest

from mudmon.errors import (
    DegenerateDataError,
    EmptyError,
    InsufficientDataError,
    LayoutMismatchError,
)
from mudmon.worker import (
    DetectorMode,
    Reason,
    TrainConfig,
    WorkerModel,
    percentile_boundary,
    rand_index,
    train,
    train_dispersion,
)
from mudmon.xmeans import bic_score, exhaustive_best_k, kmedians, xmeans


def two_blobs(n=400, seed=0, spread=0.5, centers=((0.0, 0.0), (12.0, 12.0))):
    rng = np.random.default_rng(seed)
    parts = [c + rng.normal(0, spread, size=(n // len(centers), 2)) for c in centers]
    return np.vstack(parts)


class TestXmeans:
    def test_two_blobs_found(self):
        pts = two_blobs()
        result = xmeans(pts, seed=1)
        assert result.k == 2

    def test_matches_exhaustive_oracle(self):
        for seed in (0, 1, 2):
            pts = two_blobs(seed=seed)
            assert xmeans(pts, seed=5).k == exhaustive_best_k(pts, seed=5)

    def test_single_blob_stays_single(self):
        rng = np.random.default_rng(0)
        pts = rng.normal(0, 1, size=(300, 3))
        assert xmeans(pts, seed=0).k == 1

    def test_identical_points_never_split(self):
        pts = np.ones((50, 4))
        assert xmeans(pts, seed=0).k == 1

    def test_k_max_respected(self):
        rng = np.random.default_rng(3)
        centers = rng.uniform(0, 100, size=(10, 2))
        pts = np.vstack([c + rng.normal(0, 0.1, size=(30, 2)) for c in centers])
        result = xmeans(pts, seed=0, k_max=4)
        assert result.k <= 4

    def test_deterministic_for_seed(self):
        pts = two_blobs(seed=4)
        a = xmeans(pts, seed=9)
        b = xmeans(pts, seed=9)
        assert np.array_equal(a.labels, b.labels)
        assert np.array_equal(a.heads, b.heads)

    def test_kmedians_heads_are_medians(self):
        pts = np.array([[0.0], [1.0], [2.0], [100.0], [101.0], [102.0]])
        labels, heads = kmedians(pts, np.array([[0.0], [100.0]]))
        assert sorted(heads.ravel().tolist()) == [1.0, 101.0]
        assert bic_score(pts, labels, heads) > bic_score(
            pts, np.zeros(len(pts), dtype=np.intp), np.median(pts, axis=0)[None, :])


class TestPercentile:
    def test_linear_interpolation_1_to_40(self):
        # sorted(1..40): rank h = 39 * 0.975 = 38.025 -> 39 + 0.025 * 1
        assert percentile_boundary(list(range(1, 41))) == pytest.approx(39.025)

    def test_all_equal(self):
        assert percentile_boundary([3.5] * 10) == 3.5

    def test_single_value(self):
        assert percentile_boundary([7.25]) == 7.25

    def test_matches_numpy(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            xs = rng.uniform(0, 100, size=rng.integers(1, 200))
            p = float(rng.uniform(0.5, 99.5))
            assert percentile_boundary(xs, p) == pytest.approx(
                float(np.percentile(xs, p)), abs=1e-9)

    def test_empty_raises(self):
        with pytest.raises(EmptyError):
            percentile_boundary([])


class TestTrain:
    def test_two_blob_training(self):
        model = train(two_blobs(), TrainConfig.small(), seed=0)
        assert model.clusters.heads.shape[0] == 2

    def test_correlated_features_one_component(self):
        rng = np.random.default_rng(1)
        base = rng.normal(0, 1, size=500)
        x = np.column_stack([base, 3.0 * base])  # perfectly correlated
        model = train(x, TrainConfig.small(), seed=0)
        assert model.pca.retained == 1
        # z-scored pair has correlation eigenvalues {2, 0}
        assert model.pca.eigenvalues[0] == pytest.approx(2.0, abs=1e-9)
        assert model.pca.coverage == pytest.approx(1.0)

    def test_min_rows_enforced(self):
        with pytest.raises(InsufficientDataError):
            train(np.zeros((5, 3)), TrainConfig(min_train_rows=10))

    def test_identical_rows_degenerate(self):
        with pytest.raises(DegenerateDataError):
            train(np.ones((100, 3)), TrainConfig.small())

    def test_constant_columns_dropped(self):
        rng = np.random.default_rng(0)
        x = np.column_stack([rng.normal(size=200), np.full(200, 9.0)])
        model = train(x, TrainConfig.small(), seed=0)
        assert model.norm.kept.tolist() == [0]

    def test_orthonormal_components(self):
        rng = np.random.default_rng(2)
        latent = rng.normal(size=(400, 3))
        mix = rng.normal(size=(3, 10))
        x = latent @ mix + rng.normal(0, 0.05, size=(400, 10))
        model = train(x, TrainConfig.small(), seed=0)
        c = model.pca.components
        gram = c @ c.T
        assert np.abs(gram - np.eye(len(gram))).max() <= 1e-9
        assert model.pca.retained == int(np.sum(model.pca.eigenvalues > 1.0))
        assert model.pca.coverage >= 0.9

    def test_boundary_calibration_fraction(self):
        x = two_blobs(n=2000, seed=5)
        model = train(x, TrainConfig.small(), seed=0)
        inside = ~model.predict_batch(x)
        frac = inside.mean()
        n = len(x)
        assert 0.975 - 2 / math.sqrt(n) <= frac <= 1.0


class TestPredict:
    def test_centroid_not_anomalous(self):
        x = two_blobs()
        model = train(x, TrainConfig.small(), seed=0)
        # Reconstruct an input that lands exactly on a head: use a training
        # point closest to its head.
        verdict, _ = model.predict(x[0])
        assert verdict.distance >= 0.0
        centroid_input = x[:200].mean(axis=0)
        v, _ = model.predict(centroid_input)
        assert not v.anomalous

    def test_far_point_is_outside_boundary(self):
        x = two_blobs()
        model = train(x, TrainConfig.small(), seed=0)
        # Far along the represented variance direction (components discard
        # directions the training data never exercised).
        v, _ = model.predict(x.max(axis=0) * 10.0)
        assert v.anomalous and v.reason is Reason.OUTSIDE_BOUNDARY

    def test_layout_mismatch(self):
        model = train(two_blobs(), TrainConfig.small(), seed=0)
        with pytest.raises(LayoutMismatchError):
            model.predict([1.0, 2.0, 3.0])

    def test_illegal_transition_flagged(self):
        # Cluster A for 50 minutes then cluster B for 50: only A->A, A->B,
        # B->B are legal; B->A was never observed.
        rng = np.random.default_rng(0)
        a = rng.normal(0, 0.3, size=(50, 2))
        b = rng.normal(10, 0.3, size=(50, 2))
        x = np.vstack([a, b])
        cfg = TrainConfig.small(detector_mode=DetectorMode.BOUNDARY_PLUS_STATE_MACHINE,
                                use_pca=False)
        model = train(x, cfg, seed=0)
        assert model.clusters.heads.shape[0] == 2
        v1, state = model.predict(a[0], prev_state=None)
        assert not v1.anomalous
        v2, state = model.predict(b[0], prev_state=state)
        assert not v2.anomalous  # A->B seen in training
        v3, state = model.predict(a[1], prev_state=state)
        assert v3.anomalous and v3.reason is Reason.ILLEGAL_TRANSITION

    def test_state_not_advanced_on_outlier(self):
        rng = np.random.default_rng(1)
        a = rng.normal(0, 0.3, size=(60, 2))
        b = rng.normal(10, 0.3, size=(60, 2))
        x = np.vstack([a, b])
        cfg = TrainConfig.small(detector_mode=DetectorMode.BOUNDARY_PLUS_STATE_MACHINE,
                                use_pca=False)
        model = train(x, cfg, seed=0)
        _, state = model.predict(a[0], prev_state=None)
        v, state2 = model.predict(np.array([500.0, 500.0]), prev_state=state)
        assert v.anomalous and state2 == state

    def test_boundary_only_subset_of_state_machine_alarms(self):
        rng = np.random.default_rng(2)
        x = np.vstack([rng.normal(0, 0.5, size=(80, 2)),
                       rng.normal(8, 0.5, size=(80, 2))])
        bd = train(x, TrainConfig.small(use_pca=False), seed=0)
        sm = train(x, TrainConfig.small(
            detector_mode=DetectorMode.BOUNDARY_PLUS_STATE_MACHINE, use_pca=False), seed=0)
        stream = rng.normal(4, 4.0, size=(100, 2))
        state = None
        for row in stream:
            vb, _ = bd.predict(row)
            vs, state = sm.predict(row, prev_state=state)
            if vb.anomalous:
                assert vs.anomalous

    def test_serialization_roundtrip_preserves_predictions(self):
        x = two_blobs(seed=6)
        cfg = TrainConfig.small(detector_mode=DetectorMode.BOUNDARY_PLUS_STATE_MACHINE)
        model = train(x, cfg, seed=0)
        clone = WorkerModel.from_json(model.to_json())
        rng = np.random.default_rng(0)
        probes = rng.uniform(-20, 30, size=(200, 2))
        state_a = state_b = None
        for row in probes:
            va, state_a = model.predict(row, prev_state=state_a)
            vb, state_b = clone.predict(row, prev_state=state_b)
            assert va == vb


class TestDispersion:
    def test_all_zero_benign_entropy(self):
        x = np.zeros((50, 4))
        model = train_dispersion(x, TrainConfig.small())
        assert model.clusters.heads.shape == (1, 4)
        assert float(model.clusters.radii[0]) == 0.0
        quiet, _ = model.predict(np.zeros(4))
        assert not quiet.anomalous
        loud, _ = model.predict(np.array([0.0, 0.0, 4.5, 5.0]))
        assert loud.anomalous

    def test_oscillating_benign_vs_flat_attack(self):
        rng = np.random.default_rng(0)
        # Benign entropy swings between near-zero and bursty values.
        benign = []
        for _ in range(400):
            benign.append([rng.uniform(0, 1.0) if rng.random() < 0.6
                           else rng.uniform(3.0, 6.5) for _ in range(4)])
        model = train_dispersion(np.array(benign), TrainConfig.small())
        attack = np.array([5.5, 5.6, 5.4, 5.5])
        flagged = 0
        for _ in range(20):
            window = attack + rng.normal(0, 0.1, size=4)
            v, _ = model.predict(window)
            flagged += v.anomalous
        assert flagged >= 15

    def test_requires_four_features(self):
        with pytest.raises(ValueError):
            train_dispersion(np.zeros((10, 3)))


class TestRandIndex:
    def test_identical(self):
        assert rand_index([0, 0, 1, 1], [0, 0, 1, 1]) == 1.0

    def test_permuted_names(self):
        assert rand_index(["x", "x", "y", "z"], [5, 5, 9, 7]) == 1.0

    def test_half_split(self):
        assert rand_index(list("aabb"), list("abab")) == pytest.approx(1 / 3)

    def test_enumerated_oracle_on_random_labelings(self):
        rng = random.Random(11)
        for _ in range(30):
            n = rng.randint(2, 24)
            a = [rng.randint(0, 3) for _ in range(n)]
            b = [rng.randint(0, 3) for _ in range(n)]
            agree = 0
            pairs = 0
            for i in range(n):
                for j in range(i + 1, n):
                    pairs += 1
                    agree += (a[i] == a[j]) == (b[i] == b[j])
            assert rand_index(a, b) == pytest.approx(agree / pairs)

    def test_bounds(self):
        assert 0.0 <= rand_index([0, 1, 0, 1], [1, 1, 0, 0]) <= 1.0
