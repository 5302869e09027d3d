"""Unit tests for rank pooling."""
import numpy as np
import pytest
from scipy.stats import spearmanr

from dynimg.models import FeatureSeq, Frame, RankPoolConfig
from dynimg.rankpool import (
    DegenerateClipError,
    RankPoolError,
    approx_rank_pool,
    build_feature_seq,
    energy_subgradient,
    hinge_energy,
    pool_frames,
    ranking_score,
    solve_rank_pool,
    to_dynamic_image,
)


def monotone_seq(T: int, dim: int, seed: int = 0) -> FeatureSeq:  # noqa: N803
    """Return running means ``t * u`` (t = 1..T) for a random unit vector ``u``."""
    u = np.random.default_rng(seed).normal(size=dim)
    u /= np.linalg.norm(u)
    return FeatureSeq.from_smoothed(np.arange(1, T + 1)[:, np.newaxis] * u)


class TestBuildFeatureSeq:
    """Unit tests for build_feature_seq."""

    def test_identical_frames(self):  # noqa: D102
        frame = Frame(np.random.default_rng(0).random((3, 4, 3)))

        seq = build_feature_seq([frame] * 5)

        assert seq.T == 5 and seq.dim == 36
        assert all(np.array_equal(row, frame.flatten()) for row in seq.smoothed)

    def test_two_frames(self):  # noqa: D102
        a, b = Frame(np.array([[0.2, 0.4]])), Frame(np.array([[0.6, 1.0]]))

        seq = build_feature_seq([a, b])

        assert seq.smoothed[0].tolist() == [0.2, 0.4]
        assert seq.smoothed[1] == pytest.approx([0.4, 0.7], abs=1e-12)

    def test_running_mean(self):  # noqa: D102
        rng = np.random.default_rng(1)
        frames = [Frame(rng.random((2, 3))) for _ in range(3)]

        seq = build_feature_seq(frames)

        brute = sum(f.flatten() for f in frames) / 3
        assert np.max(np.abs(seq.smoothed[2] - brute)) < 1e-12

    def test_raw_features(self):  # noqa: D102
        frames = [Frame(np.full((2, 2), v)) for v in (0.1, 0.5)]

        seq = build_feature_seq(frames, smooth=False)

        assert np.array_equal(seq.smoothed, seq.features)

    def test_shape_mismatch(self):  # noqa: D102
        with pytest.raises(RankPoolError, match="Frame 1 has shape"):
            build_feature_seq([Frame(np.zeros((2, 2))), Frame(np.zeros((2, 3)))])

    def test_unknown_feature_map(self):  # noqa: D102
        with pytest.raises(RankPoolError, match="Unknown feature map"):
            build_feature_seq([Frame(np.zeros((2, 2)))], feature_map="hog")


class TestRankingScore:
    """Unit tests for ranking_score."""

    def test_zero_direction(self):  # noqa: D102
        assert ranking_score(np.zeros(4), np.arange(4.0)) == 0.0

    def test_basis_vector(self):  # noqa: D102
        assert ranking_score(np.eye(5)[2], np.array([3.0, 1.0, 4.0, 1.0, 5.0])) == 4.0

    def test_inner_product(self):  # noqa: D102
        rng = np.random.default_rng(2)
        d, v = rng.normal(size=5), rng.normal(size=5)

        assert abs(ranking_score(d, v) - sum(d[i] * v[i] for i in range(5))) < 1e-12

    def test_length_mismatch(self):  # noqa: D102
        with pytest.raises(RankPoolError, match="Length mismatch"):
            ranking_score(np.zeros(3), np.zeros(4))


class TestHingeEnergy:
    """Unit tests for hinge_energy and energy_subgradient."""

    def test_energy_at_origin(self):  # noqa: D102
        rng = np.random.default_rng(3)
        for _ in range(100):
            T, dim = int(rng.integers(2, 26)), int(rng.integers(1, 65))  # noqa: N806
            seq = FeatureSeq.from_smoothed(rng.normal(size=(T, dim)))
            assert abs(hinge_energy(np.zeros(dim), seq, 1e-3) - 1.0) <= 1e-12

    def test_equal_scores(self):  # noqa: D102
        seq = FeatureSeq.from_smoothed(np.tile([0.3, 0.1, 0.7], (4, 1)))
        d = np.array([1.0, -2.0, 0.5])

        assert hinge_energy(d, seq, 0.1) == pytest.approx(0.05 * np.dot(d, d) + 1.0)

    def test_hand_example(self):  # noqa: D102
        seq = FeatureSeq.from_smoothed(np.array([[0.0], [2.0]]))

        assert hinge_energy(np.array([1.0]), seq, 0.0) == 0.0

    def test_degenerate_clip(self):  # noqa: D102
        seq = FeatureSeq.from_smoothed(np.array([[1.0, 2.0]]))

        with pytest.raises(DegenerateClipError, match="at least 2 frames"):
            hinge_energy(np.zeros(2), seq, 1.0)

    def test_dimension_mismatch(self):  # noqa: D102
        with pytest.raises(RankPoolError, match="expected"):
            hinge_energy(np.zeros(3), monotone_seq(4, 2), 1.0)

    def test_convex_along_segments(self):  # noqa: D102
        rng = np.random.default_rng(4)
        seq = FeatureSeq.from_smoothed(rng.normal(size=(8, 6)))
        for _ in range(50):
            x, y, alpha = rng.normal(size=6), rng.normal(size=6), rng.random()
            mixed = hinge_energy(alpha * x + (1 - alpha) * y, seq, 0.01)
            bound = alpha * hinge_energy(x, seq, 0.01) + (1 - alpha) * hinge_energy(
                y, seq, 0.01
            )
            assert mixed <= bound + 1e-10

    def test_subgradient_inactive_pairs(self):  # noqa: D102
        seq = monotone_seq(5, 3)
        d = 100.0 * seq.smoothed[0]

        assert np.allclose(energy_subgradient(d, seq, 0.5), 0.5 * d)

    def test_subgradient_at_origin(self):  # noqa: D102
        rng = np.random.default_rng(5)
        T = 7  # noqa: N806
        seq = FeatureSeq.from_smoothed(rng.normal(size=(T, 4)))

        coefficients = 2.0 * np.arange(1, T + 1) - T - 1
        expected = -(2.0 / (T * (T - 1))) * (coefficients @ seq.smoothed)
        g = energy_subgradient(np.zeros(4), seq, 1.0)

        assert np.allclose(g, expected, atol=1e-12)

    def test_subgradient_matches_finite_differences(self):  # noqa: D102
        rng = np.random.default_rng(6)
        seq = FeatureSeq.from_smoothed(rng.normal(size=(6, 5)))
        h = 1e-6
        for _ in range(10):
            d = rng.normal(size=5) * 0.3
            grad = energy_subgradient(d, seq, 0.1)
            for i in range(5):
                step = np.eye(5)[i] * h
                numeric = (
                    hinge_energy(d + step, seq, 0.1) - hinge_energy(d - step, seq, 0.1)
                ) / (2 * h)
                assert abs(numeric - grad[i]) <= 1e-6 * max(1.0, abs(grad[i]))


class TestSolveRankPool:
    """Unit tests for solve_rank_pool."""

    def test_static_clip(self):  # noqa: D102
        seq = FeatureSeq.from_smoothed(np.tile([0.2, 0.8], (5, 1)), shape=(1, 2, 1))

        image = solve_rank_pool(seq, RankPoolConfig())

        assert not np.any(image.d)
        assert image.energy == 1.0
        assert np.all(image.pixels == 0.5)

    def test_three_point_order(self):  # noqa: D102
        seq = FeatureSeq.from_smoothed(np.array([[1.0], [2.0], [3.0]]))

        image = solve_rank_pool(seq, RankPoolConfig(lam=0.01))

        scores = seq.smoothed @ image.d
        assert image.d[0] > 0
        assert scores[0] < scores[1] < scores[2]

    def test_monotone_orders_all_pairs(self):  # noqa: D102
        seq = monotone_seq(25, 16, seed=8)

        image = solve_rank_pool(seq, RankPoolConfig())

        scores = seq.smoothed @ image.d
        earlier, later = np.triu_indices(25, k=1)
        assert np.all(scores[later] > scores[earlier])

    def test_energy_never_above_origin(self):  # noqa: D102
        rng = np.random.default_rng(9)
        for _ in range(20):
            T = int(rng.integers(2, 10))  # noqa: N806
            seq = FeatureSeq.from_smoothed(rng.normal(size=(T, 8)))
            image = solve_rank_pool(seq, RankPoolConfig(max_iters=50))
            assert image.energy <= 1.0
            assert image.energy == pytest.approx(hinge_energy(image.d, seq, 1e-3))

    def test_one_dimensional_grid_oracle(self):  # noqa: D102
        rng = np.random.default_rng(10)
        grid = np.arange(-10.0, 10.0 + 5e-4, 1e-3)
        cfg = RankPoolConfig(lam=1.0, max_iters=500, tol=0.0)
        for _ in range(20):
            T = int(rng.integers(2, 8))  # noqa: N806
            seq = FeatureSeq.from_smoothed(rng.random((T, 1)))
            # energy at every grid point
            earlier, later = np.triu_indices(T, k=1)
            diffs = seq.smoothed[later, 0] - seq.smoothed[earlier, 0]
            hinge = np.maximum(1.0 - np.outer(grid, diffs), 0.0).sum(axis=1)
            grid_min = float(np.min(0.5 * grid**2 + 2.0 * hinge / (T * (T - 1))))

            image = solve_rank_pool(seq, cfg)

            assert image.energy <= grid_min + 1e-3

    def test_degenerate_clip(self):  # noqa: D102
        with pytest.raises(DegenerateClipError):
            solve_rank_pool(FeatureSeq.from_smoothed(np.ones((1, 3))), RankPoolConfig())

    def test_records_iterations(self):  # noqa: D102
        image = solve_rank_pool(monotone_seq(6, 3), RankPoolConfig(max_iters=7, tol=0))

        assert 1 <= image.iterations <= 7


class TestApproxRankPool:
    """Unit tests for approx_rank_pool."""

    def test_weighted_combination(self):  # noqa: D102
        rng = np.random.default_rng(11)
        T = 9  # noqa: N806
        seq = FeatureSeq.from_smoothed(rng.random((T, 12)))

        image = approx_rank_pool(seq)

        d = (2.0 * np.arange(1, T + 1) - T - 1) @ seq.smoothed
        assert np.max(np.abs(image.d - d / np.linalg.norm(d))) < 1e-6

    def test_two_frames(self):  # noqa: D102
        seq = FeatureSeq.from_smoothed(np.array([[0.1, 0.9, 0.4], [0.5, 0.2, 0.4]]))

        diff = seq.smoothed[1] - seq.smoothed[0]
        assert approx_rank_pool(seq).d == pytest.approx(diff / np.linalg.norm(diff))

    def test_middle_frame_drops_out(self):  # noqa: D102
        base = np.array([[0.1, 0.2], [0.3, 0.9], [0.5, 0.4]])
        moved = base.copy()
        moved[1] = [0.8, 0.0]

        first = approx_rank_pool(FeatureSeq.from_smoothed(base))
        second = approx_rank_pool(FeatureSeq.from_smoothed(moved))

        assert np.array_equal(first.d, second.d)

    def test_constant_clip_mid_gray(self):  # noqa: D102
        seq = FeatureSeq.from_smoothed(np.full((4, 6), 0.3), shape=(2, 3, 1))

        image = approx_rank_pool(seq)

        assert not np.any(image.d)
        assert np.all(image.pixels == 0.5)

    def test_reversal_negates(self):  # noqa: D102
        seq = monotone_seq(10, 5, seed=12)
        reversed_seq = FeatureSeq.from_smoothed(seq.smoothed[::-1])

        forward_d = approx_rank_pool(seq).d
        assert approx_rank_pool(reversed_seq).d == pytest.approx(-forward_d)

    def test_scale_invariant(self):  # noqa: D102
        seq = FeatureSeq.from_smoothed(np.random.default_rng(13).random((6, 10)))
        scaled = FeatureSeq.from_smoothed(3.5 * seq.smoothed)

        assert approx_rank_pool(scaled).d == pytest.approx(approx_rank_pool(seq).d)
        assert np.array_equal(
            np.argsort(approx_rank_pool(scaled).d, kind="stable"),
            np.argsort(approx_rank_pool(seq).d, kind="stable"),
        )

    def test_close_to_exact(self):  # noqa: D102
        seq = monotone_seq(25, 64, seed=14)

        exact = solve_rank_pool(seq, RankPoolConfig())
        approx = approx_rank_pool(seq)

        assert spearmanr(exact.d, approx.d).correlation > 0.9


class TestToDynamicImage:
    """Unit tests for to_dynamic_image."""

    def test_endpoints(self):  # noqa: D102
        image = to_dynamic_image(np.array([-1.0, 0.0, 1.0]), 3, 1, 1)

        assert image.pixels.reshape(-1).tolist() == [0.0, 0.5, 1.0]
        assert (image.norm_min, image.norm_max) == (-1.0, 1.0)

    def test_constant(self):  # noqa: D102
        image = to_dynamic_image(np.full(6, 2.0), 2, 1, 3)

        assert image.pixels.shape == (1, 2, 3)
        assert np.all(image.pixels == 0.5)

    def test_order_preserving(self):  # noqa: D102
        d = np.random.default_rng(15).normal(size=48)

        image = to_dynamic_image(d, 4, 4, 3)

        assert np.array_equal(
            np.argsort(d, kind="stable"),
            np.argsort(image.pixels.reshape(-1), kind="stable"),
        )

    def test_size_mismatch(self):  # noqa: D102
        with pytest.raises(RankPoolError, match="needs 12"):
            to_dynamic_image(np.zeros(10), 2, 2, 3)


class TestPoolFrames:
    """Unit tests for pool_frames."""

    frames = [Frame(np.full((2, 2), v)) for v in (0.1, 0.3, 0.6)]

    def test_solvers(self):  # noqa: D102
        exact = pool_frames(self.frames, RankPoolConfig())
        approx = pool_frames(self.frames, RankPoolConfig(solver="approx"))

        assert exact.energy is not None and exact.energy < 1.0
        assert approx.energy is None
        assert exact.to_frame().shape == approx.to_frame().shape == (2, 2, 1)
