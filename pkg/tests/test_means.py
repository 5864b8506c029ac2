"""Mean-set construction, the optimality condition, and robustness geometry."""

import numpy as np
import pytest

from mmlda.means import (
    CovarianceModel,
    MeanSet,
    MMDSpec,
    approx_robustness,
    generate_opt_means,
    load_mean_set,
    pairwise_mahalanobis,
    robustness_upper_bound,
    save_mean_set,
    verify_opt_condition,
    whiten,
)

GRID = [(2, 1), (3, 2), (10, 10), (10, 63), (64, 63)]


def general_mahalanobis(u, v, sigma):
    """Brute-force covariance-weighted distance, the oracle for whitening."""
    d = u - v
    return np.sqrt(d @ np.linalg.solve(sigma, d))


class TestGenerateOptMeans:
    def test_two_classes_on_the_line(self):
        ms = generate_opt_means(1.0, 1, 2)
        np.testing.assert_allclose(ms.means, [[1.0], [-1.0]])

    def test_three_classes_give_equilateral_triangle(self):
        ms = generate_opt_means(1.0, 2, 3)
        expected = np.array([
            [1.0, 0.0],
            [-0.5, np.sqrt(3.0) / 2.0],
            [-0.5, -np.sqrt(3.0) / 2.0],
        ])
        np.testing.assert_allclose(ms.means, expected, atol=1e-15)

    def test_ten_classes_gram_matrix(self):
        ms = generate_opt_means(100.0, 10, 10)
        gram = ms.means @ ms.means.T
        np.testing.assert_allclose(np.diag(gram), 100.0, rtol=1e-12)
        off = gram[~np.eye(10, dtype=bool)]
        np.testing.assert_allclose(off, -100.0 / 9.0, rtol=1e-12)

    @pytest.mark.parametrize("num_classes,dim", GRID)
    @pytest.mark.parametrize("sq_norm", [1.0, 100.0])
    def test_condition_holds_on_grid(self, num_classes, dim, sq_norm):
        ms = generate_opt_means(sq_norm, dim, num_classes)
        assert verify_opt_condition(ms, tol=1e-9).passed

    def test_rejects_too_many_classes(self):
        with pytest.raises(ValueError, match="classes <= dim"):
            generate_opt_means(1.0, 3, 5)

    def test_rejects_nonpositive_norm(self):
        with pytest.raises(ValueError):
            generate_opt_means(0.0, 4, 3)
        with pytest.raises(ValueError):
            generate_opt_means(-2.0, 4, 3)

    def test_is_deterministic(self):
        a = generate_opt_means(7.0, 6, 5)
        b = generate_opt_means(7.0, 6, 5)
        assert np.array_equal(a.means, b.means)

    def test_rotation_option_preserves_condition(self):
        canonical = generate_opt_means(100.0, 10, 10)
        rotated = generate_opt_means(100.0, 10, 10, rotation_seed=11)
        assert verify_opt_condition(rotated, tol=1e-9).passed
        assert np.abs(rotated.means - canonical.means).max() > 1.0
        again = generate_opt_means(100.0, 10, 10, rotation_seed=11)
        assert np.array_equal(rotated.means, again.means)


class TestVerifyOptCondition:
    def test_passes_on_construction(self):
        report = verify_opt_condition(generate_opt_means(100.0, 10, 10), tol=1e-9)
        assert report.passed
        assert report.max_diag_err <= 1e-9 * 100.0

    def test_fails_on_wrong_norm(self):
        means = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, -1.0]])
        report = verify_opt_condition(means, tol=1e-9, sq_norm=1.0)
        assert not report.passed
        assert report.max_diag_err == pytest.approx(1.0)  # third norm is 2

    def test_fails_on_scaled_mean(self):
        ms = generate_opt_means(1.0, 4, 4)
        means = ms.means.copy()
        means[2] *= 1.01
        report = verify_opt_condition(means, tol=1e-9, sq_norm=1.0)
        assert not report.passed
        assert report.max_diag_err > 0.019

    def test_raw_array_requires_sq_norm(self):
        with pytest.raises(ValueError, match="sq_norm"):
            verify_opt_condition(np.eye(2))


class TestPairwiseMahalanobis:
    def test_equilateral_distances(self):
        dists = pairwise_mahalanobis(generate_opt_means(1.0, 2, 3))
        off = dists[~np.eye(3, dtype=bool)]
        np.testing.assert_allclose(off, np.sqrt(3.0), rtol=1e-12)

    def test_antipodal_pair(self):
        dists = pairwise_mahalanobis(generate_opt_means(1.0, 1, 2))
        assert dists[0, 1] == pytest.approx(2.0)

    def test_zero_diagonal_and_symmetry(self):
        ms = generate_opt_means(5.0, 8, 6)
        dists = pairwise_mahalanobis(ms)
        assert np.array_equal(np.diag(dists), np.zeros(6))
        assert np.array_equal(dists, dists.T)

    def test_is_a_metric_matrix(self):
        rng = np.random.default_rng(42)
        points = rng.normal(size=(7, 4))
        dists = pairwise_mahalanobis(points)
        assert (dists[~np.eye(7, dtype=bool)] >= 0).all()
        # triangle inequality over all index triples
        lhs = dists[:, None, :]
        rhs = dists[:, :, None] + dists[None, :, :]
        assert (lhs <= rhs + 1e-12).all()


class TestRobustnessBound:
    def test_equilateral_value(self):
        assert approx_robustness(generate_opt_means(1.0, 2, 3)) == pytest.approx(np.sqrt(3.0) / 2.0)

    def test_antipodal_value(self):
        assert approx_robustness(generate_opt_means(1.0, 1, 2)) == pytest.approx(1.0)

    def test_closed_form_value(self):
        assert robustness_upper_bound(100.0, 10) == pytest.approx(7.4535599249993, rel=1e-12)
        assert robustness_upper_bound(1.0, 2) == pytest.approx(1.0)

    def test_large_class_limit(self):
        assert robustness_upper_bound(1.0, 10_000) == pytest.approx(np.sqrt(0.5), rel=1e-3)

    @pytest.mark.parametrize("num_classes,dim", GRID)
    @pytest.mark.parametrize("sq_norm", [1.0, 100.0])
    def test_construction_attains_bound(self, num_classes, dim, sq_norm):
        ms = generate_opt_means(sq_norm, dim, num_classes)
        bound = robustness_upper_bound(sq_norm, num_classes)
        assert abs(approx_robustness(ms) - bound) <= 1e-9 * bound

    def test_random_zero_sum_sets_never_exceed_bound(self):
        rng = np.random.default_rng(7)
        sq_norm = 4.0
        for _ in range(100):
            num_classes = int(rng.integers(2, 9))
            dim = int(rng.integers(num_classes - 1, num_classes + 6))
            pts = rng.normal(size=(num_classes, dim))
            pts -= pts.mean(axis=0)  # zero sum
            top = np.einsum("ij,ij->i", pts, pts).max()
            pts *= np.sqrt(sq_norm / top)  # max squared norm = sq_norm
            bound = robustness_upper_bound(sq_norm, num_classes)
            assert approx_robustness(pts) <= bound + 1e-9


class TestWhiten:
    def test_identity_on_centered_means(self):
        means = np.array([[1.0, 0.0], [-1.0, 0.0]])
        out, transform = whiten(means)
        np.testing.assert_array_equal(out, means)
        np.testing.assert_array_equal(transform.factor, np.eye(2))

    def test_scaled_identity(self):
        means = np.array([[2.0, 0.0], [-2.0, 0.0]])
        out, _ = whiten(means, 4.0 * np.eye(2))
        np.testing.assert_allclose(out, [[1.0, 0.0], [-1.0, 0.0]])
        # covariance-weighted distance equals the whitened Euclidean one
        assert general_mahalanobis(means[0], means[1], 4.0 * np.eye(2)) == pytest.approx(2.0)
        assert np.linalg.norm(out[0] - out[1]) == pytest.approx(2.0)

    def test_random_spd_preserves_distances(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            dim = int(rng.integers(2, 9))
            k = int(rng.integers(2, dim + 2))
            raw = rng.normal(size=(dim, dim))
            sigma = raw @ raw.T + dim * np.eye(dim)
            means = rng.normal(size=(k, dim)) * 3.0
            out, transform = whiten(means, sigma)
            np.testing.assert_allclose(out.sum(axis=0), 0.0, atol=1e-10)
            for i in range(k):
                for j in range(i + 1, k):
                    want = general_mahalanobis(means[i], means[j], sigma)
                    got = np.linalg.norm(out[i] - out[j])
                    assert abs(want - got) <= 1e-8 * max(1.0, want)
            # transform.apply maps arbitrary points consistently
            np.testing.assert_allclose(transform.apply(means), out, atol=1e-12)

    def test_rejects_non_spd(self):
        means = np.array([[1.0, 0.0], [-1.0, 0.0]])
        with pytest.raises(ValueError, match="positive definite"):
            whiten(means, np.array([[1.0, 0.0], [0.0, -1.0]]))

    def test_rejects_asymmetric(self):
        with pytest.raises(ValueError, match="symmetric"):
            CovarianceModel(np.array([[1.0, 0.5], [0.0, 1.0]]))


class TestMeanSetType:
    def test_rejects_single_class(self):
        with pytest.raises(ValueError):
            MeanSet(np.array([[1.0, 0.0]]), 1.0)

    def test_rejects_too_many_classes(self):
        means = generate_opt_means(1.0, 3, 4).means
        padded = np.vstack([means, -means])  # 8 vectors in R^3, norm ok, sum 0
        with pytest.raises(ValueError, match="dim \\+ 1"):
            MeanSet(padded, 1.0)

    def test_rejects_norm_violation(self):
        with pytest.raises(ValueError, match="squared norm"):
            MeanSet(np.array([[2.0], [-1.0]]), 1.0)

    def test_rejects_nonzero_sum(self):
        with pytest.raises(ValueError, match="sum to the zero"):
            MeanSet(np.array([[1.0, 0.0], [0.0, 1.0]]), 1.0)

    def test_uniform_spec(self):
        spec = MMDSpec.uniform(generate_opt_means(1.0, 2, 3))
        np.testing.assert_allclose(spec.priors, 1.0 / 3.0)

    def test_spec_rejects_bad_priors(self):
        ms = generate_opt_means(1.0, 2, 3)
        with pytest.raises(ValueError, match="sum to one"):
            MMDSpec(ms, np.array([0.5, 0.5, 0.5]))
        with pytest.raises(ValueError, match="nonnegative"):
            MMDSpec(ms, np.array([1.2, -0.1, -0.1]))


class TestSerialization:
    def test_round_trip_is_bit_identical(self, tmp_path):
        ms = generate_opt_means(100.0, 10, 10, rotation_seed=5)
        path = tmp_path / "means.txt"
        save_mean_set(path, ms)
        loaded = load_mean_set(path)
        assert np.array_equal(loaded.means, ms.means)
        assert loaded.sq_norm == ms.sq_norm
        # emitting the parsed set reproduces the file byte for byte
        second = tmp_path / "again.txt"
        save_mean_set(second, loaded)
        assert path.read_bytes() == second.read_bytes()

    def test_header_shape(self, tmp_path):
        ms = generate_opt_means(2.0, 3, 3)
        path = tmp_path / "m.txt"
        save_mean_set(path, ms)
        header = path.read_text().splitlines()[0].split()
        assert header[0] == "3" and header[1] == "3"
        assert float(header[2]) == 2.0
