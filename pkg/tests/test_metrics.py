"""Diversity and discrepancy metrics on hand-checkable examples."""

import numpy as np
import pytest

from bridgelab.metrics import (
    AffineProjection,
    ConditionedSamples,
    Identity,
    afd,
    convergence_slope,
    energy_distance,
    energy_permutation_quantile,
    mse,
    random_projection,
)


class TestAfd:
    def test_two_point_group_is_their_distance(self):
        """{(0,0), (3,4)}: both ordered pairs contribute 5, so afd = 5."""
        report = afd(ConditionedSamples([np.array([[0.0, 0.0], [3.0, 4.0]])]))
        assert report.afd == 5.0
        assert report.per_group == (5.0,)

    def test_identical_replicates_have_zero_afd(self):
        report = afd(ConditionedSamples([np.ones((4, 3))]))
        assert report.afd == 0.0

    def test_mean_over_groups(self):
        groups = [
            np.array([[0.0], [1.0]]),
            np.array([[0.0], [3.0]]),
        ]
        report = afd(ConditionedSamples(groups))
        assert report.per_group == (1.0, 3.0)
        assert report.afd == 2.0

    def test_permutation_invariance(self):
        rng = np.random.default_rng(0)
        g = rng.standard_normal((12, 3))
        a = afd(ConditionedSamples([g])).afd
        b = afd(ConditionedSamples([g[rng.permutation(12)]])).afd
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)

    def test_scaling_is_homogeneous(self):
        rng = np.random.default_rng(1)
        g = rng.standard_normal((8, 2))
        base = afd(ConditionedSamples([g])).afd
        scaled = afd(ConditionedSamples([-2.5 * g])).afd
        np.testing.assert_allclose(scaled, 2.5 * base, rtol=1e-12, atol=0)

    def test_single_replicate_rejected(self):
        with pytest.raises(ValueError, match="at least 2"):
            afd(ConditionedSamples([np.array([[1.0, 2.0]])]))

    def test_empty_groups_rejected(self):
        with pytest.raises(ValueError, match="at least one"):
            ConditionedSamples([])

    def test_mixed_dimensions_rejected(self):
        with pytest.raises(ValueError, match="feature dimension"):
            ConditionedSamples([np.zeros((2, 2)), np.zeros((2, 3))])


class TestFeatureMaps:
    def test_identity_features_pass_through(self):
        g = np.arange(6, dtype=np.float64).reshape(3, 2)
        cs = ConditionedSamples([g], feature_map=Identity())
        np.testing.assert_array_equal(cs.features()[0], g)

    def test_projection_applies_the_matrix(self):
        g = np.array([[1.0, 0.0], [0.0, 1.0]])
        proj = AffineProjection([[2.0, 0.0]])
        cs = ConditionedSamples([g], feature_map=proj)
        np.testing.assert_array_equal(cs.features()[0], [[2.0], [0.0]])

    def test_projection_changes_afd_consistently(self):
        """afd in a projected space equals afd of the projected points."""
        rng = np.random.default_rng(2)
        g = rng.standard_normal((6, 4))
        proj = random_projection(4, 2, seed=3)
        direct = afd(ConditionedSamples([g @ proj.matrix.T])).afd
        mapped = afd(ConditionedSamples([g], feature_map=proj)).afd
        np.testing.assert_allclose(mapped, direct, rtol=0, atol=1e-12)

    def test_random_projection_is_seeded(self):
        a = random_projection(5, 2, seed=7).matrix
        b = random_projection(5, 2, seed=7).matrix
        c = random_projection(5, 2, seed=8).matrix
        np.testing.assert_array_equal(a, b)
        assert np.any(a != c)
        assert a.shape == (2, 5)


class TestMse:
    def test_constant_offset_example(self):
        batch = np.zeros((4, 2))
        reference = np.full((4, 2), 2.0)
        assert mse(batch, reference) == 4.0

    def test_zero_for_identical_inputs(self):
        x = np.random.default_rng(3).standard_normal((5, 3))
        assert mse(x, x) == 0.0

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="shape mismatch"):
            mse(np.zeros((3, 2)), np.zeros((2, 3)))


class TestEnergyDistance:
    def test_separated_point_masses(self):
        """Two copies at 0 vs two at 10: D = 2*10 - 0 - 0 = 20."""
        a = np.zeros((2, 1))
        b = np.full((2, 1), 10.0)
        assert energy_distance(a, b) == 20.0

    def test_self_distance_is_nonpositive_and_tiny(self):
        """The U-statistic on a sample against itself stays at or below 0."""
        x = np.random.default_rng(4).standard_normal((300, 2))
        d = energy_distance(x, x)
        assert d <= 1e-12

    def test_symmetry(self):
        rng = np.random.default_rng(5)
        a = rng.standard_normal((40, 2))
        b = rng.standard_normal((50, 2)) + 0.3
        np.testing.assert_allclose(
            energy_distance(a, b), energy_distance(b, a), rtol=0, atol=1e-12
        )

    def test_grows_with_separation(self):
        rng = np.random.default_rng(6)
        a = rng.standard_normal((100, 1))
        b = rng.standard_normal((100, 1))
        near = energy_distance(a, b + 0.1)
        far = energy_distance(a, b + 3.0)
        assert far > near

    def test_too_few_samples_rejected(self):
        with pytest.raises(ValueError, match="at least 2"):
            energy_distance(np.zeros((1, 1)), np.zeros((5, 1)))

    def test_permutation_quantile_is_deterministic(self):
        rng = np.random.default_rng(7)
        a = rng.standard_normal((60, 2))
        b = rng.standard_normal((60, 2))
        q1 = energy_permutation_quantile(a, b, n_permutations=50, seed=9)
        q2 = energy_permutation_quantile(a, b, n_permutations=50, seed=9)
        assert q1 == q2
        assert q1 > 0

    def test_permutation_quantile_bounds_null_statistic(self):
        """Same-distribution samples fall under the permutation threshold."""
        rng = np.random.default_rng(8)
        a = rng.standard_normal((120, 2))
        b = rng.standard_normal((120, 2))
        d = energy_distance(a, b)
        q = energy_permutation_quantile(a, b, n_permutations=200, seed=0)
        assert d <= 3 * q

    def test_permutation_test_needs_two_per_side(self):
        with pytest.raises(ValueError, match="at least 2"):
            energy_permutation_quantile(np.zeros((1, 1)), np.zeros((4, 1)))


class TestConvergenceSlope:
    def test_exact_quadratic_decay(self):
        dts = [0.1, 0.05, 0.025]
        errors = [1e-2, 2.5e-3, 6.25e-4]
        np.testing.assert_allclose(convergence_slope(dts, errors), 2.0, rtol=0, atol=1e-12)

    def test_exact_linear_decay(self):
        dts = [0.2, 0.1, 0.05, 0.025]
        errors = [0.4, 0.2, 0.1, 0.05]
        np.testing.assert_allclose(convergence_slope(dts, errors), 1.0, rtol=0, atol=1e-12)

    def test_prefactor_does_not_matter(self):
        dts = [0.1, 0.05, 0.025]
        errors = [7.0 * dt**1.5 for dt in dts]
        np.testing.assert_allclose(convergence_slope(dts, errors), 1.5, rtol=0, atol=1e-12)

    def test_length_and_shape_validation(self):
        with pytest.raises(ValueError, match="length >= 3"):
            convergence_slope([0.1, 0.05], [1.0, 0.5])
        with pytest.raises(ValueError, match="length >= 3"):
            convergence_slope([0.1, 0.05, 0.025], [1.0, 0.5])

    def test_positivity_validation(self):
        with pytest.raises(ValueError, match="positive"):
            convergence_slope([0.1, 0.05, 0.025], [1.0, 0.0, 0.1])
        with pytest.raises(ValueError, match="positive"):
            convergence_slope([0.1, -0.05, 0.025], [1.0, 0.5, 0.25])
