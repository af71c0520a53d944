import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from jointbci import csp
from jointbci.errors import DegenerateClassError, DegenerateInputError, RankError

from oracles import plain_csp, random_trials


class TestCovariance:
    def test_identity_like(self):
        np.testing.assert_allclose(csp.trial_covariance(np.eye(2)), np.diag([0.5, 0.5]))

    def test_ones(self):
        np.testing.assert_allclose(csp.trial_covariance(np.ones((2, 2))), np.full((2, 2), 0.5))

    def test_trace_one(self, rng):
        x = rng.standard_normal((5, 40)) * 7
        r = csp.trial_covariance(x)
        assert abs(np.trace(r) - 1) < 1e-12
        assert np.allclose(r, r.T) and np.linalg.eigvalsh(r).min() > -1e-12

    def test_zero_signal(self):
        with pytest.raises(DegenerateInputError):
            csp.trial_covariance(np.zeros((3, 10)))

    def test_vectorised_matches(self, rng):
        data = rng.standard_normal((4, 3, 30))
        np.testing.assert_allclose(csp.trial_covariances(data), [csp.trial_covariance(x) for x in data])


class TestComposite:
    def setup_method(self):
        r = np.random.default_rng(1)
        self.covs = np.array([csp.trial_covariance(r.standard_normal((3, 20))) for _ in range(4)])
        self.y = np.array([1, 1, -1, -1])

    def test_equal_weights_is_mean(self):
        r1, r2 = csp.weighted_composite_covariance(self.covs, np.ones(4), self.y)
        np.testing.assert_allclose(r1, self.covs[:2].mean(0))
        np.testing.assert_allclose(r2, self.covs[2:].mean(0))

    def test_zero_weight_excludes(self):
        r1, _ = csp.weighted_composite_covariance(self.covs, [1, 0, 1, 1], self.y)
        np.testing.assert_array_equal(r1, self.covs[0])

    def test_three_to_one(self):
        r1, _ = csp.weighted_composite_covariance(self.covs, [3, 1, 1, 1], self.y)
        np.testing.assert_allclose(r1, 0.75 * self.covs[0] + 0.25 * self.covs[1], atol=1e-15)

    def test_zero_class(self):
        with pytest.raises(DegenerateClassError):
            csp.weighted_composite_covariance(self.covs, [1, 1, 0, 0], self.y)


class TestFit:
    def test_equal_class_covariances(self, rng):
        data = rng.standard_normal((2, 4, 100))
        data[1] = data[0]
        bank = csp.fit_weighted_csp(data, [1, 1], [1, -1], 2)
        np.testing.assert_allclose(bank.eigenvalues, 0.5, atol=1e-8)

    def test_matches_plain_csp(self, rng):
        data, y = random_trials(rng)
        bank = csp.fit_weighted_csp(data, np.ones(len(y)), y, 2)
        ref, ref_lam = plain_csp(data, y, 2)
        assert np.max(csp.subspace_angles(bank.filters, ref)) < 1e-6
        np.testing.assert_allclose(bank.eigenvalues, ref_lam, atol=1e-8)

    def test_complementarity_and_diagonal(self, rng):
        data, y = random_trials(rng)
        w = rng.uniform(0.1, 1, len(y))
        bank = csp.fit_weighted_csp(data, w, y, 3)
        r1, r2 = csp.weighted_composite_covariance(csp.trial_covariances(data), w, y)
        d1 = bank.filters @ r1 @ bank.filters.T
        d2 = bank.filters @ r2 @ bank.filters.T
        assert np.max(np.abs(d1 - np.diag(np.diag(d1)))) < 1e-6
        assert np.max(np.abs(d2 - np.diag(np.diag(d2)))) < 1e-6
        np.testing.assert_allclose(np.diag(d1) + np.diag(d2), 1.0, atol=1e-8)
        np.testing.assert_allclose(np.diag(d1), bank.eigenvalues, atol=1e-8)

    def test_ordering(self, rng):
        data, y = random_trials(rng)
        ev = csp.fit_weighted_csp(data, np.ones(len(y)), y, 3).eigenvalues
        assert np.all(np.diff(ev) <= 0)

    def test_two_channel_oracle(self, rng):
        n = 40
        y = np.where(np.arange(n) < n // 2, 1, -1)
        x = rng.standard_normal((n, 2, 300))
        x[y == 1, 0] *= 4
        x[y == -1, 1] *= 4
        bank = csp.fit_weighted_csp(x, np.ones(n), y, 1)
        w = bank.filters[0]
        v1 = np.mean([np.var(w @ xi) for xi in x[y == 1]])
        v2 = np.mean([np.var(w @ xi) for xi in x[y == -1]])
        assert v1 / (v1 + v2) > 0.9

    def test_rank_error(self, rng):
        base = rng.standard_normal((1, 100))
        data = np.stack([np.vstack([base, base, base]) * s for s in (1.0, 2.0)])
        with pytest.raises(RankError):
            csp.fit_weighted_csp(data, [1, 1], [1, -1], 1)

    def test_permutation_invariance(self, rng):
        data, y = random_trials(rng)
        w = rng.uniform(0.1, 1, len(y))
        perm = rng.permutation(len(y))
        a = csp.fit_weighted_csp(data, w, y, 2)
        b = csp.fit_weighted_csp(data[perm], w[perm], y[perm], 2)
        assert np.max(csp.subspace_angles(a.filters, b.filters)) < 1e-8

    def test_duplicate_equals_double_weight(self, rng):
        data, y = random_trials(rng)
        w = rng.uniform(0.1, 1, len(y))
        a = csp.fit_weighted_csp(np.concatenate([data, data[:1]]), np.append(w, w[0]), np.append(y, y[0]), 2)
        w2 = w.copy()
        w2[0] *= 2
        b = csp.fit_weighted_csp(data, w2, y, 2)
        np.testing.assert_allclose(a.filters, b.filters, atol=1e-8)

    def test_serialisation(self, rng):
        data, y = random_trials(rng)
        bank = csp.fit_weighted_csp(data, np.ones(len(y)), y, 2)
        back = csp.SpatialFilterBank.from_dict(bank.to_dict())
        np.testing.assert_array_equal(back.filters, bank.filters)


class TestFeatures:
    def _bank(self, k):
        filters = np.eye(k)
        return csp.SpatialFilterBank(filters=filters, eigenvalues=np.linspace(1, 0, k), n_pairs=k // 2)

    def test_uniform(self, rng):
        x = np.vstack([np.tile([1.0, -1.0], 50)] * 6)
        np.testing.assert_allclose(csp.extract_features(self._bank(6), x), np.log(1 / 6))

    def test_hand_ratio(self):
        x = np.vstack([np.tile([2.0, -2.0], 50)] + [np.tile([1.0, -1.0], 50)] * 5)
        assert abs(csp.extract_features(self._bank(6), x)[0] - np.log(4 / 9)) < 1e-12

    @given(st.floats(1e-3, 1e3))
    def test_scale_invariance(self, c):
        x = np.random.default_rng(3).standard_normal((6, 80))
        bank = self._bank(6)
        np.testing.assert_allclose(csp.extract_features(bank, c * x), csp.extract_features(bank, x), atol=1e-10)

    def test_zero_variance(self):
        with pytest.raises(DegenerateInputError):
            csp.extract_features(self._bank(6), np.ones((6, 30)))

    def test_covariance_path_matches(self, rng):
        data, y = random_trials(rng, n=6)
        bank = csp.fit_weighted_csp(data, np.ones(6), y, 2)
        direct = np.array([csp.extract_features(bank, x) for x in data])
        np.testing.assert_allclose(csp.features_from_covariances(bank, csp.sample_covariances(data)), direct,
                                   atol=1e-10)
