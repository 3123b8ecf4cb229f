import numpy as np
import pytest

from apforecast.pca import (
    PcaError,
    PcaModel,
    pca_fit,
    pca_inverse_transform,
    pca_transform,
    reconstruction_error,
)


def random_matrix(seed, n=30, p=8, scale=None):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    if scale is not None:
        X *= scale
    return X


class TestPcaFit:
    def test_rank_one_line(self):
        x = np.linspace(-3, 3, 25)
        X = np.column_stack([x, 2 * x])
        model = pca_fit(X, variance_target=0.5)
        assert model.retained == 1
        assert model.explained_variance_ratio[0] == pytest.approx(1.0)
        direction = model.components[0] * np.sign(model.components[0][1])
        np.testing.assert_allclose(direction, np.array([1.0, 2.0]) / np.sqrt(5), atol=1e-12)

    def test_axis_aligned_variances(self):
        # independent columns with population variances 4 and 1
        rng = np.random.default_rng(5)
        a = rng.normal(size=4000)
        b = rng.normal(size=4000)
        a = (a - a.mean()) / a.std() * 2.0
        b = (b - b.mean()) / b.std()
        # de-correlate exactly so the covariance is diagonal
        b = b - (a @ b) / (a @ a) * a
        b = b / b.std()
        X = np.column_stack([a, b])
        model = pca_fit(X, variance_target=1.0)
        np.testing.assert_allclose(model.explained_variance_ratio, [0.8, 0.2], atol=1e-9)
        np.testing.assert_allclose(np.abs(model.components), np.eye(2), atol=1e-9)

    def test_full_target_keeps_rank_only(self):
        X = random_matrix(0, n=20, p=6)
        X[:, 5] = X[:, 0] + X[:, 1]  # rank-deficient
        model = pca_fit(X, variance_target=1.0)
        assert model.retained == 5

    def test_orthonormal_components(self):
        model = pca_fit(random_matrix(1), variance_target=1.0)
        gram = model.components @ model.components.T
        np.testing.assert_allclose(gram, np.eye(model.retained), atol=1e-9)

    def test_ratios_non_increasing_and_sum_to_one(self):
        model = pca_fit(random_matrix(2), variance_target=1.0)
        assert np.all(np.diff(model.explained_variance_ratio) <= 1e-12)
        assert model.explained_variance_ratio.sum() == pytest.approx(1.0, abs=1e-9)

    def test_determinism_and_sign_convention(self):
        X = random_matrix(3)
        a = pca_fit(X, 0.9)
        b = pca_fit(X, 0.9)
        np.testing.assert_array_equal(a.components, b.components)
        for row in a.components:
            assert row[np.argmax(np.abs(row))] > 0

    def test_too_few_rows(self):
        with pytest.raises(PcaError):
            pca_fit(np.ones((1, 4)))

    def test_zero_variance_rejected(self):
        with pytest.raises(PcaError):
            pca_fit(np.ones((5, 4)))

    def test_bad_target(self):
        with pytest.raises(PcaError):
            pca_fit(random_matrix(4), variance_target=0.0)


class TestPcaTransform:
    def test_mean_row_maps_to_zero(self):
        X = random_matrix(6)
        model = pca_fit(X, 0.9)
        np.testing.assert_allclose(pca_transform(model, X.mean(axis=0)), 0.0, atol=1e-12)

    def test_round_trip_full_retention(self):
        X = random_matrix(7)
        model = pca_fit(X, variance_target=1.0)
        reconstructed = pca_inverse_transform(model, pca_transform(model, X))
        np.testing.assert_allclose(reconstructed, X, atol=1e-8)

    def test_rank_one_second_coordinate_zero(self):
        x = np.linspace(0, 1, 10)
        X = np.column_stack([x, 2 * x, np.zeros(10)])
        model = pca_fit(X, variance_target=1.0)
        assert model.retained == 1  # zero-variance tail never retained
        Z = pca_transform(model, X)
        assert Z.shape == (10, 1)

    def test_dimension_mismatch(self):
        model = pca_fit(random_matrix(8), 0.9)
        with pytest.raises(PcaError):
            pca_transform(model, np.ones((3, 99)))

    def test_transform_variances_match_eigenvalues(self):
        for seed in range(20):
            X = random_matrix(100 + seed, n=40, p=6)
            model = pca_fit(X, variance_target=1.0)
            Z = pca_transform(model, X)
            np.testing.assert_allclose(Z.var(axis=0), model.component_variances, atol=1e-8)


class TestReconstructionError:
    def test_zero_when_everything_retained(self):
        X = random_matrix(9)
        model = pca_fit(X, variance_target=1.0)
        assert reconstruction_error(model, X) <= 1e-8

    def test_zero_for_rank_one_data(self):
        x = np.linspace(0, 5, 15)
        X = np.column_stack([x, -x])
        model = pca_fit(X, variance_target=0.9)
        assert reconstruction_error(model, X) <= 1e-8

    def test_equals_discarded_variance(self):
        X = random_matrix(10, n=50, p=5)
        model = pca_fit(X, variance_target=0.6)
        # independent oracle: full spectrum from the population covariance
        centered = X - X.mean(axis=0)
        eigvals = np.sort(np.linalg.eigvalsh(centered.T @ centered / X.shape[0]))[::-1]
        discarded = eigvals[model.retained :].sum()
        assert reconstruction_error(model, X) == pytest.approx(discarded, abs=1e-8)

    def test_diagonal_case_discarded_variance(self):
        # axis-aligned data: dropping the weak axis loses exactly its variance
        rng = np.random.default_rng(11)
        a = rng.normal(size=500)
        b = rng.normal(size=500)
        a = (a - a.mean()) / a.std() * 2.0
        b = (b - b.mean()) / b.std()
        b -= (a @ b) / (a @ a) * a
        b /= b.std()
        X = np.column_stack([a, b])
        model = pca_fit(X, variance_target=0.8)
        assert model.retained == 1
        assert reconstruction_error(model, X) == pytest.approx(1.0, abs=1e-9)


class TestPersistence:
    def test_json_round_trip(self, tmp_path):
        model = pca_fit(random_matrix(12), 0.9)
        path = tmp_path / "pca.json"
        model.save(str(path))
        loaded = PcaModel.load(str(path))
        np.testing.assert_array_equal(loaded.components, model.components)
        np.testing.assert_array_equal(loaded.mean, model.mean)
        assert loaded.retained == model.retained
        assert loaded.total_variance == model.total_variance
