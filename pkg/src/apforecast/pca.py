"""Principal-component reduction of the scaled feature matrix.

Components are eigenvectors of the population covariance, sorted by
descending variance, with a deterministic sign convention (each component's
largest-magnitude coordinate is positive) so repeated fits are identical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


class PcaError(ValueError):
    """Invalid PCA input."""


@dataclass
class PcaModel:
    mean: np.ndarray
    components: np.ndarray            # (r, p), orthonormal rows
    explained_variance_ratio: np.ndarray  # (r,)
    retained: int
    component_variances: np.ndarray   # (r,) eigenvalues of retained components
    total_variance: float             # sum over the full spectrum

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "components": self.components.tolist(),
            "explained_variance_ratio": self.explained_variance_ratio.tolist(),
            "retained": self.retained,
            "component_variances": self.component_variances.tolist(),
            "total_variance": self.total_variance,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "PcaModel":
        return cls(
            mean=np.asarray(payload["mean"], dtype=float),
            components=np.asarray(payload["components"], dtype=float),
            explained_variance_ratio=np.asarray(payload["explained_variance_ratio"], dtype=float),
            retained=int(payload["retained"]),
            component_variances=np.asarray(payload["component_variances"], dtype=float),
            total_variance=float(payload["total_variance"]),
        )

    def save(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path: str) -> "PcaModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def pca_fit(matrix: np.ndarray, variance_target: float = 0.90) -> PcaModel:
    """Fit PCA on the rows of ``matrix`` (population covariance).

    Retains the smallest number of leading components whose cumulative
    explained-variance ratio reaches ``variance_target``. Rank-deficient
    input succeeds; the zero-variance tail is never retained.
    """
    X = np.asarray(matrix, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise PcaError("PCA requires a 2-D matrix with at least 2 rows")
    if not np.all(np.isfinite(X)):
        raise PcaError("PCA input must be finite")
    if not (0.0 < variance_target <= 1.0):
        raise PcaError("variance_target must lie in (0, 1]")

    mean = X.mean(axis=0)
    centered = X - mean
    cov = centered.T @ centered / X.shape[0]
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = eigvals[order]
    eigvecs = eigvecs[:, order]

    eigvals = np.maximum(eigvals, 0.0)
    total = float(eigvals.sum())
    if total <= 0.0:
        raise PcaError("matrix has zero variance; nothing to reduce")
    cutoff = eigvals.max() * 1e-12
    eigvals[eigvals < cutoff] = 0.0
    ratios = eigvals / eigvals.sum()

    cumulative = np.cumsum(ratios)
    retained = int(np.searchsorted(cumulative, variance_target - 1e-12) + 1)
    rank = int(np.count_nonzero(eigvals))
    retained = min(retained, rank)

    components = eigvecs[:, :retained].T.copy()
    for row in components:
        anchor = int(np.argmax(np.abs(row)))
        if row[anchor] < 0:
            row *= -1.0

    return PcaModel(
        mean=mean,
        components=components,
        explained_variance_ratio=ratios[:retained].copy(),
        retained=retained,
        component_variances=eigvals[:retained].copy(),
        total_variance=float(eigvals.sum()),
    )


def pca_transform(model: PcaModel, matrix: np.ndarray) -> np.ndarray:
    """Project rows onto the retained components: (x - mean) @ components.T."""
    X = np.asarray(matrix, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != model.mean.size:
        raise PcaError(f"expected {model.mean.size} columns, got {X.shape[1]}")
    return (X - model.mean) @ model.components.T


def pca_inverse_transform(model: PcaModel, reduced: np.ndarray) -> np.ndarray:
    Z = np.asarray(reduced, dtype=float)
    if Z.ndim == 1:
        Z = Z[None, :]
    if Z.shape[1] != model.retained:
        raise PcaError(f"expected {model.retained} columns, got {Z.shape[1]}")
    return Z @ model.components + model.mean


def reconstruction_error(model: PcaModel, matrix: np.ndarray) -> float:
    """Mean squared per-row reconstruction residual.

    On the fit data this equals the summed variance of the discarded
    components (population normalisation).
    """
    X = np.asarray(matrix, dtype=float)
    reconstructed = pca_inverse_transform(model, pca_transform(model, X))
    residual = X - reconstructed
    return float(np.mean(np.sum(residual * residual, axis=1)))
