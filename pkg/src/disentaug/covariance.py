"""Pooled within-class covariance estimation and Gaussian perturbation
sampling, backing the covariance-transfer augmentation baseline."""

from __future__ import annotations

import dataclasses

import numpy as np

from .errors import DataError, DegenerateInputError


@dataclasses.dataclass
class PooledCovariance:
    sigma_hat: np.ndarray  # (d, d), symmetric PSD after shrinkage
    shrinkage: float
    n_samples: int


def estimate_pooled_covariance(
    features: np.ndarray, labels: np.ndarray, shrinkage: float = 0.1
) -> PooledCovariance:
    """Pool per-class centered scatter with unbiased denominator N - C, then
    blend toward the diagonal: (1 - shrinkage) * S + shrinkage * diag(S)."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if features.ndim != 2 or features.shape[0] != labels.shape[0]:
        raise DataError("features must be (n, d) with matching labels")
    if not 0.0 <= shrinkage <= 1.0:
        raise DataError(f"shrinkage must be in [0, 1], got {shrinkage}")
    classes = np.unique(labels)
    n, d = features.shape
    scatter = np.zeros((d, d))
    for c in classes:
        members = features[labels == c]
        if members.shape[0] < 2:
            raise DataError(f"class {int(c)} has {members.shape[0]} samples, need >= 2")
        centered = members - members.mean(axis=0)
        scatter += centered.T @ centered
    pooled = scatter / (n - len(classes))
    blended = (1.0 - shrinkage) * pooled + shrinkage * np.diag(np.diag(pooled))
    blended = 0.5 * (blended + blended.T)
    return PooledCovariance(sigma_hat=blended, shrinkage=float(shrinkage), n_samples=n)


def sample_perturbation(
    cov: PooledCovariance, rng: np.random.Generator, n: int = 1
) -> np.ndarray:
    """Draw n rows from N(0, sigma_hat) via the symmetric eigen square root."""
    sigma = cov.sigma_hat
    eigvals, eigvecs = np.linalg.eigh(sigma)
    if eigvals.min() < -1e-9 * max(1.0, abs(eigvals.max())):
        raise DegenerateInputError(
            f"covariance not PSD after shrinkage: min eigenvalue {eigvals.min():.3e}, "
            f"max {eigvals.max():.3e}, shrinkage {cov.shrinkage}"
        )
    root = eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))
    eps = rng.normal(0.0, 1.0, size=(n, sigma.shape[0]))
    return eps @ root.T
