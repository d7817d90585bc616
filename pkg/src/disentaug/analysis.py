"""Cluster-geometry and distribution-fidelity metrics over labeled feature
sets: intra-class variance, inter-class center distances, a Davies-Bouldin
style index, nearest-real-neighbor class retention, and a 2-D principal
projection for external plotting.

Conventions: intra-class variance is the mean squared deviation from the
class center, while inter-class distance is the unsquared Euclidean distance
between centers, so the index ratio is not scale-free (it scales linearly
with the data). The reported index is the mean of the per-class maxima.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .errors import DataError, DegenerateInputError


@dataclasses.dataclass
class GeometryReport:
    d_intra: float
    d_inter: float
    dbi: float
    per_class_intra: dict
    per_class_dbi: dict
    n_classes: int
    n_samples: int
    aggregation: str = "mean-of-per-class-max"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _check(features, labels):
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if features.ndim != 2:
        raise DataError(f"features must be (n, d), got {features.shape}")
    if labels.shape != (features.shape[0],):
        raise DataError("labels must parallel features")
    if features.shape[0] == 0:
        raise DataError("empty feature set")
    return features, labels


def class_centers(features, labels):
    features, labels = _check(features, labels)
    classes = np.unique(labels)
    centers = np.stack([features[labels == c].mean(axis=0) for c in classes])
    return classes, centers


def intra_class_variance(features, labels):
    """Per class: mean of squared Euclidean deviations from the class center.

    Returns (per_class dict, mean over classes).
    """
    features, labels = _check(features, labels)
    classes, centers = class_centers(features, labels)
    per_class = {}
    for c, center in zip(classes, centers):
        members = features[labels == c]
        per_class[int(c)] = float(((members - center) ** 2).sum(axis=1).mean())
    return per_class, float(np.mean(list(per_class.values())))


def inter_class_distance(features, labels):
    """Euclidean distances between class centers.

    Returns (classes, distance matrix, mean over unordered pairs).
    """
    features, labels = _check(features, labels)
    classes, centers = class_centers(features, labels)
    if len(classes) < 2:
        raise DataError("inter-class distance needs at least 2 classes")
    diff = centers[:, None, :] - centers[None, :, :]
    matrix = np.sqrt((diff**2).sum(axis=-1))
    iu = np.triu_indices(len(classes), k=1)
    return classes, matrix, float(matrix[iu].mean())


def dbi(features, labels):
    """Per class i: max over j != i of (intra_i + intra_j) / inter_ij.

    Returns (per_class dict, mean of per-class values). Raises on coincident
    class centers, where the ratio is undefined.
    """
    per_intra, _ = intra_class_variance(features, labels)
    classes, inter, _ = inter_class_distance(features, labels)
    k = len(classes)
    off_diag = inter[~np.eye(k, dtype=bool)]
    if off_diag.min() == 0.0:
        raise DegenerateInputError("coincident class centers make the index undefined")
    per_class = {}
    for a, ca in enumerate(classes):
        worst = max(
            (per_intra[int(ca)] + per_intra[int(cb)]) / inter[a, b]
            for b, cb in enumerate(classes)
            if b != a
        )
        per_class[int(ca)] = float(worst)
    return per_class, float(np.mean(list(per_class.values())))


def geometry_report(features, labels) -> GeometryReport:
    per_intra, d_intra = intra_class_variance(features, labels)
    _, _, d_inter = inter_class_distance(features, labels)
    per_dbi, index = dbi(features, labels)
    return GeometryReport(
        d_intra=d_intra,
        d_inter=d_inter,
        dbi=index,
        per_class_intra=per_intra,
        per_class_dbi=per_dbi,
        n_classes=len(per_intra),
        n_samples=len(labels),
    )


def nn_class_retention(aug_features, aug_labels, real_features, real_labels) -> float:
    """Fraction of augmented features whose nearest real neighbor (Euclidean,
    ties broken by lowest index) carries the same label."""
    aug_features, aug_labels = _check(aug_features, aug_labels)
    real_features, real_labels = _check(real_features, real_labels)
    if aug_features.shape[1] != real_features.shape[1]:
        raise DataError(
            f"dimension mismatch: {aug_features.shape[1]} vs {real_features.shape[1]}"
        )
    hits = 0
    for feat, label in zip(aug_features, aug_labels):
        d2 = ((real_features - feat) ** 2).sum(axis=1)
        nearest = int(np.argmin(d2))  # argmin returns the lowest tied index
        hits += int(real_labels[nearest] == label)
    return hits / len(aug_labels)


def project_2d(features) -> np.ndarray:
    """Project onto the top-2 principal directions of the centered data.

    Sign convention: each direction is flipped so its largest-magnitude
    coordinate is positive, making the output deterministic. Rank-deficient
    inputs get a zero second axis.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] < 2:
        raise DataError("projection needs at least 2 samples of shape (n, d)")
    centered = features - features.mean(axis=0)
    cov = centered.T @ centered / (features.shape[0] - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    coords = np.zeros((features.shape[0], 2))
    tol = 1e-12 * max(1.0, float(abs(eigvals).max()))
    for axis in range(2):
        if axis >= len(order) or eigvals[order[axis]] <= tol:
            break
        vec = eigvecs[:, order[axis]]
        if vec[np.argmax(np.abs(vec))] < 0:
            vec = -vec
        coords[:, axis] = centered @ vec
    return coords
