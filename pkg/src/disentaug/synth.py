"""Synthetic fine-grained datasets with a known shared intra-class-variation model.

Every class is a prototype in an underlying factor space; items are drawn by
adding class-independent Gaussian variation (one scale vector shared by all
classes) to the prototype and pushing the result through a frozen random
render map into feature space. Because the variation model is explicit,
downstream claims about recovering or transferring intra-class variance can
be checked against ground truth.

Also owns the plain-text feature-file format used to ingest externally
extracted features.
"""

from __future__ import annotations

import dataclasses
import os

import numpy as np

from .errors import ConfigError, DataError

SPLIT_BASE = "base-train"
SPLIT_NOVEL = "novel"
_SPLIT_CODES = {SPLIT_BASE: 0, SPLIT_NOVEL: 1}


@dataclasses.dataclass(frozen=True)
class TaskSpec:
    """Frozen description of one synthetic task, fully determined by its seed."""

    n_base_classes: int
    n_novel_classes: int
    latent_dim: int
    feature_shape: tuple  # (channels, height, width)
    prototype_scale: float
    shared_variation_scales: np.ndarray  # (latent_dim,), same for every class
    class_prototypes: np.ndarray  # (n_base + n_novel, latent_dim)
    render_weight: np.ndarray  # (flat_dim, latent_dim)
    render_bias: np.ndarray  # (flat_dim,)
    seed: int

    @property
    def n_classes(self) -> int:
        return self.n_base_classes + self.n_novel_classes

    @property
    def flat_dim(self) -> int:
        c, h, w = self.feature_shape
        return c * h * w

    def class_range(self, split: str) -> range:
        if split == SPLIT_BASE:
            return range(self.n_base_classes)
        if split == SPLIT_NOVEL:
            return range(self.n_base_classes, self.n_classes)
        raise ConfigError(f"unknown split {split!r}")


@dataclasses.dataclass
class LabeledDataset:
    """Features plus integer labels; the unit of exchange between modules."""

    features: np.ndarray  # (n, channels, height, width) float64
    labels: np.ndarray  # (n,) int64
    split: str | None = None
    provenance: str = "synthetic"
    label_map: dict | None = None  # dense label -> original file label

    def __len__(self) -> int:
        return self.features.shape[0]

    def __getitem__(self, i):
        return self.features[i], int(self.labels[i])

    @property
    def feature_shape(self) -> tuple:
        return tuple(self.features.shape[1:])

    def flat_features(self) -> np.ndarray:
        return self.features.reshape(len(self), -1)

    def class_labels(self) -> np.ndarray:
        return np.unique(self.labels)


def make_task_spec(
    n_base_classes: int,
    n_novel_classes: int,
    latent_dim: int,
    feature_shape=(32, 1, 1),
    prototype_scale: float = 1.0,
    shared_variation_scales=0.5,
    seed: int = 0,
) -> TaskSpec:
    """Build a seeded TaskSpec.

    ``shared_variation_scales`` may be a scalar (applied to every factor
    dimension) or a length-``latent_dim`` sequence. Base and novel prototypes
    are drawn from the same zero-mean Gaussian; fine-grainedness is set by
    the ratio prototype_scale : variation scale (default 2:1).
    """
    if n_base_classes <= 0 or n_novel_classes <= 0 or latent_dim <= 0:
        raise ConfigError("class counts and latent_dim must be positive")
    feature_shape = tuple(int(v) for v in feature_shape)
    if len(feature_shape) != 3 or any(v <= 0 for v in feature_shape):
        raise ConfigError(f"feature_shape must be 3 positive dims, got {feature_shape}")
    flat_dim = int(np.prod(feature_shape))
    if latent_dim > flat_dim:
        raise ConfigError(
            f"latent_dim {latent_dim} exceeds flattened feature size {flat_dim}"
        )
    scales = np.asarray(shared_variation_scales, dtype=np.float64)
    if scales.ndim == 0:
        scales = np.full(latent_dim, float(scales))
    if scales.shape != (latent_dim,):
        raise ConfigError(
            f"shared_variation_scales must be scalar or length {latent_dim}"
        )
    if np.any(scales < 0) or prototype_scale < 0:
        raise ConfigError("scales must be non-negative")

    rng = np.random.default_rng(seed)
    n_classes = n_base_classes + n_novel_classes
    prototypes = rng.normal(0.0, prototype_scale, size=(n_classes, latent_dim))
    if prototype_scale > 0:
        diffs = prototypes[:, None, :] - prototypes[None, :, :]
        dist = np.linalg.norm(diffs, axis=-1)
        np.fill_diagonal(dist, np.inf)
        if dist.min() == 0.0:  # probability-zero collision under a continuous draw
            raise ConfigError("prototype collision; use a different seed")
    render_weight = rng.normal(
        0.0, 1.0 / np.sqrt(latent_dim), size=(flat_dim, latent_dim)
    )
    render_bias = rng.normal(0.0, 0.1, size=flat_dim)
    spec = TaskSpec(
        n_base_classes=n_base_classes,
        n_novel_classes=n_novel_classes,
        latent_dim=latent_dim,
        feature_shape=feature_shape,
        prototype_scale=float(prototype_scale),
        shared_variation_scales=scales,
        class_prototypes=prototypes,
        render_weight=render_weight,
        render_bias=render_bias,
        seed=int(seed),
    )
    return spec


def sample_class_factors(
    spec: TaskSpec, class_label: int, n: int, rng: np.random.Generator
) -> np.ndarray:
    """Draw ``n`` factor-space points for one class: prototype + shared variation."""
    proto = spec.class_prototypes[class_label]
    noise = rng.normal(0.0, 1.0, size=(n, spec.latent_dim))
    return proto[None, :] + noise * spec.shared_variation_scales[None, :]


def render_features(spec: TaskSpec, factors: np.ndarray) -> np.ndarray:
    """Map factor-space points to feature maps via the frozen render map.

    Affine map followed by the pointwise smooth nonlinearity t + tanh(t),
    which is monotone per coordinate, so factor structure stays recoverable
    without the map being linear.
    """
    pre = factors @ spec.render_weight.T + spec.render_bias[None, :]
    flat = pre + np.tanh(pre)
    return flat.reshape((factors.shape[0],) + spec.feature_shape)


def sample_dataset(
    spec: TaskSpec, n_per_class: int, split: str, seed: int = 0
) -> LabeledDataset:
    """Generate ``n_per_class`` items for every class of ``split``.

    Pure function of (spec, split, seed); per-item variation noise is
    independent across items and classes.
    """
    if split not in _SPLIT_CODES:
        raise ConfigError(f"unknown split {split!r}")
    if n_per_class < 0:
        raise ConfigError("n_per_class must be >= 0")
    classes = spec.class_range(split)
    rng = np.random.default_rng(
        np.random.SeedSequence([spec.seed, _SPLIT_CODES[split], int(seed)])
    )
    feats = []
    labels = []
    for c in classes:
        factors = sample_class_factors(spec, c, n_per_class, rng)
        feats.append(render_features(spec, factors))
        labels.append(np.full(n_per_class, c, dtype=np.int64))
    if feats:
        features = np.concatenate(feats, axis=0)
        label_arr = np.concatenate(labels)
    else:
        features = np.zeros((0,) + spec.feature_shape)
        label_arr = np.zeros(0, dtype=np.int64)
    return LabeledDataset(
        features=features, labels=label_arr, split=split, provenance="synthetic"
    )


def save_feature_file(path, features: np.ndarray, labels) -> None:
    """Write features to the plain-text feature format.

    First line ``dim=<D> count=<N>``, then one ``label,v0,...,v{D-1}`` row per
    item. Values are printed with shortest-round-trip precision so a load
    reproduces them exactly.
    """
    features = np.asarray(features, dtype=np.float64)
    features = features.reshape(features.shape[0], -1)
    labels = np.asarray(labels)
    n, dim = features.shape
    if labels.shape != (n,):
        raise DataError(f"labels length {labels.shape} does not match {n} rows")
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"dim={dim} count={n}\n")
        for row, label in zip(features, labels):
            vals = ",".join(repr(float(v)) for v in row)
            fh.write(f"{int(label)},{vals}\n")


def load_feature_file(path) -> LabeledDataset:
    """Read a feature file into a dataset of 1x1 spatial maps.

    Row order is preserved. File labels must be non-negative integers; they
    are remapped densely (0..K-1, in order of first appearance) with the
    original values kept in ``label_map``.
    """
    if not os.path.exists(path):
        raise DataError(f"feature file not found: {path}")
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip()
        parts = header.split()
        if (
            len(parts) != 2
            or not parts[0].startswith("dim=")
            or not parts[1].startswith("count=")
        ):
            raise DataError(f"malformed header {header!r}")
        try:
            dim = int(parts[0][4:])
            count = int(parts[1][6:])
        except ValueError as exc:
            raise DataError(f"malformed header {header!r}") from exc
        if dim <= 0 or count < 0:
            raise DataError(f"invalid header values {header!r}")
        features = np.zeros((count, dim), dtype=np.float64)
        raw_labels = np.zeros(count, dtype=np.int64)
        for i in range(count):
            line = fh.readline()
            if not line:
                raise DataError(f"expected {count} rows, file ended at row {i}")
            fields = line.rstrip("\n").split(",")
            if len(fields) != dim + 1:
                raise DataError(
                    f"row {i}: expected {dim} values, got {len(fields) - 1}"
                )
            try:
                label = int(fields[0])
            except ValueError as exc:
                raise DataError(f"row {i}: non-integer label {fields[0]!r}") from exc
            if label < 0:
                raise DataError(f"row {i}: negative label {label}")
            raw_labels[i] = label
            try:
                features[i] = [float(v) for v in fields[1:]]
            except ValueError as exc:
                raise DataError(f"row {i}: non-numeric value") from exc
        if fh.readline():
            raise DataError(f"more rows than declared count={count}")

    remap: dict[int, int] = {}
    dense = np.zeros(count, dtype=np.int64)
    for i, lab in enumerate(raw_labels):
        lab = int(lab)
        if lab not in remap:
            remap[lab] = len(remap)
        dense[i] = remap[lab]
    label_map = {dense_l: orig for orig, dense_l in remap.items()}
    return LabeledDataset(
        features=features.reshape(count, dim, 1, 1),
        labels=dense,
        split=None,
        provenance="file",
        label_map=label_map,
    )
