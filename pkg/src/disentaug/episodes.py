"""N-way K-shot episode sampling, support-set augmentation schemes, episode
classifiers, and the benchmark harness that aggregates accuracy over many
episodes.

Augmentation schemes share one deterministic embedding (class vector plus
posterior mean); only the sampled perturbation differs:

* posterior: z_i + (mu + sigma * eps), the instance-conditioned draw
* prior: z_i + eps with eps ~ N(0, I)
* covariance-transfer: z_i + delta, delta ~ N(0, pooled base covariance)
* no-disentanglement: posterior draws of a separately trained plain VAE,
  whose latent models the whole feature (its own embedding space)
* none: originals only
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import torch

from .covariance import PooledCovariance, estimate_pooled_covariance, sample_perturbation
from .errors import ConfigError, DataError
from .model import FeatureDisentangler, PlainVae
from .synth import LabeledDataset
from .train import TrainConfig, train_plain_vae

SCHEME_KINDS = ("none", "posterior", "prior", "covariance-transfer", "no-disentanglement")


@dataclasses.dataclass
class Episode:
    way: int
    shot: int
    n_query: int
    support_x: np.ndarray  # (way*shot, ...feature dims)
    support_y: np.ndarray  # episode-local labels 0..way-1
    query_x: np.ndarray
    query_y: np.ndarray
    class_map: dict  # episode-local label -> dataset label
    support_indices: np.ndarray
    query_indices: np.ndarray


@dataclasses.dataclass
class AugmentationScheme:
    kind: str
    n_aug: int = 5
    covariance: PooledCovariance | None = None
    plain_vae: PlainVae | None = None

    def validate(self) -> None:
        if self.kind not in SCHEME_KINDS:
            raise ConfigError(f"unknown augmentation scheme {self.kind!r}")
        if self.n_aug < 0:
            raise ConfigError("n_aug must be >= 0")
        if self.kind == "covariance-transfer" and self.covariance is None:
            raise ConfigError("covariance-transfer scheme needs fitted covariance state")
        if self.kind == "no-disentanglement" and self.plain_vae is None:
            raise ConfigError("no-disentanglement scheme needs a fitted plain VAE")


@dataclasses.dataclass
class AugmentedSupport:
    """Support features after augmentation, with their additive decomposition.

    Every row satisfies features == base_parts + variance_parts (the stored
    arrays re-add to the stored sum exactly).
    """

    features: np.ndarray  # (m, d)
    labels: np.ndarray  # (m,)
    base_parts: np.ndarray  # (m, d): z_i (or plain-VAE mean)
    variance_parts: np.ndarray  # (m, d): the emitted variance component
    is_augmented: np.ndarray  # (m,) bool


@dataclasses.dataclass
class BenchmarkReport:
    mean_accuracy: float
    ci95: float
    n_episodes: int
    per_episode: list
    scheme: str
    n_aug: int
    classifier: str
    way: int
    shot: int
    n_query: int
    master_seed: int
    pooling: str

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def ledger_row(self) -> str:
        return ",".join(
            [
                self.scheme,
                self.classifier,
                str(self.way),
                str(self.shot),
                str(self.n_episodes),
                repr(self.mean_accuracy),
                repr(self.ci95),
                str(self.master_seed),
            ]
        )


LEDGER_HEADER = "scheme,classifier,way,shot,n_episodes,mean,ci95,seed"


def sample_episode(
    dataset: LabeledDataset, way: int, shot: int, n_query: int, rng: np.random.Generator
) -> Episode:
    """Uniformly choose `way` classes then `shot + n_query` items per class,
    both without replacement. Episode-local labels are 0..way-1."""
    labels = dataset.labels
    classes = np.unique(labels)
    if len(classes) < way:
        raise DataError(f"need {way} classes, dataset has {len(classes)}")
    chosen = rng.choice(classes, size=way, replace=False)
    support_idx, query_idx = [], []
    support_y, query_y = [], []
    for local, c in enumerate(chosen):
        members = np.flatnonzero(labels == c)
        if len(members) < shot + n_query:
            raise DataError(
                f"class {int(c)} has {len(members)} items, needs {shot + n_query}"
            )
        picked = rng.choice(members, size=shot + n_query, replace=False)
        support_idx.extend(picked[:shot])
        query_idx.extend(picked[shot:])
        support_y.extend([local] * shot)
        query_y.extend([local] * n_query)
    support_idx = np.asarray(support_idx)
    query_idx = np.asarray(query_idx)
    return Episode(
        way=way,
        shot=shot,
        n_query=n_query,
        support_x=dataset.features[support_idx],
        support_y=np.asarray(support_y, dtype=np.int64),
        query_x=dataset.features[query_idx],
        query_y=np.asarray(query_y, dtype=np.int64),
        class_map={local: int(c) for local, c in enumerate(chosen)},
        support_indices=support_idx,
        query_indices=query_idx,
    )


def prepare_scheme(
    kind: str,
    n_aug: int = 5,
    model: FeatureDisentangler | None = None,
    base_dataset: LabeledDataset | None = None,
    shrinkage: float = 0.1,
    vae_train_config: TrainConfig | None = None,
) -> AugmentationScheme:
    """Build scheme state. covariance-transfer pools the within-class
    covariance of base-class pooled features; no-disentanglement trains the
    plain VAE on the base split."""
    scheme = AugmentationScheme(kind=kind, n_aug=n_aug)
    if kind == "covariance-transfer":
        if model is None or base_dataset is None:
            raise ConfigError("covariance-transfer needs the model and base dataset")
        z_i = _pooled_features(model, base_dataset.features)
        scheme.covariance = estimate_pooled_covariance(
            z_i, base_dataset.labels, shrinkage=shrinkage
        )
    elif kind == "no-disentanglement":
        if model is None or base_dataset is None:
            raise ConfigError("no-disentanglement needs the model config and base dataset")
        vae = PlainVae(
            model.config.feature_shape,
            model.config.encoder_channels,
            model.config.log_var_clamp,
        )
        cfg = vae_train_config or TrainConfig(epochs=30, decay_epochs=(20,))
        train_plain_vae(base_dataset, vae, cfg)
        scheme.plain_vae = vae
    scheme.validate()
    return scheme


def _to_model_input(features: np.ndarray) -> torch.Tensor:
    return torch.as_tensor(np.ascontiguousarray(features), dtype=torch.float32)


@torch.no_grad()
def _pooled_features(model: FeatureDisentangler, features: np.ndarray) -> np.ndarray:
    model.eval()
    x_map = model.extract(_to_model_input(features))
    return model.pool(x_map).double().numpy()


@torch.no_grad()
def _posterior_arrays(model: FeatureDisentangler, features: np.ndarray):
    """Batched eval-mode pass: (z_i, mu, sigma) as float64 numpy arrays."""
    model.eval()
    _, z_i, stats, _ = model.embed(_to_model_input(features))
    sigma = torch.exp(0.5 * stats.log_var)
    return z_i.double().numpy(), stats.mu.double().numpy(), sigma.double().numpy()


@torch.no_grad()
def _plain_vae_arrays(vae: PlainVae, features: np.ndarray):
    vae.eval()
    stats = vae.encoder(_to_model_input(features).reshape(features.shape[0], *vae.encoder.feature_shape))
    sigma = torch.exp(0.5 * stats.log_var)
    return stats.mu.double().numpy(), sigma.double().numpy()


def embed_features(
    model: FeatureDisentangler, features: np.ndarray, scheme: AugmentationScheme
) -> np.ndarray:
    """Deterministic embedding in the scheme's feature space."""
    if scheme.kind == "no-disentanglement":
        mu, _ = _plain_vae_arrays(scheme.plain_vae, features)
        return mu
    z_i, mu, _ = _posterior_arrays(model, features)
    return z_i + mu


def augment_feature_set(
    model: FeatureDisentangler,
    inputs: np.ndarray,
    input_labels: np.ndarray,
    scheme: AugmentationScheme,
    rng: np.random.Generator,
) -> AugmentedSupport:
    """Emit each item's embedding followed by its n_aug augmentations.

    Augmented labels inherit the item's label.
    """
    scheme.validate()
    n_aug = scheme.n_aug
    if scheme.kind == "no-disentanglement":
        base, sigma = _plain_vae_arrays(scheme.plain_vae, inputs)
        det_var = np.zeros_like(base)
    else:
        z_i, mu, sigma = _posterior_arrays(model, inputs)
        base, det_var = z_i, mu

    feats, labels, bases, variances, aug_flags = [], [], [], [], []
    for k in range(len(base)):
        label = int(input_labels[k])
        feats.append(base[k] + det_var[k])
        labels.append(label)
        bases.append(base[k])
        variances.append(det_var[k])
        aug_flags.append(False)
        if scheme.kind == "none":
            continue
        d = base.shape[1]
        if scheme.kind == "posterior":
            parts = det_var[k] + sigma[k] * rng.normal(size=(n_aug, d))
        elif scheme.kind == "prior":
            parts = rng.normal(size=(n_aug, d))
        elif scheme.kind == "covariance-transfer":
            parts = sample_perturbation(scheme.covariance, rng, n_aug)
        else:  # no-disentanglement: posterior draws of the plain VAE
            parts = sigma[k] * rng.normal(size=(n_aug, d))
        for j in range(n_aug):
            feats.append(base[k] + parts[j])
            labels.append(label)
            bases.append(base[k])
            variances.append(parts[j])
            aug_flags.append(True)
    return AugmentedSupport(
        features=np.asarray(feats),
        labels=np.asarray(labels, dtype=np.int64),
        base_parts=np.asarray(bases),
        variance_parts=np.asarray(variances),
        is_augmented=np.asarray(aug_flags, dtype=bool),
    )


def augment_support(
    model: FeatureDisentangler,
    episode: Episode,
    scheme: AugmentationScheme,
    rng: np.random.Generator,
) -> AugmentedSupport:
    """Augment an episode's support set (see augment_feature_set)."""
    return augment_feature_set(model, episode.support_x, episode.support_y, scheme, rng)


@dataclasses.dataclass
class ClassifierConfig:
    iterations: int = 100
    batch_size: int = 4
    learning_rate: float = 0.01
    k_neighbors: int = 1
    seed: int = 0


class _SgdLinearBase:
    """Shared SGD loop over (iterations x batch) minibatches from a seeded
    shuffled cycle; subclasses supply the per-batch gradient."""

    def __init__(self, n_classes: int, dim: int, config: ClassifierConfig):
        self.config = config
        self.weights = np.zeros((n_classes, dim))
        self.bias = np.zeros(n_classes)

    def _gradients(self, x, y):
        raise NotImplementedError

    def fit(self, features: np.ndarray, labels: np.ndarray):
        cfg = self.config
        rng = np.random.default_rng(cfg.seed)
        n = len(labels)
        order = rng.permutation(n)
        cursor = 0
        for _ in range(cfg.iterations):
            take = min(cfg.batch_size, n)
            if cursor + take > n:
                order = rng.permutation(n)
                cursor = 0
            idx = order[cursor : cursor + take]
            cursor += take
            grad_w, grad_b = self._gradients(features[idx], labels[idx])
            self.weights -= cfg.learning_rate * grad_w
            self.bias -= cfg.learning_rate * grad_b
        return self

    def scores(self, features: np.ndarray) -> np.ndarray:
        return features @ self.weights.T + self.bias

    def predict(self, features: np.ndarray) -> np.ndarray:
        return np.argmax(self.scores(features), axis=1)


class LinearSoftmaxClassifier(_SgdLinearBase):
    def _gradients(self, x, y):
        logits = x @ self.weights.T + self.bias
        logits -= logits.max(axis=1, keepdims=True)
        probs = np.exp(logits)
        probs /= probs.sum(axis=1, keepdims=True)
        probs[np.arange(len(y)), y] -= 1.0
        return probs.T @ x / len(y), probs.mean(axis=0)


class LogisticOvRClassifier(_SgdLinearBase):
    def _gradients(self, x, y):
        scores = x @ self.weights.T + self.bias
        probs = 1.0 / (1.0 + np.exp(-scores))
        targets = np.zeros_like(probs)
        targets[np.arange(len(y)), y] = 1.0
        err = probs - targets
        return err.T @ x / len(y), err.mean(axis=0)


class LinearSvmClassifier(_SgdLinearBase):
    """One-vs-rest hinge loss, plain subgradient descent."""

    def _gradients(self, x, y):
        scores = x @ self.weights.T + self.bias
        signs = -np.ones_like(scores)
        signs[np.arange(len(y)), y] = 1.0
        active = (signs * scores < 1.0).astype(float)
        coeff = -signs * active
        return coeff.T @ x / len(y), coeff.mean(axis=0)


class KnnClassifier:
    def __init__(self, k: int = 1):
        self.k = k
        self.features = None
        self.labels = None

    def fit(self, features: np.ndarray, labels: np.ndarray):
        self.features = np.asarray(features, dtype=np.float64)
        self.labels = np.asarray(labels, dtype=np.int64)
        return self

    def predict(self, features: np.ndarray) -> np.ndarray:
        out = np.zeros(len(features), dtype=np.int64)
        for i, q in enumerate(np.asarray(features, dtype=np.float64)):
            d2 = ((self.features - q) ** 2).sum(axis=1)
            # stable sort keeps the lowest index first among distance ties
            nearest = np.argsort(d2, kind="stable")[: self.k]
            votes = np.bincount(self.labels[nearest])
            out[i] = int(np.argmax(votes))  # vote ties -> lowest label
        return out


CLASSIFIER_KINDS = ("linear", "logistic", "knn", "linear-svm")


def fit_classifier(
    features: np.ndarray,
    labels: np.ndarray,
    kind: str = "linear",
    config: ClassifierConfig | None = None,
    n_classes: int | None = None,
):
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    config = config or ClassifierConfig()
    if n_classes is None:
        n_classes = int(labels.max()) + 1 if len(labels) else 0
    counts = np.bincount(labels, minlength=n_classes)
    if n_classes == 0 or counts.min() == 0:
        raise DataError(f"every class needs >= 1 sample, counts {counts.tolist()}")
    if kind == "knn":
        return KnnClassifier(k=config.k_neighbors).fit(features, labels)
    if kind == "linear":
        cls = LinearSoftmaxClassifier
    elif kind == "logistic":
        cls = LogisticOvRClassifier
    elif kind == "linear-svm":
        cls = LinearSvmClassifier
    else:
        raise ConfigError(f"unknown classifier kind {kind!r}")
    return cls(n_classes, features.shape[1], config).fit(features, labels)


def evaluate(classifier, query_features: np.ndarray, query_labels: np.ndarray) -> float:
    """Percentage of correctly labeled query items."""
    predictions = classifier.predict(np.asarray(query_features, dtype=np.float64))
    return float((predictions == np.asarray(query_labels)).mean() * 100.0)


def run_benchmark(
    model: FeatureDisentangler,
    novel_dataset: LabeledDataset,
    scheme: AugmentationScheme,
    classifier_kind: str = "linear",
    n_episodes: int = 600,
    way: int = 5,
    shot: int = 1,
    n_query: int = 16,
    master_seed: int = 0,
    classifier_config: ClassifierConfig | None = None,
    workers: int = 1,
) -> BenchmarkReport:
    """Episodic benchmark; episode i draws from rng streams derived from
    (master_seed, i), so the report is reproducible and order-independent."""
    if n_episodes < 1:
        raise ConfigError("n_episodes must be >= 1")
    scheme.validate()
    base_clf_config = classifier_config or ClassifierConfig()

    def run_one(i: int) -> float:
        ep_rng = np.random.default_rng(np.random.SeedSequence([master_seed, i, 0]))
        aug_rng = np.random.default_rng(np.random.SeedSequence([master_seed, i, 1]))
        clf_seed = int(np.random.SeedSequence([master_seed, i, 2]).generate_state(1)[0])
        episode = sample_episode(novel_dataset, way, shot, n_query, ep_rng)
        augmented = augment_support(model, episode, scheme, aug_rng)
        clf = fit_classifier(
            augmented.features,
            augmented.labels,
            classifier_kind,
            dataclasses.replace(base_clf_config, seed=clf_seed),
            n_classes=way,
        )
        query_emb = embed_features(model, episode.query_x, scheme)
        return evaluate(clf, query_emb, episode.query_y)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            accuracies = list(pool.map(run_one, range(n_episodes)))
    else:
        accuracies = [run_one(i) for i in range(n_episodes)]

    accs = np.asarray(accuracies)
    std = accs.std(ddof=1) if n_episodes > 1 else 0.0
    return BenchmarkReport(
        mean_accuracy=float(accs.mean()),
        ci95=float(1.96 * std / np.sqrt(n_episodes)),
        n_episodes=n_episodes,
        per_episode=[float(a) for a in accs],
        scheme=scheme.kind,
        n_aug=scheme.n_aug,
        classifier=classifier_kind,
        way=way,
        shot=shot,
        n_query=n_query,
        master_seed=master_seed,
        pooling=model.config.pooling,
    )
