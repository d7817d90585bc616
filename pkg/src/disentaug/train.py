"""Base-class training loop, learning-rate schedule, and checkpointing."""

from __future__ import annotations

import dataclasses
import warnings

import numpy as np
import torch

from .errors import CheckpointError, ConfigError, DataError, NonFiniteLossError, ShapeError
from .model import (
    FeatureDisentangler,
    LossBreakdown,
    ModelConfig,
    PlainVae,
    gaussian_prior_kl,
    kl_decomposed,
    loss_cls,
    loss_recon,
    reparameterize,
)
from .synth import LabeledDataset

CHECKPOINT_VERSION = 1


@dataclasses.dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 16
    learning_rate: float = 0.001
    decay_epochs: tuple = (40, 80)
    decay_factor: float = 0.1
    alpha: float = 4.0
    beta: float = 1.0
    seed: int = 0
    weight_decay: float = 0.0
    grad_clip: float | None = None
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8

    def validate(self) -> None:
        if self.epochs <= 0 or self.batch_size <= 0:
            raise ConfigError("epochs and batch_size must be positive")
        if self.learning_rate <= 0 or self.decay_factor <= 0:
            raise ConfigError("rates must be positive")
        decays = list(self.decay_epochs)
        if any(b <= a for a, b in zip(decays, decays[1:])):
            raise ConfigError("decay_epochs must be strictly increasing")
        if any(e >= self.epochs or e < 0 for e in decays):
            raise ConfigError("decay_epochs must lie inside [0, epochs)")


def schedule_lr(config: TrainConfig, epoch: int) -> float:
    """Closed-form learning rate: base * decay_factor^(passed decay epochs)."""
    passed = sum(1 for e in config.decay_epochs if epoch >= e)
    return config.learning_rate * config.decay_factor**passed


def init_model(model_config: ModelConfig, seed: int) -> FeatureDisentangler:
    """Build a model with seeded parameter initialization."""
    torch.manual_seed(seed)
    return FeatureDisentangler(model_config)


def _dataset_tensors(dataset: LabeledDataset, dtype=torch.float32):
    x = torch.as_tensor(np.ascontiguousarray(dataset.features), dtype=dtype)
    y = torch.as_tensor(np.ascontiguousarray(dataset.labels), dtype=torch.long)
    return x, y


def _check_finite(value: torch.Tensor, name: str, epoch: int, step: int):
    if not torch.isfinite(value).all():
        raise NonFiniteLossError(
            f"{name} became non-finite at epoch {epoch} step {step} "
            f"(value {value.detach().reshape(-1)[:4].tolist()})"
        )


def train_step(model, x, y, dataset_size, alpha, beta, eps_main, eps_aug):
    """One forward pass and loss assembly; noise tensors are injected so the
    step is a pure function of (params, batch, eps)."""
    x_map = model.extract(x)
    z_i = model.pool(x_map)
    stats = model.encode(x_map)
    z_v = reparameterize(stats, eps_main)
    z = z_i + z_v
    x_hat = model.decode(z)

    l_cls = loss_cls(model.classify(z_i), y)
    recon = loss_recon(x_map, x_hat)
    kl_mi, kl_tc, kl_dim = kl_decomposed(stats, z_v, dataset_size)
    z_v_aug = reparameterize(stats, eps_aug)
    l_aug = loss_cls(model.classify(z_i + z_v_aug), y)

    l_intra = recon + kl_mi + alpha * kl_tc + kl_dim
    total = l_cls + l_intra + beta * l_aug
    parts = {
        "l_cls": l_cls,
        "recon": recon,
        "kl_mi": kl_mi,
        "kl_tc": kl_tc,
        "kl_dim": kl_dim,
        "l_aug": l_aug,
        "total": total,
    }
    return total, parts


def train(
    dataset: LabeledDataset,
    model: FeatureDisentangler,
    config: TrainConfig,
    start_epoch: int = 0,
    optimizer_state=None,
    rng_state=None,
):
    """Train on the base split; returns (model, history, final_state).

    Per step: extract, pool z_i, encode, reparameterize, decode, classify;
    assemble the classification, reconstruction, decomposed-KL, and
    augmented-sample terms; one Adam step. The learning rate follows
    schedule_lr at epoch boundaries. History holds one record per epoch with
    the epoch-mean loss breakdown (composite fields recomputed from the
    averaged parts, so the loss identities stay exact in the log).
    """
    config.validate()
    if len(dataset) == 0:
        raise DataError("training dataset is empty")
    n_base = model.config.n_base_classes
    if dataset.labels.min() < 0 or dataset.labels.max() >= n_base:
        raise DataError(
            f"labels outside base range [0, {n_base}): "
            f"found {int(dataset.labels.min())}..{int(dataset.labels.max())}"
        )
    x_all, y_all = _dataset_tensors(dataset)
    if tuple(x_all.shape[1:]) != model.config.feature_shape and model.config.backbone == "identity":
        x_all = x_all.reshape(len(dataset), -1)
        if x_all.shape[1] != model.config.latent_dim:
            raise ShapeError(
                f"dataset features of dim {x_all.shape[1]} do not match model dim "
                f"{model.config.latent_dim}"
            )
    n = len(dataset)

    optimizer = torch.optim.Adam(
        model.parameters(),
        lr=config.learning_rate,
        betas=config.adam_betas,
        eps=config.adam_eps,
        weight_decay=config.weight_decay,
    )
    if optimizer_state is not None:
        optimizer.load_state_dict(optimizer_state)

    shuffle_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0xD5]))
    noise_gen = torch.Generator().manual_seed(config.seed)
    if rng_state is not None:
        shuffle_rng.bit_generator.state = rng_state["numpy"]
        noise_gen.set_state(rng_state["torch"])

    history = []
    model.train()
    for epoch in range(start_epoch, config.epochs):
        lr = schedule_lr(config, epoch)
        for group in optimizer.param_groups:
            group["lr"] = lr
        order = shuffle_rng.permutation(n)
        sums = {k: 0.0 for k in ("l_cls", "recon", "kl_mi", "kl_tc", "kl_dim", "l_aug")}
        count = 0
        for step, lo in enumerate(range(0, n, config.batch_size)):
            idx = order[lo : lo + config.batch_size]
            if len(idx) < 2:
                continue  # batch-norm needs >= 2 samples in training mode
            x = x_all[idx]
            y = y_all[idx]
            d = model.config.latent_dim
            eps_main = torch.randn(len(idx), d, generator=noise_gen)
            eps_aug = torch.randn(len(idx), d, generator=noise_gen)
            total, parts = train_step(
                model, x, y, n, config.alpha, config.beta, eps_main, eps_aug
            )
            for name, value in parts.items():
                _check_finite(value, name, epoch, step)
            optimizer.zero_grad()
            total.backward()
            if config.grad_clip is not None:
                torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
            optimizer.step()
            for key in sums:
                sums[key] += float(parts[key].detach()) * len(idx)
            count += len(idx)
        if count == 0:
            raise DataError("no trainable batches (need >= 2 samples)")
        breakdown = LossBreakdown.from_components(
            l_cls=sums["l_cls"] / count,
            recon=sums["recon"] / count,
            kl_mi=sums["kl_mi"] / count,
            kl_tc=sums["kl_tc"] / count,
            kl_dim=sums["kl_dim"] / count,
            l_aug=sums["l_aug"] / count,
            alpha=config.alpha,
            beta=config.beta,
        )
        history.append({"epoch": epoch, "lr": lr, **breakdown.to_dict()})
    model.eval()
    state = {
        "epoch": config.epochs,
        "optimizer_state": optimizer.state_dict(),
        "rng_state": {
            "numpy": shuffle_rng.bit_generator.state,
            "torch": noise_gen.get_state(),
        },
    }
    return model, history, state


def train_plain_vae(dataset: LabeledDataset, vae: PlainVae, config: TrainConfig):
    """Train the undisentangled baseline with reconstruction + closed-form KL."""
    config.validate()
    x_all, _ = _dataset_tensors(dataset)
    n = len(dataset)
    optimizer = torch.optim.Adam(vae.parameters(), lr=config.learning_rate)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0xAE]))
    noise_gen = torch.Generator().manual_seed(config.seed + 1)
    d = vae.encoder.head_mu.out_features
    vae.train()
    for epoch in range(config.epochs):
        lr = schedule_lr(config, epoch)
        for group in optimizer.param_groups:
            group["lr"] = lr
        order = shuffle_rng.permutation(n)
        for lo in range(0, n, config.batch_size):
            idx = order[lo : lo + config.batch_size]
            if len(idx) < 2:
                continue
            x = x_all[idx]
            eps = torch.randn(len(idx), d, generator=noise_gen)
            stats, _, x_hat = vae(x, eps)
            loss = loss_recon(x, x_hat) + gaussian_prior_kl(stats.mu, stats.log_var).mean()
            _check_finite(loss, "plain_vae_loss", epoch, lo)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
    vae.eval()
    return vae


def save_checkpoint(
    model: FeatureDisentangler,
    train_config: TrainConfig,
    state: dict,
    path,
    history=None,
    config_digest: str | None = None,
) -> None:
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "config_digest": config_digest,
        "model_config": dataclasses.asdict(model.config),
        "train_config": dataclasses.asdict(train_config),
        "state": state,
        "model_state": model.state_dict(),
        "history": history or [],
    }
    torch.save(payload, path)


def load_checkpoint(path, expected_digest: str | None = None):
    """Restore (model, train_config, state, payload) from a checkpoint.

    A version mismatch is fatal; a config-digest mismatch only warns. The
    restored model reproduces forward outputs bit-identically.
    """
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {path}")
    except Exception as exc:
        raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from exc
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint version {version} != supported {CHECKPOINT_VERSION}"
        )
    if expected_digest is not None and payload.get("config_digest") not in (
        None,
        expected_digest,
    ):
        warnings.warn(
            f"checkpoint config digest {payload['config_digest']} does not match "
            f"current config {expected_digest}",
            stacklevel=2,
        )
    raw = dict(payload["model_config"])
    raw["feature_shape"] = tuple(raw["feature_shape"])
    raw["encoder_channels"] = tuple(raw["encoder_channels"])
    model_config = ModelConfig(**raw)
    model = FeatureDisentangler(model_config)
    try:
        model.load_state_dict(payload["model_state"])
    except RuntimeError as exc:
        raise ShapeError(f"checkpoint parameters do not fit the model: {exc}") from exc
    model.eval()
    tc_raw = dict(payload["train_config"])
    tc_raw["decay_epochs"] = tuple(tc_raw["decay_epochs"])
    tc_raw["adam_betas"] = tuple(tc_raw["adam_betas"])
    train_config = TrainConfig(**tc_raw)
    return model, train_config, payload["state"], payload
