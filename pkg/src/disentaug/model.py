"""Feature-disentanglement model and its losses.

A pooled class-specific vector ``z_i`` is split off from a feature map; a
probabilistic encoder models the residual intra-class-variance code ``z_v``
as a diagonal Gaussian posterior. The combined ``z = z_i + z_v`` drives a
decoder that reconstructs the feature map, while a single linear classifier
supervises ``z_i`` and classifier-consistency of augmented ``z_i + z_v``
samples. The KL regularizer on the posterior is estimated in decomposed
form: index-code mutual information, total correlation (weighted by alpha),
and dimension-wise KL.
"""

from __future__ import annotations

import dataclasses
import math
from typing import NamedTuple

import torch
from torch import nn

from .backbone import make_backbone, pool_class_feature
from .errors import ConfigError, DataError, ShapeError

_LOG_2PI = math.log(2.0 * math.pi)


class LatentStats(NamedTuple):
    """Posterior parameters of the variance code: mean and log variance."""

    mu: torch.Tensor
    log_var: torch.Tensor


@dataclasses.dataclass(frozen=True)
class DisentangledFeature:
    """The (z_i, z_v, z) triple; z is always exactly z_i + z_v."""

    z_i: torch.Tensor
    z_v: torch.Tensor
    z: torch.Tensor

    @classmethod
    def combine(cls, z_i: torch.Tensor, z_v: torch.Tensor) -> "DisentangledFeature":
        if z_i.shape != z_v.shape:
            raise ShapeError(f"z_i {tuple(z_i.shape)} vs z_v {tuple(z_v.shape)}")
        return cls(z_i=z_i, z_v=z_v, z=z_i + z_v)


@dataclasses.dataclass(frozen=True)
class ModelConfig:
    """Architecture and loss bookkeeping choices, all recorded for audit.

    feature_shape is the backbone output (channels, height, width); the
    latent dimension of both z_i and z_v equals its channel count. The
    reconstruction term is a per-instance sum of squared errors over all map
    entries (recon_reduction="sum"), averaged over the batch. Batch-norm
    layers share one forward pass per batch, so augmented-sample logits see
    the same normalization statistics as the clean pass.
    """

    n_base_classes: int
    backbone: str = "identity"
    feature_shape: tuple = (32, 1, 1)
    in_channels: int = 3
    pooling: str = "average"
    encoder_channels: tuple = (32, 32, 32)
    log_var_clamp: float = 10.0
    recon_reduction: str = "sum"
    n_train_aug: int = 1

    @property
    def latent_dim(self) -> int:
        return self.feature_shape[0]

    def validate(self) -> None:
        if self.n_base_classes <= 0:
            raise ConfigError("n_base_classes must be positive")
        if self.pooling not in ("average", "max"):
            raise ConfigError(f"unknown pooling {self.pooling!r}")
        if self.recon_reduction != "sum":
            raise ConfigError("only recon_reduction='sum' is supported")
        if self.backbone not in ("identity", "conv4"):
            raise ConfigError(f"unknown backbone {self.backbone!r}")


class PosteriorEncoder(nn.Module):
    """Three conv blocks then two fully-connected heads for mu and log sigma^2."""

    def __init__(self, feature_shape, latent_dim, channels=(32, 32, 32), log_var_clamp=10.0):
        super().__init__()
        c, h, w = feature_shape
        self.feature_shape = tuple(feature_shape)
        self.log_var_clamp = log_var_clamp
        blocks = []
        prev = c
        for width in channels:
            blocks.append(
                nn.Sequential(
                    nn.Conv2d(prev, width, kernel_size=3, padding=1),
                    nn.BatchNorm2d(width, momentum=0.1),
                    nn.ReLU(),
                )
            )
            prev = width
        self.blocks = nn.ModuleList(blocks)
        flat = prev * h * w
        self.head_mu = nn.Linear(flat, latent_dim)
        self.head_log_var = nn.Linear(flat, latent_dim)

    def forward(self, x: torch.Tensor) -> LatentStats:
        if tuple(x.shape[1:]) != self.feature_shape:
            raise ShapeError(
                f"encoder expects {self.feature_shape}, got {tuple(x.shape[1:])}"
            )
        for block in self.blocks:
            x = block(x)
        flat = x.flatten(1)
        mu = self.head_mu(flat)
        log_var = self.head_log_var(flat).clamp(-self.log_var_clamp, self.log_var_clamp)
        return LatentStats(mu=mu, log_var=log_var)


class FeatureDecoder(nn.Module):
    """One fully-connected layer then three conv blocks back to the map shape.

    The final block is a bare convolution so reconstructions are unbounded.
    """

    def __init__(self, feature_shape, latent_dim, channels=(32, 32)):
        super().__init__()
        c, h, w = feature_shape
        self.feature_shape = tuple(feature_shape)
        self.fc = nn.Linear(latent_dim, c * h * w)
        mid1, mid2 = channels
        self.blocks = nn.Sequential(
            nn.Sequential(
                nn.Conv2d(c, mid1, kernel_size=3, padding=1),
                nn.BatchNorm2d(mid1, momentum=0.1),
                nn.ReLU(),
            ),
            nn.Sequential(
                nn.Conv2d(mid1, mid2, kernel_size=3, padding=1),
                nn.BatchNorm2d(mid2, momentum=0.1),
                nn.ReLU(),
            ),
            nn.Conv2d(mid2, c, kernel_size=3, padding=1),
        )

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        if z.dim() != 2 or z.shape[1] != self.fc.in_features:
            raise ShapeError(f"decoder expects (batch, {self.fc.in_features}) latents")
        c, h, w = self.feature_shape
        x = self.fc(z).reshape(z.shape[0], c, h, w)
        return self.blocks(x)


class FeatureDisentangler(nn.Module):
    """Backbone, posterior encoder, feature decoder, and base-class classifier."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        config.validate()
        self.config = config
        if config.backbone == "identity":
            self.backbone = make_backbone("identity", feature_dim=config.latent_dim)
        else:
            self.backbone = make_backbone("conv4", in_channels=config.in_channels)
        d = config.latent_dim
        self.encoder = PosteriorEncoder(
            config.feature_shape, d, config.encoder_channels, config.log_var_clamp
        )
        self.decoder = FeatureDecoder(config.feature_shape, d)
        self.classifier = nn.Linear(d, config.n_base_classes)

    def extract(self, x: torch.Tensor) -> torch.Tensor:
        return self.backbone.extract(x)

    def pool(self, x_map: torch.Tensor) -> torch.Tensor:
        return pool_class_feature(x_map, self.config.pooling)

    def encode(self, x_map: torch.Tensor) -> LatentStats:
        return self.encoder(x_map)

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        return self.decoder(z)

    def classify(self, z: torch.Tensor) -> torch.Tensor:
        if z.dim() != 2 or z.shape[1] != self.config.latent_dim:
            raise ShapeError(f"classifier expects (batch, {self.config.latent_dim})")
        return self.classifier(z)

    @torch.no_grad()
    def embed(self, x: torch.Tensor):
        """Deterministic inference pass: feature map, z_i, posterior stats,
        and the posterior-mean embedding z = z_i + mu. Call in eval mode."""
        x_map = self.extract(x)
        z_i = self.pool(x_map)
        stats = self.encode(x_map)
        return x_map, z_i, stats, z_i + stats.mu


class PlainVae(nn.Module):
    """Undisentangled baseline: the latent models the whole feature.

    Same encoder/decoder capacity as the main model; trained with
    reconstruction plus closed-form KL only.
    """

    def __init__(self, feature_shape, channels=(32, 32, 32), log_var_clamp=10.0):
        super().__init__()
        d = feature_shape[0]
        self.encoder = PosteriorEncoder(feature_shape, d, channels, log_var_clamp)
        self.decoder = FeatureDecoder(feature_shape, d)

    def forward(self, x_map: torch.Tensor, eps: torch.Tensor):
        stats = self.encoder(x_map)
        z = reparameterize(stats, eps)
        x_hat = self.decoder(z)
        return stats, z, x_hat


def reparameterize(stats: LatentStats, eps: torch.Tensor) -> torch.Tensor:
    """z_v = mu + sigma * eps with sigma = exp(log_var / 2)."""
    if eps.shape != stats.mu.shape:
        raise ShapeError(f"eps {tuple(eps.shape)} vs mu {tuple(stats.mu.shape)}")
    return stats.mu + torch.exp(0.5 * stats.log_var) * eps


def gaussian_prior_kl(mu: torch.Tensor, log_var: torch.Tensor) -> torch.Tensor:
    """Closed-form KL(N(mu, diag sigma^2) || N(0, I)) per instance.

    Equals 0.5 * sum_d (mu^2 + sigma^2 - 1 - log sigma^2); no sampling.
    """
    if mu.shape != log_var.shape:
        raise ShapeError("mu and log_var must have matching shapes")
    return 0.5 * (mu.pow(2) + log_var.exp() - 1.0 - log_var).sum(dim=-1)


def gaussian_log_density(z, mu, log_var):
    """Elementwise diagonal-Gaussian log density (no sum over dimensions)."""
    return -0.5 * (_LOG_2PI + log_var + (z - mu).pow(2) / log_var.exp())


def kl_decomposed(stats: LatentStats, z: torch.Tensor, dataset_size: int):
    """Decompose KL(q(z_v|X) || p(z_v)) into three batch estimates.

    Returns (kl_mi, kl_tc, kl_dim): index-code mutual information, total
    correlation, and dimension-wise KL. The aggregate-posterior densities
    q(z_v) and q(z_v_j) are estimated from the minibatch with stratified
    weights (the sample's own posterior weighs 1/N, every other batch
    posterior (N-1)/(N*(M-1)) for dataset size N and batch size M), which
    keeps all three terms near zero when every posterior matches the prior.
    The three terms telescope: their sum equals the single-sample estimate
    of the undecomposed KL exactly.
    """
    mu, log_var = stats
    if mu.dim() != 2 or mu.shape[0] == 0:
        raise DataError("kl_decomposed needs a non-empty (batch, d) posterior batch")
    if z.shape != mu.shape:
        raise ShapeError(f"samples {tuple(z.shape)} vs posteriors {tuple(mu.shape)}")
    batch = mu.shape[0]
    if dataset_size < batch:
        raise DataError(f"dataset_size {dataset_size} < batch size {batch}")

    # (i, j, d): log density of sample i under posterior j, per dimension
    log_q_all = gaussian_log_density(
        z.unsqueeze(1), mu.unsqueeze(0), log_var.unsqueeze(0)
    )
    log_q_joint = log_q_all.sum(-1)  # (i, j)
    log_q_zx = log_q_joint.diagonal()  # (i,)
    log_pz = gaussian_log_density(z, torch.zeros_like(z), torch.zeros_like(z)).sum(-1)

    if batch == 1:
        # No other posteriors to estimate the aggregate from; fall back to
        # the sample's own posterior (MI and TC vanish).
        log_qz = log_q_zx
        log_qz_prod = log_q_all[:, 0, :].sum(-1)
    else:
        n = float(dataset_size)
        log_w = torch.full(
            (batch, batch),
            math.log((n - 1.0) / (n * (batch - 1.0))),
            dtype=mu.dtype,
            device=mu.device,
        )
        log_w.fill_diagonal_(-math.log(n))
        log_qz = torch.logsumexp(log_q_joint + log_w, dim=1)
        log_qz_prod = torch.logsumexp(log_q_all + log_w.unsqueeze(-1), dim=1).sum(-1)

    kl_mi = (log_q_zx - log_qz).mean()
    kl_tc = (log_qz - log_qz_prod).mean()
    kl_dim = (log_qz_prod - log_pz).mean()
    return kl_mi, kl_tc, kl_dim


def loss_cls(logits: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Softmax cross-entropy against integer labels, averaged over the batch."""
    if y.min().item() < 0 or y.max().item() >= logits.shape[1]:
        raise DataError(
            f"label out of range [0, {logits.shape[1]}) in {y.tolist()[:8]}..."
        )
    return nn.functional.cross_entropy(logits, y)


def loss_recon(x: torch.Tensor, x_hat: torch.Tensor) -> torch.Tensor:
    """Squared error summed over all map entries, averaged over the batch."""
    if x.shape != x_hat.shape:
        raise ShapeError(f"recon shapes {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    return (x - x_hat).pow(2).flatten(1).sum(-1).mean()


def loss_intra(recon, kl_mi, kl_tc, kl_dim, alpha: float):
    """Reconstruction plus decomposed KL with the total correlation weighted."""
    return recon + kl_mi + alpha * kl_tc + kl_dim


def loss_aug(model: FeatureDisentangler, z_tilde: torch.Tensor, y: torch.Tensor):
    """Cross-entropy of the classifier on augmented features; the same loss
    as loss_cls, applied to z_i + sampled z_v instead of z_i."""
    return loss_cls(model.classify(z_tilde), y)


def total_loss(l_cls, l_intra, l_aug, beta: float):
    return l_cls + l_intra + beta * l_aug


@dataclasses.dataclass
class LossBreakdown:
    """All loss terms of one step or epoch; the composite fields are always
    recomputed from the parts so the arithmetic identities hold exactly."""

    l_cls: float
    recon: float
    kl_mi: float
    kl_tc: float
    kl_dim: float
    l_intra: float
    l_aug: float
    total: float
    alpha: float
    beta: float

    @classmethod
    def from_components(cls, l_cls, recon, kl_mi, kl_tc, kl_dim, l_aug, alpha, beta):
        l_intra = recon + kl_mi + alpha * kl_tc + kl_dim
        total = l_cls + l_intra + beta * l_aug
        return cls(
            l_cls=l_cls,
            recon=recon,
            kl_mi=kl_mi,
            kl_tc=kl_tc,
            kl_dim=kl_dim,
            l_intra=l_intra,
            l_aug=l_aug,
            total=total,
            alpha=alpha,
            beta=beta,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)
