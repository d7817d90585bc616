"""Feature extractors: a 4-block conv net for raw images and an identity
backbone for precomputed flat features, plus the spatial pooling that turns
feature maps into class-specific vectors."""

from __future__ import annotations

import torch
from torch import nn

from .errors import ConfigError, ShapeError

# Running statistics are blended as 0.9 * running + 0.1 * batch; torch's
# `momentum` argument is the weight of the new batch.
RUNNING_STAT_MOMENTUM = 0.9
_TORCH_BN_MOMENTUM = 1.0 - RUNNING_STAT_MOMENTUM


class Conv4Backbone(nn.Module):
    """Four blocks of 3x3 conv (same padding, 32 filters), batch norm, ReLU,
    and 2x2 max-pooling. Spatial dims floor-halve per block: 84 -> 5."""

    def __init__(self, in_channels: int = 3, n_filters: int = 32):
        super().__init__()
        self.in_channels = in_channels
        self.n_filters = n_filters
        blocks = []
        c = in_channels
        for _ in range(4):
            blocks.append(
                nn.Sequential(
                    nn.Conv2d(c, n_filters, kernel_size=3, padding=1),
                    nn.BatchNorm2d(n_filters, momentum=_TORCH_BN_MOMENTUM),
                    nn.ReLU(),
                    nn.MaxPool2d(2),
                )
            )
            c = n_filters
        self.blocks = nn.ModuleList(blocks)

    def extract(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or x.shape[1] != self.in_channels:
            raise ShapeError(
                f"expected (batch, {self.in_channels}, h, w) input, got {tuple(x.shape)}"
            )
        if x.shape[2] < 16 or x.shape[3] < 16:
            raise ShapeError("input spatial dims too small for four 2x2 poolings")
        for block in self.blocks:
            x = block(x)
        return x

    forward = extract

    def output_shape(self, input_shape) -> tuple:
        _, h, w = input_shape
        for _ in range(4):
            h, w = h // 2, w // 2
        return (self.n_filters, h, w)


class IdentityBackbone(nn.Module):
    """Pass-through for precomputed features: reshapes a flat length-d vector
    to a (d, 1, 1) map. No parameters, no normalization."""

    def __init__(self, feature_dim: int):
        super().__init__()
        self.feature_dim = feature_dim

    def extract(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() == 2:
            x = x.reshape(x.shape[0], -1, 1, 1)
        if x.dim() != 4 or x.shape[1] * x.shape[2] * x.shape[3] != self.feature_dim:
            raise ShapeError(
                f"expected flat features of length {self.feature_dim}, got {tuple(x.shape)}"
            )
        return x.reshape(x.shape[0], self.feature_dim, 1, 1)

    forward = extract

    def output_shape(self, input_shape=None) -> tuple:
        return (self.feature_dim, 1, 1)


def make_backbone(kind: str, **kwargs):
    if kind == "conv4":
        return Conv4Backbone(**kwargs)
    if kind == "identity":
        return IdentityBackbone(**kwargs)
    raise ConfigError(f"unknown backbone kind {kind!r}")


def pool_class_feature(x: torch.Tensor, mode: str = "average") -> torch.Tensor:
    """Reduce a (batch, c, h, w) feature map to (batch, c) class vectors."""
    if x.dim() != 4 or x.shape[0] == 0:
        raise ShapeError(f"expected non-empty (batch, c, h, w) map, got {tuple(x.shape)}")
    if mode == "average":
        return x.mean(dim=(2, 3))
    if mode == "max":
        return x.amax(dim=(2, 3))
    raise ConfigError(f"unknown pooling mode {mode!r}")
