"""Shared parallel attention layers: a low-rank attention branch per encoder
layer, shared across all tasks.

Each layer is down_proj (d x h) -> multi-head attention in the h-dim space
(q, k, v, o all h x h) -> up_proj (h x d), no biases anywhere, so the
trainable cost per layer is exactly 4h^2 + 2hd.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Param, Tensor
from .backbone import Backbone, BackboneConfig, multi_head_attention
from .errors import ConfigError, ShapeError


@dataclass(frozen=True)
class SpalConfig:
    hidden_size: int
    num_heads: int

    def validate(self) -> None:
        if self.hidden_size <= 0 or self.num_heads <= 0:
            raise ConfigError("SpalConfig dims must be positive")
        if self.hidden_size % self.num_heads != 0:
            raise ConfigError(
                f"hidden_size {self.hidden_size} not divisible by "
                f"num_heads {self.num_heads}")


class SpalStack:
    """One SPAL per backbone layer; exactly one stack per model."""

    def __init__(self, config: SpalConfig, num_layers: int, model_dim: int,
                 params: dict[str, Param]):
        self.config = config
        self.num_layers = num_layers
        self.model_dim = model_dim
        self.params = params

    def param_count(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def forward(self, layer: int, x: Tensor, mask: np.ndarray) -> Tensor:
        p = self.params
        pre = f"spal.layer{layer}"
        if x.data.shape[-1] != self.model_dim:
            raise ShapeError(
                f"spal input dim {x.data.shape[-1]} != model dim {self.model_dim}")
        down = ad.matmul(x, p[f"{pre}.down"])
        attn = multi_head_attention(
            down, mask, self.config.num_heads,
            p[f"{pre}.q"], None, p[f"{pre}.k"], None,
            p[f"{pre}.v"], None, p[f"{pre}.o"], None)
        return ad.matmul(attn, p[f"{pre}.up"])

    def set_trainable(self, trainable: bool) -> None:
        for p in self.params.values():
            p.trainable = trainable


def attach_spals(backbone: Backbone, config: SpalConfig, seed: int) -> SpalStack:
    """Build one SPAL per backbone layer, all trainable.

    up_proj starts at zero so a fresh stack is an exact additive identity on
    the frozen encoder; the remaining projections use scaled-normal init.
    """
    config.validate()
    if config.num_heads != backbone.config.num_heads:
        raise ConfigError(
            f"spal num_heads {config.num_heads} != backbone heads "
            f"{backbone.config.num_heads}")
    rng = np.random.default_rng(seed)
    d = backbone.config.model_dim
    h = config.hidden_size
    std = 0.02
    params: dict[str, Param] = {}
    for i in range(backbone.config.num_layers):
        pre = f"spal.layer{i}"
        params[f"{pre}.down"] = Param(rng.normal(0.0, std, (d, h)), name=f"{pre}.down")
        for proj in ("q", "k", "v", "o"):
            params[f"{pre}.{proj}"] = Param(
                rng.normal(0.0, std, (h, h)), name=f"{pre}.{proj}")
        params[f"{pre}.up"] = Param(np.zeros((h, d)), name=f"{pre}.up")
    return SpalStack(config, backbone.config.num_layers, d, params)


def count_spal_params(config: SpalConfig, backbone: BackboneConfig) -> int:
    """L * (4h^2 + 2hd): four h x h attention projections plus down/up."""
    config.validate()
    backbone.validate()
    h, d = config.hidden_size, backbone.model_dim
    return backbone.num_layers * (4 * h * h + 2 * h * d)


def capacity_fraction(config: SpalConfig, backbone: BackboneConfig | Backbone) -> float:
    """Trainable SPAL parameters as a fraction of total backbone parameters."""
    if isinstance(backbone, Backbone):
        return count_spal_params(config, backbone.config) / backbone.param_count()
    from .backbone import backbone_param_count
    return count_spal_params(config, backbone) / backbone_param_count(backbone)
