"""The full multi-task model: backbone + optional SPAL stack + per-task
heads + optional contribution-probing weights."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Param, Tensor
from .backbone import Backbone, BackboneConfig, Encoding, encode, init_backbone
from .errors import ConfigError
from .spal import SpalConfig, SpalStack, attach_spals
from .tasks import Head, TaskSpec


class ProbeWeights:
    """Per-layer scalar pair (a, b); the blend weight is softmax(a, b)[0],
    computed as sigmoid(a - b). Both start at 0, i.e. w = 0.5."""

    def __init__(self, num_layers: int):
        self.num_layers = num_layers
        self.params: dict[str, Param] = {}
        for i in range(num_layers):
            for nm in ("a", "b"):
                name = f"probe.layer{i}.{nm}"
                self.params[name] = Param(np.zeros(()), name=name)

    def weight(self, layer: int) -> Tensor:
        a = self.params[f"probe.layer{layer}.a"]
        b = self.params[f"probe.layer{layer}.b"]
        return ad.sigmoid(ad.sub(a, b))

    def values(self) -> list[float]:
        return [float(self.weight(i).data) for i in range(self.num_layers)]


class MtlModel:
    def __init__(self, backbone: Backbone, spals: SpalStack | None = None,
                 heads: dict[str, Head] | None = None,
                 probe: ProbeWeights | None = None):
        if probe is not None and spals is None:
            raise ConfigError("contribution probing requires SPALs")
        self.backbone = backbone
        self.spals = spals
        self.heads = heads or {}
        self.probe = probe

    # -- construction -------------------------------------------------------

    @classmethod
    def build(cls, backbone_config: BackboneConfig, task_specs: list[TaskSpec],
              spal_hidden: int | None, seed: int, freeze_backbone: bool = True,
              probe: bool = False) -> "MtlModel":
        backbone = init_backbone(backbone_config, seed)
        spals = None
        if spal_hidden is not None:
            spals = attach_spals(
                backbone, SpalConfig(spal_hidden, backbone_config.num_heads),
                seed + 1)
        heads = {
            spec.id: Head(spec, backbone_config.model_dim, seed + 2 + i)
            for i, spec in enumerate(task_specs)
        }
        probe_w = ProbeWeights(backbone_config.num_layers) if probe else None
        backbone.set_trainable(not freeze_backbone)
        return cls(backbone, spals, heads, probe_w)

    # -- forward ------------------------------------------------------------

    def encode(self, token_ids, mask=None,
               force_probe_w: float | None = None) -> Encoding:
        return encode(token_ids, mask, self.backbone, spals=self.spals,
                      probe=self.probe, force_probe_w=force_probe_w)

    # -- parameter views ----------------------------------------------------

    def trunk_params(self) -> dict[str, Param]:
        out = dict(self.backbone.params)
        if self.spals is not None:
            out.update(self.spals.params)
        if self.probe is not None:
            out.update(self.probe.params)
        return out

    def all_params(self) -> dict[str, Param]:
        out = self.trunk_params()
        for head in self.heads.values():
            out.update(head.params)
        return out

    def shared_trainable_params(self) -> list[Param]:
        """Trainable trunk params in canonical (name-sorted) order."""
        trunk = self.trunk_params()
        return [trunk[k] for k in sorted(trunk) if trunk[k].trainable]

    def shared_trainable_size(self) -> int:
        return sum(p.data.size for p in self.shared_trainable_params())

    def zero_grads(self) -> None:
        for p in self.all_params().values():
            p.zero_grad()

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.all_params().items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        params = self.all_params()
        for k, arr in snap.items():
            params[k].data = arr.copy()
