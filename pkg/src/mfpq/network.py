"""A stack of binary-weight MFP layers sharing one neuron configuration."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from .neurons import ForwardResult, MFPLayer, NeuronConfig, TemporalMixMatrix, network_forward
from .numeric import LowerTriangular
from .quantization import binarize


@dataclass
class MFPNetwork:
    sizes: List[int]
    t_steps: int
    cfg: NeuronConfig
    layers: List[MFPLayer]
    seed: int = 0

    @classmethod
    def init(cls, sizes: Sequence[int], t_steps: int, cfg: NeuronConfig | None = None, seed: int = 0,
             dtype=np.float32, tau0: float = 0.5) -> "MFPNetwork":
        """Latent weights uniform in ±1/sqrt(fan_in); mixing matrices LIF-like."""
        sizes = [int(n) for n in sizes]
        if len(sizes) < 2:
            raise ValueError("need at least an input and an output size")
        cfg = cfg or NeuronConfig()
        rng = np.random.default_rng(seed)
        layers = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            latent = rng.uniform(-bound, bound, size=(fan_out, fan_in)).astype(dtype)
            mix = TemporalMixMatrix.lif_like(t_steps, tau0, dtype=dtype)
            layers.append(MFPLayer(binarize(latent), mix))
        return cls(sizes=sizes, t_steps=t_steps, cfg=cfg, layers=layers, seed=seed)

    @property
    def arch(self) -> list:
        return [(a, b) for a, b in zip(self.sizes[:-1], self.sizes[1:])]

    @property
    def dtype(self):
        return self.layers[0].weight.dtype

    @property
    def n_classes(self) -> int:
        return self.sizes[-1]

    def forward(self, spikes, mode: str = "parallel") -> ForwardResult:
        return network_forward(self.layers, spikes, self.cfg, mode)

    def parameters(self) -> dict:
        """Trainable arrays by name; mixing matrices as packed lower triangles."""
        params = {}
        for i, layer in enumerate(self.layers):
            params[f"layers.{i}.latent"] = layer.weight.latent
            params[f"layers.{i}.mix"] = layer.mix.tri.entries
        return params

    def refresh(self):
        """Re-derive signs and scales from the (possibly updated) latent weights."""
        for layer in self.layers:
            layer.weight = binarize(layer.weight.latent)

    def copy(self) -> "MFPNetwork":
        layers = [
            MFPLayer(binarize(l.weight.latent.copy()), TemporalMixMatrix(l.mix.tri.copy()))
            for l in self.layers
        ]
        return MFPNetwork(list(self.sizes), self.t_steps, self.cfg, layers, self.seed)

    @classmethod
    def from_arrays(cls, sizes, t_steps, cfg, latents, mixes, seed=0) -> "MFPNetwork":
        layers = [
            MFPLayer(binarize(np.asarray(w)), TemporalMixMatrix(LowerTriangular(t_steps, m)))
            for w, m in zip(latents, mixes)
        ]
        return cls(list(sizes), t_steps, cfg, layers, seed)
