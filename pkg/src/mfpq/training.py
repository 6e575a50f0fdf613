"""Surrogate-gradient training of MFP networks through the parallel forward."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .network import MFPNetwork
from .neurons import NeuronConfig, mfp_parallel_forward
from .numeric import ShapeError, packed_index
from .quantization import DenseLinear, ste_grad

DIAG_FLOOR = 1e-3


@dataclass(frozen=True)
class SurrogateSpec:
    """Unit-height rectangular window of half-width ``width`` around v_th."""

    width: float = 1.0

    def __post_init__(self):
        if not self.width > 0:
            raise ValueError(f"surrogate width must be positive, got {self.width}")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.1
    momentum: float = 0.9
    epochs: int = 30
    batch: int = 32
    seed: int = 0
    loss: str = "rate-cross-entropy"
    surrogate_width: float = 1.0
    ste_clip: float = 1.0

    def __post_init__(self):
        if not self.lr >= 0:
            raise ValueError("lr must be non-negative")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.epochs < 0 or self.batch < 1:
            raise ValueError("epochs must be >= 0 and batch >= 1")
        if self.loss != "rate-cross-entropy":
            raise ValueError(f"unsupported loss {self.loss!r}")


@dataclass
class Dataset:
    """Rate-coded samples: spikes (T, count, N) uint8 and integer labels."""

    spikes: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.spikes = np.asarray(self.spikes, dtype=np.uint8)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.spikes.ndim != 3 or self.spikes.shape[1] != len(self.labels):
            raise ShapeError(f"spikes {self.spikes.shape} do not match {len(self.labels)} labels")

    def __len__(self):
        return len(self.labels)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.spikes[:, idx], self.labels[idx])


def surrogate_grad(pre_activation, cfg: NeuronConfig, spec: SurrogateSpec = SurrogateSpec()) -> np.ndarray:
    """1 where |H - v_th| < width, else 0."""
    h = np.asarray(pre_activation)
    return (np.abs(h - cfg.v_th) < spec.width).astype(h.dtype if h.dtype.kind == "f" else np.float64)


def smooth_spike(pre_activation, cfg: NeuronConfig, spec: SurrogateSpec = SurrogateSpec()) -> np.ndarray:
    """Antiderivative of the surrogate window: clamp(H - v_th + a, 0, 2a)."""
    a = spec.width
    return np.clip(np.asarray(pre_activation) - cfg.v_th + a, 0.0, 2.0 * a)


@dataclass
class LayerCache:
    spikes_in: np.ndarray
    pre_activation: np.ndarray
    weight: np.ndarray          # effective weight W with H = M (S W^T)
    latent: np.ndarray
    mix: np.ndarray             # dense M
    through_spike: bool = True


@dataclass
class ForwardCache:
    layers: List[LayerCache]
    logits: np.ndarray
    outputs: List[np.ndarray] = field(default_factory=list)


def forward_train(net: MFPNetwork, spikes, smooth: bool = False,
                  spec: SurrogateSpec = SurrogateSpec(), clip: float = 1.0) -> ForwardCache:
    """Parallel forward keeping what the backward pass needs.

    With ``smooth=True`` the spike function is replaced by the surrogate's
    antiderivative and the binarizer by hard-tanh, whose derivatives are
    exactly the surrogate window and the STE mask. That model is what
    finite differences can check.
    """
    x = np.asarray(spikes)
    if x.dtype == np.uint8:
        x = x.astype(net.dtype)
    caches = []
    outputs = []
    n = len(net.layers)
    for k, layer in enumerate(net.layers):
        latent = layer.weight.latent
        if smooth:
            w_eff = np.clip(latent, -clip, clip)
            _, h = mfp_parallel_forward(DenseLinear(w_eff), layer.mix, x, net.cfg)
        else:
            w_eff = layer.weight.alpha * layer.weight.compute_weights()
            _, h = mfp_parallel_forward(layer.weight, layer.mix, x, net.cfg)
        last = k == n - 1
        caches.append(LayerCache(x, h, w_eff, latent, layer.mix.dense(), through_spike=not last))
        if smooth:
            x = smooth_spike(h, net.cfg, spec).astype(h.dtype)
        else:
            x = (h - net.cfg.v_th >= 0).astype(h.dtype)
        outputs.append(x)
    return ForwardCache(layers=caches, logits=caches[-1].pre_activation.mean(axis=0), outputs=outputs)


def backward_parallel(cache: Optional[LayerCache], upstream, cfg: NeuronConfig,
                      spec: SurrogateSpec = SurrogateSpec(), clip: float = 1.0):
    """Reverse pass of one parallel layer.

    ``upstream`` is dL/dS_out for a spiking layer or dL/dH for the readout.
    Returns (grad_latent, grad_mix_packed, grad_input). Mixing-matrix
    gradients are produced only for the T(T+1)/2 lower-triangular entries.
    """
    if cache is None:
        raise ValueError("backward_parallel needs the cache of a forward pass")
    g = np.asarray(upstream, dtype=cache.pre_activation.dtype)
    if g.shape != cache.pre_activation.shape:
        raise ShapeError(f"upstream {g.shape} does not match output {cache.pre_activation.shape}")
    if cache.through_spike:
        g = g * surrogate_grad(cache.pre_activation, cfg, spec)
    t, b, n = g.shape
    x = cache.spikes_in
    n_in = x.shape[2]
    z = (x.reshape(t * b, n_in) @ cache.weight.T).reshape(t, b * n)
    g2 = g.reshape(t, b * n)
    grad_mix = np.empty(t * (t + 1) // 2, dtype=g.dtype)
    for j in range(t):
        start = packed_index(j, 0)
        grad_mix[start : start + j + 1] = z[: j + 1] @ g2[j]
    dz = (cache.mix.T @ g2).reshape(t * b, n)
    grad_w = dz.T @ x.reshape(t * b, n_in)
    grad_latent = ste_grad(grad_w, cache.latent, clip)
    grad_in = (dz @ cache.weight).reshape(t, b, n_in)
    return grad_latent, grad_mix, grad_in


def cross_entropy(logits, labels):
    """Mean softmax cross-entropy and its gradient with respect to logits."""
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    b = len(labels)
    loss = -logp[np.arange(b), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(b), labels] -= 1.0
    return loss, grad / b


def loss_and_grads(net: MFPNetwork, spikes, labels, smooth: bool = False,
                   spec: SurrogateSpec = SurrogateSpec(), clip: float = 1.0):
    cache = forward_train(net, spikes, smooth=smooth, spec=spec, clip=clip)
    loss, dlogits = cross_entropy(cache.logits, labels)
    t = cache.layers[-1].pre_activation.shape[0]
    upstream = np.broadcast_to(dlogits / t, cache.layers[-1].pre_activation.shape)
    grads = {}
    for k in range(len(net.layers) - 1, -1, -1):
        g_lat, g_mix, upstream = backward_parallel(cache.layers[k], upstream, net.cfg, spec, clip)
        grads[f"layers.{k}.latent"] = g_lat
        grads[f"layers.{k}.mix"] = g_mix
    return loss, grads, cache


def _diag_positions(n_entries: int) -> list:
    order = int((np.sqrt(8 * n_entries + 1) - 1) / 2)
    return [packed_index(i, i) for i in range(order)]


def sgd_step(params: dict, grads: dict, lr: float, momentum: float, velocity: dict) -> dict:
    """Heavy-ball SGD in place: v = momentum*v + g; p -= lr*v.

    Arrays whose name ends in ``.mix`` are packed mixing matrices; their
    diagonal is kept at magnitude >= 1e-3 so the matrix stays invertible.
    """
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"{name}: grad {g.shape} vs param {p.shape}")
        v = velocity.get(name)
        v = g.astype(p.dtype) if v is None else (momentum * v + g).astype(p.dtype)
        velocity[name] = v
        p -= (lr * v).astype(p.dtype)
        if name.endswith(".mix"):
            d = _diag_positions(p.size)
            diag = p[d]
            small = np.abs(diag) < DIAG_FLOOR
            p[d] = np.where(small, np.where(diag >= 0, DIAG_FLOOR, -DIAG_FLOOR), diag)
    return params


def evaluate(net: MFPNetwork, data: Dataset, batch: int = 256):
    total_loss, correct = 0.0, 0
    for start in range(0, len(data), batch):
        idx = slice(start, start + batch)
        res = net.forward(data.spikes[:, idx], mode="parallel")
        loss, _ = cross_entropy(res.logits, data.labels[idx])
        total_loss += loss * len(data.labels[idx])
        correct += int((res.logits.argmax(axis=1) == data.labels[idx]).sum())
    return total_loss / len(data), correct / len(data)


def train(net: MFPNetwork, data: Dataset, cfg: TrainConfig, log=None):
    """Minibatch training, deterministic given ``cfg.seed``.

    Returns (net, metrics); one metrics row per epoch with columns
    epoch, split, loss, accuracy, wall_ms. Loss and accuracy come from a
    full pass over the training set after the epoch.
    """
    if len(data) == 0:
        raise ValueError("empty dataset")
    if data.labels.min() < 0 or data.labels.max() >= net.n_classes:
        raise ValueError(f"labels must lie in [0, {net.n_classes})")
    if data.spikes.shape[0] != net.t_steps or data.spikes.shape[2] != net.sizes[0]:
        raise ShapeError(f"data shaped {data.spikes.shape} does not fit network T={net.t_steps}, N={net.sizes[0]}")
    rng = np.random.default_rng(cfg.seed)
    spec = SurrogateSpec(cfg.surrogate_width)
    velocity: dict = {}
    metrics = []
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(len(data))
        for start in range(0, len(data), cfg.batch):
            idx = order[start : start + cfg.batch]
            _, grads, _ = loss_and_grads(net, data.spikes[:, idx], data.labels[idx], spec=spec, clip=cfg.ste_clip)
            if cfg.lr > 0:
                sgd_step(net.parameters(), grads, cfg.lr, cfg.momentum, velocity)
                net.refresh()
        loss, acc = evaluate(net, data)
        row = {
            "epoch": epoch,
            "split": "train",
            "loss": float(loss),
            "accuracy": float(acc),
            "wall_ms": (time.perf_counter() - t0) * 1e3,
        }
        metrics.append(row)
        if log is not None:
            log(row)
    return net, metrics
