"""Neuron dynamics engines.

Five engines share one layer description:

* ``lif_step``: full-precision leaky integrate-and-fire with hard reset.
* ``qlif_step``: the same with the stored membrane potential re-quantized.
* ``mfp_parallel_forward``: all timesteps at once, H = alpha * M (W S).
* ``mfp_streaming_step``: the same sum evaluated one timestep at a time,
  keeping T running accumulators per neuron and no membrane potential.
* ``mfp_folded_step``: stateless per-step thresholding against folded
  thresholds.

Spike trains are laid out (time, batch, features).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .numeric import LowerTriangular, ShapeError, matmul, packed_size, tri_matmul
from .quantization import (
    BinaryLinear,
    DenseLinear,
    FoldedThresholds,
    QuantSpec,
    UnsupportedBitWidthError,
    fold_thresholds,
    quantize_uniform,
)

ENGINE_MODES = ("parallel", "streaming", "folded-diagonal", "folded-rowsum")

Linear = Union[BinaryLinear, DenseLinear]


class SequencingError(RuntimeError):
    pass


@dataclass(frozen=True)
class NeuronConfig:
    tau: float = 0.5
    v_th: float = 1.0
    v_reset: float = 0.0
    membrane_bits: Optional[int] = None
    weight_bits: int = 1

    def __post_init__(self):
        # tau = 0 is admitted as the memoryless limit
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError(f"tau must lie in [0, 1], got {self.tau}")
        if not self.v_th > self.v_reset:
            raise ValueError(f"v_th ({self.v_th}) must exceed v_reset ({self.v_reset})")
        if self.membrane_bits is not None and self.membrane_bits < 2:
            raise UnsupportedBitWidthError(f"membrane_bits must be >= 2, got {self.membrane_bits}")
        if self.weight_bits not in (1, 32):
            raise ValueError(f"weight_bits must be 1 or 32, got {self.weight_bits}")

    def to_dict(self) -> dict:
        return {
            "tau": self.tau,
            "v_th": self.v_th,
            "v_reset": self.v_reset,
            "membrane_bits": self.membrane_bits,
            "weight_bits": self.weight_bits,
        }


class SpikeTrain:
    """Binary activations of logical shape (T, B, N).

    Stored unpacked as uint8 for compute; ``packed()`` gives one bit per
    element.
    """

    __slots__ = ("data",)

    def __init__(self, data):
        data = np.asarray(data)
        if data.ndim != 3:
            raise ShapeError(f"spike train must be (T, B, N), got shape {data.shape}")
        if not np.all((data == 0) | (data == 1)):
            raise ValueError("spike train values must be 0 or 1")
        self.data = data.astype(np.uint8)

    @property
    def t_steps(self) -> int:
        return self.data.shape[0]

    @property
    def batch(self) -> int:
        return self.data.shape[1]

    @property
    def features(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self):
        return self.data.shape

    def packed(self) -> np.ndarray:
        return np.packbits(self.data.reshape(-1), bitorder="little")

    @classmethod
    def from_packed(cls, packed, shape) -> "SpikeTrain":
        count = int(np.prod(shape))
        bits = np.unpackbits(np.asarray(packed, dtype=np.uint8), count=count, bitorder="little")
        return cls(bits.reshape(shape))

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)

    def __eq__(self, other):
        if isinstance(other, SpikeTrain):
            return np.array_equal(self.data, other.data)
        return NotImplemented

    def __repr__(self):
        return f"SpikeTrain(shape={self.shape}, spikes={int(self.data.sum())})"


@dataclass
class TemporalMixMatrix:
    """Learnable lower-triangular T x T matrix weighting past synaptic input."""

    tri: LowerTriangular

    @property
    def order(self) -> int:
        return self.tri.order

    @property
    def n_entries(self) -> int:
        return packed_size(self.order)

    def dense(self) -> np.ndarray:
        return self.tri.dense()

    @classmethod
    def lif_like(cls, t_steps: int, tau0: float = 0.5, dtype=np.float64) -> "TemporalMixMatrix":
        """Diagonal 1, entry (t, i) = tau0**(t - i): a leaky integrator without reset."""
        t = np.arange(t_steps)
        lag = t[:, None] - t[None, :]
        dense = np.where(lag >= 0, float(tau0) ** np.maximum(lag, 0), 0.0).astype(dtype)
        return cls(LowerTriangular.from_dense(dense))

    @classmethod
    def identity(cls, t_steps: int, dtype=np.float64) -> "TemporalMixMatrix":
        return cls(LowerTriangular.identity(t_steps, dtype=dtype))


@dataclass
class MFPLayer:
    weight: Linear
    mix: TemporalMixMatrix

    @property
    def in_features(self) -> int:
        return self.weight.in_features

    @property
    def out_features(self) -> int:
        return self.weight.out_features


@dataclass
class LIFState:
    u: np.ndarray


@dataclass
class StreamingState:
    """Running sums acc[j] = sum over consumed i of M[j, i] * Hbar[i].

    Shape (T, B, N). This is the whole persistent state of a streaming
    layer; there is no membrane-potential buffer.
    """

    acc: np.ndarray
    cursor: int = 0

    @classmethod
    def zeros(cls, t_steps: int, batch: int, features: int, dtype=np.float64) -> "StreamingState":
        return cls(acc=np.zeros((t_steps, batch, features), dtype=dtype))

    @property
    def accumulators_per_neuron(self) -> int:
        return self.acc.shape[0]

    @property
    def membrane_potential_bytes(self) -> int:
        return 0

    def storage(self) -> dict:
        return {
            "accumulators_per_neuron": self.accumulators_per_neuron,
            "accumulator_bytes": self.acc.nbytes,
            "membrane_potential_bytes": self.membrane_potential_bytes,
        }


def _check_current(u: np.ndarray, current: np.ndarray):
    if np.shape(u) != np.shape(current):
        raise ShapeError(f"state shape {np.shape(u)} does not match input {np.shape(current)}")


def lif_step(state: LIFState, input_current, cfg: NeuronConfig):
    """One LIF update: H = tau*U + I, spike iff H >= v_th, hard reset to v_reset."""
    current = np.asarray(input_current)
    _check_current(state.u, current)
    h = cfg.tau * state.u + current
    spikes = (h - cfg.v_th >= 0).astype(np.uint8)
    u = np.where(spikes == 1, cfg.v_reset, h).astype(h.dtype, copy=False)
    return spikes, LIFState(u)


def qlif_step(state: LIFState, input_current, cfg: NeuronConfig, scale: float = 1.0):
    """LIF update whose stored potential lives on a ``membrane_bits`` level grid.

    The potential is re-quantized toward zero after every update, the
    behaviour of an integer register scaled by ``scale``. Inputs outside
    ±scale saturate.
    """
    if cfg.membrane_bits is None or cfg.membrane_bits < 2:
        raise UnsupportedBitWidthError("qlif_step needs cfg.membrane_bits >= 2")
    spikes, nxt = lif_step(state, input_current, cfg)
    spec = QuantSpec(cfg.membrane_bits, scale)
    u = quantize_uniform(np.asarray(nxt.u, dtype=np.float64), spec, rounding="toward-zero")
    return spikes, LIFState(np.asarray(u, dtype=np.asarray(nxt.u).dtype))


def decay_steps_bound(bits: int, tau: float) -> int:
    """Zero-input steps for a toward-zero quantized potential to reach 0
    from the top level.

    Truncation is monotone in the start level, so the top level is the
    worst case; each step removes at least one level when tau < 1, so the
    result never exceeds 2**(bits-1) - 1.
    """
    if not 0 <= tau < 1:
        raise ValueError("a decay bound exists only for tau in [0, 1)")
    spec = QuantSpec(bits, 1.0)
    u, steps = 1.0, 0
    while u != 0:
        u = quantize_uniform(tau * u, spec, rounding="toward-zero")
        steps += 1
    return steps


def _as_spike_array(spikes) -> np.ndarray:
    arr = np.asarray(spikes)
    if isinstance(spikes, SpikeTrain):
        arr = spikes.data
    return arr


# integers up to 2**24 are exact in float32
_EXACT_INT_FAN_IN = 2**24


def synaptic_current(layer: Linear, spikes_2d: np.ndarray) -> np.ndarray:
    """Unscaled synaptic current Hbar = S W^T for a (rows, in) spike block.

    With ±1 weights and 0/1 spikes every partial sum is a small integer,
    exact in any summation order, so the BLAS product is used. Real-valued
    weights go through the fixed-order ``matmul``.
    """
    w = layer.compute_weights()
    if spikes_2d.shape[-1] != w.shape[1]:
        raise ShapeError(f"input has {spikes_2d.shape[-1]} features, layer expects {w.shape[1]}")
    x = spikes_2d.astype(w.dtype)
    if isinstance(layer, BinaryLinear) and w.shape[1] < _EXACT_INT_FAN_IN and _is_binary(spikes_2d):
        return x @ w.T
    return matmul(x, w.T)


def _is_binary(x: np.ndarray) -> bool:
    if x.dtype == np.bool_:
        return True
    if x.dtype == np.uint8:
        return x.size == 0 or int(x.max()) <= 1
    return bool(np.all((x == 0) | (x == 1)))


def mfp_parallel_forward(layer: Linear, mix: TemporalMixMatrix, spikes, cfg: NeuronConfig):
    """Whole-sequence forward: Hhat = alpha * M (W S), S_out = [Hhat >= v_th].

    Returns (output spikes as uint8 (T, B, N_out), Hhat).
    """
    s = _as_spike_array(spikes)
    t, b, n_in = s.shape
    if mix.order != t:
        raise ShapeError(f"mixing matrix has order {mix.order}, input has {t} timesteps")
    hbar = synaptic_current(layer, s.reshape(t * b, n_in))
    n_out = hbar.shape[1]
    mixed = tri_matmul(mix.tri, hbar.reshape(t, b, n_out))
    h = layer.alpha * mixed
    out = (h - cfg.v_th >= 0).astype(np.uint8)
    return out, h


def mfp_streaming_step(
    state: StreamingState,
    layer: Linear,
    mix: TemporalMixMatrix,
    input_spikes_t,
    cfg: NeuronConfig,
    t: Optional[int] = None,
):
    """Consume the input spikes of one timestep and emit that timestep's spikes.

    The current Hbar[t] is scattered into every accumulator j >= t with
    weight M[j, t]; accumulator t is then complete and is thresholded.
    Returns (spikes_t, pre-activation_t, new_state); the state is updated
    in place and also returned.
    """
    if t is not None and t != state.cursor:
        raise SequencingError(f"expected timestep {state.cursor}, got {t}")
    t = state.cursor
    order = mix.order
    if t >= order:
        raise SequencingError(f"all {order} timesteps already consumed")
    hbar = synaptic_current(layer, np.asarray(input_spikes_t))
    if state.acc.shape[1:] != hbar.shape:
        raise ShapeError(f"state holds {state.acc.shape[1:]}, current is {hbar.shape}")
    column = mix.tri.column(t).astype(hbar.dtype)
    state.acc[t:] += column[:, None, None] * hbar
    h_t = layer.alpha * state.acc[t]
    spikes = (h_t - cfg.v_th >= 0).astype(np.uint8)
    state.cursor = t + 1
    return spikes, h_t, state


def mfp_folded_step(layer: Linear, folded: FoldedThresholds, input_spikes_t, t: int):
    """Stateless serial step: spike iff W S[t] >= folded threshold of step t."""
    if folded.mode not in ("folded-diagonal", "folded-rowsum"):
        raise ValueError(f"folded step needs a folded mode, got {folded.mode!r}")
    if not 0 <= t < folded.t_steps:
        raise IndexError(f"timestep {t} out of range for {folded.t_steps} thresholds")
    hbar = synaptic_current(layer, np.asarray(input_spikes_t))
    return (hbar - folded.per_step[t] >= 0).astype(np.uint8)


@dataclass
class ForwardResult:
    logits: np.ndarray
    spikes: list = field(default_factory=list)
    pre_activations: list = field(default_factory=list)


def _check_stack(layers: Sequence[MFPLayer], n_in: int, t_steps: int):
    if not layers:
        raise ShapeError("network has no layers")
    width = n_in
    for i, layer in enumerate(layers):
        if layer.in_features != width:
            raise ShapeError(f"layer {i} expects {layer.in_features} inputs, gets {width}")
        if layer.mix.order != t_steps:
            raise ShapeError(f"layer {i} mixing order {layer.mix.order} != T={t_steps}")
        width = layer.out_features


def network_forward(layers: Sequence[MFPLayer], spikes, cfg: NeuronConfig, mode: str = "parallel") -> ForwardResult:
    """Run a layer stack in one of the engine modes.

    Logits are the time-average of the last layer's pre-activation. In the
    folded modes the last layer has no mixed potential, so its time-average
    is accumulated directly from the column means of M (still no stored
    potential); those logits are not bit-identical to the other modes.
    """
    s = _as_spike_array(spikes)
    t_steps, batch, n_in = s.shape
    _check_stack(layers, n_in, t_steps)
    if mode == "parallel":
        res = ForwardResult(logits=None)
        x = s
        for layer in layers:
            x, h = mfp_parallel_forward(layer.weight, layer.mix, x, cfg)
            res.spikes.append(x)
            res.pre_activations.append(h)
        res.logits = res.pre_activations[-1].mean(axis=0)
        return res
    if mode == "streaming":
        dtype = layers[0].weight.dtype
        states = [StreamingState.zeros(t_steps, batch, l.out_features, dtype) for l in layers]
        spikes_out = [np.zeros((t_steps, batch, l.out_features), np.uint8) for l in layers]
        pre = [np.zeros((t_steps, batch, l.out_features), dtype) for l in layers]
        for t in range(t_steps):
            x = s[t]
            for k, layer in enumerate(layers):
                x, h, _ = mfp_streaming_step(states[k], layer.weight, layer.mix, x, cfg, t)
                spikes_out[k][t] = x
                pre[k][t] = h
        return ForwardResult(logits=pre[-1].mean(axis=0), spikes=spikes_out, pre_activations=pre)
    if mode in ("folded-diagonal", "folded-rowsum"):
        folded = [fold_thresholds(l.mix.tri, cfg.v_th, l.weight.alpha, mode) for l in layers]
        last = layers[-1]
        col_mean = last.mix.dense().astype(np.float64).mean(axis=0)
        logits = np.zeros((batch, last.out_features))
        spikes_out = [np.zeros((t_steps, batch, l.out_features), np.uint8) for l in layers]
        for t in range(t_steps):
            x = s[t]
            for k, layer in enumerate(layers):
                if k == len(layers) - 1:
                    hbar = synaptic_current(layer.weight, x)
                    logits += float(layer.weight.alpha) * col_mean[t] * hbar
                x = mfp_folded_step(layer.weight, folded[k], x, t)
                spikes_out[k][t] = x
        return ForwardResult(logits=logits, spikes=spikes_out)
    raise ValueError(f"unknown mode {mode!r}; expected one of {ENGINE_MODES}")


def lif_network_forward(layers: Sequence[MFPLayer], spikes, cfg: NeuronConfig, membrane_scales=None,
                        record=None, initial_u: float = 0.0) -> ForwardResult:
    """Serial LIF (or QLIF, when ``cfg.membrane_bits`` is set) over the same
    weights, ignoring the mixing matrices. Input current is alpha * W S.

    ``membrane_scales`` gives one quantization scale per layer. ``record``,
    if given, is a list that receives per-layer (|tau U[t-1]|, |I[t]|)
    arrays of shape (T, B, N). ``initial_u`` seeds every potential.
    """
    s = _as_spike_array(spikes)
    t_steps, batch, n_in = s.shape
    quantized = cfg.membrane_bits is not None
    if quantized and membrane_scales is None:
        raise ValueError("QLIF needs one membrane scale per layer")
    states = [LIFState(np.full((batch, l.out_features), float(initial_u))) for l in layers]
    spikes_out = [np.zeros((t_steps, batch, l.out_features), np.uint8) for l in layers]
    pre = [np.zeros((t_steps, batch, l.out_features)) for l in layers]
    hist = [np.zeros((t_steps, batch, l.out_features)) for l in layers]
    inp = [np.zeros((t_steps, batch, l.out_features)) for l in layers]
    for t in range(t_steps):
        x = s[t]
        for k, layer in enumerate(layers):
            current = float(layer.weight.alpha) * synaptic_current(layer.weight, x).astype(np.float64)
            hist[k][t] = np.abs(cfg.tau * states[k].u)
            inp[k][t] = np.abs(current)
            pre[k][t] = cfg.tau * states[k].u + current
            if quantized:
                x, states[k] = qlif_step(states[k], current, cfg, membrane_scales[k])
            else:
                x, states[k] = lif_step(states[k], current, cfg)
            spikes_out[k][t] = x
    if record is not None:
        record.extend(zip(hist, inp))
    return ForwardResult(logits=pre[-1].mean(axis=0), spikes=spikes_out, pre_activations=pre)


__all__ = [
    "ENGINE_MODES",
    "ForwardResult",
    "LIFState",
    "MFPLayer",
    "NeuronConfig",
    "SequencingError",
    "SpikeTrain",
    "StreamingState",
    "TemporalMixMatrix",
    "decay_steps_bound",
    "lif_network_forward",
    "lif_step",
    "mfp_folded_step",
    "mfp_parallel_forward",
    "mfp_streaming_step",
    "network_forward",
    "qlif_step",
    "synaptic_current",
]
