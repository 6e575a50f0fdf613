"""Instruments: memory accounting, history/input contribution statistics,
AC/MAC operation counts, and parallel-versus-serial timing.

Memory figures use MB = 2**20 bytes.
"""

from __future__ import annotations

import csv
import io
import itertools
import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .network import MFPNetwork
from .neurons import MFPLayer, NeuronConfig, lif_network_forward, network_forward

SCHEMES = ("fp32-lif", "mfp-binary")
MB = 2**20


def _normalize_arch(arch) -> list:
    """Accept [(fan_in, fan_out), ...] or a size list [n0, n1, ...]."""
    arch = list(arch)
    if not arch:
        raise ValueError("architecture has no layers")
    if all(np.isscalar(a) for a in arch):
        if len(arch) < 2:
            raise ValueError("architecture has no layers")
        return [(int(a), int(b)) for a, b in zip(arch[:-1], arch[1:])]
    out = []
    for entry in arch:
        if isinstance(entry, dict):
            entry = (entry["fan_in"], entry["fan_out"])
        fan_in, fan_out = (int(v) for v in entry)
        if fan_in < 1 or fan_out < 1:
            raise ValueError(f"layer sizes must be positive, got {entry}")
        out.append((fan_in, fan_out))
    return out


@dataclass(frozen=True)
class LayerMemory:
    fan_in: int
    fan_out: int
    weight_bits: int
    membrane_bits: int
    aux_bits: int

    @property
    def total_bits(self) -> int:
        return self.weight_bits + self.membrane_bits + self.aux_bits


@dataclass(frozen=True)
class MemoryReport:
    scheme: str
    t_steps: int
    layers: tuple
    baseline_bits: int

    @property
    def weight_bits(self) -> int:
        return sum(l.weight_bits for l in self.layers)

    @property
    def membrane_bits(self) -> int:
        return sum(l.membrane_bits for l in self.layers)

    @property
    def aux_bits(self) -> int:
        return sum(l.aux_bits for l in self.layers)

    @property
    def total_bits(self) -> int:
        return self.weight_bits + self.membrane_bits + self.aux_bits

    @property
    def total_bytes(self) -> float:
        return self.total_bits / 8

    @property
    def total_mb(self) -> float:
        return self.total_bytes / MB

    @property
    def ratio(self) -> float:
        """Baseline (fp32 LIF, same architecture) bits over this scheme's bits."""
        return self.baseline_bits / self.total_bits

    def to_text(self) -> str:
        lines = [
            f"# memory report: scheme={self.scheme} T={self.t_steps} (MB = 2^20 bytes)",
            f"{'layer':>5} {'fan_in':>8} {'fan_out':>8} {'weight_bits':>12} {'membrane_bits':>14} {'aux_bits':>10}",
        ]
        for i, l in enumerate(self.layers):
            lines.append(
                f"{i:>5} {l.fan_in:>8} {l.fan_out:>8} {l.weight_bits:>12} {l.membrane_bits:>14} {l.aux_bits:>10}"
            )
        lines.append(
            f"total {self.total_bits} bits = {self.total_bytes:.1f} bytes = {self.total_mb:.6f} MB; "
            f"ratio vs fp32-lif = {self.ratio:.3f}x"
        )
        return "\n".join(lines)

    def csv_rows(self) -> list:
        rows = []
        for i, l in enumerate(self.layers):
            rows.append([self.scheme, self.t_steps, i, l.fan_in, l.fan_out, l.weight_bits,
                         l.membrane_bits, l.aux_bits, l.total_bits])
        rows.append([self.scheme, self.t_steps, "total", "", "", self.weight_bits,
                     self.membrane_bits, self.aux_bits, self.total_bits])
        return rows


MEMORY_CSV_HEADER = ["scheme", "T", "layer", "fan_in", "fan_out", "weight_bits",
                     "membrane_bits", "aux_bits", "total_bits"]


def _layer_bits(fan_in: int, fan_out: int, scheme: str, t_steps: int) -> LayerMemory:
    n_weights = fan_in * fan_out
    if scheme == "fp32-lif":
        return LayerMemory(fan_in, fan_out, 32 * n_weights, 32 * fan_out, 0)
    if scheme == "mfp-binary":
        # alpha, packed M_tau, one folded threshold per step
        aux = 32 + 32 * (t_steps * (t_steps + 1) // 2) + 32 * t_steps
        return LayerMemory(fan_in, fan_out, n_weights, 0, aux)
    raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")


def account_memory(arch, scheme: str, t_steps: int) -> MemoryReport:
    """Closed-form storage for inference.

    fp32-lif: 32 bits per weight plus a 32-bit stored potential per neuron.
    mfp-binary: 1 bit per weight, no stored potential, and per layer one
    32-bit scale, T(T+1)/2 mixing entries and T folded thresholds.
    """
    layers = _normalize_arch(arch)
    if t_steps < 1:
        raise ValueError("T must be at least 1")
    entries = tuple(_layer_bits(a, b, scheme, t_steps) for a, b in layers)
    baseline = sum(_layer_bits(a, b, "fp32-lif", t_steps).total_bits for a, b in layers)
    return MemoryReport(scheme=scheme, t_steps=t_steps, layers=entries, baseline_bits=baseline)


@dataclass
class ContributionStats:
    """Mean |tau U[t-1]| and |W S[t]| per timestep and the share of the
    history term, history / (history + input), 0/0 taken as 0."""

    history_mean: np.ndarray
    input_mean: np.ndarray
    membrane_bits: int | None = None

    @property
    def per_step_fraction(self) -> np.ndarray:
        total = self.history_mean + self.input_mean
        return np.divide(self.history_mean, total, out=np.zeros_like(total), where=total > 0)

    @property
    def history_fraction(self) -> float:
        h = float(self.history_mean.sum())
        total = h + float(self.input_mean.sum())
        return h / total if total > 0 else 0.0


def calibrate_membrane_scales(net: MFPNetwork, spikes, cfg: NeuronConfig | None = None) -> list:
    """Per-layer max |H| of full-precision LIF dynamics over a calibration batch."""
    cfg = cfg or net.cfg
    fp_cfg = NeuronConfig(cfg.tau, cfg.v_th, cfg.v_reset, None, cfg.weight_bits)
    res = lif_network_forward(net.layers, spikes, fp_cfg)
    scales = []
    for h in res.pre_activations:
        m = float(np.max(np.abs(h))) if h.size else 0.0
        scales.append(m if m > 0 else 1.0)
    return scales


def contribution_stats(net: MFPNetwork, spikes, membrane_bits: int | None, tau: float | None = None,
                       scales=None, initial_u: float = 0.0) -> ContributionStats:
    """Run the (Q)LIF engine on the network's binary weights and split the
    pre-spike potential into its history and current-input parts.

    ``membrane_bits=None`` runs full precision. Scales default to a
    max-abs calibration on ``spikes`` themselves.
    """
    base = net.cfg
    cfg = NeuronConfig(base.tau if tau is None else tau, base.v_th, base.v_reset, membrane_bits, base.weight_bits)
    if membrane_bits is not None and scales is None:
        scales = calibrate_membrane_scales(net, spikes, cfg)
    record: list = []
    lif_network_forward(net.layers, spikes, cfg, membrane_scales=scales, record=record, initial_u=initial_u)
    t_steps = np.asarray(spikes).shape[0]
    hist = np.zeros(t_steps)
    inp = np.zeros(t_steps)
    count = 0
    for h, i in record:
        hist += h.reshape(t_steps, -1).sum(axis=1)
        inp += i.reshape(t_steps, -1).sum(axis=1)
        count += h[0].size
    return ContributionStats(hist / count, inp / count, membrane_bits)


@dataclass
class OpCount:
    ac_ops: int = 0
    mac_ops: int = 0

    def add_ac(self, n: int):
        self.ac_ops += int(n)

    def add_mac(self, n: int):
        self.mac_ops += int(n)


def count_ops_from_spikes(net: MFPNetwork, input_spikes, layer_spikes: Sequence[np.ndarray], mode: str) -> OpCount:
    """AC/MAC totals recomputed from recorded spike trains.

    Every input spike into a layer triggers fan_out accumulates. Real-valued
    products: the alpha scaling of each neuron per step and each nonzero
    mixing coefficient application in the parallel and streaming modes;
    the folded modes absorb both into thresholds and the readout uses one
    scaled product per output per step.
    """
    ops = OpCount()
    inputs = [np.asarray(input_spikes)] + [np.asarray(s) for s in layer_spikes[:-1]]
    t_steps, batch = inputs[0].shape[:2]
    for k, (layer, x) in enumerate(zip(net.layers, inputs)):
        ops.add_ac(int(x.sum()) * layer.out_features)
        neurons = batch * layer.out_features
        last = k == len(net.layers) - 1
        if mode in ("parallel", "streaming"):
            ops.add_mac(t_steps * (t_steps + 1) // 2 * neurons)
            ops.add_mac(t_steps * neurons)
        elif last:
            ops.add_mac(t_steps * neurons)
    return ops


def count_ops(net: MFPNetwork, input_spikes, mode: str = "streaming") -> OpCount:
    res = network_forward(net.layers, input_spikes, net.cfg, mode)
    return count_ops_from_spikes(net, input_spikes, res.spikes, mode)


@dataclass
class BenchResult:
    t_steps: int
    batch: int
    repeats: int
    parallel_ms: float
    serial_ms: float
    outputs_match: bool

    @property
    def speedup(self) -> float:
        return self.serial_ms / self.parallel_ms

    def csv_row(self) -> list:
        return [self.t_steps, self.batch, self.repeats, f"{self.parallel_ms:.4f}",
                f"{self.serial_ms:.4f}", f"{self.speedup:.4f}", int(self.outputs_match)]


BENCH_CSV_HEADER = ["T", "batch", "repeats", "parallel_ms", "serial_ms", "speedup", "outputs_match"]


def bench_parallel_vs_serial(net: MFPNetwork, t_steps: int | None = None, batch: int = 128, repeats: int = 5,
                             seed: int = 0, density: float = 0.5, warmup: int = 1) -> BenchResult:
    """Median wall-clock of one forward (pre-activations kept) in parallel
    and in streaming mode on the same random input."""
    if repeats < 5:
        raise ValueError("repeats must be at least 5")
    t_steps = t_steps or net.t_steps
    if t_steps != net.t_steps:
        raise ValueError(f"network was built for T={net.t_steps}, asked for T={t_steps}")
    rng = np.random.default_rng(seed)
    x = (rng.random((t_steps, batch, net.sizes[0])) < density).astype(np.uint8)

    def timed(mode):
        out = None
        for _ in range(warmup):
            network_forward(net.layers, x, net.cfg, mode)
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            out = network_forward(net.layers, x, net.cfg, mode)
            times.append((time.perf_counter() - t0) * 1e3)
        return float(np.median(times)), out

    par_ms, par = timed("parallel")
    ser_ms, ser = timed("streaming")
    match = all(np.array_equal(a, b) for a, b in zip(par.spikes, ser.spikes)) and np.array_equal(
        par.logits, ser.logits
    )
    return BenchResult(t_steps, batch, repeats, par_ms, ser_ms, match)


def write_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def verify_network(net: MFPNetwork, mode: str, trials: int, seed: int = 0, batch: int = 1, density: float = 0.5):
    """Compare parallel spike trains with a serial engine on random inputs.

    Returns (number of mismatching trials, first counterexample or None).
    A counterexample records trial, layer, timestep, sample, neuron, both
    spike values and the offending input train (T x N).
    """
    rng = np.random.default_rng(seed)
    mismatches, first = 0, None
    for trial in range(trials):
        x = (rng.random((net.t_steps, batch, net.sizes[0])) < density).astype(np.uint8)
        bad = first_divergence(net.layers, x, net.cfg, mode)
        if bad is not None:
            mismatches += 1
            if first is None:
                first = dict(bad, trial=trial)
    return mismatches, first


def first_divergence(layers: Sequence[MFPLayer], x, cfg: NeuronConfig, mode: str):
    par = network_forward(layers, x, cfg, "parallel")
    ser = network_forward(layers, x, cfg, mode)
    for k, (a, b) in enumerate(zip(par.spikes, ser.spikes)):
        diff = np.argwhere(a != b)
        if diff.size:
            t, bi, n = (int(v) for v in diff[0])
            return {"layer": k, "timestep": t, "sample": bi, "neuron": n,
                    "parallel": int(a[t, bi, n]), "serial": int(b[t, bi, n]),
                    "input": np.asarray(x)[:, bi].tolist()}
    return None


def all_spike_inputs(t_steps: int, features: int) -> np.ndarray:
    """Every binary train of shape (T, N), stacked along the batch axis: (T, 2**(T*N), N)."""
    combos = np.array(list(itertools.product((0, 1), repeat=t_steps * features)), dtype=np.uint8)
    return combos.reshape(-1, t_steps, features).transpose(1, 0, 2).copy()


def exhaustive_mode_check(layers: Sequence[MFPLayer], cfg: NeuronConfig, mode: str):
    """Run every possible input train through parallel and ``mode``.

    Returns (number of inputs, indices of inputs whose spike trains differ).
    """
    t_steps = layers[0].mix.order
    x = all_spike_inputs(t_steps, layers[0].in_features)
    par = network_forward(layers, x, cfg, "parallel")
    ser = network_forward(layers, x, cfg, mode)
    bad = np.zeros(x.shape[1], dtype=bool)
    for a, b in zip(par.spikes, ser.spikes):
        bad |= np.any(a != b, axis=(0, 2))
    return x.shape[1], np.flatnonzero(bad)
