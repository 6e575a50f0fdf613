"""Checkpoints, rate coding, synthetic data and IDX ingestion.

Checkpoint layout::

    b"MFPQCKPT" | uint32 LE header length | UTF-8 JSON header | payload

The payload is little-endian arrays back to back; the header lists each
array's name, dtype, shape, byte offset (from the payload start) and size.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .network import MFPNetwork
from .neurons import NeuronConfig
from .quantization import InvalidScaleError, fold_thresholds, pack_signs, unpack_signs
from .training import Dataset

MAGIC = b"MFPQCKPT"
FORMAT_VERSION = 1


class FormatError(ValueError):
    """Malformed file; ``offset`` is the byte position where reading failed."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


def atomic_write(path, data: bytes):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _folded(net: MFPNetwork, layer, mode):
    try:
        return fold_thresholds(layer.mix.tri, net.cfg.v_th, float(layer.weight.alpha), mode).per_step
    except InvalidScaleError:
        # all-zero latent: alpha = 0, nothing can ever fire
        return np.full(net.t_steps, np.inf)


def checkpoint_bytes(net: MFPNetwork) -> bytes:
    arrays = []
    for i, layer in enumerate(net.layers):
        w = layer.weight
        arrays += [
            (f"layers.{i}.latent", np.asarray(w.latent, dtype="<f4")),
            (f"layers.{i}.signs", pack_signs(w.signs)),
            (f"layers.{i}.alpha", np.asarray([w.scale], dtype="<f4")),
            (f"layers.{i}.mix", np.asarray(layer.mix.tri.entries, dtype="<f4")),
            (f"layers.{i}.thresholds_diagonal", _folded(net, layer, "folded-diagonal").astype("<f4")),
            (f"layers.{i}.thresholds_rowsum", _folded(net, layer, "folded-rowsum").astype("<f4")),
        ]
    table, payload, offset = [], [], 0
    for name, arr in arrays:
        raw = np.ascontiguousarray(arr).tobytes()
        table.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape),
                      "offset": offset, "nbytes": len(raw)})
        payload.append(raw)
        offset += len(raw)
    header = {
        "format": "mfpq-checkpoint",
        "version": FORMAT_VERSION,
        "arch": [list(a) for a in net.arch],
        "sizes": net.sizes,
        "T": net.t_steps,
        "seed": int(net.seed),
        "neuron": net.cfg.to_dict(),
        "counts": {"layers": len(net.layers), "arrays": len(table), "payload_bytes": offset},
        "arrays": table,
    }
    head = json.dumps(header, sort_keys=True, indent=1).encode("utf-8")
    return MAGIC + struct.pack("<I", len(head)) + head + b"".join(payload)


def save_checkpoint(net: MFPNetwork, path):
    atomic_write(path, checkpoint_bytes(net))


def _require(header: dict, key: str):
    if key not in header:
        raise FormatError(f"checkpoint header is missing field {key!r}")
    return header[key]


def parse_checkpoint(blob: bytes) -> MFPNetwork:
    if blob[:8] != MAGIC:
        raise FormatError("bad checkpoint magic", 0)
    if len(blob) < 12:
        raise FormatError("truncated checkpoint header length", 8)
    (hlen,) = struct.unpack("<I", blob[8:12])
    if len(blob) < 12 + hlen:
        raise FormatError(f"header declares {hlen} bytes, file has {len(blob) - 12}", 12)
    try:
        header = json.loads(blob[12 : 12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"checkpoint header is not valid JSON: {exc}", 12) from None
    if _require(header, "format") != "mfpq-checkpoint":
        raise FormatError(f"field 'format' is {header['format']!r}")
    if _require(header, "version") != FORMAT_VERSION:
        raise FormatError(f"field 'version': unsupported {header['version']!r}")
    sizes = _require(header, "sizes")
    t_steps = _require(header, "T")
    neuron = _require(header, "neuron")
    try:
        cfg = NeuronConfig(**neuron)
    except (TypeError, ValueError) as exc:
        raise FormatError(f"field 'neuron': {exc}") from None
    payload = blob[12 + hlen :]
    base = 12 + hlen
    table = _require(header, "arrays")
    expected = 0
    arrays = {}
    for entry in sorted(table, key=lambda e: e["offset"]):
        if entry["offset"] != expected:
            raise FormatError(f"array {entry['name']!r} does not start where the previous ends", base + expected)
        end = entry["offset"] + entry["nbytes"]
        if end > len(payload):
            raise FormatError(
                f"array {entry['name']!r} needs bytes up to {end}, payload has {len(payload)}", base + len(payload)
            )
        arr = np.frombuffer(payload[entry["offset"] : end], dtype=np.dtype(entry["dtype"]))
        arrays[entry["name"]] = arr.reshape(entry["shape"])
        expected = end
    if expected != len(payload):
        raise FormatError(f"{len(payload) - expected} trailing payload bytes", base + expected)
    latents, mixes = [], []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        try:
            latent = arrays[f"layers.{i}.latent"].astype(np.float32)
            mix = arrays[f"layers.{i}.mix"].astype(np.float32)
            signs = unpack_signs(arrays[f"layers.{i}.signs"], (fan_out, fan_in))
        except KeyError as exc:
            raise FormatError(f"missing array {exc.args[0]!r}") from None
        if latent.shape != (fan_out, fan_in):
            raise FormatError(f"field 'layers.{i}.latent' has shape {latent.shape}")
        if not np.array_equal(signs, np.where(latent >= 0, 1, -1)):
            raise FormatError(f"field 'layers.{i}.signs' disagrees with latent weights")
        latents.append(latent)
        mixes.append(mix)
    return MFPNetwork.from_arrays(sizes, t_steps, cfg, latents, mixes, seed=_require(header, "seed"))


def load_checkpoint(path) -> MFPNetwork:
    return parse_checkpoint(Path(path).read_bytes())


@dataclass
class RateEncoder:
    """Bernoulli rate coding: each timestep spikes with probability = intensity."""

    t_steps: int
    seed: int = 0

    def encode(self, intensities, rng: np.random.Generator | None = None) -> np.ndarray:
        p = np.asarray(intensities, dtype=np.float64)
        if np.any((p < 0) | (p > 1)):
            raise ValueError("intensities must lie in [0, 1]")
        rng = rng or np.random.default_rng(self.seed)
        return (rng.random((self.t_steps,) + p.shape) < p).astype(np.uint8)


@dataclass
class SyntheticDataset(Dataset):
    intensities: np.ndarray = None


def gen_synthetic(dims: int, count: int, seed: int = 0, t_steps: int = 4, sigma: float = 0.08,
                  classes: int = 2) -> SyntheticDataset:
    """Two Gaussian clusters centred at 0.3 and 0.7 in every coordinate,
    clamped to [0, 1] and rate-coded. Spikes are (T, count, dims)."""
    if classes != 2:
        raise ValueError("only the two-class generator is provided")
    if dims < 2:
        raise ValueError("dims must be at least 2")
    if count < 2 * classes:
        raise ValueError("need at least 2 samples per class")
    rng = np.random.default_rng(seed)
    labels = np.arange(count) % 2
    rng.shuffle(labels)
    centres = np.where(labels[:, None] == 0, 0.3, 0.7)
    x = np.clip(centres + sigma * rng.standard_normal((count, dims)), 0.0, 1.0)
    spikes = RateEncoder(t_steps).encode(x, rng=rng).reshape(t_steps, count, dims)
    return SyntheticDataset(spikes=spikes, labels=labels, intensities=x)


_IDX_TYPES = {0x08: np.dtype(np.uint8)}


def read_idx(path) -> np.ndarray:
    """Raw contents of an uncompressed IDX file of unsigned bytes (1-D or 3-D)."""
    blob = Path(path).read_bytes()
    if len(blob) < 4:
        raise FormatError(f"file too short for an IDX magic number ({len(blob)} bytes)", 0)
    if blob[0] != 0 or blob[1] != 0:
        raise FormatError("bad IDX magic: first two bytes must be zero", 0)
    if blob[2] not in _IDX_TYPES:
        raise FormatError(f"unsupported IDX element type 0x{blob[2]:02x}", 2)
    ndim = blob[3]
    if ndim not in (1, 3):
        raise FormatError(f"IDX files with {ndim} dimensions are not supported", 3)
    head = 4 + 4 * ndim
    if len(blob) < head:
        raise FormatError(f"truncated dimension table: expected {head} bytes, got {len(blob)}", len(blob))
    shape = struct.unpack(">" + "I" * ndim, blob[4:head])
    expected = int(np.prod(shape))
    actual = len(blob) - head
    if actual != expected:
        raise FormatError(f"payload length mismatch: expected {expected} bytes, got {actual}", head + min(actual, expected))
    return np.frombuffer(blob, dtype=np.uint8, offset=head).reshape(shape)


def load_idx(images_path, labels_path=None, num_classes: int = 10):
    """Images scaled to [0, 1] with shape (count, rows, cols), plus labels if given."""
    images = read_idx(images_path)
    if images.ndim != 3:
        raise FormatError(f"image file must be 3-D, got {images.ndim}-D", 3)
    images = images.astype(np.float64) / 255.0
    if labels_path is None:
        return images, None
    labels = read_idx(labels_path)
    if labels.ndim != 1:
        raise FormatError(f"label file must be 1-D, got {labels.ndim}-D", 3)
    if len(labels) != len(images):
        raise FormatError(f"{len(images)} images but {len(labels)} labels", 4)
    bad = np.flatnonzero(labels >= num_classes)
    if bad.size:
        raise ValueError(f"label {labels[bad[0]]} at index {bad[0]} is >= class count {num_classes}")
    return images, labels.astype(np.int64)
