"""Quantizers: symmetric uniform b-bit levels, sign binarization, and
threshold folding for serial inference."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numeric import LowerTriangular, ShapeError, tri_invert

FOLD_MODES = ("exact-streaming", "folded-diagonal", "folded-rowsum")


class UnsupportedBitWidthError(ValueError):
    pass


class InvalidScaleError(ValueError):
    pass


@dataclass(frozen=True)
class QuantSpec:
    bits: int
    scale: float = 1.0

    def __post_init__(self):
        if int(self.bits) != self.bits or self.bits < 1:
            raise UnsupportedBitWidthError(f"bits must be a positive integer, got {self.bits}")
        if not np.isfinite(self.scale) or self.scale <= 0:
            raise InvalidScaleError(f"scale must be finite and positive, got {self.scale}")

    @property
    def max_index(self) -> int:
        """Largest integer level index, 2**(bits-1) - 1."""
        return 2 ** (self.bits - 1) - 1

    @property
    def step(self) -> float:
        return self.scale / self.max_index

    def levels(self) -> np.ndarray:
        n = self.max_index
        return np.arange(-n, n + 1) * (self.scale / n)


def _check_uniform(spec: QuantSpec):
    if spec.bits < 2:
        raise UnsupportedBitWidthError(
            f"uniform quantizer needs bits >= 2 (got {spec.bits}); use binarize for 1-bit weights"
        )


def quantize_index(x, spec: QuantSpec, rounding: str = "nearest") -> np.ndarray:
    """Integer level index k in [-n, n] for each x, level value k * scale / n.

    ``rounding="nearest"`` picks the closest level with ties going away from
    zero. ``rounding="toward-zero"`` picks the largest-magnitude level not
    exceeding |x|, which is what a right shift does on an integer register.
    Distances are compared in value space against the same level values the
    caller will see, so the choice agrees with a brute-force nearest search.
    """
    _check_uniform(spec)
    x = np.asarray(x, dtype=np.float64)
    n = spec.max_index
    unit = spec.scale / n
    mag = np.minimum(np.abs(x), spec.scale)
    k = np.clip(np.floor(mag / unit), 0, n)
    # floor(mag / unit) can be off by one when the division rounds
    k = np.where((k < n) & ((k + 1) * unit <= mag), k + 1, k)
    k = np.where((k > 0) & (k * unit > mag), k - 1, k)
    if rounding == "nearest":
        lo = mag - k * unit
        hi = (k + 1) * unit - mag
        k = np.where((k < n) & (hi <= lo), k + 1, k)
    elif rounding != "toward-zero":
        raise ValueError(f"unknown rounding mode {rounding!r}")
    return (np.sign(x) * k).astype(np.int64)


def quantize_uniform(x, spec: QuantSpec, rounding: str = "nearest"):
    """Map x onto the symmetric level set scale * {0, ±1/n, ..., ±1}, n = 2**(bits-1)-1.

    Out-of-range inputs saturate at ±scale. Scalars in, scalars out.
    """
    if not np.all(np.isfinite(x)):
        raise ValueError("quantize_uniform requires finite input")
    k = quantize_index(x, spec, rounding)
    out = k * (spec.scale / spec.max_index)
    if np.ndim(x) == 0:
        return float(out)
    return out.astype(np.result_type(np.asarray(x).dtype, np.float32), copy=False)


@dataclass
class BinaryLinear:
    """Sign weights plus one per-layer scale, with the full-precision shadow
    weights the trainer updates.

    ``signs`` has shape (out_features, in_features) and holds -1/+1 as int8.
    """

    signs: np.ndarray
    scale: float
    latent: np.ndarray

    @property
    def in_features(self) -> int:
        return self.signs.shape[1]

    @property
    def out_features(self) -> int:
        return self.signs.shape[0]

    @property
    def dtype(self):
        return self.latent.dtype

    @property
    def n_weights(self) -> int:
        return self.signs.size

    def compute_weights(self) -> np.ndarray:
        """Weights as they enter the synaptic sum (±1, unscaled)."""
        return self.signs.astype(self.dtype)

    @property
    def alpha(self):
        return self.scale

    def packed_signs(self) -> np.ndarray:
        return pack_signs(self.signs)

    def rebinarize(self) -> "BinaryLinear":
        return binarize(self.latent)


@dataclass
class DenseLinear:
    """Full-precision weight matrix. Same surface as BinaryLinear with scale 1."""

    weight: np.ndarray

    @property
    def in_features(self) -> int:
        return self.weight.shape[1]

    @property
    def out_features(self) -> int:
        return self.weight.shape[0]

    @property
    def dtype(self):
        return self.weight.dtype

    @property
    def n_weights(self) -> int:
        return self.weight.size

    @property
    def alpha(self):
        return self.weight.dtype.type(1)

    def compute_weights(self) -> np.ndarray:
        return self.weight


def binarize(latent) -> BinaryLinear:
    """Sign-binarize latent weights; scale is mean |latent|, sign(0) = +1."""
    latent = np.asarray(latent)
    if latent.size == 0:
        raise ShapeError("cannot binarize an empty tensor")
    if not np.issubdtype(latent.dtype, np.floating):
        latent = latent.astype(np.float64)
    signs = np.where(latent >= 0, 1, -1).astype(np.int8)
    scale = latent.dtype.type(np.mean(np.abs(latent), dtype=np.float64))
    return BinaryLinear(signs=signs, scale=scale, latent=latent)


def ste_grad(upstream, latent, clip: float = 1.0) -> np.ndarray:
    """Straight-through gradient: pass upstream where |latent| <= clip."""
    upstream = np.asarray(upstream)
    latent = np.asarray(latent)
    if upstream.shape != latent.shape:
        raise ShapeError(f"shape mismatch: {upstream.shape} vs {latent.shape}")
    return np.where(np.abs(latent) <= clip, upstream, np.zeros_like(upstream))


def pack_signs(signs) -> np.ndarray:
    """Bit-pack a ±1 matrix row by row, little bit order, +1 -> 1, -1 -> 0.

    Each row is padded to a whole number of bytes.
    """
    signs = np.atleast_2d(np.asarray(signs))
    return np.packbits(signs > 0, axis=1, bitorder="little")


def unpack_signs(packed, shape) -> np.ndarray:
    rows, cols = shape
    bits = np.unpackbits(np.asarray(packed, dtype=np.uint8), axis=1, count=cols, bitorder="little")
    if bits.shape != (rows, cols):
        raise ShapeError(f"packed signs do not match shape {shape}")
    return np.where(bits == 1, 1, -1).astype(np.int8)


@dataclass(frozen=True)
class FoldedThresholds:
    per_step: np.ndarray
    mode: str

    @property
    def t_steps(self) -> int:
        return len(self.per_step)


def fold_thresholds(m: LowerTriangular, v_th: float, alpha: float, mode: str) -> FoldedThresholds:
    """Absorb the inverse mixing matrix and the weight scale into one threshold
    per timestep.

    ``folded-diagonal`` uses the diagonal of the inverse, ``folded-rowsum``
    the sum of each of its rows. Neither is exact for a non-diagonal mixing
    matrix; the streaming engine is the exact serial form.
    """
    if mode not in ("folded-diagonal", "folded-rowsum"):
        raise ValueError(f"cannot fold thresholds in mode {mode!r}")
    if not alpha > 0:
        raise InvalidScaleError(f"alpha must be positive, got {alpha}")
    inv = tri_invert(m).dense().astype(np.float64)
    if mode == "folded-diagonal":
        coeff = np.diag(inv)
    else:
        coeff = inv.sum(axis=1)
    return FoldedThresholds(per_step=v_th * coeff / float(alpha), mode=mode)
