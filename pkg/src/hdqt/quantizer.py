"""Max-calibrated symmetric integer quantization with nearest or stochastic rounding."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .numerics import ParameterError, as_matrix


@dataclass(frozen=True)
class QuantConfig:
    """Precision knobs for one training run.

    Parameters
    ----------
    input_bits : int
        Width ``b`` of every GEMM operand, 2 to 16.
    accum_bits : int
        Width of the signed saturating accumulator, 4 to 32.
    tile_size : int
        Number of products summed per accumulator in the forward GEMM.
    fwd_outlier_scale : float
        Fraction of ``max|x|`` mapped to the top code for forward operands.
        Values above it saturate.
    rounding_fwd, rounding_bwd_sensitive : str
        Fixed to ``"nearest"`` and ``"stochastic"``; kept as fields so a
        record of the run states them explicitly.
    hadamard_max_block : int
        Largest Hadamard block order used for backward operands.
    backward_hadamard : bool
        Rotate backward operands into the Hadamard domain. Off only for ablations.
    """

    input_bits: int = 4
    accum_bits: int = 8
    tile_size: int = 32
    fwd_outlier_scale: float = 0.975
    rounding_fwd: str = "nearest"
    rounding_bwd_sensitive: str = "stochastic"
    hadamard_max_block: int = 1024
    backward_hadamard: bool = True

    def __post_init__(self):
        if not 2 <= self.input_bits <= 16:
            raise ParameterError(f"input_bits must be in [2, 16], got {self.input_bits}")
        if not 4 <= self.accum_bits <= 32:
            raise ParameterError(f"accum_bits must be in [4, 32], got {self.accum_bits}")
        if self.accum_bits < self.input_bits:
            raise ParameterError(
                f"accum_bits ({self.accum_bits}) must be >= input_bits ({self.input_bits})"
            )
        if self.tile_size < 1:
            raise ParameterError(f"tile_size must be >= 1, got {self.tile_size}")
        if not 0 < self.fwd_outlier_scale <= 1:
            raise ParameterError(f"fwd_outlier_scale must be in (0, 1], got {self.fwd_outlier_scale}")
        if self.rounding_fwd != "nearest":
            raise ParameterError("forward rounding is fixed to 'nearest'")
        if self.rounding_bwd_sensitive != "stochastic":
            raise ParameterError("backward sensitive-tensor rounding is fixed to 'stochastic'")
        if self.hadamard_max_block < 1 or self.hadamard_max_block & (self.hadamard_max_block - 1):
            raise ParameterError("hadamard_max_block must be a power of two")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def max_code(bits: int) -> int:
    return (1 << (bits - 1)) - 1


@dataclass
class QuantTensor:
    codes: np.ndarray
    bits: int
    scale: float

    @property
    def shape(self):
        return self.codes.shape


def calibrate_scale(x, outlier_scale=1.0) -> float:
    """Return ``alpha`` such that ``outlier_scale * max|x|`` maps to 1.

    An all-zero tensor gets ``alpha = 1``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ParameterError("cannot calibrate an empty tensor")
    peak = float(np.max(np.abs(x)))
    if peak == 0.0:
        return 1.0
    return 1.0 / (outlier_scale * peak)


def _prescale(x, bits, alpha):
    if bits < 2:
        raise ParameterError(f"bits must be >= 2, got {bits}")
    if not (alpha > 0 and np.isfinite(alpha)):
        raise ParameterError(f"alpha must be positive and finite, got {alpha}")
    x = as_matrix(x, "x")
    return np.clip(alpha * x, -1.0, 1.0) * float(1 << (bits - 1))


def _package(codes, bits, alpha):
    top = max_code(bits)
    codes = np.clip(codes, -top, top).astype(np.int64)
    return QuantTensor(codes=codes, bits=bits, scale=2.0 ** -(bits - 1) / alpha)


def quantize_nearest(x, bits, alpha) -> QuantTensor:
    """Round-half-away-from-zero onto the symmetric code range ``±(2**(b-1) - 1)``."""
    v = _prescale(x, bits, alpha)
    codes = np.sign(v) * np.floor(np.abs(v) + 0.5)
    return _package(codes, bits, alpha)


def quantize_stochastic(x, bits, alpha, rng) -> QuantTensor:
    """Unbiased stochastic rounding; ``rng`` is consumed for one draw per element."""
    v = _prescale(x, bits, alpha)
    lower = np.floor(v)
    frac = v - lower
    codes = lower + (rng.random(v.shape) < frac)
    return _package(codes, bits, alpha)


def dequantize(q: QuantTensor) -> np.ndarray:
    return q.codes.astype(np.float64) * q.scale


def count_saturated(x, bits, alpha) -> int:
    """Number of elements that clip or clamp instead of landing on an interior code."""
    v = np.abs(alpha * np.asarray(x, dtype=np.float64)) * float(1 << (bits - 1))
    return int(np.count_nonzero(v >= max_code(bits) + 0.5))
