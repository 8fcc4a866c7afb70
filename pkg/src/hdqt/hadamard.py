"""Sylvester Hadamard matrices and the block-diagonal fast Walsh-Hadamard transform."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, validate_data

from .numerics import ParameterError, ShapeError, as_matrix

MAX_SYLVESTER_ORDER = 12


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def sylvester(k: int) -> np.ndarray:
    """The ``2**k x 2**k`` Sylvester Hadamard matrix as int64."""
    if not 0 <= k <= MAX_SYLVESTER_ORDER:
        raise ParameterError(f"k must be in [0, {MAX_SYLVESTER_ORDER}], got {k}")
    h = np.ones((1, 1), dtype=np.int64)
    for _ in range(k):
        h = np.block([[h, h], [h, -h]])
    return h


def _fwht_last_axis(a: np.ndarray, counter: list | None = None) -> np.ndarray:
    n = a.shape[-1]
    if not _is_pow2(n):
        raise ShapeError(f"FWHT length must be a power of two, got {n}")
    lead = a.shape[:-1]
    out = np.array(a, copy=True)
    h = 1
    while h < n:
        v = out.reshape(*lead, n // (2 * h), 2, h)
        top = v[..., 0, :].copy()
        bot = v[..., 1, :]
        v[..., 0, :] = top + bot
        v[..., 1, :] = top - bot
        if counter is not None:
            counter[0] += 2 * top.size
        h *= 2
    return out


def fwht_inplace(v, counter: list | None = None) -> np.ndarray:
    """Apply ``H_k`` to a length-``2**k`` vector with butterfly passes.

    The input array is overwritten when it is a writable ndarray and the result
    is returned in either case. No ``1/sqrt(n)`` normalization is applied.
    ``counter``, a one-element list, is incremented by the number of
    additions and subtractions performed.
    """
    arr = np.asarray(v)
    if arr.ndim != 1:
        raise ShapeError(f"expected a vector, got shape {arr.shape}")
    result = _fwht_last_axis(arr, counter)
    if isinstance(v, np.ndarray) and v.flags.writeable and v.dtype == result.dtype:
        v[...] = result
        return v
    return result


@dataclass(frozen=True)
class BlockPlan:
    dim: int
    blocks: tuple[int, ...]

    @property
    def block(self) -> int:
        return self.blocks[0]

    @property
    def block_count(self) -> int:
        return len(self.blocks)

    def offsets(self):
        start = 0
        for size in self.blocks:
            yield start, size
            start += size


def plan_blocks(dim: int, max_block: int = 1024) -> BlockPlan:
    """Cover ``dim`` with power-of-two blocks, largest first (greedy binary decomposition)."""
    if dim < 1:
        raise ParameterError(f"dim must be >= 1, got {dim}")
    if not _is_pow2(max_block):
        raise ParameterError(f"max_block must be a power of two, got {max_block}")
    blocks = []
    remaining = dim
    while remaining:
        size = min(1 << (remaining.bit_length() - 1), max_block)
        blocks.append(size)
        remaining -= size
    return BlockPlan(dim=dim, blocks=tuple(blocks))


def apply_block_hadamard(x, plan: BlockPlan, axis="cols", normalize="inv_sqrt_n") -> np.ndarray:
    """Transform ``x`` with ``BlockDiag(H, ...)`` along one axis.

    ``axis="cols"`` transforms every row (computes ``x @ H``); ``axis="rows"``
    transforms every column (computes ``H @ x``). With ``normalize="inv_sqrt_n"``
    each block is orthonormal.
    """
    x = as_matrix(x, "x")
    if axis not in ("rows", "cols"):
        raise ParameterError(f"axis must be 'rows' or 'cols', got {axis!r}")
    if normalize not in ("none", "inv_sqrt_n"):
        raise ParameterError(f"normalize must be 'none' or 'inv_sqrt_n', got {normalize!r}")
    work = x if axis == "cols" else x.T
    if work.shape[1] != plan.dim:
        raise ShapeError(f"axis length {work.shape[1]} does not match plan dim {plan.dim}")
    out = np.empty_like(work)
    for start, size in plan.offsets():
        block = _fwht_last_axis(work[:, start:start + size])
        if normalize == "inv_sqrt_n" and size > 1:
            block *= 1.0 / np.sqrt(size)
        out[:, start:start + size] = block
    return out if axis == "cols" else np.ascontiguousarray(out.T)


class HadamardTransformer(TransformerMixin, BaseEstimator):
    """Orthonormal block Hadamard rotation of the feature axis.

    Parameters
    ----------
    max_block : int, default=1024
        Largest block order used by the greedy plan.
    normalize : {"inv_sqrt_n", "none"}, default="inv_sqrt_n"

    Attributes
    ----------
    plan_ : BlockPlan
    """

    def __init__(self, max_block=1024, normalize="inv_sqrt_n"):
        self.max_block = max_block
        self.normalize = normalize

    def fit(self, X, y=None):
        X = validate_data(self, X)
        self.plan_ = plan_blocks(X.shape[1], self.max_block)
        return self

    def transform(self, X):
        check_is_fitted(self, "plan_")
        X = validate_data(self, X, reset=False)
        return apply_block_hadamard(X, self.plan_, "cols", self.normalize)

    def inverse_transform(self, X):
        check_is_fitted(self, "plan_")
        X = check_array(X)
        out = apply_block_hadamard(X, self.plan_, "cols", self.normalize)
        if self.normalize == "none":
            sizes = np.concatenate([np.full(s, s, dtype=np.float64) for s in self.plan_.blocks])
            out = out / sizes
        return out
