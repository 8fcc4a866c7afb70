"""Dense matrix helpers and a splittable counter-based random stream.

Matrices are plain ``float64`` numpy arrays of rank 2. Every public routine
in the package accepts array-likes and funnels them through :func:`as_matrix`.
"""

from __future__ import annotations

import hashlib

import numpy as np

WORKING_DTYPE = np.float64


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class ParameterError(ValueError):
    """A scalar parameter is outside its valid range."""


def as_matrix(a, name="matrix"):
    """Return ``a`` as a finite 2-D working-precision array."""
    arr = np.asarray(a, dtype=WORKING_DTYPE)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf")
    return arr


def matmul_ref(a, b):
    """Exact working-precision product, the reference every quantized GEMM is checked against."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def transpose(a):
    return np.ascontiguousarray(as_matrix(a).T)


def _derive_key(seed: int, path: tuple[str, ...]) -> int:
    h = hashlib.blake2b(digest_size=16)
    h.update(int(seed).to_bytes(8, "little", signed=False))
    for part in path:
        encoded = part.encode("utf-8")
        h.update(len(encoded).to_bytes(4, "little"))
        h.update(encoded)
    return int.from_bytes(h.digest(), "little")


class Rng:
    """Seeded Philox stream that can be split into independent children.

    A child is identified by the chain of labels used to reach it, so
    ``Rng(7).split("layer0").split("grad")`` yields the same draws no matter
    how many other children were created or consumed before it.

    Parameters
    ----------
    seed : int
        64-bit seed. Negative values are reduced modulo 2**64.
    """

    def __init__(self, seed: int = 0, _path: tuple[str, ...] = ()):
        self.seed = int(seed) % (1 << 64)
        self.path = tuple(_path)
        key = _derive_key(self.seed, self.path)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def __repr__(self):
        return f"Rng(seed={self.seed}, path={'/'.join(self.path) or '<root>'})"

    def split(self, label) -> "Rng":
        return Rng(self.seed, self.path + (str(label),))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def uniform(self, lo=0.0, hi=1.0, size=None):
        if not lo < hi:
            raise ParameterError(f"uniform needs lo < hi, got [{lo}, {hi})")
        return self._gen.uniform(lo, hi, size)

    def gaussian(self, mean=0.0, std=1.0, size=None):
        if std < 0:
            raise ParameterError(f"std must be >= 0, got {std}")
        if std == 0:
            return mean if size is None else np.full(size, float(mean))
        return self._gen.normal(mean, std, size)

    def random(self, size=None):
        return self._gen.random(size)

    def permutation(self, n):
        return self._gen.permutation(n)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)
