"""Integer GEMMs for simulated low-precision training.

Forward products are tiled along the contraction axis so every narrow
accumulator only sums ``tile_size`` products; tiles are merged at working
precision. The two backward products run in the Hadamard domain of their
contraction axis, untiled, with stochastic rounding on gradients and on the
saved activations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .hadamard import apply_block_hadamard, plan_blocks
from .numerics import ShapeError, as_matrix
from .quantizer import (
    QuantConfig,
    QuantTensor,
    calibrate_scale,
    count_saturated,
    max_code,
    quantize_nearest,
    quantize_stochastic,
)

# histograms wider than this are not tracked (2**32 bins is not a histogram)
MAX_HIST_BITS = 16


def bin_occupancy(q: QuantTensor) -> np.ndarray:
    """Count of elements per code, index ``i`` holding code ``i - (2**(b-1) - 1)``."""
    top = max_code(q.bits)
    return np.bincount((q.codes + top).ravel(), minlength=2 * top + 1)


@dataclass
class GemmStats:
    saturation_count_inputs: int = 0
    saturation_count_accum: int = 0
    bins_used: dict = field(default_factory=dict)

    def add_bins(self, role, hist):
        if role in self.bins_used and len(self.bins_used[role]) == len(hist):
            self.bins_used[role] = self.bins_used[role] + hist
        else:
            self.bins_used[role] = np.asarray(hist, dtype=np.int64).copy()

    def merge(self, other: "GemmStats") -> "GemmStats":
        self.saturation_count_inputs += other.saturation_count_inputs
        self.saturation_count_accum += other.saturation_count_accum
        for role, hist in other.bins_used.items():
            self.add_bins(role, hist)
        return self

    def occupied_bins(self) -> dict:
        return {role: int(np.count_nonzero(h)) for role, h in self.bins_used.items()}

    def to_dict(self):
        return {
            "saturation_count_inputs": int(self.saturation_count_inputs),
            "saturation_count_accum": int(self.saturation_count_accum),
            "bins_used": {k: [int(c) for c in v] for k, v in sorted(self.bins_used.items())},
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            saturation_count_inputs=int(d["saturation_count_inputs"]),
            saturation_count_accum=int(d["saturation_count_accum"]),
            bins_used={k: np.asarray(v, dtype=np.int64) for k, v in d["bins_used"].items()},
        )


# contraction steps between exact checkpoints when screening for overflow
_CHECKPOINT = 8
# cap on elements materialized at once when replaying flagged accumulators
_REPLAY_BUDGET = 1 << 22


def _replay(a_rows, b_cols, limit):
    """Exact sequential clamped accumulation for independent (row, col) pairs.

    ``a_rows`` and ``b_cols`` are ``(m, k)``: entry ``i`` accumulates
    ``a_rows[i, j] * b_cols[i, j]`` over ``j``.
    """
    prods = a_rows * b_cols
    partial = np.cumsum(prods, axis=1)
    hit = np.any(np.abs(partial) > limit, axis=1)
    acc = partial[:, -1].copy()
    if hit.any():
        sub = prods[hit]
        run = np.zeros(sub.shape[0], dtype=np.int64)
        for j in range(sub.shape[1]):
            run += sub[:, j]
            np.clip(run, -limit, limit, out=run)
        acc[hit] = run
    return acc, hit


def _saturating_tile(a, b, limit):
    """Clamped accumulation of one tile; returns (acc, saturated mask).

    Accumulators are first screened with exact checkpoint sums plus a
    worst-case bound for the steps in between; only entries that might
    overflow are replayed step by step.
    """
    af = a.astype(np.float64)
    bf = b.astype(np.float64)
    depth = a.shape[1]
    exact = np.zeros((a.shape[0], b.shape[1]))
    flagged = np.zeros(exact.shape, dtype=bool)
    for s in range(0, depth, _CHECKPOINT):
        e = min(s + _CHECKPOINT, depth)
        bound = np.abs(exact) + np.abs(af[:, s:e]) @ np.abs(bf[s:e, :])
        flagged |= bound > limit
        exact += af[:, s:e] @ bf[s:e, :]
    acc = np.rint(exact).astype(np.int64)
    hit = np.zeros(acc.shape, dtype=bool)
    rows, cols = np.nonzero(flagged)
    step = max(1, _REPLAY_BUDGET // max(depth, 1))
    for i in range(0, rows.size, step):
        r, c = rows[i:i + step], cols[i:i + step]
        vals, h = _replay(a[r, :], b[:, c].T, limit)
        acc[r, c] = vals
        hit[r, c] = h
    return acc, hit


def saturating_gemm(a_codes, b_codes, accum_bits, tile_size, stats=None, role=None):
    """Integer product with one saturating accumulator per (output, tile).

    Returns the sum over tiles of the clamped tile accumulators as int64.
    Exact partial sums are carried in float64, which is exact for integers
    below 2**53; codes of at most 16 bits over at most 2**20 products stay
    far inside that.
    """
    a_codes = np.asarray(a_codes, dtype=np.int64)
    b_codes = np.asarray(b_codes, dtype=np.int64)
    if a_codes.shape[1] != b_codes.shape[0]:
        raise ShapeError(f"cannot multiply {a_codes.shape} by {b_codes.shape}")
    limit = max_code(accum_bits)
    depth = a_codes.shape[1]
    step = max(1, min(tile_size, depth))
    total = np.zeros((a_codes.shape[0], b_codes.shape[1]), dtype=np.int64)
    saturated = 0
    track = stats is not None and role is not None and accum_bits <= MAX_HIST_BITS
    hist = np.zeros(2 * limit + 1, dtype=np.int64) if track else None
    for start in range(0, depth, step):
        stop = min(start + step, depth)
        acc, hit = _saturating_tile(a_codes[:, start:stop], b_codes[start:stop, :], limit)
        saturated += int(np.count_nonzero(hit))
        total += acc
        if track:
            hist += np.bincount((acc + limit).ravel(), minlength=2 * limit + 1)
    if stats is not None:
        stats.saturation_count_accum += saturated
        if track:
            stats.add_bins(role, hist)
    return total


def _record_operand(stats, role, x, q, alpha):
    if stats is None:
        return
    stats.saturation_count_inputs += count_saturated(x, q.bits, alpha)
    stats.add_bins(role, bin_occupancy(q))


def qgemm_forward(x, w, cfg: QuantConfig, stats: GemmStats | None = None):
    """Tiled quantized ``x @ w``; returns ``(output, stats)``."""
    x = as_matrix(x, "x")
    w = as_matrix(w, "w")
    if x.shape[1] != w.shape[0]:
        raise ShapeError(f"cannot multiply {x.shape} by {w.shape}")
    stats = GemmStats() if stats is None else stats
    b = cfg.input_bits
    ax = calibrate_scale(x, cfg.fwd_outlier_scale)
    aw = calibrate_scale(w, cfg.fwd_outlier_scale)
    qx = quantize_nearest(x, b, ax)
    qw = quantize_nearest(w, b, aw)
    _record_operand(stats, "fwd_x", x, qx, ax)
    _record_operand(stats, "fwd_w", w, qw, aw)
    acc = saturating_gemm(qx.codes, qw.codes, cfg.accum_bits, cfg.tile_size, stats, "fwd_accum")
    return acc * (qx.scale * qw.scale), stats


def _to_hadamard(m, axis, cfg):
    length = m.shape[1] if axis == "cols" else m.shape[0]
    if not cfg.backward_hadamard:
        return m
    return apply_block_hadamard(m, plan_blocks(length, cfg.hadamard_max_block), axis, "inv_sqrt_n")


def qgemm_backward_input(g, w, cfg: QuantConfig, rng, stats: GemmStats | None = None):
    """Quantized ``g @ w.T`` computed in the Hadamard domain of the output axis."""
    g = as_matrix(g, "g")
    w = as_matrix(w, "w")
    if g.shape[1] != w.shape[1]:
        raise ShapeError(f"gradient width {g.shape[1]} does not match weight outputs {w.shape[1]}")
    b = cfg.input_bits
    gh = _to_hadamard(g, "cols", cfg)
    wh = _to_hadamard(np.ascontiguousarray(w.T), "rows", cfg)
    ag = calibrate_scale(gh)
    aw = calibrate_scale(wh)
    qg = quantize_stochastic(gh, b, ag, rng.split("grad_out"))
    qw = quantize_nearest(wh, b, aw)
    _record_operand(stats, "bwd_in_grad", gh, qg, ag)
    _record_operand(stats, "bwd_in_w", wh, qw, aw)
    acc = saturating_gemm(qg.codes, qw.codes, cfg.accum_bits, g.shape[1], stats, "bwd_in_accum")
    return acc * (qg.scale * qw.scale)


def qgemm_backward_weight(x, g, cfg: QuantConfig, rng, stats: GemmStats | None = None):
    """Quantized ``x.T @ g`` computed in the Hadamard domain of the batch axis."""
    x = as_matrix(x, "x")
    g = as_matrix(g, "g")
    if x.shape[0] != g.shape[0]:
        raise ShapeError(f"batch sizes differ: {x.shape[0]} vs {g.shape[0]}")
    b = cfg.input_bits
    xh = _to_hadamard(np.ascontiguousarray(x.T), "cols", cfg)
    gh = _to_hadamard(g, "rows", cfg)
    ax = calibrate_scale(xh)
    ag = calibrate_scale(gh)
    qx = quantize_stochastic(xh, b, ax, rng.split("act"))
    qg = quantize_stochastic(gh, b, ag, rng.split("grad_out"))
    _record_operand(stats, "bwd_w_act", xh, qx, ax)
    _record_operand(stats, "bwd_w_grad", gh, qg, ag)
    acc = saturating_gemm(qx.codes, qg.codes, cfg.accum_bits, x.shape[0], stats, "bwd_w_accum")
    return acc * (qx.scale * qg.scale)
