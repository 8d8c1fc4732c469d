"""LUT-decoding W2A4 matrix-vector product.

Three evaluators of the same task, in increasing speed and decreasing
transparency:

* ``dense_oracle`` fully decodes weights and activations and multiplies in
  float64 - the brute-force ground truth.
* ``gemv_ref`` walks input channels in ascending order with one float32
  accumulator per output row - the scalar reference semantics.
* ``gemv_fast`` processes output rows in tiles split into two chunks,
  buffering the second chunk's packed bytes before the first is computed
  (the CPU stand-in for overlapping loads with compute), decodes by
  bucketing activations per 2-bit code so each group costs four
  multiply-adds instead of a gather per element, and reduces per-group
  partials with a fixed binary tree. Outputs are bit-identical across runs
  and across tile sizes because every row is computed from row-local data
  in a fixed order.

Integer accumulation is impossible for non-uniform level grids (there is no
shared scale to factor out), so everything accumulates in floating point:
float32 on the compute paths, float64 in the oracle.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .core import GroupLayout
from .errors import ConfigError, ShapeError
from .pack import (
    DequantLut,
    PackedActivations,
    PackedWeights,
    pack_activation_codes,
    unpack_activation_codes,
    unpack_weight_codes,
)

__all__ = ["GemvTask", "gemv_ref", "gemv_fast", "dense_oracle", "bench_gemv", "random_activation"]


@dataclass
class GemvTask:
    x_packed: PackedActivations
    scale: float
    weights: PackedWeights
    lut: DequantLut
    layout: GroupLayout

    def __post_init__(self):
        lay = self.layout
        if self.x_packed.data.shape != (lay.in_channels // 2,):
            raise ShapeError("packed activations do not match layout")
        if self.weights.data.shape != (lay.out_channels, lay.in_channels // 4):
            raise ShapeError("packed weights do not match layout")
        if self.lut.table.shape != (lay.out_channels, lay.num_groups, 4):
            raise ShapeError("LUT does not match layout")


def _decoded_activations(task: GemvTask) -> np.ndarray:
    codes = unpack_activation_codes(task.x_packed)
    return np.float32(task.scale) * codes.astype(np.float32)


def gemv_ref(task: GemvTask) -> np.ndarray:
    """Scalar-order reference: ascending-channel float32 accumulation."""
    lay = task.layout
    xv = _decoded_activations(task)
    wcodes = unpack_weight_codes(task.weights)
    lut32 = task.lut.table.astype(np.float32)
    rows = np.arange(lay.out_channels)
    acc = np.zeros(lay.out_channels, dtype=np.float32)
    for c in range(lay.in_channels):
        vals = lut32[rows, c // lay.group_size, wcodes[:, c]]
        acc += xv[c] * vals
    return acc


def _tree_sum(a: np.ndarray) -> np.ndarray:
    """Fixed binary-tree reduction along the last axis (zero-padded to 2^k)."""
    width = a.shape[-1]
    target = 1
    while target < width:
        target *= 2
    if target != width:
        pad = np.zeros(a.shape[:-1] + (target - width,), dtype=a.dtype)
        a = np.concatenate([a, pad], axis=-1)
    while a.shape[-1] > 1:
        half = a.shape[-1] // 2
        a = a[..., :half] + a[..., half:]
    return a[..., 0]


def _half_tile(
    packed_rows: np.ndarray, lut_rows: np.ndarray, xv: np.ndarray, layout: GroupLayout
) -> np.ndarray:
    """Decode-and-accumulate one chunk of output rows; float32 throughout."""
    codes = unpack_weight_codes(PackedWeights(packed_rows, layout))
    rows = codes.shape[0]
    partial = np.zeros((rows, layout.num_groups), dtype=np.float32)
    masked = np.empty((rows, layout.in_channels), dtype=np.float32)
    for k in range(4):
        np.multiply(codes == k, xv, out=masked)
        bucket = masked.reshape(rows, layout.num_groups, layout.group_size).sum(axis=-1)
        partial += lut_rows[:, :, k] * bucket
    return _tree_sum(partial)


def gemv_fast(task: GemvTask, tile: int = 8) -> np.ndarray:
    """Blocked fast path; equals ``gemv_ref`` within 1e-5 relative.

    ``tile`` rows are handled per step, split into two chunks: the second
    chunk's packed bytes are staged into a local buffer before the first
    chunk is decoded and accumulated, then the buffered chunk is computed.
    """
    if tile < 2 or (tile & (tile - 1)) != 0:
        raise ConfigError(f"tile must be a power of two >= 2, got {tile}")
    lay = task.layout
    xv = _decoded_activations(task)
    lut32 = task.lut.table.astype(np.float32)
    out = np.empty(lay.out_channels, dtype=np.float32)
    half = tile // 2
    for start in range(0, lay.out_channels, tile):
        stop = min(start + tile, lay.out_channels)
        mid = min(start + half, stop)
        # Stage the second chunk before computing the first.
        staged = task.weights.data[mid:stop].copy()
        out[start:mid] = _half_tile(task.weights.data[start:mid], lut32[start:mid], xv, lay)
        if mid < stop:
            out[mid:stop] = _half_tile(staged, lut32[mid:stop], xv, lay)
    return out


def dense_oracle(task: GemvTask) -> np.ndarray:
    """Brute force: decode everything, multiply in float64."""
    lay = task.layout
    xcodes = unpack_activation_codes(task.x_packed).astype(np.float64)
    x64 = float(task.scale) * xcodes
    wcodes = unpack_weight_codes(task.weights).astype(np.int64)
    lut_flat = task.lut.table.astype(np.float64).reshape(lay.out_channels, -1)
    group_of = np.repeat(np.arange(lay.num_groups), lay.group_size)
    idx = group_of[None, :] * 4 + wcodes
    w_full = np.take_along_axis(lut_flat, idx, axis=1)
    return w_full @ x64


def random_activation(
    rng: np.random.Generator, channels: int
) -> tuple[PackedActivations, float]:
    """Random packed 4-bit activation vector with a positive scale."""
    codes = rng.integers(-8, 8, size=channels).astype(np.int8)
    scale = float(np.exp(rng.uniform(-1.0, 1.0)))
    return pack_activation_codes(codes), scale


def bench_gemv(task: GemvTask, iters: int = 100, tile: int = 8) -> dict:
    """Wall-clock comparison of the reference and fast paths.

    The reference path is measured with at most 25 iterations (it exists
    for semantics, not speed); both medians are reported in ns/call.
    """
    ref_iters = max(1, min(iters, 25))

    def _time(fn, n):
        fn()  # warm-up
        samples = []
        for _ in range(n):
            t0 = time.perf_counter_ns()
            fn()
            samples.append(time.perf_counter_ns() - t0)
        return float(np.median(samples))

    ref_ns = _time(lambda: gemv_ref(task), ref_iters)
    fast_ns = _time(lambda: gemv_fast(task, tile), iters)
    return {
        "out_channels": task.layout.out_channels,
        "in_channels": task.layout.in_channels,
        "group_size": task.layout.group_size,
        "tile": tile,
        "ref_iters": ref_iters,
        "fast_iters": iters,
        "ref_ns_per_call": ref_ns,
        "fast_ns_per_call": fast_ns,
        "speedup": ref_ns / fast_ns,
    }
