"""Grid-search initialization of clip logits and quantizer parameters.

The search minimizes, per group, the calibration output error

    || (dequant(quant(clip(w))) - clip(w)) @ x_group.T ||^2

over an exhaustive 2-D grid of clip ratios for the group's min and max
sides. Partial products are per group (the norm factorizes under group-wise
quantization), so each group's search is independent and embarrassingly
parallel. Ties are broken toward the larger retained range, i.e. less
clipping. The winning ratios come back as logits, clamped to the training
limit so downstream sigmoid math never saturates to exactly 0 or 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import GroupLayout
from .errors import ConfigError
from .ldp import LOGIT_LIMIT, LdpParams, logit, uniform_split_logits
from .uniform import asym_quant_dequant

__all__ = [
    "ClipSearchConfig",
    "ClipSearchResult",
    "grid_search_clip",
    "ldp_init",
    "clipped_uniform_quantizer",
]


@dataclass(frozen=True)
class ClipSearchConfig:
    grid: int = 64
    ratio_min: float = 0.5
    ratio_max: float = 1.0
    bits: int = 2

    def __post_init__(self):
        if self.grid < 2:
            raise ConfigError("need at least 2 grid points per axis")
        if not 0.0 < self.ratio_min < self.ratio_max <= 1.0:
            raise ConfigError("ratio interval must satisfy 0 < min < max <= 1")


@dataclass
class ClipSearchResult:
    """Per-group winners of the clip search; arrays are (H, N)."""

    lo_logit: np.ndarray
    hi_logit: np.ndarray
    ratio_lo: np.ndarray
    ratio_hi: np.ndarray
    objective: np.ndarray
    no_clip_objective: np.ndarray
    degenerate_groups: list = field(default_factory=list)


def _candidate_ratios(cfg: ClipSearchConfig) -> tuple[np.ndarray, np.ndarray]:
    axis = np.linspace(cfg.ratio_min, cfg.ratio_max, cfg.grid)
    rl, rh = np.meshgrid(axis, axis, indexing="ij")
    return rl.ravel(), rh.ravel()


def grid_search_clip(
    w_r: np.ndarray,
    x_r: np.ndarray,
    layout: GroupLayout,
    cfg: ClipSearchConfig = ClipSearchConfig(),
) -> ClipSearchResult:
    """Exhaustive per-group search for the best clip ratio pair.

    ``w_r`` is the (H, C) weight and ``x_r`` the (T, C) calibration
    activations, both already rotated if rotation is in play. Constant
    groups cannot be searched; they get a near-1.0 ratio pair and are
    recorded in ``degenerate_groups``.
    """
    w = np.asarray(w_r, dtype=np.float64)
    x = np.asarray(x_r, dtype=np.float64)
    layout.check(w)
    if x.ndim != 2 or x.shape[1] != layout.in_channels:
        raise ConfigError(f"calibration activations {x.shape} do not match layout")

    rl, rh = _candidate_ratios(cfg)
    groups = layout.grouped(w)
    h_dim, n_dim, g_dim = groups.shape

    # Gram matrices depend only on the column block, shared by all rows.
    grams = np.empty((n_dim, g_dim, g_dim))
    for n in range(n_dim):
        xg = x[:, n * g_dim : (n + 1) * g_dim]
        grams[n] = xg.T @ xg

    out = ClipSearchResult(
        lo_logit=np.zeros((h_dim, n_dim)),
        hi_logit=np.zeros((h_dim, n_dim)),
        ratio_lo=np.ones((h_dim, n_dim)),
        ratio_hi=np.ones((h_dim, n_dim)),
        objective=np.zeros((h_dim, n_dim)),
        no_clip_objective=np.zeros((h_dim, n_dim)),
    )
    no_clip_idx = int(np.flatnonzero((rl == 1.0) & (rh == 1.0))[-1]) if cfg.ratio_max == 1.0 else -1

    for h in range(h_dim):
        for n in range(n_dim):
            g = groups[h, n]
            mn, mx = g.min(), g.max()
            if mn == mx:
                out.degenerate_groups.append((h, n))
                continue
            lo_c = rl * mn
            hi_c = rh * mx
            clipped = np.clip(g[None, :], lo_c[:, None], hi_c[:, None])
            _, deq, _, _, span = asym_quant_dequant(clipped, None, None, cfg.bits)
            err = deq - clipped
            obj = np.einsum("pg,gk,pk->p", err, grams[n], err)
            obj[span == 0.0] = np.inf  # fully collapsed candidates are invalid
            best_obj = obj.min()
            tied = np.flatnonzero(obj == best_obj)
            widths = hi_c[tied] - lo_c[tied]
            tied = tied[widths == widths.max()]
            # Residual ties (e.g. min == 0 makes the low side irrelevant)
            # resolve toward the least clipping on both axes.
            pick = tied[int(np.argmax(rl[tied] + rh[tied]))]
            out.ratio_lo[h, n] = rl[pick]
            out.ratio_hi[h, n] = rh[pick]
            out.objective[h, n] = best_obj
            if no_clip_idx >= 0:
                out.no_clip_objective[h, n] = obj[no_clip_idx]

    # Ratio 1.0 (no clipping, also the degenerate-group fallback) maps to the
    # near-saturated logit of 1 - 1e-6 so downstream math stays finite.
    eps = 1e-6
    out.lo_logit = np.clip(logit(np.minimum(out.ratio_lo, 1.0 - eps)), -LOGIT_LIMIT, LOGIT_LIMIT)
    out.hi_logit = np.clip(logit(np.minimum(out.ratio_hi, 1.0 - eps)), -LOGIT_LIMIT, LOGIT_LIMIT)
    return out


def clipped_uniform_quantizer(cfg: ClipSearchConfig = ClipSearchConfig()):
    """Quantizer handle: clip search followed by uniform quantize-dequantize.

    Returns a callable ``(w, x, layout) -> (w_hat, w_target)`` suitable for
    the error-vs-kurtosis analysis: ``w_target`` is the clipped weight the
    output error is measured against.
    """

    def quantize(w: np.ndarray, x: np.ndarray, layout: GroupLayout):
        search = grid_search_clip(w, x, layout, cfg)
        groups = layout.grouped(np.asarray(w, dtype=np.float64))
        mn = groups.min(axis=-1)
        mx = groups.max(axis=-1)
        lo = search.ratio_lo * mn
        hi = search.ratio_hi * mx
        clipped = np.clip(groups, lo[..., None], hi[..., None])
        _, deq, _, _, _ = asym_quant_dequant(groups, lo, hi, cfg.bits)
        return deq.reshape(w.shape), clipped.reshape(w.shape)

    return quantize


def ldp_init(clip: ClipSearchResult) -> LdpParams:
    """Quantizer parameters at the start of training: searched clip logits
    plus split logits that partition the range into exact thirds."""
    if not (np.isfinite(clip.lo_logit).all() and np.isfinite(clip.hi_logit).all()):
        raise ConfigError("clip logits must be finite")
    s1, s2 = uniform_split_logits()
    shape = np.asarray(clip.lo_logit).shape
    return LdpParams(
        lo_logit=np.asarray(clip.lo_logit, dtype=np.float64).copy(),
        hi_logit=np.asarray(clip.hi_logit, dtype=np.float64).copy(),
        split1=np.full(shape, s1),
        split2=np.full(shape, s2),
    )
