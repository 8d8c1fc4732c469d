"""Toy quantization-aware distillation with exact bookkeeping.

A frozen full-precision teacher (two linear layers with a ReLU between,
classification head) distills into a student that shares its architecture
but fake-quantizes every weight group on each forward pass. The loss blends
both KL directions, weighted by the teacher's empirical confidence:

    loss = alpha * KL(P_student || P_teacher) + (1 - alpha) * KL(P_teacher || P_student)

with alpha measured once, before training, as the teacher's mean probability
on the reference labels. Gradients flow through the quantizer's step
functions with the straight-through estimator; the clip and partition logits
get their exact analytic derivatives. The optimizer is Adam (0.9/0.999,
eps 1e-8, no weight decay) with a ~10x higher learning rate on quantizer
logits than on weights. Everything runs in float64 with a counter-based RNG
keyed by (seed, stream), so a seed reproduces the loss trace bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ldp
from .calib import ClipSearchConfig, grid_search_clip, ldp_init
from .core import GroupLayout, make_rng
from .errors import ConfigError, DataError, TrainingFailureError
from .rotation import apply_online, fuse, randomized_hadamard
from .stats import groupwise_kurtosis

__all__ = [
    "ToyModelSpec",
    "DistillConfig",
    "TrainingReport",
    "cakld",
    "estimate_alpha",
    "train_toy",
    "grad_check",
    "invariance_check",
]

# RNG stream ids within a seed.
_STREAM_TEACHER = 0
_STREAM_CALIB = 1
_STREAM_EVAL = 2
_STREAM_GRADCHECK = 3
_STREAM_BATCH0 = 16


@dataclass(frozen=True)
class ToyModelSpec:
    in_dim: int = 64
    hidden: int = 64
    classes: int = 16
    group_size: int = 16
    head_gain: float = 4.0  # sharpens teacher logits so confidence is informative


@dataclass(frozen=True)
class DistillConfig:
    alpha: float | None = None  # None: measure on the teacher before training
    lr_weights: float = 1e-3
    lr_quant: float = 1e-2
    steps: int = 200
    batch: int = 32
    seed: int = 0
    freeze_partitions: bool = False
    calib_tokens: int = 256
    eval_tokens: int = 512
    clip_grid: int = 16


@dataclass
class TrainingReport:
    loss_trace: list[float]
    alpha: float
    initial_loss: float
    final_loss: float
    eval_loss: float
    max_loss_spike: float
    agreement: float
    levels: list[np.ndarray]
    config: dict = field(default_factory=dict)


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def cakld(p_teacher: np.ndarray, p_student: np.ndarray, alpha: float) -> float:
    """Confidence-blended KL between row-wise probability matrices.

    ``alpha`` weights the reverse direction KL(student || teacher); rows must
    already be normalized; entries are floored at 1e-12 before the logs.
    """
    pt = np.asarray(p_teacher, dtype=np.float64)
    ps = np.asarray(p_student, dtype=np.float64)
    if pt.shape != ps.shape or pt.ndim != 2:
        raise DataError("probability matrices must have identical 2-D shapes")
    for name, p in (("teacher", pt), ("student", ps)):
        if np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-6):
            raise DataError(f"{name} rows are not normalized")
    pt = np.maximum(pt, 1e-12)
    ps = np.maximum(ps, 1e-12)
    reverse = (ps * (np.log(ps) - np.log(pt))).sum(axis=1)
    forward = (pt * (np.log(pt) - np.log(ps))).sum(axis=1)
    return float(np.mean(alpha * reverse + (1.0 - alpha) * forward))


def estimate_alpha(probs: np.ndarray, labels: np.ndarray, mode: str = "label") -> float:
    """Teacher confidence: mean probability at the label (or of the top class)."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] == 0:
        raise ConfigError("need a non-empty (examples, classes) probability matrix")
    if mode == "label":
        labels = np.asarray(labels)
        return float(p[np.arange(p.shape[0]), labels].mean())
    if mode == "top1":
        return float(p.max(axis=1).mean())
    raise ConfigError(f"unknown confidence mode '{mode}'")


# ---------------------------------------------------------------------------
# Toy model plumbing


def _teacher_weights(spec: ToyModelSpec, seed: int) -> list[np.ndarray]:
    rng = make_rng(seed, _STREAM_TEACHER)
    w1 = rng.standard_normal((spec.hidden, spec.in_dim)) / np.sqrt(spec.in_dim)
    w2 = rng.standard_normal((spec.classes, spec.hidden)) / np.sqrt(spec.hidden)
    w2 *= spec.head_gain
    return [w1, w2]


def _layouts(spec: ToyModelSpec) -> list[GroupLayout]:
    return [
        GroupLayout(spec.hidden, spec.in_dim, spec.group_size),
        GroupLayout(spec.classes, spec.hidden, spec.group_size),
    ]


def _forward_full(weights: list[np.ndarray], x: np.ndarray) -> np.ndarray:
    h = np.maximum(x @ weights[0].T, 0.0)
    return h @ weights[1].T


def _quantize_weights(
    weights: list[np.ndarray], params: list[ldp.LdpParams], layouts: list[GroupLayout]
) -> list[np.ndarray]:
    out = []
    for w, p, lay in zip(weights, params, layouts):
        _, w_hat = ldp.fake_quant(lay.grouped(w), p)
        out.append(w_hat.reshape(w.shape))
    return out


def _init_student_params(
    weights: list[np.ndarray],
    layouts: list[GroupLayout],
    calib_x: np.ndarray,
    clip_grid: int,
) -> list[ldp.LdpParams]:
    """Clip search per layer on that layer's calibration inputs, then the
    uniform-thirds partition init."""
    cfg = ClipSearchConfig(grid=clip_grid)
    acts = calib_x
    params = []
    for w, lay in zip(weights, layouts):
        search = grid_search_clip(w, acts, lay, cfg)
        params.append(ldp_init(search))
        acts = np.maximum(acts @ w.T, 0.0)
    return params


class _Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t: dict[str, int] = {}

    def step(self, name: str, param: np.ndarray, grad: np.ndarray) -> None:
        if name not in self.m:
            self.m[name] = np.zeros_like(param)
            self.v[name] = np.zeros_like(param)
            self.t[name] = 0
        self.t[name] += 1
        t = self.t[name]
        self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * grad
        self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * grad * grad
        m_hat = self.m[name] / (1 - self.beta1**t)
        v_hat = self.v[name] / (1 - self.beta2**t)
        param -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class _State:
    spec: ToyModelSpec
    teacher: list[np.ndarray]
    student: list[np.ndarray]
    params: list[ldp.LdpParams]
    layouts: list[GroupLayout]
    alpha: float


def _build_state(spec: ToyModelSpec, cfg: DistillConfig) -> _State:
    teacher = _teacher_weights(spec, cfg.seed)
    layouts = _layouts(spec)
    calib_rng = make_rng(cfg.seed, _STREAM_CALIB)
    calib_x = calib_rng.standard_normal((cfg.calib_tokens, spec.in_dim))
    if cfg.alpha is None:
        logits = _forward_full(teacher, calib_x)
        probs = _softmax(logits)
        labels = np.array([calib_rng.choice(spec.classes, p=row) for row in probs])
        alpha = estimate_alpha(probs, labels, mode="label")
    else:
        alpha = float(cfg.alpha)
    student = [w.copy() for w in teacher]
    params = _init_student_params(student, layouts, calib_x, cfg.clip_grid)
    return _State(spec, teacher, student, params, layouts, alpha)


def _loss_and_grads(state: _State, x: np.ndarray, want_upstream: bool = False):
    """CAKLD loss plus gradients for weights and quantizer logits.

    Returns ``(loss, weight_grads, param_grads)`` where ``param_grads`` is a
    list of (d_lo, d_hi, d_split1, d_split2) per layer. ``weight_grads`` are
    the straight-through gradients for the raw weights; with
    ``want_upstream`` the unmasked gradients at the quantized weights are
    appended as a fourth element.
    """
    teacher_logits = _forward_full(state.teacher, x)
    wq = _quantize_weights(state.student, state.params, state.layouts)
    z1 = x @ wq[0].T
    h1 = np.maximum(z1, 0.0)
    z2 = h1 @ wq[1].T

    log_ps = _log_softmax(z2)
    log_pt = _log_softmax(teacher_logits)
    ps = np.exp(log_ps)
    pt = np.exp(log_pt)
    batch = x.shape[0]
    alpha = state.alpha

    u = log_ps - log_pt
    reverse = (ps * u).sum(axis=1)
    forward = (pt * -u).sum(axis=1)
    loss = float(np.mean(alpha * reverse + (1.0 - alpha) * forward))

    d_reverse = ps * (u - reverse[:, None])
    d_forward = ps - pt
    dz2 = (alpha * d_reverse + (1.0 - alpha) * d_forward) / batch

    dwq2 = dz2.T @ h1
    dh1 = dz2 @ wq[1]
    dz1 = dh1 * (z1 > 0.0)
    dwq1 = dz1.T @ x

    weight_grads = []
    param_grads = []
    for w, p, lay, dwq in zip(state.student, state.params, state.layouts, (dwq1, dwq2)):
        upstream = lay.grouped(dwq)
        d_group, d_lo, d_hi, d_s1, d_s2 = ldp.grads(lay.grouped(w), p, upstream)
        weight_grads.append(d_group.reshape(w.shape))
        param_grads.append((d_lo, d_hi, d_s1, d_s2))
    if want_upstream:
        return loss, weight_grads, param_grads, [dwq1, dwq2]
    return loss, weight_grads, param_grads


def train_toy(cfg: DistillConfig, spec: ToyModelSpec = ToyModelSpec()) -> TrainingReport:
    """Run the distillation loop; fully deterministic per seed."""
    state = _build_state(spec, cfg)
    opt_w = _Adam(cfg.lr_weights)
    opt_q = _Adam(cfg.lr_quant)
    trace: list[float] = []

    for step in range(cfg.steps):
        x = make_rng(cfg.seed, _STREAM_BATCH0 + step).standard_normal((cfg.batch, spec.in_dim))
        loss, w_grads, p_grads = _loss_and_grads(state, x)
        if not np.isfinite(loss):
            raise TrainingFailureError(step)
        trace.append(loss)
        for i, (w, gw) in enumerate(zip(state.student, w_grads)):
            opt_w.step(f"w{i}", w, gw)
        for i, (p, (d_lo, d_hi, d_s1, d_s2)) in enumerate(zip(state.params, p_grads)):
            opt_q.step(f"lo{i}", p.lo_logit, d_lo)
            opt_q.step(f"hi{i}", p.hi_logit, d_hi)
            if not cfg.freeze_partitions:
                opt_q.step(f"s1{i}", p.split1, d_s1)
                opt_q.step(f"s2{i}", p.split2, d_s2)
            for arr in (p.lo_logit, p.hi_logit, p.split1, p.split2):
                np.clip(arr, -ldp.LOGIT_LIMIT, ldp.LOGIT_LIMIT, out=arr)

    eval_x = make_rng(cfg.seed, _STREAM_EVAL).standard_normal((cfg.eval_tokens, spec.in_dim))
    eval_loss, _, _ = _loss_and_grads(state, eval_x)
    wq = _quantize_weights(state.student, state.params, state.layouts)
    student_logits = np.maximum(eval_x @ wq[0].T, 0.0) @ wq[1].T
    teacher_logits = _forward_full(state.teacher, eval_x)
    agreement = float(np.mean(student_logits.argmax(axis=1) == teacher_logits.argmax(axis=1)))

    spikes = np.diff(np.asarray(trace)) if len(trace) > 1 else np.zeros(1)
    levels = [
        ldp.derive_grids(lay.grouped(w), p).levels
        for w, p, lay in zip(state.student, state.params, state.layouts)
    ]
    return TrainingReport(
        loss_trace=trace,
        alpha=state.alpha,
        initial_loss=trace[0],
        final_loss=trace[-1],
        eval_loss=eval_loss,
        max_loss_spike=float(spikes.max()),
        agreement=agreement,
        levels=levels,
        config={
            "steps": cfg.steps,
            "batch": cfg.batch,
            "seed": cfg.seed,
            "lr_weights": cfg.lr_weights,
            "lr_quant": cfg.lr_quant,
            "freeze_partitions": cfg.freeze_partitions,
            "spec": vars(spec) | {},
        },
    )


def grad_check(
    spec: ToyModelSpec = ToyModelSpec(),
    points: int = 100,
    seed: int = 0,
    delta: float = 1e-4,
) -> dict:
    """Analytic quantizer-logit gradients vs central finite differences.

    Coordinates whose probe flips any quantizer code or ReLU sign are
    non-differentiable for the straight-through model and are excluded
    (counted in the report). Weight gradients are validated at the
    fake-quantized weights, the point where the straight-through estimator
    hands them off to the network.
    """
    cfg = DistillConfig(seed=seed)
    state = _build_state(spec, cfg)
    x = make_rng(seed, _STREAM_GRADCHECK).standard_normal((cfg.batch, spec.in_dim))
    rng = make_rng(seed, _STREAM_GRADCHECK + 1)

    def loss_at() -> float:
        loss, _, _ = _loss_and_grads(state, x)
        return loss

    def snapshot():
        wq = _quantize_weights(state.student, state.params, state.layouts)
        codes = [
            ldp.fake_quant(lay.grouped(w), p)[0]
            for w, p, lay in zip(state.student, state.params, state.layouts)
        ]
        relu_mask = x @ wq[0].T > 0.0
        return codes, relu_mask

    _, _, base_p_grads, base_upstream = _loss_and_grads(state, x, want_upstream=True)
    base_codes, base_mask = snapshot()

    fields = ("lo_logit", "hi_logit", "split1", "split2")
    tested = 0
    excluded = 0
    max_rel = 0.0
    attempts = 0
    while tested < points and attempts < points * 20:
        attempts += 1
        layer = int(rng.integers(0, len(state.params)))
        fld = fields[int(rng.integers(0, 4))]
        arr = getattr(state.params[layer], fld)
        idx = tuple(rng.integers(0, s) for s in arr.shape)
        original = arr[idx]

        flipped = False
        vals = []
        for offset in (delta, -delta):
            arr[idx] = original + offset
            codes, mask = snapshot()
            if any(not np.array_equal(c, b) for c, b in zip(codes, base_codes)) or not np.array_equal(
                mask, base_mask
            ):
                flipped = True
            vals.append(loss_at())
        arr[idx] = original
        if flipped:
            excluded += 1
            continue
        fd = (vals[0] - vals[1]) / (2 * delta)
        analytic = base_p_grads[layer][fields.index(fld)][idx]
        denom = max(abs(fd), abs(analytic), 1e-10)
        max_rel = max(max_rel, abs(fd - analytic) / denom)
        tested += 1

    # Weight gradients, checked at the quantized weights.
    wq = _quantize_weights(state.student, state.params, state.layouts)

    def loss_from_quantized() -> float:
        z1 = x @ wq[0].T
        h1 = np.maximum(z1, 0.0)
        z2 = h1 @ wq[1].T
        pt = _softmax(_forward_full(state.teacher, x))
        return cakld(pt, _softmax(z2), state.alpha)

    w_tested = 0
    w_excluded = 0
    while w_tested < points and attempts < points * 40:
        attempts += 1
        layer = int(rng.integers(0, 2))
        i = int(rng.integers(0, wq[layer].shape[0]))
        j = int(rng.integers(0, wq[layer].shape[1]))
        original = wq[layer][i, j]
        vals = []
        flipped = False
        for offset in (delta, -delta):
            wq[layer][i, j] = original + offset
            if np.any((x @ wq[0].T > 0.0) != base_mask):
                flipped = True
            vals.append(loss_from_quantized())
        wq[layer][i, j] = original
        if flipped:
            w_excluded += 1
            continue
        fd = (vals[0] - vals[1]) / (2 * delta)
        analytic = base_upstream[layer][i, j]
        denom = max(abs(fd), abs(analytic), 1e-10)
        max_rel = max(max_rel, abs(fd - analytic) / denom)
        w_tested += 1

    return {
        "max_rel_err": max_rel,
        "param_points": tested,
        "param_excluded": excluded,
        "weight_points": w_tested,
        "weight_excluded": w_excluded,
    }


def invariance_check(
    spec: ToyModelSpec = ToyModelSpec(), rotation_seed: int | None = 0, seed: int = 0
) -> dict:
    """Full-precision outputs before vs after fusing a rotation pair.

    The input rotation and its inverse baked into the first weight must
    leave outputs unchanged (checked in float64); as a side effect the
    rotation raises the kurtosis of platykurtic weight groups, so the mean
    group kurtosis delta of the rotated weight is reported alongside.
    ``rotation_seed=None`` uses the identity (deviation exactly zero).
    """
    teacher = _teacher_weights(spec, seed)
    x = make_rng(seed, _STREAM_EVAL).standard_normal((256, spec.in_dim))
    if rotation_seed is None:
        rot = np.eye(spec.in_dim)
    else:
        rot = randomized_hadamard(spec.in_dim, rotation_seed)

    base = _forward_full(teacher, x)
    w1_fused = fuse(teacher[0], None, rot).astype(np.float64)
    # float64 end to end: refuse the float32 narrowing for the check itself
    w1_fused64 = teacher[0] @ rot
    x_rot = apply_online(x, rot)
    rotated = _forward_full([w1_fused64, teacher[1]], x_rot)
    denom = max(1.0, float(np.abs(base).max()))
    deviation = float(np.abs(rotated - base).max()) / denom

    lay = _layouts(spec)[0]
    kurt_base = groupwise_kurtosis(teacher[0], lay).per_group
    kurt_rot = groupwise_kurtosis(w1_fused64, lay).per_group
    return {
        "max_rel_deviation": deviation,
        "mean_kurtosis_delta": float((kurt_rot - kurt_base).mean()),
        "fused_f32_max_err": float(np.abs(w1_fused - w1_fused64).max()),
        "rotation_seed": rotation_seed,
    }
