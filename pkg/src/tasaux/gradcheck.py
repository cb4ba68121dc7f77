"""Central-difference verification of every analytic gradient in the package."""

from __future__ import annotations

import contextlib
from collections import OrderedDict
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .core import LabelSequence, ProbabilityMap, boundary_targets, extract_segments, region_partition
from .losses import (
    Assignment,
    LossConfig,
    boundary_bce,
    model_loss,
    proposed_loss,
    segment_shape_loss,
    sigmoid,
    softmax_columns,
)
from .model import BackboneConfig, forward, init_params, objective


class CheckFailed(AssertionError):
    def __init__(self, report: GradCheckReport, label: str = ""):
        where = f"{label} " if label else ""
        super().__init__(
            f"{where}max relative error {report.max_rel_error:.3e} > {report.tolerance:.1e} "
            f"at coordinate {report.worst_index} (analytic {report.analytic:.6e}, numeric {report.numeric:.6e})"
        )
        self.report = report


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_index: tuple[int, ...]
    analytic: float
    numeric: float
    n_checked: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def finite_difference_check(
    loss_fn: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x: np.ndarray,
    h: float = 1e-5,
    tolerance: float = 1e-4,
    coords: int = 200,
    rng: np.random.Generator | None = None,
    raise_on_fail: bool = True,
) -> GradCheckReport:
    """Compare ``loss_fn``'s gradient with central differences.

    Checks ``coords`` coordinates drawn without replacement, or every
    coordinate when ``x`` has fewer. Error is ``|a - n| / max(1, |n|)``.
    """
    if not 1e-6 <= h <= 1e-3:
        raise ValueError(f"step h must lie in [1e-6, 1e-3], got {h}")
    x = np.array(x, dtype=np.float64)
    rng = rng or np.random.default_rng(0)
    _, grad = loss_fn(x)
    flat = x.reshape(-1)
    picks = np.arange(flat.size) if flat.size <= coords else rng.choice(flat.size, size=coords, replace=False)
    worst = (-1.0, 0, 0.0, 0.0)
    for i in picks:
        orig = flat[i]
        flat[i] = orig + h
        up, _ = loss_fn(x)
        flat[i] = orig - h
        down, _ = loss_fn(x)
        flat[i] = orig
        numeric = (up - down) / (2 * h)
        analytic = float(grad.reshape(-1)[i])
        err = abs(analytic - numeric) / max(1.0, abs(numeric))
        if err > worst[0]:
            worst = (err, int(i), analytic, numeric)
    report = GradCheckReport(
        max_rel_error=worst[0],
        worst_index=tuple(int(k) for k in np.unravel_index(worst[1], x.shape)),
        analytic=worst[2],
        numeric=worst[3],
        n_checked=int(picks.size),
        tolerance=tolerance,
    )
    if raise_on_fail and not report.passed:
        raise CheckFailed(report)
    return report


def params_check(
    loss_fn: Callable[[OrderedDict], tuple[float, OrderedDict]],
    params: OrderedDict,
    block: str,
    **kwargs,
) -> GradCheckReport:
    """Finite-difference check restricted to one parameter block."""
    def on_block(values):
        trial = OrderedDict(params)
        trial[block] = values
        value, grads = loss_fn(trial)
        return value, grads[block]

    return finite_difference_check(on_block, params[block], **kwargs)


# ---------------------------------------------------------------------------
# the suite run by `tasaux gradcheck`


def random_labels(rng: np.random.Generator, T: int, C: int, min_len: int) -> LabelSequence:
    """Random labels whose segments all have at least ``min_len`` frames."""
    k = int(rng.integers(1, max(1, T // min_len) + 1))
    lengths = min_len + rng.multinomial(T - k * min_len, np.ones(k) / k)
    classes = [int(rng.integers(C))]
    for _ in range(k - 1):
        classes.append(int((classes[-1] + rng.integers(1, C)) % C))
    return LabelSequence(np.repeat(classes, lengths), C)


@dataclass
class SuiteResult:
    name: str
    report: GradCheckReport | None
    passed: bool
    note: str = ""


@contextlib.contextmanager
def injected_fault():
    """Swap in a ReLU whose adjoint ignores the mask, to prove the suite can fail."""
    original = ad.relu

    def leaky_adjoint_relu(x):
        pos = x.values > 0
        return ad._tape_of(x).record("relu", (x,), np.where(pos, x.values, 0.0), lambda g: (g,))

    ad.relu = leaky_adjoint_relu
    try:
        yield
    finally:
        ad.relu = original


# a central difference that straddles a ReLU kink measures a one-sided slope;
# backbone inputs are redrawn until every pre-activation clears this margin
RELU_MARGIN = 1e-4


def _relu_margin(features, params, bb) -> float:
    tape = ad.Tape()
    forward(features, params, bb, tape)
    return min(float(np.abs(n.inputs[0].values).min()) for n in tape.nodes if n.op == "relu")


def _split_coords(coords: int, sizes: dict[str, int]) -> dict[str, int]:
    """Share ``coords`` across blocks; small blocks hand their unused share to larger ones."""
    out = {}
    left = coords
    for i, name in enumerate(sorted(sizes, key=sizes.get)):
        take = min(sizes[name], max(1, -(-left // (len(sizes) - i))))
        out[name] = take
        left = max(0, left - take)
    return out


def run_suite(cfg, loss_cfg: LossConfig | None = None) -> list[SuiteResult]:
    """Gradient checks for each loss and each backbone parameter block.

    ``cfg`` is a :class:`tasaux.config.GradcheckConfig`.
    """
    loss_cfg = loss_cfg or LossConfig()
    rng = np.random.default_rng(cfg.seed)
    C, T = cfg.num_classes, cfg.frames
    delta, w = loss_cfg.margin_delta, loss_cfg.window_w
    min_len = min(T, 2 * delta + 2)
    kw = dict(h=cfg.h, tolerance=cfg.tolerance, coords=cfg.coords, raise_on_fail=False)

    def worst(reports):
        return max(reports, key=lambda r: r.max_rel_error)

    results = []
    inputs = []
    for _ in range(cfg.inputs):
        seq = random_labels(rng, T, C, min_len)
        if len(extract_segments(seq)) < 2 and T >= 2 * min_len:
            seq = LabelSequence(np.repeat([0, 1 % C], [T // 2, T - T // 2]), C)
        inputs.append((seq, rng.normal(size=(C, T)), rng.normal(size=T)))

    reps = []
    for seq, _, zb in inputs:
        target = boundary_targets(seq)
        region = region_partition(seq, w)
        active = region.is_boundary_region if region.is_boundary_region.any() else None
        reps.append(finite_difference_check(
            lambda z: boundary_bce(sigmoid(z), target, active, loss_cfg.eps), zb, rng=rng, **kw))
    results.append(SuiteResult("boundary_bce", worst(reps), all(r.passed for r in reps)))

    reps = []
    for seq, zc, _ in inputs:
        segs = extract_segments(seq)
        allowed = region_partition(seq, w).non_boundary if loss_cfg.assignment is Assignment.DECOUPLED else None
        reps.append(finite_difference_check(
            lambda z: segment_shape_loss(softmax_columns(z), segs, delta, allowed, loss_cfg.eps), zc, rng=rng, **kw))
    results.append(SuiteResult("segment_shape_loss", worst(reps), all(r.passed for r in reps)))

    reps = []
    for seq, zc, _ in inputs:
        reps.append(finite_difference_check(
            lambda z: model_loss(softmax_columns(z), seq, loss_cfg.tmse_weight, loss_cfg.tmse_clip, loss_cfg.eps),
            zc, rng=rng, **kw))
    results.append(SuiteResult("model_loss", worst(reps), all(r.passed for r in reps)))

    # warm-up: the shape term must contribute nothing before e_start
    warm_cfg = LossConfig(**{**loss_cfg.to_dict(), "lambda_S": max(loss_cfg.lambda_S, 1.0), "e_start": 1})
    zero = True
    for seq, zc, zb in inputs:
        aux = proposed_loss(ProbabilityMap(softmax_columns(zc), sigmoid(zb)), seq, warm_cfg, epoch=0)
        zero &= aux.l_S == 0.0 and not np.any(aux.grad_class_logits)
    results.append(SuiteResult("shape_loss_before_e_start", None, bool(zero),
                               "L_S gradient exactly zero" if zero else "L_S leaked before e_start"))

    # the whole network, with both auxiliary terms switched on at unit weight
    bb = BackboneConfig(num_classes=C, input_dim=cfg.input_dim, num_stages=cfg.num_stages,
                        layers_per_stage=cfg.layers_per_stage, hidden_width=cfg.hidden_width, seed=cfg.seed)
    full_cfg = LossConfig(**{**loss_cfg.to_dict(), "lambda_B": 1.0, "lambda_S": 1.0, "e_start": 0})
    block_reports: dict[str, list[GradCheckReport]] = {}
    budget = _split_coords(cfg.coords, {k: v.size for k, v in init_params(bb).items()})
    for k, (seq, _, _) in enumerate(inputs):
        params = init_params(BackboneConfig(**{**bb.to_dict(), "seed": cfg.seed + k}))
        feats = rng.normal(size=(cfg.input_dim, T))
        for _ in range(100):
            if _relu_margin(feats, params, bb) >= RELU_MARGIN:
                break
            feats = rng.normal(size=(cfg.input_dim, T))

        def total(p):
            br, grads = objective(p, feats, seq, bb, full_cfg, epoch=0)
            return br.l_total, grads

        for name in params:
            block_reports.setdefault(name, []).append(
                params_check(total, params, name, h=cfg.h, tolerance=cfg.tolerance, coords=budget[name],
                             rng=rng, raise_on_fail=False))
    for name, reps in block_reports.items():
        results.append(SuiteResult(f"backbone:{name}", worst(reps), all(r.passed for r in reps)))
    return results
