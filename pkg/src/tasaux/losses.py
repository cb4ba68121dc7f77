"""Training objectives with analytic gradients with respect to pre-activation logits.

A single stage emits ``(C + 1) x T`` logits: ``C`` class rows passed through a
column softmax and one boundary row passed through a sigmoid. Every loss here
takes the resulting probabilities and returns its value together with the
gradient on the corresponding logits, so the backbone only needs to seed its
tape with those arrays.

The auxiliary objective is::

    L_total = L_model + lambda_B * L_B + lambda_S * L_S

where ``L_B`` is a boundary BCE restricted to a +-w window around ground-truth
transitions and ``L_S`` compares the CDF of the l1-normalised class probability
inside each ground-truth segment against the uniform CDF.
"""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass

import numpy as np

from .core import (
    BoundaryTarget,
    LabelSequence,
    ProbabilityMap,
    RegionMask,
    Segment,
    boundary_targets,
    extract_segments,
    region_partition,
)


class ActiveSetEmpty(ValueError):
    """The boundary region is empty, so the restricted BCE has no frames."""


class AllSegmentsSkipped(ValueError):
    """Every ground-truth segment is too short once the margin is removed."""


class Assignment(str, enum.Enum):
    DECOUPLED = "decoupled"
    ALL_FRAMES = "all_frames"


@dataclass
class LossConfig:
    lambda_B: float = 1e-4
    lambda_S: float = 1e-3
    window_w: int = 5
    margin_delta: int = 5
    e_start: int = 20
    eps: float = 1e-8
    assignment: Assignment = Assignment.DECOUPLED
    tmse_weight: float = 0.15
    tmse_clip: float = 16.0

    def __post_init__(self):
        self.assignment = Assignment(self.assignment)
        for name in ("lambda_B", "lambda_S", "window_w", "margin_delta", "e_start", "tmse_weight"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        if not 0 < self.eps < 1e-3:
            raise ValueError(f"eps must lie in (0, 1e-3), got {self.eps}")
        if self.tmse_clip <= 0:
            raise ValueError(f"tmse_clip must be > 0, got {self.tmse_clip}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["assignment"] = self.assignment.value
        return d


@dataclass
class LossBreakdown:
    l_model: float = 0.0
    l_B: float = 0.0
    l_S: float = 0.0
    l_total: float = 0.0
    n_boundary_frames: int = 0
    n_segments_used: int = 0
    n_segments_skipped: int = 0

    def __iadd__(self, other: LossBreakdown) -> LossBreakdown:
        for k, v in asdict(other).items():
            setattr(self, k, getattr(self, k) + v)
        return self

    def is_finite(self) -> bool:
        return all(np.isfinite(v) for v in asdict(self).values())


# ---------------------------------------------------------------------------
# activations


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax_columns(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=0, keepdims=True))
    return e / e.sum(axis=0, keepdims=True)


def softmax_backward(probs: np.ndarray, grad_probs: np.ndarray) -> np.ndarray:
    """Pull a gradient on column-softmax outputs back to the logits."""
    return probs * (grad_probs - (probs * grad_probs).sum(axis=0, keepdims=True))


# ---------------------------------------------------------------------------
# boundary regression


def boundary_bce(
    boundary_probs: np.ndarray,
    target: BoundaryTarget | np.ndarray,
    active: np.ndarray | RegionMask | None = None,
    eps: float = 1e-8,
) -> tuple[float, np.ndarray]:
    """Mean BCE over the active frames; gradient is on the boundary logits.

    ``active=None`` means every frame is active. Raises :class:`ActiveSetEmpty`
    when an explicit active set has no frames.
    """
    probs = np.asarray(boundary_probs, dtype=np.float64)
    b = np.asarray(target.mask if isinstance(target, BoundaryTarget) else target, dtype=np.float64)
    if probs.shape != b.shape:
        raise ValueError(f"boundary probs {probs.shape} vs target {b.shape}")
    if isinstance(active, RegionMask):
        active = active.is_boundary_region
    mask = np.ones(probs.shape, dtype=bool) if active is None else np.asarray(active, dtype=bool)
    n_active = int(mask.sum())
    if n_active == 0:
        raise ActiveSetEmpty("no active frames for the boundary loss")

    p = np.clip(probs[mask], eps, 1.0 - eps)
    y = b[mask]
    loss = -np.sum(y * np.log(p) + (1.0 - y) * np.log1p(-p)) / n_active
    grad = np.zeros_like(probs)
    grad[mask] = (probs[mask] - y) / n_active
    return float(loss), grad


# ---------------------------------------------------------------------------
# segment shape regularisation


def l1_normalize(v: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    shifted = np.asarray(v, dtype=np.float64) + eps
    return shifted / shifted.sum()


def cdf(p: np.ndarray) -> np.ndarray:
    return np.cumsum(np.asarray(p, dtype=np.float64))


def uniform_cdf(length: int) -> np.ndarray:
    return np.arange(1, length + 1, dtype=np.float64) / length


def segment_interiors(
    segments: list[Segment],
    delta: int,
    active_region: np.ndarray | None = None,
) -> tuple[list[tuple[Segment, np.ndarray]], int]:
    """Frames of each segment that feed the shape loss, and the skip count.

    The interior is ``[start + delta, end - delta)``, further restricted to
    ``active_region`` when one is given. Empty interiors are skipped.
    """
    used = []
    skipped = 0
    for seg in segments:
        lo, hi = seg.start + delta, seg.end - delta
        if hi <= lo:
            skipped += 1
            continue
        frames = np.arange(lo, hi)
        if active_region is not None:
            frames = frames[np.asarray(active_region, dtype=bool)[lo:hi]]
            if frames.size == 0:
                skipped += 1
                continue
        used.append((seg, frames))
    return used, skipped


def _shape_terms(row_values: np.ndarray, eps: float) -> tuple[float, np.ndarray]:
    # loss_i = mean_j (CDF(q)[j] - (j+1)/L)^2 with q = l1_normalize(v); returns d loss_i / d v
    L = row_values.size
    shifted = row_values + eps
    total = shifted.sum()
    q = shifted / total
    diff = np.cumsum(q) - uniform_cdf(L)
    loss = float(np.dot(diff, diff) / L)
    d_cdf = 2.0 * diff / L
    d_q = np.cumsum(d_cdf[::-1])[::-1]
    d_v = (d_q - np.dot(d_q, q)) / total
    return loss, d_v


def segment_shape_loss(
    class_probs: np.ndarray,
    segments: list[Segment],
    delta: int = 5,
    active_region: np.ndarray | RegionMask | None = None,
    eps: float = 1e-8,
    *,
    interiors: list[tuple[Segment, np.ndarray]] | None = None,
) -> tuple[float, np.ndarray]:
    """Mean over non-skipped segments of the squared CDF gap to uniform.

    ``active_region`` is the set of frames the loss may touch (the non-boundary
    region under decoupled assignment); ``None`` allows all frames. Pass
    precomputed ``interiors`` to skip the interval bookkeeping.
    """
    probs = np.asarray(class_probs, dtype=np.float64)
    if isinstance(active_region, RegionMask):
        active_region = active_region.non_boundary
    if interiors is None:
        interiors, _ = segment_interiors(segments, delta, active_region)
    if not interiors:
        raise AllSegmentsSkipped(f"all {len(segments)} segments shorter than 2*delta+1")

    n = len(interiors)
    grad_probs = np.zeros_like(probs)
    loss = 0.0
    for seg, frames in interiors:
        li, dv = _shape_terms(probs[seg.class_id, frames], eps)
        loss += li
        grad_probs[seg.class_id, frames] += dv / n
    return loss / n, softmax_backward(probs, grad_probs)


# ---------------------------------------------------------------------------
# baseline objective


def model_loss(
    class_probs: np.ndarray,
    seq: LabelSequence,
    tmse_weight: float = 0.15,
    tmse_clip: float = 16.0,
    eps: float = 1e-8,
) -> tuple[float, np.ndarray]:
    """Frame-wise cross-entropy plus truncated MSE on consecutive log-probabilities.

    The smoothing term is ``mean(min((log p[:, t] - log p[:, t-1])^2, clip))``
    over all ``C x (T-1)`` entries, differentiated through both frames.
    """
    probs = np.asarray(class_probs, dtype=np.float64)
    C, T = probs.shape
    if T != len(seq):
        raise ValueError(f"class_probs has {T} frames, labels have {len(seq)}")
    cols = np.arange(T)
    p_true = np.clip(probs[seq.labels, cols], eps, 1.0)
    ce = float(-np.log(p_true).mean())
    grad = probs.copy()
    grad[seq.labels, cols] -= 1.0
    grad /= T

    if tmse_weight > 0 and T > 1:
        log_p = np.log(np.clip(probs, eps, 1.0))
        d = log_p[:, 1:] - log_p[:, :-1]
        sq = d * d
        inside = sq < tmse_clip
        n = C * (T - 1)
        ce += tmse_weight * float(np.where(inside, sq, tmse_clip).sum() / n)
        dd = np.where(inside, 2.0 * d, 0.0) * (tmse_weight / n)
        g_log = np.zeros_like(probs)
        g_log[:, 1:] += dd
        g_log[:, :-1] -= dd
        # d log_softmax / d z: g - p * sum(g)
        grad += g_log - probs * g_log.sum(axis=0, keepdims=True)
    return ce, grad


# ---------------------------------------------------------------------------
# combined objective


@dataclass(frozen=True, eq=False)
class SequenceTargets:
    """Per-sequence supervision derived once and reused every epoch."""

    seq: LabelSequence
    boundary: BoundaryTarget
    region: RegionMask
    segments: list[Segment]
    interiors: list[tuple[Segment, np.ndarray]]
    n_skipped: int
    assignment: Assignment

    @classmethod
    def build(cls, seq: LabelSequence, cfg: LossConfig) -> SequenceTargets:
        region = region_partition(seq, cfg.window_w)
        segments = extract_segments(seq)
        allowed = region.non_boundary if cfg.assignment is Assignment.DECOUPLED else None
        interiors, skipped = segment_interiors(segments, cfg.margin_delta, allowed)
        return cls(seq, boundary_targets(seq), region, segments, interiors, skipped, cfg.assignment)

    @property
    def boundary_active(self) -> np.ndarray | None:
        if self.assignment is Assignment.DECOUPLED:
            return self.region.is_boundary_region
        return None


@dataclass
class AuxiliaryTerms:
    value: float
    l_B: float
    l_S: float
    grad_class_logits: np.ndarray
    grad_boundary_logits: np.ndarray
    n_boundary_frames: int
    n_segments_used: int
    n_segments_skipped: int


def shape_loss_active(cfg: LossConfig, epoch: int) -> bool:
    return cfg.lambda_S > 0 and epoch >= cfg.e_start


def proposed_loss(
    prob_map: ProbabilityMap,
    seq: LabelSequence,
    cfg: LossConfig,
    epoch: int,
    targets: SequenceTargets | None = None,
) -> AuxiliaryTerms:
    """``lambda_B * L_B + lambda_S * L_S`` with the configured region assignment.

    A term whose weight is zero (or ``L_S`` before ``e_start``) is neither
    evaluated nor differentiated and reports 0. An empty boundary region or an
    all-skipped segment list likewise yields a zero term.
    """
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    if targets is None:
        targets = SequenceTargets.build(seq, cfg)
    class_probs, boundary_probs = prob_map.class_probs, prob_map.boundary_probs
    C, T = class_probs.shape
    g_cls = np.zeros((C, T))
    g_bnd = np.zeros(T)
    l_B = l_S = 0.0

    active = targets.boundary_active
    n_boundary = T if active is None else int(active.sum())
    if cfg.lambda_B > 0:
        try:
            l_B, g = boundary_bce(boundary_probs, targets.boundary, active, cfg.eps)
            g_bnd = cfg.lambda_B * g
        except ActiveSetEmpty:
            pass

    n_used = len(targets.interiors)
    if shape_loss_active(cfg, epoch):
        try:
            l_S, g = segment_shape_loss(
                class_probs, targets.segments, cfg.margin_delta, eps=cfg.eps,
                interiors=targets.interiors,
            )
            g_cls = cfg.lambda_S * g
        except AllSegmentsSkipped:
            pass

    return AuxiliaryTerms(
        value=cfg.lambda_B * l_B + cfg.lambda_S * l_S,
        l_B=l_B,
        l_S=l_S,
        grad_class_logits=g_cls,
        grad_boundary_logits=g_bnd,
        n_boundary_frames=n_boundary,
        n_segments_used=n_used,
        n_segments_skipped=targets.n_skipped,
    )


def stage_loss(
    logits: np.ndarray,
    seq: LabelSequence,
    cfg: LossConfig,
    epoch: int,
    targets: SequenceTargets | None = None,
) -> tuple[LossBreakdown, np.ndarray]:
    """Total objective for one stage's raw ``(C + 1) x T`` output.

    Returns the breakdown and the gradient on the raw logits.
    """
    class_probs = softmax_columns(logits[:-1])
    boundary_probs = sigmoid(logits[-1])
    l_model, g_model = model_loss(class_probs, seq, cfg.tmse_weight, cfg.tmse_clip, cfg.eps)
    aux = proposed_loss(ProbabilityMap(class_probs, boundary_probs), seq, cfg, epoch, targets)
    grad = np.empty_like(logits, dtype=np.float64)
    grad[:-1] = g_model + aux.grad_class_logits
    grad[-1] = aux.grad_boundary_logits
    br = LossBreakdown(
        l_model=l_model,
        l_B=aux.l_B,
        l_S=aux.l_S,
        l_total=l_model + aux.value,
        n_boundary_frames=aux.n_boundary_frames,
        n_segments_used=aux.n_segments_used,
        n_segments_skipped=aux.n_segments_skipped,
    )
    return br, grad
