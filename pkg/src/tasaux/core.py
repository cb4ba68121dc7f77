"""In-memory data model: label sequences, segments, boundary targets, region masks.

Segments are half-open ``[start, end)`` frame intervals. A transition is marked
on the first frame of the new segment; frame 0 is never a boundary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class InvalidSequence(ValueError):
    pass


class LengthMismatch(ValueError):
    pass


@dataclass(frozen=True)
class Segment:
    class_id: int
    start: int
    end: int

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise ValueError(f"invalid segment interval [{self.start}, {self.end})")

    @property
    def length(self) -> int:
        return self.end - self.start


@dataclass(frozen=True, eq=False)
class LabelSequence:
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 1 or labels.size < 1:
            raise InvalidSequence("label sequence must be a non-empty 1-D array")
        if not np.issubdtype(labels.dtype, np.integer):
            if not np.all(labels == np.round(labels)):
                raise InvalidSequence("labels must be integers")
        labels = labels.astype(np.int64)
        if self.num_classes < 1:
            raise InvalidSequence("num_classes must be >= 1")
        if labels.min() < 0 or labels.max() >= self.num_classes:
            raise InvalidSequence(
                f"labels must lie in [0, {self.num_classes}), got range "
                f"[{labels.min()}, {labels.max()}]"
            )
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return int(self.labels.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, LabelSequence):
            return NotImplemented
        return self.num_classes == other.num_classes and np.array_equal(self.labels, other.labels)

    def __hash__(self):
        return hash((self.num_classes, self.labels.tobytes()))


@dataclass(frozen=True, eq=False)
class ProbabilityMap:
    """Column-softmax class probabilities (C x T) and sigmoid boundary probabilities (T)."""

    class_probs: np.ndarray
    boundary_probs: np.ndarray

    def __post_init__(self):
        cp = np.asarray(self.class_probs, dtype=np.float64)
        bp = np.asarray(self.boundary_probs, dtype=np.float64)
        if cp.ndim != 2 or bp.shape != (cp.shape[1],):
            raise ValueError(f"class_probs {cp.shape} and boundary_probs {bp.shape} disagree")
        object.__setattr__(self, "class_probs", cp)
        object.__setattr__(self, "boundary_probs", bp)

    @property
    def num_classes(self) -> int:
        return self.class_probs.shape[0]

    def __len__(self) -> int:
        return self.class_probs.shape[1]


@dataclass(frozen=True, eq=False)
class BoundaryTarget:
    mask: np.ndarray

    @property
    def transitions(self) -> np.ndarray:
        return np.flatnonzero(self.mask)


@dataclass(frozen=True, eq=False)
class RegionMask:
    is_boundary_region: np.ndarray
    window_w: int = 5

    @property
    def non_boundary(self) -> np.ndarray:
        return ~self.is_boundary_region

    def boundary_frames(self) -> np.ndarray:
        return np.flatnonzero(self.is_boundary_region)


def _change_points(labels: np.ndarray) -> np.ndarray:
    return np.flatnonzero(labels[1:] != labels[:-1]) + 1


def extract_segments(seq: LabelSequence) -> list[Segment]:
    labels = seq.labels
    starts = np.concatenate(([0], _change_points(labels)))
    ends = np.concatenate((starts[1:], [labels.size]))
    return [Segment(int(labels[s]), int(s), int(e)) for s, e in zip(starts, ends)]


def render_labels(segments: list[Segment], num_classes: int) -> LabelSequence:
    """Inverse of :func:`extract_segments` for a contiguous cover of ``[0, T)``."""
    if not segments:
        raise InvalidSequence("cannot render an empty segment list")
    pos = 0
    for seg in segments:
        if seg.start != pos:
            raise InvalidSequence(f"segments are not contiguous at frame {pos}")
        pos = seg.end
    labels = np.empty(pos, dtype=np.int64)
    for seg in segments:
        labels[seg.start:seg.end] = seg.class_id
    return LabelSequence(labels, num_classes)


def boundary_targets(seq: LabelSequence) -> BoundaryTarget:
    mask = np.zeros(len(seq), dtype=np.int8)
    mask[_change_points(seq.labels)] = 1
    mask.setflags(write=False)
    return BoundaryTarget(mask)


def region_partition(seq: LabelSequence, w: int = 5) -> RegionMask:
    if w < 0:
        raise ValueError(f"window must be >= 0, got {w}")
    T = len(seq)
    region = np.zeros(T, dtype=bool)
    for tau in _change_points(seq.labels):
        region[max(0, tau - w):min(T, tau + w + 1)] = True
    region.setflags(write=False)
    return RegionMask(region, int(w))


def segment_iou(a: tuple[int, int] | Segment, b: tuple[int, int] | Segment) -> float:
    a0, a1 = (a.start, a.end) if isinstance(a, Segment) else a
    b0, b1 = (b.start, b.end) if isinstance(b, Segment) else b
    inter = max(0, min(a1, b1) - max(a0, b0))
    union = (a1 - a0) + (b1 - b0) - inter
    return inter / union if union > 0 else 0.0
