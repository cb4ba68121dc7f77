"""Frame accuracy, segmental edit score and segmental F1@tau.

All scores are percentages. Corpus aggregation: accuracy is frame-weighted,
edit is the per-video mean (or pooled, on request), F1 pools TP/FP/FN counts
over videos before computing precision and recall.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import LabelSequence, LengthMismatch, extract_segments

TAUS = (0.10, 0.25, 0.50)


class EmptySequence(ValueError):
    pass


def _labels(x) -> np.ndarray:
    return x.labels if isinstance(x, LabelSequence) else np.asarray(x)


def _check_lengths(pred, gt):
    if pred.size != gt.size:
        raise LengthMismatch(f"prediction has {pred.size} frames, ground truth {gt.size}")


def frame_accuracy(pred, gt) -> float:
    p, g = _labels(pred), _labels(gt)
    _check_lengths(p, g)
    if g.size == 0:
        raise EmptySequence("cannot score an empty sequence")
    return 100.0 * float(np.count_nonzero(p == g)) / g.size


def _run_classes(labels: np.ndarray) -> np.ndarray:
    if labels.size == 0:
        return labels
    keep = np.concatenate(([True], labels[1:] != labels[:-1]))
    return labels[keep]


def levenshtein(a, b) -> int:
    """Unit-cost edit distance between two token sequences."""
    a, b = list(a), list(b)
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i] + [0] * len(b)
        for j, y in enumerate(b, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y))
        prev = cur
    return prev[-1]


def edit_distance(pred, gt) -> tuple[int, int]:
    """Segment-level Levenshtein distance and the normaliser ``max(|pred|, |gt|)``."""
    p, g = _run_classes(_labels(pred)), _run_classes(_labels(gt))
    if p.size == 0 or g.size == 0:
        raise EmptySequence("edit score needs non-empty sequences")
    return levenshtein(p.tolist(), g.tolist()), max(p.size, g.size)


def edit_score(pred, gt) -> float:
    dist, norm = edit_distance(pred, gt)
    return 100.0 * (1.0 - dist / norm)


@dataclass
class F1Result:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int


def _prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return 100.0 * precision, 100.0 * recall, 100.0 * f1


def segment_counts(pred, gt, tau: float) -> tuple[int, int, int]:
    """Greedy one-to-one matching in predicted-segment order.

    Each predicted segment takes the unmatched same-class ground-truth segment
    of highest IoU (first one on ties); it is a TP when that IoU reaches ``tau``.
    """
    if not 0 < tau <= 1:
        raise ValueError(f"tau must lie in (0, 1], got {tau}")
    p, g = _labels(pred), _labels(gt)
    _check_lengths(p, g)
    n = int(max(p.max(initial=0), g.max(initial=0))) + 1
    gt_segs = extract_segments(LabelSequence(g, n))
    pred_segs = extract_segments(LabelSequence(p, n))
    g_cls = np.array([s.class_id for s in gt_segs])
    g_start = np.array([s.start for s in gt_segs])
    g_end = np.array([s.end for s in gt_segs])
    matched = np.zeros(len(gt_segs), dtype=bool)
    tp = fp = 0
    for seg in pred_segs:
        inter = np.minimum(seg.end, g_end) - np.maximum(seg.start, g_start)
        inter = np.maximum(inter, 0)
        union = (seg.end - seg.start) + (g_end - g_start) - inter
        iou = np.where((g_cls == seg.class_id) & ~matched, inter / union, -1.0)
        best = int(np.argmax(iou))
        if iou[best] >= tau:
            tp += 1
            matched[best] = True
        else:
            fp += 1
    return tp, fp, len(gt_segs) - int(matched.sum())


def f1_at(pred, gt, tau: float) -> F1Result:
    tp, fp, fn = segment_counts(pred, gt, tau)
    return F1Result(*_prf(tp, fp, fn), tp, fp, fn)


@dataclass
class VideoScores:
    video: str
    frames: int
    acc: float
    edit: float
    f1: dict[str, float]


@dataclass
class EvalReport:
    acc: float
    edit: float
    f1: dict[str, float]
    per_video: list[VideoScores] = field(default_factory=list)
    edit_mode: str = "per_video"

    def row(self) -> dict[str, float]:
        """Scores in column order F1@10, F1@25, F1@50, Edit, Acc."""
        out = {f"F1@{tau_key(t)}": self.f1[tau_key(t)] for t in TAUS}
        out["Edit"] = self.edit
        out["Acc"] = self.acc
        return out

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def table(self, title: str = "corpus") -> str:
        row = self.row()
        names = ["", *row]
        widths = [max(len(title), 6)] + [max(len(n), 7) for n in row]
        head = "  ".join(n.rjust(w) for n, w in zip(names, widths))
        vals = [title.ljust(widths[0])] + [f"{v:.2f}".rjust(w) for v, w in zip(row.values(), widths[1:])]
        return head + "\n" + "  ".join(vals)


def tau_key(tau: float) -> str:
    return str(int(round(tau * 100)))


def evaluate_corpus(pairs, taus=TAUS, edit_mode: str = "per_video") -> EvalReport:
    """Score ``(video_id, pred, gt)`` triples (or bare ``(pred, gt)`` pairs)."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("evaluate_corpus needs at least one video")
    if edit_mode not in ("per_video", "pooled"):
        raise ValueError(f"edit_mode must be 'per_video' or 'pooled', got {edit_mode!r}")

    correct = frames = 0
    edits = []
    edit_dist = edit_norm = 0
    counts = {t: [0, 0, 0] for t in taus}
    per_video = []
    for i, item in enumerate(pairs):
        vid, pred, gt = item if len(item) == 3 else (f"video{i}", *item)
        p, g = _labels(pred), _labels(gt)
        try:
            _check_lengths(p, g)
            acc = frame_accuracy(p, g)
            dist, norm = edit_distance(p, g)
            video_f1 = {}
            for t in taus:
                tp, fp, fn = segment_counts(p, g, t)
                for k, v in enumerate((tp, fp, fn)):
                    counts[t][k] += v
                video_f1[tau_key(t)] = _prf(tp, fp, fn)[2]
        except (LengthMismatch, EmptySequence) as exc:
            raise type(exc)(f"{vid}: {exc}") from None
        correct += int(np.count_nonzero(p == g))
        frames += g.size
        edits.append(100.0 * (1.0 - dist / norm))
        edit_dist += dist
        edit_norm += norm
        per_video.append(VideoScores(str(vid), int(g.size), acc, edits[-1], video_f1))

    edit = float(np.mean(edits)) if edit_mode == "per_video" else 100.0 * (1.0 - edit_dist / edit_norm)
    return EvalReport(
        acc=100.0 * correct / frames,
        edit=edit,
        f1={tau_key(t): _prf(*counts[t])[2] for t in taus},
        per_video=per_video,
        edit_mode=edit_mode,
    )
