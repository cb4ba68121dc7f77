"""Toy multi-stage dilated TCN with a class-agnostic boundary output row.

Each stage maps its input to ``(C + 1) x T`` logits: rows ``0..C-1`` are class
scores, the last row is the boundary score. Stages after the first consume the
softmax of the previous stage's class rows.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .binio import read_blob, write_blob
from .core import LabelSequence, ProbabilityMap
from .losses import LossBreakdown, LossConfig, SequenceTargets, sigmoid, softmax_columns, stage_loss

KERNEL_SIZE = 3
CHECKPOINT_FORMAT = "tasaux-checkpoint-1"


@dataclass
class BackboneConfig:
    num_classes: int = 6
    input_dim: int = 16
    num_stages: int = 2
    layers_per_stage: int = 6
    hidden_width: int = 32
    seed: int = 0
    dropout: float = 0.0

    def __post_init__(self):
        for name in ("num_classes", "input_dim", "num_stages", "layers_per_stage", "hidden_width"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")

    def dilations(self) -> list[int]:
        return [2 ** i for i in range(self.layers_per_stage)]

    def to_dict(self) -> dict:
        return asdict(self)


# block name -> array, in a fixed order
Parameters = OrderedDict


def parameter_shapes(cfg: BackboneConfig, boundary_channel: bool = True) -> OrderedDict:
    out_rows = cfg.num_classes + (1 if boundary_channel else 0)
    H = cfg.hidden_width
    shapes = OrderedDict()
    for s in range(cfg.num_stages):
        d_in = cfg.input_dim if s == 0 else cfg.num_classes
        shapes[f"stage{s}.in.weight"] = (H, d_in)
        shapes[f"stage{s}.in.bias"] = (H,)
        for layer in range(cfg.layers_per_stage):
            p = f"stage{s}.layer{layer}"
            shapes[f"{p}.conv.weight"] = (H, H, KERNEL_SIZE)
            shapes[f"{p}.conv.bias"] = (H,)
            shapes[f"{p}.pw.weight"] = (H, H)
            shapes[f"{p}.pw.bias"] = (H,)
        shapes[f"stage{s}.head.weight"] = (out_rows, H)
        shapes[f"stage{s}.head.bias"] = (out_rows,)
    return shapes


def count_parameters(cfg: BackboneConfig, boundary_channel: bool = True) -> int:
    return sum(int(np.prod(s)) for s in parameter_shapes(cfg, boundary_channel).values())


def init_params(cfg: BackboneConfig, zero_head: bool = False) -> OrderedDict:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init, drawn in block order from ``cfg.seed``."""
    rng = np.random.default_rng(cfg.seed)
    params = OrderedDict()
    for name, shape in parameter_shapes(cfg).items():
        weight_name = name.replace(".bias", ".weight")
        wshape = shape if name.endswith("weight") else parameter_shapes(cfg)[weight_name]
        fan_in = int(np.prod(wshape[1:]))
        bound = 1.0 / np.sqrt(fan_in)
        values = rng.uniform(-bound, bound, size=shape)
        if zero_head and ".head." in name:
            values = np.zeros(shape)
        params[name] = values
    return params


def _check_features(features: np.ndarray, cfg: BackboneConfig):
    if features.ndim != 2 or features.shape[0] != cfg.input_dim or features.shape[1] < 1:
        raise ad.ShapeMismatch(f"features must be {cfg.input_dim} x T with T >= 1, got {features.shape}")


def forward(
    features: np.ndarray,
    params: OrderedDict,
    cfg: BackboneConfig,
    tape: ad.Tape | None = None,
    dropout_rng: np.random.Generator | None = None,
) -> tuple[list[ad.Tensor], ProbabilityMap]:
    """Run every stage. Returns per-stage raw logits and the final stage's probabilities.

    With a ``tape`` the parameters are registered as leaves (in block order)
    and the whole pass is recorded for :func:`autodiff.backward`. Dropout is
    applied only when ``dropout_rng`` is given and ``cfg.dropout > 0``.
    """
    features = np.asarray(features, dtype=np.float64)
    _check_features(features, cfg)
    if tape is not None:
        p = OrderedDict((k, tape.leaf(v, name=k)) for k, v in params.items())
    else:
        p = OrderedDict((k, ad.Tensor(v, name=k)) for k, v in params.items())

    C = cfg.num_classes
    x = ad.Tensor(features)
    stage_logits = []
    for s in range(cfg.num_stages):
        h = ad.pointwise_conv(x, p[f"stage{s}.in.weight"], p[f"stage{s}.in.bias"])
        for layer, dilation in enumerate(cfg.dilations()):
            q = f"stage{s}.layer{layer}"
            out = ad.relu(ad.conv1d_dilated(h, p[f"{q}.conv.weight"], dilation, p[f"{q}.conv.bias"]))
            out = ad.pointwise_conv(out, p[f"{q}.pw.weight"], p[f"{q}.pw.bias"])
            if dropout_rng is not None and cfg.dropout > 0:
                keep = 1.0 - cfg.dropout
                out = ad.multiply_mask(out, (dropout_rng.random(out.shape) < keep) / keep)
            h = ad.add(h, out)
        logits = ad.pointwise_conv(h, p[f"stage{s}.head.weight"], p[f"stage{s}.head.bias"])
        stage_logits.append(logits)
        x = ad.softmax_columns(ad.gather_rows(logits, range(C)))

    final = stage_logits[-1].values
    return stage_logits, ProbabilityMap(softmax_columns(final[:C]), sigmoid(final[C]))


def predict(prob_map: ProbabilityMap) -> tuple[LabelSequence, np.ndarray]:
    """Per-frame argmax (ties go to the lower class index) and the boundary probabilities."""
    labels = np.argmax(prob_map.class_probs, axis=0)
    return LabelSequence(labels, prob_map.num_classes), prob_map.boundary_probs.copy()


def objective(
    params: OrderedDict,
    features: np.ndarray,
    seq: LabelSequence,
    cfg: BackboneConfig,
    loss_cfg: LossConfig,
    epoch: int,
    targets: SequenceTargets | None = None,
    dropout_rng: np.random.Generator | None = None,
) -> tuple[LossBreakdown, OrderedDict]:
    """Stage-summed total loss for one video and its gradient on every parameter block."""
    if targets is None:
        targets = SequenceTargets.build(seq, loss_cfg)
    tape = ad.Tape()
    stage_logits, _ = forward(features, params, cfg, tape, dropout_rng)
    summed = LossBreakdown()
    loss_node = None
    for logits in stage_logits:
        br, g = stage_loss(logits.values, seq, loss_cfg, epoch, targets)
        summed.l_model += br.l_model
        summed.l_B += br.l_B
        summed.l_S += br.l_S
        summed.l_total += br.l_total
        node = ad.attach_loss(logits, br.l_total, g)
        loss_node = node if loss_node is None else ad.add(loss_node, node)
    summed.n_boundary_frames = br.n_boundary_frames
    summed.n_segments_used = br.n_segments_used
    summed.n_segments_skipped = br.n_segments_skipped
    grads = ad.backward(tape, loss_node)
    leaf_grads = OrderedDict((leaf.name, grads[leaf.node_id]) for leaf in tape.leaves)
    return summed, leaf_grads


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path: str | Path, params: OrderedDict, cfg: BackboneConfig, extra: dict | None = None) -> None:
    header = {
        "format": CHECKPOINT_FORMAT,
        "backbone": cfg.to_dict(),
        "blocks": [{"name": k, "shape": list(v.shape)} for k, v in params.items()],
    }
    if extra:
        header["meta"] = extra
    flat = np.concatenate([v.ravel() for v in params.values()]) if params else np.zeros(0)
    write_blob(path, header, flat, "<f8")


def load_checkpoint(path: str | Path) -> tuple[OrderedDict, BackboneConfig, dict]:
    header, flat = read_blob(path)
    if header.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    params = OrderedDict()
    pos = 0
    for block in header["blocks"]:
        shape = tuple(block["shape"])
        n = int(np.prod(shape))
        params[block["name"]] = flat[pos:pos + n].reshape(shape).copy()
        pos += n
    if pos != flat.size:
        raise ValueError(f"{path}: {flat.size - pos} trailing values after the last block")
    return params, BackboneConfig(**header["backbone"]), header.get("meta", {})
