"""Seeded training loop and the ablation runner."""

from __future__ import annotations

import copy
import logging
import time
from collections import OrderedDict
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .data import Corpus, Video
from .losses import Assignment, LossBreakdown, LossConfig, SequenceTargets
from .metrics import EvalReport, evaluate_corpus
from .model import BackboneConfig, forward, init_params, objective, predict

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("F1@10", "F1@25", "F1@50", "Edit", "Acc")


class NonFiniteLoss(FloatingPointError):
    def __init__(self, epoch: int, video: str, breakdown: LossBreakdown):
        super().__init__(f"non-finite loss at epoch {epoch}, video {video}: {asdict(breakdown)}")
        self.epoch = epoch
        self.video = video
        self.breakdown = breakdown


@dataclass
class TrainConfig:
    loss: LossConfig = field(default_factory=LossConfig)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    optimizer: str = "adam"
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 50
    batch: int = 1
    seed: int = 0
    eval_every: int = 10

    def __post_init__(self):
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch < 1:
            raise ValueError(f"batch must be >= 1, got {self.batch}")
        if self.eval_every < 1:
            raise ValueError(f"eval_every must be >= 1, got {self.eval_every}")
        if self.lr <= 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["loss"] = self.loss.to_dict()
        return d


# ---------------------------------------------------------------------------
# optimizers


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: OrderedDict, grads: OrderedDict) -> None:
        for k, g in grads.items():
            params[k] -= self.lr * g


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: OrderedDict, grads: OrderedDict) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            m = self.m.get(k)
            if m is None:
                m = self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            v = self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(cfg: TrainConfig):
    if cfg.optimizer == "sgd":
        return SGD(cfg.lr)
    return Adam(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)


# ---------------------------------------------------------------------------


@dataclass
class RunLog:
    config: dict
    epochs: list[dict] = field(default_factory=list)
    evals: list[dict] = field(default_factory=list)
    final: dict | None = None
    wall_clock_seconds: float = 0.0

    def to_dict(self, include_timing: bool = False) -> dict:
        d = {"config": self.config, "epochs": self.epochs, "evals": self.evals, "final": self.final}
        if include_timing:
            d["wall_clock_seconds"] = self.wall_clock_seconds
        return d


def evaluate_params(params: OrderedDict, videos: list[Video], cfg: BackboneConfig) -> EvalReport:
    pairs = []
    for v in videos:
        _, prob_map = forward(v.features, params, cfg)
        pred, _ = predict(prob_map)
        pairs.append((v.id, pred, v.labels))
    return evaluate_corpus(pairs)


def _mean_breakdown(items: list[LossBreakdown]) -> dict:
    keys = asdict(items[0]).keys()
    return {k: float(np.mean([getattr(b, k) for b in items])) for k in keys}


def train(
    corpus: Corpus,
    cfg: TrainConfig,
    on_epoch_end: Callable[[int, OrderedDict], None] | None = None,
    jobs: int = 1,
) -> tuple[OrderedDict, RunLog]:
    """Train on ``corpus.train`` and evaluate on ``corpus.test``.

    Video order is reshuffled every epoch from ``cfg.seed``; gradients of a
    batch are averaged in that order before one optimizer step. The result is
    a pure function of ``(corpus, cfg)``; ``jobs > 1`` only spreads the
    per-video gradients of a batch over threads.
    """
    if not corpus.train:
        raise ValueError("training split is empty")
    if cfg.loss.lambda_S > 0 and cfg.loss.e_start >= cfg.epochs:
        log.warning("e_start=%d >= epochs=%d: the shape loss never activates", cfg.loss.e_start, cfg.epochs)

    started = time.perf_counter()
    params = init_params(cfg.backbone)
    opt = make_optimizer(cfg)
    rng = np.random.default_rng(cfg.seed)
    targets = [SequenceTargets.build(v.labels, cfg.loss) for v in corpus.train]
    runlog = RunLog(config=cfg.to_dict())
    eval_videos = corpus.test or corpus.train
    pool = ThreadPoolExecutor(max_workers=jobs) if jobs > 1 and cfg.batch > 1 else None

    try:
        for epoch in range(cfg.epochs):
            order = rng.permutation(len(corpus.train))
            breakdowns = []
            for b0 in range(0, len(order), cfg.batch):
                batch = order[b0:b0 + cfg.batch]

                def one(idx, epoch=epoch):
                    v = corpus.train[idx]
                    # per-(epoch, video) stream: masks do not depend on batching or threads
                    drop = np.random.default_rng([cfg.seed, epoch, int(idx)]) if cfg.backbone.dropout > 0 else None
                    return objective(params, v.features, v.labels, cfg.backbone, cfg.loss, epoch, targets[idx], drop)

                if pool is not None and len(batch) > 1:
                    outs = list(pool.map(one, batch))
                else:
                    outs = [one(idx) for idx in batch]
                acc = None
                for idx, (br, grads) in zip(batch, outs):
                    if not br.is_finite():
                        raise NonFiniteLoss(epoch, corpus.train[idx].id, br)
                    breakdowns.append(br)
                    if acc is None:
                        acc = grads
                    else:
                        for k in acc:
                            acc[k] = acc[k] + grads[k]
                if len(batch) > 1:
                    for k in acc:
                        acc[k] = acc[k] / len(batch)
                opt.step(params, acc)
            entry = {"epoch": epoch, **_mean_breakdown(breakdowns)}
            runlog.epochs.append(entry)
            log.debug("epoch %d: %s", epoch, entry)

            if (epoch + 1) % cfg.eval_every == 0 or epoch == cfg.epochs - 1:
                report = evaluate_params(params, eval_videos, cfg.backbone)
                runlog.evals.append({"epoch": epoch, **report.row()})
                if epoch == cfg.epochs - 1:
                    runlog.final = report.to_dict()
            if on_epoch_end is not None:
                on_epoch_end(epoch, params)
    finally:
        if pool is not None:
            pool.shutdown()

    runlog.wall_clock_seconds = time.perf_counter() - started
    return params, runlog


# ---------------------------------------------------------------------------
# ablations


class UnknownArm(ValueError):
    pass


@dataclass(frozen=True)
class Arm:
    name: str
    overrides: tuple[tuple[str, object], ...] = ()

    def apply(self, cfg: TrainConfig) -> TrainConfig:
        out = copy.deepcopy(cfg)
        for key, value in self.overrides:
            setattr(out.loss, key, value)
        out.loss.__post_init__()
        return out


_NAMED_ARMS = {
    "baseline": (("lambda_B", 0.0), ("lambda_S", 0.0)),
    "+LB": (("lambda_S", 0.0),),
    "+LS": (("lambda_B", 0.0),),
    "+both": (),
    "allframes": (("assignment", Assignment.ALL_FRAMES),),
    "decoupled": (("assignment", Assignment.DECOUPLED),),
}


def parse_arms(spec: str | list[str]) -> list[Arm]:
    """Parse ``"baseline,+LB"`` or ``"estart:0,10,20"`` style arm lists.

    Bare integers after an ``estart:`` item extend that start-epoch grid.
    """
    tokens = spec.split(",") if isinstance(spec, str) else list(spec)
    arms = []
    in_grid = False
    for raw in tokens:
        tok = raw.strip()
        if not tok:
            continue
        if tok.startswith("estart:"):
            tok, in_grid = tok[len("estart:"):], True
        elif tok in _NAMED_ARMS:
            arms.append(Arm(tok, _NAMED_ARMS[tok]))
            in_grid = False
            continue
        elif not in_grid:
            raise UnknownArm(f"unknown arm {raw.strip()!r}; expected one of {sorted(_NAMED_ARMS)} or estart:N")
        try:
            e = int(tok)
        except ValueError:
            raise UnknownArm(f"bad start epoch {raw.strip()!r}") from None
        if e < 0:
            raise UnknownArm(f"start epoch must be >= 0, got {e}")
        arms.append(Arm(f"estart:{e}", (("e_start", e),)))
    if not arms:
        raise UnknownArm("no arms given")
    return arms


def _with_seed(cfg: TrainConfig, seed: int) -> TrainConfig:
    out = copy.deepcopy(cfg)
    out.seed = seed
    out.backbone.seed = seed
    return out


def _run_arm_seed(corpus: Corpus, cfg: TrainConfig) -> dict:
    try:
        _, runlog = train(corpus, cfg)
    except Exception as exc:  # one failing arm must not sink the table
        return {"error": f"{type(exc).__name__}: {exc}"}
    final = runlog.final
    row = {f"F1@{k}": v for k, v in final["f1"].items()}
    row["Edit"] = final["edit"]
    row["Acc"] = final["acc"]
    return {"metrics": {c: row[c] for c in METRIC_COLUMNS}}


@dataclass
class AblationRow:
    arm: str
    config: dict
    seeds: list[int]
    runs: list[dict]
    mean: dict[str, float]
    sd: dict[str, float]
    errors: list[str]


def _summarise(arm: Arm, cfg: TrainConfig, seeds: list[int], results: list[dict]) -> AblationRow:
    ok = [r["metrics"] for r in results if "metrics" in r]
    errors = [r["error"] for r in results if "error" in r]
    mean, sd = {}, {}
    for c in METRIC_COLUMNS:
        vals = np.array([m[c] for m in ok], dtype=np.float64)
        mean[c] = float(vals.mean()) if vals.size else float("nan")
        sd[c] = float(vals.std(ddof=1)) if vals.size > 1 else 0.0 if vals.size else float("nan")
    runs = [{"seed": s, **r} for s, r in zip(seeds, results)]
    return AblationRow(arm.name, cfg.to_dict(), list(seeds), runs, mean, sd, errors)


def ablate(
    corpus: Corpus,
    base_cfg: TrainConfig,
    arms: list[Arm],
    seeds: list[int],
    jobs: int = 1,
) -> list[AblationRow]:
    """Train every arm under every seed and summarise test metrics per arm.

    Rows follow the order of ``arms``. Results do not depend on ``jobs``.
    """
    configs = [arm.apply(base_cfg) for arm in arms]
    tasks = [(i, _with_seed(cfg, s)) for i, cfg in enumerate(configs) for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_arm_seed, [corpus] * len(tasks), [c for _, c in tasks]))
    else:
        results = [_run_arm_seed(corpus, c) for _, c in tasks]
    rows = []
    for i, (arm, cfg) in enumerate(zip(arms, configs)):
        mine = [r for (j, _), r in zip(tasks, results) if j == i]
        rows.append(_summarise(arm, cfg, seeds, mine))
    return rows


def format_table(rows: list[AblationRow]) -> str:
    name_w = max(8, *(len(r.arm) for r in rows))
    head = "arm".ljust(name_w) + "".join(c.rjust(16) for c in METRIC_COLUMNS)
    lines = [head]
    for r in rows:
        cells = "".join(f"{r.mean[c]:.2f} ± {r.sd[c]:.2f}".rjust(16) for c in METRIC_COLUMNS)
        lines.append(r.arm.ljust(name_w) + cells)
    return "\n".join(lines)
