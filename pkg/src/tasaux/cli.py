"""Command-line entry point: gen-data, train, eval, gradcheck, ablate.

Exit codes: 0 success, 2 config error, 3 non-finite loss, 4 eval stem
mismatch, 5 gradient check failure, 6 unknown ablation arm.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, config_hash, load_config
from .data import ConfigInvalid, Corpus, LengthMismatch, MissingFile, UnknownLabel, generate, load_dataset, write_dataset
from .gradcheck import injected_fault, run_suite
from .metrics import evaluate_corpus
from .model import save_checkpoint
from .trainer import METRIC_COLUMNS, NonFiniteLoss, UnknownArm, ablate, format_table, parse_arms, train

EXIT_CONFIG = 2
EXIT_NONFINITE = 3
EXIT_EVAL = 4
EXIT_GRADCHECK = 5
EXIT_ARM = 6

log = logging.getLogger("tasaux")


class CliExit(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _dump_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _resolve(args) -> RunConfig:
    overrides = list(args.set or [])
    if getattr(args, "seed", None) is not None:
        overrides += [f"train.seed={args.seed}", f"train.backbone.seed={args.seed}", f"synth.seed={args.seed}"]
    try:
        return load_config(args.config, overrides)
    except ConfigError as exc:
        raise CliExit(EXIT_CONFIG, str(exc)) from None


def _fit_backbone(cfg: RunConfig, corpus: Corpus) -> RunConfig:
    cfg.train.backbone.num_classes = corpus.num_classes
    cfg.train.backbone.input_dim = corpus.feature_dim
    return cfg


def _load_corpus(path) -> Corpus:
    try:
        return load_dataset(path)
    except (MissingFile, LengthMismatch, UnknownLabel, ValueError) as exc:
        raise CliExit(EXIT_CONFIG, f"cannot load dataset {path}: {exc}") from None


def _csv_text(header: list[str], rows: list[list], comment: str) -> str:
    buf = io.StringIO()
    buf.write(f"# {comment}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    cfg = _resolve(args)
    try:
        corpus = generate(cfg.synth)
    except ConfigInvalid as exc:
        raise CliExit(EXIT_CONFIG, f"config key 'synth.{exc.key}': {exc}") from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_dataset(out, corpus, args.feature_format)
    resolved = cfg.to_dict()
    manifest = {
        "tool": "tasaux gen-data",
        "version": __version__,
        "seed": cfg.synth.seed,
        "config": resolved,
        "config_hash": config_hash({"synth": resolved["synth"]}),
        "corpus_fingerprint": corpus.fingerprint(),
        "num_train": len(corpus.train),
        "num_test": len(corpus.test),
    }
    _dump_json(out / cfg.outputs.manifest, manifest)
    print(f"wrote {len(corpus.train)} train / {len(corpus.test)} test videos to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _resolve(args)
    corpus = _load_corpus(args.data)
    _fit_backbone(cfg, corpus)
    try:
        params, runlog = train(corpus, cfg.train, jobs=args.jobs)
    except NonFiniteLoss as exc:
        raise CliExit(EXIT_NONFINITE, f"non-finite loss at epoch {exc.epoch}, video {exc.video}: {exc}") from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    resolved = cfg.to_dict()
    digest = config_hash(resolved)
    save_checkpoint(out / cfg.outputs.checkpoint, params, cfg.train.backbone,
                    {"config": resolved, "config_hash": digest, "corpus_fingerprint": corpus.fingerprint()})
    runlog.config = resolved
    _dump_json(out / cfg.outputs.runlog, {**runlog.to_dict(), "config_hash": digest})
    rows = [[e["epoch"], *(f"{e[c]:.6f}" for c in METRIC_COLUMNS)] for e in runlog.evals]
    (out / cfg.outputs.metrics).write_text(
        _csv_text(["epoch", *METRIC_COLUMNS], rows, f"config={json.dumps(resolved, sort_keys=True)}"))
    _dump_json(out / "timing.json", {"wall_clock_seconds": runlog.wall_clock_seconds})
    final = runlog.evals[-1]
    print("  ".join(f"{c}={final[c]:.2f}" for c in METRIC_COLUMNS))
    return 0


def _read_token_dir(path: Path) -> dict[str, list[str]]:
    if not path.is_dir():
        raise CliExit(EXIT_EVAL, f"not a directory: {path}")
    return {
        f.stem: [t.strip() for t in f.read_text().splitlines() if t.strip()]
        for f in sorted(path.glob("*.txt"))
    }


def cmd_eval(args) -> int:
    preds = _read_token_dir(Path(args.pred_dir))
    gts = _read_token_dir(Path(args.gt_dir))
    missing = sorted(set(gts) - set(preds))
    extra = sorted(set(preds) - set(gts))
    if missing or extra or not gts:
        parts = []
        if missing:
            parts.append("missing predictions: " + ", ".join(missing))
        if extra:
            parts.append("predictions without ground truth: " + ", ".join(extra))
        if not gts:
            parts.append(f"no ground-truth files in {args.gt_dir}")
        raise CliExit(EXIT_EVAL, "; ".join(parts))
    vocab: dict[str, int] = {}
    pairs = []
    for stem in sorted(gts):
        g = [vocab.setdefault(t, len(vocab)) for t in gts[stem]]
        p = [vocab.setdefault(t, len(vocab)) for t in preds[stem]]
        pairs.append((stem, p, g))
    try:
        report = evaluate_corpus([(s, _arr(p), _arr(g)) for s, p, g in pairs], edit_mode=args.edit_mode)
    except (LengthMismatch, ValueError) as exc:
        raise CliExit(EXIT_EVAL, str(exc)) from None
    print(report.table())
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _dump_json(out, {
        "config": {"pred_dir": str(args.pred_dir), "gt_dir": str(args.gt_dir), "edit_mode": args.edit_mode},
        "report": report.to_dict(),
    })
    return 0


def _arr(tokens):
    return np.asarray(tokens, dtype=np.int64)


def cmd_gradcheck(args) -> int:
    cfg = _resolve(args)
    if args.inject_fault:
        with injected_fault():
            results = run_suite(cfg.gradcheck, cfg.train.loss)
    else:
        results = run_suite(cfg.gradcheck, cfg.train.loss)
    worst = None
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        if r.report is None:
            print(f"{status}  {r.name:<40} {r.note}")
            continue
        print(f"{status}  {r.name:<40} max rel err {r.report.max_rel_error:.3e}  ({r.report.n_checked} coords)")
        if worst is None or r.report.max_rel_error > worst[1].max_rel_error:
            worst = (r.name, r.report)
    if worst is not None:
        print(f"worst: {worst[0]} at {worst[1].worst_index}, max rel err {worst[1].max_rel_error:.3e}")
    failed = [r for r in results if not r.passed]
    if failed:
        where = ", ".join(r.name for r in failed)
        detail = f"{worst[1].max_rel_error:.3e} in {worst[0]} at {worst[1].worst_index}" if worst else "see report"
        raise CliExit(EXIT_GRADCHECK, f"gradient check failed ({where}); worst relative error {detail}")
    return 0


def _parse_seeds(text: str) -> list[int]:
    items = [s.strip() for s in text.split(",") if s.strip()]
    try:
        values = [int(s) for s in items]
    except ValueError:
        raise CliExit(EXIT_CONFIG, f"config key '--seeds': expected integers, got {text!r}") from None
    if len(values) == 1 and "," not in text:
        return list(range(values[0]))
    return values


def cmd_ablate(args) -> int:
    cfg = _resolve(args)
    try:
        arms = parse_arms(args.arms)
    except UnknownArm as exc:
        raise CliExit(EXIT_ARM, str(exc)) from None
    seeds = _parse_seeds(args.seeds)
    corpus = _load_corpus(args.data) if args.data else generate(cfg.synth)
    _fit_backbone(cfg, corpus)
    rows = ablate(corpus, cfg.train, arms, seeds, jobs=args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    base = cfg.to_dict()
    doc = {
        "config": base,
        "config_hash": config_hash(base),
        "corpus_fingerprint": corpus.fingerprint(),
        "data": str(args.data) if args.data else None,
        "arms": [r.arm for r in rows],
        "seeds": seeds,
        "rows": [
            {
                "arm": r.arm,
                "config": {**base, "train": r.config},
                "seeds": r.seeds,
                "mean": r.mean,
                "sd": r.sd,
                "runs": r.runs,
                "errors": r.errors,
            }
            for r in rows
        ],
    }
    _dump_json(out / cfg.outputs.ablation_json, doc)
    header = ["arm", *(f"{c}_{s}" for c in METRIC_COLUMNS for s in ("mean", "sd"))]
    csv_rows = [[r.arm, *(f"{getattr(r, s)[c]:.6f}" for c in METRIC_COLUMNS for s in ("mean", "sd"))] for r in rows]
    (out / cfg.outputs.ablation_csv).write_text(
        _csv_text(header, csv_rows, f"config_hash={doc['config_hash']} seeds={','.join(map(str, seeds))}"))
    print(format_table(rows))
    for r in rows:
        for e in r.errors:
            print(f"arm {r.arm}: {e}", file=sys.stderr)
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tasaux", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("--config", help="JSON config file (defaults apply for missing keys)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="dotted override, e.g. loss.lambda_B=0 (repeatable)")
        if seed:
            p.add_argument("--seed", type=int, help="seed for data, init and shuffling")
        p.add_argument("--jobs", type=int, default=1, help="worker processes (results do not depend on it)")

    p = sub.add_parser("gen-data", help="write a synthetic corpus")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--feature-format", choices=("bin", "csv"), default="bin")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train the toy backbone on a corpus directory")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score prediction files against ground truth")
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--gt-dir", required=True)
    p.add_argument("--out", default="eval.json")
    p.add_argument("--edit-mode", choices=("per_video", "pooled"), default="per_video")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference checks of every gradient")
    common(p, seed=False)
    p.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="run ablation arms over several seeds")
    common(p, seed=False)
    p.add_argument("--data", help="corpus directory (default: generate from the synth config)")
    p.add_argument("--arms", required=True,
                   help="comma list: baseline,+LB,+LS,+both | estart:0,10,20 | allframes,decoupled")
    p.add_argument("--seeds", default="5", help="comma list of seeds, or a single count N for seeds 0..N-1")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliExit as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
