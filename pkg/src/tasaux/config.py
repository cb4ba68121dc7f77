"""JSON run configuration: schema, defaults, dotted overrides, hashing.

A config document looks like::

    {
      "schema_version": 1,
      "synth": {...},            # data.SynthConfig
      "train": {                 # trainer.TrainConfig
        "loss": {...},           # losses.LossConfig
        "backbone": {...},       # model.BackboneConfig
        ...
      },
      "gradcheck": {...},
      "outputs": {...}
    }

Every section is optional; omitted keys take their defaults. Unknown keys are
errors.
"""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .data import ConfigInvalid, SynthConfig
from .losses import LossConfig
from .model import BackboneConfig
from .trainer import TrainConfig

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"config key '{key}': {message}")
        self.key = key


@dataclass
class GradcheckConfig:
    num_classes: int = 3
    frames: int = 24
    input_dim: int = 4
    num_stages: int = 1
    layers_per_stage: int = 3
    hidden_width: int = 6
    coords: int = 200
    inputs: int = 10
    h: float = 1e-5
    tolerance: float = 1e-4
    seed: int = 0


@dataclass
class OutputNames:
    checkpoint: str = "model.ckpt"
    runlog: str = "runlog.json"
    metrics: str = "metrics.csv"
    manifest: str = "manifest.json"
    report: str = "eval.json"
    ablation_json: str = "ablation.json"
    ablation_csv: str = "ablation.csv"


@dataclass
class RunConfig:
    synth: SynthConfig = field(default_factory=SynthConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    gradcheck: GradcheckConfig = field(default_factory=GradcheckConfig)
    outputs: OutputNames = field(default_factory=OutputNames)
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "synth": self.synth.to_dict(),
            "train": self.train.to_dict(),
            "gradcheck": dataclasses.asdict(self.gradcheck),
            "outputs": dataclasses.asdict(self.outputs),
        }

    def digest(self) -> str:
        return config_hash(self.to_dict())


_NESTED = {
    (): RunConfig,
    ("synth",): SynthConfig,
    ("train",): TrainConfig,
    ("train", "loss"): LossConfig,
    ("train", "backbone"): BackboneConfig,
    ("gradcheck",): GradcheckConfig,
    ("outputs",): OutputNames,
}


def _coerce(value, target_type, key: str):
    if target_type in ("float", float) and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if target_type in ("int", int):
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise ConfigError(key, f"expected an integer, got {value!r}")
    if target_type in ("float", float) and not isinstance(value, (int, float)):
        raise ConfigError(key, f"expected a number, got {value!r}")
    if target_type in ("str", str) and not isinstance(value, str):
        raise ConfigError(key, f"expected a string, got {value!r}")
    return value


def _build(path: tuple[str, ...], data: dict):
    cls = _NESTED[path]
    if not isinstance(data, dict):
        raise ConfigError(".".join(path) or "<root>", f"expected an object, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        dotted = ".".join(path + (key,))
        if key not in fields:
            raise ConfigError(dotted, "unknown key")
        if path + (key,) in _NESTED:
            kwargs[key] = _build(path + (key,), value)
        else:
            kwargs[key] = _coerce(value, fields[key].type, dotted)
    if cls is RunConfig and kwargs.get("schema_version", SCHEMA_VERSION) != SCHEMA_VERSION:
        raise ConfigError("schema_version", f"unsupported version {kwargs['schema_version']}")
    try:
        return cls(**kwargs)
    except ConfigInvalid as exc:
        raise ConfigError(".".join(path + (exc.key,)), str(exc)) from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(_guess_key(path, str(exc), fields), str(exc)) from None


def _guess_key(path, message, fields) -> str:
    for name in fields:
        if message.startswith(name) or f" {name}" in message:
            return ".".join(path + (name,))
    return ".".join(path) or "<root>"


def parse_override(text: str) -> tuple[list[str], object]:
    """``"loss.lambda_B=0"`` -> (["train", "loss", "lambda_B"], 0).

    Paths not starting with a top-level section are taken relative to ``train``.
    """
    if "=" not in text:
        raise ConfigError(text, "override must look like key=value")
    key, raw = text.split("=", 1)
    parts = key.strip().split(".")
    if parts[0] not in {"synth", "train", "gradcheck", "outputs", "schema_version"}:
        parts = ["train"] + parts
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return parts, value


def apply_overrides(doc: dict, overrides: list[str]) -> dict:
    doc = copy.deepcopy(doc)
    for text in overrides:
        parts, value = parse_override(text)
        node = doc
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(".".join(parts), "cannot override inside a scalar")
        node[parts[-1]] = value
    return doc


def load_config(path: str | Path | None = None, overrides: list[str] | None = None) -> RunConfig:
    doc = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError("--config", f"file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError("--config", f"invalid JSON in {path}: {exc}") from None
        # artifacts embed their config under "config"; accept them directly
        if isinstance(doc, dict) and "config" in doc and isinstance(doc["config"], dict) and "synth" not in doc:
            doc = doc["config"]
    return _build((), apply_overrides(doc, overrides or []))


def config_hash(doc: dict) -> str:
    canonical = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
