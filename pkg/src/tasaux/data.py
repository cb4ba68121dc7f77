"""Synthetic corpora and the on-disk dataset layout.

Layout of a dataset directory::

    classes.txt              "<index> <name>" per line
    groundTruth/<stem>.txt   one class name per frame
    features/<stem>.bin      JSON header line + little-endian float32, row-major D x T
    features/<stem>.csv      (alternative) one frame per line, D comma-separated values
    splits/train.txt         video stems, one per line
    splits/test.txt
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .binio import read_blob, write_blob
from .core import LabelSequence, LengthMismatch, extract_segments

# segments must survive the default margin of 5 frames on both sides
DEFAULT_MARGIN = 5
MIN_SEGMENT_FRAMES = 2 * DEFAULT_MARGIN + 2


class ConfigInvalid(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class MissingFile(FileNotFoundError):
    pass


class UnknownLabel(KeyError):
    def __init__(self, token: str, where: str = ""):
        super().__init__(f"unknown label {token!r}" + (f" in {where}" if where else ""))
        self.token = token

    def __str__(self):
        return self.args[0]


@dataclass
class SynthConfig:
    num_classes: int = 6
    num_videos: int = 75
    frames_min: int = 270
    frames_max: int = 330
    segments_min: int = 4
    segments_max: int = 8
    feature_dim: int = 16
    base_noise: float = 2.0
    boundary_noise_boost: float = 2.0
    boundary_jitter: int = 4
    noise_correlation: float = 0.8
    prototype_scale: float = 1.0
    train_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        def need(ok: bool, key: str, msg: str):
            if not ok:
                raise ConfigInvalid(key, msg)

        need(self.num_classes >= 2, "num_classes", f"must be >= 2, got {self.num_classes}")
        need(self.num_videos >= 2, "num_videos", f"must be >= 2, got {self.num_videos}")
        need(self.feature_dim >= 1, "feature_dim", f"must be >= 1, got {self.feature_dim}")
        need(1 <= self.segments_min <= self.segments_max, "segments_min",
             f"need 1 <= segments_min <= segments_max, got {self.segments_min}..{self.segments_max}")
        need(1 <= self.frames_min <= self.frames_max, "frames_min",
             f"need 1 <= frames_min <= frames_max, got {self.frames_min}..{self.frames_max}")
        need(self.segments_max * MIN_SEGMENT_FRAMES <= self.frames_min, "frames_min",
             f"{self.frames_min} frames cannot hold {self.segments_max} segments of >= {MIN_SEGMENT_FRAMES} frames")
        need(self.base_noise > 0, "base_noise", f"must be > 0, got {self.base_noise}")
        need(self.boundary_noise_boost >= 1, "boundary_noise_boost", f"must be >= 1, got {self.boundary_noise_boost}")
        need(self.boundary_jitter >= 0, "boundary_jitter", f"must be >= 0, got {self.boundary_jitter}")
        need(0 <= self.noise_correlation < 1, "noise_correlation", f"must lie in [0, 1), got {self.noise_correlation}")
        need(self.prototype_scale > 0, "prototype_scale", f"must be > 0, got {self.prototype_scale}")
        need(0 < self.train_fraction < 1, "train_fraction", f"must lie in (0, 1), got {self.train_fraction}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(eq=False)
class Video:
    id: str
    features: np.ndarray  # D x T
    labels: LabelSequence


@dataclass(eq=False)
class Corpus:
    class_names: list[str]
    train: list[Video] = field(default_factory=list)
    test: list[Video] = field(default_factory=list)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def feature_dim(self) -> int:
        return (self.train or self.test)[0].features.shape[0]

    def videos(self) -> list[Video]:
        return self.train + self.test

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for split, videos in (("train", self.train), ("test", self.test)):
            for v in videos:
                h.update(f"{split}:{v.id}:".encode())
                h.update(np.ascontiguousarray(v.features).tobytes())
                h.update(v.labels.labels.tobytes())
        return h.hexdigest()


def default_class_names(n: int) -> list[str]:
    return [f"action{i}" for i in range(n)]


def _sample_lengths(rng: np.random.Generator, total: int, k: int) -> np.ndarray:
    spare = total - k * MIN_SEGMENT_FRAMES
    weights = rng.dirichlet(np.ones(k))
    extra = rng.multinomial(spare, weights)
    return MIN_SEGMENT_FRAMES + extra


def _transition_matrix(rng: np.random.Generator, C: int) -> np.ndarray:
    P = rng.dirichlet(np.ones(C - 1), size=C)
    full = np.zeros((C, C))
    for c in range(C):
        full[c, np.arange(C) != c] = P[c]
    return full


def generate(cfg: SynthConfig) -> Corpus:
    """Deterministic corpus: Markov-chain labels, prototype-plus-noise features.

    Labels never repeat across adjacent segments. Noise is Gaussian with
    standard deviation ``base_noise``, optionally AR(1)-correlated over time,
    and multiplied by ``boundary_noise_boost`` within ``boundary_jitter``
    frames of every transition. Features are rounded to float32 so a
    written-then-loaded corpus is bit-identical to the generated one.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    C, D = cfg.num_classes, cfg.feature_dim
    prototypes = cfg.prototype_scale * rng.normal(size=(C, D))
    trans = _transition_matrix(rng, C)
    rho = cfg.noise_correlation

    videos = []
    for i in range(cfg.num_videos):
        T = int(rng.integers(cfg.frames_min, cfg.frames_max + 1))
        k = int(rng.integers(cfg.segments_min, cfg.segments_max + 1))
        lengths = _sample_lengths(rng, T, k)
        classes = [int(rng.integers(C))]
        for _ in range(k - 1):
            classes.append(int(rng.choice(C, p=trans[classes[-1]])))
        labels = np.repeat(classes, lengths)

        white = rng.normal(size=(D, T))
        if rho > 0:
            noise = np.empty_like(white)
            noise[:, 0] = white[:, 0]
            scale = np.sqrt(1.0 - rho * rho)
            for t in range(1, T):
                noise[:, t] = rho * noise[:, t - 1] + scale * white[:, t]
        else:
            noise = white
        gain = np.full(T, cfg.base_noise)
        for tau in np.cumsum(lengths)[:-1]:
            lo, hi = max(0, tau - cfg.boundary_jitter), min(T, tau + cfg.boundary_jitter + 1)
            gain[lo:hi] = cfg.base_noise * cfg.boundary_noise_boost
        feats = prototypes[labels].T + gain * noise
        feats = feats.astype("<f4").astype(np.float64)
        videos.append(Video(f"video_{i:03d}", feats, LabelSequence(labels, C)))

    order = rng.permutation(cfg.num_videos)
    n_train = int(round(cfg.train_fraction * cfg.num_videos))
    n_train = min(max(n_train, 1), cfg.num_videos - 1)
    train_ids = set(order[:n_train].tolist())
    return Corpus(
        class_names=default_class_names(C),
        train=[v for j, v in enumerate(videos) if j in train_ids],
        test=[v for j, v in enumerate(videos) if j not in train_ids],
    )


# ---------------------------------------------------------------------------
# files


def read_classes(path: str | Path) -> list[str]:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"missing class mapping {path}")
    entries = {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split(maxsplit=1)
        if len(parts) != 2 or not parts[0].lstrip("-").isdigit():
            raise ValueError(f"{path}:{lineno}: expected '<index> <name>', got {line!r}")
        entries[int(parts[0])] = parts[1].strip()
    if sorted(entries) != list(range(len(entries))):
        raise ValueError(f"{path}: class indices must be 0..{len(entries) - 1}")
    return [entries[i] for i in range(len(entries))]


def write_classes(path: str | Path, names: list[str]) -> None:
    Path(path).write_text("".join(f"{i} {n}\n" for i, n in enumerate(names)))


def read_label_file(path: str | Path, class_names: list[str]) -> LabelSequence:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"missing label file {path}")
    index = {n: i for i, n in enumerate(class_names)}
    tokens = [t.strip() for t in path.read_text().splitlines() if t.strip()]
    try:
        labels = [index[t] for t in tokens]
    except KeyError as exc:
        raise UnknownLabel(exc.args[0], str(path)) from None
    return LabelSequence(np.array(labels, dtype=np.int64), len(class_names))


def write_label_file(path: str | Path, seq: LabelSequence, class_names: list[str]) -> None:
    Path(path).write_text("".join(class_names[c] + "\n" for c in seq.labels))


def write_features(path: str | Path, features: np.ndarray) -> None:
    path = Path(path)
    if path.suffix == ".csv":
        np.savetxt(path, features.T, delimiter=",", fmt="%.9g")
    else:
        write_blob(path, {"dims": list(features.shape)}, features, "<f4")


def read_features(path: str | Path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".csv":
        # features are float32 on disk in either format; 9 digits round-trip exactly
        arr = np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float32)
        return np.ascontiguousarray(arr.T, dtype=np.float64)
    header, flat = read_blob(path)
    dims = header.get("dims")
    if not dims or len(dims) != 2 or dims[0] * dims[1] != flat.size:
        raise ValueError(f"{path}: header dims {dims} do not match {flat.size} values")
    return flat.reshape(dims)


def _find_features(root: Path, stem: str) -> Path:
    for suffix in (".bin", ".csv"):
        candidate = root / "features" / f"{stem}{suffix}"
        if candidate.is_file():
            return candidate
    raise MissingFile(f"missing features for {stem} under {root / 'features'}")


def _read_split(path: Path) -> list[str]:
    if not path.is_file():
        raise MissingFile(f"missing split file {path}")
    return [s.strip() for s in path.read_text().splitlines() if s.strip()]


def load_video(root: str | Path, stem: str, class_names: list[str]) -> Video:
    root = Path(root)
    labels = read_label_file(root / "groundTruth" / f"{stem}.txt", class_names)
    feats = read_features(_find_features(root, stem))
    if feats.shape[1] != len(labels):
        raise LengthMismatch(f"{stem}: features have T={feats.shape[1]}, labels have T={len(labels)}")
    return Video(stem, feats, labels)


def load_dataset(root: str | Path) -> Corpus:
    root = Path(root)
    if not root.is_dir():
        raise MissingFile(f"dataset directory {root} does not exist")
    names = read_classes(root / "classes.txt")
    train = [load_video(root, s, names) for s in _read_split(root / "splits" / "train.txt")]
    test = [load_video(root, s, names) for s in _read_split(root / "splits" / "test.txt")]
    return Corpus(names, train, test)


def write_dataset(root: str | Path, corpus: Corpus, feature_format: str = "bin") -> None:
    root = Path(root)
    for sub in ("groundTruth", "features", "splits"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    write_classes(root / "classes.txt", corpus.class_names)
    for v in corpus.videos():
        write_label_file(root / "groundTruth" / f"{v.id}.txt", v.labels, corpus.class_names)
        write_features(root / "features" / f"{v.id}.{feature_format}", v.features)
    (root / "splits" / "train.txt").write_text("".join(v.id + "\n" for v in corpus.train))
    (root / "splits" / "test.txt").write_text("".join(v.id + "\n" for v in corpus.test))


def segment_count(video: Video) -> int:
    return len(extract_segments(video.labels))
