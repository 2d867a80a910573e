"""Feature files, padded batches and synthetic dialogue corpora.

Feature files use a line-delimited JSON layout. The first line is a header::

    {"version": 1, "f_t": 768, "f_a": 768, "num_classes": 4, "labels": [...]}

and every following line holds one dialogue::

    {"id": "Ses01F_impro01", "utterances": [{"t": [...], "a": [...], "y": 2}, ...]}

Utterances carry text features, audio features and a label, nothing else;
in particular there is no speaker field.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractError, ParseError, SchemaError
from .rng import generator

FORMAT_VERSION = 1
PAD_LABEL = -1
IEMOCAP_LABELS = ("happy", "sad", "neutral", "angry")
UTTERANCE_KEYS = {"t", "a", "y"}
MODES = ("both", "text-only-informative", "audio-only-informative", "complementary")


@dataclass(frozen=True)
class FeatureHeader:
    f_t: int
    f_a: int
    num_classes: int
    labels: tuple[str, ...]
    version: int = FORMAT_VERSION

    def to_json(self) -> dict:
        return {
            "version": self.version,
            "f_t": self.f_t,
            "f_a": self.f_a,
            "num_classes": self.num_classes,
            "labels": list(self.labels),
        }


@dataclass
class Dialogue:
    id: str
    text: np.ndarray  # [U, F_t]
    audio: np.ndarray  # [U, F_a]
    labels: np.ndarray  # [U] int

    def __len__(self):
        return len(self.labels)


@dataclass
class DialogueBatch:
    text_feats: np.ndarray  # [B, U_max, F_t]
    audio_feats: np.ndarray  # [B, U_max, F_a]
    mask: np.ndarray  # [B, U_max], 1.0 on valid utterances
    labels: np.ndarray  # [B, U_max], PAD_LABEL on padding
    ids: list[str] = field(default_factory=list)

    @property
    def batch_size(self) -> int:
        return self.mask.shape[0]

    @property
    def max_len(self) -> int:
        return self.mask.shape[1]

    @property
    def num_valid(self) -> int:
        return int(self.mask.sum())


@dataclass
class DatasetSplit:
    header: FeatureHeader
    train: list[Dialogue]
    val: list[Dialogue]
    test: list[Dialogue]

    def class_counts(self) -> dict[str, list[int]]:
        counts = {
            name: count_classes(part, self.header.num_classes)
            for name, part in (("train", self.train), ("val", self.val), ("test", self.test))
        }
        counts["total"] = [sum(c) for c in zip(*counts.values())]
        return counts


def count_classes(dialogues: Iterable[Dialogue], num_classes: int) -> list[int]:
    counts = np.zeros(num_classes, dtype=np.int64)
    for d in dialogues:
        counts += np.bincount(d.labels, minlength=num_classes)[:num_classes]
    return counts.tolist()


# ---------------------------------------------------------------------------
# LPG-JSONL reading and writing
# ---------------------------------------------------------------------------


def _parse_header(obj, line: int) -> FeatureHeader:
    if not isinstance(obj, dict):
        raise ParseError("header must be a JSON object", line)
    missing = {"version", "f_t", "f_a", "num_classes", "labels"} - set(obj)
    if missing:
        raise SchemaError(f"header is missing {sorted(missing)}")
    if obj["version"] != FORMAT_VERSION:
        raise SchemaError(f"unsupported format version {obj['version']!r}")
    for key in ("f_t", "f_a", "num_classes"):
        if not isinstance(obj[key], int) or isinstance(obj[key], bool) or obj[key] < 1:
            raise SchemaError(f"header field {key} must be a positive integer")
    if obj["num_classes"] < 2:
        raise SchemaError("header num_classes must be at least 2")
    labels = obj["labels"]
    if not isinstance(labels, list) or len(labels) != obj["num_classes"]:
        raise SchemaError("header labels must list one name per class")
    return FeatureHeader(obj["f_t"], obj["f_a"], obj["num_classes"], tuple(str(x) for x in labels))


def _vector(values, dim: int, what: str, line: int) -> list:
    if not isinstance(values, list):
        raise ParseError(f"{what} must be a list of numbers", line)
    if len(values) != dim:
        raise SchemaError(f"line {line}: {what} has {len(values)} values, header declares {dim}")
    return values


def _parse_dialogue(obj, header: FeatureHeader, line: int) -> Dialogue:
    if not isinstance(obj, dict) or "id" not in obj or "utterances" not in obj:
        raise ParseError("dialogue must be an object with 'id' and 'utterances'", line)
    utts = obj["utterances"]
    if not isinstance(utts, list):
        raise ParseError("'utterances' must be a list", line)
    text, audio, labels = [], [], []
    for k, u in enumerate(utts):
        if not isinstance(u, dict):
            raise ParseError(f"utterance {k} must be an object", line)
        if set(u) != UTTERANCE_KEYS:
            raise SchemaError(f"line {line}: utterance {k} has keys {sorted(u)}, expected {sorted(UTTERANCE_KEYS)}")
        y = u["y"]
        if not isinstance(y, int) or isinstance(y, bool) or not 0 <= y < header.num_classes:
            raise SchemaError(f"line {line}: utterance {k} has unknown label {y!r}")
        text.append(_vector(u["t"], header.f_t, "text features", line))
        audio.append(_vector(u["a"], header.f_a, "audio features", line))
        labels.append(y)
    try:
        t = np.array(text, dtype=np.float64).reshape(len(utts), header.f_t)
        a = np.array(audio, dtype=np.float64).reshape(len(utts), header.f_a)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"non-numeric feature value ({exc})", line) from None
    if not (np.isfinite(t).all() and np.isfinite(a).all()):
        raise SchemaError(f"line {line}: non-finite feature value")
    return Dialogue(str(obj["id"]), t, a, np.array(labels, dtype=np.int64))


def read_feature_file(path) -> tuple[FeatureHeader, list[Dialogue]]:
    """Parse an LPG-JSONL file into its header and dialogues (file order)."""
    header = None
    dialogues: list[Dialogue] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", lineno) from None
            if header is None:
                header = _parse_header(obj, lineno)
                continue
            dialogue = _parse_dialogue(obj, header, lineno)
            if dialogue.id in seen:
                raise SchemaError(f"line {lineno}: duplicate dialogue id {dialogue.id!r}")
            seen.add(dialogue.id)
            dialogues.append(dialogue)
    if header is None:
        raise ParseError("file is empty; expected a header line", 1)
    return header, dialogues


def load_feature_file(path) -> list[Dialogue]:
    return read_feature_file(path)[1]


def write_feature_file(path, header: FeatureHeader, dialogues: Sequence[Dialogue]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(header.to_json()) + "\n")
        for d in dialogues:
            utts = [
                {"t": d.text[i].tolist(), "a": d.audio[i].tolist(), "y": int(d.labels[i])}
                for i in range(len(d))
            ]
            fh.write(json.dumps({"id": d.id, "utterances": utts}) + "\n")


# ---------------------------------------------------------------------------
# Batching
# ---------------------------------------------------------------------------


def pad_batch(dialogues: Sequence[Dialogue], max_batch: int) -> list[DialogueBatch]:
    """Group whole dialogues into tail-padded batches of at most ``max_batch``."""
    if max_batch < 1:
        raise ContractError(f"max_batch must be >= 1, got {max_batch}")
    batches = []
    for start in range(0, len(dialogues), max_batch):
        batches.append(_collate(dialogues[start : start + max_batch]))
    return batches


def _collate(group: Sequence[Dialogue]) -> DialogueBatch:
    for d in group:
        if len(d) == 0:
            raise ContractError(f"dialogue {d.id!r} has no utterances")
    b = len(group)
    u_max = max(len(d) for d in group)
    f_t = group[0].text.shape[1]
    f_a = group[0].audio.shape[1]
    text = np.zeros((b, u_max, f_t))
    audio = np.zeros((b, u_max, f_a))
    mask = np.zeros((b, u_max))
    labels = np.full((b, u_max), PAD_LABEL, dtype=np.int64)
    for i, d in enumerate(group):
        n = len(d)
        text[i, :n] = d.text
        audio[i, :n] = d.audio
        mask[i, :n] = 1.0
        labels[i, :n] = d.labels
    return DialogueBatch(text, audio, mask, labels, [d.id for d in group])


def split_train_val(dialogues: Sequence[Dialogue], val_ratio: float, seed: int) -> tuple[list, list]:
    """Seeded dialogue-level split of a pooled train+val list."""
    if not 0.0 < val_ratio < 1.0:
        raise ContractError(f"val_ratio must lie in (0, 1), got {val_ratio}")
    if len(dialogues) < 2:
        raise ContractError("need at least two dialogues to carve out a validation set")
    order = generator(seed, "split").permutation(len(dialogues))
    n_val = min(max(1, round(val_ratio * len(dialogues))), len(dialogues) - 1)
    val_idx = set(order[:n_val].tolist())
    train = [d for i, d in enumerate(dialogues) if i not in val_idx]
    val = [d for i, d in enumerate(dialogues) if i in val_idx]
    return train, val


# ---------------------------------------------------------------------------
# Synthetic corpora
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthSpec:
    """Shape of a synthetic corpus of Gaussian class clusters.

    ``mode`` controls which modality carries class information. In
    ``complementary`` mode the classes split into a lower half and an upper
    half: text resolves classes within the lower half only, audio within the
    upper half only, and each modality carries a weak, independent cue for
    which half an utterance belongs to.
    """

    num_classes: int = 4
    f_t: int = 64
    f_a: int = 64
    train_dialogues: int = 100
    val_dialogues: int = 20
    test_dialogues: int = 40
    min_len: int = 4
    max_len: int = 12
    separation: float = 3.0
    mode: str = "both"
    noise: float = 1.0
    group_cue: float = 0.2  # half-membership cue, as a fraction of separation

    def validate(self) -> None:
        if self.num_classes < 2:
            raise ContractError(f"need at least 2 classes, got {self.num_classes}")
        if self.mode not in MODES:
            raise ContractError(f"unknown mode {self.mode!r}; choose from {MODES}")
        if self.f_t < 1 or self.f_a < 1:
            raise ContractError("feature dimensions must be positive")
        if not 1 <= self.min_len <= self.max_len:
            raise ContractError("need 1 <= min_len <= max_len")
        if min(self.train_dialogues, self.val_dialogues, self.test_dialogues) < 0:
            raise ContractError("dialogue counts must be non-negative")
        if self.separation < 0 or self.noise <= 0:
            raise ContractError("separation must be >= 0 and noise > 0")

    def labels(self) -> tuple[str, ...]:
        if self.num_classes == len(IEMOCAP_LABELS):
            return IEMOCAP_LABELS
        return tuple(f"class_{k}" for k in range(self.num_classes))


def _directions(rng: np.random.Generator, count: int, dim: int) -> np.ndarray:
    """``count`` unit vectors in R^dim, orthonormal whenever count <= dim."""
    raw = rng.standard_normal((dim, count))
    if count <= dim:
        q, _ = np.linalg.qr(raw)
        return q.T
    return (raw / np.linalg.norm(raw, axis=0)).T


class _ModalityModel:
    def __init__(self, rng, spec: SynthSpec, dim: int, informative: set[int], cue_sign):
        c = spec.num_classes
        dirs = _directions(rng, c + 1, dim)
        self.means = spec.separation * dirs[:c]
        self.group_dir = dirs[c]
        self.informative = sorted(informative)
        self.cue_sign = cue_sign
        self.cue = spec.group_cue * spec.separation
        self.noise = spec.noise
        self.dim = dim

    def sample(self, rng, labels: np.ndarray) -> np.ndarray:
        out = rng.standard_normal((len(labels), self.dim)) * self.noise
        for i, y in enumerate(labels):
            y = int(y)
            if y in self.informative:
                out[i] += self.means[y]
            elif self.informative:
                out[i] += self.means[self.informative[rng.integers(len(self.informative))]]
            if self.cue_sign is not None:
                out[i] += self.cue_sign(y) * self.cue * self.group_dir
        return out


def synth_generate(spec: SynthSpec, seed: int) -> DatasetSplit:
    """Deterministically generate a train/val/test corpus for ``spec``."""
    spec.validate()
    c = spec.num_classes
    every = set(range(c))
    half = c // 2
    lower, upper = set(range(half)), set(range(half, c))
    cue = None
    if spec.mode == "both":
        text_inf, audio_inf = every, every
    elif spec.mode == "text-only-informative":
        text_inf, audio_inf = every, set()
    elif spec.mode == "audio-only-informative":
        text_inf, audio_inf = set(), every
    else:
        text_inf, audio_inf = lower, upper
        cue = lambda y: -1.0 if y < half else 1.0  # noqa: E731
    text_model = _ModalityModel(generator(seed, "synth", "means", "text"), spec, spec.f_t, text_inf, cue)
    audio_model = _ModalityModel(generator(seed, "synth", "means", "audio"), spec, spec.f_a, audio_inf, cue)

    def make(split: str, count: int) -> list[Dialogue]:
        rng = generator(seed, "synth", split)
        out = []
        for i in range(count):
            n = int(rng.integers(spec.min_len, spec.max_len + 1))
            labels = rng.integers(0, c, size=n)
            out.append(Dialogue(f"{split}_{i:05d}", text_model.sample(rng, labels), audio_model.sample(rng, labels), labels))
        return out

    header = FeatureHeader(spec.f_t, spec.f_a, c, spec.labels())
    return DatasetSplit(
        header,
        make("train", spec.train_dialogues),
        make("val", spec.val_dialogues),
        make("test", spec.test_dialogues),
    )


def write_split(directory, split: DatasetSplit) -> dict[str, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name in ("train", "val", "test"):
        paths[name] = directory / f"{name}.jsonl"
        write_feature_file(paths[name], split.header, getattr(split, name))
    return paths


def stats_table(split: DatasetSplit) -> dict:
    """Per-split class counts laid out like a dataset-distribution table."""
    counts = split.class_counts()
    rows = {name: dict(zip(split.header.labels, vals), total=sum(vals)) for name, vals in counts.items()}
    return {
        "labels": list(split.header.labels),
        "splits": rows,
        "dialogues": {"train": len(split.train), "val": len(split.val), "test": len(split.test)},
    }

