"""Task definitions: kinds, preprocessing markers, BIO conversion, heads,
losses and evaluation metrics.

Task kinds are sequence regression (scalar score in [-1, 1]), sequence
classification (k classes) and token classification (k tags). Each task owns
a single affine head over the encoder output; classification heads are
followed by a softmax, the regression head is affine only since its output
is a scalar score.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Param, Tensor
from .backbone import Encoding
from .errors import ConfigError, ContractError, DataError, ShapeError

# Reserved vocabulary ids. Content tokens start at FIRST_CONTENT_ID.
PAD_ID = 0
UNK_ID = 1
COMPANY_MARKER_ID = 2
NUMBER_MARKER_ID = 3
FIRST_CONTENT_ID = 4

MARKER_IDS = {"company": COMPANY_MARKER_ID, "number": NUMBER_MARKER_ID}

KINDS = ("seq_regression", "seq_classification", "token_classification")
METRICS = ("rmse", "accuracy", "token_accuracy", "entity_macro_f1")

_METRIC_KINDS = {
    "rmse": ("seq_regression",),
    "accuracy": ("seq_classification",),
    "token_accuracy": ("token_classification",),
    "entity_macro_f1": ("token_classification",),
}

# Metrics where lower is better (checkpoint selection uses argmin).
LOWER_IS_BETTER = {"rmse"}


@dataclass(frozen=True)
class TaskSpec:
    id: str
    kind: str
    metric: str
    num_classes: int = 1
    batch_size: int = 16
    weight: float = 1.0
    tag_names: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown task kind {self.kind!r}")
        if self.metric not in METRICS:
            raise ConfigError(f"unknown metric {self.metric!r}")
        if self.kind not in _METRIC_KINDS[self.metric]:
            raise ConfigError(
                f"metric {self.metric!r} incompatible with kind {self.kind!r}")
        if self.kind != "seq_regression" and self.num_classes < 2:
            raise ConfigError("classification kinds need num_classes >= 2")
        if self.batch_size <= 0:
            raise ConfigError("batch_size must be positive")
        if self.weight <= 0:
            raise ConfigError("task weight must be positive")
        if self.kind == "token_classification":
            if len(self.tag_names) != self.num_classes:
                raise ConfigError("tag_names must have num_classes entries")

    @property
    def output_dim(self) -> int:
        return 1 if self.kind == "seq_regression" else self.num_classes


@dataclass
class TaskExample:
    token_ids: np.ndarray
    label: object  # float | int | np.ndarray of tag indices
    target_span: tuple[int, int] | None = None
    spans: list | None = None  # (start, end, label_idx) provenance for tag tasks
    latent: np.ndarray | None = None

    def __post_init__(self):
        self.token_ids = np.asarray(self.token_ids, dtype=np.int64)


def validate_example(spec: TaskSpec, ex: TaskExample) -> TaskExample:
    """Check label shape/range against the task kind; clamp regression scores."""
    if spec.kind == "seq_regression":
        ex.label = float(np.clip(float(ex.label), -1.0, 1.0))
    elif spec.kind == "seq_classification":
        lbl = int(ex.label)
        if not 0 <= lbl < spec.num_classes:
            raise DataError(f"class label {lbl} out of range for task {spec.id}")
        ex.label = lbl
    else:
        tags = np.asarray(ex.label, dtype=np.int64)
        if tags.shape != ex.token_ids.shape:
            raise DataError(
                f"tag sequence length {tags.shape} != token length "
                f"{ex.token_ids.shape} for task {spec.id}")
        if tags.size and (tags.min() < 0 or tags.max() >= spec.num_classes):
            raise DataError(f"tag index out of range for task {spec.id}")
        ex.label = tags
    return ex


# ---------------------------------------------------------------------------
# preprocessing
# ---------------------------------------------------------------------------

def insert_target_markers(token_ids, span: tuple[int, int], marker_kind: str):
    """Wrap the inclusive span [start, end] with reserved marker tokens."""
    ids = np.asarray(token_ids, dtype=np.int64)
    start, end = span
    if marker_kind not in MARKER_IDS:
        raise DataError(f"unknown marker kind {marker_kind!r}")
    if start > end:
        raise DataError(f"empty or inverted span ({start}, {end})")
    if start < 0 or end >= ids.shape[0]:
        raise DataError(f"span ({start}, {end}) out of bounds for length {ids.shape[0]}")
    m = MARKER_IDS[marker_kind]
    return np.concatenate([ids[:start], [m], ids[start:end + 1], [m], ids[end + 1:]])


def strip_target_markers(token_ids):
    """Remove all marker tokens; inverse of insert_target_markers."""
    ids = np.asarray(token_ids, dtype=np.int64)
    keep = (ids != COMPANY_MARKER_ID) & (ids != NUMBER_MARKER_ID)
    return ids[keep]


def spans_to_bio(length: int, spans: list[tuple[int, int, str]]) -> list[str]:
    """Inclusive (start, end, label) spans -> BIO tag strings."""
    tags = ["O"] * length
    seen: list[tuple[int, int, str]] = []
    for start, end, label in sorted(spans):
        if start > end or start < 0 or end >= length:
            raise DataError(f"span ({start}, {end}) invalid for length {length}")
        for s2, e2, l2 in seen:
            if start <= e2 and s2 <= end:
                raise DataError(
                    f"overlapping spans ({s2}, {e2}, {l2!r}) and "
                    f"({start}, {end}, {label!r})")
        seen.append((start, end, label))
        tags[start] = f"B-{label}"
        for i in range(start + 1, end + 1):
            tags[i] = f"I-{label}"
    return tags


def bio_to_spans(tags: list[str]) -> list[tuple[int, int, str]]:
    """Extract (start, end, label) chunks from BIO tags, seqeval-style:
    an I-X without a live X chunk opens a new one."""
    spans: list[tuple[int, int, str]] = []
    start, label = None, None
    for i, tag in enumerate(tags + ["O"]):
        if tag.startswith("B-"):
            if start is not None:
                spans.append((start, i - 1, label))
            start, label = i, tag[2:]
        elif tag.startswith("I-"):
            if start is None or tag[2:] != label:
                if start is not None:
                    spans.append((start, i - 1, label))
                start, label = i, tag[2:]
        else:
            if start is not None:
                spans.append((start, i - 1, label))
            start, label = None, None
    return spans


# ---------------------------------------------------------------------------
# heads
# ---------------------------------------------------------------------------

class Head:
    """Single affine projection d -> output_dim for one task."""

    def __init__(self, spec: TaskSpec, model_dim: int, seed: int):
        rng = np.random.default_rng(seed)
        name = f"head.{spec.id}"
        self.spec = spec
        self.w = Param(rng.normal(0.0, 0.02, (model_dim, spec.output_dim)),
                       name=f"{name}.w")
        self.b = Param(np.zeros(spec.output_dim), name=f"{name}.b")

    @property
    def params(self) -> dict[str, Param]:
        return {self.w.name: self.w, self.b.name: self.b}


def head_forward(encoding: Encoding, head: Head) -> Tensor:
    """Predictions for one example.

    seq_regression -> scalar; seq_classification -> k probabilities;
    token_classification -> [seq, k] per-token probabilities.
    """
    spec = head.spec
    if encoding.final().data.shape[-1] != head.w.data.shape[0]:
        raise ShapeError(
            f"representation dim {encoding.final().data.shape[-1]} != head "
            f"input dim {head.w.data.shape[0]}")
    if spec.kind == "token_classification":
        logits = ad.add_bias(ad.matmul(encoding.final(), head.w), head.b)
        return ad.softmax_rows(logits)
    pooled = encoding.pooled_first()
    logits = ad.add_bias(ad.matmul(ad.reshape(pooled, (1, -1)), head.w), head.b)
    if spec.kind == "seq_regression":
        return ad.reshape(logits, ())
    return ad.reshape(ad.softmax_rows(logits), (spec.num_classes,))


def task_loss(spec: TaskSpec, predictions: Tensor, label,
              mask: np.ndarray | None = None) -> Tensor:
    """Per-example loss node: squared error for regression, mean NLL over
    (non-padding) positions for the classification kinds."""
    if spec.kind == "seq_regression":
        diff = ad.add_const(predictions, -float(label))
        return ad.square(diff)
    if spec.kind == "seq_classification":
        lbl = int(label)
        if not 0 <= lbl < spec.num_classes:
            raise DataError(f"label {lbl} out of class range")
        p = ad.pick(ad.reshape(predictions, (1, spec.num_classes)), np.array([lbl]))
        return ad.neg(ad.reshape(ad.log(p), ()))
    tags = np.asarray(label, dtype=np.int64)
    if mask is None:
        mask = np.ones(tags.shape, dtype=bool)
    if tags.size and (tags[mask].min() < 0 or tags[mask].max() >= spec.num_classes):
        raise DataError("tag index out of class range")
    picked = ad.pick(predictions, np.where(mask, tags, 0))
    nll = ad.neg(ad.log(picked))
    return ad.reshape(ad.masked_mean_rows(ad.reshape(nll, (-1, 1)), mask), ())


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def entity_macro_f1(gold_tag_seqs: list[list[str]],
                    pred_tag_seqs: list[list[str]]) -> float:
    """Exact-boundary, exact-label chunk matching, macro-averaged over
    entity labels present in gold or predictions."""
    gold: dict[str, set] = {}
    pred: dict[str, set] = {}
    for si, (g, p) in enumerate(zip(gold_tag_seqs, pred_tag_seqs)):
        for start, end, label in bio_to_spans(list(g)):
            gold.setdefault(label, set()).add((si, start, end))
        for start, end, label in bio_to_spans(list(p)):
            pred.setdefault(label, set()).add((si, start, end))
    labels = sorted(set(gold) | set(pred))
    if not labels:
        return 0.0
    f1s = []
    for lbl in labels:
        g = gold.get(lbl, set())
        p = pred.get(lbl, set())
        tp = len(g & p)
        prec = tp / len(p) if p else 0.0
        rec = tp / len(g) if g else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec > 0 else 0.0
        f1s.append(f1)
    return float(np.mean(f1s))


def task_metric(spec: TaskSpec, predictions: list, labels: list) -> float:
    """Evaluate a full split. predictions/labels are parallel per-example
    lists of plain numpy values (no autodiff nodes)."""
    if not predictions:
        raise ContractError("task_metric requires a non-empty split")
    if len(predictions) != len(labels):
        raise ContractError("predictions/labels length mismatch")
    if spec.metric == "rmse":
        preds = np.asarray(predictions, dtype=np.float64)
        gold = np.asarray(labels, dtype=np.float64)
        return float(np.sqrt(np.mean((preds - gold) ** 2)))
    if spec.metric == "accuracy":
        hits = sum(int(np.argmax(p) == int(y)) for p, y in zip(predictions, labels))
        return 100.0 * hits / len(predictions)
    if spec.metric == "token_accuracy":
        correct = total = 0
        for p, y in zip(predictions, labels):
            y = np.asarray(y, dtype=np.int64)
            correct += int((np.argmax(p, axis=-1) == y).sum())
            total += y.size
        return 100.0 * correct / total
    # entity_macro_f1
    gold_seqs, pred_seqs = [], []
    for p, y in zip(predictions, labels):
        y = np.asarray(y, dtype=np.int64)
        gold_seqs.append([spec.tag_names[t] for t in y])
        pred_seqs.append([spec.tag_names[t] for t in np.argmax(p, axis=-1)])
    return 100.0 * entity_macro_f1(gold_seqs, pred_seqs)


def task_spec_to_dict(spec: TaskSpec) -> dict:
    return {
        "id": spec.id, "kind": spec.kind, "metric": spec.metric,
        "num_classes": spec.num_classes, "batch_size": spec.batch_size,
        "weight": spec.weight, "tag_names": list(spec.tag_names),
    }


def task_spec_from_dict(d: dict) -> TaskSpec:
    return TaskSpec(id=d["id"], kind=d["kind"], metric=d["metric"],
                    num_classes=d.get("num_classes", 1),
                    batch_size=d.get("batch_size", 16),
                    weight=d.get("weight", 1.0),
                    tag_names=tuple(d.get("tag_names", ())))


@dataclass
class TaskData:
    """One task's spec plus its train/dev/test splits."""

    spec: TaskSpec
    train: list = field(default_factory=list)
    dev: list = field(default_factory=list)
    test: list = field(default_factory=list)

    def split(self, name: str) -> list:
        return getattr(self, name)


def better(spec: TaskSpec, a: float, b: float) -> bool:
    """True if score a is strictly better than b under the task's metric."""
    if spec.metric in LOWER_IS_BETTER:
        return a < b
    return a > b
