"""Exact-match span F1 for AE; accuracy and macro-F1 for ASC."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence

from .errors import UsageError

Span = tuple[int, int]
_TAG_BY_ID = {0: "O", 1: "B", 2: "I"}


def _tag(label) -> str:
    return _TAG_BY_ID[label] if isinstance(label, int) or hasattr(label, "__index__") else str(label)


def decode_bio(labels: Sequence) -> frozenset[Span]:
    """Inclusive ``(start, end)`` word spans from a BIO sequence.

    B always opens a new span; I extends the live span or, when none is
    live, opens one (lenient decoding). Labels may be strings or 0/1/2 ids.
    """
    spans = []
    start = None
    for i, raw in enumerate(labels):
        tag = _tag(raw)
        if tag == "B" or (tag == "I" and start is None):
            if start is not None:
                spans.append((start, i - 1))
            start = i
        elif tag != "I":
            if start is not None:
                spans.append((start, i - 1))
            start = None
    if start is not None:
        spans.append((start, len(labels) - 1))
    return frozenset(spans)


def encode_bio(spans, length: int) -> list[str]:
    tags = ["O"] * length
    for a, b in spans:
        tags[a] = "B"
        for i in range(a + 1, b + 1):
            tags[i] = "I"
    return tags


def _prf(tp: int, n_pred: int, n_gold: int) -> tuple[float, float, float]:
    p = tp / n_pred if n_pred else 0.0
    r = tp / n_gold if n_gold else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


def span_f1(pred: Sequence, gold: Sequence) -> tuple[float, float, float]:
    """Micro precision, recall and F1 with exact span matching.

    Predicted spans are de-duplicated per sentence. When neither side has
    any span the corpus scores 1.0 on all three.
    """
    if len(pred) != len(gold):
        raise UsageError(f"{len(pred)} predicted sentences vs {len(gold)} gold sentences")
    tp = n_pred = n_gold = 0
    for p, g in zip(pred, gold):
        p, g = set(p), set(g)
        tp += len(p & g)
        n_pred += len(p)
        n_gold += len(g)
    if n_pred == 0 and n_gold == 0:
        return 1.0, 1.0, 1.0
    return _prf(tp, n_pred, n_gold)


def accuracy(pred: Sequence[int], gold: Sequence[int]) -> float:
    if len(pred) != len(gold):
        raise UsageError("prediction and gold lengths differ")
    if not gold:
        raise UsageError("accuracy of an empty label list is undefined")
    return sum(int(p == g) for p, g in zip(pred, gold)) / len(gold)


def per_class_prf(pred: Sequence[int], gold: Sequence[int], classes: int = 3) -> dict[int, dict]:
    if len(pred) != len(gold):
        raise UsageError("prediction and gold lengths differ")
    for lab in list(pred) + list(gold):
        if not 0 <= lab < classes:
            raise ValueError(f"label {lab} outside [0, {classes})")
    table = {}
    for c in range(classes):
        tp = sum(1 for p, g in zip(pred, gold) if p == c and g == c)
        n_pred = sum(1 for p in pred if p == c)
        n_gold = sum(1 for g in gold if g == c)
        p, r, f = _prf(tp, n_pred, n_gold)
        table[c] = {"precision": p, "recall": r, "f1": f, "support": n_gold, "predicted": n_pred}
    return table


def macro_f1(pred: Sequence[int], gold: Sequence[int], classes: int = 3) -> float:
    """Mean per-class F1 over classes present in gold or predictions."""
    if not gold:
        raise UsageError("macro-F1 of an empty label list is undefined")
    table = per_class_prf(pred, gold, classes)
    present = [row["f1"] for row in table.values() if row["support"] or row["predicted"]]
    return sum(present) / len(present)


REPORT_COLUMNS = (
    "task", "split", "seed", "config", "f1", "precision", "recall", "accuracy", "macro_f1", "support",
)


@dataclass
class MetricsReport:
    task: str
    split: str = "test"
    seed: int | None = None
    config: str = ""
    f1: float | None = None
    precision: float | None = None
    recall: float | None = None
    accuracy: float | None = None
    macro_f1: float | None = None
    support: int = 0
    per_class: dict = field(default_factory=dict)

    @property
    def primary(self) -> float:
        return self.f1 if self.task == "ae" else self.accuracy

    def values(self) -> dict[str, float]:
        keys = ("f1", "precision", "recall") if self.task == "ae" else ("accuracy", "macro_f1")
        return {k: getattr(self, k) for k in keys}

    def csv_row(self) -> str:
        buf = io.StringIO()
        row = ["" if getattr(self, c) is None else getattr(self, c) for c in REPORT_COLUMNS]
        csv.writer(buf, lineterminator="\n").writerow([repr(v) if isinstance(v, float) else v for v in row])
        return buf.getvalue()

    def text(self) -> str:
        lines = [f"task={self.task} split={self.split} seed={self.seed} config={self.config}"]
        for k, v in self.values().items():
            lines.append(f"  {k:<10} {v:.4f}")
        for name, row in self.per_class.items():
            lines.append(
                f"  {name:<10} P={row['precision']:.4f} R={row['recall']:.4f} "
                f"F1={row['f1']:.4f} support={row['support']}"
            )
        lines.append(f"  support    {self.support}")
        return "\n".join(lines)


def ae_report(pred_tags: Sequence[Sequence], gold_tags: Sequence[Sequence], **kw) -> MetricsReport:
    pred = [decode_bio(t) for t in pred_tags]
    gold = [decode_bio(t) for t in gold_tags]
    p, r, f = span_f1(pred, gold)
    n_gold = sum(len(g) for g in gold)
    per = {"aspect": {"precision": p, "recall": r, "f1": f, "support": n_gold}}
    return MetricsReport("ae", f1=f, precision=p, recall=r, support=n_gold, per_class=per, **kw)


def asc_report(pred: Sequence[int], gold: Sequence[int], class_names=("positive", "negative", "neutral"), **kw) -> MetricsReport:
    table = per_class_prf(pred, gold, len(class_names))
    per = {class_names[c]: row for c, row in table.items()}
    return MetricsReport(
        "asc", accuracy=accuracy(pred, gold), macro_f1=macro_f1(pred, gold, len(class_names)),
        support=len(gold), per_class=per, **kw,
    )
