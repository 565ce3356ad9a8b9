"""SemEval ABSA parsing and conversion into AE / ASC training examples."""

from __future__ import annotations

import json
import xml.etree.ElementTree as ET
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import DataError, ParseError
from .tokenizer import TokenizedExample, Tokenizer, align_bio, encode_pair, encode_sequence

POLARITIES = ("positive", "negative", "neutral", "conflict", "none")
ASC_LABELS = ("positive", "negative", "neutral")
BIO_LABELS = ("O", "B", "I")
VALIDATION_SIZE = 150


@dataclass(frozen=True)
class AspectSpan:
    term: str
    char_from: int
    char_to: int
    polarity: str = "none"


@dataclass(frozen=True)
class RawSentence:
    id: str
    text: str
    aspects: tuple[AspectSpan, ...] = ()


@dataclass(frozen=True)
class AEExample:
    example: TokenizedExample
    labels: tuple[int, ...]
    score_mask: tuple[int, ...]
    sentence_id: str = ""

    task = "ae"

    def word_labels(self) -> list[str]:
        """Gold BIO tags of the scored (word-initial) positions."""
        return [BIO_LABELS[l] for l, m in zip(self.labels, self.score_mask) if m]


@dataclass(frozen=True)
class ASCExample:
    example: TokenizedExample
    aspect: str
    label: int
    sentence_id: str = ""

    task = "asc"

    @property
    def polarity(self) -> str:
        return ASC_LABELS[self.label]


# ---------------------------------------------------------------------------
# XML parsing
# ---------------------------------------------------------------------------


def _parse_xml(source) -> ET.Element:
    try:
        if isinstance(source, (bytes, str)) and not _looks_like_path(source):
            return ET.fromstring(source)
        return ET.parse(str(source)).getroot()
    except ET.ParseError as exc:
        line, col = exc.position
        raise ParseError(f"malformed XML at line {line}, column {col}: {exc}") from exc


def _looks_like_path(source) -> bool:
    if isinstance(source, bytes):
        return False
    return "<" not in source


def _span(sid: str, text: str, term: str, start: str | None, end: str | None, polarity: str) -> AspectSpan:
    try:
        a, b = int(start), int(end)
    except (TypeError, ValueError):
        raise DataError(f"sentence {sid}: aspect {term!r} has invalid offsets {start!r}, {end!r}") from None
    if not 0 <= a < b <= len(text):
        raise DataError(f"sentence {sid}: aspect {term!r} offsets [{a}, {b}) out of bounds")
    if text[a:b] != term:
        raise DataError(f"sentence {sid}: text[{a}:{b}] = {text[a:b]!r} does not match term {term!r}")
    polarity = (polarity or "none").lower()
    if polarity not in POLARITIES:
        raise DataError(f"sentence {sid}: unknown polarity {polarity!r}")
    return AspectSpan(term, a, b, polarity)


def _check_overlaps(sid: str, spans: Sequence[AspectSpan]) -> tuple[AspectSpan, ...]:
    ordered = sorted(spans, key=lambda s: (s.char_from, s.char_to))
    for prev, cur in zip(ordered, ordered[1:]):
        if cur.char_from < prev.char_to:
            raise DataError(f"sentence {sid}: overlapping aspects {prev.term!r} and {cur.term!r}")
    return tuple(spans)


def parse_semeval2014(source) -> list[RawSentence]:
    """Parse a SemEval 2014 task 4 document (``sentence/aspectTerms/aspectTerm``)."""
    root = _parse_xml(source)
    out = []
    for sent in root.iter("sentence"):
        sid = sent.get("id", "")
        text_el = sent.find("text")
        if text_el is None:
            raise DataError(f"sentence {sid}: missing <text>")
        text = text_el.text or ""
        spans = [
            _span(sid, text, a.get("term", ""), a.get("from"), a.get("to"), a.get("polarity"))
            for a in sent.iter("aspectTerm")
        ]
        out.append(RawSentence(sid, text, _check_overlaps(sid, spans)))
    return out


def parse_semeval2016(source) -> list[RawSentence]:
    """Parse a SemEval 2016 task 5 document (``Review/sentences/sentence/Opinions``).

    Opinions with target ``NULL`` are skipped. Several opinions may share one
    target span (one per aspect category); they collapse into a single
    aspect, whose polarity becomes ``conflict`` when the opinions disagree.
    """
    root = _parse_xml(source)
    out = []
    for sent in root.iter("sentence"):
        sid = sent.get("id", "")
        text_el = sent.find("text")
        if text_el is None:
            raise DataError(f"sentence {sid}: missing <text>")
        text = text_el.text or ""
        by_span: dict[tuple[int, int], AspectSpan] = {}
        for op in sent.iter("Opinion"):
            target = op.get("target", "NULL")
            if target == "NULL":
                continue
            span = _span(sid, text, target, op.get("from"), op.get("to"), op.get("polarity"))
            key = (span.char_from, span.char_to)
            prev = by_span.get(key)
            if prev is None:
                by_span[key] = span
            elif prev.polarity != span.polarity:
                by_span[key] = AspectSpan(prev.term, prev.char_from, prev.char_to, "conflict")
        out.append(RawSentence(sid, text, _check_overlaps(sid, list(by_span.values()))))
    return out


def parse_semeval(source, schema: str) -> list[RawSentence]:
    if schema in ("2014", 2014):
        return parse_semeval2014(source)
    if schema in ("2016", 2016):
        return parse_semeval2016(source)
    raise DataError(f"unknown SemEval schema {schema!r}; expected 2014 or 2016")


def count_aspects(sentences: Iterable[RawSentence]) -> int:
    return sum(len(s.aspects) for s in sentences)


def polarity_counts(sentences: Iterable[RawSentence]) -> dict[str, int]:
    counts = {p: 0 for p in POLARITIES}
    for s in sentences:
        for a in s.aspects:
            counts[a.polarity] += 1
    return counts


# ---------------------------------------------------------------------------
# task examples
# ---------------------------------------------------------------------------


def word_bio(sentence: RawSentence, words: Sequence[tuple[str, int, int]]) -> list[str]:
    """Word-level BIO tags from character spans.

    The first word overlapping a span is B, later overlapping words are I.
    """
    tags = ["O"] * len(words)
    for asp in sorted(sentence.aspects, key=lambda a: a.char_from):
        hit = [
            i
            for i, (_, a, b) in enumerate(words)
            if a < asp.char_to and b > asp.char_from and tags[i] == "O"
        ]
        if not hit:
            raise DataError(f"sentence {sentence.id}: aspect {asp.term!r} covers no word")
        tags[hit[0]] = "B"
        for i in hit[1:]:
            tags[i] = "I"
    return tags


def make_ae_examples(sentences: Iterable[RawSentence], tokenizer: Tokenizer, max_len: int = 64) -> list[AEExample]:
    out = []
    for sent in sentences:
        words = tokenizer.words(sent.text)
        if not words:
            raise DataError(f"sentence {sent.id}: no words")
        tags = word_bio(sent, words)
        pieces = tokenizer.word_pieces(w for w, _, _ in words)
        ids = [p for ps in pieces for p in ps]
        starts = [j == 0 for ps in pieces for j in range(len(ps))]
        ex = encode_sequence(ids, max_len, starts)
        kept_words = sum(ex.word_starts)
        if any(t != "O" for t in tags[kept_words:]):
            raise DataError(f"sentence {sent.id}: an aspect is truncated away at max_len={max_len}")
        labels, mask = align_bio(tags[:kept_words], ex.word_starts)
        out.append(AEExample(ex, tuple(BIO_LABELS.index(l) for l in labels), tuple(mask), sent.id))
    return out


def make_asc_examples(sentences: Iterable[RawSentence], tokenizer: Tokenizer, max_len: int = 64) -> list[ASCExample]:
    """One example per aspect whose polarity is positive, negative or neutral."""
    out = []
    for sent in sentences:
        if not sent.aspects:
            continue
        words = tokenizer.words(sent.text)
        pieces = tokenizer.word_pieces(w for w, _, _ in words)
        ids = [p for ps in pieces for p in ps]
        starts = [j == 0 for ps in pieces for j in range(len(ps))]
        for asp in sent.aspects:
            if asp.polarity not in ASC_LABELS:
                continue
            term_ids = [p for ps in tokenizer.word_pieces(w for w, _, _ in tokenizer.words(asp.term)) for p in ps]
            ex = encode_pair(ids, term_ids, max_len, starts)
            out.append(ASCExample(ex, asp.term, ASC_LABELS.index(asp.polarity), sent.id))
    return out


def split_train_validation(examples: Sequence, size: int = VALIDATION_SIZE) -> tuple[list, list]:
    """The last ``size`` examples, in file order, become the validation set."""
    if len(examples) <= size:
        raise DataError(f"need more than {size} examples to split, got {len(examples)}")
    examples = list(examples)
    return examples[:-size], examples[-size:]


# ---------------------------------------------------------------------------
# record files (JSON lines)
# ---------------------------------------------------------------------------


def example_to_record(ex: AEExample | ASCExample) -> dict:
    rec = {"task": ex.task, "sentence_id": ex.sentence_id}
    rec.update({k: list(v) for k, v in asdict(ex.example).items()})
    rec["word_starts"] = [int(b) for b in ex.example.word_starts]
    if isinstance(ex, AEExample):
        rec["labels"] = list(ex.labels)
        rec["score_mask"] = list(ex.score_mask)
    else:
        rec["aspect"] = ex.aspect
        rec["label"] = ex.label
    return rec


def record_to_example(rec: dict) -> AEExample | ASCExample:
    try:
        tok = TokenizedExample(
            input_ids=tuple(rec["input_ids"]),
            segment_ids=tuple(rec["segment_ids"]),
            position_ids=tuple(rec["position_ids"]),
            attention_mask=tuple(rec["attention_mask"]),
            word_starts=tuple(bool(b) for b in rec["word_starts"]),
        )
        if rec["task"] == "ae":
            return AEExample(tok, tuple(rec["labels"]), tuple(rec["score_mask"]), rec.get("sentence_id", ""))
        if rec["task"] == "asc":
            return ASCExample(tok, rec["aspect"], int(rec["label"]), rec.get("sentence_id", ""))
    except KeyError as exc:
        raise DataError(f"record is missing field {exc}") from None
    raise DataError(f"unknown task {rec.get('task')!r} in record")


def write_records(path, examples: Iterable[AEExample | ASCExample]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps(example_to_record(ex), separators=(",", ":")) + "\n")
            n += 1
    return n


def read_records(path) -> list[AEExample | ASCExample]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
            out.append(record_to_example(rec))
    return out


@dataclass
class TaskData:
    """Train / validation / test examples for one task and dataset."""

    task: str
    train: list = field(default_factory=list)
    validation: list = field(default_factory=list)
    test: list = field(default_factory=list)
    vocab_size: int = 0
    name: str = "custom"
