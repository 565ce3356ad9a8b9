"""Subword vocabulary, greedy longest-match tokenization and BIO alignment."""

from __future__ import annotations

import heapq
import unicodedata
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ConfigError, DataError

PAD, UNK, CLS, SEP = "[PAD]", "[UNK]", "[CLS]", "[SEP]"
RESERVED = (PAD, UNK, CLS, SEP)
PAD_ID, UNK_ID, CLS_ID, SEP_ID = range(4)
CONT = "##"
MAX_WORD_CHARS = 100


def is_punctuation(ch: str) -> bool:
    cp = ord(ch)
    if 33 <= cp <= 47 or 58 <= cp <= 64 or 91 <= cp <= 96 or 123 <= cp <= 126:
        return True
    return unicodedata.category(ch).startswith("P")


def split_words(text: str) -> list[tuple[str, int, int]]:
    """Whitespace split with punctuation detached; yields ``(word, start, end)``."""
    words = []
    start = None
    for i, ch in enumerate(text):
        if ch.isspace() or is_punctuation(ch):
            if start is not None:
                words.append((text[start:i], start, i))
                start = None
            if not ch.isspace():
                words.append((ch, i, i + 1))
        elif start is None:
            start = i
    if start is not None:
        words.append((text[start:], start, len(text)))
    return words


class Vocab:
    """Dense token <-> id map; the four reserved tokens occupy ids 0..3."""

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[: len(RESERVED)]) != RESERVED:
            raise DataError(f"vocabulary must start with {RESERVED}")
        self.itos = tokens
        self.stoi = {}
        for i, tok in enumerate(tokens):
            if tok in self.stoi:
                raise DataError(f"duplicate vocabulary entry {tok!r}")
            self.stoi[tok] = i

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.itos == other.itos

    def id(self, token: str) -> int:
        return self.stoi.get(token, UNK_ID)

    def token(self, idx: int) -> str:
        return self.itos[idx]

    def save(self, path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.itos), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(lines)


def _word_symbols(word: str) -> list[str]:
    return [word[0]] + [CONT + ch for ch in word[1:]]


def _merge_symbol(a: str, b: str) -> str:
    return a + b[len(CONT):]


def build_vocab(corpus: Iterable[str], target_size: int, lowercase: bool = True) -> Vocab:
    """Learn subword units by repeatedly merging the most frequent adjacent pair.

    Words start as characters (non-initial ones carry the ``##`` prefix). Each
    round merges the adjacent symbol pair with the highest corpus frequency,
    ties broken by the lexicographically smallest pair, until the vocabulary
    holds ``target_size`` entries or no pair is left.
    """
    if target_size <= len(RESERVED):
        raise ConfigError(f"target_size {target_size} must exceed the {len(RESERVED)} reserved tokens")
    freq: Counter = Counter()
    for text in corpus:
        if lowercase:
            text = text.lower()
        for word, _, _ in split_words(text):
            if len(word) <= MAX_WORD_CHARS:
                freq[word] += 1
    if not freq:
        raise DataError("cannot build a vocabulary from an empty corpus")

    words = list(freq)
    counts = [freq[w] for w in words]
    seqs = [_word_symbols(w) for w in words]
    vocab = list(RESERVED)
    seen = set(vocab)
    for seq in seqs:
        for sym in seq:
            if sym not in seen:
                seen.add(sym)
                vocab.append(sym)
    if target_size <= len(vocab):
        raise ConfigError(
            f"target_size {target_size} must exceed reserved + alphabet size ({len(vocab)})"
        )

    pair_counts: Counter = Counter()
    where: dict[tuple[str, str], set[int]] = {}
    for wi, seq in enumerate(seqs):
        for pair in zip(seq, seq[1:]):
            pair_counts[pair] += counts[wi]
            where.setdefault(pair, set()).add(wi)
    heap = [(-c, pair) for pair, c in pair_counts.items()]
    heapq.heapify(heap)

    while len(vocab) < target_size and heap:
        negc, pair = heapq.heappop(heap)
        if pair_counts.get(pair, 0) != -negc or negc == 0:
            continue
        merged = _merge_symbol(*pair)
        if merged not in seen:
            seen.add(merged)
            vocab.append(merged)
        touched: set[tuple[str, str]] = set()
        for wi in sorted(where.pop(pair, ())):
            seq = seqs[wi]
            c = counts[wi]
            for old in zip(seq, seq[1:]):
                pair_counts[old] -= c
                touched.add(old)
            out, i = [], 0
            while i < len(seq):
                if i + 1 < len(seq) and (seq[i], seq[i + 1]) == pair:
                    out.append(merged)
                    i += 2
                else:
                    out.append(seq[i])
                    i += 1
            seqs[wi] = out
            for new in zip(out, out[1:]):
                pair_counts[new] += c
                where.setdefault(new, set()).add(wi)
                touched.add(new)
        pair_counts.pop(pair, None)
        for p in touched:
            c = pair_counts.get(p, 0)
            if c > 0:
                heapq.heappush(heap, (-c, p))
            else:
                pair_counts.pop(p, None)
    return Vocab(vocab)


def wordpiece(word: str, vocab: Vocab) -> list[int]:
    """Greedy longest-prefix segmentation of one word; any miss gives ``[UNK]``."""
    if len(word) > MAX_WORD_CHARS:
        return [UNK_ID]
    pieces = []
    start = 0
    while start < len(word):
        end = len(word)
        found = None
        while start < end:
            sub = word[start:end] if start == 0 else CONT + word[start:end]
            if sub in vocab.stoi:
                found = vocab.stoi[sub]
                break
            end -= 1
        if found is None:
            return [UNK_ID]
        pieces.append(found)
        start = end
    return pieces


class Tokenizer:
    def __init__(self, vocab: Vocab, lowercase: bool = True):
        self.vocab = vocab
        self.lowercase = lowercase

    def words(self, text: str) -> list[tuple[str, int, int]]:
        return split_words(text)

    def word_pieces(self, words: Iterable[str]) -> list[list[int]]:
        return [wordpiece(w.lower() if self.lowercase else w, self.vocab) for w in words]

    def tokenize(self, text: str) -> tuple[list[int], list[bool]]:
        return tokenize(text, self.vocab, self.lowercase)


def tokenize(text: str, vocab: Vocab, lowercase: bool = True) -> tuple[list[int], list[bool]]:
    """Token ids for ``text`` plus a flag marking the first piece of each word."""
    ids: list[int] = []
    starts: list[bool] = []
    for word, _, _ in split_words(text):
        pieces = wordpiece(word.lower() if lowercase else word, vocab)
        ids.extend(pieces)
        starts.extend([True] + [False] * (len(pieces) - 1))
    return ids, starts


@dataclass(frozen=True)
class TokenizedExample:
    input_ids: tuple[int, ...]
    segment_ids: tuple[int, ...]
    position_ids: tuple[int, ...]
    attention_mask: tuple[int, ...]
    word_starts: tuple[bool, ...]

    def __len__(self) -> int:
        return len(self.input_ids)

    @property
    def length(self) -> int:
        """Number of real (unpadded) positions."""
        return sum(self.attention_mask)


def _finish(ids: list[int], segs: list[int], starts: list[bool], max_len: int) -> TokenizedExample:
    n = len(ids)
    pad = max_len - n
    return TokenizedExample(
        input_ids=tuple(ids + [PAD_ID] * pad),
        segment_ids=tuple(segs + [0] * pad),
        position_ids=tuple(range(max_len)),
        attention_mask=tuple([1] * n + [0] * pad),
        word_starts=tuple(starts + [False] * pad),
    )


def encode_sequence(
    tokens: Sequence[int], max_len: int, word_starts: Sequence[bool] | None = None
) -> TokenizedExample:
    """``[CLS] t1 .. tn [SEP]`` right-padded to ``max_len``; long inputs lose their tail."""
    if max_len < 3:
        raise ConfigError(f"max_len must be at least 3, got {max_len}")
    if not tokens:
        raise DataError("cannot encode an empty token sequence")
    if word_starts is None:
        word_starts = [True] * len(tokens)
    if len(word_starts) != len(tokens):
        raise DataError("word_starts must align with tokens")
    body = list(tokens[: max_len - 2])
    flags = list(word_starts[: max_len - 2])
    ids = [CLS_ID] + body + [SEP_ID]
    return _finish(ids, [0] * len(ids), [False] + flags + [False], max_len)


def encode_pair(
    first: Sequence[int],
    second: Sequence[int],
    max_len: int,
    first_starts: Sequence[bool] | None = None,
) -> TokenizedExample:
    """``[CLS] first [SEP] second [SEP]`` with segment ids 0 / 1.

    When too long, ``first`` is truncated from the right before ``second`` is.
    """
    if max_len < 5:
        raise ConfigError(f"max_len must be at least 5 for a pair, got {max_len}")
    if not first or not second:
        raise DataError("cannot encode an empty segment")
    if first_starts is None:
        first_starts = [True] * len(first)
    room = max_len - 3
    second = list(second[: max(1, room - 1)])
    first_keep = room - len(second)
    a = list(first[:first_keep])
    flags = list(first_starts[:first_keep])
    ids = [CLS_ID] + a + [SEP_ID] + second + [SEP_ID]
    segs = [0] * (len(a) + 2) + [1] * (len(second) + 1)
    starts = [False] + flags + [False] * (len(second) + 2)
    return _finish(ids, segs, starts, max_len)


def decode(example: TokenizedExample) -> list[int]:
    """Token ids of the example with specials and padding stripped."""
    return [
        t
        for t, m in zip(example.input_ids, example.attention_mask)
        if m and t not in (CLS_ID, SEP_ID, PAD_ID)
    ]


def align_bio(word_labels: Sequence[str], word_starts: Sequence[bool]) -> tuple[list[str], list[int]]:
    """Spread word-level BIO labels over subword positions.

    The first piece of each word carries the word's label with score mask 1.
    Continuation pieces, and any position before the first word start, get
    label ``"O"`` with score mask 0 so they are ignored by loss and metrics.
    """
    if sum(bool(s) for s in word_starts) != len(word_labels):
        raise DataError(
            f"{len(word_labels)} word labels for {sum(bool(s) for s in word_starts)} word starts"
        )
    labels: list[str] = []
    mask: list[int] = []
    w = -1
    for flag in word_starts:
        if flag:
            w += 1
            labels.append(word_labels[w])
            mask.append(1)
        else:
            labels.append("O")
            mask.append(0)
    return labels, mask
