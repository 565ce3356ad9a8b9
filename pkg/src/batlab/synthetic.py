"""Small generated review corpora with aspect spans and polarities.

The sentences are produced by the same templates for AE and ASC so the full
parsing -> tokenization -> example pipeline can be exercised without the
official SemEval files.
"""

from __future__ import annotations

import numpy as np

from .data import AspectSpan, RawSentence, TaskData, make_ae_examples, make_asc_examples
from .tokenizer import Tokenizer, build_vocab

SINGLE = ["pizza", "screen", "battery", "waiter", "keyboard", "price", "pasta", "trackpad", "staff", "menu"]
MULTI = ["hard disk", "battery life", "wine list", "customer service", "sushi bar", "operating system"]
ADJECTIVES = {
    "positive": ["great", "excellent", "amazing", "lovely"],
    "negative": ["awful", "slow", "terrible", "broken"],
    "neutral": ["okay", "average", "standard", "ordinary"],
}
FILLER = ["honestly", "overall", "today", "again", "really"]

_TEMPLATES = (
    "the {a} was {p}",
    "{f} , the {a} was {p} but the {b} was {q} .",
    "i found the {a} {p} and the {b} {q}",
    "{f} nothing special to report",
    "the {a} is {p} !",
)


def _aspect(rng: np.random.Generator) -> str:
    pool = SINGLE if rng.random() < 0.7 else MULTI
    return pool[int(rng.integers(len(pool)))]


def _adjective(rng: np.random.Generator) -> tuple[str, str]:
    pol = ("positive", "negative", "neutral")[int(rng.integers(3))]
    words = ADJECTIVES[pol]
    return words[int(rng.integers(len(words)))], pol


def generate_sentences(n: int, seed: int = 0, prefix: str = "syn") -> list[RawSentence]:
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        template = _TEMPLATES[int(rng.integers(len(_TEMPLATES)))]
        a = _aspect(rng)
        b = _aspect(rng)
        while b == a:
            b = _aspect(rng)
        (p, pol_a), (q, pol_b) = _adjective(rng), _adjective(rng)
        f = FILLER[int(rng.integers(len(FILLER)))]
        text = template.format(a=a, b=b, p=p, q=q, f=f)
        spans = []
        if "{a}" in template:
            start = text.index(f"the {a}") + 4 if "the {a}" in template else text.index(a)
            spans.append(AspectSpan(a, start, start + len(a), pol_a))
        if "{b}" in template:
            start = text.index(f"the {b}", spans[0].char_to) + 4
            spans.append(AspectSpan(b, start, start + len(b), pol_b))
        out.append(RawSentence(f"{prefix}-{i}", text, tuple(spans)))
    return out


def synthetic_task_data(
    task: str,
    n_train: int = 400,
    n_test: int = 100,
    seed: int = 0,
    vocab_size: int = 200,
    max_len: int = 32,
    validation: int = 150,
) -> TaskData:
    """Train / validation / test splits for ``task`` from generated sentences.

    Validation is the tail of the training examples, as with the real data.
    """
    train_s = generate_sentences(n_train, seed, "train")
    test_s = generate_sentences(n_test, seed + 10_000, "test")
    vocab = build_vocab([s.text for s in train_s + test_s], vocab_size)
    tok = Tokenizer(vocab)
    make = make_ae_examples if task == "ae" else make_asc_examples
    train = make(train_s, tok, max_len)
    test = make(test_s, tok, max_len)
    if validation and len(train) > validation:
        val = train[-validation:]
        train = train[:-validation]
    else:
        val = []
    return TaskData(task, train, val, test, vocab_size=len(vocab), name="synthetic")
