"""Miniature BERT-style encoder with token-tagging (AE) and [CLS] (ASC) heads."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigError, UsageError
from .params import ParamSet, truncated_normal
from .tensor import Tensor
from .tokenizer import CLS_ID, SEP_ID

TASKS = ("ae", "asc")
NUM_LABELS = 3
MASK_VALUE = -1e9


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    hidden: int = 64
    layers: int = 2
    heads: int = 2
    ff: int = 256
    max_len: int = 64
    dropout: float = 0.1
    task: str = "ae"
    type_vocab: int = 2
    ln_eps: float = 1e-12

    def __post_init__(self):
        if self.vocab_size < 5:
            raise ConfigError("vocab_size must cover the reserved tokens plus at least one more")
        if self.hidden < 1 or self.layers < 1 or self.heads < 1 or self.ff < 1:
            raise ConfigError("hidden, layers, heads and ff must be positive")
        if self.hidden % self.heads:
            raise ConfigError(f"hidden size {self.hidden} is not divisible by {self.heads} heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.max_len < 3:
            raise ConfigError("max_len must be at least 3")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


@dataclass
class Batch:
    """Collated examples, trimmed to the longest real sequence in the batch."""

    task: str
    input_ids: np.ndarray
    segment_ids: np.ndarray
    position_ids: np.ndarray
    attention_mask: np.ndarray
    labels: np.ndarray  # (B, L) for AE, (B,) for ASC
    score_mask: np.ndarray | None = None  # (B, L), AE only

    @property
    def size(self) -> int:
        return self.input_ids.shape[0]

    @property
    def padding(self) -> np.ndarray:
        return self.attention_mask == 0

    @property
    def cls_positions(self) -> np.ndarray:
        out = np.zeros(self.input_ids.shape, dtype=bool)
        out[:, 0] = self.input_ids[:, 0] == CLS_ID
        return out

    @property
    def sep_positions(self) -> np.ndarray:
        return (self.input_ids == SEP_ID) & ~self.padding

    def special_map(self) -> dict[str, np.ndarray]:
        return {"cls": self.cls_positions, "sep": self.sep_positions, "pad": self.padding}


def collate(examples: Sequence) -> Batch:
    if not examples:
        raise UsageError("cannot collate an empty batch")
    task = examples[0].task
    if any(e.task != task for e in examples):
        raise UsageError("a batch cannot mix AE and ASC examples")
    width = max(e.example.length for e in examples)

    def stack(attr):
        return np.array([getattr(e.example, attr)[:width] for e in examples], dtype=np.int64)

    if task == "ae":
        labels = np.array([e.labels[:width] for e in examples], dtype=np.int64)
        score = np.array([e.score_mask[:width] for e in examples], dtype=bool)
    else:
        labels = np.array([e.label for e in examples], dtype=np.int64)
        score = None
    return Batch(
        task=task,
        input_ids=stack("input_ids"),
        segment_ids=stack("segment_ids"),
        position_ids=stack("position_ids"),
        attention_mask=stack("attention_mask"),
        labels=labels,
        score_mask=score,
    )


@dataclass
class EmbeddedBatch:
    x: Tensor  # (B, L, d)
    attention_mask: np.ndarray
    special: dict[str, np.ndarray]


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> ParamSet:
    """Truncated-normal(0.02) weights, zero biases, unit layer-norm gains."""
    d, ff = cfg.hidden, cfg.ff
    ps = ParamSet()

    def w(name, *shape):
        ps.add(name, Tensor(truncated_normal(rng, shape)))

    def zeros(name, *shape):
        ps.add(name, Tensor(np.zeros(shape)))

    def ones(name, *shape):
        ps.add(name, Tensor(np.ones(shape)))

    w("emb.token", cfg.vocab_size, d)
    w("emb.segment", cfg.type_vocab, d)
    w("emb.position", cfg.max_len, d)
    ones("emb.ln.gamma", d)
    zeros("emb.ln.beta", d)
    for i in range(cfg.layers):
        p = f"layer{i}."
        for proj in ("q", "k", "v", "o"):
            w(p + f"attn.{proj}.weight", d, d)
            zeros(p + f"attn.{proj}.bias", d)
        ones(p + "attn.ln.gamma", d)
        zeros(p + "attn.ln.beta", d)
        w(p + "ff.in.weight", d, ff)
        zeros(p + "ff.in.bias", ff)
        w(p + "ff.out.weight", ff, d)
        zeros(p + "ff.out.bias", d)
        ones(p + "ff.ln.gamma", d)
        zeros(p + "ff.ln.beta", d)
    w("head.weight", d, NUM_LABELS)
    zeros("head.bias", NUM_LABELS)
    return ps


class Model:
    """Stateless forward functions; parameters are passed in on every call.

    Passing ``ParamSet.detached()`` instead of the live set gives the
    constant-parameter view used when building perturbations.
    """

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg

    def _dropout(self, x: Tensor, rng, training: bool) -> Tensor:
        return T.dropout(x, self.cfg.dropout, training, rng)

    def embed(self, batch: Batch, params: Mapping[str, Tensor], rng=None, training: bool = False) -> EmbeddedBatch:
        ids = batch.input_ids
        if ids.size and ids.max() >= self.cfg.vocab_size:
            raise IndexError(f"token id {int(ids.max())} >= vocab_size {self.cfg.vocab_size}")
        if batch.position_ids.size and batch.position_ids.max() >= self.cfg.max_len:
            raise IndexError(f"position {int(batch.position_ids.max())} >= max_len {self.cfg.max_len}")
        summed = self.embedding_sum(batch, params)
        x = T.layer_norm(summed, params["emb.ln.gamma"], params["emb.ln.beta"], self.cfg.ln_eps)
        x = self._dropout(x, rng, training)
        return EmbeddedBatch(x, batch.attention_mask, batch.special_map())

    def embedding_sum(self, batch: Batch, params: Mapping[str, Tensor]) -> Tensor:
        """Token + segment + position lookups, before normalisation."""
        return (
            T.embedding(params["emb.token"], batch.input_ids)
            + T.embedding(params["emb.segment"], batch.segment_ids)
            + T.embedding(params["emb.position"], batch.position_ids)
        )

    def _attention(self, x: Tensor, mask_add: np.ndarray, params, prefix: str, rng, training: bool) -> Tensor:
        b, l, d = x.shape
        h = self.cfg.heads
        dh = d // h

        def proj(name):
            y = x @ params[prefix + f"attn.{name}.weight"] + params[prefix + f"attn.{name}.bias"]
            return y.reshape(b, l, h, dh).transpose(0, 2, 1, 3)

        q, k, v = proj("q"), proj("k"), proj("v")
        scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(dh)) + mask_add
        probs = self._dropout(T.softmax(scores, axis=-1), rng, training)
        ctx = (probs @ v).transpose(0, 2, 1, 3).reshape(b, l, d)
        return ctx @ params[prefix + "attn.o.weight"] + params[prefix + "attn.o.bias"]

    def encode(self, x: Tensor, attention_mask: np.ndarray, params, rng=None, training: bool = False) -> Tensor:
        """Post-norm transformer blocks; padded keys are masked out."""
        mask_add = np.where(attention_mask[:, None, None, :] > 0, 0.0, MASK_VALUE).astype(x.data.dtype)
        eps = self.cfg.ln_eps
        for i in range(self.cfg.layers):
            p = f"layer{i}."
            attn = self._dropout(self._attention(x, mask_add, params, p, rng, training), rng, training)
            x = T.layer_norm(x + attn, params[p + "attn.ln.gamma"], params[p + "attn.ln.beta"], eps)
            hidden = T.gelu(x @ params[p + "ff.in.weight"] + params[p + "ff.in.bias"])
            out = self._dropout(hidden @ params[p + "ff.out.weight"] + params[p + "ff.out.bias"], rng, training)
            x = T.layer_norm(x + out, params[p + "ff.ln.gamma"], params[p + "ff.ln.beta"], eps)
        return x

    def ae_head(self, encoded: Tensor, params) -> Tensor:
        return encoded @ params["head.weight"] + params["head.bias"]

    def asc_head(self, encoded: Tensor, params) -> Tensor:
        return encoded[:, 0, :] @ params["head.weight"] + params["head.bias"]

    def head(self, encoded: Tensor, params) -> Tensor:
        return self.ae_head(encoded, params) if self.cfg.task == "ae" else self.asc_head(encoded, params)

    def _check_task(self, batch: Batch) -> None:
        if batch.task != self.cfg.task:
            raise UsageError(f"batch task {batch.task!r} does not match model task {self.cfg.task!r}")

    def loss_from_logits(self, logits: Tensor, batch: Batch, skip_examples: np.ndarray | None = None) -> Tensor:
        self._check_task(batch)
        if batch.task == "ae":
            b, l, c = logits.shape
            ignore = ~batch.score_mask
            if skip_examples is not None:
                ignore = ignore | skip_examples[:, None]
            return T.cross_entropy(logits.reshape(b * l, c), batch.labels.reshape(-1), ignore.reshape(-1))
        return T.cross_entropy(logits, batch.labels, skip_examples)

    def loss_from_embeddings(
        self,
        x: Tensor,
        batch: Batch,
        params,
        rng=None,
        training: bool = False,
        skip_examples: np.ndarray | None = None,
    ) -> tuple[Tensor, Tensor]:
        self._check_task(batch)
        logits = self.head(self.encode(x, batch.attention_mask, params, rng, training), params)
        return self.loss_from_logits(logits, batch, skip_examples), logits

    def task_loss(self, batch: Batch, params, rng=None, training: bool = False) -> tuple[Tensor, Tensor]:
        """Mean cross-entropy over scored tokens (AE) or examples (ASC)."""
        self._check_task(batch)
        emb = self.embed(batch, params, rng, training)
        return self.loss_from_embeddings(emb.x, batch, params, rng, training)

    def logits(self, batch: Batch, params) -> np.ndarray:
        with T.no_grad():
            emb = self.embed(batch, params)
            return self.head(self.encode(emb.x, batch.attention_mask, params), params).data

    def predict(self, batch: Batch, params) -> np.ndarray:
        return self.logits(batch, params).argmax(axis=-1)
