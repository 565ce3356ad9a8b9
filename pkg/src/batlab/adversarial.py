"""Embedding-space adversarial examples via the fast gradient method.

The perturbation is ``r_adv = -epsilon * g / ||g||_2`` with
``g = grad_x log p(y | x; theta_hat)``, where ``x`` is the embedding-layer
output and ``theta_hat`` a constant copy of the parameters. The loss on
``x + r_adv`` (original labels) is added to the clean loss and a single
optimizer step is taken on the sum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, UsageError
from .model import Batch, Model
from .params import ParamSet
from .tensor import Tensor

POLICIES = ("none", "exclude-specials")
TASK_POLICY = {"ae": "none", "asc": "exclude-specials"}
DEGENERATE_NORM = 1e-12


@dataclass(frozen=True)
class AdvConfig:
    epsilon: float = 0.0
    policy: str = "none"
    enabled: bool = True

    def __post_init__(self):
        if not self.epsilon >= 0.0:
            raise ConfigError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.policy not in POLICIES:
            raise ConfigError(f"unknown exclusion policy {self.policy!r}")

    @classmethod
    def for_task(cls, task: str, epsilon: float) -> "AdvConfig":
        """Task-default policy; epsilon 0 means plain fine-tuning."""
        return cls(epsilon=epsilon, policy=TASK_POLICY[task], enabled=epsilon > 0)

    @property
    def active(self) -> bool:
        return self.enabled and self.epsilon > 0

    def check_task(self, task: str) -> None:
        if self.policy != TASK_POLICY[task]:
            raise ConfigError(f"policy {self.policy!r} is not the {task.upper()} policy {TASK_POLICY[task]!r}")


@dataclass
class Perturbation:
    r_adv: np.ndarray  # (B, L, d)
    excluded: np.ndarray  # (B, L) bool
    grad_norms: np.ndarray  # (B,) norm of the masked gradient
    degenerate: np.ndarray  # (B,) bool
    input_ids: np.ndarray

    @property
    def norms(self) -> np.ndarray:
        return np.sqrt((self.r_adv.astype(np.float64) ** 2).sum(axis=(1, 2)))


def exclusion_mask(batch: Batch, policy: str) -> np.ndarray:
    """Positions whose perturbation is forced to zero. Padding is always excluded."""
    if policy not in POLICIES:
        raise ConfigError(f"unknown exclusion policy {policy!r}")
    mask = batch.padding.copy()
    if policy == "exclude-specials":
        mask |= batch.cls_positions | batch.sep_positions
    return mask


def input_gradient(model: Model, batch: Batch, params, rng=None, training: bool = False) -> np.ndarray:
    """Gradient of the mean log-likelihood w.r.t. the embedding output ``x``.

    The pass runs on a detached view of ``params``, so no parameter gradient
    is produced.
    """
    if not T.grad_enabled():
        raise UsageError("input_gradient needs gradient recording, but it is disabled (no_grad)")
    frozen = params.detached() if isinstance(params, ParamSet) else {k: t.detach() for k, t in params.items()}
    emb = model.embed(batch, frozen, rng, training)
    x = Tensor(emb.x.data, requires_grad=True)
    loss, _ = model.loss_from_embeddings(x, batch, frozen, rng, training)
    T.backward(loss)
    if x.grad is None:
        return np.zeros_like(x.data)
    return -x.grad


def fgm_perturbation(g: np.ndarray, cfg: AdvConfig, excluded: np.ndarray, input_ids: np.ndarray | None = None) -> Perturbation:
    """Per-example ``-epsilon * g / ||g||`` over the non-excluded entries."""
    g = np.asarray(g)
    if not np.all(np.isfinite(g)):
        raise ValueError("input gradient contains non-finite values")
    excluded = np.asarray(excluded, dtype=bool)
    if excluded.shape != g.shape[:2]:
        raise UsageError(f"exclusion mask {excluded.shape} does not match gradient {g.shape}")
    masked = np.where(excluded[..., None], 0.0, g.astype(np.float64))
    norms = np.sqrt((masked * masked).sum(axis=(1, 2)))
    degenerate = norms < DEGENERATE_NORM
    eps = cfg.epsilon if cfg.enabled else 0.0
    scale = np.where(degenerate, 0.0, -eps / np.where(degenerate, 1.0, norms))
    r_adv = (masked * scale[:, None, None]).astype(g.dtype)
    ids = np.zeros(g.shape[:2], dtype=np.int64) if input_ids is None else np.asarray(input_ids)
    return Perturbation(r_adv, excluded, norms, degenerate, ids)


def build_perturbation(model: Model, batch: Batch, params, cfg: AdvConfig, rng=None, training: bool = False) -> Perturbation:
    g = input_gradient(model, batch, params, rng, training)
    return fgm_perturbation(g, cfg, exclusion_mask(batch, cfg.policy), batch.input_ids)


def adversarial_loss(
    model: Model, batch: Batch, params, perturbation: Perturbation, rng=None, training: bool = False
) -> Tensor:
    """``-log p(y | x + r_adv; theta)`` averaged like the clean loss.

    ``r_adv`` enters as a constant. Degenerate examples are left out.
    """
    if perturbation.input_ids.shape != batch.input_ids.shape or not np.array_equal(
        perturbation.input_ids, batch.input_ids
    ):
        raise UsageError("perturbation was built for a different batch")
    emb = model.embed(batch, params, rng, training)
    if perturbation.r_adv.shape != emb.x.shape:
        raise UsageError(f"perturbation shape {perturbation.r_adv.shape} != embeddings {emb.x.shape}")
    x_adv = emb.x + Tensor(perturbation.r_adv)
    skip = perturbation.degenerate if perturbation.degenerate.any() else None
    loss, _ = model.loss_from_embeddings(x_adv, batch, params, rng, training, skip_examples=skip)
    return loss


@dataclass
class StepReport:
    clean: float
    adversarial: float
    total: float
    degenerate: int = 0
    grad_norm: float = 0.0


def combined_step(
    model: Model,
    batch: Batch,
    params: ParamSet,
    cfg: AdvConfig,
    optimizer,
    dropout_rng=None,
    adv_rng=None,
    training: bool = True,
) -> StepReport:
    """One optimizer step on ``clean + adversarial`` (just ``clean`` when disabled)."""
    cfg.check_task(batch.task)
    pert = None
    if cfg.active:
        pert = build_perturbation(model, batch, params, cfg, adv_rng, training)
    clean, _ = model.task_loss(batch, params, dropout_rng, training)
    if pert is None:
        T.backward(clean)
        optimizer.step()
        c = clean.item()
        return StepReport(c, 0.0, c)
    adv = adversarial_loss(model, batch, params, pert, adv_rng, training)
    total = clean + adv
    T.backward(total)
    optimizer.step()
    return StepReport(
        clean.item(),
        adv.item(),
        total.item(),
        degenerate=int(pert.degenerate.sum()),
        grad_norm=float(pert.grad_norms.mean()),
    )
