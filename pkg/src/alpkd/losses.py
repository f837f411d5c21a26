"""Training objectives: hard-label cross entropy, temperature-softened
soft-label distillation, patient normalized hidden-state matching, and the
fused hidden-state MSE objective, combined by a beta/eta/lambda weighting.

Teacher quantities are always treated as constants: callers pass raw arrays
(or detached tensors) and no gradient ever reaches teacher parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .alignment import AlignmentPlan, Strategy
from .errors import ConfigError, InputError
from .fusion import FusionMethod, fuse
from .tensor import Tensor

_NORM_EPS = 1e-12


@dataclass(frozen=True)
class LossWeights:
    """Weights of the three loss terms; beta is derived as 1 - eta - lambda."""

    eta: float
    lam: float
    temperature: float = 1.0

    def __post_init__(self):
        if self.eta < 0 or self.lam < 0:
            raise ConfigError(f"eta and lambda must be nonnegative, got "
                              f"eta={self.eta}, lambda={self.lam}")
        if self.beta < 0:
            raise ConfigError(f"beta = 1 - eta - lambda = {self.beta:.3f} "
                              "is negative")
        if self.temperature < 1.0:
            raise ConfigError(f"temperature must be >= 1, got "
                              f"{self.temperature}")

    @property
    def beta(self) -> float:
        return 1.0 - self.eta - self.lam


@dataclass
class LossBreakdown:
    """Scalar values of each term and the weighted total for one batch."""

    l_ce: float
    l_kd: float
    l_hidden: float
    total: float
    per_layer: dict[int, float] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"l_ce": self.l_ce, "l_kd": self.l_kd,
                "l_hidden": self.l_hidden, "total": self.total,
                "per_layer": {str(k): v for k, v in self.per_layer.items()}}


def _const(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def ce_loss(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label]."""
    labels = np.asarray(labels)
    batch, classes = logits.shape
    if labels.shape != (batch,):
        raise InputError(f"labels shape {labels.shape} does not match batch "
                         f"{batch}")
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise InputError(f"label out of range [0, {classes}): "
                         f"min={labels.min()}, max={labels.max()}")
    onehot = np.zeros((batch, classes))
    onehot[np.arange(batch), labels] = 1.0
    return T.cross_entropy_with_soft_targets(logits, onehot)


def softened_teacher_probs(teacher_logits, temperature: float) -> np.ndarray:
    t = _const(teacher_logits) / temperature
    t = t - t.max(axis=-1, keepdims=True)
    e = np.exp(t)
    return e / e.sum(axis=-1, keepdims=True)


def kd_loss(student_logits: Tensor, teacher_logits, temperature: float,
            rescale_t2: bool = False) -> Tensor:
    """Soft-label cross entropy with both sides softened by the temperature.

    The teacher side is a constant. ``rescale_t2`` multiplies by T^2 (the
    conventional gradient-magnitude correction); off by default.
    """
    if temperature < 1.0:
        raise ConfigError(f"temperature must be >= 1, got {temperature}")
    t = _const(teacher_logits)
    if t.shape != student_logits.shape:
        raise InputError(f"teacher logits {t.shape} do not match student "
                         f"logits {student_logits.shape}")
    probs = softened_teacher_probs(t, temperature)
    loss = T.cross_entropy_with_soft_targets(
        T.scale(student_logits, 1.0 / temperature), probs)
    if rescale_t2:
        loss = T.scale(loss, temperature * temperature)
    return loss


def _normalized_const(v: np.ndarray) -> np.ndarray:
    sq = (v * v).sum(axis=-1, keepdims=True)
    return v / np.sqrt(sq + _NORM_EPS)


def pkd_loss(student_cls: list[Tensor], plan: AlignmentPlan,
             teacher_cls: list) -> tuple[Tensor, dict[int, float]]:
    """Patient loss: squared distance between L2-normalized student and
    teacher CLS states under a skip plan, summed over participating layers
    and averaged over the batch."""
    if plan.strategy is not Strategy.PKD_SKIP:
        raise ConfigError(f"patient loss needs a PKD_SKIP plan, got "
                          f"{plan.strategy.value}")
    participating = plan.participating()
    if not participating:
        raise ConfigError("plan has no participating student layers")
    batch = student_cls[0].shape[0]
    parts: list[Tensor] = []
    per_layer: dict[int, float] = {}
    for j in participating:
        k = plan.layer_set(j)[0]
        u = T.l2_normalize(student_cls[j - 1], eps=_NORM_EPS)
        v = _normalized_const(_const(teacher_cls[k - 1]))
        diff = T.sub(u, v)
        term = T.scale(T.tsum(T.mul(diff, diff)), 1.0 / batch)
        per_layer[j] = term.item()
        parts.append(term)
    return T.add_scalars(parts), per_layer


def alp_loss(student_cls: list[Tensor], plan: AlignmentPlan, teacher_cls: list,
             method: FusionMethod
             ) -> tuple[Tensor, dict[int, float], dict[int, np.ndarray]]:
    """Fused hidden-state loss: MSE between each participating student CLS
    state and the fused teacher combination, summed over layers, mean over
    batch and hidden dims. Returns (loss, per-layer values, fusion weights).
    """
    if plan.strategy not in (Strategy.BUCKET_NO, Strategy.BUCKET_PO,
                             Strategy.FULL_SPAN):
        raise ConfigError(f"fused loss needs a bucketed or full-span plan, "
                          f"got {plan.strategy.value}")
    participating = plan.participating()
    if not participating:
        raise ConfigError("plan has no participating student layers")
    parts: list[Tensor] = []
    per_layer: dict[int, float] = {}
    weights: dict[int, np.ndarray] = {}
    for j in participating:
        states = [Tensor(_const(teacher_cls[k - 1]))
                  for k in plan.layer_set(j)]
        result = fuse(method, j, student_cls[j - 1], states)
        term = T.mse(student_cls[j - 1], result.fused)
        per_layer[j] = term.item()
        if result.weights is not None:
            weights[j] = result.weights
        parts.append(term)
    return T.add_scalars(parts), per_layer, weights


def total_loss(l_ce: Tensor, weights: LossWeights, l_kd: Tensor | None = None,
               l_hidden: Tensor | None = None,
               per_layer: dict[int, float] | None = None
               ) -> tuple[Tensor, LossBreakdown]:
    """Weighted sum of the enabled terms.

    A term with zero weight contributes nothing to the gradient and is
    reported as its computed value (or 0 when not supplied). With
    eta = lambda = 0 the total is exactly the cross-entropy loss.
    """
    beta, eta, lam = weights.beta, weights.eta, weights.lam
    if eta > 0 and l_kd is None:
        raise ConfigError("eta > 0 but no soft-label loss supplied")
    if lam > 0 and l_hidden is None:
        raise ConfigError("lambda > 0 but no hidden-state loss supplied")

    total = T.scale(l_ce, beta)
    if eta > 0:
        total = T.add(total, T.scale(l_kd, eta))
    if lam > 0:
        total = T.add(total, T.scale(l_hidden, lam))

    breakdown = LossBreakdown(
        l_ce=l_ce.item(),
        l_kd=l_kd.item() if l_kd is not None else 0.0,
        l_hidden=l_hidden.item() if l_hidden is not None else 0.0,
        total=total.item(),
        per_layer=dict(per_layer or {}),
    )
    return total, breakdown
