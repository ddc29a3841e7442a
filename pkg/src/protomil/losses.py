"""Task heads and training objectives.

Covers the classification and survival heads over pooled prototypes, the
cross-entropy and Cox negative log partial likelihood task losses, the
contrastive prototype supervision loss that anchors prior experts to their
teachers, and the weighted total.  Every loss has an explicit gradient.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .numerics import as_f64, cosine_sim_backward, cosine_sim_matrix, \
    linear, softmax_rows


@dataclass(frozen=True)
class SurvivalRecord:
    """Observed follow-up for one subject."""

    time: float   # > 0, arbitrary units
    event: int    # 1 = event observed, 0 = censored

    def __post_init__(self):
        if not self.time > 0:
            raise ValueError(f"survival time must be > 0, got {self.time}")
        if self.event not in (0, 1):
            raise ValueError(f"event flag must be 0 or 1, got {self.event}")


@dataclass
class TaskHead:
    """Linear read-out over the pooled prototype representation."""

    weights: np.ndarray   # (D, C_out); C_out = n classes, or 1 for survival
    bias: np.ndarray      # (C_out,)


@dataclass
class LossBreakdown:
    task_loss: float
    proto_loss: float
    lam: float

    @property
    def total(self) -> float:
        return self.task_loss + self.lam * self.proto_loss


def pool_and_predict(m_final: np.ndarray, head: TaskHead) -> np.ndarray:
    """Mean over the K prototype rows, then the linear head."""
    m_final = as_f64(m_final)
    pooled = m_final.mean(axis=0)
    return linear(pooled[None, :], head.weights, head.bias)[0]


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean over the batch of -log softmax(logits)[label]."""
    logits = np.atleast_2d(as_f64(logits))
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    b, c = logits.shape
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"labels must lie in [0, {c}), got "
                         f"[{labels.min()}, {labels.max()}]")
    z = logits - logits.max(axis=1, keepdims=True)
    log_probs = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(-log_probs[np.arange(b), labels].mean())


def cross_entropy_backward(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """dL/dlogits = (softmax - onehot) / B."""
    logits = np.atleast_2d(as_f64(logits))
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    b = logits.shape[0]
    probs = softmax_rows(logits)
    probs[np.arange(b), labels] -= 1.0
    return probs / b


def _risk_set_logsumexp(risks: np.ndarray, mask: np.ndarray,
                        eps: float) -> float:
    """log(sum over masked entries of exp(risk) + eps), max-subtracted."""
    h = risks[mask]
    m = h.max()
    return float(m + np.log(np.exp(h - m).sum() + eps * np.exp(-m)))


def cox_nll(risks: np.ndarray, records, eps: float = 1e-8) -> float:
    """Negative log partial likelihood of proportional-hazards risk scores.

    For each subject i with an observed event, the risk set is every
    subject j with t_j >= t_i (ties included).  The sum over event terms is
    divided by the full batch size.  A batch without any event returns 0.0
    and emits a warning, since the objective carries no information there.
    """
    risks = as_f64(risks).reshape(-1)
    times = np.array([r.time for r in records])
    events = np.array([r.event for r in records])
    b = risks.shape[0]
    if b < 1 or b != times.shape[0]:
        raise ValueError(f"got {b} risks for {times.shape[0]} records")
    if eps < 0:
        raise ValueError(f"eps must be >= 0, got {eps}")
    if not events.any():
        warnings.warn("cox_nll: no events in batch, loss is 0 with zero "
                      "gradient", RuntimeWarning, stacklevel=2)
        return 0.0
    total = 0.0
    for i in np.flatnonzero(events):
        mask = times >= times[i]
        total += risks[i] - _risk_set_logsumexp(risks, mask, eps)
    return float(-total / b)


def cox_nll_backward(risks: np.ndarray, records, eps: float = 1e-8) -> np.ndarray:
    """dL/drisks for cox_nll (zero vector when the batch has no events)."""
    risks = as_f64(risks).reshape(-1)
    times = np.array([r.time for r in records])
    events = np.array([r.event for r in records])
    b = risks.shape[0]
    grad = np.zeros(b)
    if not events.any():
        return grad
    for i in np.flatnonzero(events):
        mask = times >= times[i]
        h = risks[mask]
        m = h.max()
        e = np.exp(h - m)
        denom = e.sum() + eps * np.exp(-m)
        grad[i] -= 1.0
        grad[mask] += e / denom
    return grad / b


def proto_supervision(p_prior: np.ndarray, p_teacher: np.ndarray,
                      tau: float) -> float:
    """Contrastive anchor loss pulling expert k toward teacher k.

    Cross-entropy over the temperature-scaled cosine similarity matrix with
    the diagonal as the target, averaged over experts.
    """
    if tau <= 0:
        raise ValueError(f"tau must be > 0, got {tau}")
    p_prior, p_teacher = as_f64(p_prior), as_f64(p_teacher)
    if p_prior.shape != p_teacher.shape:
        raise ValueError(f"shape mismatch: experts {p_prior.shape} "
                         f"vs teachers {p_teacher.shape}")
    sims = cosine_sim_matrix(p_prior, p_teacher)
    k = sims.shape[0]
    return cross_entropy(sims / tau, np.arange(k))


def proto_supervision_backward(p_prior: np.ndarray, p_teacher: np.ndarray,
                               tau: float) -> np.ndarray:
    """dL/dp_prior for proto_supervision (teachers are frozen)."""
    p_prior, p_teacher = as_f64(p_prior), as_f64(p_teacher)
    sims = cosine_sim_matrix(p_prior, p_teacher)
    k = sims.shape[0]
    dsims = cross_entropy_backward(sims / tau, np.arange(k)) / tau
    dp, _ = cosine_sim_backward(dsims, p_prior, p_teacher)
    return dp


def total_loss(task: float, proto: float, lam: float) -> LossBreakdown:
    """Weighted objective: task + lam * proto."""
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    return LossBreakdown(task_loss=float(task), proto_loss=float(proto),
                         lam=float(lam))
