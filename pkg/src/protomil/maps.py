"""Dual-expert routing and attentive aggregation of instance features.

Instances are routed to two banks of prototype experts: prior experts via
temperature-scaled cosine similarity (direction only) and adaptive experts
via scaled raw dot products (magnitude-aware).  The two row-stochastic
attention maps are concatenated and applied transposed to the instance
matrix, producing one aggregated prototype row per expert.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import as_f64, cosine_sim_backward, cosine_sim_matrix, \
    softmax_rows, softmax_rows_backward


@dataclass
class ExpertBank:
    """Learnable expert prototypes and their routing temperatures."""

    p_prior: np.ndarray          # (K_sup, D)
    p_adapt: np.ndarray          # (K_free, D); zero rows allowed, K_free >= 0
    tau_cos: float = 0.1
    tau_dot: float = field(default=0.0)  # 0 means "use sqrt(D)"

    def __post_init__(self):
        self.p_prior = as_f64(self.p_prior)
        self.p_adapt = as_f64(self.p_adapt)
        if self.tau_dot == 0.0:
            self.tau_dot = float(np.sqrt(self.p_prior.shape[1]))
        if self.tau_cos <= 0 or self.tau_dot <= 0:
            raise ValueError("routing temperatures must be > 0")


@dataclass
class AttentionMap:
    a_prior: np.ndarray   # (N, K_sup), rows sum to 1
    a_adapt: np.ndarray   # (N, K_free), rows sum to 1 when K_free > 0

    @property
    def a_total(self) -> np.ndarray:
        """Column concatenation; rows sum to 2 (1 when K_free = 0)."""
        return np.concatenate([self.a_prior, self.a_adapt], axis=1)


@dataclass
class AggregatedPrototypes:
    m: np.ndarray   # (K_sup + K_free, D)


def route_prior(h: np.ndarray, bank: ExpertBank) -> np.ndarray:
    """Cosine routing: softmax over experts of cos(h_i, p_k) / tau_cos."""
    return softmax_rows(cosine_sim_matrix(h, bank.p_prior), bank.tau_cos)


def route_prior_backward(grad_att: np.ndarray, h: np.ndarray,
                         bank: ExpertBank):
    """VJP of route_prior. Returns (dh, dp_prior)."""
    att = route_prior(h, bank)
    dsims = softmax_rows_backward(grad_att, att, bank.tau_cos)
    return cosine_sim_backward(dsims, h, bank.p_prior)


def route_adaptive(h: np.ndarray, bank: ExpertBank) -> np.ndarray:
    """Dot-product routing: softmax over experts of (h @ p_adapt.T) / tau_dot."""
    return softmax_rows(as_f64(h) @ bank.p_adapt.T, bank.tau_dot)


def route_adaptive_backward(grad_att: np.ndarray, h: np.ndarray,
                            bank: ExpertBank):
    """VJP of route_adaptive. Returns (dh, dp_adapt)."""
    h = as_f64(h)
    att = route_adaptive(h, bank)
    dlogits = softmax_rows_backward(grad_att, att, bank.tau_dot)
    return dlogits @ bank.p_adapt, dlogits.T @ h


def route(h: np.ndarray, bank: ExpertBank) -> AttentionMap:
    """Both routing paths for one bag."""
    h = as_f64(h)
    a_prior = route_prior(h, bank)
    if bank.p_adapt.shape[0] > 0:
        a_adapt = route_adaptive(h, bank)
    else:
        a_adapt = np.zeros((h.shape[0], 0))
    return AttentionMap(a_prior=a_prior, a_adapt=a_adapt)


def aggregate(att: AttentionMap, h: np.ndarray) -> AggregatedPrototypes:
    """Attention-weighted instance sums: m = a_total.T @ h."""
    h = as_f64(h)
    a_total = att.a_total
    if a_total.shape[0] != h.shape[0]:
        raise ValueError(f"attention rows {a_total.shape[0]} != instances "
                         f"{h.shape[0]}")
    return AggregatedPrototypes(m=a_total.T @ h)


def aggregate_backward(grad_m: np.ndarray, att: AttentionMap, h: np.ndarray):
    """VJP of aggregate. Returns (da_total, dh)."""
    h = as_f64(h)
    da_total = h @ as_f64(grad_m).T
    dh = att.a_total @ grad_m
    return da_total, dh
