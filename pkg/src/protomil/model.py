"""End-to-end composition of the pipeline with hand-written gradients.

The forward pass per bag is: linear projection, additive spatial encoding,
dual-expert routing and aggregation, text-conditioned modulation and
attention propagation, mean pooling, linear task head.  Component toggles
skip stages (no routing collapses to instance mean pooling; text without
the alignment module is fused additively into the pooled representation).

Parameters live in a flat dict of named float64 arrays so the optimizer,
checkpointing, and the finite-difference harness all share one layout.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import hcma, maps, seeding, spe
from .config import TrainConfig
from .losses import LossBreakdown, cox_nll, cox_nll_backward, cross_entropy, \
    cross_entropy_backward, proto_supervision, proto_supervision_backward, \
    total_loss
from .numerics import linear


@dataclass
class Model:
    """Learnable parameters plus the frozen clustering anchors."""

    cfg: TrainConfig
    params: dict
    teachers: Optional[np.ndarray] = None   # (k_sup, d) unit rows, frozen


def param_shapes(cfg: TrainConfig) -> dict:
    """Names and shapes of every learnable array for this configuration."""
    d, d_in = cfg.d, cfg.d_in
    c_out = cfg.n_classes if cfg.task == "classification" else 1
    shapes = {"proj.w": (d_in, d), "proj.b": (d,)}
    if cfg.use_maps:
        shapes["experts.prior"] = (cfg.k_sup, d)
        if cfg.k_free > 0:
            shapes["experts.adapt"] = (cfg.k_free, d)
    if cfg.use_hcma:
        shapes.update({
            "film.hidden.w": (d, d), "film.hidden.b": (d,),
            "film.gamma.w": (d, d), "film.gamma.b": (d,),
            "film.beta.w": (d, d), "film.beta.b": (d,),
            "mha.wq": (d, d), "mha.wk": (d, d),
            "mha.wv": (d, d), "mha.wo": (d, d),
            "ln1.gain": (d,), "ln1.bias": (d,),
            "ln2.gain": (d,), "ln2.bias": (d,),
        })
    shapes["head.w"] = (d, c_out)
    shapes["head.b"] = (c_out,)
    return shapes


def init_params(cfg: TrainConfig, seed: int = None, *,
                random_all: bool = False) -> dict:
    """Fresh parameter arrays.

    Training init: weight matrices ~ N(0, 1/fan_in), biases zero, layer-norm
    affines at identity, and the FiLM heads zeroed so modulation starts as
    the identity.  ``random_all`` instead fills every array with small
    nonzero noise, which the gradient-check harness uses so no path is
    silent.
    """
    rng = seeding.child_rng(cfg.seed if seed is None else seed, seeding.INIT)
    params = {}
    for name, shape in param_shapes(cfg).items():
        if random_all:
            params[name] = 0.3 * rng.standard_normal(shape)
            continue
        if name in ("ln1.gain", "ln2.gain"):
            params[name] = np.ones(shape)
        elif name.endswith(".b") or name.endswith(".bias") or \
                name in ("film.gamma.w", "film.beta.w"):
            params[name] = np.zeros(shape)
        elif name in ("experts.prior", "experts.adapt"):
            params[name] = rng.standard_normal(shape) / np.sqrt(cfg.d)
        else:
            fan_in = shape[0]
            params[name] = rng.standard_normal(shape) / np.sqrt(fan_in)
    return params


def zero_grads(params: dict) -> dict:
    return {name: np.zeros_like(a) for name, a in params.items()}


def _expert_bank(params: dict, cfg: TrainConfig) -> maps.ExpertBank:
    adapt = params.get("experts.adapt", np.zeros((0, cfg.d)))
    return maps.ExpertBank(p_prior=params["experts.prior"], p_adapt=adapt,
                           tau_cos=cfg.tau_cos,
                           tau_dot=cfg.tau_dot_resolved)


def forward_bag(params: dict, bag, cfg: TrainConfig):
    """Head output for one bag. Returns (out, cache).

    ``out`` is the logit vector for classification or a length-1 risk array
    for survival.
    """
    feats = bag.features
    f = linear(feats, params["proj.w"], params["proj.b"])
    h = f + spe.encode_positions(bag.coords, cfg.d) if cfg.use_spe else f

    att = None
    if cfg.use_maps:
        bank = _expert_bank(params, cfg)
        att = maps.route(h, bank)
        m = maps.aggregate(att, h).m
    else:
        m = h.mean(axis=0, keepdims=True)

    film_cache = mod_cache = prop_cache = None
    if cfg.use_hcma:
        gen = hcma.FilmGenerator(
            hidden_w=params["film.hidden.w"], hidden_b=params["film.hidden.b"],
            gamma_w=params["film.gamma.w"], gamma_b=params["film.gamma.b"],
            beta_w=params["film.beta.w"], beta_b=params["film.beta.b"])
        film, film_cache = hcma.generate_film_params(bag.text, gen)
        h_mod, mod_cache = hcma.modulate(m, film, params["ln1.gain"],
                                         params["ln1.bias"])
        m_final, prop_cache = hcma.propagate(
            m, h_mod, params["mha.wq"], params["mha.wk"], params["mha.wv"],
            params["mha.wo"], cfg.n_heads, params["ln2.gain"],
            params["ln2.bias"])
    elif cfg.use_text:
        m_final = m + bag.text[None, :]
    else:
        m_final = m

    pooled = m_final.mean(axis=0)
    out = pooled @ params["head.w"] + params["head.b"]
    cache = (feats, h, att, m, film_cache, mod_cache, prop_cache, pooled)
    return out, cache


def backward_bag(dout: np.ndarray, cache, params: dict, cfg: TrainConfig,
                 grads: dict):
    """Accumulate dLoss/dparams for one bag into ``grads``.

    ``dout`` matches the shape of forward_bag's output.
    """
    feats, h, att, m, film_cache, mod_cache, prop_cache, pooled = cache

    grads["head.w"] += np.outer(pooled, dout)
    grads["head.b"] += dout
    dpooled = params["head.w"] @ dout

    k_rows = m.shape[0]
    dm_final = np.tile(dpooled / k_rows, (k_rows, 1))

    if cfg.use_hcma:
        dm, dh_mod, dw_q, dw_k, dw_v, dw_o, dg2, db2 = \
            hcma.propagate_backward(dm_final, prop_cache)
        grads["mha.wq"] += dw_q
        grads["mha.wk"] += dw_k
        grads["mha.wv"] += dw_v
        grads["mha.wo"] += dw_o
        grads["ln2.gain"] += dg2
        grads["ln2.bias"] += db2

        dm2, dgamma, dbeta, dg1, db1 = hcma.modulate_backward(dh_mod,
                                                              mod_cache)
        dm = dm + dm2
        grads["ln1.gain"] += dg1
        grads["ln1.bias"] += db1

        gen = hcma.FilmGenerator(
            hidden_w=params["film.hidden.w"], hidden_b=params["film.hidden.b"],
            gamma_w=params["film.gamma.w"], gamma_b=params["film.gamma.b"],
            beta_w=params["film.beta.w"], beta_b=params["film.beta.b"])
        _, film_grads = hcma.generate_film_params_backward(
            dgamma, dbeta, film_cache, gen)
        grads["film.hidden.w"] += film_grads["hidden_w"]
        grads["film.hidden.b"] += film_grads["hidden_b"]
        grads["film.gamma.w"] += film_grads["gamma_w"]
        grads["film.gamma.b"] += film_grads["gamma_b"]
        grads["film.beta.w"] += film_grads["beta_w"]
        grads["film.beta.b"] += film_grads["beta_b"]
    else:
        dm = dm_final   # additive text fusion is identity in m

    if cfg.use_maps:
        bank = _expert_bank(params, cfg)
        da_total, dh = maps.aggregate_backward(dm, att, h)
        k_sup = cfg.k_sup
        dh1, dp_prior = maps.route_prior_backward(da_total[:, :k_sup], h,
                                                  bank)
        grads["experts.prior"] += dp_prior
        dh = dh + dh1
        if bank.p_adapt.shape[0] > 0:
            dh2, dp_adapt = maps.route_adaptive_backward(
                da_total[:, k_sup:], h, bank)
            grads["experts.adapt"] += dp_adapt
            dh = dh + dh2
    else:
        n = h.shape[0]
        dh = np.tile(dm[0] / n, (n, 1))

    # SPE is additive in h, so dF = dh; the raw features are data.
    grads["proj.w"] += feats.T @ dh
    grads["proj.b"] += dh.sum(axis=0)


def _records(bags):
    return [b.survival for b in bags]


def _require_teachers(cfg: TrainConfig, teachers):
    if cfg.use_maps and cfg.lam > 0 and teachers is None:
        raise ValueError("teacher prototypes are required when use_maps is "
                         "on and lam > 0")


def batch_loss(params: dict, bags, cfg: TrainConfig,
               teachers: Optional[np.ndarray]) -> LossBreakdown:
    """Objective value on a batch (no gradients): task + lam * proto."""
    _require_teachers(cfg, teachers)
    if cfg.task == "classification":
        logits = np.stack([forward_bag(params, b, cfg)[0] for b in bags])
        task = cross_entropy(logits, [b.label for b in bags])
    else:
        risks = np.array([forward_bag(params, b, cfg)[0][0] for b in bags])
        task = cox_nll(risks, _records(bags), cfg.cox_eps)
    proto = 0.0
    if cfg.use_maps and cfg.lam > 0:
        proto = proto_supervision(params["experts.prior"], teachers,
                                  cfg.tau_proto)
    return total_loss(task, proto, cfg.lam)


def batch_loss_and_grads(params: dict, bags, cfg: TrainConfig,
                         teachers: Optional[np.ndarray]):
    """Objective and its full gradient on a batch of bags.

    Classification averages per-bag cross-entropy over the batch; survival
    treats the batch as one risk set for the partial likelihood.  Returns
    (LossBreakdown, grads dict).
    """
    _require_teachers(cfg, teachers)
    grads = zero_grads(params)
    outs, caches = [], []
    for bag in bags:
        out, cache = forward_bag(params, bag, cfg)
        outs.append(out)
        caches.append(cache)

    if cfg.task == "classification":
        logits = np.stack(outs)
        labels = [b.label for b in bags]
        task = cross_entropy(logits, labels)
        dlogits = cross_entropy_backward(logits, labels)
        for i, bag in enumerate(bags):
            backward_bag(dlogits[i], caches[i], params, cfg, grads)
    else:
        risks = np.array([o[0] for o in outs])
        task = cox_nll(risks, _records(bags), cfg.cox_eps)
        drisks = cox_nll_backward(risks, _records(bags), cfg.cox_eps)
        for i, bag in enumerate(bags):
            backward_bag(np.array([drisks[i]]), caches[i], params, cfg,
                         grads)

    proto = 0.0
    if cfg.use_maps and cfg.lam > 0:
        proto = proto_supervision(params["experts.prior"], teachers,
                                  cfg.tau_proto)
        grads["experts.prior"] += cfg.lam * proto_supervision_backward(
            params["experts.prior"], teachers, cfg.tau_proto)
    return total_loss(task, proto, cfg.lam), grads


def predict_bag(params: dict, bag, cfg: TrainConfig) -> np.ndarray:
    """Raw head output (logits or length-1 risk) without caches."""
    return forward_bag(params, bag, cfg)[0]


def bag_attention(params: dict, bag, cfg: TrainConfig):
    """Routing matrix a_total (N x (k_sup + k_free)), or None without MAPS."""
    if not cfg.use_maps:
        return None
    feats = bag.features
    f = linear(feats, params["proj.w"], params["proj.b"])
    h = f + spe.encode_positions(bag.coords, cfg.d) if cfg.use_spe else f
    return maps.route(h, _expert_bank(params, cfg)).a_total
