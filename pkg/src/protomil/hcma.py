"""Text-conditioned refinement of aggregated prototypes.

Stage 1 generates per-channel scale and shift parameters from the text
embedding (one hidden ramp layer, two linear heads) and applies them to the
prototypes through a residual connection and layer normalization.  Stage 2
lets the original prototypes query the modulated ones with multi-head
attention, again with residual and normalization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import as_f64, layer_norm, layer_norm_backward, linear, \
    linear_backward, multi_head_attention, multi_head_attention_backward, \
    relu, relu_backward

LN_EPS = 1e-5


@dataclass
class FilmParams:
    gamma: np.ndarray   # (D,) channel scale
    beta: np.ndarray    # (D,) channel shift


@dataclass
class FilmGenerator:
    """Maps a text embedding to FiLM parameters.

    The gamma/beta heads are zero-initialized by the model so modulation
    starts as the identity.
    """

    hidden_w: np.ndarray   # (D, D)
    hidden_b: np.ndarray   # (D,)
    gamma_w: np.ndarray    # (D, D)
    gamma_b: np.ndarray    # (D,)
    beta_w: np.ndarray     # (D, D)
    beta_b: np.ndarray     # (D,)


def generate_film_params(t: np.ndarray, gen: FilmGenerator):
    """Forward pass of the generator. Returns (FilmParams, cache)."""
    t = as_f64(t).reshape(-1)
    pre = linear(t, gen.hidden_w, gen.hidden_b)
    h = relu(pre)
    gamma = linear(h, gen.gamma_w, gen.gamma_b)
    beta = linear(h, gen.beta_w, gen.beta_b)
    cache = (t, pre, h)
    return FilmParams(gamma=gamma, beta=beta), cache


def generate_film_params_backward(dgamma: np.ndarray, dbeta: np.ndarray,
                                  cache, gen: FilmGenerator):
    """VJP of the generator.

    Returns (dt, grads) where grads maps field names of FilmGenerator to
    gradient arrays.
    """
    t, pre, h = cache
    dh_g, dgamma_w, dgamma_b = linear_backward(dgamma, h, gen.gamma_w)
    dh_b, dbeta_w, dbeta_b = linear_backward(dbeta, h, gen.beta_w)
    dpre = relu_backward(dh_g + dh_b, pre)
    dt, dhidden_w, dhidden_b = linear_backward(dpre, t, gen.hidden_w)
    grads = {"hidden_w": dhidden_w, "hidden_b": dhidden_b,
             "gamma_w": dgamma_w, "gamma_b": dgamma_b,
             "beta_w": dbeta_w, "beta_b": dbeta_b}
    return dt.reshape(-1), grads


def modulate(m: np.ndarray, film: FilmParams, ln_gain: np.ndarray,
             ln_bias: np.ndarray):
    """Stage 1: layer_norm(m + (gamma * m + beta)). Returns (h_mod, cache)."""
    m = as_f64(m)
    pre = m + (film.gamma * m + film.beta)
    h_mod, ln_cache = layer_norm(pre, ln_gain, ln_bias, LN_EPS)
    cache = (m, film, ln_cache)
    return h_mod, cache


def modulate_backward(grad_out: np.ndarray, cache):
    """VJP of modulate.

    Returns (dm, dgamma, dbeta, dln_gain, dln_bias).
    """
    m, film, ln_cache = cache
    dpre, dln_gain, dln_bias = layer_norm_backward(grad_out, ln_cache)
    dm = dpre * (1.0 + film.gamma)
    dgamma = (dpre * m).sum(axis=0)
    dbeta = dpre.sum(axis=0)
    return dm, dgamma, dbeta, dln_gain, dln_bias


def propagate(m: np.ndarray, h_mod: np.ndarray, w_q, w_k, w_v, w_o,
              n_heads: int, ln_gain: np.ndarray, ln_bias: np.ndarray):
    """Stage 2: layer_norm(m + MHA(Q=m, K=h_mod, V=h_mod)).

    Returns (m_final, cache).
    """
    m = as_f64(m)
    att_out, mha_cache = multi_head_attention(m, h_mod, h_mod,
                                              w_q, w_k, w_v, w_o, n_heads)
    m_final, ln_cache = layer_norm(m + att_out, ln_gain, ln_bias, LN_EPS)
    cache = (mha_cache, ln_cache)
    return m_final, cache


def propagate_backward(grad_out: np.ndarray, cache):
    """VJP of propagate.

    Returns (dm, dh_mod, dw_q, dw_k, dw_v, dw_o, dln_gain, dln_bias); dm
    accumulates both the residual and the query paths.
    """
    mha_cache, ln_cache = cache
    dsum, dln_gain, dln_bias = layer_norm_backward(grad_out, ln_cache)
    dq, dk, dv, dw_q, dw_k, dw_v, dw_o = \
        multi_head_attention_backward(dsum, mha_cache)
    dm = dsum + dq
    dh_mod = dk + dv
    return dm, dh_mod, dw_q, dw_k, dw_v, dw_o, dln_gain, dln_bias
