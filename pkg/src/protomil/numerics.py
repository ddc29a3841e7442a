"""Dense float64 kernels shared by every stage of the pipeline.

Each differentiable operation comes as a forward function plus an explicit
backward (vector-Jacobian product) function.  The computation graph of the
whole model is a fixed DAG, so backward code is written out by hand and
verified against central finite differences by :func:`grad_check`.

All functions are pure; arrays are never mutated in place.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Guard added to row norms in cosine similarity so zero feature rows do not
# produce NaNs.  Synthetic features can be all-zero by construction.
NORM_GUARD = 1e-12


def as_f64(x) -> np.ndarray:
    """Coerce input to a float64 ndarray without copying when possible."""
    return np.asarray(x, dtype=np.float64)


def softmax_rows(m: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Row-wise softmax of ``m / temperature`` with max-subtraction.

    Every output row sums to 1 and all entries lie in (0, 1).
    """
    if temperature <= 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    z = as_f64(m) / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_rows_backward(grad_out: np.ndarray, out: np.ndarray,
                          temperature: float = 1.0) -> np.ndarray:
    """VJP of softmax_rows with respect to its input matrix.

    ``out`` is the forward result; dL/dm = out * (g - sum(g*out)) / tau.
    """
    dot = (grad_out * out).sum(axis=-1, keepdims=True)
    return out * (grad_out - dot) / temperature


def layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray,
               eps: float = 1e-5):
    """Row-wise layer normalization with learnable affine.

    Uses population variance.  Returns ``(out, cache)`` where the cache
    carries what the backward pass needs.
    """
    if eps <= 0:
        raise ValueError(f"eps must be > 0, got {eps}")
    x = as_f64(x)
    gain = as_f64(gain)
    bias = as_f64(bias)
    if gain.shape[-1] != x.shape[-1] or bias.shape[-1] != x.shape[-1]:
        raise ValueError(
            f"gain/bias length {gain.shape[-1]}/{bias.shape[-1]} "
            f"does not match feature dim {x.shape[-1]}")
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv_std
    out = gain * xhat + bias
    cache = (xhat, inv_std, gain)
    return out, cache


def layer_norm_backward(grad_out: np.ndarray, cache):
    """VJP of layer_norm. Returns (dx, dgain, dbias)."""
    xhat, inv_std, gain = cache
    dgain = (grad_out * xhat).sum(axis=tuple(range(grad_out.ndim - 1)))
    dbias = grad_out.sum(axis=tuple(range(grad_out.ndim - 1)))
    g = grad_out * gain
    # dx = inv_std * (g - mean(g) - xhat * mean(g * xhat)), per row
    g_mean = g.mean(axis=-1, keepdims=True)
    gx_mean = (g * xhat).mean(axis=-1, keepdims=True)
    dx = inv_std * (g - g_mean - xhat * gx_mean)
    return dx, dgain, dbias


def linear(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Affine map ``x @ w + b`` with b broadcast over rows."""
    x, w, b = as_f64(x), as_f64(w), as_f64(b)
    if x.shape[-1] != w.shape[0]:
        raise ValueError(f"inner dims disagree: x has {x.shape[-1]} cols, "
                         f"w has {w.shape[0]} rows")
    return x @ w + b


def linear_backward(grad_out: np.ndarray, x: np.ndarray, w: np.ndarray):
    """VJP of linear. Returns (dx, dw, db)."""
    grad_out = np.atleast_2d(grad_out)
    x2 = np.atleast_2d(x)
    dx = grad_out @ w.T
    dw = x2.T @ grad_out
    db = grad_out.sum(axis=0)
    return dx.reshape(np.shape(x)[:-1] + (w.shape[0],)), dw, db


def cosine_sim_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarity between rows of ``a`` (N x D) and ``b`` (K x D).

    Row norms are guarded by ``NORM_GUARD`` so zero rows yield 0 similarity
    instead of NaN.
    """
    a, b = as_f64(a), as_f64(b)
    na = np.linalg.norm(a, axis=-1, keepdims=True) + NORM_GUARD
    nb = np.linalg.norm(b, axis=-1, keepdims=True) + NORM_GUARD
    return (a / na) @ (b / nb).T


def cosine_sim_backward(grad_out: np.ndarray, a: np.ndarray, b: np.ndarray):
    """VJP of cosine_sim_matrix. Returns (da, db).

    Derivative of the guarded forward s = (a.b) / ((|a|+g)(|b|+g)); the
    |a| factor appearing in the chain is itself guarded so zero rows stay
    finite (relative error ~g for non-degenerate rows, far below the
    1e-5 gradient-check tolerance).
    """
    a, b = as_f64(a), as_f64(b)
    na = np.linalg.norm(a, axis=-1, keepdims=True) + NORM_GUARD  # (N,1)
    nb = np.linalg.norm(b, axis=-1, keepdims=True) + NORM_GUARD  # (K,1)
    s = (a / na) @ (b / nb).T                                    # (N,K)
    g = as_f64(grad_out)
    da = (g / nb.T) @ b / na - ((g * s).sum(axis=1, keepdims=True) / na**2) * a
    db = (g / na).T @ a / nb - ((g * s).sum(axis=0)[:, None] / nb**2) * b
    return da, db


def multi_head_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray,
                         w_q: np.ndarray, w_k: np.ndarray, w_v: np.ndarray,
                         w_o: np.ndarray, n_heads: int):
    """Scaled dot-product attention with separate Q/K/V/output projections.

    ``q`` is (Nq x D), ``k`` and ``v`` are (Nk x D); all projections are
    (D x D) and D must be divisible by ``n_heads``.  Per-head scores are
    scaled by 1/sqrt(D / n_heads).  Returns ``(out, cache)``.
    """
    q, k, v = as_f64(q), as_f64(k), as_f64(v)
    d = q.shape[-1]
    if d % n_heads != 0:
        raise ValueError(f"model dim {d} not divisible by n_heads {n_heads}")
    dh = d // n_heads
    scale = 1.0 / np.sqrt(dh)

    qp, kp, vp = q @ w_q, k @ w_k, v @ w_v

    def split(x):  # (N, D) -> (heads, N, dh)
        return x.reshape(x.shape[0], n_heads, dh).transpose(1, 0, 2)

    qh, kh, vh = split(qp), split(kp), split(vp)
    scores = np.einsum("hnd,hmd->hnm", qh, kh) * scale
    att = softmax_rows(scores)                       # rows sum to 1 per head
    ctx = np.einsum("hnm,hmd->hnd", att, vh)
    concat = ctx.transpose(1, 0, 2).reshape(q.shape[0], d)
    out = concat @ w_o
    cache = (q, k, v, qh, kh, vh, att, concat, w_q, w_k, w_v, w_o,
             n_heads, scale)
    return out, cache


def multi_head_attention_backward(grad_out: np.ndarray, cache):
    """VJP of multi_head_attention.

    Returns ``(dq, dk, dv, dw_q, dw_k, dw_v, dw_o)`` matching the forward
    argument order.
    """
    (q, k, v, qh, kh, vh, att, concat, w_q, w_k, w_v, w_o,
     n_heads, scale) = cache
    nq, d = q.shape
    dh = d // n_heads

    dw_o = concat.T @ grad_out
    dconcat = grad_out @ w_o.T
    dctx = dconcat.reshape(nq, n_heads, dh).transpose(1, 0, 2)

    datt = np.einsum("hnd,hmd->hnm", dctx, vh)
    dvh = np.einsum("hnm,hnd->hmd", att, dctx)
    dscores = softmax_rows_backward(datt, att) * scale
    dqh = np.einsum("hnm,hmd->hnd", dscores, kh)
    dkh = np.einsum("hnm,hnd->hmd", dscores, qh)

    def merge(x):  # (heads, N, dh) -> (N, D)
        return x.transpose(1, 0, 2).reshape(x.shape[1], d)

    dqp, dkp, dvp = merge(dqh), merge(dkh), merge(dvh)
    dq, dk, dv = dqp @ w_q.T, dkp @ w_k.T, dvp @ w_v.T
    dw_q, dw_k, dw_v = q.T @ dqp, k.T @ dkp, v.T @ dvp
    return dq, dk, dv, dw_q, dw_k, dw_v, dw_o


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(grad_out: np.ndarray, x: np.ndarray) -> np.ndarray:
    return grad_out * (x > 0)


@dataclass
class GradCheckReport:
    """Result of comparing analytic gradients against central differences."""

    op_name: str
    max_rel_err: float
    worst_index: tuple

    def passed(self, threshold: float = 1e-5) -> bool:
        return self.max_rel_err < threshold


def _sample_coords(params: dict, n_samples: int, rng) -> list:
    """Pick coordinates to probe, guaranteeing every array is covered."""
    names = sorted(params)
    coords = []
    for name in names:  # at least one coordinate per parameter group
        size = params[name].size
        if size:
            coords.append((name, int(rng.integers(size))))
    while len(coords) < n_samples:
        name = names[int(rng.integers(len(names)))]
        size = params[name].size
        if size:
            coords.append((name, int(rng.integers(size))))
    return coords[:max(n_samples, len(names))]


def grad_check(loss_fn, grad_fn, params: dict, *, step: float = 1e-6,
               n_samples: int = 200, seed: int = 0,
               op_name: str = "loss") -> GradCheckReport:
    """Compare analytic gradients to central finite differences.

    ``loss_fn(params) -> float`` and ``grad_fn(params) -> dict`` take a dict
    of named float64 arrays.  ``n_samples`` coordinates are probed (every
    parameter array gets at least one).  The reported error is

        max over coords of |analytic - fd| / max(1, |fd|)

    Raises ``FloatingPointError`` if any probed loss value is non-finite.
    """
    if not 1e-7 <= step <= 1e-4:
        raise ValueError(f"step {step} outside [1e-7, 1e-4]")
    rng = np.random.default_rng(seed)
    analytic = grad_fn(params)
    coords = _sample_coords(params, n_samples, rng)

    max_rel = 0.0
    worst = ("", -1)
    for name, idx in coords:
        base = params[name].reshape(-1)[idx]
        perturbed = dict(params)
        arr = params[name].copy()
        flat = arr.reshape(-1)

        flat[idx] = base + step
        perturbed[name] = arr
        lo_hi = [loss_fn(perturbed)]
        flat[idx] = base - step
        lo_hi.append(loss_fn(perturbed))
        flat[idx] = base

        if not all(np.isfinite(lo_hi)):
            raise FloatingPointError(
                f"non-finite loss while probing {name}[{idx}]")
        fd = (lo_hi[0] - lo_hi[1]) / (2.0 * step)
        an = analytic[name].reshape(-1)[idx]
        rel = abs(an - fd) / max(1.0, abs(fd))
        if rel > max_rel:
            max_rel = rel
            worst = (name, idx)
    return GradCheckReport(op_name=op_name, max_rel_err=float(max_rel),
                           worst_index=worst)
