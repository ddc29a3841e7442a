import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from protomil.numerics import GradCheckReport, cosine_sim_backward, \
    cosine_sim_matrix, grad_check, layer_norm, layer_norm_backward, linear, \
    linear_backward, multi_head_attention, multi_head_attention_backward, \
    softmax_rows, softmax_rows_backward

finite_matrices = arrays(np.float64, (4, 5),
                         elements=st.floats(-50, 50, allow_nan=False))


class TestSoftmaxRows:
    def test_symmetry(self):
        np.testing.assert_allclose(softmax_rows(np.array([[0.0, 0.0]])),
                                   [[0.5, 0.5]])

    def test_log2_row(self):
        out = softmax_rows(np.array([[np.log(2.0), 0.0]]))
        np.testing.assert_allclose(out, [[2 / 3, 1 / 3]], atol=1e-12)

    def test_low_temperature_limit(self):
        out = softmax_rows(np.array([[5.0, 0.0]]), temperature=0.01)
        np.testing.assert_allclose(out, [[1.0, 0.0]], atol=1e-6)

    def test_rejects_nonpositive_temperature(self):
        with pytest.raises(ValueError, match="temperature"):
            softmax_rows(np.zeros((1, 2)), temperature=0.0)

    @given(finite_matrices, st.floats(0.01, 10.0))
    @settings(max_examples=50, deadline=None)
    def test_row_stochastic(self, m, tau):
        out = softmax_rows(m, tau)
        assert np.all(out >= 0)
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)


class TestLayerNorm:
    def test_hand_row(self):
        out, _ = layer_norm(np.array([[1.0, 2.0, 3.0]]), np.ones(3),
                            np.zeros(3), eps=1e-15)
        # population variance 2/3
        expected = np.array([-1.0, 0.0, 1.0]) / np.sqrt(2.0 / 3.0)
        np.testing.assert_allclose(out[0], expected, atol=1e-6)

    def test_constant_row(self):
        out, _ = layer_norm(np.full((1, 3), 4.2), np.ones(3), np.zeros(3))
        np.testing.assert_allclose(out, 0.0, atol=1e-12)

    def test_affine_collapse(self):
        b = np.array([7.0, -1.0, 2.5])
        out, _ = layer_norm(np.random.default_rng(0).normal(size=(5, 3)),
                            np.zeros(3), b)
        np.testing.assert_allclose(out, np.tile(b, (5, 1)))

    def test_rejects_dim_mismatch(self):
        with pytest.raises(ValueError, match="gain/bias"):
            layer_norm(np.zeros((2, 4)), np.ones(3), np.zeros(4))

    @given(finite_matrices, st.floats(-20, 20, allow_nan=False))
    @settings(max_examples=50, deadline=None)
    def test_shift_invariant(self, m, c):
        out1, _ = layer_norm(m, np.ones(5), np.zeros(5))
        out2, _ = layer_norm(m + c, np.ones(5), np.zeros(5))
        np.testing.assert_allclose(out1, out2, atol=1e-10)


class TestCosineSim:
    def test_identical(self):
        out = cosine_sim_matrix(np.array([[1.0, 0.0]]), np.array([[1.0, 0.0]]))
        np.testing.assert_allclose(out, 1.0, atol=1e-9)

    def test_orthogonal(self):
        out = cosine_sim_matrix(np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]))
        np.testing.assert_allclose(out, 0.0, atol=1e-12)

    def test_diagonal_pair(self):
        out = cosine_sim_matrix(np.array([[1.0, 0.0]]), np.array([[1.0, 1.0]]))
        np.testing.assert_allclose(out, 1 / np.sqrt(2), atol=1e-5)

    def test_zero_row_guarded(self):
        out = cosine_sim_matrix(np.zeros((2, 3)), np.ones((2, 3)))
        assert np.all(np.isfinite(out))
        np.testing.assert_allclose(out, 0.0, atol=1e-9)

    def test_range(self):
        rng = np.random.default_rng(3)
        out = cosine_sim_matrix(rng.normal(size=(6, 4)),
                                rng.normal(size=(5, 4)))
        assert np.all(out >= -1.0 - 1e-12) and np.all(out <= 1.0 + 1e-12)

    def test_row_scale_invariance(self):
        rng = np.random.default_rng(4)
        a = rng.normal(size=(6, 4))
        b = rng.normal(size=(3, 4))
        c = rng.uniform(0.1, 10.0, size=(6, 1))
        np.testing.assert_allclose(cosine_sim_matrix(c * a, b),
                                   cosine_sim_matrix(a, b), atol=1e-12)


class TestLinear:
    def test_identity(self):
        x = np.arange(6.0).reshape(2, 3)
        np.testing.assert_array_equal(linear(x, np.eye(3), np.zeros(3)), x)

    def test_zero_input(self):
        out = linear(np.zeros((3, 2)), np.ones((2, 4)), np.arange(4.0))
        np.testing.assert_array_equal(out, np.tile(np.arange(4.0), (3, 1)))

    def test_direct_arithmetic(self):
        out = linear(np.array([[1.0, 2.0]]), np.eye(2), np.array([3.0, 4.0]))
        np.testing.assert_array_equal(out, [[4.0, 6.0]])

    def test_rejects_shape_mismatch(self):
        with pytest.raises(ValueError, match="inner dims"):
            linear(np.zeros((2, 3)), np.zeros((4, 2)), np.zeros(2))


def _single_head_attention_oracle(q, k, v, w_q, w_k, w_v, w_o):
    """Step-by-step scalar evaluation, independent of the library kernel."""
    qp, kp, vp = q @ w_q, k @ w_k, v @ w_v
    d = q.shape[1]
    out_rows = []
    for i in range(q.shape[0]):
        scores = np.array([qp[i] @ kp[j] / np.sqrt(d)
                           for j in range(k.shape[0])])
        e = np.exp(scores - scores.max())
        att = e / e.sum()
        out_rows.append(sum(att[j] * vp[j] for j in range(k.shape[0])))
    return np.stack(out_rows) @ w_o


class TestMultiHeadAttention:
    def test_single_token_identity(self):
        v = np.array([[0.3, -1.2]])
        out, _ = multi_head_attention(v, v, v, np.eye(2), np.eye(2),
                                      np.eye(2), np.eye(2), n_heads=1)
        np.testing.assert_allclose(out, v, atol=1e-12)

    def test_equal_values_collapse(self):
        rng = np.random.default_rng(0)
        q = rng.normal(size=(3, 4))
        k = rng.normal(size=(5, 4))
        v = np.tile(rng.normal(size=(1, 4)), (5, 1))
        w_o = rng.normal(size=(4, 4))
        out, _ = multi_head_attention(q, k, v, np.eye(4), np.eye(4),
                                      np.eye(4), w_o, n_heads=2)
        np.testing.assert_allclose(out, np.tile(v[0] @ w_o, (3, 1)),
                                   atol=1e-12)

    def test_matches_scripted_oracle(self):
        rng = np.random.default_rng(7)
        q, k, v = (rng.normal(size=(2, 2)) for _ in range(3))
        w_q, w_k, w_v, w_o = (0.5 * rng.normal(size=(2, 2)) for _ in range(4))
        out, _ = multi_head_attention(q, k, v, w_q, w_k, w_v, w_o, n_heads=1)
        expected = _single_head_attention_oracle(q, k, v, w_q, w_k, w_v, w_o)
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_attention_rows_sum_to_one(self):
        rng = np.random.default_rng(1)
        q, k, v = (rng.normal(size=(4, 8)) for _ in range(3))
        ws = [rng.normal(size=(8, 8)) for _ in range(4)]
        _, cache = multi_head_attention(q, k, v, *ws, n_heads=4)
        att = cache[6]
        np.testing.assert_allclose(att.sum(axis=-1), 1.0, atol=1e-12)

    def test_rejects_bad_head_count(self):
        with pytest.raises(ValueError, match="divisible"):
            multi_head_attention(np.zeros((2, 6)), np.zeros((2, 6)),
                                 np.zeros((2, 6)), np.eye(6), np.eye(6),
                                 np.eye(6), np.eye(6), n_heads=4)


@pytest.mark.parametrize("seed", range(5))
def test_softmax_vjp(seed):
    rng = np.random.default_rng(seed)
    proj = rng.normal(size=(4, 6))
    x0 = rng.normal(size=(4, 6))
    tau = 0.7

    def loss_fn(p):
        return float((softmax_rows(p["x"], tau) * proj).sum())

    def grad_fn(p):
        out = softmax_rows(p["x"], tau)
        return {"x": softmax_rows_backward(proj, out, tau)}

    report = grad_check(loss_fn, grad_fn, {"x": x0}, n_samples=24, seed=seed)
    assert report.max_rel_err < 1e-5


@pytest.mark.parametrize("seed", range(5))
def test_layer_norm_vjp(seed):
    rng = np.random.default_rng(seed)
    proj = rng.normal(size=(3, 6))
    params = {"x": rng.normal(size=(3, 6)), "gain": rng.normal(size=6),
              "bias": rng.normal(size=6)}

    def loss_fn(p):
        out, _ = layer_norm(p["x"], p["gain"], p["bias"])
        return float((out * proj).sum())

    def grad_fn(p):
        _, cache = layer_norm(p["x"], p["gain"], p["bias"])
        dx, dgain, dbias = layer_norm_backward(proj, cache)
        return {"x": dx, "gain": dgain, "bias": dbias}

    report = grad_check(loss_fn, grad_fn, params, n_samples=30, seed=seed)
    assert report.max_rel_err < 1e-5


@pytest.mark.parametrize("seed", range(5))
def test_cosine_sim_vjp(seed):
    rng = np.random.default_rng(seed)
    proj = rng.normal(size=(4, 3))
    params = {"a": rng.normal(size=(4, 5)), "b": rng.normal(size=(3, 5))}

    def loss_fn(p):
        return float((cosine_sim_matrix(p["a"], p["b"]) * proj).sum())

    def grad_fn(p):
        da, db = cosine_sim_backward(proj, p["a"], p["b"])
        return {"a": da, "b": db}

    report = grad_check(loss_fn, grad_fn, params, n_samples=30, seed=seed)
    assert report.max_rel_err < 1e-5


@pytest.mark.parametrize("seed", range(5))
def test_linear_vjp(seed):
    rng = np.random.default_rng(seed)
    proj = rng.normal(size=(4, 3))
    params = {"x": rng.normal(size=(4, 5)), "w": rng.normal(size=(5, 3)),
              "b": rng.normal(size=3)}

    def loss_fn(p):
        return float((linear(p["x"], p["w"], p["b"]) * proj).sum())

    def grad_fn(p):
        dx, dw, db = linear_backward(proj, p["x"], p["w"])
        return {"x": dx, "w": dw, "b": db}

    report = grad_check(loss_fn, grad_fn, params, n_samples=30, seed=seed)
    assert report.max_rel_err < 1e-5


@pytest.mark.parametrize("seed", range(5))
def test_multi_head_attention_vjp(seed):
    rng = np.random.default_rng(seed)
    proj = rng.normal(size=(3, 8))
    params = {"q": rng.normal(size=(3, 8)), "k": rng.normal(size=(4, 8)),
              "v": rng.normal(size=(4, 8))}
    params.update({name: rng.normal(size=(8, 8)) / np.sqrt(8)
                   for name in ("wq", "wk", "wv", "wo")})

    def run(p):
        return multi_head_attention(p["q"], p["k"], p["v"], p["wq"],
                                    p["wk"], p["wv"], p["wo"], n_heads=2)

    def loss_fn(p):
        return float((run(p)[0] * proj).sum())

    def grad_fn(p):
        _, cache = run(p)
        dq, dk, dv, dwq, dwk, dwv, dwo = \
            multi_head_attention_backward(proj, cache)
        return {"q": dq, "k": dk, "v": dv, "wq": dwq, "wk": dwk,
                "wv": dwv, "wo": dwo}

    report = grad_check(loss_fn, grad_fn, params, n_samples=50, seed=seed)
    assert report.max_rel_err < 1e-5


class TestGradCheckHarness:
    def test_constant_loss(self):
        params = {"w": np.ones(4)}
        report = grad_check(lambda p: 0.0,
                            lambda p: {"w": np.zeros(4)}, params,
                            n_samples=8)
        assert report.max_rel_err == 0.0

    def test_exact_quadratic(self):
        rng = np.random.default_rng(0)
        params = {"w": rng.normal(size=10)}
        report = grad_check(lambda p: 0.5 * float(p["w"] @ p["w"]),
                            lambda p: {"w": p["w"].copy()}, params,
                            n_samples=20)
        assert report.max_rel_err < 1e-9

    def test_step_bounds(self):
        with pytest.raises(ValueError, match="step"):
            grad_check(lambda p: 0.0, lambda p: {"w": np.zeros(1)},
                       {"w": np.zeros(1)}, step=1e-2)

    def test_nonfinite_loss_aborts(self):
        with pytest.raises(FloatingPointError):
            grad_check(lambda p: float("nan"),
                       lambda p: {"w": np.zeros(2)}, {"w": np.zeros(2)},
                       n_samples=4)

    def test_report_type(self):
        report = grad_check(lambda p: 0.0, lambda p: {"w": np.zeros(1)},
                            {"w": np.zeros(1)}, n_samples=1)
        assert isinstance(report, GradCheckReport)
        assert report.passed(1e-5)
