import numpy as np
import pytest

from protomil.losses import SurvivalRecord, TaskHead, cox_nll, \
    cox_nll_backward, cross_entropy, cross_entropy_backward, \
    pool_and_predict, proto_supervision, proto_supervision_backward, \
    total_loss
from protomil.numerics import grad_check
from protomil.priors import l2_normalize_rows


def brute_force_cox(risks, records, eps=0.0):
    """Risk sets enumerated straight from the definition, naive sums."""
    total = 0.0
    b = len(records)
    for i, rec in enumerate(records):
        if rec.event != 1:
            continue
        denom = sum(np.exp(risks[j]) for j in range(b)
                    if records[j].time >= rec.time) + eps
        total += risks[i] - np.log(denom)
    return -total / b


def random_survival_batch(rng, size):
    risks = rng.normal(size=size)
    records = [SurvivalRecord(time=float(rng.uniform(0.5, 10.0)),
                              event=int(rng.integers(0, 2)))
               for _ in range(size)]
    if not any(r.event for r in records):
        records[0] = SurvivalRecord(time=records[0].time, event=1)
    return risks, records


class TestSurvivalRecord:
    def test_rejects_nonpositive_time(self):
        with pytest.raises(ValueError, match="time"):
            SurvivalRecord(time=0.0, event=1)

    def test_rejects_bad_event(self):
        with pytest.raises(ValueError, match="event"):
            SurvivalRecord(time=1.0, event=2)


class TestCrossEntropy:
    def test_uniform_two_class(self):
        assert cross_entropy(np.zeros((1, 2)), [0]) == \
            pytest.approx(np.log(2.0), abs=1e-12)

    def test_uniform_equals_log_c(self):
        for c in (2, 3, 5, 7):
            assert cross_entropy(np.zeros((4, c)), [0] * 4) == \
                pytest.approx(np.log(c), abs=1e-12)

    def test_large_margin(self):
        logits = np.array([[20.0, 0.0]])
        assert cross_entropy(logits, [0]) < 1e-8

    def test_two_sample_value(self):
        loss = cross_entropy(np.array([[1.0, 0.0], [0.0, 1.0]]), [0, 1])
        assert loss == pytest.approx(np.log(1 + np.exp(-1.0)), abs=1e-12)
        assert loss == pytest.approx(0.31326, abs=1e-5)

    def test_nonnegative(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            logits = rng.normal(size=(5, 4)) * 3
            labels = rng.integers(0, 4, size=5)
            assert cross_entropy(logits, labels) >= 0.0

    def test_rejects_bad_labels(self):
        with pytest.raises(ValueError, match="labels"):
            cross_entropy(np.zeros((2, 3)), [0, 3])

    @pytest.mark.parametrize("seed", range(5))
    def test_gradient(self, seed):
        rng = np.random.default_rng(seed)
        labels = rng.integers(0, 4, size=6)
        params = {"logits": rng.normal(size=(6, 4))}
        report = grad_check(
            lambda p: cross_entropy(p["logits"], labels),
            lambda p: {"logits": cross_entropy_backward(p["logits"],
                                                        labels)},
            params, n_samples=24, seed=seed)
        assert report.max_rel_err < 1e-5


class TestCoxNll:
    def test_single_subject(self):
        rec = [SurvivalRecord(time=3.0, event=1)]
        assert cox_nll(np.array([1.7]), rec, eps=0.0) == pytest.approx(0.0)

    def test_two_subject_value(self):
        recs = [SurvivalRecord(5.0, 1), SurvivalRecord(2.0, 1)]
        loss = cox_nll(np.zeros(2), recs, eps=0.0)
        assert loss == pytest.approx(np.log(2.0) / 2.0, abs=1e-9)
        assert loss == pytest.approx(0.34657, abs=1e-5)

    def test_three_subject_with_censoring(self):
        recs = [SurvivalRecord(2.0, 1), SurvivalRecord(4.0, 0),
                SurvivalRecord(6.0, 1)]
        risks = np.array([0.4, -1.2, 0.9])
        assert cox_nll(risks, recs, eps=0.0) == pytest.approx(
            brute_force_cox(risks, recs), abs=1e-12)

    @pytest.mark.parametrize("seed", range(100))
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        size = int(rng.integers(1, 7))
        risks, recs = random_survival_batch(rng, size)
        assert cox_nll(risks, recs, eps=0.0) == pytest.approx(
            brute_force_cox(risks, recs), abs=1e-12)

    def test_shift_invariant_at_eps_zero(self):
        rng = np.random.default_rng(1)
        risks, recs = random_survival_batch(rng, 8)
        base = cox_nll(risks, recs, eps=0.0)
        for c in (-3.0, 1.0, 7.0):
            assert abs(cox_nll(risks + c, recs, eps=0.0) - base) < 1e-10

    def test_shift_drift_small_at_default_eps(self):
        rng = np.random.default_rng(2)
        recs = random_survival_batch(rng, 10)[1]
        risks = rng.uniform(-5.0, 5.0, size=10)
        base = cox_nll(risks, recs)
        for c in (-3.0, 1.0, 7.0):
            assert abs(cox_nll(risks + c, recs) - base) < 1e-6

    def test_no_events_warns_and_returns_zero(self):
        recs = [SurvivalRecord(1.0, 0), SurvivalRecord(2.0, 0)]
        with pytest.warns(RuntimeWarning, match="no events"):
            assert cox_nll(np.array([0.3, -0.3]), recs) == 0.0
        np.testing.assert_array_equal(
            cox_nll_backward(np.array([0.3, -0.3]), recs), 0.0)

    def test_tied_times_share_risk_sets(self):
        recs = [SurvivalRecord(3.0, 1), SurvivalRecord(3.0, 1)]
        risks = np.array([0.5, -0.5])
        assert cox_nll(risks, recs, eps=0.0) == pytest.approx(
            brute_force_cox(risks, recs), abs=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_gradient(self, seed):
        rng = np.random.default_rng(seed)
        risks, recs = random_survival_batch(rng, 7)
        report = grad_check(
            lambda p: cox_nll(p["risks"], recs),
            lambda p: {"risks": cox_nll_backward(p["risks"], recs)},
            {"risks": risks}, n_samples=14, seed=seed)
        assert report.max_rel_err < 1e-5


class TestProtoSupervision:
    def test_orthonormal_k2(self):
        loss = proto_supervision(np.eye(2), np.eye(2), tau=1.0)
        assert loss == pytest.approx(np.log(1 + np.exp(-1.0)), abs=1e-9)
        assert loss == pytest.approx(0.31326, abs=1e-5)

    def test_orthonormal_k4_sharp(self):
        loss = proto_supervision(np.eye(4), np.eye(4), tau=0.07)
        assert loss == pytest.approx(np.log(1 + 3 * np.exp(-1 / 0.07)),
                                     abs=1e-12)
        assert loss == pytest.approx(1.9e-6, abs=1e-7)

    def test_misalignment_costs_more(self):
        teachers = np.eye(3)
        aligned = proto_supervision(teachers, teachers, tau=0.5)
        swapped = teachers[[1, 0, 2]]   # expert 0 sits on teacher 1
        assert proto_supervision(swapped, teachers, tau=0.5) > aligned

    def test_aligned_is_minimum_on_sphere(self):
        rng = np.random.default_rng(0)
        teachers = np.eye(4)
        aligned = proto_supervision(teachers, teachers, tau=0.3)
        for _ in range(1000):
            perturbed = l2_normalize_rows(
                teachers + 0.5 * rng.normal(size=(4, 4)))
            assert proto_supervision(perturbed, teachers, tau=0.3) >= \
                aligned - 1e-12

    def test_rejects_bad_tau_and_shape(self):
        with pytest.raises(ValueError, match="tau"):
            proto_supervision(np.eye(2), np.eye(2), tau=0.0)
        with pytest.raises(ValueError, match="shape"):
            proto_supervision(np.eye(2), np.eye(3), tau=1.0)

    @pytest.mark.parametrize("seed", range(5))
    def test_gradient(self, seed):
        rng = np.random.default_rng(seed)
        teachers = l2_normalize_rows(rng.normal(size=(4, 6)))
        params = {"p": rng.normal(size=(4, 6))}
        report = grad_check(
            lambda p: proto_supervision(p["p"], teachers, tau=0.2),
            lambda p: {"p": proto_supervision_backward(p["p"], teachers,
                                                       tau=0.2)},
            params, n_samples=24, seed=seed)
        assert report.max_rel_err < 1e-5


class TestPoolAndPredict:
    def test_single_row(self):
        head = TaskHead(weights=np.array([[1.0, 2.0], [0.0, 1.0]]),
                        bias=np.array([0.5, -0.5]))
        out = pool_and_predict(np.array([[2.0, 3.0]]), head)
        np.testing.assert_allclose(out, [2.5, 6.5])

    def test_equal_rows_collapse(self):
        rng = np.random.default_rng(0)
        v = rng.normal(size=4)
        head = TaskHead(weights=rng.normal(size=(4, 3)),
                        bias=rng.normal(size=3))
        out = pool_and_predict(np.tile(v, (5, 1)), head)
        np.testing.assert_allclose(out, v @ head.weights + head.bias,
                                   atol=1e-12)

    def test_mean_then_identity(self):
        head = TaskHead(weights=np.eye(2), bias=np.zeros(2))
        out = pool_and_predict(np.array([[2.0, 0.0], [0.0, 2.0]]), head)
        np.testing.assert_allclose(out, [1.0, 1.0])


class TestTotalLoss:
    def test_lambda_zero(self):
        assert total_loss(0.7, 9.9, 0.0).total == 0.7

    def test_paper_weighting(self):
        assert total_loss(0.5, 0.3, 0.1).total == pytest.approx(0.53)

    def test_zero_proto(self):
        assert total_loss(0.42, 0.0, 0.1).total == 0.42

    def test_exact_identity(self):
        b = total_loss(1.25, 0.75, 0.1)
        assert b.total == b.task_loss + b.lam * b.proto_loss

    def test_rejects_negative_lambda(self):
        with pytest.raises(ValueError, match="lambda"):
            total_loss(1.0, 1.0, -0.1)
