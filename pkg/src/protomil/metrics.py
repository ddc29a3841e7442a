"""Evaluation metrics: classification scores, concordance, and two-group
survival comparison.

AUC and C-index are computed by direct pair counting (ties credited 0.5),
which doubles as their own definition-level oracle at desk scale.  The
log-rank p-value comes from the complementary regularized incomplete gamma
function.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy.special import gammaincc

from .losses import SurvivalRecord
from .numerics import as_f64


@dataclass
class MetricReport:
    """Per-task metrics; fields for the absent task stay None."""

    acc: Optional[float] = None
    f1_macro: Optional[float] = None
    auc: Optional[float] = None
    c_index: Optional[float] = None
    logrank_p: Optional[float] = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        return cls(**json.loads(text))


def auc(scores: np.ndarray, labels: np.ndarray) -> Optional[float]:
    """Mann-Whitney AUC: fraction of (positive, negative) pairs ranked
    correctly, ties counted 0.5.  None for single-class input."""
    scores = as_f64(scores).reshape(-1)
    labels = np.asarray(labels).reshape(-1).astype(np.int64)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    if pos.size == 0 or neg.size == 0:
        return None
    diff = pos[:, None] - neg[None, :]
    wins = (diff > 0).sum() + 0.5 * (diff == 0).sum()
    return float(wins / (pos.size * neg.size))


def auc_macro_ovr(probs: np.ndarray, labels: np.ndarray) -> Optional[float]:
    """One-vs-rest macro average of per-class AUC over class columns."""
    probs = np.atleast_2d(as_f64(probs))
    labels = np.asarray(labels).reshape(-1)
    per_class = []
    for c in range(probs.shape[1]):
        a = auc(probs[:, c], (labels == c).astype(np.int64))
        if a is not None:
            per_class.append(a)
    return float(np.mean(per_class)) if per_class else None


def c_index(risks: np.ndarray, records) -> Optional[float]:
    """Harrell's concordance index.

    A pair (i, j) is comparable when t_i < t_j and subject i had an event;
    it scores 1 if risk_i > risk_j, 0.5 on a risk tie, else 0.  None when
    no pair is comparable.
    """
    risks = as_f64(risks).reshape(-1)
    times = np.array([r.time for r in records])
    events = np.array([r.event for r in records])
    comparable = (times[:, None] < times[None, :]) & (events[:, None] == 1)
    n_pairs = comparable.sum()
    if n_pairs == 0:
        return None
    rdiff = risks[:, None] - risks[None, :]
    score = ((rdiff > 0) + 0.5 * (rdiff == 0))[comparable].sum()
    return float(score / n_pairs)


def f1_and_acc(pred: np.ndarray, labels: np.ndarray, n_classes: int = 0):
    """Returns (macro F1, accuracy).

    Macro F1 is the unweighted mean of per-class F1 over all class ids in
    [0, n_classes); classes absent from both pred and labels, or with an
    undefined harmonic mean, contribute 0.  With n_classes = 0 the class
    set is inferred from the data.
    """
    pred = np.asarray(pred).reshape(-1).astype(np.int64)
    labels = np.asarray(labels).reshape(-1).astype(np.int64)
    if pred.size == 0 or pred.size != labels.size:
        raise ValueError("pred and labels must be equal-length and nonempty")
    if n_classes <= 0:
        n_classes = int(max(pred.max(), labels.max())) + 1
    acc = float((pred == labels).mean())
    f1s = []
    for c in range(n_classes):
        tp = int(((pred == c) & (labels == c)).sum())
        fp = int(((pred == c) & (labels != c)).sum())
        fn = int(((pred != c) & (labels == c)).sum())
        denom = 2 * tp + fp + fn
        f1s.append(2 * tp / denom if denom else 0.0)
    return float(np.mean(f1s)), acc


def chi2_sf_1df(x: float) -> float:
    """Survival function of the chi-square distribution with 1 dof."""
    if x < 0:
        raise ValueError(f"chi-square statistic must be >= 0, got {x}")
    return float(gammaincc(0.5, x / 2.0))


def logrank(group_a, group_b) -> float:
    """Two-group log-rank test p-value (chi-square, 1 dof).

    Returns 1.0 exactly when there are no events or the groups produce a
    zero statistic.
    """
    if len(group_a) == 0 or len(group_b) == 0:
        raise ValueError("both groups must be nonempty")
    ta = np.array([r.time for r in group_a])
    ea = np.array([r.event for r in group_a])
    tb = np.array([r.time for r in group_b])
    eb = np.array([r.event for r in group_b])

    event_times = np.unique(np.concatenate([ta[ea == 1], tb[eb == 1]]))
    if event_times.size == 0:
        return 1.0

    observed_a = 0.0
    expected_a = 0.0
    variance = 0.0
    for t in event_times:
        n1 = float((ta >= t).sum())
        n2 = float((tb >= t).sum())
        d1 = float(((ta == t) & (ea == 1)).sum())
        d2 = float(((tb == t) & (eb == 1)).sum())
        n = n1 + n2
        d = d1 + d2
        observed_a += d1
        expected_a += d * n1 / n
        if n > 1:
            variance += d * (n1 / n) * (n2 / n) * (n - d) / (n - 1)
    if variance == 0.0:
        return 1.0
    stat = (observed_a - expected_a) ** 2 / variance
    return chi2_sf_1df(stat)


def km_curve(records):
    """Kaplan-Meier product-limit estimate.

    Returns a list of (time, survival) step points starting at (0.0, 1.0),
    with one additional point per distinct event time carrying the
    post-drop survival value.
    """
    if len(records) == 0:
        raise ValueError("records must be nonempty")
    times = np.array([r.time for r in records])
    events = np.array([r.event for r in records])
    curve = [(0.0, 1.0)]
    s = 1.0
    for t in np.unique(times[events == 1]):
        n_at_risk = float((times >= t).sum())
        d = float(((times == t) & (events == 1)).sum())
        s *= 1.0 - d / n_at_risk
        curve.append((float(t), s))
    return curve


def median_risk_split(risks: np.ndarray, records):
    """Split records at the median risk into (high, low) groups.

    Subjects at or below the median go to the low-risk group, mirroring a
    high-risk = strictly-above-median stratification.
    """
    risks = as_f64(risks).reshape(-1)
    med = float(np.median(risks))
    high = [r for r, v in zip(records, risks) if v > med]
    low = [r for r, v in zip(records, risks) if v <= med]
    return high, low
