"""End-to-end optimization: Adam with decoupled weight decay, cosine
learning-rate decay, early stopping on a validation metric, and component
toggles for ablation runs.

Classification accumulates gradients over windows of bags before each
optimizer step; survival treats the training cohort as a single risk set
per epoch unless a smaller Cox batch is configured.
"""

from __future__ import annotations

import copy
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import checkpoint as ckpt
from . import model as mdl
from . import seeding
from .config import TrainConfig
from .metrics import MetricReport, auc, auc_macro_ovr, c_index, f1_and_acc, \
    km_curve, logrank, median_risk_split
from .numerics import GradCheckReport, grad_check, softmax_rows
from .priors import kmeans, l2_normalize_rows
from .synthdata import GeneratorConfig, generate_cohort, pooled_instances


@dataclass
class OptimizerState:
    """Adam moments, one pair of arrays per parameter."""

    m: dict
    v: dict
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, params: dict) -> "OptimizerState":
        return cls(m={k: np.zeros_like(p) for k, p in params.items()},
                   v={k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params: dict, grads: dict, state: OptimizerState, lr: float,
              weight_decay: float):
    """One Adam update with decoupled weight decay, in place.

    Parameters are first scaled by (1 - lr * weight_decay), then updated
    with bias-corrected moments.  Raises FloatingPointError on non-finite
    gradients.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in {name}")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads[name]
        if weight_decay > 0:
            p *= 1.0 - lr * weight_decay
        state.m[name] = state.beta1 * state.m[name] + (1 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1 - state.beta2) * g * g
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        p -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    """Cosine interpolation from lr_init at epoch 0 to lr_final at the
    last epoch."""
    if not 0 <= epoch < cfg.max_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.max_epochs})")
    if cfg.max_epochs == 1:
        return cfg.lr_init
    frac = epoch / (cfg.max_epochs - 1)
    return float(cfg.lr_final + 0.5 * (cfg.lr_init - cfg.lr_final) *
                 (1.0 + np.cos(np.pi * frac)))


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    task_loss: float
    proto_loss: float
    val_metric: float
    lr: float


@dataclass
class TrainResult:
    model: mdl.Model
    best_epoch: int
    best_val: float
    history: list = field(default_factory=list)
    aborted: bool = False


def _resolve_config(cfg: TrainConfig, cohort) -> TrainConfig:
    d_in = cohort[0].features.shape[1]
    n_classes = max(b.label for b in cohort) + 1
    return cfg.resolved(d_in, n_classes)


def build_teachers(train_cohort, cfg: TrainConfig) -> np.ndarray:
    """Unit-normalized K-means centroids of the pooled training instances."""
    bank = kmeans(pooled_instances(train_cohort), cfg.k_sup, seed=cfg.seed)
    return l2_normalize_rows(bank.teachers)


def _val_metric(params, cfg, cohort) -> float:
    report = _evaluate_params(params, cfg, cohort)
    value = report.auc if cfg.task == "classification" else report.c_index
    return float("nan") if value is None else float(value)


def _iter_windows(items, size):
    for start in range(0, len(items), size):
        yield items[start:start + size]


def train(train_cohort, val_cohort, cfg: TrainConfig,
          teachers: Optional[np.ndarray] = None) -> TrainResult:
    """Optimize the full model; keeps the checkpoint with the best
    validation metric (AUC or C-index) and stops after ``patience`` epochs
    without improvement.

    A non-finite loss or gradient aborts training and returns the last good
    checkpoint.
    """
    if not train_cohort or not val_cohort:
        raise ValueError("train and validation cohorts must be nonempty")
    cfg = _resolve_config(cfg, list(train_cohort) + list(val_cohort))
    if cfg.use_maps and teachers is None:
        teachers = build_teachers(train_cohort, cfg)

    params = mdl.init_params(cfg)
    state = OptimizerState.fresh(params)
    history = []
    best_params = None
    best_epoch = 0
    best_val = -np.inf
    aborted = False

    for epoch in range(1, cfg.max_epochs + 1):
        lr = lr_schedule(epoch - 1, cfg)
        order = seeding.child_rng(cfg.seed, seeding.SHUFFLE,
                                  epoch).permutation(len(train_cohort))
        bags = [train_cohort[i] for i in order]
        if cfg.task == "classification":
            window = cfg.accum_bags
        else:
            window = cfg.cox_batch if cfg.cox_batch > 0 else len(bags)

        task_sum = 0.0
        proto_vals = []
        n_seen = 0
        try:
            for batch in _iter_windows(bags, window):
                breakdown, grads = mdl.batch_loss_and_grads(
                    params, batch, cfg, teachers)
                if not np.isfinite(breakdown.total):
                    raise FloatingPointError("non-finite training loss")
                adam_step(params, grads, state, lr, cfg.weight_decay)
                task_sum += breakdown.task_loss * len(batch)
                proto_vals.append(breakdown.proto_loss)
                n_seen += len(batch)
        except FloatingPointError as err:
            warnings.warn(f"epoch {epoch} aborted: {err}; keeping last "
                          f"good checkpoint", RuntimeWarning)
            aborted = True
            break

        task_loss = task_sum / n_seen
        proto_loss = float(np.mean(proto_vals))
        val = _val_metric(params, cfg, val_cohort)
        history.append(EpochStats(epoch=epoch,
                                  train_loss=task_loss + cfg.lam * proto_loss,
                                  task_loss=task_loss,
                                  proto_loss=proto_loss,
                                  val_metric=val, lr=float(lr)))
        if best_params is None or val > best_val:
            best_params = copy.deepcopy(params)
            best_epoch = epoch
            best_val = val
        if epoch - best_epoch >= cfg.patience:
            break

    if best_params is None:   # aborted during the very first epoch
        best_params = copy.deepcopy(params)
        best_epoch = 0
        best_val = float("nan")
    return TrainResult(model=mdl.Model(cfg=cfg, params=best_params,
                                       teachers=teachers),
                       best_epoch=best_epoch, best_val=float(best_val),
                       history=history, aborted=aborted)


def _evaluate_params(params, cfg, cohort) -> MetricReport:
    if cfg.task == "classification":
        logits = np.stack([mdl.predict_bag(params, b, cfg) for b in cohort])
        probs = softmax_rows(logits)
        labels = np.array([b.label for b in cohort])
        pred = probs.argmax(axis=1)
        f1, acc = f1_and_acc(pred, labels, n_classes=cfg.n_classes)
        if cfg.n_classes == 2:
            auc_val = auc(probs[:, 1], labels)
        else:
            auc_val = auc_macro_ovr(probs, labels)
        return MetricReport(acc=acc, f1_macro=f1, auc=auc_val)
    risks = np.array([mdl.predict_bag(params, b, cfg)[0] for b in cohort])
    records = [b.survival for b in cohort]
    high, low = median_risk_split(risks, records)
    p = logrank(high, low) if high and low else 1.0
    return MetricReport(c_index=c_index(risks, records), logrank_p=p)


def evaluate(model: mdl.Model, cohort) -> MetricReport:
    """Deterministic forward pass over a cohort, scored for the model's
    task."""
    if not cohort:
        raise ValueError("cohort must be nonempty")
    d_in = cohort[0].features.shape[1]
    if d_in != model.cfg.d_in:
        raise ValueError(f"cohort feature dim {d_in} does not match "
                         f"checkpoint d_in {model.cfg.d_in}")
    return _evaluate_params(model.params, model.cfg, cohort)


def survival_curves(model: mdl.Model, cohort):
    """Kaplan-Meier curves for the median-risk split: (high, low)."""
    risks = np.array([mdl.predict_bag(model.params, b, model.cfg)[0]
                      for b in cohort])
    records = [b.survival for b in cohort]
    high, low = median_risk_split(risks, records)
    return (km_curve(high) if high else [(0.0, 1.0)],
            km_curve(low) if low else [(0.0, 1.0)])


# ---------------------------------------------------------------------------
# Checkpoint serialization
# ---------------------------------------------------------------------------

TEACHER_KEY = "experts.teacher"


def save_model(path, model: mdl.Model, epoch: int = 0,
               best_val: float = float("nan")):
    arrays = dict(model.params)
    if model.teachers is not None:
        arrays[TEACHER_KEY] = model.teachers
    meta = {"config": model.cfg.to_dict(), "epoch": int(epoch),
            "best_val": None if np.isnan(best_val) else float(best_val)}
    return ckpt.save_arrays(path, arrays, meta)


def load_model(path):
    """Returns (Model, meta) from a checkpoint manifest path."""
    arrays, meta = ckpt.load_arrays(path)
    cfg = TrainConfig.from_dict(meta["config"])
    teachers = arrays.pop(TEACHER_KEY, None)
    expected = mdl.param_shapes(cfg)
    for name, shape in expected.items():
        if name not in arrays:
            raise ValueError(f"checkpoint missing parameter {name!r}")
        if tuple(arrays[name].shape) != shape:
            raise ValueError(f"checkpoint {name!r} has shape "
                             f"{arrays[name].shape}, expected {shape}")
    return mdl.Model(cfg=cfg, params=arrays, teachers=teachers), meta


def write_history_csv(path, history):
    lines = ["epoch,train_loss,task_loss,proto_loss,val_metric,lr"]
    for row in history:
        lines.append(f"{row.epoch},{row.train_loss!r},{row.task_loss!r},"
                     f"{row.proto_loss!r},{row.val_metric!r},{row.lr!r}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Full-pipeline gradient verification
# ---------------------------------------------------------------------------

def gradcheck_batch_config(seed: int = 0) -> GeneratorConfig:
    """Small synthetic batch used by the full-model gradient check."""
    return GeneratorConfig(n_bags=3, instances_per_bag=(8, 14), d=32,
                           censor_rate=0.0, seed=seed)


def full_model_grad_check(seed: int = 0, cfg: Optional[TrainConfig] = None,
                          n_samples: int = 200,
                          step: float = 1e-6) -> GradCheckReport:
    """Check the composed analytic gradient on a 3-bag batch at a random
    initialization against central finite differences."""
    gen_cfg = gradcheck_batch_config(seed)
    bags = generate_cohort(gen_cfg)
    if cfg is None:
        cfg = TrainConfig(seed=seed)
    cfg = cfg.resolved(gen_cfg.d, gen_cfg.n_classes)
    params = mdl.init_params(cfg, seed, random_all=True)
    teachers = l2_normalize_rows(
        seeding.child_rng(seed, seeding.GRADCHECK).standard_normal(
            (cfg.k_sup, cfg.d)))

    def loss_fn(p):
        return mdl.batch_loss(p, bags, cfg, teachers).total

    def grad_fn(p):
        return mdl.batch_loss_and_grads(p, bags, cfg, teachers)[1]

    return grad_check(loss_fn, grad_fn, params, step=step,
                      n_samples=n_samples, seed=seed,
                      op_name=f"full_model[{cfg.task}]")
