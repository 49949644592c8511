"""Joint training of a scene classifier and relation-supervised attention.

The model is deliberately small and fully explicit: one attention block over
the entity features, a mean-pooled head (residual combine or concatenation),
and a linear classifier. The loss is

    task cross-entropy + lambda * relation loss,

where the relation term concentrates the attention focus weights onto the
supervision target. Backpropagation is hand-derived end to end; there is no
autodiff anywhere, which keeps the gradients checkable against central finite
differences.

Supervision strategies:

  * ``row``       per-reference softmax; the loss averages the per-row center
                  mass over rows that have at least one labeled partner;
  * ``mat``       matrix-wise softmax, plain cross entropy (focal exponent
                  forced to 0 when the variant is focal);
  * ``mat_focal`` matrix-wise softmax with the configured focal exponent;
  * ``unsup``     no relation term at all (relation weight treated as 0).

Defaults follow the vision-style recipe: SGD with momentum 0.9, learning rate
5e-4 cut by 10x after 5/8 of the epochs, batch size 2, lambda 0.01. A
language-style run typically overrides optimizer="adam", lr=1e-3, lam=0.1.

Within a mini-batch, task gradients average over the whole batch while
relation gradients average over the instances that actually carry labeled
relations, so sparse supervision is not diluted by unlabeled instances.

Everything here is a pure function of (datasets, config): parameter init,
shuffling, and reported metrics reproduce bit-for-bit for equal seeds.
"""

from __future__ import annotations

import base64
import itertools
import json
import math
from dataclasses import asdict, dataclass, fields
from typing import Optional, Sequence

import numpy as np

from . import attention
from .attention import AttentionParams, AttentionState
from .losses import (
    FocusLossConfig,
    loss_grad,
    loss_value,
    relation_loss,
    relation_loss_backward,
    validate_target,
)
from .matrices import ShapeError, ValidationError, softmax_rows
from .metrics import CenterMassSummary, center_mass_report, relation_recall, top_k_pairs
from .seeding import STREAM_PARAMS_CLASSIFIER, STREAM_SHUFFLE, stream_rng
from .synthgen import Instance

__all__ = [
    "STRATEGIES",
    "OPTIMIZERS",
    "HEAD_MODES",
    "TrainConfig",
    "ModelParams",
    "TaskForward",
    "EpochStats",
    "TrainReport",
    "EvalResult",
    "DivergenceError",
    "init_model",
    "forward_task",
    "task_loss",
    "combined_loss",
    "evaluate",
    "train",
    "grad_check",
    "ablation_cells",
    "ablate",
    "save_checkpoint",
    "load_checkpoint",
    "CHECKPOINT_FORMAT",
    "CHECKPOINT_VERSION",
]

STRATEGIES = ("row", "mat", "mat_focal", "unsup")
OPTIMIZERS = ("sgd_momentum", "adam")
HEAD_MODES = ("residual", "concat")

# single step decay at the 5/8 mark, e.g. 8 epochs -> cut entering epoch 6
LR_DECAY_FACTOR = 0.1
LR_DECAY_POINT = 5 / 8


class DivergenceError(RuntimeError):
    """Raised when a training loss stops being finite."""


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters; validated on construction.

    `lam` is the relation-loss weight (serialized as "lambda"). `focal_r`
    applies to the focal variant; the `mat` strategy forces it to 0 there.
    `eval_ks` are the recall@K cutoffs reported each epoch.
    """

    lam: float = 0.01
    focal_r: int = 2
    loss_variant: str = "focal"
    strategy: str = "mat_focal"
    optimizer: str = "sgd_momentum"
    lr: float = 5e-4
    momentum: float = 0.9
    epochs: int = 60
    batch_size: int = 1
    seed: int = 0
    head_mode: str = "residual"
    agg_axis: str = "row"
    eps: float = 1e-12
    d_k: int = 4
    freeze_attention: bool = False
    eval_ks: tuple = (1, 5, 10)

    def __post_init__(self):
        if not (math.isfinite(self.lam) and self.lam >= 0):
            raise ValidationError(f"lam must be finite and >= 0, got {self.lam}")
        if self.strategy not in STRATEGIES:
            raise ValidationError(
                f"strategy must be one of {STRATEGIES}, got {self.strategy!r}"
            )
        if self.optimizer not in OPTIMIZERS:
            raise ValidationError(
                f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}"
            )
        if self.head_mode not in HEAD_MODES:
            raise ValidationError(
                f"head_mode must be one of {HEAD_MODES}, got {self.head_mode!r}"
            )
        if self.agg_axis not in ("row", "col"):
            raise ValidationError(
                f"agg_axis must be 'row' or 'col', got {self.agg_axis!r}"
            )
        if not (math.isfinite(self.lr) and self.lr >= 0):
            raise ValidationError(f"lr must be finite and >= 0, got {self.lr}")
        if not (0 <= self.momentum < 1):
            raise ValidationError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.epochs < 1:
            raise ValidationError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.seed < 0:
            raise ValidationError(f"seed must be >= 0, got {self.seed}")
        if self.d_k < 1:
            raise ValidationError(f"d_k must be >= 1, got {self.d_k}")
        # delegates focal_r / loss_variant / eps validation
        FocusLossConfig(r=self.focal_r, variant=self.loss_variant, eps=self.eps)
        ks = tuple(int(k) for k in self.eval_ks)
        if not ks or any(k < 1 for k in ks):
            raise ValidationError(f"eval_ks must be positive ints, got {self.eval_ks!r}")
        object.__setattr__(self, "eval_ks", ks)

    @property
    def lam_effective(self) -> float:
        """The relation weight actually applied; unsup always means 0."""
        return 0.0 if self.strategy == "unsup" else self.lam

    def focus_config(self) -> FocusLossConfig:
        """Loss config for the relation term; `mat` pins the focal exponent."""
        r = 0 if (self.strategy == "mat" and self.loss_variant == "focal") else self.focal_r
        return FocusLossConfig(r=r, variant=self.loss_variant, eps=self.eps)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        d["eval_ks"] = list(self.eval_ks)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        kwargs = {}
        for key, value in d.items():
            name = "lam" if key == "lambda" else key
            if name not in known:
                raise ValidationError(f"{key}: unknown training config field")
            kwargs[name] = tuple(value) if name == "eval_ks" else value
        return cls(**kwargs)


@dataclass
class ModelParams:
    """All trainable arrays. Mutable on purpose: the optimizer updates in place."""

    w_k: np.ndarray           # (d_k, d)
    w_q: np.ndarray           # (d_k, d)
    classifier_w: np.ndarray  # (num_classes, head_dim)
    classifier_b: np.ndarray  # (num_classes,)

    def __post_init__(self):
        self.w_k = np.ascontiguousarray(self.w_k, dtype=np.float64)
        self.w_q = np.ascontiguousarray(self.w_q, dtype=np.float64)
        self.classifier_w = np.ascontiguousarray(self.classifier_w, dtype=np.float64)
        self.classifier_b = np.ascontiguousarray(self.classifier_b, dtype=np.float64)
        if self.w_k.shape != self.w_q.shape:
            raise ShapeError(
                f"w_k and w_q must match, got {self.w_k.shape} vs {self.w_q.shape}"
            )
        if self.classifier_b.shape != (self.classifier_w.shape[0],):
            raise ShapeError(
                f"classifier bias {self.classifier_b.shape} does not match "
                f"weights {self.classifier_w.shape}"
            )

    @property
    def d(self) -> int:
        return self.w_k.shape[1]

    @property
    def d_k(self) -> int:
        return self.w_k.shape[0]

    @property
    def num_classes(self) -> int:
        return self.classifier_w.shape[0]

    @property
    def head_dim(self) -> int:
        return self.classifier_w.shape[1]

    def attention_params(self) -> AttentionParams:
        return AttentionParams(w_k=self.w_k, w_q=self.w_q)

    def arrays(self) -> dict:
        return {
            "w_k": self.w_k,
            "w_q": self.w_q,
            "classifier_w": self.classifier_w,
            "classifier_b": self.classifier_b,
        }

    def copy(self) -> "ModelParams":
        return ModelParams(
            w_k=self.w_k.copy(),
            w_q=self.w_q.copy(),
            classifier_w=self.classifier_w.copy(),
            classifier_b=self.classifier_b.copy(),
        )


def head_dim_for(d: int, head_mode: str) -> int:
    return d if head_mode == "residual" else 2 * d


def init_model(d: int, num_classes: int, config: TrainConfig) -> ModelParams:
    """Seeded init: attention and classifier draw from separate streams."""
    if num_classes < 1:
        raise ValidationError(f"num_classes must be >= 1, got {num_classes}")
    att = attention.init_params(d, config.d_k, config.seed)
    hd = head_dim_for(d, config.head_mode)
    rng = stream_rng(STREAM_PARAMS_CLASSIFIER, config.seed)
    bound = 1.0 / np.sqrt(hd)
    return ModelParams(
        w_k=att.w_k,
        w_q=att.w_q,
        classifier_w=rng.uniform(-bound, bound, size=(num_classes, hd)),
        classifier_b=np.zeros(num_classes),
    )


@dataclass(frozen=True)
class TaskForward:
    """Everything the backward pass and the metrics need from one forward."""

    state: AttentionState
    context: np.ndarray       # (n, d) aggregated features
    pooled: np.ndarray        # (head_dim,)
    class_logits: np.ndarray  # (num_classes,)


def forward_task(
    instance: Instance, params: ModelParams, config: TrainConfig
) -> TaskForward:
    f = instance.entities.features
    expected = head_dim_for(f.shape[1], config.head_mode)
    if params.head_dim != expected:
        raise ShapeError(
            f"classifier expects pooled dim {params.head_dim}, but "
            f"{config.head_mode} head over {f.shape[1]}-dim features gives {expected}"
        )
    state = attention.forward(instance.entities, params.attention_params(), config.agg_axis)
    context = attention.aggregate(state, f)
    if config.head_mode == "residual":
        pooled = (f + context).mean(axis=0)
    else:
        pooled = np.concatenate([f.mean(axis=0), context.mean(axis=0)])
    class_logits = params.classifier_w @ pooled + params.classifier_b
    return TaskForward(
        state=state, context=context, pooled=pooled, class_logits=class_logits
    )


def task_loss(class_logits: np.ndarray, label: int) -> float:
    """Softmax cross entropy, computed through a stabilized log-sum-exp."""
    z = np.asarray(class_logits, dtype=np.float64)
    if not (0 <= label < z.shape[0]):
        raise ValidationError(f"label {label} out of range for {z.shape[0]} classes")
    zmax = float(z.max())
    return zmax + math.log(np.sum(np.exp(z - zmax))) - float(z[label])


def _task_loss_grad(class_logits: np.ndarray, label: int):
    z = np.asarray(class_logits, dtype=np.float64)
    if not (0 <= label < z.shape[0]):
        raise ValidationError(f"label {label} out of range for {z.shape[0]} classes")
    zmax = float(z.max())
    e = np.exp(z - zmax)
    p = e / e.sum()
    value = zmax + math.log(e.sum()) - float(z[label])
    grad = p.copy()
    grad[label] -= 1.0
    return value, grad


def combined_loss(task: float, relation: float, lam: float) -> float:
    return task + lam * relation


# --- relation term, per strategy ---------------------------------------------


def _row_relation(logits: np.ndarray, target: np.ndarray, cfg: FocusLossConfig):
    """Row-path loss and logit gradient, averaged over rows with any positive.

    Per reference row i with center mass M_i = sum_j a_ij t_ij, the closed
    form mirrors the matrix path: dM_i/dW[i, :] = a_i * (t_i - M_i).
    """
    t = validate_target(target)
    rows = np.flatnonzero(t.any(axis=1))
    grad = np.zeros_like(logits)
    if rows.size == 0:
        return 0.0, grad
    a = softmax_rows(logits)
    total = 0.0
    for i in rows:
        m_i = float(np.sum(a[i] * t[i]))
        total += loss_value(m_i, cfg)
        grad[i] = loss_grad(m_i, cfg) * a[i] * (t[i] - m_i) / rows.size
    return total / rows.size, grad


def relation_term(
    logits: np.ndarray, target: np.ndarray, config: TrainConfig
) -> tuple[float, np.ndarray]:
    """(loss, d_loss/d_logits) for the configured strategy; zeros for unsup."""
    if config.strategy == "unsup":
        return 0.0, np.zeros_like(logits)
    cfg = config.focus_config()
    if config.strategy == "row":
        return _row_relation(logits, target, cfg)
    value, _ = relation_loss(logits, target, cfg)
    return value, relation_loss_backward(logits, target, cfg)


# --- gradients for one instance ----------------------------------------------


def _zero_grads(params: ModelParams) -> dict:
    return {name: np.zeros_like(a) for name, a in params.arrays().items()}


def _accumulate_instance(
    instance: Instance,
    params: ModelParams,
    config: TrainConfig,
    grads: dict,
    weight_task: float,
    weight_rel: float,
):
    """Add this instance's gradient contribution to `grads`.

    weight_task scales the classification path, weight_rel the relation path
    (already including lambda and the batch normalization). Returns
    (task_loss, relation_loss) for reporting.
    """
    fwd = forward_task(instance, params, config)
    f = instance.entities.features
    n = instance.n
    t_loss, dz = _task_loss_grad(fwd.class_logits, instance.label)

    grads["classifier_w"] += weight_task * np.outer(dz, fwd.pooled)
    grads["classifier_b"] += weight_task * dz

    dpooled = params.classifier_w.T @ dz  # (head_dim,)
    if config.head_mode == "residual":
        # pooled = mean(F + C); both F and C receive dpooled / n per row
        d_context = np.tile(dpooled / n, (n, 1))
    else:
        d_context = np.tile(dpooled[f.shape[1]:] / n, (n, 1))
    d_agg = d_context @ f.T
    if config.agg_axis == "row":
        d_logits = attention.softmax_rows_vjp(fwd.state.agg_weights, d_agg)
    else:
        d_logits = attention.softmax_cols_vjp(fwd.state.agg_weights, d_agg)
    d_logits *= weight_task

    r_loss = 0.0
    if weight_rel != 0.0:
        r_loss, d_rel = relation_term(fwd.state.logits, instance.target, config)
        d_logits += weight_rel * d_rel

    d_w_k, d_w_q, _ = attention.backward(
        fwd.state, d_logits, instance.entities, params.attention_params()
    )
    if not config.freeze_attention:
        grads["w_k"] += d_w_k
        grads["w_q"] += d_w_q
    return t_loss, r_loss


# --- optimizers ----------------------------------------------------------------


class _SgdMomentum:
    def __init__(self, params: ModelParams, momentum: float):
        self.momentum = momentum
        self.velocity = _zero_grads(params)

    def step(self, params: ModelParams, grads: dict, lr: float) -> None:
        for name, a in params.arrays().items():
            v = self.velocity[name]
            v *= self.momentum
            v += grads[name]
            a -= lr * v


class _Adam:
    BETA1 = 0.9
    BETA2 = 0.999
    EPS = 1e-8

    def __init__(self, params: ModelParams, momentum: float):
        del momentum  # adam keeps its own fixed betas
        self.m = _zero_grads(params)
        self.v = _zero_grads(params)
        self.t = 0

    def step(self, params: ModelParams, grads: dict, lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.BETA1**self.t
        c2 = 1.0 - self.BETA2**self.t
        for name, a in params.arrays().items():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.BETA1
            m += (1.0 - self.BETA1) * g
            v *= self.BETA2
            v += (1.0 - self.BETA2) * g * g
            a -= lr * (m / c1) / (np.sqrt(v / c2) + self.EPS)


def _make_optimizer(config: TrainConfig, params: ModelParams):
    cls = _SgdMomentum if config.optimizer == "sgd_momentum" else _Adam
    return cls(params, config.momentum)


def learning_rate(config: TrainConfig, epoch: int) -> float:
    """LR for a 0-based epoch index; one 10x cut at floor(5/8 * epochs)."""
    decay_at = int(config.epochs * LR_DECAY_POINT)
    return config.lr * (LR_DECAY_FACTOR if epoch >= decay_at else 1.0)


# --- evaluation ----------------------------------------------------------------


@dataclass(frozen=True)
class EvalResult:
    accuracy: float
    center_mass: CenterMassSummary
    recall: dict                 # k -> mean recall over instances
    n_instances: int
    n_recall_vacuous: int
    rows: tuple = ()             # per-instance (instance_id, k, recall, M) rows


def evaluate(
    instances: Sequence[Instance],
    params: ModelParams,
    config: TrainConfig,
    ks: Optional[Sequence[int]] = None,
) -> EvalResult:
    """Accuracy, center-mass summary and recall@K means over a dataset."""
    ks = tuple(config.eval_ks if ks is None else (int(k) for k in ks))
    if not instances:
        return EvalResult(
            accuracy=float("nan"),
            center_mass=CenterMassSummary(float("nan"), 0, 0),
            recall={k: float("nan") for k in ks},
            n_instances=0,
            n_recall_vacuous=0,
        )
    correct = 0
    states = []
    recall_sums = {k: 0.0 for k in ks}
    n_vacuous = 0
    rows = []
    max_k = max(ks)
    for idx, inst in enumerate(instances):
        fwd = forward_task(inst, params, config)
        states.append(fwd.state)
        if int(np.argmax(fwd.class_logits)) == inst.label:
            correct += 1
        has_target = bool(np.any(inst.target))
        m = (
            float(np.sum(fwd.state.focus_weights * inst.target))
            if has_target
            else float("nan")
        )
        if inst.gt_relations and inst.entities.boxes is None:
            raise ValidationError(
                "instance has ground-truth relations but no boxes to match against"
            )
        if inst.gt_relations:
            pairs = top_k_pairs(fwd.state.focus_weights, max_k)
            gt_objects = inst.gt_objects()
            per_k = {
                k: relation_recall(pairs, inst.entities, gt_objects, inst.gt_relations, k)
                for k in ks
            }
        else:
            n_vacuous += 1
            per_k = {k: 1.0 for k in ks}
        for k in ks:
            recall_sums[k] += per_k[k]
            rows.append((idx, k, per_k[k], m))
    n = len(instances)
    return EvalResult(
        accuracy=correct / n,
        center_mass=center_mass_report(states, [i.target for i in instances]),
        recall={k: recall_sums[k] / n for k in ks},
        n_instances=n,
        n_recall_vacuous=n_vacuous,
        rows=tuple(rows),
    )


# --- training loop ---------------------------------------------------------------


@dataclass(frozen=True)
class EpochStats:
    epoch: int                # 1-based
    lr: float
    task_loss: float
    relation_loss: float
    combined_loss: float
    center_mass: float        # train split
    center_mass_test: float
    accuracy: float           # test split
    recall: dict              # k -> test recall

    def to_dict(self) -> dict:
        d = {
            "epoch": self.epoch,
            "lr": self.lr,
            "task_loss": self.task_loss,
            "relation_loss": self.relation_loss,
            "combined_loss": self.combined_loss,
            "center_mass": self.center_mass,
            "center_mass_test": self.center_mass_test,
            "accuracy": self.accuracy,
        }
        for k, v in self.recall.items():
            d[f"recall@{k}"] = v
        return d


@dataclass(frozen=True)
class TrainReport:
    """Per-epoch metrics plus the effective config that produced them."""

    config: TrainConfig
    num_classes: int
    feature_dim: int
    epochs: tuple  # of EpochStats

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "num_classes": self.num_classes,
            "feature_dim": self.feature_dim,
            "epochs": [e.to_dict() for e in self.epochs],
        }

    def csv_header(self) -> list:
        head = [
            "epoch",
            "lr",
            "task_loss",
            "relation_loss",
            "combined_loss",
            "center_mass",
            "center_mass_test",
            "accuracy",
        ]
        head += [f"recall@{k}" for k in self.config.eval_ks]
        return head

    def csv_rows(self) -> list:
        rows = []
        for e in self.epochs:
            row = [str(e.epoch)]
            row += [
                format(v, ".17g")
                for v in (
                    e.lr,
                    e.task_loss,
                    e.relation_loss,
                    e.combined_loss,
                    e.center_mass,
                    e.center_mass_test,
                    e.accuracy,
                )
            ]
            row += [format(e.recall[k], ".17g") for k in self.config.eval_ks]
            rows.append(row)
        return rows


def _check_dataset(train_set, test_set):
    if not train_set:
        raise ValidationError("training set is empty")
    dims = {inst.entities.d for inst in itertools.chain(train_set, test_set)}
    if len(dims) != 1:
        raise ValidationError(f"mixed feature dims in dataset: {sorted(dims)}")
    labels = [inst.label for inst in itertools.chain(train_set, test_set)]
    return dims.pop(), max(labels) + 1


def train(
    train_set: Sequence[Instance],
    test_set: Sequence[Instance],
    config: TrainConfig,
) -> tuple[ModelParams, TrainReport]:
    """Full training run; returns the final parameters and the epoch log."""
    d, num_classes = _check_dataset(train_set, test_set)
    params = init_model(d, num_classes, config)
    optimizer = _make_optimizer(config, params)
    shuffle_rng = stream_rng(STREAM_SHUFFLE, config.seed)
    lam_eff = config.lam_effective
    n = len(train_set)
    stats = []
    try:
        _train_epochs(train_set, test_set, config, params, optimizer, shuffle_rng, lam_eff, stats)
    except ValidationError as exc:
        # overflow shows up as a non-finite matrix before any loss is computed
        if "non-finite" in str(exc):
            raise DivergenceError(
                f"numerical overflow with {len(stats)} epochs completed: {exc}; "
                "reduce the learning rate"
            ) from exc
        raise
    report = TrainReport(
        config=config, num_classes=num_classes, feature_dim=d, epochs=tuple(stats)
    )
    return params, report


def _train_epochs(train_set, test_set, config, params, optimizer, shuffle_rng, lam_eff, stats):
    n = len(train_set)
    for epoch in range(config.epochs):
        lr = learning_rate(config, epoch)
        order = shuffle_rng.permutation(n)
        task_sum = 0.0
        rel_sum = 0.0
        rel_count = 0
        for start in range(0, n, config.batch_size):
            batch = [train_set[i] for i in order[start : start + config.batch_size]]
            grads = _zero_grads(params)
            supervised = (
                sum(1 for b in batch if np.any(b.target)) if lam_eff != 0.0 else 0
            )
            for inst in batch:
                w_rel = 0.0
                if lam_eff != 0.0 and supervised and np.any(inst.target):
                    w_rel = lam_eff / supervised
                t_loss, r_loss = _accumulate_instance(
                    inst, params, config, grads, 1.0 / len(batch), w_rel
                )
                task_sum += t_loss
                if w_rel != 0.0:
                    rel_sum += r_loss
                    rel_count += 1
                if not math.isfinite(t_loss) or not math.isfinite(r_loss):
                    raise DivergenceError(
                        f"non-finite loss at epoch {epoch + 1} "
                        f"(task={t_loss!r}, relation={r_loss!r}); "
                        "reduce the learning rate"
                    )
            optimizer.step(params, grads, lr)
        task_mean = task_sum / n
        rel_mean = rel_sum / rel_count if rel_count else 0.0
        train_eval = center_mass_report(
            [
                attention.forward(i.entities, params.attention_params(), config.agg_axis)
                for i in train_set
            ],
            [i.target for i in train_set],
        )
        test_eval = evaluate(test_set, params, config)
        stats.append(
            EpochStats(
                epoch=epoch + 1,
                lr=lr,
                task_loss=task_mean,
                relation_loss=rel_mean,
                combined_loss=combined_loss(task_mean, rel_mean, lam_eff),
                center_mass=train_eval.mean_m,
                center_mass_test=test_eval.center_mass.mean_m,
                accuracy=test_eval.accuracy,
                recall=dict(test_eval.recall),
            )
        )


# --- finite-difference gradient checking ---------------------------------------


def _combined_loss_at(instance: Instance, params: ModelParams, config: TrainConfig):
    fwd = forward_task(instance, params, config)
    t_loss = task_loss(fwd.class_logits, instance.label)
    lam_eff = config.lam_effective
    if lam_eff == 0.0:
        return t_loss
    r_loss, _ = relation_term(fwd.state.logits, instance.target, config)
    return combined_loss(t_loss, r_loss, lam_eff)


def grad_check(
    params: ModelParams,
    instance: Instance,
    config: TrainConfig,
    step: float = 1e-6,
) -> float:
    """Max relative error between analytic and central-FD gradients.

    Checks the combined loss on a single instance over every trainable
    coordinate (attention projections are skipped when frozen, matching what
    the optimizer would update). Relative error uses a guarded denominator
    max(|analytic|, |fd|, 1e-8).
    """
    if not (1e-7 <= step <= 1e-3):
        raise ValidationError(f"step must be in [1e-7, 1e-3], got {step}")
    lam_eff = config.lam_effective
    grads = _zero_grads(params)
    _accumulate_instance(
        instance,
        params,
        config,
        grads,
        1.0,
        lam_eff if (lam_eff != 0.0 and np.any(instance.target)) else 0.0,
    )
    names = ["classifier_w", "classifier_b"]
    if not config.freeze_attention:
        names = ["w_k", "w_q"] + names
    worst = 0.0
    probe = params.copy()
    arrays = probe.arrays()
    for name in names:
        a = arrays[name]
        analytic = grads[name]
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = a[idx]
            a[idx] = orig + step
            hi = _combined_loss_at(instance, probe, config)
            a[idx] = orig - step
            lo = _combined_loss_at(instance, probe, config)
            a[idx] = orig
            fd = (hi - lo) / (2.0 * step)
            err = abs(analytic[idx] - fd) / max(abs(analytic[idx]), abs(fd), 1e-8)
            worst = max(worst, err)
    return worst


# --- ablation grids --------------------------------------------------------------


def ablation_cells(base: TrainConfig, grid: dict) -> list:
    """Expand a {field: [values]} grid into (cell_id, overrides, config) triples.

    Cell order is the cartesian product in the given key/value order, so the
    output is deterministic for a given grid dict. An empty grid (or any empty
    value list) expands to no cells.
    """
    if not grid:
        return []
    keys = list(grid.keys())
    for key, values in grid.items():
        if not isinstance(values, (list, tuple)):
            raise ValidationError(f"{key}: grid values must be a list")
    cells = []
    base_dict = base.to_dict()
    for combo in itertools.product(*(grid[k] for k in keys)):
        overrides = dict(zip(keys, combo))
        merged = dict(base_dict)
        merged.update(overrides)
        config = TrainConfig.from_dict(merged)  # validates override names/values
        cell_id = ",".join(f"{k}={json.dumps(v)}" for k, v in overrides.items())
        cells.append((cell_id, overrides, config))
    return cells


def ablate(
    base: TrainConfig,
    grid: dict,
    train_set: Sequence[Instance],
    test_set: Sequence[Instance],
) -> list:
    """Train every grid cell; returns [(cell_id, overrides, TrainReport), ...]."""
    out = []
    for cell_id, overrides, config in ablation_cells(base, grid):
        _, report = train(train_set, test_set, config)
        out.append((cell_id, overrides, report))
    return out


# --- checkpoints ------------------------------------------------------------------
#
# JSON with explicit shapes and base64-encoded little-endian float64 payloads;
# round-trips bit for bit and stays diffable/inspectable with standard tools.

CHECKPOINT_FORMAT = "focused-attention-checkpoint"
CHECKPOINT_VERSION = 1


def _encode_array(a: np.ndarray) -> dict:
    data = np.ascontiguousarray(a, dtype="<f8").tobytes()
    return {
        "shape": list(a.shape),
        "dtype": "<f8",
        "data": base64.b64encode(data).decode("ascii"),
    }


def _decode_array(d: dict, name: str) -> np.ndarray:
    if d.get("dtype") != "<f8":
        raise ValidationError(f"{name}: unsupported dtype {d.get('dtype')!r}")
    shape = tuple(int(s) for s in d["shape"])
    raw = base64.b64decode(d["data"])
    a = np.frombuffer(raw, dtype="<f8")
    if a.size != int(np.prod(shape)):
        raise ValidationError(
            f"{name}: payload holds {a.size} values, shape {shape} needs "
            f"{int(np.prod(shape))}"
        )
    return a.reshape(shape).astype(np.float64, copy=True)


def save_checkpoint(path, params: ModelParams, config: TrainConfig) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": config.to_dict(),
        "num_classes": params.num_classes,
        "feature_dim": params.d,
        "head_dim": params.head_dim,
        "params": {name: _encode_array(a) for name, a in params.arrays().items()},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path) -> tuple[ModelParams, TrainConfig]:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: not valid JSON ({exc})") from exc
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValidationError(
            f"{path}: format {doc.get('format')!r}, expected {CHECKPOINT_FORMAT!r}"
        )
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValidationError(
            f"{path}: version {doc.get('version')!r}, expected {CHECKPOINT_VERSION}"
        )
    try:
        arrays = {
            name: _decode_array(doc["params"][name], name)
            for name in ("w_k", "w_q", "classifier_w", "classifier_b")
        }
        config = TrainConfig.from_dict(doc["config"])
    except KeyError as exc:
        raise ValidationError(f"{path}: missing checkpoint field {exc}") from exc
    params = ModelParams(**arrays)
    if params.num_classes != int(doc.get("num_classes", params.num_classes)):
        raise ValidationError(
            f"{path}: num_classes field {doc['num_classes']} does not match "
            f"classifier shape {params.classifier_w.shape}"
        )
    return params, config


def config_with_overrides(base: TrainConfig, overrides: dict) -> TrainConfig:
    """Merge override fields (JSON naming) into a config; overrides win."""
    merged = base.to_dict()
    for key, value in overrides.items():
        if value is not None:
            merged[key] = value
    return TrainConfig.from_dict(merged)
