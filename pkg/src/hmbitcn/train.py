"""Adam, subject-aware splitting, early-stopped training and multi-seed evaluation."""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as tn
from .data import ConfigError, Dataset
from .metrics import METRIC_NAMES, evaluate_scores
from .model import HmBiTcn, HmBiTcnConfig
from .snr import make_rng

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 10
    seeds: list[int] = field(default_factory=lambda: [41, 42, 43, 44, 45])

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.max_epochs < 1 or not 1 <= self.patience <= self.max_epochs:
            raise ConfigError("need 1 <= patience <= max_epochs")

    def to_dict(self) -> dict:
        return asdict(self)


class SplitMode(str, enum.Enum):
    SUBJECT_DEPENDENT = "subject_dependent"
    SUBJECT_INDEPENDENT = "subject_independent"


@dataclass
class SplitSpec:
    mode: SplitMode = SplitMode.SUBJECT_INDEPENDENT
    ratios: tuple[float, float, float] = (0.6, 0.2, 0.2)
    assignment: dict[str, list[str]] | None = None  # explicit subject ids per split
    seed: int = 0

    def __post_init__(self):
        self.mode = SplitMode(self.mode)
        self.ratios = tuple(float(r) for r in self.ratios)
        if len(self.ratios) != 3 or min(self.ratios) < 0 or sum(self.ratios) <= 0:
            raise ConfigError(f"bad split ratios {self.ratios}")

    def to_dict(self) -> dict:
        return {"mode": self.mode.value, "ratios": list(self.ratios), "assignment": self.assignment, "seed": self.seed}


def _split_counts(total: int, ratios) -> tuple[int, int, int]:
    """Sizes for (train, val, test), every part non-empty."""
    if total < 3:
        raise ConfigError(f"cannot form three non-empty splits from {total} units")
    r = np.asarray(ratios) / sum(ratios)
    n_val = max(1, int(round(r[1] * total)))
    n_test = max(1, int(round(r[2] * total)))
    n_train = total - n_val - n_test
    if n_train < 1:
        raise ConfigError(f"ratios {tuple(ratios)} leave no training data from {total} units")
    return n_train, n_val, n_test


def split(ds: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset, Dataset]:
    """Partition into (train, val, test); deterministic in ``spec.seed``.

    Subject-independent mode puts every subject's samples into exactly one
    split. Subject-dependent mode assigns samples irrespective of subject.
    """
    if len(ds) == 0:
        raise ConfigError("empty dataset")
    subjects = np.asarray(ds.subjects)

    if spec.assignment is not None:
        parts = []
        for name in ("train", "val", "test"):
            ids = set(spec.assignment.get(name, []))
            parts.append(np.flatnonzero(np.isin(subjects, list(ids))))
        seen = [set(spec.assignment.get(n, [])) for n in ("train", "val", "test")]
        if seen[0] & seen[1] or seen[0] & seen[2] or seen[1] & seen[2]:
            raise ConfigError("a subject is assigned to more than one split")
        if set(subjects) - (seen[0] | seen[1] | seen[2]):
            raise ConfigError("some subjects are not assigned to any split")
        if any(p.size == 0 for p in parts):
            raise ConfigError("explicit assignment leaves a split empty")
        return tuple(ds.subset(p) for p in parts)

    rng = make_rng(spec.seed)
    if spec.mode is SplitMode.SUBJECT_INDEPENDENT:
        unique = sorted(set(ds.subjects))
        if len(unique) < 3:
            raise ConfigError(f"subject-independent split needs >= 3 subjects, found {len(unique)}")
        order = [unique[i] for i in rng.permutation(len(unique))]
        n_train, n_val, _ = _split_counts(len(unique), spec.ratios)
        groups = (order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:])
        return tuple(ds.subset(np.flatnonzero(np.isin(subjects, g))) for g in groups)

    perm = rng.permutation(len(ds))
    n_train, n_val, _ = _split_counts(len(ds), spec.ratios)
    parts = (perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:])
    return tuple(ds.subset(np.sort(p)) for p in parts)


class Adam:
    """Bias-corrected Adam over a list of Tensors."""

    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self) -> None:
        tn.zero_grad(self.params)


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: dict, cfg: TrainConfig) -> tuple[list[np.ndarray], dict]:
    """Functional form of one Adam update; returns new params and state."""
    t = state.get("t", 0) + 1
    m = state.get("m") or [np.zeros_like(p) for p in params]
    v = state.get("v") or [np.zeros_like(p) for p in params]
    bc1 = 1.0 - cfg.adam_beta1 ** t
    bc2 = 1.0 - cfg.adam_beta2 ** t
    new_p, new_m, new_v = [], [], []
    for p, g, mi, vi in zip(params, grads, m, v):
        mi = cfg.adam_beta1 * mi + (1.0 - cfg.adam_beta1) * g
        vi = cfg.adam_beta2 * vi + (1.0 - cfg.adam_beta2) * g * g
        new_p.append(p - cfg.learning_rate * (mi / bc1) / (np.sqrt(vi / bc2) + cfg.adam_eps))
        new_m.append(mi)
        new_v.append(vi)
    return new_p, {"t": t, "m": new_m, "v": new_v}


def predict_proba(model: HmBiTcn, ds: Dataset, batch_size: int = 256) -> np.ndarray:
    out = []
    with tn.no_grad():
        for start in range(0, len(ds), batch_size):
            out.append(tn.softmax(model(ds.values[start:start + batch_size]).data))
    return np.concatenate(out, axis=0)


def evaluate(model: HmBiTcn, ds: Dataset) -> dict:
    return evaluate_scores(ds.labels, predict_proba(model, ds), ds.num_classes)


@dataclass
class TrainResult:
    model: HmBiTcn
    best_epoch: int
    best_val_f1: float
    history: list[dict]


def train(model_cfg: HmBiTcnConfig, train_ds: Dataset, val_ds: Dataset, cfg: TrainConfig, seed: int) -> TrainResult:
    """Train with Adam, keep the parameters of the best validation macro-F1 epoch.

    Improvement means a strict increase; training stops once ``patience``
    epochs pass without one.
    """
    if len(train_ds) == 0 or len(val_ds) == 0:
        raise ConfigError("training and validation splits must be non-empty")
    model = HmBiTcn(model_cfg, seed)
    params = model.parameters()
    opt = Adam(params, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    rng = make_rng(seed + 1_000_003)

    best_f1 = -math.inf
    best_epoch = 0
    best_flat = model.get_flat()
    history = []
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(train_ds))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            opt.zero_grad()
            try:
                loss = tn.softmax_cross_entropy(model(train_ds.values[idx]), train_ds.labels[idx])
            except tn.NonFiniteError as exc:
                raise TrainingError(f"non-finite values at epoch {epoch}, batch {start // cfg.batch_size}: {exc}") from exc
            tn.backward(loss)
            opt.step()
            model.project_coefficients()
            losses.append(loss.item() * len(idx))
        train_loss = float(np.sum(losses) / len(order))
        if not math.isfinite(train_loss):
            raise TrainingError(f"non-finite training loss at epoch {epoch}")
        val_f1 = evaluate(model, val_ds)["f1_macro"]
        history.append({"epoch": epoch, "train_loss": train_loss, "val_f1": val_f1})
        log.debug("epoch %d loss %.5f val_f1 %.4f", epoch, train_loss, val_f1)
        if val_f1 > best_f1:
            best_f1, best_epoch, best_flat = val_f1, epoch, model.get_flat()
        elif epoch - best_epoch >= cfg.patience:
            break
    model.set_flat(best_flat)
    return TrainResult(model, best_epoch, best_f1, history)


@dataclass
class MetricsReport:
    """Per-metric mean and sample standard deviation over seeds."""

    mean: dict[str, float]
    std: dict[str, float]
    per_seed: list[dict]

    @classmethod
    def from_runs(cls, runs: list[dict]) -> "MetricsReport":
        mean, std = {}, {}
        for name in METRIC_NAMES:
            vals = np.array([r[name] for r in runs], dtype=np.float64)
            mean[name] = float(vals.mean())
            std[name] = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
        return cls(mean, std, runs)

    def summary(self) -> str:
        """Percentages as value±std with two decimals."""
        return "\n".join(f"{name}: {format_pm(self.mean[name], self.std[name])}" for name in METRIC_NAMES)


def format_pm(mean: float, std: float) -> str:
    return f"{100 * mean:.2f}±{100 * std:.2f}"


def run_multi_seed(model_cfg: HmBiTcnConfig, splits, cfg: TrainConfig, seeds=None):
    """Train and test once per seed on fixed splits; returns (report, per-seed TrainResults)."""
    train_ds, val_ds, test_ds = splits
    seeds = cfg.seeds if seeds is None else seeds
    runs, results = [], []
    for seed in seeds:
        result = train(model_cfg, train_ds, val_ds, cfg, seed)
        metrics = evaluate(result.model, test_ds)
        metrics.update(seed=seed, best_epoch=result.best_epoch, epochs_run=len(result.history))
        runs.append(metrics)
        results.append(result)
    return MetricsReport.from_runs(runs), results
