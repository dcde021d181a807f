"""Extraction by distillation from a surrogate dataset.

The victim is queried once on at most ``cap`` distinct surrogate inputs and
the answers are cached; a student is then fitted to them with the
temperature-scaled KL objective.  Every (temperature, schedule) pair is
tried from the same initialization and the best test accuracy is kept.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .data import Dataset, SyntheticSpec, adapt_shape, generate, interpolate, skew_classes
from .exceptions import BudgetExhausted, ConfigurationError
from .losses import kl_temperature_grad, recover_logits
from .nn import Network, Optimizer, softmax
from .rng import make_rng
from .validation import check_fraction, check_matrix

SCHEDULES = {
    "cyclic": "triangular",
    "step-decay": [(0.3, 0.2), (0.6, 0.2), (0.8, 0.2)],
}
BENCHMARK_COLUMNS = ("surrogate", "kind", "accuracy", "normalized_accuracy", "tau", "schedule")


@dataclass
class SurrogateConfig:
    taus: tuple = (1, 3, 5, 10)
    schedules: tuple = ("cyclic", "step-decay")
    epochs: int = 30
    cap: int = 3000
    batch_size: int = 64
    learning_rate: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    student_hidden: tuple = (64, 64)
    lam_grid: tuple = (0.0, 0.25, 0.5, 0.75, 1.0)
    seed: int = 0

    def validate(self) -> None:
        if not self.taus or min(self.taus) < 1:
            raise ConfigurationError("temperatures must be >= 1")
        if self.cap < 1:
            raise ConfigurationError("cap must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigurationError("epochs and batch_size must be positive")
        unknown = set(self.schedules) - set(SCHEDULES)
        if unknown or not self.schedules:
            raise ConfigurationError(f"unknown schedules {sorted(unknown)}")
        for lam in self.lam_grid:
            check_fraction(lam, "lambda")


@dataclass
class DistillResult:
    student: Network
    accuracy: float
    tau: float
    schedule: str
    n_queries: int
    grid: list = field(default_factory=list)


def distinct_rows(X, cap: int) -> np.ndarray:
    """First ``cap`` distinct rows of ``X``, in order of first appearance."""
    X = np.asarray(X, dtype=np.float64)
    _, first = np.unique(X, axis=0, return_index=True)
    return X[np.sort(first)[:cap]]


def _train_student(X, targets, tau, schedule, cfg: SurrogateConfig, k: int) -> Network:
    rng = make_rng(cfg.seed)
    student = Network.build([X.shape[1], *cfg.student_hidden, k], "relu", "identity",
                            rng.spawn(1))
    order_rng = rng.spawn(2)
    n = X.shape[0]
    batches = -(-n // cfg.batch_size)
    opt = Optimizer("sgd-momentum", cfg.learning_rate, cfg.momentum, cfg.weight_decay,
                    SCHEDULES[schedule], cfg.epochs * batches)
    for _ in range(cfg.epochs):
        order = order_rng.permutation(n)
        for b in range(batches):
            idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            s, cache = student.forward(X[idx])
            grad = kl_temperature_grad(targets[idx], s, tau) / len(idx)
            grads, _ = student.backward(cache, grad)
            opt.step(student, grads)
    return student


def distill(handle, surrogate, cfg: SurrogateConfig | None = None, eval_set=None) -> DistillResult:
    """Distil the victim behind ``handle`` using surrogate inputs.

    ``surrogate`` is a :class:`Dataset` or an input matrix; it is reshaped to
    the oracle's dimension and clipped to the oracle's domain.  If the budget
    cannot cover every distinct input, the affordable prefix is used.
    """
    cfg = cfg or SurrogateConfig()
    cfg.validate()
    raw = surrogate.inputs if isinstance(surrogate, Dataset) else surrogate
    X = np.clip(adapt_shape(check_matrix(raw, name="surrogate"), handle.n_features), -1, 1)
    X = distinct_rows(X, min(cfg.cap, handle.remaining))
    if len(X) == 0:
        raise BudgetExhausted(1, handle.remaining)
    targets = recover_logits(handle.query(X, "student"))
    k = handle.n_classes

    grid = []
    best = None
    for tau in cfg.taus:
        for schedule in cfg.schedules:
            student = _train_student(X, targets, float(tau), schedule, cfg, k)
            acc = float("nan")
            if eval_set is not None:
                acc = float(np.mean(np.argmax(student(eval_set[0]), axis=1) == eval_set[1]))
            grid.append({"tau": float(tau), "schedule": schedule, "accuracy": acc})
            if best is None or acc > best.accuracy:
                best = DistillResult(student, acc, float(tau), schedule, len(X))
    best.grid = grid
    return best


def sweep_lambda(handle_factory, target: Dataset, surrogate: Dataset,
                 cfg: SurrogateConfig | None = None, eval_set=None) -> list[tuple[float, float]]:
    """Accuracy of distillation on ``(1 - lam) * target + lam * surrogate`` inputs.

    ``handle_factory()`` returns a fresh oracle handle per point, so every
    point gets the same budget.
    """
    cfg = cfg or SurrogateConfig()
    cfg.validate()
    probe = handle_factory()
    d = probe.n_features
    x_s = np.clip(adapt_shape(surrogate.inputs, d), -1, 1)
    n = min(len(target), len(x_s))
    curve = []
    for i, lam in enumerate(cfg.lam_grid):
        h = probe if i == 0 else handle_factory()
        x = interpolate(target.inputs[:n], x_s[:n], lam)
        curve.append((float(lam), distill(h, x, cfg, eval_set).accuracy))
    return curve


def standard_surrogates(victim_spec: SyntheticSpec, seed: int = 0) -> list[tuple[str, str, Dataset]]:
    """The benchmark's surrogate rows for a victim trained on ``victim_spec``.

    Returns ``(name, kind, dataset)`` triples of kinds matched, mismatched,
    skew, adapted and random.
    """
    d, k, n = victim_spec.n_features, victim_spec.n_classes, victim_spec.n_samples
    matched = generate(victim_spec, "train")
    rows = [("matched", "matched", matched)]
    blobs = SyntheticSpec("blobs", n, d, k, 0.3, seed + 101)
    rows.append((f"blobs-d{d}", "mismatched", generate(blobs)))
    rows.append((f"{matched.name}-skew", "skew", skew_classes(matched, range((k + 1) // 2))))
    if victim_spec.family == "spirals":
        other = SyntheticSpec("grid-digits", n, 36, 10, 0.6, seed + 103)
    else:
        other = SyntheticSpec("spirals", n, 2, 3, 0.03, seed + 103)
    adapted = generate(other)
    rows.append((f"{other.family}-adapted", "adapted",
                 replace(adapted, inputs=adapt_shape(adapted.inputs, d))))
    noise = SyntheticSpec("standard-normal-noise", n, d, k, 0.0, seed + 107)
    rows.append(("random", "random", generate(noise)))
    return rows


def benchmark_surrogates(handle_factory, surrogates, cfg: SurrogateConfig | None = None,
                         eval_set=None, victim_accuracy: float = float("nan")) -> list[dict]:
    """One distillation per surrogate; rows follow :data:`BENCHMARK_COLUMNS`."""
    if not surrogates:
        raise ConfigurationError("need at least one surrogate")
    table = []
    for name, kind, ds in surrogates:
        res = distill(handle_factory(), ds, cfg, eval_set)
        table.append({"surrogate": name, "kind": kind, "accuracy": res.accuracy,
                      "normalized_accuracy": res.accuracy / victim_accuracy,
                      "tau": res.tau, "schedule": res.schedule})
    return table


def write_csv(rows, columns, path) -> None:
    from .attack import format_metric
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            vals = row if isinstance(row, (tuple, list)) else [row[c] for c in columns]
            w.writerow([v if isinstance(v, str) else format_metric(v) for v in vals])


class SurrogateDistiller(ClassifierMixin, BaseEstimator):
    """Scikit-learn facade over :func:`distill`; ``fit`` takes the oracle and surrogate inputs."""

    def __init__(self, taus=(1, 3, 5, 10), schedules=("cyclic", "step-decay"), epochs=30,
                 cap=3000, batch_size=64, learning_rate=0.1, student_hidden=(64, 64),
                 random_state=0):
        self.taus = taus
        self.schedules = schedules
        self.epochs = epochs
        self.cap = cap
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.student_hidden = student_hidden
        self.random_state = random_state

    def fit(self, oracle, X_surrogate, eval_set=None):
        cfg = SurrogateConfig(taus=tuple(self.taus), schedules=tuple(self.schedules),
                              epochs=self.epochs, cap=self.cap, batch_size=self.batch_size,
                              learning_rate=self.learning_rate,
                              student_hidden=tuple(self.student_hidden), seed=self.random_state)
        self.result_ = distill(oracle, X_surrogate, cfg, eval_set)
        self.student_ = self.result_.student
        self.classes_ = np.arange(oracle.n_classes)
        self.n_features_in_ = oracle.n_features
        return self

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "student_")
        return self.student_(check_matrix(X, self.n_features_in_))

    def predict_proba(self, X) -> np.ndarray:
        return softmax(self.decision_function(X))

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.decision_function(X), axis=1)
