"""Data-free model extraction: the generator/student min-max loop.

Each outer iteration runs ``n_generator`` generator steps, which *ascend*
the disagreement loss using zeroth-order input gradients, followed by
``n_student`` student steps, which descend it with exact backprop through
the student alone.  An iteration only starts when the remaining budget
covers all of it, so a run spends exactly
``iterations * (n_generator * (m + 1) * B + n_student * B)`` queries.
"""
from __future__ import annotations

import csv
import time
from dataclasses import asdict, dataclass, field, fields
from fractions import Fraction
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from . import jsonio
from .exceptions import BudgetExhausted, ConfigurationError, PolicyError, ValidationError
from .losses import LOGIT_MODES, LOSSES, disagreement
from .nn import Network, Optimizer, softmax
from .rng import make_rng
from .validation import check_matrix
from .zo import FwdDiffConfig, estimate_input_grad, true_input_grad

DEFAULT_SCHEDULE = ((0.1, 0.3), (0.3, 0.3), (0.5, 0.3))
METRIC_COLUMNS = ("queries_used", "accuracy", "fidelity", "loss_mean",
                  "grad_norm_l1", "grad_norm_kl", "wall_ms")


@dataclass
class AttackConfig:
    budget: int = 200_000
    n_generator: int = 1
    n_student: int = 5
    batch_size: int = 64
    latent_dim: int = 8
    fwd: FwdDiffConfig = field(default_factory=FwdDiffConfig)
    loss: str = "l1"
    logit_mode: str = "recovered"
    student_hidden: tuple = (64, 64)
    generator_hidden: tuple = (64,)
    student_lr: float = 0.1
    student_momentum: float = 0.9
    student_weight_decay: float = 5e-4
    generator_lr: float = 5e-4
    schedule: tuple = DEFAULT_SCHEDULE
    eval_every: int = 10_000
    diagnostics: bool = False
    seed: int = 0

    def validate(self) -> None:
        if self.budget <= 0:
            raise ConfigurationError("budget must be positive")
        if self.n_student < 1 or self.n_generator < 0 or self.batch_size < 1:
            raise ConfigurationError("need n_student >= 1, n_generator >= 0, batch_size >= 1")
        if self.loss not in LOSSES or self.logit_mode not in LOGIT_MODES:
            raise ConfigurationError(f"bad loss/logit mode {self.loss!r}/{self.logit_mode!r}")
        if self.latent_dim < 1 or self.eval_every < 1:
            raise ConfigurationError("latent_dim and eval_every must be positive")

    @property
    def iteration_cost(self) -> int:
        b = self.batch_size
        return self.n_generator * (self.fwd.m + 1) * b + self.n_student * b

    def planned_iterations(self, budget: int | None = None) -> int:
        return (self.budget if budget is None else budget) // self.iteration_cost

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["student_hidden"] = list(self.student_hidden)
        doc["generator_hidden"] = list(self.generator_hidden)
        doc["schedule"] = [list(s) for s in self.schedule]
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "AttackConfig":
        doc = dict(doc)
        fwd = doc.pop("fwd", {})
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigurationError(f"unknown attack settings {sorted(unknown)}")
        for key in ("student_hidden", "generator_hidden"):
            if key in doc:
                doc[key] = tuple(doc[key])
        if "schedule" in doc:
            doc["schedule"] = tuple(tuple(s) for s in doc["schedule"])
        return cls(fwd=FwdDiffConfig(**fwd), **doc)


def query_ratio(n_student: int, n_generator: int, m: int) -> Fraction:
    """Share of the budget spent directly on student training."""
    denom = n_student + (m + 1) * n_generator
    if denom <= 0:
        raise ValidationError("n_student + (m + 1) * n_generator must be positive")
    return Fraction(n_student, denom)


def expected_queries(budget: int, batch_size: int, n_generator: int, n_student: int,
                     m: int) -> int:
    cost = n_generator * (m + 1) * batch_size + n_student * batch_size
    return (budget // cost) * cost


@dataclass
class MetricsRecord:
    queries_used: int
    accuracy: float
    fidelity: float
    loss_mean: float
    grad_norm_l1: float = float("nan")
    grad_norm_kl: float = float("nan")
    wall_ms: float = 0.0


def evaluate_agreement(student: Network, handle, X, y, victim_pred=None) -> tuple[float, float]:
    """Student accuracy against labels and fidelity against the victim's argmax."""
    X = check_matrix(X, name="X")
    y = np.asarray(y)
    if X.shape[0] == 0:
        raise ValidationError("evaluation set is empty")
    if victim_pred is None:
        victim_pred = np.argmax(handle.query(X, "evaluation"), axis=1)
    student_pred = np.argmax(student(X), axis=1)
    return float(np.mean(student_pred == y)), float(np.mean(student_pred == victim_pred))


class AttackState:
    """Networks, optimizers and random stream of one extraction run."""

    def __init__(self, handle, cfg: AttackConfig, student: Network | None = None):
        cfg.validate()
        self.handle = handle
        self.cfg = cfg
        root = make_rng(cfg.seed)
        init_rng = root.spawn(1)
        self.rng = root.spawn(2)
        d, k = handle.n_features, handle.n_classes
        self.generator = Network.build([cfg.latent_dim, *cfg.generator_hidden, d],
                                       "relu", "tanh", init_rng)
        self.student = student if student is not None else Network.build(
            [d, *cfg.student_hidden, k], "relu", "identity", init_rng)
        if self.student.input_dim != d or self.student.output_dim != k:
            raise ConfigurationError("student shape does not match the oracle")
        iters = cfg.planned_iterations(min(cfg.budget, handle.remaining))
        self.generator_opt = Optimizer("adam", cfg.generator_lr, schedule=list(cfg.schedule),
                                       total_steps=max(iters * cfg.n_generator, 1))
        self.student_opt = Optimizer("sgd-momentum", cfg.student_lr, cfg.student_momentum,
                                     cfg.student_weight_decay, list(cfg.schedule),
                                     max(iters * cfg.n_student, 1))

    def sample_latent(self) -> np.ndarray:
        return self.rng.normal(size=(self.cfg.batch_size, self.cfg.latent_dim))


def generator_step(state: AttackState) -> None:
    """One ascent step on the disagreement loss for the generator."""
    cfg, handle = state.cfg, state.handle
    cost = (cfg.fwd.m + 1) * cfg.batch_size
    if handle.remaining < cost:
        raise BudgetExhausted(cost, handle.remaining)
    z = state.sample_latent()
    x_pre, cache = state.generator.forward(z)
    g = estimate_input_grad(handle, state.student, x_pre, cfg.loss, cfg.fwd, state.rng,
                            cfg.logit_mode)
    # ascend L: descend -L, averaged over the batch
    grads, _ = state.generator.backward(cache, -g / cfg.batch_size)
    state.generator_opt.step(state.generator, grads)


def student_step(state: AttackState) -> float:
    """One descent step for the student on fresh generator samples; returns the batch loss."""
    cfg, handle = state.cfg, state.handle
    if handle.remaining < cfg.batch_size:
        raise BudgetExhausted(cfg.batch_size, handle.remaining)
    x = np.tanh(state.generator(state.sample_latent()))
    true_logits = None
    if cfg.logit_mode == "true_diagnostic":
        true_logits = handle.diagnostic_true_logits(x)
    probs = handle.query(x, "student")
    s, cache = state.student.forward(x)
    losses, ds = disagreement(cfg.loss, probs, s, cfg.logit_mode, true_logits)
    grads, _ = state.student.backward(cache, ds / cfg.batch_size)
    state.student_opt.step(state.student, grads)
    return float(losses.mean())


@dataclass
class AttackResult:
    student: Network
    generator: Network
    metrics: list[MetricsRecord]
    config: AttackConfig
    ledger: dict
    victim_accuracy: float = float("nan")
    iterations: int = 0

    @property
    def final(self) -> MetricsRecord:
        return self.metrics[-1]

    @property
    def normalized_accuracy(self) -> float:
        return self.final.accuracy / self.victim_accuracy

    def summary(self) -> dict:
        """JSON-ready run summary; unrecorded metrics become ``None``."""
        def finite(x):
            return None if isinstance(x, float) and not np.isfinite(x) else x

        final = {k: finite(v) for k, v in asdict(self.final).items()}
        return {"config": self.config.to_dict(), "ledger": self.ledger,
                "iterations": self.iterations, "victim_accuracy": finite(self.victim_accuracy),
                "final": final, "normalized_accuracy": finite(self.normalized_accuracy),
                "diagnostic": bool(self.config.diagnostics)}


def _probe_grad_norms(state: AttackState, X_probe) -> tuple[float, float]:
    norms = []
    for loss in ("l1", "kl"):
        g = true_input_grad(state.handle, state.student, X_probe, loss, state.cfg.logit_mode
                            if state.cfg.logit_mode != "true_diagnostic" else "recovered")
        norms.append(float(np.linalg.norm(g, axis=1).mean()))
    return norms[0], norms[1]


def run_attack(handle, cfg: AttackConfig, eval_set=None, student: Network | None = None,
               probe_size: int = 64) -> AttackResult:
    """Run the full extraction loop until the budget cannot fund an iteration.

    ``eval_set`` is an ``(X, y)`` pair from the victim's domain used only for
    the unmetered accuracy/fidelity timeline.
    """
    cfg.validate()
    if cfg.logit_mode == "true_diagnostic" and getattr(handle, "strict", True):
        raise PolicyError("true-logit mode needs a non-strict oracle")
    state = AttackState(handle, cfg, student)
    start = time.perf_counter()
    budget_left = min(cfg.budget, handle.remaining)
    used0 = handle.used_total

    if eval_set is not None:
        X_eval, y_eval = check_matrix(eval_set[0], handle.n_features), np.asarray(eval_set[1])
        victim_pred = np.argmax(handle.query(X_eval, "evaluation"), axis=1)
        victim_acc = float(np.mean(victim_pred == y_eval))
        X_probe = X_eval[:probe_size]
    else:
        X_eval = y_eval = victim_pred = X_probe = None
        victim_acc = float("nan")

    records: list[MetricsRecord] = []
    pending: list[float] = []

    def record():
        used = handle.used_total - used0
        if X_eval is not None:
            acc, fid = evaluate_agreement(state.student, handle, X_eval, y_eval, victim_pred)
        else:
            acc = fid = float("nan")
        g1 = gk = float("nan")
        if cfg.diagnostics and X_probe is not None:
            g1, gk = _probe_grad_norms(state, X_probe)
        loss_mean = float(np.mean(pending)) if pending else float("nan")
        pending.clear()
        records.append(MetricsRecord(used, acc, fid, loss_mean, g1, gk,
                                     (time.perf_counter() - start) * 1e3))

    record()
    iterations = 0
    last_eval = 0
    while budget_left - (handle.used_total - used0) >= cfg.iteration_cost:
        for _ in range(cfg.n_generator):
            generator_step(state)
        for _ in range(cfg.n_student):
            pending.append(student_step(state))
        iterations += 1
        used = handle.used_total - used0
        if used - last_eval >= cfg.eval_every:
            record()
            last_eval = used
    if handle.used_total - used0 > records[-1].queries_used:
        record()
    return AttackResult(state.student, state.generator, records, cfg,
                        handle.ledger.snapshot(), victim_acc, iterations)


def format_metric(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return "" if not np.isfinite(x) else format(float(x), ".17g")


def write_metrics_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_COLUMNS)
        for r in records:
            w.writerow([format_metric(getattr(r, c)) for c in METRIC_COLUMNS])


def read_metrics_csv(path) -> list[MetricsRecord]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            vals = {c: (float(row[c]) if row[c] != "" else float("nan")) for c in METRIC_COLUMNS}
            vals["queries_used"] = int(vals["queries_used"])
            out.append(MetricsRecord(**vals))
    return out


def write_outputs(result: AttackResult, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(result.metrics, out / "metrics.csv")
    jsonio.dump(result.summary(), out / "summary.json")
    result.student.save(out / "student.json")
    result.generator.save(out / "generator.json")
    return out


class DataFreeExtractor(ClassifierMixin, BaseEstimator):
    """Scikit-learn facade over :func:`run_attack`.

    ``fit`` takes the oracle handle in place of training data; afterwards
    the extracted student answers ``predict`` / ``predict_proba`` locally.
    """

    def __init__(self, budget=200_000, n_generator=1, n_student=5, batch_size=64,
                 latent_dim=8, m=1, eps=1e-3, flip_probability=0.0, loss="l1",
                 logit_mode="recovered", student_hidden=(64, 64), generator_hidden=(64,),
                 student_lr=0.1, generator_lr=5e-4, eval_every=10_000, diagnostics=False,
                 random_state=0):
        self.budget = budget
        self.n_generator = n_generator
        self.n_student = n_student
        self.batch_size = batch_size
        self.latent_dim = latent_dim
        self.m = m
        self.eps = eps
        self.flip_probability = flip_probability
        self.loss = loss
        self.logit_mode = logit_mode
        self.student_hidden = student_hidden
        self.generator_hidden = generator_hidden
        self.student_lr = student_lr
        self.generator_lr = generator_lr
        self.eval_every = eval_every
        self.diagnostics = diagnostics
        self.random_state = random_state

    def config(self) -> AttackConfig:
        return AttackConfig(
            budget=self.budget, n_generator=self.n_generator, n_student=self.n_student,
            batch_size=self.batch_size, latent_dim=self.latent_dim,
            fwd=FwdDiffConfig(self.m, self.eps, None, self.flip_probability),
            loss=self.loss, logit_mode=self.logit_mode,
            student_hidden=tuple(self.student_hidden),
            generator_hidden=tuple(self.generator_hidden), student_lr=self.student_lr,
            generator_lr=self.generator_lr, eval_every=self.eval_every,
            diagnostics=self.diagnostics, seed=self.random_state)

    def fit(self, oracle, eval_set=None):
        self.result_ = run_attack(oracle, self.config(), eval_set)
        self.student_ = self.result_.student
        self.classes_ = np.arange(oracle.n_classes)
        self.n_features_in_ = oracle.n_features
        return self

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "student_")
        return self.student_(X)

    def predict_proba(self, X) -> np.ndarray:
        return softmax(self.decision_function(X))

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.decision_function(X), axis=1)
