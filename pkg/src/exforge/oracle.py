"""Victim training and the query-metered black-box oracle."""
from __future__ import annotations

import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted, check_X_y

from . import jsonio
from .data import Dataset, SyntheticSpec, generate
from .exceptions import BudgetExhausted, ConfigurationError, PolicyError, TrainingError
from .nn import Network, Optimizer, log_softmax, softmax
from .rng import make_rng
from .validation import check_matrix, check_unit_box

PHASES = ("generator", "student", "evaluation")
METERED = ("generator", "student")


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient with respect to the logits."""
    n = logits.shape[0]
    logp = log_softmax(logits)
    loss = -float(logp[np.arange(n), labels].mean())
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


class DenseClassifier(ClassifierMixin, BaseEstimator):
    """Multi-layer perceptron trained with cross-entropy and SGD momentum."""

    def __init__(self, hidden_layer_sizes=(64,), activation="relu", epochs=50,
                 batch_size=64, learning_rate=0.1, momentum=0.9, weight_decay=5e-4,
                 schedule=((0.5, 0.1),), random_state=0):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.activation = activation
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.schedule = schedule
        self.random_state = random_state

    def fit(self, X, y, n_classes=None):
        X, y = check_X_y(X, y, dtype=np.float64)
        y = y.astype(np.int64)
        k = int(n_classes) if n_classes is not None else int(y.max()) + 1
        rng = make_rng(self.random_state)
        self.classes_ = np.arange(k)
        self.n_features_in_ = X.shape[1]
        self.network_ = Network.build([X.shape[1], *self.hidden_layer_sizes, k],
                                      self.activation, "identity", rng)
        n = X.shape[0]
        batches = -(-n // self.batch_size)
        opt = Optimizer("sgd-momentum", self.learning_rate, self.momentum,
                        self.weight_decay, list(self.schedule), self.epochs * batches)
        self.loss_curve_ = []
        for epoch in range(self.epochs):
            order = rng.permutation(n)
            total = 0.0
            for b in range(batches):
                idx = order[b * self.batch_size:(b + 1) * self.batch_size]
                logits, cache = self.network_.forward(X[idx])
                loss, grad = cross_entropy(logits, y[idx])
                if not np.isfinite(loss):
                    raise TrainingError("victim training diverged",
                                        {"epoch": epoch, "batch": b, "lr": opt.current_lr()})
                grads, _ = self.network_.backward(cache, grad)
                opt.step(self.network_, grads)
                total += loss * len(idx)
            self.loss_curve_.append(total / n)
        return self

    @classmethod
    def from_network(cls, network: Network) -> "DenseClassifier":
        clf = cls()
        clf.network_ = network
        clf.classes_ = np.arange(network.output_dim)
        clf.n_features_in_ = network.input_dim
        return clf

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "network_")
        return self.network_(X)

    def predict_proba(self, X) -> np.ndarray:
        return softmax(self.decision_function(X))

    def predict(self, X) -> np.ndarray:
        # np.argmax breaks ties toward the lowest index
        return np.argmax(self.decision_function(X), axis=1)


@dataclass
class VictimModel:
    network: Network
    train_spec: SyntheticSpec | None
    test_accuracy: float

    def to_dict(self) -> dict:
        from dataclasses import asdict
        return {"network": self.network.to_dict(),
                "train_spec": asdict(self.train_spec) if self.train_spec else None,
                "test_accuracy": self.test_accuracy}

    def save(self, path) -> None:
        jsonio.dump(self.to_dict(), path)

    @classmethod
    def load(cls, path) -> "VictimModel":
        doc = jsonio.load(Path(path))
        spec = SyntheticSpec(**doc["train_spec"]) if doc.get("train_spec") else None
        return cls(Network.from_dict(doc["network"]), spec, float(doc["test_accuracy"]))

    def test_set(self) -> Dataset:
        if self.train_spec is None:
            raise ConfigurationError("victim carries no dataset spec")
        return generate(self.train_spec, "test")


def train_victim(ds: Dataset, epochs: int = 50, test: Dataset | None = None,
                 **classifier_params) -> VictimModel:
    """Train a victim on ``ds`` and measure accuracy on its held-out split."""
    if len(ds) == 0:
        raise ConfigurationError("training split is empty")
    clf = DenseClassifier(epochs=epochs, **classifier_params)
    clf.fit(ds.inputs, ds.labels, n_classes=ds.n_classes)
    if test is None:
        test = generate(ds.spec, "test") if ds.spec is not None else ds
    acc = float(np.mean(clf.predict(test.inputs) == test.labels))
    return VictimModel(clf.network_, ds.spec, acc)


@dataclass
class QueryLedger:
    """Exact query accounting; charges are atomic and all-or-nothing."""

    budget: int
    used_generator_phase: int = 0
    used_student_phase: int = 0
    exhausted: bool = False
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    @property
    def used_total(self) -> int:
        return self.used_generator_phase + self.used_student_phase

    @property
    def remaining(self) -> int:
        return self.budget - self.used_total

    def charge(self, n: int, phase: str) -> None:
        if phase not in METERED:
            raise ConfigurationError(f"phase {phase!r} is not metered")
        with self._lock:
            if self.used_total + n > self.budget:
                self.exhausted = True
                raise BudgetExhausted(n, self.remaining)
            if phase == "generator":
                self.used_generator_phase += n
            else:
                self.used_student_phase += n

    def snapshot(self) -> dict:
        return {"budget": self.budget, "used_total": self.used_total,
                "used_generator_phase": self.used_generator_phase,
                "used_student_phase": self.used_student_phase, "exhausted": self.exhausted}


class OracleHandle:
    """Black-box access to a victim: probabilities in, nothing else out.

    With ``strict=True`` the diagnostic methods, which expose true logits
    and true input gradients for analysis, raise :class:`PolicyError`.
    """

    mode = "probabilities"

    def __init__(self, victim: Network | VictimModel, budget: int, strict: bool = False):
        network = victim.network if isinstance(victim, VictimModel) else victim
        if budget < 0:
            raise ConfigurationError("budget must be non-negative")
        self.__network = network
        self.strict = bool(strict)
        self.ledger = QueryLedger(int(budget))
        self.n_features = network.input_dim
        self.n_classes = network.output_dim
        self.diagnostic_calls = 0

    @property
    def remaining(self) -> int:
        return self.ledger.remaining

    @property
    def used_total(self) -> int:
        return self.ledger.used_total

    def query(self, X, phase: str = "student") -> np.ndarray:
        if phase not in PHASES:
            raise ConfigurationError(f"unknown phase {phase!r}")
        X = check_matrix(X, self.n_features)
        check_unit_box(X)
        if phase in METERED:
            self.ledger.charge(X.shape[0], phase)
        return softmax(self.__network(X))

    def _diagnostic(self) -> Network:
        if self.strict:
            raise PolicyError("white-box diagnostics are disabled in strict mode")
        self.diagnostic_calls += 1
        return self.__network

    def diagnostic_true_logits(self, X) -> np.ndarray:
        net = self._diagnostic()
        return net(check_matrix(X, self.n_features))

    def diagnostic_true_input_grad(self, X, loss_grad) -> np.ndarray:
        """Gradient w.r.t. ``X`` of a loss routed through the victim's logits.

        ``loss_grad(logits)`` returns ``dL/dlogits`` row-wise; the result is
        ``dL/dX`` for the victim path only (unmetered, diagnostic).
        """
        net = self._diagnostic()
        logits, cache = net.forward(check_matrix(X, self.n_features))
        _, dx = net.backward(cache, loss_grad(logits))
        return dx

    def diagnostic_network(self) -> Network:
        """Copy of the victim network, for tests that need a white-box twin."""
        return self._diagnostic().copy()
