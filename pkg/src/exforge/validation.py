"""Input validation helpers used at public entry points."""
from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import DomainError, ShapeError, ValidationError

P_MIN = 1e-12


def check_matrix(X, n_features: int | None = None, name: str = "X") -> np.ndarray:
    """2-D float64 copy-free view of ``X``; rejects NaN/Inf and width mismatches."""
    try:
        X = check_array(X, dtype=np.float64, ensure_2d=True, ensure_min_samples=1,
                        input_name=name)
    except ValueError as exc:
        msg = str(exc)
        if "Expected 2D" in msg or "at least" in msg:
            raise ShapeError(msg) from exc
        raise ValidationError(msg) from exc
    if n_features is not None and X.shape[1] != n_features:
        raise ShapeError(f"{name} has {X.shape[1]} features, expected {n_features}")
    return X


def check_vector(x, size: int | None = None, name: str = "x") -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {x.shape}")
    if size is not None and x.shape[0] != size:
        raise ShapeError(f"{name} has length {x.shape[0]}, expected {size}")
    if not np.all(np.isfinite(x)):
        raise ValidationError(f"{name} contains non-finite values")
    return x


def check_unit_box(X, name: str = "X") -> None:
    if np.any(np.abs(X) > 1.0):
        worst = float(np.max(np.abs(X)))
        raise DomainError(f"{name} leaves [-1, 1]^d (max |x| = {worst:.6g})")


def check_probabilities(P, atol: float = 1e-9, name: str = "probs") -> np.ndarray:
    P = np.asarray(P, dtype=np.float64)
    if not np.all(np.isfinite(P)):
        raise ValidationError(f"{name} contains non-finite values")
    if np.any(P < -atol) or np.any(np.abs(P.sum(axis=-1) - 1.0) > atol):
        raise ValidationError(f"{name} is not a probability vector")
    return P


def check_fraction(value: float, name: str) -> float:
    value = float(value)
    if not 0.0 <= value <= 1.0:
        raise ValidationError(f"{name} must lie in [0, 1], got {value}")
    return value
