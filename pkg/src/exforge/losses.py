"""Student/victim disagreement losses and logit recovery.

All functions operate row-wise on the last axis, so they accept a single
K-vector or a ``(B, K)`` batch.  Gradients are taken with respect to the
*student logits* unless stated otherwise.
"""
from __future__ import annotations

import numpy as np

from .exceptions import ConfigurationError
from .nn import log_softmax, softmax
from .validation import P_MIN, check_probabilities

LOSSES = ("l1", "kl")
LOGIT_MODES = ("recovered", "log_prob", "true_diagnostic")


def center(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x - x.mean(axis=-1, keepdims=True)


def recover_logits(probs) -> np.ndarray:
    """Mean-centred log-probabilities: the victim logits minus their mean.

    The per-example additive constant hidden by the softmax cancels in the
    centring, so recovery is exact whenever every probability is above
    ``P_MIN``.
    """
    return center(np.log(np.maximum(check_probabilities(probs), P_MIN)))


def log_prob_logits(probs) -> np.ndarray:
    return np.log(np.maximum(check_probabilities(probs), P_MIN))


def l1_loss(v, s) -> np.ndarray | float:
    return np.abs(np.asarray(v) - np.asarray(s)).sum(axis=-1)


def l1_grad(v, s) -> np.ndarray:
    # np.sign(0) == 0: ties contribute nothing
    return -np.sign(np.asarray(v) - np.asarray(s))


def kl_loss(p_victim, p_student) -> np.ndarray | float:
    pv = np.asarray(p_victim, dtype=np.float64)
    ps = np.maximum(np.asarray(p_student, dtype=np.float64), P_MIN)
    safe = np.where(pv > 0, pv, 1.0)
    return np.where(pv > 0, pv * (np.log(safe) - np.log(ps)), 0.0).sum(axis=-1)


def kl_grad(p_victim, p_student) -> np.ndarray:
    """``d KL(V || softmax(s)) / d s = S - V``."""
    return np.asarray(p_student) - np.asarray(p_victim)


def kl_temperature_loss(v, s, tau: float) -> np.ndarray | float:
    """``tau**2 * KL(softmax(v / tau) || softmax(s / tau))``."""
    if tau < 1:
        raise ConfigurationError(f"temperature must be >= 1, got {tau}")
    return tau ** 2 * kl_loss(softmax(np.asarray(v) / tau), softmax(np.asarray(s) / tau))


def kl_temperature_grad(v, s, tau: float) -> np.ndarray:
    if tau < 1:
        raise ConfigurationError(f"temperature must be >= 1, got {tau}")
    return tau * (softmax(np.asarray(s) / tau) - softmax(np.asarray(v) / tau))


def _check_kind(kind: str, logit_mode: str) -> None:
    if kind not in LOSSES:
        raise ConfigurationError(f"unknown loss {kind!r}")
    if logit_mode not in LOGIT_MODES:
        raise ConfigurationError(f"unknown logit mode {logit_mode!r}")


def victim_targets(probs, logit_mode: str = "recovered", true_logits=None) -> np.ndarray:
    """Victim-side operand of the l1 loss for the chosen logit access mode."""
    if logit_mode == "recovered":
        return recover_logits(probs)
    if logit_mode == "log_prob":
        return log_prob_logits(probs)
    if true_logits is None:
        raise ConfigurationError("true_diagnostic mode needs the victim's true logits")
    return np.asarray(true_logits, dtype=np.float64)


def disagreement(kind: str, probs, student_logits, logit_mode: str = "recovered",
                 true_logits=None) -> tuple[np.ndarray, np.ndarray]:
    """Per-row loss and its gradient w.r.t. the student logits.

    In ``recovered`` mode the student logits are mean-centred before the l1
    comparison so both operands share the zero-mean coordinate system; the
    other modes compare raw student logits against their target.
    """
    _check_kind(kind, logit_mode)
    s = np.asarray(student_logits, dtype=np.float64)
    if kind == "kl":
        ps = softmax(s)
        return kl_loss(probs, ps), kl_grad(probs, ps)
    target = victim_targets(probs, logit_mode, true_logits)
    if logit_mode == "recovered":
        s_c = center(s)
        return l1_loss(target, s_c), center(l1_grad(target, s_c))
    return l1_loss(target, s), l1_grad(target, s)


def disagreement_from_logits(kind: str, victim_logits, student_logits,
                             logit_mode: str = "recovered"):
    """Loss with gradients w.r.t. *both* logit vectors (white-box analysis).

    Treats the victim side exactly as the black-box pipeline sees it
    (recovered logits are the centred true logits), returning
    ``(loss, dL/dv, dL/ds)``.
    """
    _check_kind(kind, logit_mode)
    v = np.asarray(victim_logits, dtype=np.float64)
    s = np.asarray(student_logits, dtype=np.float64)
    if kind == "kl":
        pv, ps = softmax(v), softmax(s)
        loss = kl_loss(pv, ps)
        y = np.log(np.maximum(pv, P_MIN)) - np.log(np.maximum(ps, P_MIN))
        # J_V y with J_V = diag(V) - V V^T
        dv = pv * y - pv * (pv * y).sum(axis=-1, keepdims=True)
        return loss, dv, ps - pv
    if logit_mode == "recovered":
        diff = center(v) - center(s)
        sg = center(np.sign(diff))
        return np.abs(diff).sum(axis=-1), sg, -sg
    if logit_mode == "log_prob":
        lv = log_softmax(v)
        sg = np.sign(lv - s)
        pv = softmax(v)
        # d log_softmax(v)_i / d v_j = delta_ij - V_j
        dv = sg - pv * sg.sum(axis=-1, keepdims=True)
        return np.abs(lv - s).sum(axis=-1), dv, -sg
    diff = v - s
    return np.abs(diff).sum(axis=-1), np.sign(diff), -np.sign(diff)
