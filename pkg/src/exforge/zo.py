"""Zeroth-order input-gradient estimation through the black-box victim.

The generator is trained from gradients of the disagreement loss with
respect to its output images.  Those images pass through ``tanh`` before
reaching the victim, so every estimate here is taken with respect to the
*pre-tanh* image ``p``: perturbed points ``tanh(p + eps * u)`` can never
leave the oracle's ``[-1, 1]^d`` domain.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigurationError
from .losses import disagreement, disagreement_from_logits
from .nn import Network
from .rng import make_rng
from .validation import check_fraction, check_matrix


@dataclass
class FwdDiffConfig:
    """Forward-differences estimator settings.

    ``dim_scale`` multiplies every directional derivative; ``None`` uses the
    input dimension ``d``, which makes the estimator unbiased for the
    (smoothed) gradient when directions are uniform on the unit sphere.
    """

    m: int = 1
    eps: float = 1e-3
    dim_scale: float | None = None
    flip_probability: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if int(self.m) < 1:
            raise ConfigurationError("m must be at least 1")
        if not self.eps > 0:
            raise ConfigurationError("eps must be positive")
        check_fraction(self.flip_probability, "flip_probability")

    def scale(self, d: int) -> float:
        return float(d if self.dim_scale is None else self.dim_scale)


def sample_directions(m: int, d: int, rng) -> np.ndarray:
    """``m`` i.i.d. directions, uniform on the unit sphere of ``R^d``."""
    if d < 1:
        raise ConfigurationError("d must be at least 1")
    rng = make_rng(rng)
    u = rng.normal(size=(int(m), int(d)))
    norms = np.linalg.norm(u, axis=1, keepdims=True)
    # a zero draw has probability ~0; resample-free guard
    norms[norms == 0] = 1.0
    return u / norms


def corrupt_sign(g, p: float, rng) -> np.ndarray:
    """Negate ``g`` with probability ``p``; a 2-D ``g`` flips each row independently."""
    p = check_fraction(p, "p")
    g = np.asarray(g, dtype=np.float64)
    if p == 0.0:
        return g
    rng = make_rng(rng)
    if g.ndim == 2:
        flips = rng.random(g.shape[0]) < p
        return np.where(flips[:, None], -g, g)
    return -g if rng.random() < p else g


def forward_differences(f, x, cfg: FwdDiffConfig, rng=None, directions=None) -> np.ndarray:
    """Average of ``d * (f(x + eps u_i) - f(x)) / eps * u_i`` over ``m`` directions.

    Calls ``f`` exactly ``m + 1`` times.
    """
    rng = make_rng(cfg.seed if rng is None else rng)
    x = np.asarray(x, dtype=np.float64)
    d = x.shape[-1]
    u = sample_directions(cfg.m, d, rng) if directions is None else np.asarray(directions)
    f0 = float(f(x))
    g = np.zeros(d)
    for ui in u:
        g += (float(f(x + cfg.eps * ui)) - f0) / cfg.eps * ui
    g *= cfg.scale(d) / len(u)
    return corrupt_sign(g, cfg.flip_probability, rng)


def estimate_input_grad(handle, student: Network, x_pre, loss: str, cfg: FwdDiffConfig,
                        rng=None, logit_mode: str = "recovered") -> np.ndarray:
    """Batch forward-differences estimate of ``dL/dp`` at pre-tanh images ``p``.

    All ``(m + 1) * B`` query points go to the oracle in one metered
    generator-phase call, so an unaffordable batch is refused before any
    charge.
    """
    rng = make_rng(cfg.seed if rng is None else rng)
    x_pre = check_matrix(x_pre, name="x_pre")
    b, d = x_pre.shape
    m = int(cfg.m)
    u = sample_directions(m * b, d, rng).reshape(m, b, d)
    points = np.concatenate([x_pre[None], x_pre[None] + cfg.eps * u]).reshape(-1, d)
    images = np.tanh(points)
    probs = handle.query(images, "generator")
    true_logits = handle.diagnostic_true_logits(images) if logit_mode == "true_diagnostic" \
        else None
    losses, _ = disagreement(loss, probs, student(images), logit_mode, true_logits)
    losses = losses.reshape(m + 1, b)
    slopes = (losses[1:] - losses[0]) / cfg.eps  # (m, b)
    g = (slopes[:, :, None] * u).sum(axis=0) * (cfg.scale(d) / m)
    return corrupt_sign(g, cfg.flip_probability, rng)


def true_input_grad(handle, student: Network, x, loss: str, logit_mode: str = "recovered",
                    pre_tanh: bool = False) -> np.ndarray:
    """Exact per-row ``dL/dx`` (or ``dL/dp`` with ``pre_tanh``) via diagnostics.

    Combines the victim path (unmetered white-box diagnostic) with the
    student path (ordinary backprop).  Unavailable in strict mode.
    """
    x = check_matrix(x, handle.n_features)
    images = np.tanh(x) if pre_tanh else x
    v = handle.diagnostic_true_logits(images)
    s, cache = student.forward(images)
    _, dv, ds = disagreement_from_logits(loss, v, s, logit_mode)
    g_victim = handle.diagnostic_true_input_grad(images, lambda logits: dv)
    _, g_student = student.backward(cache, ds)
    g = g_victim + g_student
    if pre_tanh:
        g = g * (1.0 - images ** 2)
    return g


def cosine_similarity(a, b) -> np.ndarray:
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    num = (a * b).sum(axis=1)
    den = np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1)
    return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
