import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from exforge.exceptions import ConfigurationError
from exforge.losses import (center, disagreement, disagreement_from_logits, kl_grad, kl_loss,
                            kl_temperature_grad, kl_temperature_loss, l1_grad, l1_loss,
                            log_prob_logits, recover_logits)
from exforge.nn import log_softmax, softmax
from helpers import central_diff, rel_err

logits = arrays(np.float64, st.integers(2, 10), elements=st.floats(-8, 8))


def test_recover_logits_example():
    assert np.allclose(recover_logits(softmax(np.array([3.0, 1.0, 2.0]))), [1, -1, 0],
                       atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(logits)
def test_recovery_identity(v):
    assert np.max(np.abs(recover_logits(softmax(v)) - (v - v.mean()))) < 1e-12


@settings(max_examples=50, deadline=None)
@given(logits, st.floats(-20, 20), st.floats(-20, 20))
def test_recovered_l1_ignores_additive_constants(v, c1, c2):
    s = v[::-1].copy()
    lhs = l1_loss(recover_logits(softmax(v + c1)), recover_logits(softmax(s + c2)))
    assert abs(lhs - l1_loss(center(v), center(s))) < 1e-9


def test_l1_examples_and_gradient():
    v, s = np.array([1.0, -2.0, 0.5]), np.zeros(3)
    assert l1_loss(v, s) == 3.5 and l1_loss(v, v) == 0
    s = np.array([0.3, 0.1, -0.4])
    assert rel_err(l1_grad(v, s), central_diff(lambda x: l1_loss(v, x), s)) < 1e-6
    assert l1_grad(v, v).tolist() == [0, 0, 0]


def test_kl_examples():
    assert abs(kl_loss([0.5, 0.5], [0.25, 0.75]) - (0.5 * np.log(2) + 0.5 * np.log(2 / 3))) < 1e-12
    assert abs(kl_loss([0.5, 0.5], [0.25, 0.75]) - 0.14384) < 1e-5
    assert kl_loss([0.2, 0.8], [0.2, 0.8]) == 0
    assert kl_loss([0.0, 1.0], [0.5, 0.5]) == pytest.approx(np.log(2))


@settings(max_examples=50, deadline=None)
@given(logits)
def test_kl_gradient_is_s_minus_v(s):
    v = np.linspace(-1, 1, len(s))
    pv = softmax(v)
    g = central_diff(lambda x: kl_loss(pv, softmax(x)), s)
    assert np.max(np.abs(kl_grad(pv, softmax(s)) - g)) < 1e-8


def test_temperature_kl():
    v, s = np.array([2.0, 0.0, -1.0]), np.array([0.5, 0.2, 0.1])
    assert kl_temperature_loss(v, s, 1) == pytest.approx(kl_loss(softmax(v), softmax(s)), abs=1e-15)
    assert kl_temperature_loss(v, v, 5) == 0
    table = {t: t ** 2 * kl_loss(softmax(v / t), softmax(s / t)) for t in (1, 3, 5, 10)}
    for t, val in table.items():
        assert kl_temperature_loss(v, s, t) == pytest.approx(val, rel=1e-12)
        g = central_diff(lambda x: kl_temperature_loss(v, x, t), s)
        assert rel_err(kl_temperature_grad(v, s, t), g) < 1e-7
    # large-tau limit: half the mean squared gap of the centred logits
    d = center(v) - center(s)
    assert kl_temperature_loss(v, s, 1000) == pytest.approx((d ** 2).mean() / 2, rel=1e-3)
    with pytest.raises(ConfigurationError):
        kl_temperature_loss(v, s, 0.5)
    with pytest.raises(ConfigurationError):
        kl_temperature_grad(v, s, 0.5)


@pytest.mark.parametrize("kind,mode", [("l1", "recovered"), ("l1", "log_prob"),
                                       ("l1", "true_diagnostic"), ("kl", "recovered")])
def test_disagreement_student_gradient(kind, mode):
    rng = np.random.default_rng(3)
    v, s = rng.normal(size=(5, 4)), rng.normal(size=(5, 4))
    probs = softmax(v)

    def f(x):
        return disagreement(kind, probs, x, mode, v)[0].sum()

    _, ds = disagreement(kind, probs, s, mode, v)
    assert rel_err(ds, central_diff(f, s)) < 1e-6


@pytest.mark.parametrize("kind,mode", [("l1", "recovered"), ("l1", "log_prob"),
                                       ("l1", "true_diagnostic"), ("kl", "recovered")])
def test_white_box_gradients(kind, mode):
    rng = np.random.default_rng(4)
    v, s = rng.normal(size=(3, 5)), rng.normal(size=(3, 5))
    loss, dv, ds = disagreement_from_logits(kind, v, s, mode)
    black, _ = disagreement(kind, softmax(v), s, mode, v)
    assert np.allclose(loss, black, atol=1e-12)
    assert rel_err(dv, central_diff(lambda x: disagreement_from_logits(kind, x, s, mode)[0].sum(), v)) < 1e-6
    assert rel_err(ds, central_diff(lambda x: disagreement_from_logits(kind, v, x, mode)[0].sum(), s)) < 1e-6


def test_disagreement_validation():
    with pytest.raises(ConfigurationError):
        disagreement("l2", softmax(np.zeros(3)), np.zeros(3))
    with pytest.raises(ConfigurationError):
        disagreement("l1", softmax(np.zeros(3)), np.zeros(3), "true_diagnostic")


def test_log_prob_mode_is_shifted_by_logsumexp():
    v = np.array([1.0, 2.0, 4.0])
    assert np.allclose(log_prob_logits(softmax(v)), log_softmax(v))
