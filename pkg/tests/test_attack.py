import copy
from fractions import Fraction

import numpy as np
import pytest
from sklearn.base import clone

from exforge.attack import (AttackConfig, AttackState, DataFreeExtractor, evaluate_agreement,
                            expected_queries, generator_step, query_ratio, read_metrics_csv,
                            run_attack, student_step, write_outputs)
from exforge.exceptions import ConfigurationError, PolicyError, ValidationError
from exforge.losses import disagreement
from exforge.nn import Network
from exforge.oracle import OracleHandle
from exforge.zo import FwdDiffConfig


def test_query_ratio_examples():
    assert query_ratio(5, 1, 1) == Fraction(5, 7)
    assert round(float(query_ratio(5, 1, 1)), 3) == 0.714
    assert query_ratio(5, 1, 10) == Fraction(5, 16) == 0.3125
    assert query_ratio(5, 0, 7) == 1
    with pytest.raises(ValidationError):
        query_ratio(0, 0, 1)


def test_budget_example_980(small_victim):
    h = OracleHandle(small_victim, 1000)
    cfg = AttackConfig(budget=1000, batch_size=10, fwd=FwdDiffConfig(m=1))
    res = run_attack(h, cfg)
    assert res.iterations == 14 and h.used_total == 980
    assert h.ledger.used_generator_phase == 14 * 20 and h.ledger.used_student_phase == 14 * 50


@pytest.mark.parametrize("budget,b,ng,ns,m", [(1000, 10, 1, 5, 1), (777, 7, 2, 3, 2),
                                              (500, 4, 0, 5, 1), (2000, 16, 1, 1, 10),
                                              (50, 64, 1, 5, 1), (3001, 5, 3, 2, 4)])
def test_ledger_matches_closed_form(small_victim, budget, b, ng, ns, m):
    h = OracleHandle(small_victim, budget)
    cfg = AttackConfig(budget=budget, batch_size=b, n_generator=ng, n_student=ns,
                       fwd=FwdDiffConfig(m=m), eval_every=10**9)
    run_attack(h, cfg)
    assert h.used_total == expected_queries(budget, b, ng, ns, m)
    if ng == 0:
        assert h.ledger.used_generator_phase == 0


def test_metrics_timeline(small_victim):
    h = OracleHandle(small_victim, 3000)
    ts = small_victim.test_set()
    res = run_attack(h, AttackConfig(budget=3000, batch_size=10, eval_every=500),
                     (ts.inputs, ts.labels))
    q = [r.queries_used for r in res.metrics]
    assert q[0] == 0 and all(a < b for a, b in zip(q, q[1:])) and q[-1] == h.used_total
    assert 0 <= res.final.fidelity <= 1 and np.isfinite(res.final.loss_mean)
    assert res.victim_accuracy == pytest.approx(small_victim.test_accuracy)


def _state(victim, seed, **kw):
    cfg = AttackConfig(budget=10**6, batch_size=32, seed=seed, **kw)
    return AttackState(OracleHandle(victim, 10**6), cfg)


def _batch_loss(state, x, loss="l1"):
    probs = state.handle.query(x, "evaluation")
    return float(disagreement(loss, probs, state.student(x))[0].mean())


def test_generator_step_ascends_usually(small_victim):
    ups = 0
    for seed in range(100):
        st = _state(small_victim, seed, generator_lr=1e-2)
        z = st.rng.spawn(99).normal(size=(32, 8))
        before = _batch_loss(st, np.tanh(st.generator(z)))
        student_params = [p.copy() for p in st.student.params]
        generator_step(st)
        after = _batch_loss(st, np.tanh(st.generator(z)))
        ups += after >= before
        assert all(np.array_equal(a, b) for a, b in zip(student_params, st.student.params))
    assert ups >= 60


def test_student_step_descends_on_its_batch(small_victim):
    for seed in range(10):
        st = _state(small_victim, seed, student_lr=1e-3)
        z = copy.deepcopy(st.rng).normal(size=(32, 8))
        x = np.tanh(st.generator(z))
        before = _batch_loss(st, x)
        gen_params = [p.copy() for p in st.generator.params]
        student_step(st)
        assert _batch_loss(st, x) < before
        assert all(np.array_equal(a, b) for a, b in zip(gen_params, st.generator.params))
        assert st.handle.ledger.used_student_phase == 32


def test_true_logit_mode_needs_lenient_oracle(small_victim):
    cfg = AttackConfig(budget=1000, batch_size=10, logit_mode="true_diagnostic")
    with pytest.raises(PolicyError):
        run_attack(OracleHandle(small_victim, 1000, strict=True), cfg)
    res = run_attack(OracleHandle(small_victim, 1000), cfg)
    assert res.iterations == 14


def test_config_validation_and_roundtrip():
    with pytest.raises(ConfigurationError):
        AttackConfig(n_student=0).validate()
    with pytest.raises(ConfigurationError):
        AttackConfig(loss="hinge").validate()
    cfg = AttackConfig(fwd=FwdDiffConfig(m=4, eps=1e-2), student_hidden=(8,))
    assert AttackConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigurationError):
        AttackConfig.from_dict({"nonsense": 1})


def test_evaluate_agreement(small_victim):
    h = OracleHandle(small_victim, 0)
    ts = small_victim.test_set()
    acc, fid = evaluate_agreement(small_victim.network, h, ts.inputs, ts.labels)
    assert fid == 1.0 and acc == pytest.approx(small_victim.test_accuracy)
    const = Network.build([4, 3], rng=0)
    for p in const.params:
        p[...] = 0
    acc, _ = evaluate_agreement(const, h, ts.inputs, ts.labels)
    assert acc == pytest.approx(np.mean(ts.labels == 0))
    assert abs(acc - 1 / 3) < 0.05
    with pytest.raises(ValidationError):
        evaluate_agreement(const, h, np.zeros((0, 4)), [])


def test_outputs_roundtrip(tmp_path, small_victim):
    ts = small_victim.test_set()
    res = run_attack(OracleHandle(small_victim, 2000),
                     AttackConfig(budget=2000, batch_size=10, eval_every=300),
                     (ts.inputs, ts.labels))
    out = write_outputs(res, tmp_path / "run")
    back = read_metrics_csv(out / "metrics.csv")
    assert len(back) == len(res.metrics)
    for a, b in zip(back, res.metrics):
        assert a.queries_used == b.queries_used
        for col in ("accuracy", "fidelity", "loss_mean", "grad_norm_l1", "wall_ms"):
            assert np.array_equal(getattr(a, col), getattr(b, col), equal_nan=True)
    assert (out / "student.json").exists() and (out / "generator.json").exists()
    gen = Network.load(out / "generator.json")
    assert gen.output_activation == "tanh"


def test_warm_start_student_shape_checked(small_victim):
    with pytest.raises(ConfigurationError):
        run_attack(OracleHandle(small_victim, 100), AttackConfig(budget=100),
                   student=Network.build([5, 3], rng=0))


def test_extractor_estimator(small_victim):
    est = DataFreeExtractor(budget=3000, batch_size=16, random_state=1)
    assert clone(est).get_params()["budget"] == 3000
    ts = small_victim.test_set()
    est.fit(OracleHandle(small_victim, 3000), (ts.inputs, ts.labels))
    assert est.predict(ts.inputs).shape == (len(ts),)
    assert np.allclose(est.predict_proba(ts.inputs[:3]).sum(axis=1), 1)
    assert 0 <= est.score(ts.inputs, ts.labels) <= 1


def test_runs_are_reproducible(small_victim):
    ts = small_victim.test_set()
    cfg = AttackConfig(budget=2000, batch_size=10, eval_every=500, seed=3)
    a = run_attack(OracleHandle(small_victim, 2000), cfg, (ts.inputs, ts.labels))
    b = run_attack(OracleHandle(small_victim, 2000), cfg, (ts.inputs, ts.labels))
    for p, q in zip(a.student.params, b.student.params):
        assert np.array_equal(p, q)
