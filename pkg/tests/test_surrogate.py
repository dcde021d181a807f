import numpy as np
import pytest
from sklearn.base import clone

from exforge.data import SyntheticSpec, generate
from exforge.exceptions import BudgetExhausted, ConfigurationError
from exforge.oracle import OracleHandle
from exforge.surrogate import (BENCHMARK_COLUMNS, SurrogateConfig, SurrogateDistiller,
                               benchmark_surrogates, distill, distinct_rows,
                               standard_surrogates, sweep_lambda, write_csv)

FAST = SurrogateConfig(taus=(1, 3), schedules=("cyclic",), epochs=5, cap=400)


def test_config_validation():
    with pytest.raises(ConfigurationError):
        SurrogateConfig(taus=(0.5,)).validate()
    with pytest.raises(ConfigurationError):
        SurrogateConfig(cap=0).validate()
    with pytest.raises(ConfigurationError):
        SurrogateConfig(schedules=("cosine",)).validate()
    with pytest.raises(ValueError):
        SurrogateConfig(lam_grid=(1.5,)).validate()


def test_distinct_rows_keeps_first_occurrences():
    x = np.array([[1.0, 0], [0, 1], [1, 0], [2, 2]])
    assert distinct_rows(x, 10).tolist() == [[1, 0], [0, 1], [2, 2]]
    assert distinct_rows(x, 2).tolist() == [[1, 0], [0, 1]]


def test_cap_and_single_query(small_victim):
    h = OracleHandle(small_victim, 10_000)
    ds = generate(small_victim.train_spec)
    res = distill(h, ds, FAST, (ds.inputs, ds.labels))
    assert h.used_total == res.n_queries == 400
    assert len(res.grid) == 2 and res.tau in (1.0, 3.0)


def test_repeated_inputs_are_charged_once(small_victim):
    h = OracleHandle(small_victim, 10_000)
    x = np.tile(np.array([[0.1, 0.2, 0.3, 0.4], [0.0, 0.0, 0.0, 0.0]]), (50, 1))
    distill(h, x, FAST)
    assert h.used_total == 2


def test_budget_limits_distinct_samples(small_victim):
    h = OracleHandle(small_victim, 123)
    res = distill(h, generate(small_victim.train_spec), FAST)
    assert res.n_queries == 123 and h.remaining == 0
    with pytest.raises(BudgetExhausted):
        distill(h, generate(small_victim.train_spec), FAST)


def test_matched_surrogate_near_victim(small_victim):
    ts = small_victim.test_set()
    res = distill(OracleHandle(small_victim, 10_000), generate(small_victim.train_spec),
                  SurrogateConfig(epochs=15, cap=600), (ts.inputs, ts.labels))
    assert res.accuracy >= small_victim.test_accuracy - 0.03


def test_sweep_endpoints(small_victim):
    ts = small_victim.test_set()
    target = generate(small_victim.train_spec)
    sur = generate(SyntheticSpec("uniform-noise", 600, 4, 3, 0, 1))
    cfg = SurrogateConfig(taus=(1,), schedules=("cyclic",), epochs=5, cap=400, lam_grid=(0, 1))
    factory = lambda: OracleHandle(small_victim, 10_000)
    curve = sweep_lambda(factory, target, sur, cfg, (ts.inputs, ts.labels))
    assert [lam for lam, _ in curve] == [0.0, 1.0]
    assert curve[0][1] == distill(factory(), target, cfg, (ts.inputs, ts.labels)).accuracy
    assert curve[1][1] == distill(factory(), sur, cfg, (ts.inputs, ts.labels)).accuracy


def test_standard_surrogates_shapes():
    rows = standard_surrogates(SyntheticSpec("spirals", 300, 2, 3, 0.03, 7))
    assert [k for _, k, _ in rows] == ["matched", "mismatched", "skew", "adapted", "random"]
    assert all(ds.n_features == 2 for _, _, ds in rows)
    skew = rows[2][2]
    assert set(skew.labels) == {0, 1}


def test_benchmark_table(tmp_path, small_victim):
    ts = small_victim.test_set()
    rows = benchmark_surrogates(lambda: OracleHandle(small_victim, 10_000),
                                standard_surrogates(small_victim.train_spec), FAST,
                                (ts.inputs, ts.labels), small_victim.test_accuracy)
    assert {r["kind"] for r in rows} == {"matched", "mismatched", "skew", "adapted", "random"}
    write_csv(rows, BENCHMARK_COLUMNS, tmp_path / "b.csv")
    lines = (tmp_path / "b.csv").read_text().splitlines()
    assert lines[0] == ",".join(BENCHMARK_COLUMNS) and len(lines) == 6
    with pytest.raises(ConfigurationError):
        benchmark_surrogates(lambda: None, [], FAST)


def test_distiller_estimator(small_victim):
    est = SurrogateDistiller(taus=(1,), schedules=("cyclic",), epochs=3, cap=200)
    assert clone(est).get_params()["cap"] == 200
    ds = generate(small_victim.train_spec)
    est.fit(OracleHandle(small_victim, 1000), ds.inputs)
    assert est.predict(ds.inputs[:7]).shape == (7,)
    assert np.allclose(est.predict_proba(ds.inputs[:2]).sum(axis=1), 1)
