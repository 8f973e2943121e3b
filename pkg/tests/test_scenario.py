from __future__ import annotations

import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from voltdac.scenario import (
    DropEvent,
    ScenarioError,
    ar1_deviations,
    build_scenario,
    capacity_bounds,
    export_scenario_csv,
    generate_loads,
    generate_pv,
    pv_shape,
)


def lag1_autocorr(x: np.ndarray) -> float:
    x = x - x.mean()
    return float(np.dot(x[:-1], x[1:]) / np.dot(x, x))


def test_alpha_zero_is_constant():
    base = (np.array([0.2, 0.0, 0.5]), np.array([0.1, 0.0, 0.3]))
    p, q = generate_loads(3, 50, 0.0, 0.06, base, seed=1)
    assert np.all(p == base[0]) and np.all(q == base[1])


def test_alpha_one_is_white():
    rng = np.random.default_rng(2)
    d = ar1_deviations(10_000, (1,), 1.0, 1.0, rng)[:, 0]
    assert abs(lag1_autocorr(d[1:])) < 0.05


def test_stationary_variance():
    rng = np.random.default_rng(3)
    d = ar1_deviations(100_000, (1,), 0.1, 0.06, rng)[1000:, 0]
    # fixed point of v = (1 - a) v + a sigma^2 is sigma^2
    assert d.var() == pytest.approx(0.06**2, rel=0.10)


@pytest.mark.parametrize("alpha", [0.05, 0.3, 0.7])
def test_lag1_correlation_matches_recursion(alpha):
    rng = np.random.default_rng(4)
    d = ar1_deviations(100_000, (1,), alpha, 1.0, rng)[500:, 0]
    assert lag1_autocorr(d) == pytest.approx(np.sqrt(1 - alpha), abs=0.05)


def test_first_row_is_base():
    base = (np.full(4, 0.3), np.full(4, 0.1))
    p, q = generate_loads(4, 10, 0.5, 0.1, base, seed=0)
    assert np.array_equal(p[0], base[0]) and np.array_equal(q[0], base[1])


def test_loads_clipped_and_clip_rate():
    p, q, rate = generate_loads(5, 2000, 0.5, 1.0, (np.full(5, 0.1), np.full(5, 0.1)), 0, return_clip_rate=True)
    assert p.min() >= 0 and q.min() >= 0
    assert 0.2 < rate < 0.6


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 1), st.floats(0, 2), st.integers(0, 2**31 - 1))
def test_loads_nonnegative_finite(alpha, sigma, seed):
    p, q = generate_loads(3, 40, alpha, sigma, (np.full(3, 0.2), np.full(3, 0.1)), seed)
    assert np.all(np.isfinite(p)) and np.all(np.isfinite(q))
    assert p.min() >= 0 and q.min() >= 0


def test_loads_deterministic():
    args = (6, 100, 0.1, 0.06, (np.full(6, 0.1), np.full(6, 0.05)))
    a, b = generate_loads(*args, seed=9), generate_loads(*args, seed=9)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


@pytest.mark.parametrize("alpha", [-0.1, 1.5])
def test_bad_alpha(alpha):
    with pytest.raises(ScenarioError):
        generate_loads(2, 10, alpha, 0.1, (np.zeros(2), np.zeros(2)), 0)


def test_negative_sigma():
    with pytest.raises(ScenarioError):
        generate_loads(2, 10, 0.1, -0.1, (np.zeros(2), np.zeros(2)), 0)


def test_pv_no_events():
    T = 400
    pv = generate_pv(T, 5, [2, 4], [0.1, 0.3])
    assert np.array_equal(pv[:, 1], 0.1 * pv_shape(T))
    assert np.array_equal(pv[:, 3], 0.3 * pv_shape(T))
    assert np.all(pv[:, [0, 2, 4]] == 0)
    assert pv[:, [1, 3]].min() > 0


def test_pv_drop_event():
    T = 400
    plain = generate_pv(T, 3, [1, 3], [0.2, 0.2])
    dropped = generate_pv(T, 3, [1, 3], [0.2, 0.2], [DropEvent(200, 20, 0.8)])
    ratio = dropped[200:220, [0, 2]] / plain[200:220, [0, 2]]
    assert np.allclose(ratio, 0.2, rtol=1e-12)
    assert np.array_equal(dropped[:200], plain[:200])
    assert np.array_equal(dropped[220:], plain[220:])


def test_pv_event_subset_and_mapping():
    pv = generate_pv(100, 3, [1, 3], [0.2, 0.2], [{"start": 10, "duration": 5, "depth": 1.0, "sites": [3]}])
    assert np.all(pv[10:15, 2] == 0)
    assert np.all(pv[10:15, 0] > 0)


def test_pv_deterministic_with_jitter():
    a = generate_pv(100, 4, [1, 2], [0.1, 0.2], seed=5, jitter=0.05)
    b = generate_pv(100, 4, [1, 2], [0.1, 0.2], seed=5, jitter=0.05)
    assert np.array_equal(a, b)
    assert a.min() >= 0


@pytest.mark.parametrize(
    "event",
    [DropEvent(95, 10, 0.5), DropEvent(-1, 5, 0.5), DropEvent(10, 5, 0.0), DropEvent(10, 5, 1.2), DropEvent(10, 0, 0.5)],
)
def test_pv_bad_events(event):
    with pytest.raises(ScenarioError):
        generate_pv(100, 3, [1], [0.1], [event])


def test_pv_bad_sites():
    with pytest.raises(ScenarioError):
        generate_pv(10, 3, [4], [0.1])
    with pytest.raises(ScenarioError):
        generate_pv(10, 3, [1, 2], [0.1])
    with pytest.raises(ScenarioError):
        generate_pv(10, 3, [1], [0.1], [{"start": 1, "duration": 1, "depth": 0.5, "sites": [2]}])


def test_pv_shape_floor():
    s = pv_shape(1000, 0.35)
    assert s.min() >= 0.35 and s.max() <= 1.0
    assert s.max() == pytest.approx(1.0, abs=1e-4)


def test_capacity_bounds_examples():
    b = capacity_bounds(np.array([[0.0, 1.0]]), 0.4)
    assert np.array_equal(b.u_lo[0], [0.0, 0.0, 0.0, -0.4])
    assert np.array_equal(b.u_hi[0], [0.0, 1.0, 0.0, 0.4])
    b0 = capacity_bounds(np.array([[0.5, 1.0]]), 0.0)
    assert np.all(b0.u_lo[0, 2:] == 0) and np.all(b0.u_hi[0, 2:] == 0)


def test_capacity_bounds_errors():
    with pytest.raises(ScenarioError):
        capacity_bounds(np.ones((2, 2)), -0.1)
    with pytest.raises(ScenarioError):
        capacity_bounds(-np.ones((2, 2)))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(0, 1))
def test_clipped_inputs_respect_bounds(seed, frac):
    rng = np.random.default_rng(seed)
    pv = rng.uniform(0, 2, size=(5, 4)) * (rng.random((5, 4)) > 0.3)
    b = capacity_bounds(pv, frac)
    assert np.all(b.u_lo <= b.u_hi)
    u = np.clip(rng.normal(scale=3, size=b.u_lo.shape), b.u_lo, b.u_hi)
    n = pv.shape[1]
    assert np.all(u[:, :n] >= 0) and np.all(u[:, :n] <= pv)
    assert np.all(np.abs(u[:, n:]) <= frac * pv)


def test_build_scenario_relative_sigma():
    cfg = {"horizon": 50, "alpha": 0.1, "sigma": 0.06, "seed": 2, "base_load_mw": [0.1, 0.0, 0.2],
           "base_load_mvar": 0.05, "pv": {"sites": [2], "sizes": [0.3]}}
    sc = build_scenario(cfg, 3, [2])
    assert sc.horizon == 50 and sc.n == 3
    assert np.all(sc.p_l[:, 1] == 0)  # zero base and relative noise stay at zero
    assert np.all(sc.pv_avail[:, [0, 2]] == 0)
    assert np.array_equal(sc.natural_input(7), np.r_[sc.pv_avail[7], np.zeros(3)])
    assert np.array_equal(sc.bounds.u_hi[:, :3], sc.pv_avail)


def test_build_scenario_levels_assignment():
    cfg = {"horizon": 10, "pv": {"sites": [1, 2, 3, 4], "sizes": {"levels": [0.1, 0.2, 0.3], "seed": 1}}}
    sc = build_scenario(cfg, 4, [1, 2, 3, 4])
    peaks = sc.pv_avail.max(axis=0) / pv_shape(10).max()
    assert set(np.round(peaks, 12)) <= {0.1, 0.2, 0.3}


def test_build_scenario_rejects_unknown():
    with pytest.raises(ScenarioError, match="unknown"):
        build_scenario({"horizon": 10, "temperature": 3}, 2, [1])
    with pytest.raises(ScenarioError, match="unknown"):
        build_scenario({"pv": {"colour": "blue"}}, 2, [1])
    with pytest.raises(ScenarioError, match="sigma_mode"):
        build_scenario({"sigma_mode": "weird"}, 2, [1])


def test_export_csv(tmp_path):
    sc = build_scenario({"horizon": 4, "base_load_mw": 0.1, "pv": {"sites": [1], "sizes": [0.2]}}, 2, [1])
    path = export_scenario_csv(sc, tmp_path / "s.csv")
    rows = list(csv.reader(path.open()))
    assert rows[0][:3] == ["t", "p_l_1", "p_l_2"]
    assert len(rows) == 5 and len(rows[1]) == 1 + 3 * 2
    assert float(rows[2][5]) == sc.pv_avail[1, 0]
