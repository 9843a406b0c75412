import numpy as np
import pytest
from scipy.sparse.linalg import expm_multiply

import zoo
from qnetcorr import make_model, parse_observable
from qnetcorr.errors import ValidationError
from qnetcorr.sim import estimate, estimate_avar, estimate_lag, simulate, summary_json
from qnetcorr.statespace import build_truncated


@pytest.fixture(scope="module")
def mm1_run():
    return simulate(zoo.mm1(1.0, 2.0), 1e5, 7)


@pytest.fixture(scope="module")
def stalling_run():
    return simulate(zoo.unreliable_mm1("stalling"), 2e4, 3)


def test_deterministic_for_fixed_seed():
    m = zoo.e2()
    a = simulate(m, 300.0, 42)
    b = simulate(m, 300.0, 42)
    assert a.export_lines() == b.export_lines()
    assert a.counts == b.counts
    c = simulate(m, 300.0, 43)
    assert c.export_lines() != a.export_lines()


def test_export_format(tmp_path):
    tr = simulate(zoo.e2(), 20.0, 1)
    path = tmp_path / "traj.csv"
    tr.export(str(path))
    lines = path.read_text().splitlines()
    assert lines[0] == "0.0,[],0,0"
    t, lit, *n = lines[-1].split(",")
    assert float(t) < 20.0 and lit.startswith("[") and len(n) == 2


def test_path_is_consistent(stalling_run):
    tr = stalling_run
    assert np.all(np.diff(tr.times) > 0)
    dn = np.abs(np.diff(tr.queues, axis=0)).sum(axis=1)
    dD = np.diff(tr.masks) != 0
    assert np.all((dn == 1) ^ dD)  # exactly one coordinate moves per event


def test_stalling_freezes_queues(stalling_run):
    tr = stalling_run
    down_before = tr.masks[:-1] != 0
    moved = np.abs(np.diff(tr.queues, axis=0)).sum(axis=1) > 0
    assert not np.any(down_before & moved)
    assert tr.counts["breakdown"] > 0 and tr.counts["blocked"] > 0


def test_mm1_occupancy(mm1_run):
    mean, se = estimate(mm1_run, parse_observable("qc(1,1)"))
    assert abs(mean - 0.5) < 3 * se


def test_environment_occupancy_and_avar(stalling_run):
    f = parse_observable("down(1)")
    mean, se = estimate(stalling_run, f)
    assert abs(mean - 0.4) < 3 * se
    # two-state chain, rates a = 2 (up to down) and b = 3: sigma^2 = 2ab / (a + b)^3
    v, vse = estimate_avar(stalling_run, f)
    assert abs(v - 2 * 2 * 3 / 5**3) < 3 * vse


def test_constant_observable(mm1_run):
    one = parse_observable("1")
    assert estimate(mm1_run, one) == (1.0, 0.0)
    assert estimate_avar(mm1_run, one)[0] == 0.0


def test_event_rates(stalling_run):
    tr = stalling_run
    # arrivals occur only while the node is up, at rate 1
    expected = tr.T * 0.6
    assert abs(tr.counts["arrival"] - expected) / expected < 0.03


def test_lag_matches_matrix_exponential():
    m = zoo.e2()
    tr = simulate(m, 3e4, 5)
    f, g = parse_observable("qc(1,1)"), parse_observable("qc(1,2) + down(2)")
    tau = 0.3
    ch = build_truncated(m, 30)
    p = ch.stationary
    exact = float(p @ (ch.evaluate(f) * expm_multiply(tau * ch.generator, ch.evaluate(g))))
    est, se = estimate_lag(tr, f, g, tau)
    assert abs(est - exact) < 3 * se


def test_too_few_batches(mm1_run):
    with pytest.raises(ValidationError):
        estimate(mm1_run, parse_observable("qc(1,1)"), batches=5)


def test_non_ergodic_rejected():
    with pytest.raises(ValidationError):
        simulate(make_model(1, 3.0, [[0, 1], [1, 0]], [2.0]), 10.0, 0)


def test_summary_json_is_stable():
    tr = simulate(zoo.e3(), 200.0, 9)
    obs = [parse_observable("qc(1,1)")]
    assert summary_json(tr, obs) == summary_json(simulate(zoo.e3(), 200.0, 9), obs)
