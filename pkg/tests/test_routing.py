import numpy as np
import pytest

import zoo
from qnetcorr import make_model
from qnetcorr.errors import PreconditionError
from qnetcorr.routing import (derive_rerouting, extended_xi, family, fixed_vector_residual, reversibility_check,
                              solve_traffic, traffic_residual, verify_rerouting)


def _traffic_by_iteration(R, lam, sweeps=5000):
    R = np.asarray(R)
    eta = np.zeros(R.shape[0] - 1)
    for _ in range(sweeps):
        eta = lam * R[0, 1:] + eta @ R[1:, 1:]
    return eta


def _skip_by_series(R, D, terms=400):
    """Censored routing by summing paths through down nodes term by term."""
    J = R.shape[0] - 1
    keep = [0] + [j for j in range(1, J + 1) if not D >> (j - 1) & 1]
    down = [j for j in range(1, J + 1) if D >> (j - 1) & 1]
    out = R[np.ix_(keep, keep)].copy()
    if not down:
        return out
    step = R[np.ix_(keep, down)]
    Rdd = R[np.ix_(down, down)]
    for _ in range(terms):
        out += step @ R[np.ix_(down, keep)]
        step = step @ Rdd
    return out


def test_traffic_matches_iteration():
    rng = np.random.default_rng(1)
    for J in (1, 2, 3, 5):
        for _ in range(5):
            R = zoo.random_routing(rng, J)
            sol = solve_traffic(R, 1.7)
            assert np.allclose(sol.eta, _traffic_by_iteration(R, 1.7), rtol=1e-10)
            assert traffic_residual(R, 1.7, sol.eta) < 1e-12
            assert sol.xi.sum() == pytest.approx(1.0)


def test_e2_traffic_values():
    sol = solve_traffic(zoo.SYM3, 2.0)
    assert np.allclose(sol.eta, [2.0, 2.0])
    assert np.allclose(sol.xi, [1 / 3] * 3)


def test_skipping_matches_path_series():
    rng = np.random.default_rng(2)
    for J in (2, 3, 4):
        R = zoo.random_routing(rng, J)
        m = make_model(J, 1.0, R, [100.0] * J)
        for D in range(1, 1 << J):
            M = derive_rerouting(m, D)
            assert np.allclose(M, _skip_by_series(R, D), atol=1e-12)
            assert np.allclose(M.sum(axis=1), 1.0)


@pytest.mark.parametrize("scheme", ["stalling", "skipping", "rsrd"])
def test_schemes_satisfy_traffic_assumption(scheme):
    m = zoo.e2(scheme)
    for D in range(4):
        ok, res = verify_rerouting(m, D)
        assert ok, res
        assert fixed_vector_residual(m, D) < 1e-12


def test_rsrd_structure():
    m = zoo.e2("rsrd")
    M = derive_rerouting(m, 0b01)  # node 1 down: labels (0, 2)
    assert np.allclose(M, [[0.5, 0.5], [0.5, 0.5]])
    assert np.allclose(derive_rerouting(m, 0b11), [[1.0]])


def test_stalling_is_identity_off_empty_set():
    m = zoo.e2("stalling")
    assert np.array_equal(derive_rerouting(m, 0), m.routing)
    assert np.array_equal(derive_rerouting(m, 1), np.eye(2))


def test_rsrd_needs_reversibility():
    m = make_model(2, 1.0, zoo.E3_ROUTING, [5.0, 5.0], None, "rsrd")
    assert not family(m).reversible
    with pytest.raises(PreconditionError):
        derive_rerouting(m, 1)
    forced = derive_rerouting(m, 1, force=True)
    assert forced.shape == (2, 2)


def test_extended_xi_restricts_and_normalises():
    m = zoo.e3()
    eta0 = family(m).traffic.eta0
    x = extended_xi(m, 0b10)
    assert np.allclose(x, eta0[[0, 1]] / eta0[[0, 1]].sum())


def test_reversibility_check():
    rng = np.random.default_rng(3)
    R = zoo.reversible_routing(rng, 3)
    xi = solve_traffic(R, 1.0).xi
    assert reversibility_check(R, xi)
    assert not reversibility_check(np.asarray(zoo.E3_ROUTING), solve_traffic(zoo.E3_ROUTING, 1.0).xi)
