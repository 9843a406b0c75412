import numpy as np
import pytest

import zoo
from zoo import random_generator_pair, random_kernel_pair
from qnetcorr.errors import PreconditionError
from qnetcorr.ordering import (order_all_levels, pd_generator, pd_matrix, peskun_generator, peskun_matrix,
                               weighted_min_eig)
from qnetcorr.spectral import bd_comparison


def test_kernel_pairs_peskun_implies_pd():
    rng = np.random.default_rng(11)
    worst = np.inf
    for _ in range(200):
        R, R2, xi = random_kernel_pair(rng, int(rng.integers(2, 8)))
        assert peskun_matrix(R, R2, xi).holds
        v = pd_matrix(R2, R, xi)  # R <_pd R2: the Peskun-smaller kernel is pd-larger
        assert v.holds
        worst = min(worst, v.witness)
    assert worst >= -1e-10


def test_generator_pairs_peskun_implies_pd():
    rng = np.random.default_rng(12)
    for _ in range(200):
        Q, Q2, pi = random_generator_pair(rng, int(rng.integers(2, 8)))
        assert peskun_generator(Q, Q2, pi).holds
        assert pd_generator(Q2, Q, pi).holds


def test_witnesses():
    R = np.array([[0.2, 0.8], [0.8, 0.2]])
    R2 = np.array([[0.6, 0.4], [0.4, 0.6]])
    xi = np.array([0.5, 0.5])
    assert peskun_matrix(R, R2).holds
    bad = peskun_matrix(R2, R)
    assert not bad.holds and bad.witness in ((0, 1), (1, 0))
    strict = pd_matrix(R, R2, xi)
    assert not strict.holds and strict.witness == pytest.approx(-0.4)
    assert weighted_min_eig(R2 - R, xi) == pytest.approx(0.0, abs=1e-15)


def test_reflexive():
    R = np.array([[0.1, 0.9], [0.3, 0.7]])
    xi = np.array([0.25, 0.75])
    assert peskun_matrix(R, R, xi).holds
    assert pd_matrix(R, R, xi).holds


def test_fixed_vector_precondition():
    R = np.array([[0.1, 0.9], [0.3, 0.7]])
    with pytest.raises(PreconditionError):
        pd_matrix(R, R, np.array([0.5, 0.5]))
    with pytest.raises(PreconditionError):
        peskun_generator(R - np.eye(2), R - np.eye(2), np.array([0.5, 0.5]))


def test_bd_comparison_levels():
    a = zoo.e2()
    rep = order_all_levels(a, bd_comparison(a))
    assert rep["peskun_all"]
    assert rep["gap_hypotheses_hold"]
    assert set(rep["levels"]) == {"[]", "[1]", "[2]", "[1,2]"}
