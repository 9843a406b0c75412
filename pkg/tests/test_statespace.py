import itertools

import numpy as np
import pytest

import zoo
from qnetcorr import make_model, parse_observable
from qnetcorr.errors import NonErgodicError, UnboundedObservableError, ValidationError
from qnetcorr.statespace import (LumpedGrid, balance_residual, build_truncated, expectation, is_ergodic, joint_pi,
                                 marginal_normalizer, product_form_on_box, stationary_law, stationary_residual,
                                 tail_mass, total_variation)


def test_mm1_normaliser_and_tail():
    m = zoo.mm1(1.0, 2.0)
    assert marginal_normalizer(m, 1) == pytest.approx(2.0, rel=1e-15)
    for L in range(6):
        assert tail_mass(m, 1, L) == pytest.approx(0.5**L, rel=1e-14)


def test_tail_matches_brute_sum():
    m = zoo.tandem3()
    law = stationary_law(m)
    for j, marg in enumerate(law.marginals, start=1):
        probs = np.array([marg.pmf(k) for k in range(400)])
        assert probs.sum() == pytest.approx(1.0, abs=1e-13)
        for L in range(7):
            assert tail_mass(m, j, L) == pytest.approx(probs[L:].sum(), rel=1e-12)


def test_joint_sums_to_one():
    m = zoo.e3()
    total = sum(joint_pi(m, D, n) for D in range(4) for n in itertools.product(range(60), repeat=2))
    assert total == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("model", zoo.model_suite(), ids=lambda m: f"{m.name}-{m.rerouting.kind}")
def test_global_balance(model):
    rng = np.random.default_rng(5)
    law = stationary_law(model)
    for _ in range(40):
        D = int(rng.choice(law.env.support))
        n = rng.integers(0, 8, model.J)
        assert balance_residual(model, D, n) < 1e-10


def test_balance_detects_wrong_law():
    m = zoo.e2()
    wrong = lambda D, n: joint_pi(m, D, n) * (1 + 0.1 * n[0])
    assert balance_residual(m, 0, (2, 1), pi=wrong) > 1e-3


def test_lumped_expectation_matches_brute_force():
    m = zoo.tandem3()
    f = parse_observable("qc(1,3)*qc(3,2) + down(1)*qc(2,4) - ndown")
    brute = 0.0
    law = stationary_law(m)
    for D in law.env.support:
        for n in itertools.product(range(45), repeat=3):
            brute += joint_pi(m, int(D), n) * f(int(D), n)
    assert expectation(m, f) == pytest.approx(brute, rel=1e-11)


def test_lumped_grid_rejects_raw_queue_atoms():
    with pytest.raises(UnboundedObservableError):
        LumpedGrid(zoo.e2(), [parse_observable("q(1)")])


def test_non_ergodic():
    m = make_model(1, 3.0, [[0, 1], [1, 0]], [2.0])
    assert not is_ergodic(m)
    with pytest.raises(NonErgodicError):
        stationary_law(m)
    # the truncated chain still exists
    assert build_truncated(m, 5).size == 6


def test_truncated_mm1_is_renormalised_product_form():
    m = zoo.mm1(1.0, 4.0)
    ch = build_truncated(m, 100)
    pf = product_form_on_box(ch)
    pf = pf / pf.sum()
    assert np.allclose(ch.stationary, pf, rtol=1e-9, atol=0)
    assert stationary_residual(ch) < 1e-13


def test_truncated_chain_approaches_product_form():
    m = zoo.e3()
    gaps = []
    for N in (6, 12, 24):
        ch = build_truncated(m, N)
        gaps.append(total_variation(ch.stationary, product_form_on_box(ch)))
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] < 1e-6


def test_truncated_generator_rows_sum_to_zero():
    ch = build_truncated(zoo.tandem3(), 4)
    assert np.max(np.abs(np.asarray(ch.generator.sum(axis=1)).ravel())) < 1e-12
    assert ch.size == len(ch.masks) * 5**3
    D, n = int(ch.masks[1]), (1, 2, 3)
    k = ch.index(D, n)
    assert ch.state_mask[k] == D and tuple(q[k] for q in ch.state_queues) == n


def test_truncation_guard():
    m = make_model(6, 1.0, np.full((7, 7), 1 / 7), [10.0] * 6)
    with pytest.raises(ValidationError):
        build_truncated(m, 20)
