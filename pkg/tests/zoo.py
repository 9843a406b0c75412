"""Shared test models and pair generators."""

from __future__ import annotations

import numpy as np

from qnetcorr import EnvironmentSpec, ReroutingSpec, ServiceRates, make_model
from qnetcorr.environment import env_scale, kappa_scaling
from qnetcorr.model import NetworkModel
from qnetcorr.routing import derive_rerouting, solve_traffic
from qnetcorr.spectral import bd_comparison

SYM3 = [[0, .5, .5], [.5, 0, .5], [.5, .5, 0]]
E3_ROUTING = [[0, .5, .5], [.3, .2, .5], [.6, .2, .2]]


def mm1(lam=1.0, mu=2.0) -> NetworkModel:
    return make_model(1, lam, [[0, 1], [1, 0]], [mu], name="mm1")


def e2(rerouting="skipping") -> NetworkModel:
    env = EnvironmentSpec.independent([0.3, 0.5], [1.0, 1.5])
    return make_model(2, 2.0, SYM3, [4.0, 4.0], env, rerouting, name=f"E2-{rerouting}")


def e3(rerouting="skipping") -> NetworkModel:
    env = EnvironmentSpec.independent([0.4, 0.2], [1.2, 0.8])
    return make_model(2, 1.0, E3_ROUTING, [ServiceRates((1.5, 3.0)), 3.5], env, rerouting, name=f"E3-{rerouting}")


def tandem3(rerouting="skipping", env=True) -> NetworkModel:
    R = [[0, .6, .3, .1], [.2, 0, .5, .3], [.3, .3, 0, .4], [.5, .2, .3, 0]]
    spec = EnvironmentSpec.table(3, {0: 1, 1: .3, 4: .2, 5: .05}, {0: 1, 1: 1.1, 4: .9, 5: .9}) if env else None
    return make_model(3, 1.0, R, [ServiceRates((2.0, 3.0, 4.0)), 4.0, ServiceRates((2.5, 5.0))],
                      spec, rerouting, name=f"tandem3-{rerouting}" + ("" if env else "-reliable"))


def explicit2() -> NetworkModel:
    """Skipping matrices supplied by hand, so the explicit path is exercised."""
    base = e2("skipping")
    mats = {D: np.array(derive_rerouting(base, D)) for D in range(4)}
    return NetworkModel(2, base.lam, base.routing, base.service, base.environment,
                        ReroutingSpec("explicit", mats), "E2-explicit")


def unreliable_mm1(rerouting="stalling") -> NetworkModel:
    env = EnvironmentSpec.independent([2.0], [3.0])
    return make_model(1, 1.0, [[0, 1], [1, 0]], [ServiceRates((1.5, 2.5))], env, rerouting, name="mm1-unreliable")


def symmetric3() -> NetworkModel:
    from qnetcorr.spectral import symmetric_network
    return symmetric_network(3, 0.3, 1.0, 0.3)


def model_suite() -> list[NetworkModel]:
    """At least twelve models: J in {1,2,3}, every scheme, with and without breakdowns."""
    return [
        mm1(), unreliable_mm1("stalling"), unreliable_mm1("skipping"), unreliable_mm1("rsrd"),
        e2("stalling"), e2("skipping"), e2("rsrd"), explicit2(),
        e3("stalling"), e3("skipping"), tandem3("skipping"), tandem3("stalling"), tandem3("skipping", env=False),
        symmetric3(), bd_comparison(e2("skipping")),
    ]


def projector(xi: np.ndarray) -> np.ndarray:
    return np.tile(xi, (len(xi), 1))


def convex_routing_pair(model: NetworkModel, a: float, toward: str = "projector") -> NetworkModel:
    """R' = a R + (1 - a) Pi_xi or a R + (1 - a) Id; both keep xi fixed, hence eta."""
    R = model.routing
    xi = solve_traffic(R, model.lam).xi
    other = projector(xi) if toward == "projector" else np.eye(len(xi))
    R2 = a * R + (1 - a) * other
    return model.with_routing(R2, name=f"{model.name}-mix{a}")


def kappa_pair(model: NetworkModel, kappa: float) -> NetworkModel:
    return model.with_environment(env_scale(model.environment, kappa_scaling(kappa)), name=f"{model.name}-k{kappa}")


def random_routing(rng: np.random.Generator, J: int, sparsity: float = 0.0) -> np.ndarray:
    """Random stochastic (J+1)x(J+1) routing with r_00 = 0 and a positive exit row."""
    while True:
        R = rng.random((J + 1, J + 1)) * (rng.random((J + 1, J + 1)) >= sparsity)
        R[0, 0] = 0.0
        R[1:, 0] += 0.2
        R[0, 1:] += 0.05
        R /= R.sum(axis=1, keepdims=True)
        try:
            make_model(J, 1.0, R, [100.0] * J)
            return R
        except Exception:
            continue


def random_model(rng: np.random.Generator, J: int, rerouting: str = "skipping", env: bool = True) -> NetworkModel:
    R = random_routing(rng, J)
    eta = solve_traffic(R, 1.0).eta
    lam = float(rng.uniform(0.5, 1.5))
    mu = []
    for j in range(J):
        limit = lam * eta[j] / rng.uniform(0.3, 0.8)
        if rng.random() < 0.5:
            mu.append(ServiceRates((limit * 0.6, limit)))
        else:
            mu.append(limit)
    spec = None
    if env:
        spec = EnvironmentSpec.independent(rng.uniform(0.1, 0.6, J).tolist(), rng.uniform(0.8, 2.0, J).tolist())
    return make_model(J, lam, R, mu, spec, rerouting)


def reversible_routing(rng: np.random.Generator, J: int) -> np.ndarray:
    """Symmetric conductances normalised by row: reversible w.r.t. the row sums."""
    C = rng.random((J + 1, J + 1))
    C = C + C.T
    C[0, 0] = 0.0
    return C / C.sum(axis=1, keepdims=True)


def random_kernel_pair(rng, k):
    """(R, R2, xi) with R2 <_P R and both fixing xi.

    R2 moves a symmetric flow c_ij <= min(xi_i r_ij, xi_j r_ji) from the
    off-diagonal onto the diagonal, which keeps xi stationary.
    """
    R = rng.random((k, k)) * (rng.random((k, k)) < 0.7) + 1e-3
    R /= R.sum(axis=1, keepdims=True)
    w, v = np.linalg.eig(R.T)
    xi = np.real(v[:, np.argmin(np.abs(w - 1))])
    xi = np.abs(xi) / np.abs(xi).sum()
    F = xi[:, None] * R
    cap = np.minimum(F, F.T)
    c = np.triu(cap * rng.random((k, k)), 1)
    c = c + c.T
    E = c / xi[:, None]
    R2 = R - E
    R2[np.diag_indices(k)] += E.sum(axis=1)
    return R, R2, xi


def random_generator_pair(rng, k):
    R, R2, pi = random_kernel_pair(rng, k)
    rate = rng.uniform(0.5, 3.0)
    Q = rate * (R - np.eye(k))
    Q2 = rate * (R2 - np.eye(k))
    return Q, Q2, pi
