"""Dirichlet forms, Rayleigh bounds, truncated spectral gaps and the birth-death comparison network."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from typing import Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import subsets
from .correlation import corr_formula
from .environment import env_chain
from .errors import PreconditionError, QNetError, ValidationError
from .model import NetworkModel, ReroutingSpec, ServiceRates, make_model
from .observable import Observable
from .routing import family, index_set
from .statespace import LumpedGrid, TruncatedChain, build_truncated, stationary_law

DENSE_LIMIT = 3000
EIG_TOL = 1e-10
BALANCE_TOL = 1e-10


def dirichlet(model: NetworkModel, f: Observable) -> float:
    """<f, -Q^Z f> under the product-form law."""
    return -corr_formula(model, f, f, "sums")


def mean_and_variance(model: NetworkModel, f: Observable) -> tuple[float, float]:
    grid = LumpedGrid(model, [f])
    mean = grid.expect(lambda D: f.evaluate(D, grid.n))
    var = grid.expect(lambda D: (f.evaluate(D, grid.n) - mean) ** 2)
    return mean, var


def rayleigh_upper(model: NetworkModel, f: Observable) -> float:
    """Dirichlet form over variance of the centred observable: an upper bound on the gap."""
    mean, var = mean_and_variance(model, f)
    if var <= 1e-300:
        raise QNetError(f"observable {f.text!r} has zero variance")
    return dirichlet(model, f.minus_constant(mean)) / var


# --- truncated gaps ---------------------------------------------------------------


def _symmetrized(Q: sp.spmatrix, logp: np.ndarray) -> sp.csr_matrix:
    """-(Q + Q*)/2 in the orthonormal basis of L^2(p), Q* the p-adjoint."""
    C = Q.tocoo()
    data = C.data * np.exp(0.5 * (logp[C.row] - logp[C.col]))
    M = sp.coo_matrix((data, (C.row, C.col)), shape=Q.shape).tocsr()
    return (-0.5 * (M + M.T)).tocsr()


def _two_smallest(S: sp.spmatrix) -> np.ndarray:
    n = S.shape[0]
    if n <= DENSE_LIMIT:
        return sla.eigh(S.toarray(), eigvals_only=True, subset_by_index=[0, min(1, n - 1)])
    try:
        vals = spla.eigsh(S.tocsc(), k=2, sigma=-1e-3, which="LM", tol=EIG_TOL, return_eigenvectors=False)
    except spla.ArpackNoConvergence as exc:
        raise QNetError("sparse eigensolve did not converge") from exc
    return np.sort(vals)


def chain_gap(chain: TruncatedChain) -> float:
    """Dirichlet gap of a truncated chain: second eigenvalue of the additive symmetrisation."""
    logp = chain.log_stationary
    keep = np.flatnonzero(np.isfinite(logp))
    Q = chain.generator[keep][:, keep]
    if len(keep) < 2:
        return math.inf
    vals = _two_smallest(_symmetrized(Q, logp[keep]))
    return float(vals[1])


def gap_truncated(model: NetworkModel, N: int) -> float:
    return chain_gap(build_truncated(model, N))


def truncated_rayleigh(chain: TruncatedChain, values: np.ndarray) -> float:
    p = chain.stationary
    fbar = values - p @ values
    var = float(p @ fbar**2)
    if var <= 1e-300:
        raise QNetError("zero variance on the truncated chain")
    return float(p @ (fbar * -(chain.generator @ fbar))) / var


def gap_env(model: NetworkModel) -> float:
    """Exact gap of the breakdown-repair chain on its support."""
    ch = env_chain(model.environment)
    keep = ch.support
    if len(keep) < 2:
        return math.inf
    Q = ch.rates[np.ix_(keep, keep)]
    s = np.sqrt(ch.pi_hat[keep])
    M = s[:, None] * Q / s[None, :]
    vals = np.linalg.eigvalsh(-0.5 * (M + M.T))
    return float(vals[1])


# --- birth-death comparison ----------------------------------------------------------


def check_overall_balance(model: NetworkModel, D: int) -> bool:
    fam = family(model)
    up = subsets.up_nodes(D, model.J)
    if not up:
        return True
    R = fam.matrix(D)[1:, 1:]
    eta = fam.traffic.eta[np.array(up) - 1]
    lhs = eta * R.sum(axis=1)
    rhs = eta @ R
    return bool(np.max(np.abs(lhs - rhs)) < BALANCE_TOL)


def bd_comparison(model: NetworkModel) -> NetworkModel:
    """Same-law network whose up nodes, at every level, are independent birth-death queues."""
    fam = family(model)
    mats = {}
    for D in stationary_law(model).env.support:
        D = int(D)
        R = fam.matrix(D)
        labels = index_set(D, model.J)
        for a, i in enumerate(labels[1:], start=1):
            if R[0, a] <= 0 or R[a, 0] <= 0:
                raise PreconditionError(
                    f"bd_comparison: node {i} at level {subsets.literal(D)} needs positive entry and exit probabilities"
                )
        if not check_overall_balance(model, D):
            raise PreconditionError(f"bd_comparison: overall balance fails at level {subsets.literal(D)}")
        M = np.zeros_like(R)
        M[0] = R[0]
        for a in range(1, len(labels)):
            M[a, 0] = R[a, 0]
            M[a, a] = 1.0 - R[a, 0]
        mats[D] = M
    name = f"{model.name}-bd" if model.name else "bd-comparison"
    return NetworkModel(model.J, model.lam, mats[0], model.service, model.environment,
                        ReroutingSpec("explicit", mats), name)


# --- closed forms -------------------------------------------------------------------


def van_doorn(birth: float, death: float) -> float:
    """(sqrt(death) - sqrt(birth))^2, the gap of a constant-rate birth-death queue."""
    if birth <= 0 or death <= 0:
        raise ValueError("rates must be positive")
    return (math.sqrt(death) - math.sqrt(birth)) ** 2


def symmetric_bounds(J: int, lam: float, mu: float, p: float) -> tuple[float, float]:
    if J < 2 or not (p >= 0 and p * (J - 1) < 1 and p * (J - 2) < 1) or lam <= 0 or mu <= 0:
        raise ValueError("symmetric_bounds: need J >= 2, p(J-1) < 1 and positive rates")
    lower = (math.sqrt(mu * (1 - p * (J - 1))) - math.sqrt(lam / J)) ** 2
    return lower, (1 + p) / (1 - p * (J - 2)) * lower


def symmetric_network(J: int, lam: float, mu: float, p: float) -> NetworkModel:
    """r_0i = 1/J, r_ij = p (i != j), r_i0 = 1 - p(J-1); no breakdowns."""
    R = np.full((J + 1, J + 1), p)
    np.fill_diagonal(R, 0.0)
    R[0, 1:] = 1.0 / J
    R[1:, 0] = 1 - p * (J - 1)
    return make_model(J, lam, R, [mu] * J, name=f"symmetric-J{J}")


def closed_form_bounds(model: NetworkModel) -> dict | None:
    env = model.environment
    reliable = not (env.A[1:] > 0).any()
    constant = all(len(s.rates) == 1 for s in model.service)
    if not (reliable and constant):
        return None
    R = model.routing
    if model.J == 1:
        g = van_doorn(model.lam * R[0, 1], model.service[0].limit * R[1, 0])
        return {"kind": "birth-death", "lower": g, "upper": g}
    J = model.J
    mus = {s.limit for s in model.service}
    p = R[1, 2]
    off = R[1:, 1:][~np.eye(J, dtype=bool)]
    if len(mus) == 1 and np.allclose(off, p) and np.allclose(np.diag(R), 0) and np.allclose(R[0, 1:], 1 / J):
        lo, hi = symmetric_bounds(J, model.lam, mus.pop(), p)
        return {"kind": "symmetric", "lower": lo, "upper": hi}
    return None


# --- report ------------------------------------------------------------------------


def gap_report(model: NetworkModel, levels: Sequence[int], candidates: Sequence[Observable] = (),
               workers: int = 1) -> dict:
    def one(N):
        chain = build_truncated(model, N)
        g = chain_gap(chain)
        rq = {f.text: truncated_rayleigh(chain, chain.evaluate(f)) for f in candidates}
        return N, g, rq

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            results = list(ex.map(one, levels))
    else:
        results = [one(N) for N in levels]
    exact_rq = {}
    for f in candidates:
        if f.bounded:
            try:
                exact_rq[f.text] = rayleigh_upper(model, f)
            except QNetError:
                pass
    return {
        "route": "Dirichlet gap of truncated chains (additive symmetrisation)",
        "levels": [N for N, _, _ in results],
        "gap": [g for _, g, _ in results],
        "rayleigh_truncated": {f.text: [rq[f.text] for _, _, rq in results] for f in candidates},
        "rayleigh_exact": exact_rq,
        "closed_form": closed_form_bounds(model),
        "environment_gap": gap_env(model),
    }
