"""Uniformisation of truncated chains and exact asymptotic variances of kernel averages."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import subsets
from .correlation import check_routing_pair
from .errors import PreconditionError, QNetError, ValidationError
from .model import NetworkModel
from .observable import Observable
from .ordering import pd_matrix
from .routing import family, reversibility_check
from .statespace import TruncatedChain, build_truncated, stationary_law

STOCHASTIC_TOL = 1e-12
SERIES_TOL = 1e-12
SERIES_MAX_TERMS = 2_000_000
VERDICT_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class UniformizedKernel:
    """K = Id + epsilon * Q on a truncated chain; shares the chain's stationary vector."""

    chain: TruncatedChain
    epsilon: float
    K: sp.csr_matrix

    @property
    def stationary(self) -> np.ndarray:
        return self.chain.stationary

    @property
    def size(self) -> int:
        return self.K.shape[0]


def max_exit_rate(chain: TruncatedChain) -> float:
    return float(np.max(np.abs(chain.generator.diagonal())))


def uniformize(chain: TruncatedChain, epsilon: float | None = None) -> UniformizedKernel:
    """Default epsilon is 1 / (2 max |q(x,x)|), which makes K lazy."""
    q = max_exit_rate(chain)
    if q == 0:
        raise ValidationError("generator is identically zero")
    if epsilon is None:
        epsilon = 1.0 / (2.0 * q)
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if epsilon * q > 1.0 + STOCHASTIC_TOL:
        raise ValidationError(f"epsilon = {epsilon:.6g} exceeds 1/max|q(x,x)| = {1.0 / q:.6g}; K has a negative entry")
    K = (sp.identity(chain.size, format="csr") + epsilon * chain.generator).tocsr()
    K.data[np.abs(K.data) < 1e-300] = 0.0
    K.eliminate_zeros()
    return UniformizedKernel(chain, float(epsilon), K)


def _center(kernel: UniformizedKernel, f: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    p = kernel.stationary
    f = np.asarray(f, dtype=float)
    if f.shape != (kernel.size,):
        raise ValueError(f"observable has {f.size} values, chain has {kernel.size} states")
    return p, f - p @ f


def avar_poisson(kernel: UniformizedKernel, f: np.ndarray) -> float:
    """v = 2<fbar, h> - <fbar, fbar> with (Id - K) h = fbar and p(h) = 0 (bordered solve)."""
    p, fbar = _center(kernel, f)
    n = kernel.size
    A = sp.bmat([[sp.identity(n) - kernel.K, sp.csr_matrix(np.ones((n, 1)))],
                 [sp.csr_matrix(p[None, :]), None]], format="csc")
    sol = spla.spsolve(A, np.concatenate((fbar, [0.0])))
    if not np.all(np.isfinite(sol)):
        raise QNetError("Poisson equation is singular (reducible kernel?)")
    h = sol[:n]
    return float(2.0 * p @ (fbar * h) - p @ fbar**2)


def avar_series(kernel: UniformizedKernel, f: np.ndarray, tol: float = SERIES_TOL,
                max_terms: int = SERIES_MAX_TERMS) -> tuple[float, int]:
    """Var(fbar) + 2 sum_{k>=1} <fbar, K^k fbar>, stopped once ||K^k fbar||_inf < tol * ||fbar||_inf.

    Returns the value and the number of terms used.
    """
    p, fbar = _center(kernel, f)
    var = float(p @ fbar**2)
    scale = float(np.max(np.abs(fbar)))
    if scale == 0.0:
        return 0.0, 0
    g = fbar.copy()
    total = 0.0
    for k in range(1, max_terms + 1):
        g = kernel.K @ g
        g -= p @ g  # keep the iterate centred against round-off drift
        total += float(p @ (fbar * g))
        if np.max(np.abs(g)) < tol * scale:
            return var + 2.0 * total, k
    raise QNetError(f"series did not reach tolerance {tol} within {max_terms} terms")


def avar_exact(kernel: UniformizedKernel, f: np.ndarray, check: bool = True) -> dict:
    """Asymptotic variance by the Poisson route, optionally cross-checked by the series."""
    v = avar_poisson(kernel, f)
    out = {"poisson": v, "epsilon": kernel.epsilon, "states": kernel.size}
    if check:
        s, terms = avar_series(kernel, f)
        out.update(series=s, series_terms=terms,
                   relative_delta=abs(v - s) / max(abs(v), abs(s), 1e-300) if (v or s) else 0.0)
    return out


def check_reversible(model: NetworkModel) -> None:
    fam = family(model)
    for D in stationary_law(model).env.support:
        D = int(D)
        if not reversibility_check(fam.matrix(D), fam.xi(D)):
            raise PreconditionError(f"{model.name or 'model'}: R^D is not reversible w.r.t. xi^D at {subsets.literal(D)}")


def pd_all_levels(a: NetworkModel, b: NetworkModel) -> bool:
    """Whether R_B^D <_pd R_A^D at every supported level."""
    fa, fb = family(a), family(b)
    return all(pd_matrix(fa.matrix(int(D)), fb.matrix(int(D)), fa.xi(int(D))).holds
               for D in stationary_law(a).env.support)


def avar_compare(a: NetworkModel, b: NetworkModel, f: Observable, epsilon: float | None, N: int) -> dict:
    """Exact v_A and v_B for the centred observable on both truncated chains with a shared epsilon.

    The verdict is checked only when R_B^D <_pd R_A^D at every level, in which
    case v_A >= v_B is expected; otherwise it is vacuous.
    """
    check_routing_pair(a, b)
    check_reversible(a)
    check_reversible(b)
    ca, cb = build_truncated(a, N), build_truncated(b, N)
    if epsilon is None:
        epsilon = 1.0 / (2.0 * max(max_exit_rate(ca), max_exit_rate(cb)))
    ka, kb = uniformize(ca, epsilon), uniformize(cb, epsilon)
    va = avar_exact(ka, ca.evaluate(f))
    vb = avar_exact(kb, cb.evaluate(f))
    hyp = pd_all_levels(a, b)
    holds = None if not hyp else bool(va["poisson"] >= vb["poisson"] - VERDICT_TOL * max(1.0, abs(vb["poisson"])))
    return {"epsilon": epsilon, "N": N, "A": va, "B": vb, "vA": va["poisson"], "vB": vb["poisson"],
            "pd_B_le_A_all_levels": hyp, "pd_A_le_B_all_levels": pd_all_levels(b, a), "verdict": holds}
