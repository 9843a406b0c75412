"""Peskun and positive-semidefinite orders for kernels and generators.

Argument order is fixed across the module: every predicate asks whether the
*second* argument is smaller than the first, i.e. ``peskun_matrix(R, R2)``
tests R2 <_P R and ``pd_matrix(R, R2, xi)`` tests R2 <_pd R (R - R2 psd on
L^2(xi)). A Peskun-smaller kernel is pd-*larger*: R2 <_P R implies R <_pd R2.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from . import subsets
from .correlation import check_routing_pair
from .errors import PreconditionError
from .model import NetworkModel
from .routing import family
from .statespace import stationary_law

PESKUN_TOL = 1e-12
PD_TOL = 1e-10
FIXED_TOL = 1e-10


@dataclass(frozen=True)
class OrderVerdict:
    holds: bool
    witness: Any = None  # Peskun: violating (row, col) pair; pd: min eigenvalue

    def to_json(self) -> dict:
        w = self.witness
        if isinstance(w, tuple):
            w = list(w)
        return {"holds": self.holds, "witness": w}


def _check_fixed(R, xi, what):
    if np.max(np.abs(np.asarray(xi) @ R - xi)) > FIXED_TOL:
        raise PreconditionError(f"{what}: xi is not a fixed vector")


def _peskun(M: np.ndarray, M2: np.ndarray) -> OrderVerdict:
    excess = np.asarray(M2) - np.asarray(M)
    np.fill_diagonal(excess, -np.inf)
    worst = np.unravel_index(np.argmax(excess), excess.shape)
    if excess[worst] > PESKUN_TOL:
        return OrderVerdict(False, (int(worst[0]), int(worst[1])))
    return OrderVerdict(True, None)


def weighted_min_eig(diff: np.ndarray, w: np.ndarray | None) -> float:
    """Smallest eigenvalue of the symmetrised form of diag(w) @ diff (unweighted if w is None)."""
    M = np.asarray(diff) if w is None else np.asarray(w)[:, None] * np.asarray(diff)
    S = 0.5 * (M + M.T)
    return float(np.linalg.eigvalsh(S)[0])


def peskun_matrix(R: np.ndarray, R2: np.ndarray, xi: np.ndarray | None = None) -> OrderVerdict:
    """R2 <_P R: every off-diagonal entry of R2 is at most that of R."""
    R, R2 = np.asarray(R, float), np.asarray(R2, float)
    if R.shape != R2.shape:
        raise PreconditionError("kernels have different index sets")
    if xi is not None:
        _check_fixed(R, xi, "peskun_matrix R")
        _check_fixed(R2, xi, "peskun_matrix R'")
    return _peskun(R, R2)


def pd_matrix(R: np.ndarray, R2: np.ndarray, xi: np.ndarray, weighted: bool = True) -> OrderVerdict:
    """R2 <_pd R: the quadratic form of R - R2 on L^2(xi) is nonnegative."""
    R, R2 = np.asarray(R, float), np.asarray(R2, float)
    _check_fixed(R, xi, "pd_matrix R")
    _check_fixed(R2, xi, "pd_matrix R'")
    lo = weighted_min_eig(R - R2, xi if weighted else None)
    return OrderVerdict(lo >= -PD_TOL, lo)


def _check_generator_stationary(Q, pi, what):
    if np.max(np.abs(np.asarray(pi) @ Q)) > FIXED_TOL:
        raise PreconditionError(f"{what}: pi is not stationary")


def peskun_generator(Q: np.ndarray, Q2: np.ndarray, pi: np.ndarray | None = None) -> OrderVerdict:
    """Q2 <_P Q: q2(x, y) <= q(x, y) for x != y."""
    Q, Q2 = np.asarray(Q, float), np.asarray(Q2, float)
    if pi is not None:
        _check_generator_stationary(Q, pi, "peskun_generator Q")
        _check_generator_stationary(Q2, pi, "peskun_generator Q'")
    return _peskun(Q, Q2)


def pd_generator(Q: np.ndarray, Q2: np.ndarray, pi: np.ndarray, weighted: bool = True) -> OrderVerdict:
    """Q2 <_pd Q: Q - Q2 is positive semidefinite on L^2(pi)."""
    Q, Q2 = np.asarray(Q, float), np.asarray(Q2, float)
    _check_generator_stationary(Q, pi, "pd_generator Q")
    _check_generator_stationary(Q2, pi, "pd_generator Q'")
    lo = weighted_min_eig(Q - Q2, pi if weighted else None)
    return OrderVerdict(lo >= -PD_TOL, lo)


def order_all_levels(a: NetworkModel, b: NetworkModel) -> dict:
    """Per supported level D: whether R_B^D <_P R_A^D and whether R_A^D <_pd R_B^D.

    The summary flag reports whether R_A^D <_pd R_B^D at every level, the
    hypothesis under which Gap(B) <= Gap(A).
    """
    check_routing_pair(a, b)
    fa, fb = family(a), family(b)
    table = {}
    all_pd = True
    all_peskun = True
    for D in stationary_law(a).env.support:
        D = int(D)
        RA, RB, xi = fa.matrix(D), fb.matrix(D), fa.xi(D)
        pes = peskun_matrix(RA, RB)
        pd = pd_matrix(RB, RA, xi)
        table[subsets.literal(D)] = {"peskun_B_le_A": pes.to_json(), "pd_A_le_B": pd.to_json()}
        all_pd &= pd.holds
        all_peskun &= pes.holds
    return {"levels": table, "peskun_all": all_peskun, "gap_hypotheses_hold": all_pd}
