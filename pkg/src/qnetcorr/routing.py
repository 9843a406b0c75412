"""Traffic equations, rerouting matrices R^D per scheme, and the per-level routing equilibria xi^D."""

from __future__ import annotations

import weakref
from dataclasses import dataclass

import numpy as np

from . import subsets
from .errors import PreconditionError, ValidationError
from .model import NetworkModel

RESIDUAL_TOL = 1e-10
REVERSIBLE_TOL = 1e-12


@dataclass(frozen=True)
class TrafficSolution:
    lam: float
    eta: np.ndarray  # eta_1..eta_J
    xi: np.ndarray  # xi_0..xi_J

    @property
    def eta0(self) -> np.ndarray:
        """(lambda, eta_1, ..., eta_J)."""
        return np.concatenate(([self.lam], self.eta))


def solve_traffic(R: np.ndarray, lam: float) -> TrafficSolution:
    R = np.asarray(R, dtype=float)
    interior = R[1:, 1:]
    J = interior.shape[0]
    try:
        eta = np.linalg.solve((np.eye(J) - interior).T, lam * R[0, 1:])
    except np.linalg.LinAlgError as exc:
        raise ValidationError("traffic equations are singular") from exc
    eta = np.where(np.abs(eta) < 1e-15, 0.0, eta)
    if (eta < 0).any():
        raise ValidationError("traffic equations produced a negative throughput")
    full = np.concatenate(([lam], eta))
    return TrafficSolution(lam, eta, full / full.sum())


def traffic_residual(R: np.ndarray, lam: float, eta: np.ndarray) -> float:
    R = np.asarray(R, dtype=float)
    return float(np.max(np.abs(eta - lam * R[0, 1:] - eta @ R[1:, 1:])))


def index_set(D: int, J: int) -> list[int]:
    """Extended node labels {0} u ({1..J} minus D), ascending."""
    return [0] + subsets.up_nodes(D, J)


def reversibility_check(R: np.ndarray, xi: np.ndarray, tol: float = REVERSIBLE_TOL) -> bool:
    F = np.asarray(xi)[:, None] * np.asarray(R)
    return bool(np.max(np.abs(F - F.T)) <= tol)


def skipping_matrix(R: np.ndarray, D: int) -> np.ndarray:
    """Censor the routing chain on the up nodes: paths through down nodes are absorbed."""
    J = R.shape[0] - 1
    keep = index_set(D, J)
    down = subsets.nodes_of(D)
    if not down:
        return R.copy()
    Rkk = R[np.ix_(keep, keep)]
    Rkd = R[np.ix_(keep, down)]
    Rdd = R[np.ix_(down, down)]
    Rdk = R[np.ix_(down, keep)]
    try:
        N = np.linalg.inv(np.eye(len(down)) - Rdd)
    except np.linalg.LinAlgError as exc:
        raise ValidationError(f"skipping: Id - R restricted to {subsets.literal(D)} is singular") from exc
    return Rkk + Rkd @ N @ Rdk


def rsrd_matrix(R: np.ndarray, D: int) -> np.ndarray:
    """Mass aimed at down nodes stays put (row 0: rejected to the exterior)."""
    J = R.shape[0] - 1
    keep = index_set(D, J)
    down = subsets.nodes_of(D)
    M = R[np.ix_(keep, keep)].copy()
    if down:
        M[np.diag_indices_from(M)] += R[np.ix_(keep, down)].sum(axis=1)
    return M


def stalling_matrix(R: np.ndarray, D: int) -> np.ndarray:
    if D == 0:
        return R.copy()
    k = R.shape[0] - D.bit_count()
    return np.eye(k)


class ReroutingFamily:
    """Lazily built R^D and xi^D for one model. Construction is pure, so racing fills agree."""

    def __init__(self, model: NetworkModel):
        self.model = model
        self.traffic = solve_traffic(model.routing, model.lam)
        self._R: dict[tuple[int, bool], np.ndarray] = {}
        self._xi: dict[int, np.ndarray] = {}

    @property
    def reversible(self) -> bool:
        return reversibility_check(self.model.routing, self.traffic.xi)

    def matrix(self, D: int, force: bool = False) -> np.ndarray:
        key = (D, force)
        if key not in self._R:
            self._R[key] = self._build(D, force)
        return self._R[key]

    def _build(self, D: int, force: bool) -> np.ndarray:
        m = self.model
        R = m.routing
        kind = m.rerouting.kind
        if D == 0:
            M = R.copy()
        elif kind == "stalling":
            M = stalling_matrix(R, D)
        elif kind == "skipping":
            M = skipping_matrix(R, D)
        elif kind == "rsrd":
            if not force and not self.reversible:
                raise PreconditionError("rsrd rerouting requires a routing matrix reversible w.r.t. xi")
            M = rsrd_matrix(R, D)
        else:
            if D not in m.rerouting.matrices:
                raise PreconditionError(f"explicit rerouting: no matrix supplied for {subsets.literal(D)}")
            M = np.array(m.rerouting.matrices[D], dtype=float)
        M.setflags(write=False)
        return M

    def xi(self, D: int) -> np.ndarray:
        if D not in self._xi:
            v = self.traffic.eta0[index_set(D, self.model.J)]
            x = v / v.sum()
            x.setflags(write=False)
            self._xi[D] = x
        return self._xi[D]


_families: "weakref.WeakKeyDictionary[NetworkModel, ReroutingFamily]" = weakref.WeakKeyDictionary()


def family(model: NetworkModel) -> ReroutingFamily:
    fam = _families.get(model)
    if fam is None:
        fam = ReroutingFamily(model)
        _families[model] = fam
    return fam


def derive_rerouting(model: NetworkModel, D: int, force: bool = False) -> np.ndarray:
    return family(model).matrix(D, force)


def extended_xi(model: NetworkModel, D: int) -> np.ndarray:
    return family(model).xi(D)


def verify_rerouting(model: NetworkModel, D: int, force: bool = False) -> tuple[bool, float]:
    """Check that eta restricted to the up nodes solves the level-D traffic equations."""
    fam = family(model)
    RD = fam.matrix(D, force)
    up = subsets.up_nodes(D, model.J)
    if not up:
        return True, 0.0
    eta = fam.traffic.eta[np.array(up) - 1]
    res = eta - model.lam * RD[0, 1:] - eta @ RD[1:, 1:]
    r = float(np.max(np.abs(res)))
    return r < RESIDUAL_TOL, r


def fixed_vector_residual(model: NetworkModel, D: int) -> float:
    x = extended_xi(model, D)
    return float(np.max(np.abs(x @ derive_rerouting(model, D) - x)))
