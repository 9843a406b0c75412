"""One-step correlations <f, Q^Z g> under the product-form law, by several exact routes.

All sums over the infinite queue space are done on a ``LumpedGrid``: each
summand is constant in n_j beyond the lump level, so the top level carries
the exact tail mass and the result is exact up to rounding.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import subsets
from .environment import env_chain
from .errors import PreconditionError
from .model import NetworkModel
from .observable import Observable
from .routing import family, index_set, verify_rerouting
from .statespace import LumpedGrid, stationary_law

ETA_TOL = 1e-10
PI_HAT_TOL = 1e-12


# --- pointwise generator ---------------------------------------------------------


def apply_Z_generator(model: NetworkModel, g: Observable, D: int, n: Sequence[int]) -> float:
    """(Q^Z g)(D, n): arrivals, departures, transfers on the up nodes, then environment jumps."""
    return float(_apply_Z(model, g, D, tuple(np.asarray(x) for x in n), _mu_arrays(model, n)))


def _mu_arrays(model, n):
    return tuple(model.service[j].vectorized(np.asarray(n[j])) for j in range(model.J))


def _apply_Z(model: NetworkModel, g: Observable, D: int, n, mu):
    fam = family(model)
    RD = fam.matrix(D)
    up = subsets.up_nodes(D, model.J)
    pos = {node: k for k, node in enumerate([0] + up)}
    g0 = g.evaluate(D, n)
    out = np.zeros(np.shape(g0))
    for j in up:
        nj = list(n)
        nj[j - 1] = n[j - 1] + 1
        out = out + model.lam * RD[0, pos[j]] * (g.evaluate(D, nj) - g0)
        dn = list(n)
        dn[j - 1] = np.maximum(n[j - 1] - 1, 0)
        out = out + mu[j - 1] * RD[pos[j], 0] * (g.evaluate(D, dn) - g0)
        for i in up:
            if i == j:
                continue
            t = list(dn)
            t[i - 1] = n[i - 1] + 1
            out = out + mu[j - 1] * RD[pos[j], pos[i]] * (g.evaluate(D, t) - g0)
    spec = model.environment
    if spec.A[D] > 0:
        for H in subsets.proper_subsets(D):
            if spec.A[H] > 0:
                out = out + spec.B[D] / spec.B[H] * (g.evaluate(H, n) - g0)
        for I in subsets.proper_supersets(D, model.J):
            if spec.A[I] > 0:
                out = out + spec.A[I] / spec.A[D] * (g.evaluate(I, n) - g0)
    return out


# --- route 1: direct sum -------------------------------------------------------------


def corr_direct(model: NetworkModel, f: Observable, g: Observable, extra: int = 0) -> float:
    grid = LumpedGrid(model, [f, g], extra)
    return grid.expect(lambda D: f.evaluate(D, grid.n) * _apply_Z(model, g, D, grid.n, grid.mu))


# --- route 2: environment part + synthetic subnetworks ------------------------------


class SyntheticSubnetwork:
    """Jackson network on the up nodes with arrival rate lambda and routing R^D.

    Acts on functions of the up-node queue vector only; down-node queues are frozen
    parameters supplied by the caller.
    """

    def __init__(self, model: NetworkModel, D: int):
        self.nodes = subsets.up_nodes(D, model.J)
        self.lam = model.lam
        self.R = family(model).matrix(D)
        self.service = [model.service[j - 1] for j in self.nodes]

    def apply(self, h, x: Sequence[np.ndarray]):
        """(Q h)(x) for x the tuple of up-node queue arrays; h takes such a tuple."""
        k = len(self.nodes)
        hx = h(x)
        out = np.zeros(np.shape(hx))
        for a in range(k):
            up = list(x)
            up[a] = x[a] + 1
            out = out + self.lam * self.R[0, a + 1] * (h(up) - hx)
            mu = self.service[a].vectorized(x[a])
            down = list(x)
            down[a] = np.maximum(x[a] - 1, 0)
            out = out + mu * self.R[a + 1, 0] * (h(down) - hx)
            for b in range(k):
                if b != a:
                    t = list(down)
                    t[b] = x[b] + 1
                    out = out + mu * self.R[a + 1, b + 1] * (h(t) - hx)
        return out


def _env_part(model: NetworkModel, grid: LumpedGrid, f: Observable, g: Observable, Qy: np.ndarray) -> float:
    """sum_n pi(n) sum_D pi_hat(D) f(D,n) (Q^Y g(., n))(D)."""
    law = grid.law
    masks = range(1 << model.J)
    G = np.stack([g.evaluate(D, grid.n) for D in masks])
    QG = np.tensordot(Qy, G, axes=(1, 0))
    total = 0.0
    for D in grid.support:
        total += law.pi_hat[D] * float(np.sum(grid.weights * f.evaluate(D, grid.n) * QG[D]))
    return total


def corr_split(model: NetworkModel, f: Observable, g: Observable, extra: int = 0) -> float:
    grid = LumpedGrid(model, [f, g], extra)
    law = grid.law
    env_total = _env_part(model, grid, f, g, law.env.rates)
    net_total = 0.0
    for D in grid.support:
        sub = SyntheticSubnetwork(model, D)
        up = sub.nodes

        def embed(x, D=D, up=up):
            n = list(grid.n)
            for a, j in enumerate(up):
                n[j - 1] = x[a]
            return n

        x0 = tuple(grid.n[j - 1] for j in up)
        Qg = sub.apply(lambda x: g.evaluate(D, embed(x)), x0)
        # weights factor as pi_D(n_D) * pi_{up}(n_up); the grid already holds the product
        net_total += law.pi_hat[D] * float(np.sum(grid.weights * f.evaluate(D, grid.n) * Qg))
    return env_total + net_total


# --- route 3: routing-equilibrium formula and its compact rearrangement ---------------


def corr_formula(model: NetworkModel, f: Observable, g: Observable, form: str = "sums", extra: int = 0) -> float:
    if form == "sums":
        return _formula_sums(model, f, g, extra)
    if form == "compact":
        return _formula_compact(model, f, g, extra)
    raise ValueError(f"unknown form {form!r}")


def _formula_sums(model: NetworkModel, f: Observable, g: Observable, extra: int) -> float:
    grid = LumpedGrid(model, [f, g], extra)
    fam = family(model)
    spec = model.environment

    def summand(D):
        fD = f.evaluate(D, grid.n)
        gD = g.evaluate(D, grid.n)
        cross = np.zeros(grid.weights.shape)
        out_env = 0.0
        for H in subsets.proper_subsets(D):
            if spec.A[H] > 0:
                q = spec.B[D] / spec.B[H]
                cross = cross + q * fD * g.evaluate(H, grid.n)
                out_env += q
        for I in subsets.proper_supersets(D, model.J):
            if spec.A[I] > 0:
                q = spec.A[I] / spec.A[D]
                cross = cross + q * fD * g.evaluate(I, grid.n)
                out_env += q
        xi = fam.xi(D)
        RD = fam.matrix(D)
        labels = index_set(D, model.J)
        routed = np.zeros(grid.weights.shape)
        for a, j in enumerate(labels):
            fj = f.evaluate(D, grid.shifted(j))
            for b, i in enumerate(labels):
                if RD[a, b] != 0:
                    routed = routed + xi[a] * RD[a, b] * fj * g.evaluate(D, grid.shifted(i))
        routed = routed * (model.lam / xi[0])
        service = sum((grid.mu[j - 1] for j in labels[1:]), np.zeros(grid.weights.shape))
        loss = fD * gD * (out_env + model.lam + service)
        return cross + routed - loss

    return grid.expect(summand)


def _shift_stack(obs: Observable, grid: LumpedGrid, D: int, labels) -> np.ndarray:
    """Rows ((D + Id) obs)_j = obs(D, n + e_j) for j in the extended up set."""
    base = obs.evaluate(D, grid.n)
    diffs = np.stack([obs.evaluate(D, grid.shifted(j)) - base for j in labels])
    return diffs + base[None]


def _formula_compact(model: NetworkModel, f: Observable, g: Observable, extra: int) -> float:
    grid = LumpedGrid(model, [f, g], extra)
    law = grid.law
    fam = family(model)
    routing_term = 0.0
    loss_term = 0.0
    for D in grid.support:
        labels = index_set(D, model.J)
        xi = fam.xi(D)
        u = _shift_stack(f, grid, D, labels)
        v = _shift_stack(g, grid, D, labels)
        inner = np.einsum("j...,jk,k...->...", u, np.diag(xi) @ fam.matrix(D), v)
        routing_term += law.pi_hat[D] * model.lam / xi[0] * float(np.sum(grid.weights * inner))
        total_service = sum((grid.mu[j - 1] for j in labels[1:]), np.zeros(grid.weights.shape))
        fg = f.evaluate(D, grid.n) * g.evaluate(D, grid.n)
        loss_term += law.pi_hat[D] * float(np.sum(grid.weights * fg * (model.lam + total_service)))
    env_term = _env_part(model, grid, f, g, law.env.rates)
    return routing_term + env_term - loss_term


# --- comparison theorems -------------------------------------------------------------


def _same_common(a: NetworkModel, b: NetworkModel) -> None:
    if a.J != b.J:
        raise PreconditionError("models have different node counts")
    if a.lam != b.lam:
        raise PreconditionError("models have different arrival rates")
    if any(x.rates != y.rates for x, y in zip(a.service, b.service)):
        raise PreconditionError("models have different service rates")


def check_routing_pair(a: NetworkModel, b: NetworkModel) -> None:
    """Hypotheses for comparing two routings: shared intensities, environment and throughputs."""
    _same_common(a, b)
    if not (np.array_equal(a.environment.A, b.environment.A) and np.array_equal(a.environment.B, b.environment.B)):
        raise PreconditionError("models have different breakdown-repair rates")
    ea, eb = family(a).traffic.eta, family(b).traffic.eta
    if np.max(np.abs(ea - eb)) >= ETA_TOL:
        raise PreconditionError(f"traffic solutions differ (max |eta_A - eta_B| = {np.max(np.abs(ea - eb)):.3g})")
    for m, label in ((a, "A"), (b, "B")):
        for D in stationary_law(m).env.support:
            ok, res = verify_rerouting(m, int(D))
            if not ok:
                raise PreconditionError(
                    f"model {label}: rerouting at {subsets.literal(int(D))} violates the traffic assumption (residual {res:.3g})"
                )


def check_env_pair(a: NetworkModel, b: NetworkModel) -> None:
    _same_common(a, b)
    if not np.array_equal(a.routing, b.routing) or a.rerouting.kind != b.rerouting.kind:
        raise PreconditionError("models have different routing regimes")
    for D in range(1 << a.J):
        if a.environment.A[D] > 0 or b.environment.A[D] > 0:
            if not np.allclose(family(a).matrix(D), family(b).matrix(D), rtol=0, atol=0):
                raise PreconditionError(f"models reroute differently at {subsets.literal(D)}")
    pa = env_chain(a.environment).pi_hat
    pb = env_chain(b.environment).pi_hat
    if np.max(np.abs(pa - pb)) >= PI_HAT_TOL:
        raise PreconditionError("environment stationary laws differ")


def diff_routing(a: NetworkModel, b: NetworkModel, f: Observable, g: Observable,
                 form: str = "trace", extra: int = 0) -> float:
    """<f, Q^Z g> - <f, Q^Z' g> from the per-level routing differences only."""
    if form not in ("trace", "compact"):
        raise ValueError(f"unknown form {form!r}")
    check_routing_pair(a, b)
    grid = LumpedGrid(a, [f, g], extra)
    fa, fb = family(a), family(b)
    total = 0.0
    for D in grid.support:
        labels = index_set(D, a.J)
        xi = fa.xi(D)
        delta = fa.matrix(D) - fb.matrix(D)
        if form == "trace":
            fs = np.stack([f.evaluate(D, grid.shifted(j)) for j in labels])
            gs = np.stack([g.evaluate(D, grid.shifted(i)) for i in labels])
            # W[i, j] = g(n+e_i) f(n+e_j); tr(W diag(xi) delta) = sum_{i,j} W[i,j] xi_j delta[j,i]
            M = np.diag(xi) @ delta
            val = np.einsum("i...,j...,ji->...", gs, fs, M)
        else:
            u = _shift_stack(f, grid, D, labels)
            v = _shift_stack(g, grid, D, labels)
            val = np.einsum("j...,j,ji,i...->...", u, xi, delta, v)
        total += grid.law.pi_hat[D] * a.lam / xi[0] * float(np.sum(grid.weights * val))
    return total


def diff_env(a: NetworkModel, b: NetworkModel, f: Observable, g: Observable, extra: int = 0) -> float:
    """E_pi[<f(., X), (Q^Y - Q^Y') g(., X)>_pi_hat]."""
    check_env_pair(a, b)
    grid = LumpedGrid(a, [f, g], extra)
    Qa = stationary_law(a).env.rates
    Qb = stationary_law(b).env.rates
    return _env_part(a, grid, f, g, Qa - Qb)


def corr_all(model: NetworkModel, f: Observable, g: Observable) -> dict:
    """All routes with their spread, as reported by the CLI."""
    routes = {
        "direct": float(corr_direct(model, f, g)),
        "split": float(corr_split(model, f, g)),
        "sums": float(corr_formula(model, f, g, "sums")),
        "compact": float(corr_formula(model, f, g, "compact")),
    }
    vals = list(routes.values())
    return {"routes": routes, "max_delta": max(vals) - min(vals)}
