"""Product-form stationary law, exact tail sums, balance checks, and truncated chains."""

from __future__ import annotations

import weakref
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import subsets
from .environment import EnvironmentChain, env_chain, env_rate
from .errors import NonErgodicError, UnboundedObservableError, ValidationError
from .model import NetworkModel
from .observable import Observable
from .routing import family

MAX_TRUNCATED_STATES = 5_000_000
LUMP_MARGIN = 2


@dataclass(frozen=True)
class MarginalLaw:
    eta: float
    rates: tuple[float, ...]  # mu(1..K)
    normalizer: float

    @property
    def K(self) -> int:
        return len(self.rates)

    @property
    def rho(self) -> float:
        return self.eta / self.rates[-1]

    def unnormalized(self, k: int) -> float:
        """prod_{i<=k} eta/mu(i)."""
        if k == 0:
            return 1.0
        if self.eta == 0:
            return 0.0
        K = self.K
        head = np.prod([self.eta / r for r in self.rates[: min(k, K - 1)]]) if min(k, K - 1) > 0 else 1.0
        if k <= K - 1:
            return float(head)
        return float(head * self.rho ** (k - K + 1))

    def pmf(self, k: int) -> float:
        return self.unnormalized(k) / self.normalizer

    def pmf_array(self, top: int) -> np.ndarray:
        return np.array([self.pmf(k) for k in range(top + 1)])

    def tail(self, L: int) -> float:
        """P(n >= L) from the finite head and the geometric tail in closed form."""
        if L <= 0:
            return 1.0
        if self.eta == 0:
            return 0.0
        K = self.K
        geometric = self.unnormalized(max(L, K - 1)) / (1.0 - self.rho) / self.normalizer
        head = sum(self.pmf(k) for k in range(L, K - 1))
        return head + geometric


def _marginal(eta: float, rates: tuple[float, ...], j: int) -> MarginalLaw:
    rho = eta / rates[-1]
    if rho >= 1:
        raise NonErgodicError(f"node {j} is not ergodic: eta/mu(K) = {rho:.6g} >= 1")
    K = len(rates)
    if eta == 0:
        return MarginalLaw(eta, rates, 1.0)
    partial = 1.0
    C = 1.0
    for k in range(1, K):
        partial *= eta / rates[k - 1]
        C += partial
    C += partial * rho / (1 - rho)
    return MarginalLaw(eta, rates, C)


class StationaryLaw:
    """pi_tilde(D, n) = pi_hat(D) * prod_j pi_j(n_j) for one model."""

    def __init__(self, model: NetworkModel):
        self.model = model
        self.env: EnvironmentChain = env_chain(model.environment)
        eta = family(model).traffic.eta
        self.marginals = tuple(_marginal(float(eta[j]), model.service[j].rates, j + 1) for j in range(model.J))

    @property
    def pi_hat(self) -> np.ndarray:
        return self.env.pi_hat

    def joint(self, D: int, n: Sequence[int]) -> float:
        p = self.pi_hat[D]
        for j, k in enumerate(n):
            p *= self.marginals[j].pmf(int(k))
        return float(p)


_laws: "weakref.WeakKeyDictionary[NetworkModel, StationaryLaw]" = weakref.WeakKeyDictionary()


def stationary_law(model: NetworkModel) -> StationaryLaw:
    law = _laws.get(model)
    if law is None:
        law = StationaryLaw(model)
        _laws[model] = law
    return law


def marginal_normalizer(model: NetworkModel, j: int) -> float:
    return stationary_law(model).marginals[j - 1].normalizer


def joint_pi(model: NetworkModel, D: int, n: Sequence[int]) -> float:
    return stationary_law(model).joint(D, n)


def tail_mass(model: NetworkModel, j: int, L: int) -> float:
    return stationary_law(model).marginals[j - 1].tail(L)


def is_ergodic(model: NetworkModel) -> bool:
    try:
        stationary_law(model)
    except NonErgodicError:
        return False
    return True


# --- global balance -----------------------------------------------------------


def balance_residual(model: NetworkModel, D: int, n: Sequence[int],
                     pi: Callable[[int, Sequence[int]], float] | None = None,
                     relative: bool = True) -> float:
    """Net probability flux into (D, n) under Q^Z; the product form predicts zero.

    The relative version divides by the total outflow pi(D,n)|q(D,n;D,n)|.
    """
    m = model
    law = stationary_law(m)
    p = pi or law.joint
    fam = family(m)
    RD = fam.matrix(D)
    idx = {node: pos for pos, node in enumerate([0] + subsets.up_nodes(D, m.J))}
    up = subsets.up_nodes(D, m.J)
    n = tuple(int(x) for x in n)

    def shift(vec, j, d):
        v = list(vec)
        v[j - 1] += d
        return tuple(v)

    inflow = 0.0
    for j in up:
        if n[j - 1] >= 1:
            inflow += p(D, shift(n, j, -1)) * m.lam * RD[0, idx[j]]
        src = shift(n, j, +1)
        mu = m.mu(j, src[j - 1])
        inflow += p(D, src) * mu * RD[idx[j], 0]
        for i in up:
            if i != j and n[i - 1] >= 1:
                s2 = shift(src, i, -1)
                inflow += p(D, s2) * m.mu(j, s2[j - 1]) * RD[idx[j], idx[i]]
    env = law.env
    for H in range(1 << m.J):
        if H != D and env.rates[H, D] > 0:
            inflow += p(H, n) * env.rates[H, D]
    out_rate = sum(m.lam * RD[0, idx[j]] for j in up)
    out_rate += sum(m.mu(j, n[j - 1]) * (1.0 - RD[idx[j], idx[j]]) for j in up)
    out_rate += -env.rates[D, D]
    outflow = p(D, n) * out_rate
    res = inflow - outflow
    if relative and outflow > 0:
        return abs(res) / outflow
    return abs(res)


# --- lumped enumeration ---------------------------------------------------------


class LumpedGrid:
    """Exact enumeration of E_pi[h] for h constant in n_j beyond level L_j.

    Coordinate j runs over 0..L_j; the top level carries the tail mass P(n_j >= L_j).
    """

    def __init__(self, model: NetworkModel, observables: Iterable[Observable] = (), extra: int = 0):
        law = stationary_law(model)
        self.model = model
        self.law = law
        obs = list(observables)
        for f in obs:
            if not f.bounded:
                raise UnboundedObservableError(
                    f"observable {f.text!r} uses a raw q(j) atom; exact routes need qc(j,c)"
                )
            f.check_nodes(model.J)
        levels = []
        for j in range(1, model.J + 1):
            sat = max((int(f.cutoff(j)) for f in obs), default=0)
            levels.append(max(sat, model.service[j - 1].constant_after) + LUMP_MARGIN + extra)
        self.levels = tuple(levels)
        ws = []
        for j, L in enumerate(levels):
            marg = law.marginals[j]
            w = np.empty(L + 1)
            w[:L] = marg.pmf_array(L - 1)
            w[L] = marg.tail(L)
            ws.append(w)
        self.coord_weights = ws
        grids = np.meshgrid(*[np.arange(L + 1) for L in levels], indexing="ij")
        self.n = tuple(g for g in grids)
        W = ws[0]
        for w in ws[1:]:
            W = np.multiply.outer(W, w)
        self.weights = W
        self.mu = tuple(model.service[j].vectorized(self.n[j]) for j in range(model.J))
        self.support = [int(D) for D in law.env.support]

    def shifted(self, j: int) -> tuple[np.ndarray, ...]:
        if j == 0:
            return self.n
        n = list(self.n)
        n[j - 1] = n[j - 1] + 1
        return tuple(n)

    def expect(self, summand: Callable[[int], np.ndarray]) -> float:
        """sum_D pi_hat(D) sum_n w(n) summand(D)(n)."""
        total = 0.0
        for D in self.support:
            total += self.law.pi_hat[D] * float(np.sum(self.weights * summand(D)))
        return total


def expectation(model: NetworkModel, f: Observable, extra: int = 0) -> float:
    grid = LumpedGrid(model, [f], extra)
    return grid.expect(lambda D: f.evaluate(D, grid.n))


# --- truncated chains -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TruncatedChain:
    model: NetworkModel
    N: int
    masks: np.ndarray  # supported environment states, ascending
    generator: sp.csr_matrix

    @property
    def box(self) -> int:
        return (self.N + 1) ** self.model.J

    @property
    def size(self) -> int:
        return self.generator.shape[0]

    @cached_property
    def state_mask(self) -> np.ndarray:
        return np.repeat(self.masks, self.box)

    @cached_property
    def state_queues(self) -> tuple[np.ndarray, ...]:
        grid = np.unravel_index(np.arange(self.box), (self.N + 1,) * self.model.J)
        return tuple(np.tile(g, len(self.masks)) for g in grid)

    def evaluate(self, f: Observable) -> np.ndarray:
        f.check_nodes(self.model.J)
        return np.array(f.evaluate(self.state_mask, self.state_queues), dtype=float)

    def index(self, D: int, n: Sequence[int]) -> int:
        pos = int(np.searchsorted(self.masks, D))
        if pos >= len(self.masks) or self.masks[pos] != D:
            raise KeyError(f"environment state {subsets.literal(D)} not in support")
        return pos * self.box + int(np.ravel_multi_index(tuple(n), (self.N + 1,) * self.model.J))

    @cached_property
    def log_stationary(self) -> np.ndarray:
        return truncated_log_stationary(self)

    @cached_property
    def stationary(self) -> np.ndarray:
        return truncated_stationary(self)


def build_truncated(model: NetworkModel, N: int) -> TruncatedChain:
    """Finite chain on supp(pi_hat) x {0..N}^J; transitions that would push a queue above N are dropped."""
    J = model.J
    masks = np.array([int(D) for D in env_chain(model.environment).support])
    box = (N + 1) ** J
    total = box * len(masks)
    if total > MAX_TRUNCATED_STATES:
        raise ValidationError(f"truncated chain would have {total} states (limit {MAX_TRUNCATED_STATES})")
    fam = family(model)
    shape = (N + 1,) * J
    local = np.arange(box)
    coords = np.unravel_index(local, shape)
    strides = [int(np.prod(shape[j + 1:])) for j in range(J)]
    rows, cols, vals = [], [], []

    def add(src, dst, rate):
        rate = np.broadcast_to(rate, src.shape)
        keep = rate > 0
        rows.append(src[keep])
        cols.append(dst[keep])
        vals.append(rate[keep])

    for pos, D in enumerate(masks):
        base = pos * box
        RD = fam.matrix(int(D))
        up = subsets.up_nodes(int(D), J)
        idx = {node: k for k, node in enumerate([0] + up)}
        for j in up:
            c = coords[j - 1]
            room = c < N
            if RD[0, idx[j]] > 0:
                add(base + local[room], base + local[room] + strides[j - 1], model.lam * RD[0, idx[j]])
            busy = c > 0
            mu = model.service[j - 1].vectorized(c)
            if RD[idx[j], 0] > 0:
                add(base + local[busy], base + local[busy] - strides[j - 1], mu[busy] * RD[idx[j], 0])
            for i in up:
                if i == j or RD[idx[j], idx[i]] == 0:
                    continue
                ok = busy & (coords[i - 1] < N)
                add(base + local[ok], base + local[ok] - strides[j - 1] + strides[i - 1],
                    mu[ok] * RD[idx[j], idx[i]])
        for pos2, H in enumerate(masks):
            if H == D:
                continue
            r = env_rate(model.environment, int(D), int(H))
            if r > 0:
                add(base + local, pos2 * box + local, r)
    r = np.concatenate(rows) if rows else np.array([], dtype=int)
    c = np.concatenate(cols) if cols else np.array([], dtype=int)
    v = np.concatenate(vals) if vals else np.array([])
    Q = sp.coo_matrix((v, (r, c)), shape=(total, total)).tocsr()
    Q.sum_duplicates()
    Q = (Q - sp.diags(np.asarray(Q.sum(axis=1)).ravel())).tocsr()
    return TruncatedChain(model, N, masks, Q)


def reference_log_weights(model: NetworkModel, masks: np.ndarray, N: int) -> np.ndarray:
    """log of pi_hat(D) * prod_j prod_{i<=n_j} eta_j / mu_j(i) on the truncated states.

    Unnormalised, so it exists for non-ergodic models too; states of zero weight
    get the smallest finite value instead of -inf.
    """
    env = env_chain(model.environment)
    eta = family(model).traffic.eta
    logs_box = np.zeros((N + 1,) * model.J)
    for j in range(model.J):
        mu = model.service[j].table(N)[1:]
        with np.errstate(divide="ignore"):
            steps = np.log(eta[j]) - np.log(mu) if eta[j] > 0 else np.full(N, -np.inf)
        lj = np.concatenate(([0.0], np.cumsum(steps)))
        shape = [1] * model.J
        shape[j] = N + 1
        logs_box = logs_box + lj.reshape(shape)
    with np.errstate(divide="ignore"):
        logs = np.add.outer(np.log(env.pi_hat[masks]), logs_box.ravel()).ravel()
    finite = np.isfinite(logs)
    if not finite.all():
        logs[~finite] = logs[finite].min()
    return logs


def truncated_log_stationary(chain: TruncatedChain) -> np.ndarray:
    """log p for the truncated chain, solved relative to the reference weights.

    Writing p = s * y with s the product-form reference weights keeps every
    unknown y of order one, so states with tiny probability keep their relative
    accuracy. Transient states come out as -inf.
    """
    Q = chain.generator
    n = Q.shape[0]
    if n == 1:
        return np.zeros(1)
    logs = reference_log_weights(chain.model, chain.masks, chain.N)
    QT = Q.T.tocoo()
    scale = np.exp(logs[QT.col] - logs[QT.row])
    B = sp.coo_matrix((QT.data * scale, (QT.row, QT.col)), shape=(n, n)).tolil()
    pin = int(np.argmax(logs))
    B[pin, :] = 0.0
    B[pin, pin] = 1.0
    b = np.zeros(n)
    b[pin] = 1.0
    y = spla.spsolve(B.tocsc(), b)
    with np.errstate(divide="ignore", invalid="ignore"):
        logp = np.where(y > 0, logs + np.log(np.where(y > 0, y, 1.0)), -np.inf)
    top = logp.max()
    logp = logp - (top + np.log(np.exp(logp - top).sum()))
    logp.setflags(write=False)
    return logp


def truncated_stationary(chain: TruncatedChain) -> np.ndarray:
    p = np.exp(chain.log_stationary)
    p.setflags(write=False)
    return p


def stationary_residual(chain: TruncatedChain) -> float:
    return float(np.max(np.abs(chain.generator.T @ chain.stationary)))


def product_form_on_box(chain: TruncatedChain) -> np.ndarray:
    """Infinite-space product form restricted to the truncated states (not renormalised)."""
    law = stationary_law(chain.model)
    N = chain.N
    w = np.array(law.pi_hat[chain.masks])
    marg = [m.pmf_array(N) for m in law.marginals]
    box = marg[0]
    for mm in marg[1:]:
        box = np.multiply.outer(box, mm)
    return np.kron(w, box.ravel())


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())
