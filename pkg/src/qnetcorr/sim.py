"""Seeded exact-event simulation of the joint process (environment, queue lengths).

Randomness comes from numpy's Philox bit generator. ``SeedSequence(seed).spawn(3)``
yields three streams, used in order for holding times, event choice and routing
of completed services. Each stream is consumed in fixed-size blocks, so a
trajectory is a pure function of (model, T, seed).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import subsets
from .environment import env_chain
from .errors import QNetError, ValidationError
from .model import NetworkModel
from .observable import Observable
from .routing import family, index_set
from .statespace import is_ergodic

MAX_EVENTS = 100_000_000
BLOCK = 1 << 16
DEFAULT_BATCHES = 50
MIN_BATCHES = 10
DEFAULT_WARMUP = 0.1
EVENT_KINDS = ("arrival", "departure", "transfer", "breakdown", "repair", "blocked")


class _Stream:
    """Block-buffered draws from one Philox stream."""

    def __init__(self, seq: np.random.SeedSequence, kind: str):
        self.gen = np.random.Generator(np.random.Philox(seq))
        self.kind = kind
        self.buf = np.empty(0)
        self.pos = 0

    def next(self) -> float:
        if self.pos == len(self.buf):
            self.buf = self.gen.standard_exponential(BLOCK) if self.kind == "exp" else self.gen.random(BLOCK)
            self.pos = 0
        x = self.buf[self.pos]
        self.pos += 1
        return float(x)


@dataclass
class Trajectory:
    """Piecewise-constant path: state (masks[k], queues[k]) holds on [times[k], times[k+1])."""

    J: int
    T: float
    seed: int
    times: np.ndarray
    masks: np.ndarray
    queues: np.ndarray  # shape (events + 1, J)
    counts: dict = field(default_factory=dict)

    @property
    def events(self) -> int:
        return len(self.times) - 1

    def durations(self) -> np.ndarray:
        return np.diff(np.append(self.times, self.T))

    def export_lines(self) -> list[str]:
        out = []
        for t, D, n in zip(self.times, self.masks, self.queues):
            out.append(",".join([repr(float(t)), subsets.literal(int(D))] + [str(int(x)) for x in n]))
        return out

    def export(self, path: str) -> None:
        with open(path, "w") as fh:
            fh.write("\n".join(self.export_lines()) + "\n")


def _level_tables(model: NetworkModel):
    """Per environment state: arrival targets, routing rows and environment moves."""
    fam = family(model)
    env = env_chain(model.environment)
    tables = {}
    for D in env.support:
        D = int(D)
        R = fam.matrix(D)
        labels = index_set(D, model.J)
        arr = [(labels[a], model.lam * R[0, a]) for a in range(1, len(labels)) if R[0, a] > 0]
        blocked = model.lam * R[0, 0]
        routes = {}
        for a in range(1, len(labels)):
            targets = [(labels[b], R[a, b]) for b in range(len(labels)) if b != a and R[a, b] > 0]
            moving = sum(p for _, p in targets)
            routes[labels[a]] = (moving, [(i, p / moving) for i, p in targets] if moving > 0 else [])
        moves = [(int(H), float(env.rates[D, H])) for H in env.support if H != D and env.rates[D, H] > 0]
        tables[D] = (arr, blocked, routes, moves)
    return tables


def simulate(model: NetworkModel, T: float, seed: int, max_events: int = MAX_EVENTS) -> Trajectory:
    if not T > 0:
        raise ValueError("horizon T must be positive")
    if not is_ergodic(model):
        raise ValidationError("simulation needs an ergodic model")
    hold, choose, route = (_Stream(s, k) for s, k in
                           zip(np.random.SeedSequence(seed).spawn(3), ("exp", "uni", "uni")))
    tables = _level_tables(model)
    service = [model.service[j] for j in range(model.J)]
    counts = dict.fromkeys(EVENT_KINDS, 0)
    D = 0
    n = [0] * model.J
    t = 0.0
    times, masks, queues = [0.0], [0], [tuple(n)]
    while True:
        arr, blocked, routes, moves = tables[D]
        cands = []
        for j, r in arr:
            cands.append(("arrival", j, r))
        if blocked > 0:
            cands.append(("blocked", 0, blocked))
        for j, (moving, _) in routes.items():
            if n[j - 1] > 0 and moving > 0:
                cands.append(("service", j, service[j - 1](n[j - 1]) * moving))
        for H, r in moves:
            cands.append(("env", H, r))
        total = sum(c[2] for c in cands)
        t += hold.next() / total
        if t >= T:
            break
        u = choose.next() * total
        acc = 0.0
        kind, arg, _ = cands[-1]
        for c in cands:
            acc += c[2]
            if u < acc:
                kind, arg, _ = c
                break
        if kind == "blocked":
            counts["blocked"] += 1
            continue
        if kind == "arrival":
            n[arg - 1] += 1
            counts["arrival"] += 1
        elif kind == "service":
            targets = routes[arg][1]
            v = route.next()
            acc = 0.0
            dest = targets[-1][0]
            for i, p in targets:
                acc += p
                if v < acc:
                    dest = i
                    break
            n[arg - 1] -= 1
            if dest == 0:
                counts["departure"] += 1
            else:
                n[dest - 1] += 1
                counts["transfer"] += 1
        else:
            counts["breakdown" if arg & ~D else "repair"] += 1
            D = arg
        times.append(t)
        masks.append(D)
        queues.append(tuple(n))
        if len(times) > max_events:
            raise QNetError(f"event guard: more than {max_events} events before T")
    return Trajectory(model.J, float(T), int(seed), np.array(times), np.array(masks, dtype=np.int64),
                      np.array(queues, dtype=np.int64).reshape(len(times), model.J), counts)


def _values(traj: Trajectory, f: Observable) -> np.ndarray:
    f.check_nodes(traj.J)
    return np.broadcast_to(np.asarray(f.evaluate(traj.masks, tuple(traj.queues.T)), float), traj.times.shape)


def _cumulative(traj: Trajectory, values: np.ndarray):
    """t -> integral_0^t f(Z_s) ds, exact for the piecewise-constant path."""
    knots = np.append(traj.times, traj.T)
    F = np.concatenate(([0.0], np.cumsum(values * np.diff(knots))))
    return lambda t: np.interp(t, knots, F)


def _batch_means(traj: Trajectory, values: np.ndarray, batches: int, warmup: float):
    if batches < MIN_BATCHES:
        raise ValidationError(f"need at least {MIN_BATCHES} batches, got {batches}")
    if traj.events < batches:
        raise ValidationError("trajectory has fewer events than batches")
    edges = np.linspace(warmup * traj.T, traj.T, batches + 1)
    F = _cumulative(traj, values)
    return np.diff(F(edges)) / np.diff(edges), edges[1] - edges[0]


def estimate(traj: Trajectory, f: Observable, batches: int = DEFAULT_BATCHES,
             warmup: float = DEFAULT_WARMUP) -> tuple[float, float]:
    """Time average after warm-up and its batch-means standard error."""
    means, _ = _batch_means(traj, _values(traj, f), batches, warmup)
    return float(means.mean()), float(means.std(ddof=1) / np.sqrt(batches))


def estimate_avar(traj: Trajectory, f: Observable, batches: int = DEFAULT_BATCHES,
                  warmup: float = DEFAULT_WARMUP) -> tuple[float, float]:
    """Batch-means estimate of lim T Var(time average of f), with its standard error."""
    means, length = _batch_means(traj, _values(traj, f), batches, warmup)
    v = float(length * means.var(ddof=1))
    return v, v * float(np.sqrt(2.0 / (batches - 1)))


def state_at(traj: Trajectory, t: np.ndarray) -> np.ndarray:
    return np.searchsorted(traj.times, t, side="right") - 1


def estimate_lag(traj: Trajectory, f: Observable, g: Observable, tau: float, step: float | None = None,
                 batches: int = DEFAULT_BATCHES, warmup: float = DEFAULT_WARMUP) -> tuple[float, float]:
    """Average of f(Z_t) g(Z_{t+tau}) over an even time grid, with batch-means standard error."""
    start, stop = warmup * traj.T, traj.T - tau
    if stop <= start:
        raise ValidationError("lag exceeds the usable horizon")
    if step is None:
        step = (stop - start) / 100_000
    grid = np.arange(start, stop, step)
    if len(grid) < batches:
        raise ValidationError("time grid has fewer points than batches")
    if batches < MIN_BATCHES:
        raise ValidationError(f"need at least {MIN_BATCHES} batches, got {batches}")
    fv, gv = _values(traj, f), _values(traj, g)
    prod = fv[state_at(traj, grid)] * gv[state_at(traj, grid + tau)]
    means = np.array([c.mean() for c in np.array_split(prod, batches)])
    return float(means.mean()), float(means.std(ddof=1) / np.sqrt(batches))


def summary(traj: Trajectory, observables: list[Observable], batches: int = DEFAULT_BATCHES,
            warmup: float = DEFAULT_WARMUP) -> dict:
    est = {}
    for f in observables:
        m, se = estimate(traj, f, batches, warmup)
        est[f.text] = {"mean": m, "se": se}
    return {"T": traj.T, "seed": traj.seed, "events": traj.events, "counts": dict(traj.counts),
            "batches": batches, "warmup": warmup, "estimates": est}


def summary_json(traj: Trajectory, observables: list[Observable], **kw) -> str:
    return json.dumps(summary(traj, observables, **kw), sort_keys=True)
