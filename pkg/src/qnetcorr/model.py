"""Network model: routing, service rates, environment and rerouting scheme, plus config I/O."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.sparse.csgraph import connected_components

from . import subsets
from .environment import EnvironmentSpec
from .errors import ConfigParseError, ValidationError

MAX_NODES = 16
ROW_TOL = 1e-12
SCHEMES = ("stalling", "skipping", "rsrd", "explicit")


@dataclass(frozen=True)
class ServiceRates:
    """mu(1..K); constant at mu(K) for all k >= K. mu(0) = 0."""

    rates: tuple[float, ...]

    def __post_init__(self):
        if len(self.rates) < 1:
            raise ValidationError("service: at least one rate required")
        if any(not (r > 0 and np.isfinite(r)) for r in self.rates):
            raise ValidationError("service: rates must be positive and finite")

    @property
    def constant_after(self) -> int:
        return len(self.rates)

    @property
    def limit(self) -> float:
        return self.rates[-1]

    def __call__(self, k: int) -> float:
        if k <= 0:
            return 0.0
        return self.rates[min(k, len(self.rates)) - 1]

    def table(self, top: int) -> np.ndarray:
        """mu(0..top) as an array."""
        return np.array([self(k) for k in range(top + 1)])

    def vectorized(self, k):
        tab = np.concatenate(([0.0], np.asarray(self.rates)))
        return tab[np.clip(k, 0, len(self.rates))]


@dataclass(frozen=True, eq=False)
class ReroutingSpec:
    kind: str
    matrices: Mapping[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in SCHEMES:
            raise ValidationError(f"rerouting: unknown kind {self.kind!r}")


@dataclass(frozen=True, eq=False)
class NetworkModel:
    J: int
    lam: float
    routing: np.ndarray
    service: tuple[ServiceRates, ...]
    environment: EnvironmentSpec
    rerouting: ReroutingSpec
    name: str = ""

    def __post_init__(self):
        R = np.array(self.routing, dtype=float)
        R.setflags(write=False)
        object.__setattr__(self, "routing", R)
        object.__setattr__(self, "service", tuple(self.service))
        validate_model(self)

    def mu(self, j: int, k: int) -> float:
        return self.service[j - 1](k)

    def with_routing(self, routing, rerouting: ReroutingSpec | None = None, name: str = "") -> "NetworkModel":
        return NetworkModel(self.J, self.lam, routing, self.service, self.environment,
                            rerouting or self.rerouting, name or self.name)

    def with_environment(self, env: EnvironmentSpec, name: str = "") -> "NetworkModel":
        return NetworkModel(self.J, self.lam, self.routing, self.service, env, self.rerouting, name or self.name)

    def fingerprint(self) -> str:
        text = json.dumps(model_to_config(self), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def check_stochastic(R: np.ndarray, what: str) -> None:
    if R.ndim != 2 or R.shape[0] != R.shape[1]:
        raise ValidationError(f"{what}: matrix must be square")
    if (R < 0).any():
        raise ValidationError(f"{what}: negative entry")
    bad = np.flatnonzero(np.abs(R.sum(axis=1) - 1.0) > ROW_TOL)
    if bad.size:
        raise ValidationError(f"{what}: row sum of row {bad[0]} is {R[bad[0]].sum()!r}, expected 1")


def is_irreducible(R: np.ndarray) -> bool:
    ncomp, _ = connected_components(R > 0, directed=True, connection="strong")
    return ncomp == 1


def validate_model(m: NetworkModel) -> None:
    if not isinstance(m.J, (int, np.integer)) or m.J < 1:
        raise ValidationError("J must be a positive integer")
    if m.J > MAX_NODES:
        raise ValidationError(f"J exceeds {MAX_NODES} (got {m.J})")
    if not (m.lam > 0 and np.isfinite(m.lam)):
        raise ValidationError("lambda must be positive")
    if m.routing.shape != (m.J + 1, m.J + 1):
        raise ValidationError(f"routing must be {(m.J + 1)}x{(m.J + 1)}")
    check_stochastic(m.routing, "routing")
    if not is_irreducible(m.routing):
        raise ValidationError("routing matrix is not irreducible on {0..J}")
    if len(m.service) != m.J:
        raise ValidationError("service: one entry per node required")
    if m.environment.J != m.J:
        raise ValidationError("environment: J mismatch")
    if m.rerouting.kind == "explicit":
        for D, M in m.rerouting.matrices.items():
            k = m.J + 1 - D.bit_count()
            M = np.asarray(M, dtype=float)
            if M.shape != (k, k):
                raise ValidationError(f"rerouting: explicit matrix for {subsets.literal(D)} must be {k}x{k}")
            check_stochastic(M, f"rerouting {subsets.literal(D)}")
        if 0 in m.rerouting.matrices and not np.allclose(m.rerouting.matrices[0], m.routing, atol=ROW_TOL, rtol=0):
            raise ValidationError("rerouting: explicit matrix for [] must equal the routing matrix")


# --- config ----------------------------------------------------------------


def _num_list(obj, what) -> list[float]:
    if not isinstance(obj, list) or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in obj):
        raise ConfigParseError(f"{what} must be an array of numbers")
    return [float(x) for x in obj]


def _service_from_config(entry, j) -> ServiceRates:
    if isinstance(entry, (int, float)) and not isinstance(entry, bool):
        return ServiceRates((float(entry),))
    if not isinstance(entry, dict) or "rates" not in entry:
        raise ConfigParseError(f"service[{j}] must be an object with 'rates'")
    rates = _num_list(entry["rates"], f"service[{j}].rates")
    K = entry.get("constant_after", len(rates))
    if not isinstance(K, int) or K < 1 or K > len(rates):
        raise ValidationError(f"service[{j}]: constant_after must be an integer in 1..len(rates)")
    if any(r != rates[K - 1] for r in rates[K:]):
        raise ValidationError(f"service[{j}]: rates beyond constant_after must equal rate at level {K}")
    return ServiceRates(tuple(rates[:K]))


def _matrix(obj, k, what) -> np.ndarray:
    flat = obj
    if isinstance(obj, list) and obj and isinstance(obj[0], list):
        flat = [x for row in obj for x in row]
    vals = _num_list(flat, what)
    if len(vals) != k * k:
        raise ValidationError(f"{what}: expected {k * k} entries, got {len(vals)}")
    return np.array(vals).reshape(k, k)


def model_from_dict(cfg: Mapping) -> NetworkModel:
    if not isinstance(cfg, Mapping):
        raise ConfigParseError("config must be a JSON object")
    for key in ("J", "lambda", "routing", "service"):
        if key not in cfg:
            raise ConfigParseError(f"config: missing field {key!r}")
    J = cfg["J"]
    if not isinstance(J, int) or isinstance(J, bool):
        raise ConfigParseError("J must be an integer")
    if J < 1:
        raise ValidationError("J must be a positive integer")
    if J > MAX_NODES:
        raise ValidationError(f"J exceeds {MAX_NODES} (got {J})")
    lam = cfg["lambda"]
    if not isinstance(lam, (int, float)) or isinstance(lam, bool):
        raise ConfigParseError("lambda must be a number")
    R = _matrix(cfg["routing"], J + 1, "routing")
    service = cfg["service"]
    if not isinstance(service, list) or len(service) != J:
        raise ValidationError("service: one entry per node required")
    svc = tuple(_service_from_config(s, j + 1) for j, s in enumerate(service))

    env_cfg = cfg.get("environment", {"kind": "none"})
    kind = env_cfg.get("kind", "none") if isinstance(env_cfg, Mapping) else None
    if kind == "independent":
        env = EnvironmentSpec.independent(_num_list(env_cfg.get("alpha"), "alpha"), _num_list(env_cfg.get("beta"), "beta"))
        if env.J != J:
            raise ValidationError("environment: alpha/beta length must equal J")
    elif kind == "table":
        def table(key):
            raw = env_cfg.get(key, {})
            if not isinstance(raw, Mapping):
                raise ConfigParseError(f"environment.{key} must be an object")
            try:
                return {subsets.parse_literal(k, J): float(v) for k, v in raw.items()}
            except (ValueError, TypeError) as exc:
                raise ConfigParseError(f"environment.{key}: {exc}") from exc
        env = EnvironmentSpec.table(J, table("A"), table("B"))
    elif kind == "none":
        env = EnvironmentSpec.reliable(J)
    else:
        raise ConfigParseError(f"environment.kind must be 'independent', 'table' or 'none', got {kind!r}")

    rr_cfg = cfg.get("rerouting", {"kind": "skipping"})
    if isinstance(rr_cfg, str):
        rr_cfg = {"kind": rr_cfg}
    rkind = rr_cfg.get("kind")
    if rkind not in SCHEMES:
        raise ConfigParseError(f"rerouting.kind must be one of {SCHEMES}, got {rkind!r}")
    mats = {}
    if rkind == "explicit":
        raw = rr_cfg.get("matrices", {})
        if not isinstance(raw, Mapping):
            raise ConfigParseError("rerouting.matrices must be an object keyed by subset literal")
        for key, val in raw.items():
            try:
                D = subsets.parse_literal(key, J)
            except ValueError as exc:
                raise ConfigParseError(f"rerouting.matrices: {exc}") from exc
            mats[D] = _matrix(val, J + 1 - D.bit_count(), f"rerouting[{key}]")
    return NetworkModel(J, float(lam), R, svc, env, ReroutingSpec(rkind, mats), str(cfg.get("name", "")))


def load_model(config_text: str) -> NetworkModel:
    try:
        cfg = json.loads(config_text)
    except json.JSONDecodeError as exc:
        raise ConfigParseError(f"invalid JSON: {exc}") from exc
    return model_from_dict(cfg)


def model_to_config(m: NetworkModel) -> dict:
    cfg = {
        "J": m.J,
        "lambda": m.lam,
        "routing": [float(x) for x in m.routing.ravel()],
        "service": [{"rates": list(s.rates), "constant_after": s.constant_after} for s in m.service],
        "environment": m.environment.to_config(),
        "rerouting": {"kind": m.rerouting.kind},
    }
    if m.name:
        cfg["name"] = m.name
    if m.rerouting.kind == "explicit":
        cfg["rerouting"]["matrices"] = {
            subsets.literal(D): [float(x) for x in np.asarray(M).ravel()]
            for D, M in sorted(m.rerouting.matrices.items())
        }
    return cfg


def make_model(J: int, lam: float, routing, mu: Sequence, environment: EnvironmentSpec | None = None,
               rerouting: str | ReroutingSpec = "skipping", name: str = "") -> NetworkModel:
    """Convenience constructor; ``mu`` entries are a rate or a sequence of rates."""
    svc = tuple(x if isinstance(x, ServiceRates) else ServiceRates((float(x),)) if np.isscalar(x)
                else ServiceRates(tuple(map(float, x))) for x in mu)
    rr = rerouting if isinstance(rerouting, ReroutingSpec) else ReroutingSpec(rerouting)
    return NetworkModel(J, float(lam), np.asarray(routing, dtype=float), svc,
                        environment or EnvironmentSpec.reliable(J), rr, name)
