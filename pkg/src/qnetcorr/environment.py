"""Breakdown-repair environment: generator on subsets of down nodes and its stationary law."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import subsets
from .errors import ValidationError


@dataclass(frozen=True, eq=False)
class EnvironmentSpec:
    """Set functions A (breakdown weights) and B (repair weights) over all 2^J subsets.

    Arrays are indexed by bitmask. ``kind`` and ``params`` only record how the
    spec was written so it can be echoed back.
    """

    J: int
    A: np.ndarray
    B: np.ndarray
    kind: str = "table"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        B = np.asarray(self.B, dtype=float)
        A.setflags(write=False)
        B.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        validate_env(self)

    @classmethod
    def independent(cls, alpha: Sequence[float], beta: Sequence[float]) -> "EnvironmentSpec":
        J = len(alpha)
        if len(beta) != J:
            raise ValidationError("environment: alpha and beta lengths differ")
        A = np.ones(1 << J)
        B = np.ones(1 << J)
        for m in range(1 << J):
            for j in subsets.nodes_of(m):
                A[m] *= alpha[j - 1]
                B[m] *= beta[j - 1]
        return cls(J, A, B, "independent", {"alpha": list(map(float, alpha)), "beta": list(map(float, beta))})

    @classmethod
    def table(cls, J: int, A: Mapping[int, float], B: Mapping[int, float]) -> "EnvironmentSpec":
        a = np.zeros(1 << J)
        b = np.zeros(1 << J)
        for m, v in A.items():
            a[m] = v
        for m, v in B.items():
            b[m] = v
        return cls(J, a, b, "table")

    @classmethod
    def reliable(cls, J: int) -> "EnvironmentSpec":
        """No breakdowns: A vanishes off the empty set."""
        return cls.table(J, {0: 1.0}, {0: 1.0})

    @property
    def support(self) -> np.ndarray:
        return self.A > 0

    def to_config(self) -> dict:
        if self.kind == "independent":
            return {"kind": "independent", **self.params}
        return {
            "kind": "table",
            "A": {subsets.literal(m): float(v) for m, v in enumerate(self.A) if v != 0},
            "B": {subsets.literal(m): float(v) for m, v in enumerate(self.B) if v != 0},
        }


def validate_env(spec: EnvironmentSpec) -> None:
    J, A, B = spec.J, spec.A, spec.B
    if A.shape != (1 << J,) or B.shape != (1 << J,):
        raise ValidationError("environment: A and B must cover all 2^J subsets")
    if A[0] != 1.0 or B[0] != 1.0:
        raise ValidationError("environment: A(empty)=1 and B(empty)=1 required")
    if (A < 0).any() or (B < 0).any() or not (np.isfinite(A).all() and np.isfinite(B).all()):
        raise ValidationError("environment: A and B must be finite and nonnegative")
    for m in range(1 << J):
        if A[m] > 0 and B[m] <= 0:
            raise ValidationError(f"environment: B{subsets.literal(m)} must be positive where A>0")
        for sup in subsets.proper_supersets(m, J):
            if A[m] == 0 and A[sup] > 0:
                raise ValidationError(
                    f"environment: A{subsets.literal(m)}=0 but A{subsets.literal(sup)}>0 (infinite breakdown rate)"
                )
            if B[m] == 0 and B[sup] > 0 and A[sup] > 0:
                raise ValidationError(
                    f"environment: B{subsets.literal(m)}=0 but B{subsets.literal(sup)}>0 (infinite repair rate)"
                )


@dataclass(frozen=True, eq=False)
class EnvironmentChain:
    spec: EnvironmentSpec
    rates: np.ndarray  # dense generator over all 2^J masks
    pi_hat: np.ndarray
    normalizer: float

    @property
    def J(self) -> int:
        return self.spec.J

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.pi_hat > 0)


def env_rate(spec: EnvironmentSpec, D: int, H: int) -> float:
    """Off-diagonal rate q^Y(D, H) (0/0 = 0)."""
    if D == H:
        raise ValueError("env_rate is for off-diagonal pairs")
    if spec.A[D] == 0:
        return 0.0
    if H & D == D:  # H strict superset: breakdown
        return spec.A[H] / spec.A[D]
    if H & D == H:  # H strict subset: repair
        if spec.A[H] == 0:
            return 0.0
        return spec.B[D] / spec.B[H]
    return 0.0


def env_chain(spec: EnvironmentSpec) -> EnvironmentChain:
    J = spec.J
    n = 1 << J
    Qm = np.zeros((n, n))
    for D in range(n):
        if spec.A[D] == 0:
            continue
        for H in subsets.proper_subsets(D):
            Qm[D, H] = env_rate(spec, D, H)
        for I in subsets.proper_supersets(D, J):
            Qm[D, I] = env_rate(spec, D, I)
        Qm[D, D] = -Qm[D].sum()
    w = np.where(spec.A > 0, spec.A / np.where(spec.B > 0, spec.B, 1.0), 0.0)
    C = float(w.sum())
    Qm.setflags(write=False)
    pi = w / C
    pi.setflags(write=False)
    return EnvironmentChain(spec, Qm, pi, C)


def apply_env_generator(chain: EnvironmentChain, h: Callable[[int], float] | Sequence[float], D: int) -> float:
    """(Q^Y h)(D) summed explicitly over repairs H < D and breakdowns I > D."""
    spec = chain.spec
    val = h if callable(h) else (lambda m: h[m])
    if spec.A[D] == 0:
        return 0.0
    hD = val(D)
    total = 0.0
    for H in subsets.proper_subsets(D):
        r = env_rate(spec, D, H)
        if r:
            total += r * (val(H) - hD)
    for I in subsets.proper_supersets(D, spec.J):
        r = env_rate(spec, D, I)
        if r:
            total += r * (val(I) - hD)
    return total


def env_scale(spec: EnvironmentSpec, h: Callable[[int], float] | Sequence[float]) -> EnvironmentSpec:
    """Multiply A and B by a positive set function h with h(empty)=1; pi_hat is unchanged."""
    hv = np.array([h(m) if callable(h) else h[m] for m in range(1 << spec.J)], dtype=float)
    if hv[0] != 1.0 or (hv <= 0).any():
        raise ValidationError("env_scale: h must be positive with h(empty)=1")
    if spec.kind == "independent":
        # keep the compact form when the scaling factorises as kappa^|D|
        k = hv[1] if spec.J >= 1 else 1.0
        if all(np.isclose(hv[m], k ** m.bit_count(), rtol=0, atol=0) for m in range(1 << spec.J)):
            return EnvironmentSpec.independent(
                [a * k for a in spec.params["alpha"]], [b * k for b in spec.params["beta"]]
            )
    return EnvironmentSpec(spec.J, spec.A * hv, spec.B * hv, "table")


def kappa_scaling(kappa: float) -> Callable[[int], float]:
    return lambda m: kappa ** m.bit_count()
