"""Command-line entry point: ``qnetcorr <command> model.json [options]``.

Every command prints one JSON report on stdout. Exit codes: 0 success,
1 validation or precondition failure, 2 usage error. Failures print a
single-line JSON object on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from typing import Sequence

import numpy as np

from . import subsets
from .avar import avar_compare, avar_exact, uniformize
from .correlation import corr_all, corr_direct, diff_env, diff_routing
from .environment import env_chain
from .errors import QNetError
from .model import NetworkModel, load_model
from .observable import ObservableSyntaxError, parse_observable
from .ordering import order_all_levels, pd_generator, peskun_generator
from .routing import family, fixed_vector_residual, verify_rerouting
from .sim import estimate, estimate_avar, simulate
from .spectral import gap_report
from .statespace import balance_residual, build_truncated, stationary_law

SCHEMA = "qnet-corr/1"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    return x


def _load(path: str) -> NetworkModel:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from exc
    return load_model(text)


def _obs(text: str):
    try:
        return parse_observable(text)
    except ObservableSyntaxError as exc:
        raise UsageError(f"observable {text!r}: {exc}") from exc


def _floats(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise UsageError(f"bad truncation list {text!r}") from exc


# --- commands -----------------------------------------------------------------


def cmd_validate(args, model: NetworkModel) -> dict:
    law = stationary_law(model)
    fam = family(model)
    levels = {}
    for D in law.env.support:
        D = int(D)
        ok, res = verify_rerouting(model, D)
        levels[subsets.literal(D)] = {"traffic_ok": ok, "traffic_residual": res,
                                      "xi_fixed_residual": fixed_vector_residual(model, D)}
    bad = [k for k, v in levels.items() if not v["traffic_ok"]]
    if bad:
        raise QNetError(f"rerouting violates the traffic assumption at {', '.join(bad)}")
    return {"valid": True, "J": model.J, "rerouting": model.rerouting.kind, "reversible_routing": fam.reversible,
            "loads": [m.rho for m in law.marginals], "environment_support": len(law.env.support),
            "levels": levels}


def cmd_traffic(args, model: NetworkModel) -> dict:
    fam = family(model)
    return {"route": "linear solve of (Id - R_int)^T eta = lambda r_0", "eta": fam.traffic.eta,
            "xi": fam.traffic.xi,
            "xi_levels": {subsets.literal(D): fam.xi(D) for D in subsets.all_masks(model.J)}}


def cmd_stationary(args, model: NetworkModel) -> dict:
    law = stationary_law(model)
    rng = np.random.default_rng(args.seed)
    samples = []
    top = [max(m.K, 3) + 5 for m in law.marginals]
    for _ in range(args.states):
        D = int(rng.choice(law.env.support))
        n = [int(rng.integers(0, t + 1)) for t in top]
        samples.append({"D": subsets.literal(D), "n": n, "pi": law.joint(D, n),
                        "balance_residual": balance_residual(model, D, n)})
    worst = max((s["balance_residual"] for s in samples), default=0.0)
    return {"route": "product form with closed-form geometric tails",
            "normalizers": [m.normalizer for m in law.marginals],
            "pi_hat": {subsets.literal(int(D)): law.pi_hat[D] for D in law.env.support},
            "samples": samples, "max_balance_residual": worst,
            "balance_ok": worst < args.tol}


def cmd_correlate(args, model: NetworkModel) -> dict:
    f, g = _obs(args.f), _obs(args.g or args.f)
    res = corr_all(model, f, g)
    scale = max(1.0, max(abs(v) for v in res["routes"].values()))
    return {"f": f.text, "g": g.text, **res, "relative_delta": res["max_delta"] / scale,
            "agree": res["max_delta"] / scale < args.tol}


def cmd_compare(args, a: NetworkModel, b: NetworkModel) -> dict:
    f, g = _obs(args.f), _obs(args.g or args.f)
    direct = corr_direct(a, f, g) - corr_direct(b, f, g)
    out = {"kind": args.kind, "f": f.text, "g": g.text, "direct_difference": direct}
    if args.kind == "routing":
        tr = diff_routing(a, b, f, g, "trace")
        cp = diff_routing(a, b, f, g, "compact")
        out["routes"] = {"trace": tr, "compact": cp, "direct": direct}
        out["ordering"] = order_all_levels(a, b)
    else:
        val = diff_env(a, b, f, g)
        out["routes"] = {"environment": val, "direct": direct}
        ca, cb = env_chain(a.environment), env_chain(b.environment)
        keep = ca.support
        Qa, Qb = ca.rates[np.ix_(keep, keep)], cb.rates[np.ix_(keep, keep)]
        pi = ca.pi_hat[keep]
        out["ordering"] = {"peskun_B_le_A": peskun_generator(Qa, Qb, pi).to_json(),
                           "pd_A_le_B": pd_generator(Qb, Qa, pi).to_json()}
    vals = list(out["routes"].values())
    out["max_delta"] = max(vals) - min(vals)
    out["agree"] = out["max_delta"] / max(1.0, max(abs(v) for v in vals)) < args.tol
    return out


def cmd_gap(args, model: NetworkModel) -> dict:
    cands = []
    if args.candidates:
        with open(args.candidates) as fh:
            cands = [_obs(line.strip()) for line in fh if line.strip() and not line.startswith("#")]
    rep = gap_report(model, _floats(args.trunc), cands, workers=args.workers)
    g = rep["gap"]
    rep["successive_change"] = [abs(g[k + 1] - g[k]) / abs(g[k]) for k in range(len(g) - 1)]
    return rep


def cmd_avar(args, model: NetworkModel) -> dict:
    f = _obs(args.f)
    if args.against:
        res = avar_compare(model, _load(args.against), f, args.eps, args.trunc)
        return {"route": "Poisson bordered solve, cross-checked by the geometric series", "f": f.text, **res}
    chain = build_truncated(model, args.trunc)
    k = uniformize(chain, args.eps)
    res = avar_exact(k, chain.evaluate(f))
    return {"route": "Poisson bordered solve, cross-checked by the geometric series", "f": f.text,
            "N": args.trunc, **res, "agree": res["relative_delta"] < args.tol}


def cmd_simulate(args, model: NetworkModel) -> dict:
    traj = simulate(model, args.time, args.seed)
    if args.export:
        traj.export(args.export)
    est = {}
    for text in args.f or []:
        f = _obs(text)
        m, se = estimate(traj, f, args.batches, args.warmup)
        v, vse = estimate_avar(traj, f, args.batches, args.warmup)
        est[f.text] = {"mean": m, "se": se, "avar": v, "avar_se": vse}
    return {"route": "exact-event simulation, batch means", "T": args.time, "seed": args.seed,
            "events": traj.events, "counts": traj.counts, "batches": args.batches, "warmup": args.warmup,
            "estimates": est, "export": args.export}


# --- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="qnetcorr", description="Correlations, gaps and variances of unreliable Jackson networks.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help_, two=False):
        s = sub.add_parser(name, help=help_)
        if two:
            s.add_argument("model_a")
            s.add_argument("model_b")
        else:
            s.add_argument("model")
        return s

    add("validate", "check model, rerouting, ergodicity and environment")
    add("traffic", "throughputs and routing equilibria per level")
    s = add("stationary", "normalisers, environment law and balance residuals")
    s.add_argument("--states", type=int, default=20)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--tol", type=float, default=1e-10)
    s = add("correlate", "one-step correlation by every route")
    s.add_argument("-f", required=True)
    s.add_argument("-g")
    s.add_argument("--tol", type=float, default=1e-9)
    s = add("compare", "difference theorems for a routing or environment pair", two=True)
    s.add_argument("--kind", choices=("routing", "environment"), required=True)
    s.add_argument("-f", required=True)
    s.add_argument("-g")
    s.add_argument("--tol", type=float, default=1e-9)
    s = add("gap", "truncated spectral gaps and Rayleigh bounds")
    s.add_argument("--trunc", default="5,10,15")
    s.add_argument("--candidates")
    s.add_argument("--workers", type=int, default=1)
    s = add("avar", "exact asymptotic variance of the uniformised chain")
    s.add_argument("-f", required=True)
    s.add_argument("--eps", type=float)
    s.add_argument("--trunc", type=int, default=10)
    s.add_argument("--against", help="second model for a comparison")
    s.add_argument("--tol", type=float, default=1e-9)
    s = add("simulate", "event simulation with batch-means estimates")
    s.add_argument("--time", type=float, default=1e4)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("-f", action="append")
    s.add_argument("--export")
    s.add_argument("--batches", type=int, default=50)
    s.add_argument("--warmup", type=float, default=0.1)
    return p


COMMANDS = {"validate": cmd_validate, "traffic": cmd_traffic, "stationary": cmd_stationary,
            "correlate": cmd_correlate, "gap": cmd_gap, "avar": cmd_avar, "simulate": cmd_simulate}


def run(argv: Sequence[str]) -> tuple[int, dict | None, dict | None]:
    """Returns (exit code, report, error object)."""
    t0 = time.perf_counter()
    try:
        args = build_parser().parse_args(list(argv))
        if args.command == "compare":
            a, b = _load(args.model_a), _load(args.model_b)
            body = cmd_compare(args, a, b)
            fp = {"A": a.fingerprint(), "B": b.fingerprint()}
        else:
            model = _load(args.model)
            body = COMMANDS[args.command](args, model)
            fp = model.fingerprint()
    except UsageError as exc:
        return 2, None, {"error": "usage", "message": str(exc)}
    except (QNetError, ValueError) as exc:
        return 1, None, {"error": type(exc).__name__, "message": str(exc)}
    opts = {k: v for k, v in vars(args).items() if k not in ("command",)}
    tols = {k: v for k, v in opts.items() if k == "tol"}
    report = {"schema": SCHEMA, "command": {"name": args.command, "options": opts}, "fingerprint": fp,
              "tolerances": tols, "result": _jsonable(body),
              "timings": {"wall_seconds": time.perf_counter() - t0}}
    return 0, report, None


def main(argv: Sequence[str] | None = None) -> int:
    code, report, err = run(sys.argv[1:] if argv is None else argv)
    if err is not None:
        print(json.dumps(err), file=sys.stderr)
    else:
        print(json.dumps(report, indent=2, sort_keys=True))
    return code


if __name__ == "__main__":
    sys.exit(main())
