"""Command-line front end.

Subcommands: price, ladder, deltas, convergence, compare, validate.  All
read a strict JSON config (unknown fields are rejected, so a misspelled
parameter fails loudly instead of silently mispricing) and write JSON or CSV
with full double precision; --pretty switches to a rounded, human-readable
table.  Exit codes: 0 success, 1 validation failure, 2 numerical failure.
"""

import argparse
import json
import math
import sys
import time

import numpy as np

from . import laplace, oracle, pricing, volterra
from .contracts import (
    BarrierContract,
    Call,
    ConstantBarrier,
    DoubleNoTouch,
    ExponentialBarrier,
    Put,
    SmoothBump,
    validate,
)
from .errors import ConfigError, NumericalError, UnsupportedConfiguration, ValidationError
from .european import EuropeanValuator
from .models import CEV, GBM
from .oracle import McConfig

SCHEMA_VERSION = 1


# --------------------------------------------------------------------------
# Config parsing and canonical serialization
# --------------------------------------------------------------------------

def _expect_keys(obj, where, required, optional=()):
    if not isinstance(obj, dict):
        raise ConfigError(f"{where} must be an object")
    keys = set(obj)
    missing = set(required) - keys
    if missing:
        raise ConfigError(f"{where} is missing required field(s): {sorted(missing)}")
    unknown = keys - set(required) - set(optional)
    if unknown:
        raise ConfigError(f"{where} has unknown field(s): {sorted(unknown)}")


def _number(obj, where, key, default=None):
    if key not in obj:
        if default is None:
            raise ConfigError(f"{where}.{key} is required")
        return default
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where}.{key} must be a number")
    return float(v)


class RunConfig:
    """Parsed run configuration; see parse_config for the schema."""

    def __init__(self, model, contract, n, spots, method, mc, closed_form):
        self.model = model
        self.contract = contract
        self.n = n
        self.spots = spots
        self.method = method
        self.mc = mc
        self.closed_form = closed_form


def _parse_barrier(obj, where):
    if obj is None:
        return None
    _expect_keys(obj, where, required=("type", "level"), optional=("growth",))
    kind = obj["type"]
    level = _number(obj, where, "level")
    if kind == "constant":
        if "growth" in obj and obj["growth"] != 0:
            raise ConfigError(f"{where}: constant barrier cannot have growth")
        return ConstantBarrier(level=level)
    if kind == "exponential":
        return ExponentialBarrier(level0=level, growth=_number(obj, where, "growth", 0.0))
    raise ConfigError(f"{where}.type must be 'constant' or 'exponential', got {kind!r}")


def _parse_payoff(obj):
    _expect_keys(
        obj, "contract.payoff", required=("type",), optional=("strike", "left", "right", "height")
    )
    kind = obj["type"]
    if kind == "call":
        return Call(strike=_number(obj, "contract.payoff", "strike"))
    if kind == "put":
        return Put(strike=_number(obj, "contract.payoff", "strike"))
    if kind == "double_no_touch":
        return DoubleNoTouch()
    if kind == "smooth_bump":
        return SmoothBump(
            left=_number(obj, "contract.payoff", "left"),
            right=_number(obj, "contract.payoff", "right"),
            height=_number(obj, "contract.payoff", "height", 1.0),
        )
    raise ConfigError(f"unknown payoff type {kind!r}")


def parse_config(text):
    """Parse and validate a config JSON string into a RunConfig."""
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from exc
    _expect_keys(obj, "config", required=("schema_version", "model", "contract", "run"))
    if obj["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {obj['schema_version']!r}")

    m = obj["model"]
    _expect_keys(
        m, "model", required=("type", "rate", "dividend"), optional=("sigma", "sigma0", "rho")
    )
    rate = _number(m, "model", "rate")
    dividend = _number(m, "model", "dividend")
    mu = rate - dividend
    if m["type"] == "gbm":
        model = GBM(sigma=_number(m, "model", "sigma"), mu=mu)
    elif m["type"] == "cev":
        model = CEV(sigma0=_number(m, "model", "sigma0"), rho=_number(m, "model", "rho"), mu=mu)
    else:
        raise ConfigError(f"model.type must be 'gbm' or 'cev', got {m['type']!r}")

    c = obj["contract"]
    _expect_keys(c, "contract", required=("payoff", "maturity"), optional=("lower", "upper"))
    try:
        contract = BarrierContract(
            payoff=_parse_payoff(c["payoff"]),
            maturity=_number(c, "contract", "maturity"),
            lower=_parse_barrier(c.get("lower"), "contract.lower"),
            upper=_parse_barrier(c.get("upper"), "contract.upper"),
            rate=rate,
            dividend=dividend,
        )
    except ValidationError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    r = obj["run"]
    _expect_keys(r, "run", required=("n", "spots"), optional=("method", "oracles"))
    n = r["n"]
    if not isinstance(n, int) or isinstance(n, bool) or n < 2:
        raise ConfigError("run.n must be an integer >= 2")
    spots = r["spots"]
    if not isinstance(spots, list) or not spots or not all(
        isinstance(s, (int, float)) and not isinstance(s, bool) for s in spots
    ):
        raise ConfigError("run.spots must be a non-empty list of numbers")
    method = r.get("method", "auto")
    if method not in ("auto", "volterra", "laplace"):
        raise ConfigError(f"run.method must be auto|volterra|laplace, got {method!r}")
    mc = None
    closed_form = False
    if "oracles" in r:
        o = r["oracles"]
        _expect_keys(o, "run.oracles", required=(), optional=("mc", "closed_form"))
        if "mc" in o:
            _expect_keys(
                o["mc"], "run.oracles.mc", required=("paths", "steps", "seed"), optional=("bridge",)
            )
            mc = McConfig(
                paths=int(o["mc"]["paths"]),
                steps=int(o["mc"]["steps"]),
                seed=int(o["mc"]["seed"]),
                bridge_correction=bool(o["mc"].get("bridge", True)),
            )
        closed_form = bool(o.get("closed_form", False))
    return RunConfig(model, contract, n, [float(s) for s in spots], method, mc, closed_form)


def canonical_config_dict(cfg):
    """Plain dict with a fixed field order for byte-stable serialization."""
    model = {"type": "gbm" if isinstance(cfg.model, GBM) else "cev"}
    if isinstance(cfg.model, GBM):
        model["sigma"] = cfg.model.sigma
    else:
        model["sigma0"] = cfg.model.sigma0
        model["rho"] = cfg.model.rho
    model["rate"] = cfg.contract.rate
    model["dividend"] = cfg.contract.dividend

    contract = {}
    for name in ("lower", "upper"):
        b = getattr(cfg.contract, name)
        if b is None:
            continue
        if isinstance(b, ConstantBarrier):
            contract[name] = {"type": "constant", "level": b.level}
        else:
            contract[name] = {"type": "exponential", "level": b.level0, "growth": b.growth}
    p = cfg.contract.payoff
    if isinstance(p, Call):
        contract["payoff"] = {"type": "call", "strike": p.strike}
    elif isinstance(p, Put):
        contract["payoff"] = {"type": "put", "strike": p.strike}
    elif isinstance(p, DoubleNoTouch):
        contract["payoff"] = {"type": "double_no_touch"}
    elif isinstance(p, SmoothBump):
        contract["payoff"] = {
            "type": "smooth_bump", "left": p.left, "right": p.right, "height": p.height,
        }
    else:
        raise ConfigError(f"payoff {type(p).__name__} has no config representation")
    contract["maturity"] = cfg.contract.maturity

    run = {"n": cfg.n, "spots": list(cfg.spots), "method": cfg.method}
    oracles = {}
    if cfg.mc is not None:
        oracles["mc"] = {
            "paths": cfg.mc.paths,
            "steps": cfg.mc.steps,
            "seed": cfg.mc.seed,
            "bridge": cfg.mc.bridge_correction,
        }
    if cfg.closed_form:
        oracles["closed_form"] = True
    if oracles:
        run["oracles"] = oracles
    return {
        "schema_version": SCHEMA_VERSION,
        "model": model,
        "contract": contract,
        "run": run,
    }


def serialize_config(cfg):
    return json.dumps(canonical_config_dict(cfg), indent=2) + "\n"


# --------------------------------------------------------------------------
# Output helpers
# --------------------------------------------------------------------------

def _fmt(x):
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return format(x, ".17e")
    return str(x)


def _write_csv(columns, rows, out):
    out.write(",".join(columns) + "\n")
    for row in rows:
        out.write(",".join(_fmt(v) for v in row) + "\n")


def _write_pretty(columns, rows, out):
    def short(v):
        if isinstance(v, float):
            return format(v, ".8g")
        return str(v)

    table = [[short(v) for v in row] for row in rows]
    widths = [max(len(c), *(len(r[i]) for r in table)) if table else len(c) for i, c in enumerate(columns)]
    out.write("  ".join(c.ljust(w) for c, w in zip(columns, widths)).rstrip() + "\n")
    for r in table:
        out.write("  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip() + "\n")


def _emit(args, columns, rows, payload, out):
    if args.pretty:
        _write_pretty(columns, rows, out)
    elif args.format == "csv":
        _write_csv(columns, rows, out)
    else:
        json.dump(payload, out, indent=2)
        out.write("\n")


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------

def _solve_profile(cfg):
    grid = volterra.TimeGrid(n=cfg.n, maturity=cfg.contract.maturity)
    method = cfg.method
    if method == "auto":
        method = "laplace" if laplace.supports(cfg.model, cfg.contract) else "volterra"
    if method == "laplace":
        if not laplace.supports(cfg.model, cfg.contract):
            raise UnsupportedConfiguration(
                "laplace method requires a supported constant-barrier GBM configuration"
            )
        profile = laplace.solve_constant(cfg.model, cfg.contract, grid)
    else:
        profile = volterra.solve(cfg.model, cfg.contract, grid)
    return grid, profile, method


def cmd_price(cfg, args, out):
    validate(cfg.contract)
    _, profile, method = _solve_profile(cfg)
    v = EuropeanValuator(cfg.model, cfg.contract)
    columns = [
        "spot", "european", "premium_lower", "premium_upper", "price",
        "undiscounted_price", "discount_factor", "near_expiry_unreliable",
    ]
    rows, results = [], []
    for s in cfg.spots:
        res = pricing.price(cfg.model, cfg.contract, s, profile, v)
        rows.append([
            s, res.european, res.premium_lower, res.premium_upper, res.price,
            res.undiscounted_price, res.discount_factor,
            res.flags["near_expiry_unreliable"],
        ])
        results.append({"spot": s, **res.as_dict()})
    _emit(args, columns, rows, {"method": method, "results": results}, out)
    return 0


def cmd_ladder(cfg, args, out):
    validate(cfg.contract)
    _, profile, method = _solve_profile(cfg)
    lad = pricing.ladder(cfg.model, cfg.contract, cfg.spots, profile)
    columns = ["spot", "price", "delta", "gamma"]
    rows = [
        [float(s), float(p), float(d), float(g)]
        for s, p, d, g in zip(lad.spots, lad.prices, lad.deltas, lad.gammas)
    ]
    payload = {
        "method": method,
        "ladder": [dict(zip(columns, row)) for row in rows],
    }
    _emit(args, columns, rows, payload, out)
    return 0


def cmd_deltas(cfg, args, out):
    validate(cfg.contract)
    _, profile, method = _solve_profile(cfg)
    ts = profile.grid.nodes
    columns = ["t", "delta_plus", "delta_minus", "reliable"]
    has_plus = profile.has_side("upper")
    has_minus = profile.has_side("lower")
    tot_plus = profile.totals("upper") if has_plus else None
    tot_minus = profile.totals("lower") if has_minus else None
    rows = []
    for i, t in enumerate(ts):
        last = i == len(ts) - 1
        dp = float(profile.delta_plus[i]) if last and has_plus else (
            float(tot_plus[i]) if has_plus else 0.0
        )
        dm = float(profile.delta_minus[i]) if last and has_minus else (
            float(tot_minus[i]) if has_minus else 0.0
        )
        reliable = not (
            (profile.near_expiry_unreliable_plus or profile.near_expiry_unreliable_minus)
            and i >= len(ts) - 3
        )
        rows.append([float(t), dp, dm, reliable])
    payload = {
        "method": method,
        "singular_plus": profile.singular_plus,
        "singular_minus": profile.singular_minus,
        "profile": [dict(zip(columns, row)) for row in rows],
    }
    _emit(args, columns, rows, payload, out)
    return 0


def cmd_convergence(cfg, args, out):
    validate(cfg.contract)
    n_list = sorted(set(args.n_list))
    if len(n_list) < 2:
        raise ConfigError("convergence requires at least two grid sizes")
    spot = cfg.spots[0]
    prices, profiles = {}, {}
    for n in n_list:
        sub = RunConfig(cfg.model, cfg.contract, n, cfg.spots, cfg.method, None, False)
        _, profile, _ = _solve_profile(sub)
        profiles[n] = profile
        prices[n] = pricing.price(cfg.model, cfg.contract, spot, profile).price
    finest = n_list[-1]
    ref_profile = profiles[finest]
    errors = {n: abs(prices[n] - prices[finest]) for n in n_list[:-1]}
    columns = ["n", "price", "price_error", "profile_maxdiff", "order"]
    rows = []
    prev_err = None
    scale = max(abs(prices[finest]), 1e-300)
    for n in n_list:
        if n == finest:
            rows.append([n, prices[n], 0.0, 0.0, "ref"])
            continue
        err = errors[n]
        ts = profiles[n].grid.nodes[:-1]
        maxdiff = 0.0
        for side in ("upper", "lower"):
            if not profiles[n].has_side(side):
                continue
            a = np.array([profiles[n].delta_at(t, side) for t in ts])
            b = np.array([ref_profile.delta_at(t, side) for t in ts])
            maxdiff = max(maxdiff, float(np.max(np.abs(a - b))))
        if prev_err is None or err <= 1e-12 * scale or prev_err <= 1e-12 * scale:
            order = "n/a"
        else:
            order = format(math.log2(prev_err / err), ".3f")
        rows.append([n, prices[n], err, maxdiff, order])
        prev_err = err
    payload = {"convergence": [dict(zip(columns, row)) for row in rows]}
    _emit(args, columns, rows, payload, out)
    return 0


def cmd_compare(cfg, args, out):
    validate(cfg.contract)
    t0 = time.perf_counter()
    _, profile, method = _solve_profile(cfg)
    spot = cfg.spots[0]
    engine = pricing.price(cfg.model, cfg.contract, spot, profile).price
    rows = [["engine", engine, 0.0, 0.0, "", True]]
    columns = ["method", "value", "abs_diff", "rel_or_se_diff", "tolerance", "pass"]
    if cfg.closed_form:
        if len(cfg.contract.sides) == 1:
            ref = oracle.closed_form_gbm_single(cfg.model, cfg.contract, spot)
            tol = 5e-3
        else:
            ref, _ = oracle.closed_form_gbm_double(cfg.model, cfg.contract, spot)
            tol = 1e-2
        rel = abs(engine - ref) / max(abs(ref), 1e-300)
        rows.append(["closed_form", ref, abs(engine - ref), rel, f"rel<{tol:g}", rel < tol])
    if cfg.mc is not None:
        est, se = oracle.mc_price(cfg.model, cfg.contract, spot, cfg.mc)
        nse = abs(engine - est) / max(se, 1e-300)
        rows.append(["mc", est, abs(engine - est), nse, "<3 SE", nse < 3.0])
    elapsed = time.perf_counter() - t0
    payload = {
        "method": method,
        "elapsed_seconds": elapsed,
        "comparison": [dict(zip(columns, row)) for row in rows],
    }
    _emit(args, columns, rows, payload, out)
    return 0


def cmd_validate(cfg, args, out):
    report = validate(cfg.contract)
    columns = ["classification", "warnings"]
    rows = [[report.regime.value, "; ".join(report.warnings)]]
    payload = {"classification": report.regime.value, "warnings": report.warnings}
    _emit(args, columns, rows, payload, out)
    return 0


# --------------------------------------------------------------------------
# Entry point
# --------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _build_parser():
    parser = _Parser(prog="barrierdelta", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in _COMMANDS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="path to the JSON run configuration")
        p.add_argument("--out", default=None, help="output path (default stdout)")
        p.add_argument("--format", choices=("json", "csv"), default="json")
        p.add_argument("--n", type=int, default=None, help="override run.n")
        p.add_argument("--method", choices=("auto", "volterra", "laplace"), default=None)
        p.add_argument("--seed", type=int, default=None, help="override the MC seed")
        p.add_argument("--pretty", action="store_true", help="human-readable rounding")
        if name == "convergence":
            p.add_argument(
                "--n-list",
                type=lambda s: [int(v) for v in s.split(",")],
                default=[32, 64, 128, 256],
                help="comma-separated ascending grid sizes",
            )
        p.set_defaults(fn=fn)
    return parser


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        with open(args.config, "r", encoding="utf-8") as fh:
            cfg = parse_config(fh.read())
        if args.n is not None:
            cfg.n = args.n
        if args.method is not None:
            cfg.method = args.method
        if args.seed is not None and cfg.mc is not None:
            cfg.mc = McConfig(
                paths=cfg.mc.paths,
                steps=cfg.mc.steps,
                seed=args.seed,
                bridge_correction=cfg.mc.bridge_correction,
            )
        if args.out is None:
            return args.fn(cfg, args, sys.stdout)
        with open(args.out, "w", encoding="utf-8") as out:
            return args.fn(cfg, args, out)
    except ValidationError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


_COMMANDS = {
    "price": cmd_price,
    "ladder": cmd_ladder,
    "deltas": cmd_deltas,
    "convergence": cmd_convergence,
    "compare": cmd_compare,
    "validate": cmd_validate,
}


if __name__ == "__main__":
    sys.exit(main())
