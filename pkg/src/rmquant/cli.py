"""Command-line driver: quantize, run the recursion, price, and report.

Commands
--------
vq           quantize a single distribution (normal or ncx2)
rmq          run the recursive quantization and dump the grids
price        price european / bermudan / barrier claims with references
convergence  first-moment weak-order study over a list of step counts
dist-error   implied-vs-reference terminal cdf error profile

Every command is deterministic given its flags; commands that need Monte
Carlo references require an explicit ``--seed``.  A ``--config`` file of
``key=value`` lines supplies defaults that explicit flags override.
Exit codes: 0 success, 1 numerical failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from contextlib import nullcontext
from typing import Dict, List, Optional

import numpy as np

from .affine_schemes import SCHEME_BUILDERS
from .distributions import Ncx2Params, ncx2_1_funcs, std_normal_funcs
from .oracles import (FdConfig, McConfig, black_scholes, cn_bermudan,
                      empirical_cdf, simulate_terminal)
from .pricing import (BarrierSpec, VanillaPayoff, barrier_up_out_price,
                      bermudan_price, european_price)
from .rmq_engine import RmqError, Schedule, implied_marginal_cdf, rmq_run
from .sde_models import (CevParams, GbmParams, cev_model, gbm_exact_marginal,
                         gbm_model)
from .vq1d import Quantizer, distortion_gradient, initial_guess, newton_quantize

try:
    from threadpoolctl import threadpool_limits
except ImportError:  # pragma: no cover - always present in the test env
    threadpool_limits = None

EXIT_OK = 0
EXIT_NUMERICAL = 1
EXIT_USAGE = 2

PRICES_SCHEMA = "rmquant.prices.v1"
VQ_SCHEMA = "rmquant.vq.v1"
CONVERGENCE_SCHEMA = "rmquant.convergence.v1"
DIST_ERROR_SCHEMA = "rmquant.dist-error.v1"

ALL_SCHEMES = tuple(SCHEME_BUILDERS)


def _parse_range(text: str) -> np.ndarray:
    """``start:stop:count`` inclusive linear grid."""
    parts = text.split(":")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(
            f"expected start:stop:count, got {text!r}")
    try:
        lo, hi, n = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    if n < 1:
        raise argparse.ArgumentTypeError("count must be >= 1")
    return np.linspace(lo, hi, n)


def _parse_int_list(text: str) -> List[int]:
    try:
        return [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _parse_schemes(text: str) -> List[str]:
    if text == "all":
        return list(ALL_SCHEMES)
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        if tok not in SCHEME_BUILDERS:
            raise argparse.ArgumentTypeError(f"unknown scheme {tok!r}")
        out.append(tok)
    if not out:
        raise argparse.ArgumentTypeError("no schemes given")
    return out


def _model_args(sp):
    sp.add_argument("--model", choices=("gbm", "cev"), default="gbm")
    sp.add_argument("--s0", type=float, default=100.0)
    sp.add_argument("--r", type=float, default=0.05)
    sp.add_argument("--sigma", type=float, default=0.3,
                    help="GBM volatility")
    sp.add_argument("--alpha", type=float, default=0.7,
                    help="CEV elasticity")
    sp.add_argument("--sigma-ln", type=float, default=0.3, dest="sigma_ln",
                    help="CEV instantaneous lognormal volatility")


def _run_args(sp, default_n=200):
    sp.add_argument("--T", type=float, default=1.0)
    sp.add_argument("--K", type=int, default=12)
    sp.add_argument("--N", type=int, default=default_n)
    sp.add_argument("--iters-vq", type=int, default=50, dest="iters_vq")
    sp.add_argument("--iters-rmq", type=int, default=5, dest="iters_rmq")
    sp.add_argument("--boundary", choices=("free", "absorbing", "reflecting"),
                    default="free")


def _common_args(sp):
    sp.add_argument("--config", help="key=value defaults file")
    sp.add_argument("--threads", type=int, default=None,
                    help="cap BLAS/OpenMP worker threads")
    sp.add_argument("--out", help="output path (default: stdout)")
    sp.add_argument("--format", choices=("csv", "json"), default="csv")
    sp.add_argument("--seed", type=int, default=None,
                    help="seed for Monte Carlo references")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rmquant",
        description="Recursive marginal quantization of scalar SDEs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    vq = sub.add_parser("vq", help="quantize a single distribution")
    vq.add_argument("--dist", choices=("normal", "ncx2"), required=True)
    vq.add_argument("--lambda", type=float, default=None, dest="lam",
                    help="ncx2 noncentrality")
    vq.add_argument("--n", type=int, default=50)
    vq.add_argument("--iters", type=int, default=20)
    _common_args(vq)
    vq.set_defaults(func=cmd_vq)

    rmq = sub.add_parser("rmq", help="run the recursive quantization")
    rmq.add_argument("--scheme", choices=ALL_SCHEMES, default="euler")
    _model_args(rmq)
    _run_args(rmq)
    _common_args(rmq)
    rmq.set_defaults(func=cmd_rmq)

    price = sub.add_parser("price", help="price claims on the grids")
    price.add_argument("instrument",
                       choices=("european", "bermudan", "barrier"))
    price.add_argument("--scheme", choices=ALL_SCHEMES, default="weak2")
    price.add_argument("--kind", choices=("put", "call"), default="put")
    price.add_argument("--strike", type=float, default=None,
                       help="absolute strike (default: at the money)")
    price.add_argument("--strikes", type=_parse_range, default=None,
                       help="strike grid as multiples of s0 (start:stop:count)")
    price.add_argument("--levels", type=_parse_range, default=None,
                       help="barrier levels as multiples of the strike")
    price.add_argument("--mc-paths", type=int, default=1_000_000,
                       dest="mc_paths")
    price.add_argument("--mc-steps", type=int, default=1200, dest="mc_steps")
    price.add_argument("--fd-time-steps", type=int, default=600,
                       dest="fd_time_steps")
    price.add_argument("--fd-space-steps", type=int, default=800,
                       dest="fd_space_steps")
    price.add_argument("--fd-smax-mult", type=float, default=4.0,
                       dest="fd_smax_mult")
    _model_args(price)
    _run_args(price)
    _common_args(price)
    price.set_defaults(func=cmd_price)

    conv = sub.add_parser("convergence", help="weak-order slope study")
    conv.add_argument("--schemes", type=_parse_schemes, default=list(ALL_SCHEMES))
    conv.add_argument("--K-list", type=_parse_int_list,
                      default=[2, 4, 8, 16, 32, 64], dest="k_list")
    _model_args(conv)
    _run_args(conv, default_n=1000)
    _common_args(conv)
    conv.set_defaults(func=cmd_convergence)

    de = sub.add_parser("dist-error", help="terminal cdf error profile")
    de.add_argument("--schemes", type=_parse_schemes, default=list(ALL_SCHEMES))
    de.add_argument("--grid-points", type=int, default=1000,
                    dest="grid_points")
    de.add_argument("--mc-paths", type=int, default=1_000_000, dest="mc_paths")
    de.add_argument("--mc-steps", type=int, default=1200, dest="mc_steps")
    _model_args(de)
    _run_args(de)
    _common_args(de)
    de.set_defaults(func=cmd_dist_error)

    return parser


def _read_config(path: str) -> Dict[str, str]:
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"config line without '=': {line!r}")
            key, val = line.split("=", 1)
            out[key.strip()] = val.strip()
    return out


def _apply_config(ns, parser_actions, argv: List[str]):
    """Overlay config-file values under explicitly passed flags."""
    cfg = _read_config(ns.config)
    explicit = set()
    for tok in argv:
        if tok.startswith("--"):
            explicit.add(tok.split("=", 1)[0])
    by_dest = {}
    for act in parser_actions:
        if act.option_strings:
            by_dest[act.dest] = act
    for key, raw in cfg.items():
        dest = key.replace("-", "_")
        act = by_dest.get(dest)
        if act is None:
            raise ValueError(f"unknown config key {key!r}")
        if any(opt in explicit for opt in act.option_strings):
            continue
        value = act.type(raw) if act.type is not None else raw
        setattr(ns, dest, value)


def _build_model(ns):
    if ns.model == "gbm":
        params = GbmParams(s0=ns.s0, r=ns.r, sigma=ns.sigma)
        return gbm_model(params), params
    params = CevParams(s0=ns.s0, r=ns.r, alpha=ns.alpha, sigma_ln=ns.sigma_ln)
    return cev_model(params), params


def _schedule(ns, n_override=None) -> Schedule:
    return Schedule(T=ns.T, K=ns.K, n_per_step=n_override or ns.N,
                    n_max_vq=ns.iters_vq, n_max_rmq=ns.iters_rmq)


def _open_out(ns):
    if ns.out:
        return open(ns.out, "w")
    return nullcontext(sys.stdout)


def _fmt(v) -> str:
    if v is None:
        return ""
    return f"{v:.17g}"


def _write_table(ns, schema: str, columns: List[str], rows: List[dict]):
    with _open_out(ns) as fh:
        if ns.format == "json":
            json.dump({"schema": schema, "rows": rows}, fh)
            fh.write("\n")
        else:
            fh.write(f"# schema: {schema}\n")
            fh.write(",".join(columns) + "\n")
            for row in rows:
                fh.write(",".join(
                    _fmt(row.get(c)) if isinstance(row.get(c), (int, float))
                    or row.get(c) is None else str(row.get(c))
                    for c in columns) + "\n")


# ----------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------

def cmd_vq(ns) -> int:
    if ns.dist == "ncx2":
        if ns.lam is None:
            print("vq: --dist ncx2 requires --lambda", file=sys.stderr)
            return EXIT_USAGE
        dist = ncx2_1_funcs(Ncx2Params(lam=ns.lam))
        guess = initial_guess("ncx2", ns.n, ns.lam)
    else:
        dist = std_normal_funcs()
        guess = initial_guess("normal", ns.n)
    quant = newton_quantize(dist, guess, ns.iters)
    gnorm = float(np.max(np.abs(distortion_gradient(dist, quant.codewords))))

    rows = [{"index": i, "codeword": float(c), "probability": float(p)}
            for i, (c, p) in enumerate(zip(quant.codewords,
                                           quant.probabilities))]
    _write_table(ns, VQ_SCHEMA, ["index", "codeword", "probability"], rows)
    if gnorm >= 1e-8:
        print(f"vq: did not converge (gradient sup-norm {gnorm:.3g} >= 1e-8 "
              f"after {ns.iters} iterations)", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_rmq(ns) -> int:
    model, params = _build_model(ns)
    seq = rmq_run(model, ns.scheme, params.s0, _schedule(ns), ns.boundary)
    with _open_out(ns) as fh:
        if ns.format == "json":
            seq.dump_json(fh)
        else:
            seq.dump_csv(fh)
    return EXIT_OK


def _monitoring_stride(mc_steps: int, K: int) -> int:
    if mc_steps % K:
        raise ValueError("--mc-steps must be divisible by K for monitored "
                         "barrier references")
    return mc_steps // K


def cmd_price(ns) -> int:
    model, params = _build_model(ns)
    seq = rmq_run(model, ns.scheme, params.s0, _schedule(ns), ns.boundary)
    kind = ns.kind
    r = ns.r
    atm = ns.strike if ns.strike is not None else params.s0
    mc_boundary = ns.boundary if ns.model == "cev" else "free"

    rows = []
    if ns.instrument == "european":
        strikes = (ns.strikes * params.s0 if ns.strikes is not None
                   else np.array([atm]))
        term = None
        if ns.model != "gbm":
            if ns.seed is None:
                print("price: CEV european references need --seed",
                      file=sys.stderr)
                return EXIT_USAGE
            cfg = McConfig(paths=ns.mc_paths, steps=ns.mc_steps, seed=ns.seed)
            term = simulate_terminal(model, params.s0, ns.T, cfg, mc_boundary)
        for strike in strikes:
            payoff = VanillaPayoff(kind=kind, strike=float(strike))
            price = european_price(seq, payoff, r)
            if ns.model == "gbm":
                ref = black_scholes(kind, params.s0, float(strike), r,
                                    params.sigma, ns.T)
                se = None
            else:
                vals = np.exp(-r * ns.T) * payoff.values(term)
                ref = float(np.mean(vals))
                se = float(np.std(vals, ddof=1) / np.sqrt(vals.size))
            rows.append({"scheme": ns.scheme, "instrument": "european",
                         "strike_or_level": float(strike), "price": price,
                         "reference": ref, "abs_error": abs(price - ref),
                         "std_error": se})
    elif ns.instrument == "bermudan":
        strikes = (ns.strikes * params.s0 if ns.strikes is not None
                   else np.array([atm]))
        dates = [k * ns.T / ns.K for k in range(1, ns.K)]
        fd_cfg = FdConfig(time_steps=ns.fd_time_steps,
                          space_steps=ns.fd_space_steps,
                          s_max_mult=ns.fd_smax_mult)
        for strike in strikes:
            payoff = VanillaPayoff(kind=kind, strike=float(strike))
            price = bermudan_price(seq, payoff, r)
            ref = cn_bermudan(model, params.s0, ns.T, r, payoff, dates, fd_cfg)
            rows.append({"scheme": ns.scheme, "instrument": "bermudan",
                         "strike_or_level": float(strike), "price": price,
                         "reference": ref, "abs_error": abs(price - ref),
                         "std_error": None})
    else:  # barrier
        if ns.seed is None:
            print("price: barrier references need --seed", file=sys.stderr)
            return EXIT_USAGE
        levels = (ns.levels if ns.levels is not None
                  else np.linspace(1.05, 1.5, 10)) * atm
        payoff = VanillaPayoff(kind=kind, strike=atm)
        stride = _monitoring_stride(ns.mc_steps, ns.K)
        cfg = McConfig(paths=ns.mc_paths, steps=ns.mc_steps, seed=ns.seed,
                       monitoring_stride=stride)
        term, smax = simulate_terminal(model, params.s0, ns.T, cfg,
                                       mc_boundary, want_running_max=True)
        base = np.exp(-r * ns.T) * payoff.values(term)
        for level in levels:
            price = barrier_up_out_price(seq, payoff,
                                         BarrierSpec(level=float(level)), r)
            vals = base * (smax < level)
            ref = float(np.mean(vals))
            se = float(np.std(vals, ddof=1) / np.sqrt(vals.size))
            rows.append({"scheme": ns.scheme, "instrument": "barrier",
                         "strike_or_level": float(level), "price": price,
                         "reference": ref, "abs_error": abs(price - ref),
                         "std_error": se})
    _write_table(ns, PRICES_SCHEMA,
                 ["scheme", "instrument", "strike_or_level", "price",
                  "reference", "abs_error", "std_error"], rows)
    return EXIT_OK


def cmd_convergence(ns) -> int:
    if len(ns.k_list) < 3:
        print("convergence: need at least 3 K values to regress a slope",
              file=sys.stderr)
        return EXIT_USAGE
    model, params = _build_model(ns)
    target = params.s0 * np.exp(params.r * ns.T)
    rows = []
    for scheme in ns.schemes:
        errs = []
        for K in ns.k_list:
            sched = Schedule(T=ns.T, K=K, n_per_step=ns.N,
                             n_max_vq=ns.iters_vq, n_max_rmq=ns.iters_rmq)
            seq = rmq_run(model, scheme, params.s0, sched, ns.boundary)
            err = abs(seq.terminal_mean() - target)
            errs.append(max(err, 1e-300))
            rows.append({"scheme": scheme, "kind": "point", "K": K,
                         "dt": ns.T / K, "abs_error": err, "beta": None})
        slope = np.polyfit(np.log2(np.array(ns.k_list, dtype=float) ** -1),
                           np.log2(errs), 1)[0]
        rows.append({"scheme": scheme, "kind": "slope", "K": None,
                     "dt": None, "abs_error": None, "beta": float(slope)})
    _write_table(ns, CONVERGENCE_SCHEMA,
                 ["scheme", "kind", "K", "dt", "abs_error", "beta"], rows)
    return EXIT_OK


def cmd_dist_error(ns) -> int:
    model, params = _build_model(ns)
    if ns.model == "gbm":
        ref = gbm_exact_marginal(params, ns.T)
        mu = (params.r - 0.5 * params.sigma ** 2) * ns.T
        sd = params.sigma * np.sqrt(ns.T)
        from scipy.special import ndtri
        lo = params.s0 * np.exp(mu + sd * ndtri(1e-5))
        hi = params.s0 * np.exp(mu + sd * ndtri(1.0 - 1e-5))
    else:
        if ns.seed is None:
            print("dist-error: CEV references need --seed", file=sys.stderr)
            return EXIT_USAGE
        ref = empirical_cdf(model, params.s0, ns.T, ns.mc_paths, ns.seed,
                            steps=ns.mc_steps, boundary=ns.boundary)
        lo, hi = None, None  # set from the first scheme's terminal grid

    rows = []
    sups = []
    grid = None
    for scheme in ns.schemes:
        seq = rmq_run(model, scheme, params.s0, _schedule(ns), ns.boundary)
        if seq.n_steps > 1:
            # terminal law implied by the next-to-last quantizer
            prev, zero_mass = seq.live_quantizer(seq.n_steps - 1)
        else:
            prev = Quantizer(np.array([params.s0]), np.array([1.0]))
            zero_mass = 0.0
        updates = SCHEME_BUILDERS[scheme](model, prev.codewords, seq.dt)
        if grid is None:
            if lo is None:
                gk = seq.codewords[-1]
                lo, hi = 0.0, 1.25 * float(gk[-1])
            grid = np.linspace(lo, hi, ns.grid_points)
        implied = implied_marginal_cdf(grid, prev, updates, ns.boundary,
                                       zero_mass)
        err = implied - ref.cdf(grid)
        sup = float(np.max(np.abs(err)))
        sups.append((scheme, sup))
        for x, e in zip(grid, err):
            rows.append({"scheme": scheme, "kind": "point", "x": float(x),
                         "error": float(e), "sup_error": None})
    for scheme, sup in sups:
        rows.append({"scheme": scheme, "kind": "sup", "x": None,
                     "error": None, "sup_error": sup})
    _write_table(ns, DIST_ERROR_SCHEMA,
                 ["scheme", "kind", "x", "error", "sup_error"], rows)
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    ns = parser.parse_args(argv)
    if ns.config:
        try:
            for act in parser._subparsers._group_actions:
                sub = act.choices.get(ns.command)
                if sub is not None:
                    _apply_config(ns, sub._actions, argv)
                    break
        except (OSError, ValueError) as exc:
            print(f"rmquant: config error: {exc}", file=sys.stderr)
            return EXIT_USAGE
    if ns.threads is not None:
        try:
            import numba
            numba.set_num_threads(max(1, min(ns.threads,
                                             numba.config.NUMBA_NUM_THREADS)))
        except ImportError:
            pass
    limiter = (threadpool_limits(ns.threads)
               if ns.threads is not None and threadpool_limits is not None
               else nullcontext())
    try:
        with limiter:
            return ns.func(ns)
    except RmqError as exc:
        print(f"rmquant: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"rmquant: {exc}", file=sys.stderr)
        return EXIT_USAGE


def entry():  # console-script target
    sys.exit(main())


if __name__ == "__main__":
    entry()
