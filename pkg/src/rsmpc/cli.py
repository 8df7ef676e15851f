"""Command-line entry points: ``synth``, ``run``, ``sweep`` and ``check``.

Exit codes: 0 success, 1 a check failed, 2 infeasible scenario,
3 solver failure, 4 configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import (ConfigError, Infeasible, RSMPCError, SolverFailure,
                     TerminalSetEmpty)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_INFEASIBLE = 2
EXIT_SOLVER = 3
EXIT_CONFIG = 4


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="rsmpc",
        description="Robust stochastic tube MPC: offline synthesis, "
                    "closed-loop runs and experiment sweeps.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True,
                       help="JSON config file or shipped name "
                            "('illustrative', 'building')")
        p.add_argument("--no-cache", action="store_true",
                       help="ignore and do not write cached synthesis artifacts")
        p.add_argument("--jobs", type=int, default=1,
                       help="worker processes (default 1)")
        p.add_argument("--out", type=Path, default=None,
                       help="output directory (default from the config)")
        p.add_argument("--alpha", type=float, default=None,
                       help="uncertainty scaling (default from the config)")
        p.add_argument("--p", type=float, default=None,
                       help="probability level p_x (default from the config)")
        p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("synth", help="offline synthesis (cached)")
    common(p)
    p.add_argument("--kind", choices=["rsmpc", "smpc"], default="rsmpc")

    p = sub.add_parser("run", help="closed-loop run(s) for given seed(s)")
    common(p)
    p.add_argument("--kind", choices=["rsmpc", "smpc"], default="rsmpc")
    p.add_argument("--seed", type=int, nargs="+", default=None,
                   help="noise seed(s) (default: the config's first seed)")

    p = sub.add_parser("sweep", help="alpha x p grid table")
    common(p)
    p.add_argument("--traces", action="store_true",
                   help="also write one CSV per run")

    p = sub.add_parser("check", help="run the invariant suites")
    common(p)
    p.add_argument("--tuples", type=int, default=100,
                   help="random containment tuples")
    p.add_argument("--seeds", type=int, default=5,
                   help="closed-loop runs for the feasibility checks")
    return ap


def _out_dir(args, cfg) -> Path:
    return args.out if args.out is not None else cfg.output_dir


def cmd_synth(args, cfg) -> int:
    from .experiments import synthesize

    syn = synthesize(cfg, args.alpha, args.p, args.kind,
                     use_cache=not args.no_cache, n_jobs=args.jobs)
    hit = syn.info.get("cache_hit", False)
    print(f"{cfg.name}: {args.kind} synthesis for alpha={syn.info.get('alpha', args.alpha)}"
          f" p={syn.sys.p_x} ({'cache hit, no SDP solves' if hit else 'computed'})")
    print(f"method: {syn.bounds.method}; K = {np.array2string(syn.K, precision=4)}")
    for k, ld in enumerate(syn.bounds.logdets(), start=1):
        print(f"  k={k:3d}  log det Vbar_k = {ld: .6f}")
    print(f"terminal set: {syn.terminal.polytope.n_rows} rows, "
          f"{syn.terminal.iterations} iterations")
    return EXIT_OK


def cmd_run(args, cfg) -> int:
    from .experiments import (run_cell, summarize, trace_filename,
                              write_traces)

    seeds = args.seed if args.seed is not None else cfg.seeds[:1]
    alpha = cfg.alpha if args.alpha is None else args.alpha
    p = cfg.p_x if args.p is None else args.p
    syn, traces = run_cell(cfg, alpha, p, seeds, args.kind,
                           use_cache=not args.no_cache, n_jobs=args.jobs)
    out = _out_dir(args, cfg)
    write_traces(cfg, traces, args.kind, alpha, p, out)
    summ = summarize(traces)
    summ.update(config=cfg.name, config_hash=cfg.hash(), kind=args.kind,
                alpha=alpha, p=p, seeds=list(seeds),
                files=[trace_filename(cfg, args.kind, alpha, p, s) for s in seeds])
    status = "ok"
    code = EXIT_OK
    for t in traces:
        if t.halted:
            st = t.status[-1]
            if st == "Infeasible":
                status, code = "infeasible", max(code, EXIT_INFEASIBLE)
            else:
                status, code = "solver_failure", EXIT_SOLVER
    summ["status"] = status
    tag = f"{cfg.name}-{cfg.hash()}-{args.kind}-a{alpha:g}-p{p:g}"
    name = f"{tag}-seed{seeds[0]}.json" if len(seeds) == 1 else \
        f"{tag}-seeds{seeds[0]}-{seeds[-1]}.json"
    (out / name).write_text(json.dumps(summ, indent=1))
    print(f"{len(traces)} run(s) -> {out}; status {status}; "
          f"N_c = {summ['N_c']}")
    return code


def cmd_sweep(args, cfg) -> int:
    from .experiments import content_hash, sweep, write_table

    out = _out_dir(args, cfg)

    def show(row):
        parts = [f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}"
                 for k, v in row.items()]
        print("  " + " ".join(parts), flush=True)

    rows = sweep(cfg, n_jobs=args.jobs, use_cache=not args.no_cache,
                 out_dir=out, write_trace_files=args.traces, progress=show)
    base = out / f"{cfg.name}-{cfg.hash()}-seeds{content_hash(cfg.seeds, 8)}-sweep"
    write_table(rows, base)
    print(f"table -> {base}.csv")
    return EXIT_OK


def cmd_check(args, cfg) -> int:
    from . import checks
    from .experiments import build_noise, run_seed, synthesize

    syn = synthesize(cfg, args.alpha, args.p, "rsmpc",
                     use_cache=not args.no_cache, n_jobs=args.jobs)
    sys_ = syn.sys
    results = [checks.containment_equivalence(sys_, syn.K, syn.Zbar,
                                              args.tuples),
               checks.terminal_invariance(syn.terminal, sys_, syn.K, syn.Zbar)]
    noise = build_noise(cfg)
    Tb = min(syn.bounds.T, 20)
    results.append(checks.loewner_dominance(
        sys_, syn.K, syn.bounds, noise.full_covariance(Tb), Tb))
    rng = np.random.default_rng(0)
    traces = []
    for s in cfg.seeds[:args.seeds]:
        th = sys_.theta_vertices[rng.integers(len(sys_.theta_vertices))]
        traces.append(run_seed(cfg, syn, s, theta=th, diagnostics=True,
                               check_candidate=True))
    results.append(checks.recursive_feasibility(traces))
    results.append(checks.tube_soundness(traces))
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK_FAILED


COMMANDS = {"synth": cmd_synth, "run": cmd_run, "sweep": cmd_sweep,
            "check": cmd_check}


def main(argv=None) -> int:
    from .experiments import load_config

    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.alpha is not None and args.alpha < 0:
            raise ConfigError("--alpha must be nonnegative")
        if args.p is not None and not 0 < args.p < 1:
            raise ConfigError("--p must lie in (0, 1)")
        if args.jobs < 1:
            raise ConfigError("--jobs must be positive")
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (Infeasible, TerminalSetEmpty) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (SolverFailure, RSMPCError) as exc:
        print(f"solver failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
