"""Command-line front end.

Exit codes: 0 success, 1 output could not be written, 2 configuration or
argument error, 3 infeasibility at run time, 4 numerical failure (including
an agent run whose classification differs from the expected one). Floats are
printed with 10 significant digits.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .cost import QuadraticCost
from .config import load_scenario
from .dynamics import Constraints, LinearModel
from .errors import (ArgumentError, BudgetError, ConfigError, MPCError, SingularityError,
                     UnsupportedError)
from .mpcs import MPCSController, StateGrid, compute_feasible_set
from .scenarios import EXAMPLES, run_example
from .sim import MPCController, OpenLoop, StaticGain, Thm1Monitor, Thm2Monitor, simulate
from .solver import one_step_value
from .stability import first_order_region, write_certificates

EXIT_OK = 0
EXIT_IO = 1
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_NUMERIC = 4

RATIO_TOL = 1e-9


def _g(v) -> str:
    return f"{float(v):.10g}"


class _Fail(Exception):
    def __init__(self, code, msg):
        super().__init__(msg)
        self.code = code


def cmd_certify_first_order(args) -> int:
    a, b, q, r = args.a, args.b, args.q, args.r
    reg = first_order_region(a, b, q, r)
    print(f"closed_loop_pole {_g(reg.closed_loop_pole)}")
    print(f"new {str(reg.new).lower()}")
    print(f"prior {str(reg.prior).lower()}")
    # simulate the N = 1 loop and compare the observed ratios with the pole
    model = LinearModel([[a]], [[b]])
    l = QuadraticCost([[q]], [[r]])
    sets = Constraints.unconstrained(1, 1)
    ctrl = MPCController(model, l, sets, 1)
    x = np.array([1.0])
    worst = 0.0
    for k in range(args.steps):
        act = ctrl(x, k)
        x_next = model.step(x, act.u)
        if x[0] == 0.0 or not np.isfinite(x_next[0]):
            break
        ratio = x_next[0] / x[0]
        worst = max(worst, abs(ratio - reg.closed_loop_pole) / max(1.0, abs(reg.closed_loop_pole)))
        x = x_next
    ok = worst <= RATIO_TOL
    print(f"max_ratio_error {_g(worst)}")
    print(f"trajectory_check {'pass' if ok else 'fail'}")
    return EXIT_OK if ok else EXIT_NUMERIC


def _outdir(path):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as e:
        raise _Fail(EXIT_IO, f"cannot create {path}: {e}") from None


def _write(fn, path, *a):
    try:
        fn(path, *a)
    except OSError as e:
        raise _Fail(EXIT_IO, f"cannot write {path}: {e}") from None


def cmd_run_example(args) -> int:
    ex = EXAMPLES[args.name]
    _outdir(args.out)
    tr = run_example(args.name, steps=args.steps, delta=args.delta)
    trace_path = os.path.join(args.out, f"{args.name}_trace.csv")
    cert_path = os.path.join(args.out, f"{args.name}_certificates.csv")
    _write(lambda p: tr.to_csv(p), trace_path)
    _write(lambda p: write_certificates(p, tr.certificates), cert_path)
    match = tr.classification == ex.expected
    parts = [args.name, tr.classification, f"expected={ex.expected}",
             f"final_norm={_g(np.linalg.norm(tr.X[-1]))}", f"steps={tr.steps}"]
    if np.any(np.isfinite(tr.alpha)):
        parts.append(f"alpha_nonincreasing={str(tr.alpha_monotone()).lower()}")
    print(" ".join(parts))
    return EXIT_OK if match else EXIT_NUMERIC


def _controller(sc, fs=None):
    c = sc.controller
    if c["kind"] == "open-loop":
        return OpenLoop(sc.model.m), ()
    if c["kind"] == "static-gain":
        return StaticGain(c["K"]), ()
    monitors = (Thm1Monitor(sc.model, sc.cost, sc.sets), Thm2Monitor(sc.model, sc.cost, sc.sets))
    if c["kind"] == "mpc":
        return MPCController(sc.model, sc.cost, sc.sets, c["N"], sc.terminal), monitors
    return MPCSController(sc.model, sc.cost, sc.sets, sc.mpcs_config(), fs), monitors


def cmd_simulate(args) -> int:
    sc = load_scenario(args.config)
    if args.delta is not None:
        if args.delta < 0:
            raise ConfigError("--delta must be >= 0")
        sc.controller["delta"] = float(args.delta)
    steps = sc.run["steps"] if args.steps is None else args.steps
    if steps < 0:
        raise ConfigError("--steps must be >= 0")
    x0 = sc.run["x0"]
    fs = None
    cfg = sc.mpcs_config() if sc.controller["kind"] == "mpcs" else None
    if cfg is not None and cfg.rf_mode == "invariant-set":
        alpha0 = one_step_value(sc.model, sc.cost, sc.sets, x0).m_val
        fs = compute_feasible_set(sc.model, sc.cost, sc.sets, alpha0, sc.grid)
        if not fs.contains(x0):
            raise _Fail(EXIT_INFEASIBLE, "x0 is not in the feasible set at its own level (k=0)")
    ctrl, monitors = _controller(sc, fs)
    tr = simulate(sc.model, ctrl, x0, steps, monitors, label=sc.controller["kind"])
    trace = sc.run["trace"]
    certs = sc.run["certificates"]
    if args.out is not None:
        _outdir(args.out)
        trace = os.path.join(args.out, "trace.csv")
        certs = os.path.join(args.out, "certificates.csv")
    if trace:
        _write(lambda p: tr.to_csv(p), trace)
    if certs:
        _write(lambda p: write_certificates(p, tr.certificates), certs)
    print(f"{tr.label} {tr.classification} steps={tr.steps} "
          f"final_norm={_g(np.linalg.norm(tr.X[-1]))}")
    if tr.infeasible_at is not None:
        print(f"infeasible at k={tr.infeasible_at}", file=sys.stderr)
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_feasible_set(args) -> int:
    sc = load_scenario(args.config)
    if sc.model.n > 2:
        raise UnsupportedError("feasible sets are computed for n <= 2 only")
    grid = sc.grid
    if grid is None:
        raise ConfigError("feasible-set needs a 'grid' block in the scenario")
    if args.grid is not None:
        grid = StateGrid(grid.lower, grid.upper, args.grid, grid.controls, grid.u_bound)
    alpha = args.alpha
    if alpha is None:
        alpha = one_step_value(sc.model, sc.cost, sc.sets, sc.run["x0"]).m_val
    fs = compute_feasible_set(sc.model, sc.cost, sc.sets, alpha, grid)
    if args.out:
        _write(lambda p: fs.to_csv(p), args.out)
    print(f"alpha {_g(fs.alpha)}")
    print(f"cells {fs.count}")
    print(f"sublevel_cells {int(fs.sublevel.sum())}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mpcstab", description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=None,
                   help="reserved; every algorithm here is deterministic")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("certify-first-order", help="scalar plant stability regions")
    for name in ("a", "b", "q", "r"):
        s.add_argument(name, type=float)
    s.add_argument("--steps", type=int, default=20)
    s.set_defaults(func=cmd_certify_first_order)

    s = sub.add_parser("run-example", help="one of the agent runs")
    s.add_argument("name", choices=sorted(EXAMPLES))
    s.add_argument("--out", default=".")
    s.add_argument("--steps", type=int, default=100)
    s.add_argument("--delta", type=float, default=None)
    s.set_defaults(func=cmd_run_example)

    s = sub.add_parser("simulate", help="run a scenario file")
    s.add_argument("config")
    s.add_argument("--steps", type=int, default=None)
    s.add_argument("--delta", type=float, default=None)
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("feasible-set", help="gridded control-invariant set")
    s.add_argument("config")
    s.add_argument("--alpha", type=float, default=None)
    s.add_argument("--grid", type=int, default=None, help="cells per state axis")
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_feasible_set)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _Fail as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except (ConfigError, ArgumentError, UnsupportedError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (SingularityError, BudgetError, FloatingPointError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except MPCError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
