"""Scenario files: a YAML document with model, constraint, cost, controller
and run blocks.

Matrices are written one row per line as whitespace-separated decimals::

    model:
      kind: linear
      A: |
        0.7 0.1
        0.8 0.6
      B: |
        0.8
        -0.5

Every validation failure raises :class:`ConfigError` carrying the 1-based
line and column of the offending node.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Optional

import numpy as np
import yaml
from scipy.interpolate import RegularGridInterpolator

from .cost import QuadraticCost, TerminalWeight
from .dynamics import Constraints, InputBox, LinearModel, StateSet, SystemModel, TabulatedModel
from .errors import ConfigError, MPCError
from .mpcs import INVARIANT_SET, SECOND_STAGE, MpcsConfig, StateGrid

CONTROLLERS = ("open-loop", "static-gain", "mpc", "mpcs")
_BLOCKS = ("model", "constraints", "cost", "controller", "run", "grid")


# ---------------------------------------------------------------------------
# node helpers


def _err(node, msg):
    mark = node.start_mark
    return ConfigError(msg, mark.line + 1, mark.column + 1)


def _mapping(node, name, allowed):
    if not isinstance(node, yaml.MappingNode):
        raise _err(node, f"'{name}' must be a mapping")
    out = {}
    for k, v in node.value:
        key = k.value
        if key not in allowed:
            raise _err(k, f"unknown key '{key}' in '{name}'")
        if key in out:
            raise _err(k, f"duplicate key '{key}' in '{name}'")
        out[key] = v
    return out


def _scalar(node, name):
    if not isinstance(node, yaml.ScalarNode):
        raise _err(node, f"'{name}' must be a scalar")
    return node.value


def _number(node, name):
    text = _scalar(node, name)
    try:
        return float(text)
    except ValueError:
        raise _err(node, f"'{name}' must be a number, got '{text}'") from None


def _integer(node, name, low=None):
    text = _scalar(node, name)
    try:
        v = int(text)
    except ValueError:
        raise _err(node, f"'{name}' must be an integer, got '{text}'") from None
    if low is not None and v < low:
        raise _err(node, f"'{name}' must be >= {low}")
    return v


def _rows(node, name):
    """Matrix rows from a block scalar, a list of row strings or nested lists.

    Returns the rows and a ``(line, column)`` pair per row for messages.
    """
    if isinstance(node, yaml.ScalarNode):
        base = node.start_mark.line + (1 if node.style in ("|", ">") else 0)
        col = node.start_mark.column + 1
        rows, where = [], []
        for i, ln in enumerate(node.value.splitlines()):
            if not ln.strip():
                continue
            try:
                rows.append([float(t) for t in ln.split()])
            except ValueError:
                raise ConfigError(f"'{name}' row {len(rows) + 1} is not numeric: '{ln.strip()}'",
                                  base + i + 1, col) from None
            where.append((base + i + 1, col))
        return rows, where
    if isinstance(node, yaml.SequenceNode):
        rows, where = [], []
        for i, item in enumerate(node.value):
            if isinstance(item, yaml.SequenceNode):
                rows.append([_number(c, f"{name}[{i}]") for c in item.value])
            else:
                text = _scalar(item, f"{name}[{i}]")
                try:
                    rows.append([float(t) for t in text.split()])
                except ValueError:
                    raise _err(item, f"'{name}' row {i + 1} is not numeric: '{text}'") from None
            where.append((item.start_mark.line + 1, item.start_mark.column + 1))
        return rows, where
    raise _err(node, f"'{name}' must be matrix text or a list of rows")


def _matrix(node, name, shape=None):
    rows, where = _rows(node, name)
    if not rows:
        raise _err(node, f"'{name}' is empty")
    width = len(rows[0])
    for i, r in enumerate(rows):
        if len(r) != width:
            raise ConfigError(f"'{name}' row {i + 1} has {len(r)} entries, expected {width}",
                              *where[i])
    M = np.array(rows, dtype=float)
    if shape is not None:
        want = tuple(M.shape[i] if s is None else s for i, s in enumerate(shape))
        if M.shape != want:
            raise _err(node, f"'{name}' must be {want[0]}x{want[1]}, got {M.shape[0]}x{M.shape[1]}")
    return M


def _vector(node, name, size=None):
    """A vector written on one line, one entry per line, or as a list."""
    if isinstance(node, yaml.ScalarNode):
        vals, _ = _rows(node, name)
        v = np.array([x for r in vals for x in r], dtype=float)
    else:
        M = _matrix(node, name)
        v = M.ravel()
    if size is not None and v.size != size:
        raise _err(node, f"'{name}' must have {size} entries, got {v.size}")
    return v


def _fmt(v: float) -> str:
    return repr(float(v))


def _matrix_text(M) -> str:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    return "\n".join(" ".join(_fmt(v) for v in row) for row in M) + "\n"


def _vector_text(v) -> str:
    return " ".join(_fmt(x) for x in np.ravel(v))


# ---------------------------------------------------------------------------
# scenario


@dataclass
class Scenario:
    """Validated scenario.

    ``data`` is the canonical plain form (numpy arrays and scalars) used for
    equality and serialization; the other fields are the built objects.
    """

    data: dict
    model: SystemModel
    sets: Constraints
    cost: QuadraticCost
    terminal: Optional[TerminalWeight]
    grid: Optional[StateGrid]

    @property
    def controller(self) -> dict:
        return self.data["controller"]

    @property
    def run(self) -> dict:
        return self.data["run"]

    def mpcs_config(self) -> MpcsConfig:
        c = self.controller
        return MpcsConfig(c["N"], delta=c["delta"], rf_mode=c["rf_mode"], grid=self.grid)

    def __eq__(self, other):
        if not isinstance(other, Scenario):
            return NotImplemented
        return _canon_equal(self.data, other.data)

    def to_text(self) -> str:
        return dump_scenario(self)


def _canon_equal(a, b):
    if isinstance(a, dict):
        return isinstance(b, dict) and a.keys() == b.keys() and \
            all(_canon_equal(a[k], b[k]) for k in a)
    if isinstance(a, (list, tuple)):
        return isinstance(b, (list, tuple)) and len(a) == len(b) and \
            all(_canon_equal(x, y) for x, y in zip(a, b))
    if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
        a, b = np.asarray(a), np.asarray(b)
        return a.shape == b.shape and bool(np.array_equal(a, b))
    return a == b


def _table_model(axes, values, n, m):
    grids = tuple(np.asarray(a, dtype=float) for a in axes)
    shape = tuple(len(g) for g in grids) + (n,)
    interp = RegularGridInterpolator(grids, np.asarray(values, dtype=float).reshape(shape),
                                     method="linear")

    def f(x, u):
        return interp(np.concatenate([x, u])[None, :])[0]

    lo = np.array([g[0] for g in grids])
    hi = np.array([g[-1] for g in grids])
    return TabulatedModel(f, n, m, lo[:n], hi[:n], lo[n:], hi[n:])


def _parse_model(node):
    blk = _mapping(node, "model", ("kind", "A", "B", "n", "m", "axes", "values"))
    kind = _scalar(blk["kind"], "model.kind") if "kind" in blk else "linear"
    if kind == "linear":
        for key in ("A", "B"):
            if key not in blk:
                raise _err(node, f"linear model needs '{key}'")
        A = _matrix(blk["A"], "A")
        if A.shape[0] != A.shape[1]:
            raise _err(blk["A"], "'A' must be square")
        B = _matrix(blk["B"], "B")
        if B.shape[0] != A.shape[0]:
            raise _err(blk["B"], f"'B' must have {A.shape[0]} rows, got {B.shape[0]}")
        data = {"kind": "linear", "A": A, "B": B}
        return data, LinearModel(A, B)
    if kind == "table":
        for key in ("n", "m", "axes", "values"):
            if key not in blk:
                raise _err(node, f"table model needs '{key}'")
        n = _integer(blk["n"], "n", 1)
        m = _integer(blk["m"], "m", 1)
        if not isinstance(blk["axes"], yaml.SequenceNode) or len(blk["axes"].value) != n + m:
            raise _err(blk["axes"], f"'axes' must list {n + m} grids (states then inputs)")
        axes = []
        for i, a in enumerate(blk["axes"].value):
            v = _vector(a, f"axes[{i}]")
            if v.size < 2 or np.any(np.diff(v) <= 0):
                raise _err(a, f"axes[{i}] must be strictly increasing with >= 2 points")
            axes.append(v)
        count = int(np.prod([a.size for a in axes]))
        values = _matrix(blk["values"], "values", (count, n))
        data = {"kind": "table", "n": n, "m": m, "axes": axes, "values": values}
        try:
            model = _table_model(axes, values, n, m)
        except ConfigError as e:
            raise _err(blk["values"], str(e)) from None
        return data, model
    raise _err(blk["kind"], f"model kind must be 'linear' or 'table', got '{kind}'")


def _parse_constraints(node, n, m):
    if node is None:
        return {"u_bar": np.full(m, np.inf), "x_lower": None, "x_upper": None}, \
            Constraints.unconstrained(n, m)
    blk = _mapping(node, "constraints", ("u_bar", "x_lower", "x_upper"))
    u_bar = _vector(blk["u_bar"], "u_bar", m) if "u_bar" in blk else np.full(m, np.inf)
    if "u_bar" in blk and np.any(u_bar <= 0):
        raise _err(blk["u_bar"], "'u_bar' entries must be positive")
    if ("x_lower" in blk) != ("x_upper" in blk):
        raise _err(node, "state box needs both 'x_lower' and 'x_upper'")
    data = {"u_bar": u_bar, "x_lower": None, "x_upper": None}
    states = StateSet.all_space(n)
    if "x_lower" in blk:
        lo = _vector(blk["x_lower"], "x_lower", n)
        hi = _vector(blk["x_upper"], "x_upper", n)
        try:
            states = StateSet.box(lo, hi)
        except MPCError as e:
            raise _err(blk["x_lower"], str(e)) from None
        data["x_lower"], data["x_upper"] = lo, hi
    return data, Constraints(InputBox(u_bar), states)


def _parse_cost(node, n, m):
    blk = _mapping(node, "cost", ("Q", "R", "P"))
    if "Q" not in blk:
        raise _err(node, "cost needs 'Q'")
    Q = _matrix(blk["Q"], "Q", (n, n))
    R = _matrix(blk["R"], "R", (m, m)) if "R" in blk else np.zeros((m, m))
    for key, W in (("Q", Q), ("R", R)):
        if key in blk and not np.allclose(W, W.T, atol=1e-12):
            raise _err(blk[key], f"'{key}' must be symmetric")
    try:
        cost = QuadraticCost(Q, R)
    except MPCError as e:
        raise _err(blk["Q"], str(e)) from None
    data = {"Q": Q, "R": R, "P": None}
    terminal = None
    if "P" in blk:
        P = _matrix(blk["P"], "P", (n, n))
        if not np.allclose(P, P.T, atol=1e-12):
            raise _err(blk["P"], "'P' must be symmetric")
        if np.linalg.eigvalsh(0.5 * (P + P.T)).min() < -1e-12:
            raise _err(blk["P"], "'P' must be positive semidefinite")
        data["P"] = P
        terminal = TerminalWeight(P=P)
    return data, cost, terminal


def _parse_controller(node, n, m):
    blk = _mapping(node, "controller", ("kind", "N", "delta", "rf_mode", "K"))
    if "kind" not in blk:
        raise _err(node, "controller needs 'kind'")
    kind = _scalar(blk["kind"], "kind")
    if kind not in CONTROLLERS:
        raise _err(blk["kind"], f"controller kind must be one of {', '.join(CONTROLLERS)}")
    N = _integer(blk["N"], "N", 1) if "N" in blk else 1
    delta = _number(blk["delta"], "delta") if "delta" in blk else 0.0
    if delta < 0:
        raise _err(blk["delta"], "'delta' must be >= 0")
    rf_mode = _scalar(blk["rf_mode"], "rf_mode") if "rf_mode" in blk else SECOND_STAGE
    if rf_mode not in (SECOND_STAGE, INVARIANT_SET):
        raise _err(blk["rf_mode"], f"rf_mode must be '{SECOND_STAGE}' or '{INVARIANT_SET}'")
    K = None
    if kind == "static-gain":
        if "K" not in blk:
            raise _err(node, "static-gain controller needs 'K'")
        K = _matrix(blk["K"], "K", (m, n))
    return {"kind": kind, "N": N, "delta": delta, "rf_mode": rf_mode, "K": K}


def _parse_grid(node, n):
    if node is None:
        return None, None
    blk = _mapping(node, "grid", ("lower", "upper", "cells", "controls", "u_bound"))
    for key in ("lower", "upper"):
        if key not in blk:
            raise _err(node, f"grid needs '{key}'")
    data = {
        "lower": _vector(blk["lower"], "lower", n),
        "upper": _vector(blk["upper"], "upper", n),
        "cells": _integer(blk["cells"], "cells", 1) if "cells" in blk else 201,
        "controls": _integer(blk["controls"], "controls", 2) if "controls" in blk else 401,
        "u_bound": _number(blk["u_bound"], "u_bound") if "u_bound" in blk else None,
    }
    try:
        grid = StateGrid(tuple(data["lower"]), tuple(data["upper"]), data["cells"],
                         data["controls"], data["u_bound"])
    except MPCError as e:
        raise _err(blk["lower"], str(e)) from None
    return data, grid


def _parse_run(node, n, sets):
    blk = _mapping(node, "run", ("x0", "steps", "trace", "certificates"))
    if "x0" not in blk:
        raise _err(node, "run needs 'x0'")
    x0 = _vector(blk["x0"], "x0", n)
    if not sets.states.contains(x0):
        raise _err(blk["x0"], "'x0' is outside the state box")
    return {
        "x0": x0,
        "steps": _integer(blk["steps"], "steps", 0) if "steps" in blk else 100,
        "trace": _scalar(blk["trace"], "trace") if "trace" in blk else None,
        "certificates": _scalar(blk["certificates"], "certificates") if "certificates" in blk else None,
    }


def parse_scenario(text: str) -> Scenario:
    """Parse and validate scenario text."""
    try:
        root = yaml.compose(text)
    except yaml.MarkedYAMLError as e:
        mark = e.problem_mark or e.context_mark
        line = mark.line + 1 if mark else None
        col = mark.column + 1 if mark else None
        raise ConfigError(f"malformed document: {e.problem}", line, col) from None
    if root is None:
        raise ConfigError("empty scenario", 1, 1)
    top = _mapping(root, "scenario", _BLOCKS)
    for key in ("model", "cost", "controller", "run"):
        if key not in top:
            raise _err(root, f"missing block '{key}'")
    model_data, model = _parse_model(top["model"])
    n, m = model.n, model.m
    cons_data, sets = _parse_constraints(top.get("constraints"), n, m)
    cost_data, cost, terminal = _parse_cost(top["cost"], n, m)
    ctrl = _parse_controller(top["controller"], n, m)
    if terminal is not None and ctrl["kind"] == "mpcs":
        raise _err(top["cost"], "MPCS is defined without a terminal weight")
    grid_data, grid = _parse_grid(top.get("grid"), n)
    if ctrl["kind"] == "mpcs" and ctrl["rf_mode"] == INVARIANT_SET and grid is None:
        raise _err(top["controller"], "invariant-set mode needs a 'grid' block")
    run = _parse_run(top["run"], n, sets)
    data = {"model": model_data, "constraints": cons_data, "cost": cost_data,
            "controller": ctrl, "grid": grid_data, "run": run}
    return Scenario(data, model, sets, cost, terminal, grid)


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        return parse_scenario(fh.read())


class _Dumper(yaml.SafeDumper):
    pass


class _Block(str):
    pass


_Dumper.add_representer(_Block, lambda d, s: d.represent_scalar("tag:yaml.org,2002:str", s, style="|"))


def dump_scenario(sc: Scenario) -> str:
    """Serialize to text that :func:`parse_scenario` maps back to ``sc``."""
    d = sc.data
    doc: dict[str, Any] = {}
    md = d["model"]
    if md["kind"] == "linear":
        doc["model"] = {"kind": "linear", "A": _Block(_matrix_text(md["A"])),
                        "B": _Block(_matrix_text(md["B"]))}
    else:
        doc["model"] = {"kind": "table", "n": md["n"], "m": md["m"],
                        "axes": [_vector_text(a) for a in md["axes"]],
                        "values": _Block(_matrix_text(md["values"]))}
    cd = d["constraints"]
    cons: dict[str, Any] = {"u_bar": _vector_text(cd["u_bar"])}
    if cd["x_lower"] is not None:
        cons["x_lower"] = _vector_text(cd["x_lower"])
        cons["x_upper"] = _vector_text(cd["x_upper"])
    doc["constraints"] = cons
    cost = {"Q": _Block(_matrix_text(d["cost"]["Q"])), "R": _Block(_matrix_text(d["cost"]["R"]))}
    if d["cost"]["P"] is not None:
        cost["P"] = _Block(_matrix_text(d["cost"]["P"]))
    doc["cost"] = cost
    c = d["controller"]
    ctrl: dict[str, Any] = {"kind": c["kind"], "N": c["N"], "delta": float(c["delta"]),
                            "rf_mode": c["rf_mode"]}
    if c["K"] is not None:
        ctrl["K"] = _Block(_matrix_text(c["K"]))
    doc["controller"] = ctrl
    if d["grid"] is not None:
        g = d["grid"]
        doc["grid"] = {"lower": _vector_text(g["lower"]), "upper": _vector_text(g["upper"]),
                       "cells": g["cells"], "controls": g["controls"]}
        if g["u_bound"] is not None:
            doc["grid"]["u_bound"] = float(g["u_bound"])
    r = d["run"]
    run: dict[str, Any] = {"x0": _vector_text(r["x0"]), "steps": r["steps"]}
    for key in ("trace", "certificates"):
        if r[key] is not None:
            run[key] = r[key]
    doc["run"] = run
    return yaml.dump(doc, Dumper=_Dumper, sort_keys=False, default_flow_style=False)
