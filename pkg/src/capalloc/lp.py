"""Online LP relaxations and a dense revised-simplex solver.

All models have the form ``max c.x  s.t.  A x <= b, x >= 0`` with ``b >= 0``,
so the slack basis is feasible and no phase one is needed.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from capalloc._io import atomic_write_text
from capalloc.instance import BernoulliInstance, GeneralInstance, InstanceFormatError, to_general

log = logging.getLogger(__name__)

FEAS_TOL = 1e-8


class LpError(RuntimeError):
    pass


@dataclass
class LpModel:
    """Columns are index tuples ``(i, t)`` (Bernoulli) or ``(i, t, j)`` (general)."""

    columns: list
    objective: np.ndarray
    A: np.ndarray
    b: np.ndarray
    row_names: list
    q: dict                      # column key -> success probability
    kind: str                    # "bernoulli" | "general"
    n: int
    T: int
    stochastic: bool = True
    fixed_zero: list = field(default_factory=list)

    def __post_init__(self):
        self.index = {key: k for k, key in enumerate(self.columns)}

    @property
    def num_vars(self) -> int:
        return len(self.columns)

    def rows_of(self, prefix: str) -> list:
        return [k for k, name in enumerate(self.row_names) if name.startswith(prefix)]


@dataclass
class LpSolution:
    model: LpModel
    values: np.ndarray
    objective: float
    status: str                  # "optimal" | "infeasible" | "error"
    iterations: int = 0

    @property
    def x(self) -> dict:
        return {key: float(v) for key, v in zip(self.model.columns, self.values)}

    def get(self, key) -> float:
        k = self.model.index.get(key)
        return 0.0 if k is None else float(self.values[k])


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------

def build_bernoulli(inst: BernoulliInstance) -> LpModel:
    n, T = inst.n, inst.T
    columns = [(i, t) for t in range(T) for i in range(n) if inst.rounds[t].p > 0.0]
    fixed = [(i, t) for t in range(T) for i in range(n) if inst.rounds[t].p <= 0.0]
    col = {key: k for k, key in enumerate(columns)}
    obj = np.array([inst.rounds[t].values[i] * inst.rounds[t].q[i] for i, t in columns])
    q = {(i, t): inst.rounds[t].q[i] for i, t in columns}
    rows, rhs, names = [], [], []
    for t, r in enumerate(inst.rounds):
        if r.p <= 0.0:
            continue
        row = np.zeros(len(columns))
        for i in range(n):
            row[col[(i, t)]] = 1.0
        rows.append(row)
        rhs.append(r.p * r.c)
        names.append(f"cap_{t}")
    for t, r in enumerate(inst.rounds):
        if r.p <= 0.0:
            continue
        for i in range(n):
            # x_it + p_t * sum_{t'<t} q x_it' <= p_t
            row = np.zeros(len(columns))
            row[col[(i, t)]] = 1.0
            for tp in range(t):
                if (i, tp) in col:
                    row[col[(i, tp)]] += r.p * inst.rounds[tp].q[i]
            rows.append(row)
            rhs.append(r.p)
            names.append(f"online_{i}_{t}")
    A = np.array(rows) if rows else np.zeros((0, len(columns)))
    return LpModel(columns, obj, A, np.array(rhs, dtype=float), names, q,
                   "bernoulli", n, T, True, fixed)


def build_general(inst: GeneralInstance, stochastic: Optional[bool] = None) -> LpModel:
    """General LP; the q-weighted (stochastic) form is used when ``stochastic``
    is true, or by default whenever some success probability is below one."""
    n, T = inst.n, inst.T
    if stochastic is None:
        stochastic = any(qi < 1.0 for reals in inst.rounds for r in reals for qi in r.q)
    columns, fixed = [], []
    for t, reals in enumerate(inst.rounds):
        for j, r in enumerate(reals):
            for i in range(n):
                (columns if r.p > 0.0 else fixed).append((i, t, j))
    col = {key: k for k, key in enumerate(columns)}
    obj = np.array([inst.rounds[t][j].values[i] * inst.rounds[t][j].q[i]
                    for i, t, j in columns])
    q = {(i, t, j): inst.rounds[t][j].q[i] for i, t, j in columns}

    def weight(i, t, j):
        return inst.rounds[t][j].q[i] if stochastic else 1.0

    rows, rhs, names = [], [], []
    for i in range(n):
        row = np.zeros(len(columns))
        for t, reals in enumerate(inst.rounds):
            for j in range(len(reals)):
                if (i, t, j) in col:
                    row[col[(i, t, j)]] = weight(i, t, j)
        rows.append(row)
        rhs.append(1.0)
        names.append(f"user_{i}")
    for t, reals in enumerate(inst.rounds):
        for j, r in enumerate(reals):
            if r.p <= 0.0:
                continue
            row = np.zeros(len(columns))
            for i in range(n):
                row[col[(i, t, j)]] = 1.0
            rows.append(row)
            rhs.append(r.p * r.c)
            names.append(f"cap_{t}_{j}")
    for t, reals in enumerate(inst.rounds):
        for j, r in enumerate(reals):
            if r.p <= 0.0:
                continue
            for i in range(n):
                row = np.zeros(len(columns))
                row[col[(i, t, j)]] = 1.0
                for tp in range(t):
                    for jp in range(len(inst.rounds[tp])):
                        if (i, tp, jp) in col:
                            row[col[(i, tp, jp)]] += r.p * weight(i, tp, jp)
                rows.append(row)
                rhs.append(r.p)
                names.append(f"online_{i}_{t}_{j}")
    A = np.array(rows) if rows else np.zeros((0, len(columns)))
    return LpModel(columns, obj, A, np.array(rhs, dtype=float), names, q,
                   "general", n, T, stochastic, fixed)


def build(inst) -> LpModel:
    if isinstance(inst, BernoulliInstance):
        return build_bernoulli(inst)
    return build_general(inst)


# ---------------------------------------------------------------------------
# solver
# ---------------------------------------------------------------------------

def solve(model: LpModel, max_iter: int = 100_000, refactor_every: int = 40) -> LpSolution:
    """Revised simplex with Bland's rule, starting from the slack basis."""
    c = np.asarray(model.objective, dtype=float)
    A = np.asarray(model.A, dtype=float)
    b = np.asarray(model.b, dtype=float)
    m, nv = A.shape
    if nv == 0:
        return LpSolution(model, np.zeros(0), 0.0, "optimal")
    if np.any(b < -FEAS_TOL):
        # x = 0 is feasible for every model built here
        raise LpError("internal error: negative right-hand side")

    full = np.hstack([A, np.eye(m)])
    cfull = np.concatenate([c, np.zeros(m)])
    scale = max(1.0, float(np.abs(c).max(initial=0.0)))
    dtol = 1e-11 * scale
    ptol = 1e-11
    basis = list(range(nv, nv + m))
    Binv = np.eye(m)
    xB = b.copy()

    it = 0
    for it in range(1, max_iter + 1):
        y = cfull[basis] @ Binv
        d = cfull - y @ full
        d[basis] = 0.0
        cand = np.nonzero(d > dtol)[0]
        if cand.size == 0:
            break
        enter = int(cand[0])
        u = Binv @ full[:, enter]
        pos = u > ptol
        if not pos.any():
            return LpSolution(model, np.zeros(nv), float("inf"), "error", it)
        ratios = np.full(m, np.inf)
        ratios[pos] = np.maximum(xB[pos], 0.0) / u[pos]
        best = ratios.min()
        ties = np.nonzero(ratios <= best + 1e-12 * max(1.0, best))[0]
        leave = int(min(ties, key=lambda r: basis[r]))
        piv = u[leave]
        Binv[leave] /= piv
        xB[leave] /= piv
        for r in range(m):
            if r != leave and u[r] != 0.0:
                Binv[r] -= u[r] * Binv[leave]
                xB[r] -= u[r] * xB[leave]
        basis[leave] = enter
        if it % refactor_every == 0:
            Binv = np.linalg.inv(full[:, basis])
            xB = Binv @ b
    else:
        return LpSolution(model, np.zeros(nv), float("nan"), "error", it)

    # final refactorization for accuracy
    B = full[:, basis]
    xB = np.linalg.solve(B, b)
    xfull = np.zeros(nv + m)
    xfull[basis] = xB
    x = xfull[:nv]
    x[np.abs(x) < 1e-13] = 0.0
    x = np.maximum(x, 0.0)
    sol = LpSolution(model, x, float(c @ x), "optimal", it)
    if check_feasibility(sol, model, FEAS_TOL):
        log.warning("simplex returned a point violating feasibility by more than %g", FEAS_TOL)
        sol.status = "error"
    return sol


def solve_instance(inst) -> LpSolution:
    sol = solve(build(inst))
    if sol.status != "optimal":
        raise LpError(f"LP solve failed with status {sol.status}")
    return sol


def check_feasibility(sol: LpSolution, model: LpModel, tol: float = FEAS_TOL) -> list:
    """List of ``(row_name, violation)`` for constraints violated by more than ``tol``."""
    out = []
    x = np.asarray(sol.values, dtype=float)
    if model.A.shape[0]:
        slack = model.A @ x - model.b
        for k in np.nonzero(slack > tol)[0]:
            out.append((model.row_names[k], float(slack[k])))
    for k in np.nonzero(x < -tol)[0]:
        out.append((f"nonneg_{model.columns[k]}", float(-x[k])))
    return out


def y_prefix(sol: LpSolution, i: int, t: int) -> float:
    """Success-weighted LP mass of user ``i`` before round ``t``."""
    model = sol.model
    total = 0.0
    for key, v in zip(model.columns, sol.values):
        if key[0] == i and key[1] < t:
            total += v * model.q[key]
    return total


def embed_solution(inst: BernoulliInstance, sol: LpSolution) -> LpSolution:
    """Map an ``(i, t)`` solution onto the ``to_general`` embedding of ``inst``."""
    model = build_general(to_general(inst), stochastic=True)
    vals = np.zeros(model.num_vars)
    for k, (i, t, j) in enumerate(model.columns):
        if j == 0 and inst.rounds[t].p > 0.0:
            vals[k] = sol.get((i, t))
    return LpSolution(model, vals, float(model.objective @ vals), sol.status)


def to_lp_text(model: LpModel) -> str:
    """CPLEX-LP text dump for cross-checking with external solvers."""
    def name(key):
        return "x_" + "_".join(str(v) for v in key)

    def expr(coefs):
        parts = []
        for k, a in coefs:
            if a == 0.0:
                continue
            sign = "-" if a < 0 else "+"
            parts.append(f"{sign} {abs(a)!r} {name(model.columns[k])}")
        s = " ".join(parts) or "0"
        return s[2:] if s.startswith("+ ") else s

    lines = ["Maximize", " obj: " + expr(enumerate(model.objective)), "Subject To"]
    for r, rn in enumerate(model.row_names):
        lines.append(f" {rn}: {expr(enumerate(model.A[r]))} <= {model.b[r]!r}")
    lines.append("Bounds")
    for key in model.columns:
        lines.append(f" {name(key)} >= 0")
    lines.append("End")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# solution files
# ---------------------------------------------------------------------------

SOLUTION_SCHEMA = "capalloc-lpsolution/1"


def solution_to_dict(sol: LpSolution) -> dict:
    m = sol.model
    return {"schema": SOLUTION_SCHEMA, "kind": m.kind, "stochastic": m.stochastic,
            "objective": float(sol.objective), "status": sol.status,
            "x": [{"index": list(key), "value": float(v)}
                  for key, v in zip(m.columns, sol.values)]}


def solution_from_dict(doc: dict, inst) -> LpSolution:
    """Rebuild the model for ``inst`` and load the stored values onto it."""
    if doc.get("schema") != SOLUTION_SCHEMA:
        raise InstanceFormatError(f"unsupported solution schema {doc.get('schema')!r}")
    kind = doc.get("kind")
    if kind == "bernoulli" and isinstance(inst, BernoulliInstance):
        model = build_bernoulli(inst)
    elif kind == "general" and isinstance(inst, GeneralInstance):
        model = build_general(inst, bool(doc.get("stochastic", True)))
    else:
        raise InstanceFormatError(f"solution kind {kind!r} does not match the instance")
    vals = np.zeros(model.num_vars)
    try:
        for entry in doc["x"]:
            key = tuple(int(k) for k in entry["index"])
            if key not in model.index:
                raise InstanceFormatError(f"solution variable {key} is not in the model")
            vals[model.index[key]] = float(entry["value"])
    except (KeyError, TypeError) as exc:
        raise InstanceFormatError(f"malformed solution document ({exc})") from exc
    return LpSolution(model, vals, float(model.objective @ vals), doc.get("status", "optimal"))


def write_solution(sol: LpSolution, path) -> None:
    atomic_write_text(path, json.dumps(solution_to_dict(sol), indent=2) + "\n")


def read_solution(path, inst) -> LpSolution:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise InstanceFormatError(f"{path}: not valid JSON ({exc})") from exc
    return solution_from_dict(doc, inst)
