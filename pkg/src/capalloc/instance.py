"""Problem instances: Bernoulli and general-distribution arrivals.

Users are indexed ``0..n-1`` and rounds ``0..T-1`` throughout the package.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from capalloc._io import atomic_write_text

BERNOULLI_SCHEMA = "capalloc-bernoulli/1"
GENERAL_SCHEMA = "capalloc-general/1"

PROB_SUM_TOL = 1e-9


class InstanceFormatError(ValueError):
    """Raised when an instance file is malformed or has the wrong schema."""


def _as_floats(seq) -> tuple:
    return tuple(float(v) for v in seq)


@dataclass(frozen=True)
class RoundSpec:
    p: float
    c: int
    values: tuple
    q: tuple

    def __post_init__(self):
        object.__setattr__(self, "values", _as_floats(self.values))
        object.__setattr__(self, "q", _as_floats(self.q))


@dataclass(frozen=True)
class BernoulliInstance:
    n: int
    rounds: tuple

    def __post_init__(self):
        object.__setattr__(self, "rounds", tuple(self.rounds))

    @property
    def T(self) -> int:
        return len(self.rounds)


@dataclass(frozen=True)
class Realization:
    p: float
    c: int
    values: tuple
    q: tuple

    def __post_init__(self):
        object.__setattr__(self, "values", _as_floats(self.values))
        object.__setattr__(self, "q", _as_floats(self.q))


@dataclass(frozen=True)
class GeneralInstance:
    n: int
    rounds: tuple  # tuple of tuples of Realization

    def __post_init__(self):
        object.__setattr__(self, "rounds", tuple(tuple(r) for r in self.rounds))

    @property
    def T(self) -> int:
        return len(self.rounds)


Instance = Union[BernoulliInstance, GeneralInstance]


def round_spec(p, c, values, q=None) -> RoundSpec:
    """Convenience constructor; ``q`` defaults to all ones."""
    if q is None:
        q = [1.0] * len(values)
    return RoundSpec(float(p), int(c), values, q)


def _check_outcome(where, p, c, values, q, n, problems):
    if not (isinstance(p, (int, float)) and math.isfinite(p) and 0.0 <= p <= 1.0):
        problems.append(f"{where}: probability p={p!r} outside [0, 1]")
    if not isinstance(c, (int, np.integer)) or isinstance(c, bool) or c < 0:
        problems.append(f"{where}: capacity c={c!r} is not a non-negative integer")
    if len(values) != n:
        problems.append(f"{where}: values has length {len(values)}, expected n={n}")
    if len(q) != n:
        problems.append(f"{where}: q has length {len(q)}, expected n={n}")
    for i, v in enumerate(values):
        if not (math.isfinite(v) and v >= 0.0):
            problems.append(f"{where}: values[{i}]={v!r} is negative or not finite")
    for i, qi in enumerate(q):
        if not (math.isfinite(qi) and 0.0 <= qi <= 1.0):
            problems.append(f"{where}: q[{i}]={qi!r} outside [0, 1]")


def validate(inst: Instance) -> list:
    """Return a list of human-readable invariant violations (empty iff valid)."""
    problems: list = []
    if not isinstance(inst.n, (int, np.integer)) or inst.n < 0:
        problems.append(f"n={inst.n!r} is not a non-negative integer")
        return problems
    if isinstance(inst, BernoulliInstance):
        for t, r in enumerate(inst.rounds):
            _check_outcome(f"round {t}", r.p, r.c, r.values, r.q, inst.n, problems)
    elif isinstance(inst, GeneralInstance):
        for t, reals in enumerate(inst.rounds):
            if not reals:
                problems.append(f"round {t}: no realizations")
                continue
            for j, r in enumerate(reals):
                _check_outcome(f"round {t} realization {j}", r.p, r.c, r.values, r.q,
                               inst.n, problems)
            total = sum(r.p for r in reals)
            if abs(total - 1.0) > PROB_SUM_TOL:
                problems.append(f"round {t}: realization probabilities sum to {total!r}, not 1")
    else:
        problems.append(f"unknown instance type {type(inst).__name__}")
    return problems


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------

def gen_lp_gap() -> BernoulliInstance:
    """Two users, a capacity-2 resource w.p. 1/2, then a unit resource w.p. 1.

    Optimum online earns 1.5 while the LP relaxation earns 2.
    """
    return BernoulliInstance(2, (
        round_spec(0.5, 2, (1.0, 1.0)),
        round_spec(1.0, 1, (1.0, 1.0)),
    ))


def gen_bdm_counterexample(n: int) -> BernoulliInstance:
    """Instance on which top-c proposal rounding is only O(1/n)-approximate."""
    if n < 2:
        raise ValueError(f"n must be at least 2, got {n}")
    return BernoulliInstance(n, (
        round_spec(1.0 - 1.0 / n, n, [1.0] * n),
        round_spec(1.0, 1, [float(n * n)] * n),
    ))


def gen_positive_correlation(eps: float) -> BernoulliInstance:
    """Two unit-value users, one capacity-2 resource arriving w.p. ``eps``.

    A zero-value sentinel round follows so availability after the gadget round
    shows up as the starting state of round 1.
    """
    if not 0.0 < eps < 1.0:
        raise ValueError(f"eps must lie strictly between 0 and 1, got {eps}")
    return BernoulliInstance(2, (
        round_spec(eps, 2, (1.0, 1.0)),
        round_spec(1.0, 1, (0.0, 0.0)),
    ))


@dataclass(frozen=True)
class RandomParams:
    n: int = 3
    T: int = 3
    c_range: tuple = (1, 3)
    v_range: tuple = (0.0, 1.0)
    q_range: tuple = (1.0, 1.0)
    p_range: tuple = (0.0, 1.0)


def gen_random(params: RandomParams, seed) -> BernoulliInstance:
    """Uniformly random instance; capacities are integers drawn inclusively."""
    lo_c, hi_c = params.c_range
    if params.n < 1 or params.T < 1:
        raise ValueError("n and T must be positive")
    if lo_c > hi_c or lo_c < 0:
        raise ValueError(f"empty or negative capacity range {params.c_range}")
    for name in ("v_range", "q_range", "p_range"):
        lo, hi = getattr(params, name)
        if lo > hi:
            raise ValueError(f"empty range {name}={(lo, hi)}")
    for name in ("q_range", "p_range"):
        lo, hi = getattr(params, name)
        if lo < 0.0 or hi > 1.0:
            raise ValueError(f"{name}={(lo, hi)} leaves [0, 1]")
    if params.v_range[0] < 0.0:
        raise ValueError("values must be non-negative")

    rng = np.random.default_rng(seed)
    rounds = []
    for _ in range(params.T):
        p = rng.uniform(*params.p_range)
        c = int(rng.integers(lo_c, hi_c + 1))
        values = rng.uniform(*params.v_range, size=params.n)
        q = rng.uniform(*params.q_range, size=params.n)
        rounds.append(RoundSpec(float(p), c, values, q))
    return BernoulliInstance(params.n, rounds)


def to_general(inst: BernoulliInstance) -> GeneralInstance:
    """Embed a Bernoulli instance into the general model.

    An arriving round keeps index 0; non-arrival becomes an all-zero,
    capacity-0 realization. Zero-probability realizations are dropped.
    """
    rounds = []
    zeros = (0.0,) * inst.n
    for r in inst.rounds:
        reals = []
        if r.p > 0.0:
            reals.append(Realization(r.p, r.c, r.values, r.q))
        if r.p < 1.0:
            reals.append(Realization(1.0 - r.p, 0, zeros, (1.0,) * inst.n))
        rounds.append(tuple(reals))
    return GeneralInstance(inst.n, rounds)


def as_general(inst: Instance) -> GeneralInstance:
    return to_general(inst) if isinstance(inst, BernoulliInstance) else inst


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

_OUTCOME_KEYS = {"p", "c", "values", "q"}


def to_dict(inst: Instance) -> dict:
    def outcome(r):
        return {"p": r.p, "c": r.c, "values": list(r.values), "q": list(r.q)}

    if isinstance(inst, BernoulliInstance):
        return {"schema": BERNOULLI_SCHEMA, "n": inst.n,
                "rounds": [outcome(r) for r in inst.rounds]}
    return {"schema": GENERAL_SCHEMA, "n": inst.n,
            "rounds": [{"realizations": [outcome(r) for r in reals]}
                       for reals in inst.rounds]}


def _warn_unknown(obj: dict, known: set, where: str):
    extra = sorted(set(obj) - known)
    if extra:
        warnings.warn(f"{where}: ignoring unknown fields {extra}", stacklevel=3)


def _outcome_from(d: dict, where: str):
    if not isinstance(d, dict):
        raise InstanceFormatError(f"{where}: expected an object")
    missing = _OUTCOME_KEYS - set(d)
    if missing:
        raise InstanceFormatError(f"{where}: missing keys {sorted(missing)}")
    _warn_unknown(d, _OUTCOME_KEYS, where)
    c = d["c"]
    if isinstance(c, float) and c.is_integer():
        c = int(c)
    return float(d["p"]), c, d["values"], d["q"]


def from_dict(doc: dict) -> Instance:
    if not isinstance(doc, dict):
        raise InstanceFormatError("instance document must be an object")
    schema = doc.get("schema")
    if schema not in (BERNOULLI_SCHEMA, GENERAL_SCHEMA):
        raise InstanceFormatError(
            f"unsupported schema {schema!r}; expected {BERNOULLI_SCHEMA!r} or {GENERAL_SCHEMA!r}")
    for key in ("n", "rounds"):
        if key not in doc:
            raise InstanceFormatError(f"missing required key {key!r}")
    _warn_unknown(doc, {"schema", "n", "rounds"}, "instance")
    n = doc["n"]
    if schema == BERNOULLI_SCHEMA:
        rounds = [RoundSpec(*_outcome_from(r, f"round {t}"))
                  for t, r in enumerate(doc["rounds"])]
        return BernoulliInstance(n, rounds)
    rounds = []
    for t, r in enumerate(doc["rounds"]):
        if not isinstance(r, dict) or "realizations" not in r:
            raise InstanceFormatError(f"round {t}: missing key 'realizations'")
        _warn_unknown(r, {"realizations"}, f"round {t}")
        rounds.append([Realization(*_outcome_from(x, f"round {t} realization {j}"))
                       for j, x in enumerate(r["realizations"])])
    return GeneralInstance(n, rounds)


def write(inst: Instance, path) -> None:
    """Write atomically as JSON; floats use shortest round-trip repr."""
    atomic_write_text(path, json.dumps(to_dict(inst), indent=2) + "\n")


def read(path) -> Instance:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise InstanceFormatError(f"{path}: not valid JSON ({exc})") from exc
    return from_dict(doc)
