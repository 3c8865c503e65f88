"""Pivotal sampling (Srinivasan's dependent rounding).

Fractional entries are paired in canonical left-to-right order: the running
"carrier" is pivoted against the next fractional entry until at most one
fractional entry remains, which is then rounded by a final coin.  Each pivot
consumes one uniform and the final rounding one more, so a vector of length
``n`` never needs more than ``n`` uniforms.  The compiled kernel and the
vectorized fallback in :mod:`capalloc.allocator` implement exactly the same
procedure on the same uniforms.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

# entries within EPS of 0 or 1 count as integral
EPS = 1e-12
CLAMP_TOL = 1e-9
MAX_EXACT_N = 20


@dataclass(frozen=True)
class MarginalVector:
    """Inclusion marginals ``m`` with a hard cap ``k`` on the subset size."""

    m: tuple
    k: int

    def __post_init__(self):
        vals = []
        for i, v in enumerate(self.m):
            v = float(v)
            if v < -CLAMP_TOL or v > 1.0 + CLAMP_TOL or v != v:
                raise ValueError(f"marginal {i} = {v!r} outside [0, 1]")
            vals.append(min(1.0, max(0.0, v)))
        if self.k < 0:
            raise ValueError(f"cap k must be non-negative, got {self.k}")
        if sum(vals) > self.k + CLAMP_TOL:
            raise ValueError(f"marginals sum to {sum(vals)!r} > k={self.k}")
        object.__setattr__(self, "m", tuple(vals))

    @property
    def n(self) -> int:
        return len(self.m)


def pivot_with_uniforms(m: Sequence[float], k: int, u: Sequence[float]) -> list:
    """Run the pivot procedure with pre-drawn uniforms; returns included indices."""
    chosen = []
    carrier = -1
    a = 0.0
    s = 0
    for i, b in enumerate(m):
        if b >= 1.0 - EPS:
            chosen.append(i)
            continue
        if b <= EPS:
            continue
        if carrier < 0:
            carrier, a = i, b
            continue
        w = u[s]
        s += 1
        tot = a + b
        if tot < 1.0 - EPS:
            if not w < a / tot:
                carrier = i
            a = tot
        else:
            rem = tot - 1.0
            if w < (1.0 - b) / (2.0 - tot):
                chosen.append(carrier)
                carrier = i
            else:
                chosen.append(i)
            a = rem
            if rem <= EPS:
                carrier = -1
    if carrier >= 0 and len(chosen) < k and u[s] < a:
        chosen.append(carrier)
    chosen.sort()
    return chosen


def sample(mv: MarginalVector, rng: np.random.Generator) -> frozenset:
    """Draw one subset; ``Pr[i in S] = m[i]`` and ``|S| <= k`` always."""
    u = rng.random(max(mv.n, 1))
    return frozenset(pivot_with_uniforms(mv.m, mv.k, u))


def subset_distribution(mv: MarginalVector) -> dict:
    """Exact law of :func:`sample` as ``{frozenset: probability}``.

    Enumerates the pivot tree, so it is limited to ``n <= 20``.
    """
    if mv.n > MAX_EXACT_N:
        raise ValueError(f"exact enumeration limited to n <= {MAX_EXACT_N}, got {mv.n}")
    out: dict = {}
    _walk(mv.m, mv.k, 0, (), -1, 0.0, 1.0, out)
    return out


def _walk(m, k, i, chosen, carrier, a, prob, out):
    n = len(m)
    while i < n:
        b = m[i]
        if b >= 1.0 - EPS:
            chosen = chosen + (i,)
        elif b > EPS:
            if carrier < 0:
                carrier, a = i, b
            else:
                tot = a + b
                if tot < 1.0 - EPS:
                    p_keep = a / tot
                    if p_keep > 0.0:
                        _walk(m, k, i + 1, chosen, carrier, tot, prob * p_keep, out)
                    if p_keep < 1.0:
                        _walk(m, k, i + 1, chosen, i, tot, prob * (1.0 - p_keep), out)
                else:
                    rem = tot - 1.0
                    p_old = (1.0 - b) / (2.0 - tot)
                    nxt = -1 if rem <= EPS else i
                    if p_old > 0.0:
                        _walk(m, k, i + 1, chosen + (carrier,), nxt, rem, prob * p_old, out)
                    nxt = -1 if rem <= EPS else carrier
                    if p_old < 1.0:
                        _walk(m, k, i + 1, chosen + (i,), nxt, rem, prob * (1.0 - p_old), out)
                return
        i += 1
    if carrier >= 0 and len(chosen) < k:
        _add(out, frozenset(chosen + (carrier,)), prob * a)
        _add(out, frozenset(chosen), prob * (1.0 - a))
    else:
        _add(out, frozenset(chosen), prob)


def _add(out, key, p):
    if p > 0.0:
        out[key] = out.get(key, 0.0) + p


def marginals_of(dist: dict, n: int) -> np.ndarray:
    out = np.zeros(n)
    for s, p in dist.items():
        for i in s:
            out[i] += p
    return out
