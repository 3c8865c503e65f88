"""Comparison algorithms sharing the allocator's random-stream layout.

Both consume round rows of ``1 + 5n`` uniforms: slot 0 decides arrival, the
first block of ``n`` drives proposals, the last block success coins.  Run with
the same seed as the two-proposal algorithm, they therefore face identical
arrival sequences.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from capalloc.allocator import streams
from capalloc.instance import BernoulliInstance
from capalloc.lp import LpSolution


@dataclass
class BaselineResult:
    welfare: np.ndarray      # per trial
    alloc: np.ndarray        # (T, n) allocation counts
    trials: int

    @property
    def pair_freq(self) -> np.ndarray:
        return self.alloc / self.trials

    @property
    def mean_welfare(self) -> float:
        return float(self.welfare.mean())

    @property
    def welfare_ci(self) -> float:
        if self.trials < 2:
            return float("inf")
        return float(1.96 * self.welfare.std(ddof=1) / math.sqrt(self.trials))


def _seed_of(rng) -> int:
    if isinstance(rng, np.random.Generator):
        return int(rng.integers(2 ** 63))
    return int(rng or 0)


def _arrays(inst: BernoulliInstance):
    p = np.array([r.p for r in inst.rounds])
    c = np.array([r.c for r in inst.rounds], dtype=np.int64)
    v = np.array([r.values for r in inst.rounds])
    q = np.array([r.q for r in inst.rounds])
    return p, c, v, q


def _top(score: np.ndarray, eligible: np.ndarray, c: int) -> np.ndarray:
    """Per row, the ``c`` eligible entries with largest score (ties: lowest index)."""
    B, n = score.shape
    if c <= 0:
        return np.zeros((B, n), dtype=bool)
    key = np.where(eligible, score, -np.inf)
    order = np.argsort(-key, axis=1, kind="stable")[:, :c]
    pick = np.zeros((B, n), dtype=bool)
    np.put_along_axis(pick, order, True, axis=1)
    return pick & eligible


def _bdm_block(args):
    p, c, v, q, prop, seed, a, b = args
    T, n = v.shape
    U = streams.trial_uniforms(seed, streams.TRIALS, a, b, T, 1 + 5 * n)
    B = b - a
    avail = np.ones((B, n), dtype=bool)
    welfare = np.zeros(B)
    alloc = np.zeros((T, n), dtype=np.int64)
    for t in range(T):
        arrived = U[:, t, 0] < p[t]
        proposes = arrived[:, None] & avail & (U[:, t, 1:1 + n] < prop[t])
        win = _top(np.broadcast_to(v[t], (B, n)), proposes, int(c[t]))
        ok = win & (U[:, t, 1 + 4 * n:1 + 5 * n] < q[t])
        alloc[t] += win.sum(axis=0)
        for i in range(n):
            welfare += np.where(ok[:, i], v[t, i], 0.0)
        avail &= ~ok
    return welfare, alloc


def _greedy_block(args):
    p, c, v, q, seed, a, b = args
    T, n = v.shape
    U = streams.trial_uniforms(seed, streams.TRIALS, a, b, T, 1 + 5 * n)
    B = b - a
    avail = np.ones((B, n), dtype=bool)
    welfare = np.zeros(B)
    alloc = np.zeros((T, n), dtype=np.int64)
    for t in range(T):
        arrived = U[:, t, 0] < p[t]
        score = v[t] * q[t]
        elig = arrived[:, None] & avail & (score > 0.0)[None, :]
        win = _top(np.broadcast_to(score, (B, n)), elig, int(c[t]))
        ok = win & (U[:, t, 1 + 4 * n:1 + 5 * n] < q[t])
        alloc[t] += win.sum(axis=0)
        for i in range(n):
            welfare += np.where(ok[:, i], v[t, i], 0.0)
        avail &= ~ok
    return welfare, alloc


def _collect(fn, work, jobs, T, n, trials) -> BaselineResult:
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            parts = list(ex.map(fn, work))
    else:
        parts = [fn(w) for w in work]
    alloc = np.zeros((T, n), dtype=np.int64)
    for _, al in parts:
        alloc += al
    return BaselineResult(np.concatenate([w for w, _ in parts]), alloc, trials)


def bdm_proposal_probs(inst: BernoulliInstance, sol: LpSolution) -> np.ndarray:
    """``x / (p (1 - prefix x))`` per ``(t, i)``; zero where the LP mass is zero."""
    if sol.model.kind != "bernoulli":
        raise ValueError("run_bdm needs a solution of the Bernoulli LP")
    n, T = inst.n, inst.T
    x = np.array([[max(0.0, sol.get((i, t))) for i in range(n)] for t in range(T)])
    prefix = np.vstack([np.zeros(n), np.cumsum(x, axis=0)[:-1]]) if T else x
    p = np.array([r.p for r in inst.rounds])[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        prop = np.where(x > 0.0, x / (p * (1.0 - prefix)), 0.0)
    if (prop > 1.0 + 1e-7).any():
        raise ValueError("proposal probability exceeds 1; LP solution violates the online constraint")
    return np.clip(prop, 0.0, 1.0)


def run_bdm(inst: BernoulliInstance, sol: LpSolution, rng=0, trials: int = 1,
            jobs: int = 1) -> BaselineResult:
    """Capacity-generalized proposal algorithm: each available user proposes
    independently, the arriving resource keeps its ``c_t`` most valuable
    proposers."""
    if not isinstance(inst, BernoulliInstance):
        raise TypeError("run_bdm expects a BernoulliInstance")
    if any(qi < 1.0 for r in inst.rounds for qi in r.q):
        raise ValueError("run_bdm is defined for deterministic rewards (q = 1) only")
    if trials < 1:
        raise ValueError("trials must be positive")
    p, c, v, q = _arrays(inst)
    prop = bdm_proposal_probs(inst, sol)
    seed = _seed_of(rng)
    work = [(p, c, v, q, prop, seed, a, b) for a, b in streams.chunks(trials)]
    return _collect(_bdm_block, work, jobs, inst.T, inst.n, trials)


def run_greedy(inst: BernoulliInstance, rng=0, trials: int = 1, jobs: int = 1) -> BaselineResult:
    """Allocate the ``c_t`` available users with largest ``v q`` on every arrival."""
    if not isinstance(inst, BernoulliInstance):
        raise TypeError("run_greedy expects a BernoulliInstance")
    if trials < 1:
        raise ValueError("trials must be positive")
    p, c, v, q = _arrays(inst)
    seed = _seed_of(rng)
    work = [(p, c, v, q, seed, a, b) for a, b in streams.chunks(trials)]
    return _collect(_greedy_block, work, jobs, inst.T, inst.n, trials)
