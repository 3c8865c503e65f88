"""The two-proposal online rounding algorithm.

Three ways to obtain the second-proposal normalizers:

* ``exact``   -- from the exact forward oracle (tiny instances only),
* ``sampled`` -- empirical averages over simulated prefixes, with the
  constant lowered to ``kappa - epsilon``,

and the same code path serves Bernoulli instances (through their general
embedding) and general finite-support instances.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from capalloc.allocator import _fallback, streams
from capalloc.allocator.rules import KAPPA, Tables, beta_from_rho, build_tables
from capalloc.instance import BernoulliInstance, GeneralInstance
from capalloc.lp import LpSolution, check_feasibility

log = logging.getLogger(__name__)

try:
    if os.environ.get("CAPALLOC_KERNEL", "").lower() in ("python", "fallback"):
        raise ImportError("compiled kernel disabled by CAPALLOC_KERNEL")
    from capalloc.allocator import _kernel
except ImportError:
    _kernel = None

BACKEND = "compiled" if _kernel is not None else "python"

EXACT_MAX_N = 6
EXACT_MAX_T = 6
DEFAULT_SAMPLES = 10_000
FEAS_CHECK_TOL = 1e-7


class ExactLimitError(ValueError):
    """Instance too large for the exact normalizer engine."""


@dataclass(frozen=True)
class AlgoConfig:
    kappa: float = KAPPA
    epsilon: float = 0.001
    rho_mode: str = "exact"          # "exact" | "sampled"
    sample_count_override: Optional[int] = None
    use_theoretical_sample_count: bool = False
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.kappa < 0.5:
            raise ValueError(f"kappa must lie in (0, 0.5), got {self.kappa}")
        if self.epsilon < 0.0:
            raise ValueError("epsilon must be non-negative")
        if self.rho_mode not in ("exact", "sampled"):
            raise ValueError(f"unknown rho_mode {self.rho_mode!r}")
        if self.rho_mode == "sampled" and not 0.0 < self.kappa - self.epsilon:
            raise ValueError("kappa - epsilon must be positive")
        if self.sample_count_override is not None and self.sample_count_override < 1:
            raise ValueError("sample_count_override must be a positive integer")

    @property
    def effective_kappa(self) -> float:
        return self.kappa - self.epsilon if self.rho_mode == "sampled" else self.kappa


def theoretical_sample_count(n: int, T: int, epsilon: float, kappa: float) -> int:
    """Sample size with the Chernoff guarantee; astronomically large in practice."""
    return int(np.ceil(50 * n * T * (epsilon / (400 * T)) ** -2 * kappa ** -2))


def sample_count(cfg: AlgoConfig, n: int, T: int) -> int:
    if cfg.sample_count_override is not None:
        return int(cfg.sample_count_override)
    if cfg.use_theoretical_sample_count:
        return theoretical_sample_count(n, T, cfg.epsilon, cfg.effective_kappa)
    return DEFAULT_SAMPLES


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------

def new_counts(tb: Tables) -> dict:
    shape = (tb.T, tb.m, tb.n)
    return {"cnt1": np.zeros(shape, dtype=np.int64), "cnt2": np.zeros(shape, dtype=np.int64),
            "succ": np.zeros(shape, dtype=np.int64),
            "realized": np.zeros((tb.T, tb.m), dtype=np.int64)}


def run_block(tb: Tables, U: np.ndarray, stop_round: Optional[int] = None,
              counts: Optional[dict] = None, sigma_cnt=None, backend: Optional[str] = None):
    """Dispatch one batch of trials to the compiled kernel or the fallback."""
    if stop_round is None:
        stop_round = tb.T
    if counts is None:
        counts = new_counts(tb)
    welfare = np.zeros(U.shape[0])
    U = np.ascontiguousarray(U, dtype=np.float64)
    use = backend or BACKEND
    if use == "compiled":
        if _kernel is None:
            raise RuntimeError("compiled kernel is not available")
        v = _kernel.run_block(tb, U, stop_round, counts["cnt1"], counts["cnt2"],
                              counts["succ"], counts["realized"], welfare, sigma_cnt)
    else:
        v = _fallback.run_block(tb, U, stop_round, counts["cnt1"], counts["cnt2"],
                                counts["succ"], counts["realized"], welfare, sigma_cnt)
    if v:
        raise AssertionError(f"{v} rounds exceeded capacity")
    return counts, welfare


# ---------------------------------------------------------------------------
# normalizers
# ---------------------------------------------------------------------------

class SigmaCache:
    """Lazily filled estimates of the second-proposal normalizers.

    Keyed by ``(i, t, j)``; one cache belongs to one experiment (LP solution
    plus configuration) and is reused across all its trials.
    """

    def __init__(self, tables: Tables, num_samples: int, seed: int):
        self.tables = tables.copy_with_beta(np.zeros_like(tables.beta))
        self.num_samples = int(num_samples)
        self.seed = int(seed)
        self.values: dict = {}
        self.filled_rounds: set = set()
        self.simulations = 0          # number of estimation batches actually run

    def needs(self, t: int) -> bool:
        tb = self.tables
        return bool((tb.late[t][None, :].astype(bool) & (tb.marg[t] > 0.0)).any())

    def fill_round(self, t: int) -> None:
        if t in self.filled_rounds:
            return
        for tp in range(t):
            self.fill_round(tp)
        tb = self.tables
        if self.needs(t):
            cmax = int(tb.cap[t].max())
            sig = np.zeros((tb.m, tb.n, cmax + 1), dtype=np.int64)
            done = 0
            for a, b in streams.chunks(self.num_samples):
                U = streams.trial_uniforms(self.seed, (streams.SIGMA, t), a, b, tb.T, tb.width)
                run_block(tb, U, stop_round=t, sigma_cnt=sig)
                done += b - a
            self.simulations += 1
            rho = np.zeros((tb.m, tb.n))
            for j in range(int(tb.n_real[t])):
                c = int(tb.cap[t, j])
                if c == 0:
                    continue
                weights = 1.0 - np.arange(cmax + 1) / c
                rho[j] = (sig[j] * weights[None, :]).sum(axis=1) / done
            full = np.zeros_like(tb.beta)
            full[t] = rho
            tb.beta[t] = beta_from_rho(tb, full)[t]
            for j in range(int(tb.n_real[t])):
                for i in range(tb.n):
                    if tb.late[t, i]:
                        self.values[(i, t, j)] = float(rho[j, i])
        self.filled_rounds.add(t)

    def fill_all(self) -> Tables:
        for t in range(self.tables.T):
            self.fill_round(t)
        return self.tables


def exact_tables(tables: Tables) -> tuple:
    """Tables with exact betas, plus the oracle report that produced them."""
    from capalloc.oracles import exact_forward

    if tables.n > EXACT_MAX_N or tables.T > EXACT_MAX_T:
        raise ExactLimitError(
            f"exact mode supports n <= {EXACT_MAX_N} and T <= {EXACT_MAX_T}; "
            f"got n={tables.n}, T={tables.T}")
    rep = exact_forward(tables)
    return tables.copy_with_beta(rep.beta), rep


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------

def _check_solution(inst, sol: LpSolution):
    if sol.status != "optimal":
        raise ValueError(f"LP solution has status {sol.status!r}")
    if sol.model.n != inst.n or sol.model.T != inst.T:
        raise ValueError("LP solution does not match the instance dimensions")
    bad = check_feasibility(sol, sol.model, FEAS_CHECK_TOL)
    if bad:
        raise ValueError(f"LP solution is infeasible: {bad[:3]}")


def _fingerprint(tables: Tables, cfg: AlgoConfig) -> str:
    h = hashlib.sha256()
    h.update(tables.x.tobytes())
    h.update(tables.probs.tobytes())
    h.update(json.dumps([cfg.kappa, cfg.epsilon, cfg.rho_mode, cfg.sample_count_override,
                         cfg.use_theoretical_sample_count, cfg.seed]).encode())
    return h.hexdigest()[:16]


@dataclass
class Experiment:
    """An LP solution bound to a configuration, ready to simulate."""

    inst: object
    sol: LpSolution
    cfg: AlgoConfig
    tables: Tables
    cache: Optional[SigmaCache] = None
    report: object = None
    fingerprint: str = ""

    @property
    def bernoulli(self) -> bool:
        return isinstance(self.inst, BernoulliInstance)


def prepare(inst, sol: LpSolution, cfg: AlgoConfig = AlgoConfig(),
            cache: Optional[SigmaCache] = None) -> Experiment:
    _check_solution(inst, sol)
    base = build_tables(inst, sol, cfg.effective_kappa)
    fp = _fingerprint(base, cfg)
    if cfg.rho_mode == "exact":
        tables, rep = exact_tables(base)
        return Experiment(inst, sol, cfg, tables, None, rep, fp)
    if cache is None:
        cache = SigmaCache(base, sample_count(cfg, inst.n, inst.T), cfg.seed)
        cache.fingerprint = fp
    elif getattr(cache, "fingerprint", fp) != fp:
        raise ValueError("sigma cache belongs to a different experiment")
    tables = cache.fill_all()
    return Experiment(inst, sol, cfg, tables, cache, None, fp)


@dataclass
class SimulationResult:
    trials: int
    seed: int
    cnt1: np.ndarray
    cnt2: np.ndarray
    succ: np.ndarray
    realized: np.ndarray
    welfare: np.ndarray
    backend: str = BACKEND

    @property
    def alloc_freq(self) -> np.ndarray:
        """Per ``(t, j, i)`` frequency of allocation (either proposal)."""
        return (self.cnt1 + self.cnt2) / self.trials

    def pair_freq(self) -> np.ndarray:
        """Per ``(t, i)`` allocation frequency summed over realizations."""
        return self.alloc_freq.sum(axis=1)

    @property
    def mean_welfare(self) -> float:
        return float(self.welfare.mean())

    @property
    def welfare_ci(self) -> float:
        if self.trials < 2:
            return float("inf")
        return float(1.96 * self.welfare.std(ddof=1) / np.sqrt(self.trials))


def _simulate_range(args):
    tb, seed, a, b, backend = args
    U = streams.trial_uniforms(seed, streams.TRIALS, a, b, tb.T, tb.width)
    counts, welfare = run_block(tb, U, backend=backend)
    return counts, welfare


def simulate_tables(tb: Tables, trials: int, seed: int, jobs: int = 1,
                    backend: Optional[str] = None) -> SimulationResult:
    if trials < 1:
        raise ValueError("trials must be positive")
    work = [(tb, seed, a, b, backend) for a, b in streams.chunks(trials)]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            parts = list(ex.map(_simulate_range, work))
    else:
        parts = [_simulate_range(w) for w in work]
    total = new_counts(tb)
    for counts, _ in parts:
        for k in total:
            total[k] += counts[k]
    welfare = np.concatenate([w for _, w in parts])
    return SimulationResult(trials, seed, total["cnt1"], total["cnt2"], total["succ"],
                            total["realized"], welfare, backend or BACKEND)


def simulate(exp: Experiment, trials: int, seed: int, jobs: int = 1,
             backend: Optional[str] = None) -> SimulationResult:
    """Run ``trials`` independent executions; trial ``k`` always uses the same stream."""
    return simulate_tables(exp.tables, trials, seed, jobs, backend)


# ---------------------------------------------------------------------------
# single executions
# ---------------------------------------------------------------------------

@dataclass
class RoundTrace:
    t: int
    realization: Optional[int]
    arrived: bool
    capacity: int
    fp: tuple = ()
    alpha_coins: dict = field(default_factory=dict)
    a_t: int = 0
    sp: tuple = ()
    beta_coins: dict = field(default_factory=dict)
    first: tuple = ()
    second: tuple = ()
    successes: tuple = ()
    welfare: float = 0.0

    @property
    def allocated(self) -> tuple:
        return tuple(sorted(self.first + self.second))


@dataclass
class RunTrace:
    rounds: list
    welfare: float

    def records(self) -> list:
        """Line-delimited ``(round, event, payload)`` records."""
        out = []
        for r in self.rounds:
            out.append({"round": r.t, "event": "arrival",
                        "payload": {"arrived": r.arrived, "realization": r.realization,
                                    "capacity": r.capacity}})
            if not r.arrived:
                continue
            out.append({"round": r.t, "event": "first_proposal",
                        "payload": {"users": list(r.fp),
                                    "alpha_coins": {str(k): v for k, v in r.alpha_coins.items()},
                                    "allocated": list(r.first), "A_t": r.a_t}})
            out.append({"round": r.t, "event": "second_proposal",
                        "payload": {"users": list(r.sp),
                                    "beta_coins": {str(k): v for k, v in r.beta_coins.items()},
                                    "allocated": list(r.second)}})
            out.append({"round": r.t, "event": "outcome",
                        "payload": {"successes": list(r.successes), "welfare": r.welfare}})
        return out

    def to_jsonl(self) -> str:
        return "".join(json.dumps(rec) + "\n" for rec in self.records())


def trace_with_uniforms(exp: Experiment, U: np.ndarray) -> RunTrace:
    """Replay one execution on a ``(T, 1 + 5n)`` uniform row block."""
    tb = exp.tables
    rec: list = []
    counts = new_counts(tb)
    welfare = np.zeros(1)
    v = _fallback.run_block(tb, np.ascontiguousarray(U[None], dtype=np.float64), tb.T,
                            counts["cnt1"], counts["cnt2"], counts["succ"],
                            counts["realized"], welfare, None, record=rec)
    assert v == 0
    n = tb.n
    rounds = []
    for t, r in enumerate(rec):
        j = int(r["j"][0])
        if exp.bernoulli:
            arrived = exp.inst.rounds[t].p > 0.0 and j == 0
            realization = None
        else:
            arrived = True
            realization = j
        rt = RoundTrace(t, realization, arrived, int(tb.cap[t, j]))
        if j in r:
            d = r[j]
            fp = np.nonzero(d["fp"][0])[0]
            rt.fp = tuple(int(i) for i in fp)
            rt.alpha_coins = {int(i): bool(d["alpha_u"][0, i] < tb.alpha[t, i])
                              for i in fp if _avail_before(rec, t, i)}
            rt.first = tuple(int(i) for i in np.nonzero(d["a1"][0])[0])
            rt.a_t = len(rt.first)
            sp = np.nonzero(d["sp"][0])[0]
            rt.sp = tuple(int(i) for i in sp)
            rt.beta_coins = {int(i): bool(d["beta_u"][0, i] < tb.beta[t, j, i])
                             for i in sp
                             if tb.late[t, i] and _avail_before(rec, t, i) and not d["a1"][0, i]}
            rt.second = tuple(int(i) for i in np.nonzero(d["a2"][0])[0])
            rt.successes = tuple(int(i) for i in np.nonzero(d["ok"][0])[0])
            rt.welfare = float(sum(tb.val[t, j, i] for i in rt.successes))
        rounds.append(rt)
    return RunTrace(rounds, float(welfare[0]))


def _avail_before(rec, t, i) -> bool:
    for r in rec[:t]:
        j = int(r["j"][0])
        if j in r and r[j]["ok"][0, i]:
            return False
    return True


def run(inst, sol: LpSolution, cfg: AlgoConfig = AlgoConfig(), rng=None,
        exp: Optional[Experiment] = None) -> RunTrace:
    """One execution with normalizers from ``cfg.rho_mode``."""
    if exp is None:
        exp = prepare(inst, sol, cfg)
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    U = rng.random((exp.tables.T, exp.tables.width))
    return trace_with_uniforms(exp, U)


def run_sampled(inst, sol: LpSolution, cfg: AlgoConfig = AlgoConfig(rho_mode="sampled"),
                rng=None, cache: Optional[SigmaCache] = None) -> RunTrace:
    if cfg.rho_mode != "sampled":
        raise ValueError("run_sampled requires rho_mode='sampled'")
    return run(inst, sol, cfg, rng, exp=prepare(inst, sol, cfg, cache))


def run_general(inst: GeneralInstance, sol: LpSolution, cfg: AlgoConfig = AlgoConfig(),
                rng=None) -> RunTrace:
    if not isinstance(inst, GeneralInstance):
        raise TypeError("run_general expects a GeneralInstance")
    if sol.model.kind != "general":
        raise ValueError("run_general needs a solution of the general LP")
    needs_stochastic = any(qi < 1.0 for reals in inst.rounds for r in reals for qi in r.q)
    if needs_stochastic and not sol.model.stochastic:
        raise ValueError("instance has success probabilities below one; "
                         "solve the stochastic general LP")
    return run(inst, sol, cfg, rng)
