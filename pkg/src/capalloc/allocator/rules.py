"""Acceptance probabilities, analysis constants and the dense round tables
consumed by the simulation kernels and the exact oracle."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from capalloc.instance import BernoulliInstance, GeneralInstance, to_general
from capalloc.lp import LpSolution, embed_solution

KAPPA = 0.0115
Y_TOL = 1e-9


@dataclass(frozen=True)
class DerivedConstants:
    kappa: float = KAPPA

    @property
    def tau(self) -> float:
        return (0.5 - self.kappa) / (0.5 + self.kappa)

    @property
    def gamma(self) -> float:
        k = self.kappa
        return 1.0 + (0.5 + k) ** 2 / (0.5 - k)

    @property
    def delta(self) -> float:
        k = self.kappa
        return self.gamma * ((0.5 + k) / (0.5 - k)) ** 2

    @property
    def g(self) -> float:
        return 2.0 * self.tau - 1.0 - self.delta * (0.5 + self.kappa)

    @property
    def rho_floor(self) -> float:
        """Lower bound on the second-proposal normalizer of any late pair."""
        return (0.5 - self.kappa) * self.g

    def f(self, z: float) -> float:
        a = 0.5 + self.kappa
        return 1.0 + z * a * a / (1.0 - z * a)


def alpha(y: float, kappa: float = KAPPA) -> float:
    """First-proposal acceptance probability for prefix mass ``y``."""
    if y > 1.0 + Y_TOL:
        raise ValueError(f"prefix mass {y!r} exceeds 1")
    a = 0.5 + kappa
    if y >= (0.5 - kappa) / a:
        return 1.0
    return min(1.0, a / (1.0 - a * y))


def beta_numerator(y: float, kappa: float = KAPPA) -> float:
    return (0.5 + kappa) * y - (0.5 - kappa)


def beta(y: float, rho: float, kappa: float = KAPPA) -> float:
    """Second-proposal acceptance probability for a late pair."""
    if not rho > 0.0:
        raise ValueError(f"rho must be positive, got {rho!r}")
    return min(1.0, max(0.0, beta_numerator(y, kappa)) / rho)


@dataclass
class Tables:
    """Per-round arrays over realizations ``j`` (padded to ``m``) and users."""

    n: int
    T: int
    m: int
    kappa: float
    probs: np.ndarray      # (T, m)
    cum_p: np.ndarray      # (T, m), last active entry forced to 1
    n_real: np.ndarray     # (T,)
    cap: np.ndarray        # (T, m) int64
    x: np.ndarray          # (T, m, n) LP mass
    marg: np.ndarray       # (T, m, n) first-proposal marginals x / p
    y: np.ndarray          # (T, n) success-weighted prefix mass
    alpha: np.ndarray      # (T, n)
    late: np.ndarray       # (T, n) uint8, alpha == 1
    beta: np.ndarray       # (T, m, n)
    q: np.ndarray          # (T, m, n)
    val: np.ndarray        # (T, m, n)

    @property
    def width(self) -> int:
        """Uniforms consumed per round by one trial."""
        return 1 + 5 * self.n

    def copy_with_beta(self, beta: np.ndarray) -> "Tables":
        out = Tables(**{k: getattr(self, k) for k in self.__dataclass_fields__})
        out.beta = np.ascontiguousarray(beta, dtype=np.float64)
        return out


def build_tables(inst, sol: LpSolution, kappa: float = KAPPA) -> Tables:
    """Dense tables for a Bernoulli instance (via its embedding) or a general one.

    ``sol`` must be indexed compatibly: ``(i, t)`` for Bernoulli instances,
    ``(i, t, j)`` for general ones.  Beta is left at zero.
    """
    if isinstance(inst, BernoulliInstance):
        if sol.model.kind == "bernoulli":
            sol = embed_solution(inst, sol)
        ginst = to_general(inst)
    else:
        ginst = inst
    n, T = ginst.n, ginst.T
    m = max(len(r) for r in ginst.rounds) if T else 1
    probs = np.zeros((T, m))
    cap = np.zeros((T, m), dtype=np.int64)
    x = np.zeros((T, m, n))
    q = np.zeros((T, m, n))
    val = np.zeros((T, m, n))
    n_real = np.zeros(T, dtype=np.int64)
    for t, reals in enumerate(ginst.rounds):
        n_real[t] = len(reals)
        for j, r in enumerate(reals):
            probs[t, j] = r.p
            cap[t, j] = r.c
            q[t, j] = r.q
            val[t, j] = r.values
            for i in range(n):
                x[t, j, i] = max(0.0, sol.get((i, t, j)))
    cum_p = np.cumsum(probs, axis=1)
    for t in range(T):
        active = np.nonzero(probs[t] > 0.0)[0]
        if active.size:
            cum_p[t, active[-1]:] = 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        marg = np.where(probs[:, :, None] > 0.0, x / probs[:, :, None], 0.0)
    marg = np.clip(marg, 0.0, 1.0)
    marg[cap == 0] = 0.0

    y = np.zeros((T, n))
    mass = (x * q).sum(axis=1)  # (T, n)
    if T > 1:
        y[1:] = np.cumsum(mass, axis=0)[:-1]
    y = np.minimum(y, 1.0)
    alph = np.vectorize(lambda v: alpha(v, kappa))(y) if y.size else y.copy()
    late = (alph >= 1.0).astype(np.uint8)
    c = lambda a: np.ascontiguousarray(a, dtype=np.float64)
    return Tables(n, T, m, kappa, c(probs), c(cum_p), n_real,
                  np.ascontiguousarray(cap, dtype=np.int64), c(x), c(marg), c(y),
                  c(alph), np.ascontiguousarray(late), np.zeros((T, m, n)), c(q), c(val))


def beta_from_rho(tables: Tables, rho: np.ndarray) -> np.ndarray:
    """Beta table from per-(t, j, i) normalizers; zero for early pairs."""
    num = np.maximum((0.5 + tables.kappa) * tables.y - (0.5 - tables.kappa), 0.0)
    num = np.broadcast_to(num[:, None, :], rho.shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        b = np.where(rho > 0.0, num / rho, np.where(num > 0.0, 1.0, 0.0))
    b = np.minimum(b, 1.0)
    return np.where(tables.late[:, None, :].astype(bool), b, 0.0)
