"""Probability of correctly clustering sample covariance matrices.

Clustering succeeds when every intra-cluster distance is below every
inter-cluster one. Splitting on which intra distance is the largest gives
disjoint events, each an orthant of a linear image of the distance vector.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from itertools import combinations
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import ndtr, ndtri
from scipy.stats import qmc

from .asymptotics import AsymptoticLaw, PairSystem, asymptotic_law
from .errors import ConfigError
from .estimators import MetricSpec, consistent_distance, get_metric, plugin_distance
from .spectral import PopulationModel, SeedLike, sample_gaussian, scm_spectrum, toeplitz_model

__all__ = [
    "ClusteringScenario",
    "Probability",
    "selection_matrices",
    "mvn_orthant",
    "success_probability",
    "gaussian_law_success",
    "empirical_success",
]


@dataclass(frozen=True)
class Probability:
    """Probability estimate with its standard error."""

    value: float
    error: float

    def __float__(self) -> float:
        return float(self.value)


@dataclass(frozen=True, eq=False)
class ClusteringScenario:
    """J population models with ground-truth groups and their sample counts."""

    models: Tuple[PopulationModel, ...]
    N: Tuple[int, ...]
    groups: Tuple[int, ...]
    metric: MetricSpec
    varsigma: int = 1

    def __post_init__(self):
        object.__setattr__(self, "models", tuple(self.models))
        object.__setattr__(self, "N", tuple(int(n) for n in self.N))
        object.__setattr__(self, "groups", tuple(int(g) for g in self.groups))
        object.__setattr__(self, "metric", get_metric(self.metric))
        J = len(self.models)
        if J < 4:
            raise ConfigError("clustering needs at least four models")
        if len(self.N) != J or len(self.groups) != J:
            raise ConfigError("one sample count and one group label per model")
        if not self.intra or not self.inter:
            raise ConfigError("need at least one intra- and one inter-cluster pair")
        for k in self.intra:
            i, j = self.pairs[k]
            if not np.allclose(self.models[i].R, self.models[j].R, rtol=1e-12, atol=1e-12):
                raise ConfigError(f"models {i} and {j} share a group but differ")

    @classmethod
    def toeplitz(cls, rhos: Sequence[float], M: int, c, metric, varsigma: int = 1):
        """Toeplitz models grouped by equal correlation, N_j = round(M / c_j)."""
        c = np.broadcast_to(np.asarray(c, dtype=float), (len(rhos),))
        cache = {}
        models, groups = [], []
        for rho in rhos:
            if rho not in cache:
                cache[rho] = (toeplitz_model(rho, M, varsigma), len(cache))
            models.append(cache[rho][0])
            groups.append(cache[rho][1])
        N = [int(round(M / cj)) for cj in c]
        return cls(models, N, groups, metric, varsigma)

    @property
    def J(self) -> int:
        return len(self.models)

    @property
    def pairs(self) -> List[Tuple[int, int]]:
        """All unordered pairs in lexicographic order; the distance-vector index set."""
        return list(combinations(range(self.J), 2))

    @property
    def intra(self) -> List[int]:
        return [k for k, (i, j) in enumerate(self.pairs) if self.groups[i] == self.groups[j]]

    @property
    def inter(self) -> List[int]:
        return [k for k, (i, j) in enumerate(self.pairs) if self.groups[i] != self.groups[j]]

    def system(self) -> PairSystem:
        return PairSystem(self.models, self.N, self.pairs, self.metric, self.varsigma)

    def law(self) -> AsymptoticLaw:
        return asymptotic_law(self.system())

    def is_success(self, d: np.ndarray) -> np.ndarray:
        """Strict max(intra) < min(inter) along the last axis."""
        d = np.asarray(d)
        return d[..., self.intra].max(axis=-1) < d[..., self.inter].min(axis=-1)


def selection_matrices(scenario: ClusteringScenario) -> List[np.ndarray]:
    """One matrix per intra distance k: rows d_i - d_k (other intra) and d_k - d_e (inter).

    Clustering succeeds with d_k the largest intra distance exactly when
    A d < 0 componentwise.
    """
    P = len(scenario.pairs)
    intra, inter = scenario.intra, scenario.inter
    out = []
    for k in intra:
        rows = []
        for i in intra:
            if i != k:
                r = np.zeros(P)
                r[i], r[k] = 1.0, -1.0
                rows.append(r)
        for e in inter:
            r = np.zeros(P)
            r[k], r[e] = 1.0, -1.0
            rows.append(r)
        out.append(np.array(rows))
    return out


def _floored(cov: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(cov)
    scale = max(np.trace(cov), 1e-300)
    if vals.min() < -1e-10 * scale:
        raise ConfigError("covariance is not positive semidefinite")
    vals = np.maximum(vals, 1e-12 * scale)
    return (vecs * vals) @ vecs.T


def _pivoted_cholesky(b: np.ndarray, cov: np.ndarray):
    """Cholesky factor with variables ordered by smallest conditional probability first."""
    n = len(b)
    S = cov.copy()
    b = b.copy()
    L = np.zeros((n, n))
    y = np.zeros(n)
    for k in range(n):
        var = np.diag(S)[k:] - np.sum(L[k:, :k] ** 2, axis=1)
        sd = np.sqrt(np.maximum(var, 1e-300))
        cond = (b[k:] - L[k:, :k] @ y[:k]) / sd
        p = k + int(np.argmin(cond))
        if p != k:
            b[[k, p]] = b[[p, k]]
            S[[k, p], :] = S[[p, k], :]
            S[:, [k, p]] = S[:, [p, k]]
            L[[k, p], :] = L[[p, k], :]
        L[k, k] = np.sqrt(max(S[k, k] - np.sum(L[k, :k] ** 2), 1e-300))
        for i in range(k + 1, n):
            L[i, k] = (S[i, k] - L[i, :k] @ L[k, :k]) / L[k, k]
        # expected value of the truncated standard normal below the current limit
        t = (b[k] - L[k, :k] @ y[:k]) / L[k, k]
        y[k] = -np.exp(-0.5 * t * t) / (np.sqrt(2 * np.pi) * max(ndtr(t), 1e-300))
    return b, L


def _genz_batch(b: np.ndarray, L: np.ndarray, u: np.ndarray) -> np.ndarray:
    n = len(b)
    m = u.shape[0]
    y = np.zeros((m, n))
    f = np.full(m, ndtr(b[0] / L[0, 0]))
    e = f.copy()
    for i in range(1, n):
        y[:, i - 1] = ndtri(np.clip(u[:, i - 1] * e, 1e-300, 1 - 1e-16))
        e = ndtr((b[i] - y[:, :i] @ L[i, :i]) / L[i, i])
        f = f * e
    return f


def mvn_orthant(
    mean, cov, randomizations: int = 8, m: int = 13, seed: SeedLike = 0, target: float = 1e-3
) -> Probability:
    """P(X < 0 componentwise) for X ~ N(mean, cov).

    Genz's sequential conditioning with variable reordering, evaluated by
    randomized quasi-Monte Carlo over scrambled Sobol points. The point set
    doubles until the standard error across randomizations meets ``target``
    or reaches 2**18 points.
    """
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    n = len(mean)
    if cov.shape != (n, n) or not np.allclose(cov, cov.T, rtol=1e-10, atol=1e-14):
        raise ConfigError("covariance must be a symmetric n-by-n matrix")
    cov = _floored(cov)
    b, L = _pivoted_cholesky(-mean, cov)
    if n == 1:
        return Probability(float(ndtr(b[0] / L[0, 0])), 0.0)
    rng = np.random.default_rng(seed)
    while True:
        est = np.empty(randomizations)
        for r in range(randomizations):
            u = qmc.Sobol(n - 1, scramble=True, seed=rng).random_base2(m)
            est[r] = _genz_batch(b, L, u).mean()
        err = est.std(ddof=1) / np.sqrt(randomizations)
        if err <= target or m >= 18:
            return Probability(float(est.mean()), float(err))
        m += 1


def success_probability(law: AsymptoticLaw, scenario: ClusteringScenario, **orthant_kw) -> Probability:
    """Gaussian-approximation probability of correct clustering, clipped to [0, 1]."""
    if len(law.d) != len(scenario.pairs):
        raise ConfigError("law must cover every pair of the scenario")
    loc = law.loc
    cov = law.cov / law.M**2
    total, var = 0.0, 0.0
    for A in selection_matrices(scenario):
        p = mvn_orthant(A @ loc, A @ cov @ A.T, **orthant_kw)
        total += p.value
        var += p.error**2
    return Probability(float(min(max(total, 0.0), 1.0)), float(np.sqrt(var)))


def gaussian_law_success(
    law: AsymptoticLaw, scenario: ClusteringScenario, draws: int = 100_000, seed: SeedLike = 0
) -> Probability:
    """Success frequency over draws of the Gaussian law of the distance vector."""
    rng = np.random.default_rng(seed)
    d = rng.multivariate_normal(law.loc, law.cov / law.M**2, size=draws, method="eigh")
    p = scenario.is_success(d).mean()
    return Probability(float(p), float(np.sqrt(p * (1 - p) / draws)))


def empirical_success(
    scenario: ClusteringScenario,
    trials: int,
    kind: str = "consistent",
    seed: SeedLike = 0,
    return_distances: bool = False,
    threads: int = 1,
):
    """Frequency of correct clustering over fresh Gaussian data sets.

    Each trial draws every model's samples from its own child seed, so the
    result does not depend on how trials are scheduled.
    """
    if trials < 1:
        raise ConfigError("trials must be at least 1")
    estimator = {"consistent": consistent_distance, "plugin": plugin_distance}.get(kind)
    if estimator is None:
        raise ConfigError(f"unknown estimator kind {kind!r}")
    if isinstance(seed, np.random.Generator):
        seed = int(seed.integers(2**63))
    children = np.random.SeedSequence(seed).spawn(trials)
    pairs = scenario.pairs

    def one(ss):
        rng = np.random.default_rng(ss)
        spectra = [scm_spectrum(sample_gaussian(m, n, rng)) for m, n in zip(scenario.models, scenario.N)]
        return [estimator(spectra[i], spectra[j], scenario.metric).value for i, j in pairs]

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            D = np.array(list(pool.map(one, children)))
    else:
        D = np.array([one(ss) for ss in children])
    wins = int(scenario.is_success(D).sum())
    p = wins / trials
    out = Probability(p, float(np.sqrt(p * (1 - p) / trials)))
    return (out, D) if return_distances else out
