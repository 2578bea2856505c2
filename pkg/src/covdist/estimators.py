"""True, plug-in and consistent distance estimators between covariance matrices."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    BranchCutError,
    ConfigError,
    QuadratureError,
    RegimeError,
    SingularEvaluationError,
)
from .spectral import PopulationModel, SampleSpectrum
from .specfun import phi2


@dataclass(frozen=True)
class ScalarFn:
    """Scalar analytic function ``coef * f`` with its derivative.

    ``floor`` is the right end of the half line (-inf, floor] outside of
    which the function is analytic; -inf means entire. Keeping the
    coefficient apart from the base function lets integrals over the base
    be cached and rescaled.
    """

    name: str
    f: Callable
    df: Callable
    floor: float = -np.inf
    coef: float = 1.0

    def __call__(self, x):
        return self.coef * self.f(x)

    def deriv(self, x):
        return self.coef * self.df(x)

    def scaled(self, c: float) -> "ScalarFn":
        return replace(self, coef=self.coef * c)

    @property
    def is_constant(self) -> bool:
        return self.name == "1"

    def __repr__(self) -> str:
        return self.name if self.coef == 1 else f"{self.coef:g}*{self.name}"


def _ones(x):
    return np.ones_like(np.asarray(x))


def _zeros(x):
    return np.zeros_like(np.asarray(x))


ONE = ScalarFn("1", _ones, _zeros)
IDENT = ScalarFn("w", lambda x: np.asarray(x), _ones)
SQUARE = ScalarFn("w^2", lambda x: np.asarray(x) ** 2, lambda x: 2 * np.asarray(x))
INV = ScalarFn("1/w", lambda x: 1.0 / np.asarray(x), lambda x: -1.0 / np.asarray(x) ** 2, 0.0)
LOG = ScalarFn("log", np.log, lambda x: 1.0 / np.asarray(x), 0.0)
LOG2 = ScalarFn(
    "log^2", lambda x: np.log(x) ** 2, lambda x: 2 * np.log(x) / np.asarray(x), 0.0
)


@dataclass(frozen=True)
class MetricSpec:
    """A distance written as (1/M) sum_l tr[f1_l(R1) f2_l(R2)]."""

    name: str
    terms: Tuple[Tuple[ScalarFn, ScalarFn], ...]
    oversampled_only: bool = False

    @property
    def L(self) -> int:
        return len(self.terms)

    @property
    def floor(self) -> float:
        return max(max(a.floor, b.floor) for a, b in self.terms)


EU = MetricSpec("EU", ((SQUARE, ONE), (ONE, SQUARE), (IDENT.scaled(-2.0), IDENT)))
KL = MetricSpec(
    "KL", ((INV.scaled(0.5), IDENT), (IDENT.scaled(0.5), INV), (ONE.scaled(-1.0), ONE)), True
)
LE = MetricSpec("LE", ((LOG2, ONE), (LOG.scaled(-2.0), LOG), (ONE, LOG2)), True)

METRICS = {"EU": EU, "KL": KL, "LE": LE}


def get_metric(metric) -> MetricSpec:
    if isinstance(metric, MetricSpec):
        return metric
    try:
        return METRICS[str(metric).upper()]
    except KeyError:
        raise ConfigError(f"unknown metric {metric!r}") from None


@dataclass(frozen=True)
class DistanceEstimate:
    value: float
    metric: str
    kind: str
    M: int
    N1: Optional[int] = None
    N2: Optional[int] = None

    def __float__(self) -> float:
        return float(self.value)


def _check_pair(s1, s2):
    if s1.M != s2.M:
        raise ConfigError("dimension mismatch between the two inputs")


def _require_oversampled(*spectra: SampleSpectrum):
    for s in spectra:
        if not s.oversampled:
            raise RegimeError("this estimator needs N > M")


def overlap(s1: SampleSpectrum, s2: SampleSpectrum) -> np.ndarray:
    """Squared moduli |e1_k^H e2_m|^2 of the eigenvector inner products."""
    return np.abs(s1.E.conj().T @ s2.E) ** 2


def true_distance(m1: PopulationModel, m2: PopulationModel, metric) -> float:
    """(1/M) sum_l tr[f1_l(R1) f2_l(R2)] from the population eigendecompositions."""
    metric = get_metric(metric)
    if m1.M != m2.M:
        raise ConfigError("dimension mismatch between the two models")
    W = np.abs(m1.basis.conj().T @ m2.basis) ** 2
    l1, l2 = m1.eigenvalues, m2.eigenvalues
    total = sum(f1(l1) @ W @ f2(l2) for f1, f2 in metric.terms)
    return float(np.real(total)) / m1.M


def plugin_distance(s1: SampleSpectrum, s2: SampleSpectrum, metric) -> DistanceEstimate:
    """Distance evaluated on the two sample covariance matrices."""
    metric = get_metric(metric)
    _check_pair(s1, s2)
    if metric.oversampled_only:
        _require_oversampled(s1, s2)
    W = overlap(s1, s2)
    total = sum(f1(s1.lam) @ W @ f2(s2.lam) for f1, f2 in metric.terms)
    return DistanceEstimate(float(total) / s1.M, metric.name, "plug-in", s1.M, s1.N, s2.N)


def consistent_euclidean(s1: SampleSpectrum, s2: SampleSpectrum) -> DistanceEstimate:
    """(1/M) tr[(R1 - R2)^2] - tr^2[R1]/(M N1) - tr^2[R2]/(M N2)."""
    _check_pair(s1, s2)
    M = s1.M
    D = s1.matrix() - s2.matrix()
    val = (
        np.real(np.sum(D * D.conj())) / M
        - s1.lam.sum() ** 2 / (M * s1.N)
        - s2.lam.sum() ** 2 / (M * s2.N)
    )
    return DistanceEstimate(float(val), "EU", "consistent", M, s1.N, s2.N)


def consistent_kl(s1: SampleSpectrum, s2: SampleSpectrum) -> DistanceEstimate:
    """Symmetrized KL estimator with (1 - M/N) corrections on each inverse."""
    _check_pair(s1, s2)
    _require_oversampled(s1, s2)
    M = s1.M
    W = overlap(s1, s2)
    t12 = (1.0 / s1.lam) @ W @ s2.lam  # tr[R1^-1 R2]
    t21 = s1.lam @ W @ (1.0 / s2.lam)  # tr[R2^-1 R1]
    val = (1 - M / s1.N) * t12 / (2 * M) + (1 - M / s2.N) * t21 / (2 * M) - 1.0
    return DistanceEstimate(float(val), "KL", "consistent", M, s1.N, s2.N)


def le_beta(s: SampleSpectrum) -> np.ndarray:
    """Coefficients beta_k of the consistent estimate of log(R)."""
    _require_oversampled(s)
    if "le_beta" not in s.cache:
        s.cache["le_beta"] = _le_beta(s)
    return s.cache["le_beta"]


def _le_beta(s: SampleSpectrum) -> np.ndarray:
    lam, mu = s.lam, s.mu
    M = lam.size
    L = np.log(lam)
    dl = lam[None, :] - lam[:, None]  # dl[k, m] = lam_m - lam_k
    off = ~np.eye(M, dtype=bool)
    ratio = np.where(off, lam[:, None] / np.where(off, dl, 1.0), 0.0)
    a = 1.0 + ratio.sum(axis=1) - (mu[:, None] / (lam[None, :] - mu[:, None])).sum(axis=1)
    b = np.where(off, lam[None, :] / np.where(off, dl, 1.0) * L[None, :], 0.0).sum(axis=1)
    c = (mu[None, :] / (mu[None, :] - lam[:, None]) * np.log(mu)[None, :]).sum(axis=1)
    return a * L + (b - c) + 1.0


def le_alpha(s: SampleSpectrum) -> float:
    """Consistent estimate of (1/M) tr[log^2 R] for one sample set."""
    _require_oversampled(s)
    if "le_alpha" not in s.cache:
        s.cache["le_alpha"] = _le_alpha(s)
    return s.cache["le_alpha"]


def _le_alpha(s: SampleSpectrum) -> float:
    lam, mu, N = s.lam, s.mu, s.N
    M = lam.size
    cN = N / M - 1.0
    Ll, Lm = np.log(lam), np.log(mu)
    t1 = cN * np.sum((1 + Lm) ** 2 - (1 + Ll) ** 2)
    t2 = np.mean((1 + Ll) ** 2) - cN * np.log1p(-M / N) ** 2 + 1.0
    t3 = 2.0 / M * np.sum(phi2(mu[None, :] / lam[:, None]) - phi2(lam[None, :] / lam[:, None]))
    off = ~np.eye(M, dtype=bool)
    gap_l = np.abs(lam[:, None] - lam[None, :])
    inner_l = np.where(
        off, (Ll[None, :] - Ll[:, None]) * (Ll[:, None] - np.log(np.where(off, gap_l, 1.0))), 0.0
    )
    inner_m = (Lm[None, :] - Ll[:, None]) * (Ll[:, None] - np.log(np.abs(lam[:, None] - mu[None, :])))
    t4 = 2.0 / M * (inner_l.sum() - inner_m.sum())
    return float(t1 + t2 + t3 + t4)


def consistent_le(s1: SampleSpectrum, s2: SampleSpectrum) -> DistanceEstimate:
    """alpha1 + alpha2 - (2/M) sum_km beta1_k beta2_m |<e1_k, e2_m>|^2."""
    _check_pair(s1, s2)
    _require_oversampled(s1, s2)
    M = s1.M
    cross = le_beta(s1) @ overlap(s1, s2) @ le_beta(s2)
    val = le_alpha(s1) + le_alpha(s2) - 2.0 / M * cross
    return DistanceEstimate(float(val), "LE", "consistent", M, s1.N, s2.N)


CONSISTENT = {"EU": consistent_euclidean, "KL": consistent_kl, "LE": consistent_le}


def consistent_distance(s1: SampleSpectrum, s2: SampleSpectrum, metric) -> DistanceEstimate:
    return CONSISTENT[get_metric(metric).name](s1, s2)


# contour machinery


@dataclass(frozen=True)
class Contour:
    """Clockwise ellipse, optionally drawn in log coordinates.

    With ``log=False`` the nodes are z = c + a cos t - i b sin t. With
    ``log=True`` the same ellipse lives in the variable w = log z, which
    keeps the relative resolution uniform when the enclosed set spans
    several orders of magnitude and must avoid the origin.
    """

    center: float
    a: float
    b: float
    Q: int = 256
    log: bool = False

    def __post_init__(self):
        if self.Q < 64 or self.Q % 2:
            raise ConfigError("node count must be even and at least 64")
        if self.a <= 0 or self.b <= 0:
            raise ConfigError("semi-axes must be positive")
        if self.log and self.b >= np.pi:
            raise ConfigError("log-ellipse needs b < pi to stay simple")

    def with_nodes(self, Q: int) -> "Contour":
        return Contour(self.center, self.a, self.b, Q, self.log)

    def dilated(self, factor: float) -> "Contour":
        """Same center, semi-axes scaled by ``factor`` (in log coordinates for log contours)."""
        b = min(self.b * factor, 0.99 * np.pi) if self.log else self.b * factor
        return Contour(self.center, self.a * factor, b, self.Q, self.log)

    def nodes(self) -> Tuple[np.ndarray, np.ndarray]:
        """Nodes z_q and weights such that sum w_q g(z_q) ~ (1/2 pi j) oint g dz."""
        t = 2 * np.pi * (np.arange(self.Q) + 0.5) / self.Q
        w = self.center + self.a * np.cos(t) - 1j * self.b * np.sin(t)
        dw = -self.a * np.sin(t) - 1j * self.b * np.cos(t)
        if self.log:
            z = np.exp(w)
            dz = z * dw
        else:
            z, dz = w, dw
        return z, dz / (1j * self.Q)

    def real_extent(self) -> Tuple[float, float]:
        lo, hi = self.center - self.a, self.center + self.a
        return (np.exp(lo), np.exp(hi)) if self.log else (lo, hi)

    def encloses(self, x) -> np.ndarray:
        """Point-in-ellipse test (in log coordinates for log contours)."""
        x = np.asarray(x, dtype=complex)
        if self.log:
            x = np.log(x)
        return ((x.real - self.center) / self.a) ** 2 + (x.imag / self.b) ** 2 < 1.0


POLE_TOL = 1e-10


def guard_poles(contour: Contour, poles, retries: int = 5, factor: float = 1.03) -> Contour:
    """Dilate by 3% while a node lies within POLE_TOL (relative) of a pole."""
    poles = np.asarray(poles, dtype=complex).ravel()
    if poles.size == 0:
        return contour
    for _ in range(retries + 1):
        z, _ = contour.nodes()
        gap = np.abs(z[:, None] - poles[None, :])
        if not np.any(gap <= POLE_TOL * np.maximum(1.0, np.abs(poles))):
            return contour
        contour = contour.dilated(factor)
    raise SingularEvaluationError("contour nodes stay on a pole after 5 dilations")


def contour_through(lo: float, hi: float, Q: int = 256, log: bool = True, aspect=None) -> Contour:
    """Contour crossing the real axis at lo and hi."""
    if log:
        if lo <= 0:
            raise ConfigError("log contours must stay right of the origin")
        a = 0.5 * (np.log(hi) - np.log(lo))
        return Contour(0.5 * (np.log(hi) + np.log(lo)), a, min(aspect or 1.0, 3.0), Q, True)
    a = 0.5 * (hi - lo)
    return Contour(0.5 * (hi + lo), a, (aspect or 0.5) * a, Q, False)


def default_sample_contour(s: SampleSpectrum, Q: int = 256, log: Optional[bool] = None) -> Contour:
    """Contour enclosing all sample eigenvalues and mu roots.

    Oversampled spectra get a log-ellipse through 0.5 min(lam_1, mu_1) and
    2 lam_M; undersampled ones a plain ellipse through -0.5 lam_M and 2 lam_M
    so that the zero eigenvalues are enclosed.
    """
    top = 2.0 * s.lam[-1]
    if s.oversampled:
        lo = 0.5 * min(s.lam[0], s.mu[0])
        use_log = True if log is None else log
        return contour_through(lo, top, Q, log=use_log)
    return contour_through(-0.5 * s.lam[-1], top, Q, log=False)


def omega_hat(s: SampleSpectrum, z):
    """Sample estimate of omega(z) and its derivative.

    omega(z) = z / (1 - (1/N) tr[R Q(z)]) and
    omega'(z) = (1 - M/N + z^2 (1/N) tr Q(z)^2) / (1 - (1/N) tr[R Q(z)])^2,
    with Q(z) = (R - z I)^{-1} the sample resolvent.
    """
    z = np.asarray(z, dtype=complex)
    d = s.lam - z[..., None]
    if np.any(np.abs(d) < 1e-300):
        raise SingularEvaluationError("omega_hat evaluated at a sample eigenvalue")
    den = 1.0 - (s.lam / d).sum(axis=-1) / s.N
    if np.any(np.abs(den) < 1e-300):
        raise SingularEvaluationError("omega_hat evaluated at a mu root")
    w = z / den
    dw = (1.0 - s.M / s.N + z**2 * (1.0 / d**2).sum(axis=-1) / s.N) / den**2
    return w, dw


def _check_branch(fn: ScalarFn, w: np.ndarray):
    if np.isfinite(fn.floor):
        x = w - fn.floor
        dist = np.where(x.real > 0, np.abs(x.imag), np.abs(x))
        if np.any(dist <= 1e-8):
            raise BranchCutError(f"{fn.name} argument within 1e-8 of its cut")


def _term_weights(s: SampleSpectrum, fn: ScalarFn, contour: Contour) -> np.ndarray:
    """Per-eigenvector weights sum_q w_q f(omega(z_q)) h(z_q) / (lam_k - z_q)."""
    poles = s.lam if s.mu is None else np.concatenate([s.lam, s.mu])
    z, wq = guard_poles(contour, poles).nodes()
    om, dom = omega_hat(s, z)
    if fn.is_constant:
        fv = np.full(z.shape, complex(fn(1.0)))
    else:
        _check_branch(fn, om)
        fv = fn(om)
    h = z * dom / om
    return ((wq * fv * h)[:, None] / (s.lam[None, :] - z[:, None])).sum(axis=0)


def generic_contour_estimator(
    s1: SampleSpectrum,
    s2: SampleSpectrum,
    metric,
    contours: Optional[Sequence[Tuple[Contour, Contour]]] = None,
    rtol: float = 1e-8,
    qmax: int = 4096,
) -> DistanceEstimate:
    """Consistent estimator by double contour quadrature.

    Each term is (1/2 pi j)^2 oint oint f1(w1(z1)) f2(w2(z2))
    (1/M) tr[Q1(z1) Q2(z2)] h1(z1) h2(z2) dz1 dz2 with h(z) = z w'(z)/w(z).
    Writing the trace in the two eigenbases, the tensor-product trapezoid
    rule on the (z1, z2) grid is the bilinear form a1^T W a2 / M, where
    a_j holds the per-eigenvalue one-dimensional sums. Nodes double until
    the relative change drops below ``rtol``.
    """
    metric = get_metric(metric)
    _check_pair(s1, s2)
    if metric.oversampled_only:
        _require_oversampled(s1, s2)
    if contours is None:
        c1, c2 = default_sample_contour(s1), default_sample_contour(s2)
        contours = [(c1, c2)] * metric.L
    if len(contours) != metric.L:
        raise ConfigError("need one contour pair per term")
    W = overlap(s1, s2)
    M = s1.M
    total = 0.0
    for (f1, f2), (c1, c2) in zip(metric.terms, contours):
        prev = None
        Q = max(c1.Q, c2.Q)
        while True:
            a1 = _term_weights(s1, f1, c1.with_nodes(Q))
            a2 = _term_weights(s2, f2, c2.with_nodes(Q))
            val = a1 @ W @ a2 / M
            if prev is not None and abs(val - prev) <= rtol * max(abs(val), 1e-300):
                break
            if Q >= qmax:
                if prev is not None and abs(val - prev) <= rtol * max(abs(val), 1.0):
                    break
                raise QuadratureError(f"term {f1!r} x {f2!r} did not converge at Q={Q}")
            prev, Q = val, 2 * Q
        total += val
    return DistanceEstimate(float(np.real(total)), metric.name, "contour-oracle", M, s1.N, s2.N)


def contour_single(
    s: SampleSpectrum, fn: ScalarFn, contour: Optional[Contour] = None, rtol=1e-10, qmax=8192
) -> np.ndarray:
    """Weights b_k with (1/2 pi j) oint f(w(z)) h(z) Q(z) dz = sum_k b_k e_k e_k^H."""
    contour = contour or default_sample_contour(s)
    Q, prev = contour.Q, None
    while True:
        b = _term_weights(s, fn, contour.with_nodes(Q))
        if prev is not None and np.max(np.abs(b - prev)) <= rtol * np.max(np.abs(b)):
            return b
        if Q >= qmax:
            raise QuadratureError("single contour quadrature did not converge")
        prev, Q = b, 2 * Q
