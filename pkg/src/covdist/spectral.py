"""Covariance models, Gaussian data, sample spectra and root finders."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy.linalg import toeplitz

from .errors import (
    ClusterOverlapError,
    ConfigError,
    DegenerateSpectrumError,
    NumericalError,
    RegimeError,
    SingularEvaluationError,
)

SeedLike = Union[int, Sequence[int], np.random.SeedSequence, None]

CLUSTER_TOL = 1e-8
TIE_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class PopulationModel:
    """A known covariance matrix together with its atomic spectral data.

    Attributes
    ----------
    R : ndarray, shape (M, M)
        Covariance matrix.
    gammas : ndarray, shape (Mbar,)
        Distinct eigenvalues in ascending order.
    mult : ndarray of int, shape (Mbar,)
        Multiplicity of each distinct eigenvalue.
    basis : ndarray, shape (M, M)
        Orthonormal eigenvectors, grouped by atom in ascending order.
    varsigma : int
        1 for real data, 0 for circularly symmetric complex data.
    """

    R: np.ndarray
    gammas: np.ndarray
    mult: np.ndarray
    basis: np.ndarray
    varsigma: int = 1

    @property
    def M(self) -> int:
        return self.R.shape[0]

    @property
    def Mbar(self) -> int:
        return self.gammas.size

    @property
    def eigenvalues(self) -> np.ndarray:
        """Full eigenvalue list aligned with the columns of ``basis``."""
        return np.repeat(self.gammas, self.mult)

    @property
    def labels(self) -> np.ndarray:
        """Atom index of each column of ``basis``."""
        return np.repeat(np.arange(self.Mbar), self.mult)

    def projection(self, m: int) -> np.ndarray:
        E = self.basis[:, self.labels == m]
        return E @ E.conj().T

    def matrix_function(self, f) -> np.ndarray:
        """Return f(R) built from the atoms."""
        vals = np.asarray(f(self.gammas))
        E = self.basis * np.repeat(vals, self.mult)[None, :]
        return E @ self.basis.conj().T

    @classmethod
    def from_matrix(
        cls, R: np.ndarray, varsigma: int = 1, tol: float = CLUSTER_TOL
    ) -> "PopulationModel":
        """Eigendecompose ``R`` and merge eigenvalues closer than ``tol * max``."""
        R = np.asarray(R)
        if R.ndim != 2 or R.shape[0] != R.shape[1]:
            raise ConfigError("covariance must be a square matrix")
        if varsigma not in (0, 1):
            raise ConfigError("varsigma must be 0 (complex) or 1 (real)")
        R = 0.5 * (R + R.conj().T)
        lam, E = np.linalg.eigh(R)
        if lam[0] <= 0:
            raise NumericalError("covariance matrix is not positive definite")
        gap = np.diff(lam) > tol * lam[-1]
        starts = np.concatenate([[0], np.flatnonzero(gap) + 1])
        ends = np.concatenate([starts[1:], [lam.size]])
        gammas = np.array([lam[s:e].mean() for s, e in zip(starts, ends)])
        mult = (ends - starts).astype(int)
        return cls(R=R, gammas=gammas, mult=mult, basis=E, varsigma=varsigma)


def toeplitz_model(rho: float, M: int, varsigma: int = 1) -> PopulationModel:
    """Symmetric Toeplitz covariance with entries rho**|i-j|."""
    if not -1.0 < rho < 1.0:
        raise ConfigError("Toeplitz parameter must satisfy |rho| < 1")
    if M < 1:
        raise ConfigError("dimension must be positive")
    R = toeplitz(rho ** np.arange(M, dtype=float))
    return PopulationModel.from_matrix(R, varsigma=varsigma)


def sample_model(s: "SampleSpectrum", varsigma: int = 1) -> PopulationModel:
    """Population model whose atoms are the sample eigenvalues of ``s``.

    Exploratory only: feeding it to the asymptotic law gives a rough,
    non-rigorous estimate of the fluctuations when the true covariances are
    unknown.
    """
    return PopulationModel.from_matrix(s.matrix(), varsigma=varsigma)


def make_rng(seed: SeedLike) -> np.random.Generator:
    """Generator for a seed or a tuple of integers (master, experiment, trial)."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True, eq=False)
class SampleSet:
    """Observation matrix Y with N columns of dimension M."""

    Y: np.ndarray
    seed: object = None

    @property
    def M(self) -> int:
        return self.Y.shape[0]

    @property
    def N(self) -> int:
        return self.Y.shape[1]


def sample_gaussian(model: PopulationModel, N: int, seed: SeedLike = None) -> SampleSet:
    """Draw Y = R^{1/2} X with unit-variance Gaussian X (complex when varsigma=0)."""
    if N < 1:
        raise ConfigError("need at least one observation")
    rng = make_rng(seed)
    M = model.M
    if model.varsigma == 1:
        X = rng.standard_normal((M, N))
    else:
        X = (rng.standard_normal((M, N)) + 1j * rng.standard_normal((M, N))) / np.sqrt(2)
    root = model.matrix_function(np.sqrt)
    return SampleSet(Y=root @ X, seed=seed)


@dataclass(frozen=True, eq=False)
class SampleSpectrum:
    """Eigen-decomposition of one sample covariance matrix.

    ``mu`` holds the roots of (1/N) sum_k lam_k / (lam_k - mu) = 1 and is
    present only in the oversampled regime N > M.
    """

    lam: np.ndarray
    E: np.ndarray
    N: int
    mu: Optional[np.ndarray] = field(default=None)
    # per-set derived quantities reused across every pair the set enters
    cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    @property
    def M(self) -> int:
        return self.lam.size

    @property
    def oversampled(self) -> bool:
        return self.N > self.M

    def matrix(self) -> np.ndarray:
        if "matrix" not in self.cache:
            self.cache["matrix"] = (self.E * self.lam) @ self.E.conj().T
        return self.cache["matrix"]

    def matrix_function(self, f) -> np.ndarray:
        return (self.E * f(self.lam)) @ self.E.conj().T


def spectrum_from_eig(lam: np.ndarray, E: np.ndarray, N: int) -> SampleSpectrum:
    """Wrap a known eigen-decomposition, attaching the mu roots when N > M."""
    lam = np.asarray(lam, dtype=float)
    order = np.argsort(lam)
    lam = lam[order]
    E = np.asarray(E)[:, order]
    mu = mu_roots(lam, N) if N > lam.size else None
    return SampleSpectrum(lam=lam, E=E, N=int(N), mu=mu)


def scm_spectrum(data: Union[SampleSet, np.ndarray]) -> SampleSpectrum:
    """Spectrum of the sample covariance matrix Y Y^H / N."""
    Y = data.Y if isinstance(data, SampleSet) else np.asarray(data)
    if not np.all(np.isfinite(Y)):
        raise ConfigError("observations must be finite")
    M, N = Y.shape
    if M <= N:
        S = Y @ Y.conj().T / N
        try:
            lam, E = np.linalg.eigh(S)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(str(exc)) from exc
    else:
        # thin SVD keeps the null space exactly zero when undersampled
        U, s, _ = np.linalg.svd(Y, full_matrices=True)
        lam = np.zeros(M)
        lam[: s.size] = s**2 / N
        lam, E = lam[::-1].copy(), U[:, ::-1].copy()
    lam = np.clip(lam, 0.0, None)
    return spectrum_from_eig(lam, E, N)


def mu_roots(lam: np.ndarray, N: int, maxiter: int = 200) -> np.ndarray:
    """Solve psi(mu) = (1/N) sum_k lam_k / (lam_k - mu) = 1 by safeguarded Newton.

    Each interval (lam_{k-1}, lam_k), with lam_0 = 0, carries exactly one
    root because the left-hand side increases monotonically between poles.
    Newton steps are taken on 1/psi - 1; the bracket shrinks on every step
    and a bisection replaces any Newton step that leaves it.
    """
    lam = np.asarray(lam, dtype=float)
    M = lam.size
    if N <= M:
        raise RegimeError("mu roots exist only when N > M")
    if lam[0] <= 0:
        raise DegenerateSpectrumError("sample eigenvalues must be positive")
    if np.any(np.diff(lam) <= TIE_TOL * lam[-1]):
        raise DegenerateSpectrumError("sample eigenvalues are not distinct")
    lo = np.concatenate([[0.0], lam[:-1]])
    hi = lam.copy()
    x = 0.5 * (lo + hi)
    eps = np.finfo(float).eps
    for _ in range(maxiter):
        d = lam[None, :] - x[:, None]
        r = lam[None, :] / d
        psi = r.sum(axis=1) / N
        dpsi = (r / d).sum(axis=1) / N
        pos = psi > 1.0
        hi = np.where(pos, x, hi)
        lo = np.where(pos, lo, x)
        # Newton on 1/psi - 1, which is close to linear next to either pole
        xn = x + psi * (1.0 - psi) / dpsi
        done = (np.abs(xn - x) <= 4 * eps * x) | (hi - lo <= 4 * eps * hi)
        if done.all():
            return np.where(np.abs(xn - x) <= 4 * eps * x, xn, x)
        out = ~((xn > lo) & (xn < hi))
        x = np.where(done, x, np.where(out, 0.5 * (lo + hi), xn))
    return x


def psi_hat(lam: np.ndarray, N: int, z) -> np.ndarray:
    """(1/N) sum_k lam_k / (lam_k - z)."""
    z = np.asarray(z)
    return (lam / (lam - z[..., None])).sum(axis=-1) / N


# population-side rational functions


def gamma_fn(model: PopulationModel, N: int, omega, omega2=None):
    """(1/N) sum_m K_m gamma_m^2 / ((gamma_m - omega)(gamma_m - omega2))."""
    w = np.asarray(omega, dtype=complex)
    w2 = w if omega2 is None else np.asarray(omega2, dtype=complex)
    g, K = model.gammas, model.mult
    d1 = g - w[..., None]
    d2 = g - w2[..., None]
    if np.any(np.abs(d1) == 0) or np.any(np.abs(d2) == 0):
        raise SingularEvaluationError("Gamma evaluated at a population eigenvalue")
    out = (K * g**2 / (d1 * d2)).sum(axis=-1) / N
    return out


def z_of_omega(model: PopulationModel, N: int, omega):
    """omega (1 - (1/N) sum_m K_m gamma_m / (gamma_m - omega))."""
    w = np.asarray(omega, dtype=complex)
    g, K = model.gammas, model.mult
    d = g - w[..., None]
    if np.any(np.abs(d) == 0):
        raise SingularEvaluationError("z(omega) evaluated at a population eigenvalue")
    return w * (1.0 - (K * g / d).sum(axis=-1) / N)


def z_prime(model: PopulationModel, N: int, omega):
    """Derivative of z(omega), equal to 1 - Gamma(omega)."""
    return 1.0 - gamma_fn(model, N, omega)


def _gamma_real(model, N, w, order=0):
    g, K = model.gammas, model.mult
    d = g - np.asarray(w, dtype=float)[..., None]
    if order == 0:
        return (K * g**2 / d**2).sum(axis=-1) / N
    return 2.0 * (K * g**2 / d**3).sum(axis=-1) / N


def _bisect(fun, lo, hi, maxiter=200):
    flo = fun(lo)
    for _ in range(maxiter):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        fm = fun(mid)
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _newton_gamma(model, N, w, steps=8):
    g, K = model.gammas, model.mult
    for _ in range(steps):
        d = g - w[:, None]
        val = (K * g**2 / d**2).sum(axis=1) / N - 1.0
        der = 2.0 * (K * g**2 / d**3).sum(axis=1) / N
        w = w - val / der
    return w


def theta_roots(model: PopulationModel, N: int, allow_complex: bool = True) -> np.ndarray:
    """All 2*Mbar solutions of Gamma(omega) = 1.

    Real solutions are bracketed and bisected: one below gamma_1, one above
    gamma_Mbar and zero or two between consecutive atoms, where Gamma is
    convex. When an inter-atom gap carries no real pair the two missing
    solutions form a complex-conjugate pair; these come from the linearized
    quadratic eigenproblem (D - w)^2 - a a^T and are Newton polished.

    Returns a float array if all roots are real, else a complex array
    sorted by real part. With ``allow_complex=False`` a missing real pair
    raises ClusterOverlapError.
    """
    g = model.gammas
    n = g.size
    scale = g[-1]
    one = lambda w: _gamma_real(model, N, w) - 1.0  # noqa: E731
    real = []
    # left of gamma_1: Gamma rises from 0 to infinity
    lo = -1.0
    while one(g[0] + lo * scale) > 0:
        lo *= 2.0
    real.append(_bisect(one, g[0] + lo * scale, np.nextafter(g[0], -np.inf)))
    missing = 0
    for m in range(n - 1):
        a, b = g[m], g[m + 1]
        dmin = _bisect(
            lambda w: _gamma_real(model, N, w, 1),
            np.nextafter(a, np.inf),
            np.nextafter(b, -np.inf),
        )
        vmin = one(dmin)
        if abs(vmin) < 1e-10:
            raise ClusterOverlapError("Gamma(omega) = 1 has a double root")
        if vmin < 0:
            real.append(_bisect(one, np.nextafter(a, np.inf), dmin))
            real.append(_bisect(one, dmin, np.nextafter(b, -np.inf)))
        else:
            missing += 1
    hi = 1.0
    while one(g[-1] + hi * scale) > 0:
        hi *= 2.0
    real.append(_bisect(one, np.nextafter(g[-1], np.inf), g[-1] + hi * scale))
    real = np.sort(np.array(real))
    if missing == 0:
        return real
    if not allow_complex:
        raise ClusterOverlapError(
            f"{2 * missing} solutions of Gamma(omega) = 1 are not real"
        )
    a_vec = np.sqrt(model.mult / N) * g
    D = np.diag(g)
    L = np.zeros((2 * n, 2 * n))
    L[:n, n:] = np.eye(n)
    L[n:, :n] = -(D @ D - np.outer(a_vec, a_vec))
    L[n:, n:] = 2 * D
    ev = np.linalg.eigvals(L)
    cand = ev[np.abs(ev.imag) > 1e-9 * scale]
    cand = _newton_gamma(model, N, cand[cand.imag > 0].astype(complex))
    if cand.size != missing:
        raise ClusterOverlapError("could not isolate the complex solutions of Gamma = 1")
    allr = np.concatenate([real.astype(complex), cand, cand.conj()])
    return allr[np.lexsort((allr.imag, allr.real))]


def phi_roots(model: PopulationModel, N: int, omega) -> np.ndarray:
    """The Mbar solutions phi of Gamma(omega, phi) = 1 for each omega.

    Clearing denominators gives det(D - c 1^T - phi I) = 0 with
    c_m = K_m gamma_m^2 / (N (gamma_m - omega)), so the roots are the
    eigenvalues of a diagonal-plus-rank-one matrix. Two Newton steps on the
    rational form remove the eigensolver's backward error.

    ``omega`` may be an array; the result has shape omega.shape + (Mbar,).
    """
    w = np.asarray(omega, dtype=complex)
    g, K = model.gammas, model.mult
    dw = g - w[..., None]
    if np.any(np.abs(dw) == 0):
        raise SingularEvaluationError("phi roots requested at a population eigenvalue")
    c = K * g**2 / (N * dw)
    n = g.size
    A = np.broadcast_to(np.diag(g).astype(complex), w.shape + (n, n)) - c[..., :, None]
    phi = np.linalg.eigvals(A)
    for _ in range(2):
        d = g - phi[..., :, None]
        cc = c[..., None, :]
        h = 1.0 - (cc / d).sum(axis=-1)
        dh = -(cc / d**2).sum(axis=-1)
        step = h / dh
        phi = phi - np.where(np.isfinite(step), step, 0.0)
    return np.sort_complex(phi) if phi.ndim == 1 else phi


def _secular_parts(g, c, phi):
    d = g - phi[:, None]
    h = 1.0 - (c / d).sum(axis=1)
    dh = -(c / d**2).sum(axis=1)
    # logarithmic derivative of prod_k (g_k - phi) * h(phi)
    ratio = dh / h - (1.0 / d).sum(axis=1)
    return h, ratio


def phi_roots_path(model: PopulationModel, N: int, omegas, tol: float = 1e-13) -> np.ndarray:
    """phi roots along a sequence of nearby points, shape (len(omegas), Mbar).

    The first point is solved by the eigenvalue route; each later point
    starts from its predecessor's roots and runs Aberth-Ehrlich iterations,
    which cannot collapse two roots onto one. A point whose roots fail the
    trace identity sum(phi) = sum(gamma - c) is re-solved by eigenvalues.
    """
    w = np.asarray(omegas, dtype=complex).ravel()
    g, K = model.gammas, model.mult
    n = g.size
    out = np.empty((w.size, n), dtype=complex)
    out[0] = phi_roots(model, N, w[0])
    scale = g[-1]
    eye = np.eye(n, dtype=bool)
    for q in range(1, w.size):
        c = K * g**2 / (N * (g - w[q]))
        phi = out[q - 1].copy()
        ok = False
        with np.errstate(divide="ignore", invalid="ignore"):
            for _ in range(30):
                h, ratio = _secular_parts(g, c, phi)
                diff = phi[:, None] - phi[None, :]
                diff[eye] = 1.0
                inv = np.where(eye, 0.0, 1.0 / diff).sum(axis=1)
                step = 1.0 / (ratio - inv)
                step = np.where(np.isfinite(step), step, 0.0)
                phi = phi - step
                if np.max(np.abs(step)) <= tol * scale:
                    ok = True
                    break
        trace = (g - c).sum()
        if not ok or abs(phi.sum() - trace) > 1e-9 * n * scale:
            phi = phi_roots(model, N, w[q])
        out[q] = phi
    return out
