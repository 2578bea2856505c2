"""Second-order mean and asymptotic covariance of the consistent estimators.

All quantities are population-side: they take the true covariance models
and sample counts and describe the Gaussian limit of M (d_hat - d).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, NumericalError, QuadratureError, RegimeError
from .estimators import (
    Contour,
    MetricSpec,
    ScalarFn,
    contour_through,
    get_metric,
    guard_poles,
    true_distance,
)
from .spectral import PopulationModel, gamma_fn, phi_roots_path, theta_roots

__all__ = [
    "PairSystem",
    "AsymptoticLaw",
    "gamma_fn",
    "mean_euclidean",
    "var_euclidean",
    "mean_kl",
    "var_kl",
    "mean_le",
    "mean_generic_oracle",
    "cal_I",
    "var_general",
    "asymptotic_law",
]


@dataclass(frozen=True, eq=False)
class PairSystem:
    """Population models, their sample counts and the distance pairs of interest."""

    models: Tuple[PopulationModel, ...]
    N: Tuple[int, ...]
    pairs: Tuple[Tuple[int, int], ...]
    metric: MetricSpec
    varsigma: int = 1

    def __post_init__(self):
        object.__setattr__(self, "models", tuple(self.models))
        object.__setattr__(self, "N", tuple(int(n) for n in self.N))
        object.__setattr__(self, "pairs", tuple((int(i), int(j)) for i, j in self.pairs))
        object.__setattr__(self, "metric", get_metric(self.metric))
        if len(self.models) != len(self.N):
            raise ConfigError("one sample count per model is required")
        if len({m.M for m in self.models}) != 1:
            raise ConfigError("all models must share the dimension M")
        for i, j in self.pairs:
            if i == j or not (0 <= i < len(self.models) and 0 <= j < len(self.models)):
                raise ConfigError(f"invalid pair ({i}, {j})")
        if self.metric.oversampled_only and any(n <= self.M for n in self.N):
            raise RegimeError(f"{self.metric.name} needs N > M for every set")
        if self.varsigma not in (0, 1):
            raise ConfigError("varsigma must be 0 or 1")

    @property
    def M(self) -> int:
        return self.models[0].M

    @property
    def R(self) -> int:
        return len(self.pairs)

    def true_distances(self) -> np.ndarray:
        return np.array(
            [true_distance(self.models[i], self.models[j], self.metric) for i, j in self.pairs]
        )


@dataclass(frozen=True, eq=False)
class AsymptoticLaw:
    """Gaussian limit of M (d_hat - d): mean vector and covariance matrix."""

    d: np.ndarray
    mean: np.ndarray
    cov: np.ndarray
    M: int

    @property
    def loc(self) -> np.ndarray:
        """Predicted mean of d_hat itself."""
        return self.d + self.mean / self.M

    @property
    def scale(self) -> np.ndarray:
        """Predicted standard deviation of each d_hat entry."""
        return np.sqrt(np.diag(self.cov)) / self.M

    def standardize(self, dhat: np.ndarray) -> np.ndarray:
        """Sigma^{-1/2} [M (d_hat - d) - mean] for rows of estimates."""
        vals, vecs = np.linalg.eigh(self.cov)
        if vals.min() <= 0:
            raise NumericalError("covariance is singular; cannot standardize")
        root_inv = (vecs / np.sqrt(vals)) @ vecs.T
        x = self.M * (np.asarray(dhat) - self.d) - self.mean
        return x @ root_inv.T


# contours and per-set integral caches


def omega_contour(model: PopulationModel, N: int, Q: int = 256, entire: bool = False) -> Contour:
    """Contour in the omega plane around the atoms and the roots of Gamma = 1.

    Oversampled sets get a log-ellipse crossing the real axis at half the
    smallest root and 1.5 times the largest one, which keeps it off the
    origin. Entire metrics in the undersampled regime get a plain ellipse
    that also encloses the negative root.
    """
    th = np.atleast_1d(theta_roots(model, N))
    g = model.gammas
    lo = min(g[0], th.real.min())
    hi = 1.5 * max(g[-1], th.real.max())
    if lo > 0:
        c = contour_through(0.5 * lo, hi, Q, log=True, aspect=0.6)
    elif entire:
        c = contour_through(lo - 0.5 * abs(lo) - 0.5 * g[0], hi, Q, log=False, aspect=0.5)
    else:
        raise RegimeError("contours off the origin need N > M")
    for _ in range(8):
        if c.encloses(th).all() and c.encloses(g).all():
            return c
        c = Contour(c.center, c.a, min(c.b * 1.5, 3.0) if c.log else c.b * 1.5, Q, c.log)
    raise QuadratureError("could not enclose the roots of Gamma = 1")


class _SetCache:
    """Nodes, phi roots and the single-integral matrices for one population set."""

    def __init__(self, model: PopulationModel, N: int, entire: bool, rtol: float, qmax: int):
        self.model, self.N = model, N
        self.g = model.gammas
        self.K = model.mult.astype(float)
        self.poles = np.concatenate([model.gammas, np.atleast_1d(theta_roots(model, N))])
        self.base = self._fit_contour(omega_contour(model, N, entire=entire))
        self.rtol, self.qmax = rtol, qmax
        self._levels: Dict[int, dict] = {}
        self._I: Dict[Tuple[str, str], Tuple[np.ndarray, np.ndarray]] = {}
        self._S = np.zeros((model.M, model.Mbar))
        self._S[np.arange(model.M), model.labels] = 1.0

    def _fit_contour(self, c: Contour) -> Contour:
        # the roots phi_m(omega) at the nodes must stay inside the same contour
        for _ in range(12):
            w, _ = c.nodes()
            phi = phi_roots_path(self.model, self.N, w)
            if c.encloses(phi).all():
                return c
            b = min(c.b * 1.3, 3.0) if c.log else c.b * 1.3
            c = Contour(c.center, c.a * 1.1, b, c.Q, c.log)
        raise QuadratureError("could not fit an omega contour around the phi roots")

    def level(self, Q: int) -> dict:
        if Q in self._levels:
            return self._levels[Q]
        c = guard_poles(self.base.with_nodes(Q), self.poles)
        w, wq = c.nodes()
        phi = phi_roots_path(self.model, self.N, w)
        if not c.encloses(phi).all():
            raise QuadratureError("phi roots escape the omega contour")
        g, K, N = self.g, self.K, self.N
        V = 1.0 / (g[None, :] - w[:, None])
        U = 1.0 / (g[None, None, :] - phi[:, :, None])
        zp_phi = 1.0 - (K * g**2 * U**2).sum(axis=-1) / N
        p = (w[:, None] - phi) / zp_phi
        s3 = -(K * g**2 * V[:, None, :] * U**3).sum(axis=-1) / N
        lev = dict(w=w, wq=wq, phi=phi, V=V, U=U, p=p, s3=s3)
        self._levels[Q] = lev
        return lev

    def _compute(self, f: ScalarFn, gfn: ScalarFn, Q: int):
        lev = self.level(Q)
        w, wq, phi, V, U, p, s3 = (lev[k] for k in ("w", "wq", "phi", "V", "U", "p", "s3"))
        nQ, nr, na = U.shape
        fw = wq * f.f(w)
        gphi, dgphi = gfn.f(phi), gfn.df(phi)
        X = (V[:, None, :] * U).reshape(nQ * nr, na)
        c = (fw[:, None] * gphi * p).reshape(-1)
        I = X.T @ (c[:, None] * X)
        fw2 = fw[:, None] * p**2
        Vk2 = V[:, None, :] ** 2
        A1 = (Vk2 * U).reshape(-1, na)
        B1 = (V[:, None, :] * U**2).reshape(-1, na)
        A2 = (Vk2 * U**2).reshape(-1, na)
        B3 = (V[:, None, :] * U**3).reshape(-1, na)
        c1 = -(fw2 * (2 * p * s3 * gphi + dgphi)).reshape(-1)
        c2 = -(fw2 * gphi).reshape(-1)
        It = A1.T @ (c1[:, None] * B1) + A2.T @ (c2[:, None] * B1) + 2 * A1.T @ (c2[:, None] * B3)
        # residues of the omega-tilde integrand at the atoms themselves (k = r)
        g, K, N = self.g, self.K, self.N
        fg = f.f(g) * gfn.f(g)
        I[np.diag_indices(na)] += -(N / K) * fg / g**2
        It[np.diag_indices(na)] += (N / K) ** 2 * fg / g**4
        # magnitude of the summed terms, used as the cancellation-aware error scale
        mag = (
            np.max(np.abs(c) @ np.abs(X) ** 2) + np.max(np.abs(N / K * fg / g**2)),
            np.max(np.abs(c1) @ (np.abs(A1) * np.abs(B1))) + np.max(np.abs((N / K) ** 2 * fg / g**4)),
        )
        return I, It, mag

    def integrals(self, f: ScalarFn, gfn: ScalarFn) -> Tuple[np.ndarray, np.ndarray]:
        """(cal_I, cal_I_tilde) over all atom pairs for coefficient-free f, g."""
        key = (f.name, gfn.name)
        if key in self._I:
            return self._I[key]
        Q = self.base.Q
        prev = self._compute(f, gfn, Q)
        while True:
            Q *= 2
            cur = self._compute(f, gfn, Q)
            err = max(
                np.max(np.abs(cur[0] - prev[0])) / max(np.max(np.abs(cur[0])), cur[2][0], 1e-300),
                np.max(np.abs(cur[1] - prev[1])) / max(np.max(np.abs(cur[1])), cur[2][1], 1e-300),
            )
            if err <= self.rtol:
                break
            if Q >= self.qmax:
                raise QuadratureError(f"variance integrals for ({f!r}, {gfn!r}) did not converge")
            prev = cur
        self._I[key] = cur[:2]
        return cur[:2]

    def atom_traces(self, A: np.ndarray, B: np.ndarray):
        """tr[Pi_k A Pi_r B], tr[Pi_k A], tr[Pi_r B] on this set's atoms."""
        E, S = self.model.basis, self._S
        At = E.conj().T @ A @ E
        Bt = E.conj().T @ B @ E
        T = S.T @ (At * Bt.T) @ S
        return T, S.T @ np.diag(At), S.T @ np.diag(Bt)


def cal_I(model: PopulationModel, N: int, f: ScalarFn, g: ScalarFn, k=None, r=None, rtol=1e-10):
    """Single-integral values of the two atom-pair integrals.

    Returns the full (Mbar, Mbar) matrices when k and r are omitted, else the
    (k, r) entries. The outer integral runs over omega on a clockwise
    contour; the inner one over omega-tilde is done by residues at the
    Mbar roots phi_m(omega) of Gamma(omega, phi) = 1 and, when k = r, at the
    atom gamma_k itself.
    """
    cache = _SetCache(model, N, entire=np.isinf(max(f.floor, g.floor)), rtol=rtol, qmax=4096)
    I, It = cache.integrals(f, g)
    I, It = f.coef * g.coef * I, f.coef * g.coef * It
    if k is None:
        return I, It
    return I[k, r], It[k, r]


class _Engine:
    """Shared caches for evaluating variance entries of one PairSystem."""

    def __init__(self, system: PairSystem, rtol: float = 1e-10, qmax: int = 4096):
        self.sys = system
        entire = np.isinf(system.metric.floor)
        self.sets: Dict[Tuple[int, int], _SetCache] = {}
        self.rtol, self.qmax, self.entire = rtol, qmax, entire
        self._fR: Dict[Tuple[int, str], np.ndarray] = {}

    def set(self, a: int) -> _SetCache:
        # sets that share a model object and sample count share their integrals
        s = self.sys
        key = (id(s.models[a]), s.N[a])
        if key not in self.sets:
            self.sets[key] = _SetCache(s.models[a], s.N[a], self.entire, self.rtol, self.qmax)
        return self.sets[key]

    def fR(self, a: int, fn: ScalarFn) -> np.ndarray:
        key = (id(self.sys.models[a]), fn.name)
        if key not in self._fR:
            self._fR[key] = self.sys.models[a].matrix_function(fn.f)
        return fn.coef * self._fR[key]

    def sigma_term(self, a, f, g, b, fb, bp, gb):
        """I_a for omega-function f, omega-tilde-function g, A = fb(R_b), B = gb(R_bp)."""
        if f.is_constant or g.is_constant:
            return 0.0
        cache = self.set(a)
        I, It = cache.integrals(f, g)
        T, ta, tb = cache.atom_traces(self.fR(b, fb), self.fR(bp, gb))
        gam, N = cache.g, cache.N
        gg = np.outer(gam, gam)
        val = np.sum(gg * T * I) / N + np.sum(gg**2 * np.outer(ta, tb) * It) / N**2
        return f.coef * g.coef * val

    def rho_term(self, a, fa, ga, b, fb, gb):
        """J term: set a carries (fa, ga), set b carries (fb, gb)."""
        if fa.is_constant or ga.is_constant or fb.is_constant or gb.is_constant:
            return 0.0
        ca, cb = self.set(a), self.set(b)
        Ia, _ = ca.integrals(fa, ga)
        Ib, _ = cb.integrals(fb, gb)
        ma, mb = self.sys.models[a], self.sys.models[b]
        W = np.abs(ma.basis.conj().T @ mb.basis) ** 2
        P = np.outer(ca.g, cb.g) * (ca._S.T @ W @ cb._S)
        val = np.sum((P.T @ Ia @ P) * Ib) / (ca.N * cb.N)
        return fa.coef * ga.coef * fb.coef * gb.coef * val

    def entry(self, r: int, s: int) -> complex:
        pr, ps = self.sys.pairs[r], self.sys.pairs[s]
        terms = self.sys.metric.terms
        total = 0.0
        for tr in terms:
            for ts in terms:
                for p in (0, 1):
                    for q in (0, 1):
                        if pr[p] != ps[q]:
                            continue
                        total += self.sigma_term(
                            pr[p], tr[p], ts[q], pr[1 - p], tr[1 - p], ps[1 - q], ts[1 - q]
                        )
                # both sets shared: straight or crossed matching of the slots
                for q0 in (0, 1):
                    if pr[0] == ps[q0] and pr[1] == ps[1 - q0]:
                        total += self.rho_term(pr[0], tr[0], ts[q0], pr[1], tr[1], ts[1 - q0])
        return total


def _symmetric_from(entries: np.ndarray, tag: str) -> np.ndarray:
    if np.max(np.abs(entries.imag)) > 1e-8 * max(np.max(np.abs(entries.real)), 1e-300):
        raise NumericalError(f"{tag}: imaginary residue in a real statistic")
    S = entries.real
    if np.max(np.abs(S - S.T)) > 1e-8 * max(np.max(np.abs(S)), 1e-300):
        raise NumericalError(f"{tag}: covariance is not symmetric")
    return 0.5 * (S + S.T)


def var_general(system: PairSystem, rtol: float = 1e-10) -> np.ndarray:
    """Asymptotic covariance of M d_hat by single-integral evaluation."""
    eng = _Engine(system, rtol=rtol)
    R = system.R
    out = np.zeros((R, R), dtype=complex)
    for r in range(R):
        for s in range(r, R):
            out[r, s] = eng.entry(r, s)
            out[s, r] = eng.entry(s, r) if r != s else out[r, s]
    return (1 + system.varsigma) * _symmetric_from(out, "var_general")


# second-order mean


def _atom_diag(model: PopulationModel, B: np.ndarray) -> np.ndarray:
    """tr[Pi_m B] for every atom m."""
    d = np.einsum("ij,ik,kj->j", model.basis.conj(), B, model.basis)
    return np.bincount(model.labels, weights=d.real, minlength=model.Mbar) + 1j * np.bincount(
        model.labels, weights=d.imag, minlength=model.Mbar
    )


def mean_generic_oracle(system: PairSystem, rtol: float = 1e-10, qmax: int = 8192) -> np.ndarray:
    """Second-order mean by quadrature in the omega plane.

    For each pair and term the integrand is
    f_i(omega) tr[R_i^2 Q_i(omega)^3 f_j(R_j)] / (N_i (1 - Gamma_i(omega)))
    on a clockwise contour around the atoms and the roots of Gamma = 1, plus
    the same with the roles of the two sets exchanged.
    """
    if system.varsigma == 0:
        return np.zeros(system.R)
    entire = np.isinf(system.metric.floor)
    contours = {}
    out = np.zeros(system.R)
    for r, pair in enumerate(system.pairs):
        total = 0.0
        for f_i, f_j in system.metric.terms:
            for (a, fa), (b, fb) in (((pair[0], f_i), (pair[1], f_j)), ((pair[1], f_j), (pair[0], f_i))):
                if fa.is_constant:
                    continue
                model, N = system.models[a], system.N[a]
                if a not in contours:
                    contours[a] = omega_contour(model, N, entire=entire)
                bvec = _atom_diag(model, system.models[b].matrix_function(fb))
                g = model.gammas
                Q, prev = contours[a].Q, None
                while True:
                    poles = np.concatenate([model.gammas, np.atleast_1d(theta_roots(model, N))])
                    w, wq = guard_poles(contours[a].with_nodes(Q), poles).nodes()
                    d = g[None, :] - w[:, None]
                    tr3 = (g**2 * bvec / d**3).sum(axis=1)
                    terms = wq * fa(w) * tr3 / (N * (1.0 - gamma_fn(model, N, w)))
                    val = np.sum(terms)
                    scale = max(abs(val), np.sum(np.abs(terms)) * 1e-3)
                    if prev is not None and abs(val - prev) <= rtol * scale:
                        break
                    if Q >= qmax:
                        raise QuadratureError("mean quadrature did not converge")
                    prev, Q = val, 2 * Q
                total += val
        out[r] = system.varsigma * np.real(total)
    return out


def mean_euclidean(system: PairSystem) -> np.ndarray:
    """varsigma (tr[R_i^2]/N_i + tr[R_j^2]/N_j) per pair."""
    t = [np.sum(m.eigenvalues**2) / n for m, n in zip(system.models, system.N)]
    return np.array([system.varsigma * (t[i] + t[j]) for i, j in system.pairs])


def var_euclidean(system: PairSystem) -> np.ndarray:
    """Closed-form covariance for the Euclidean metric.

    A set a shared by pairs r and s, whose other members are b and b',
    contributes 2 (tr[R_a^2]/N_a)^2 + 4 tr[R_a (R_a - R_b) R_a (R_a - R_b')]/N_a;
    pairs built on the same two sets add 4 tr^2[R_i R_j]/(N_i N_j). For a
    single pair this is the familiar five-term expression with R_1 - R_2.
    """
    Rm = [m.R for m in system.models]
    N = system.N
    P = system.R
    out = np.zeros((P, P))
    for r, pr in enumerate(system.pairs):
        for s, ps in enumerate(system.pairs):
            v = 0.0
            for p in (0, 1):
                for q in (0, 1):
                    if pr[p] != ps[q]:
                        continue
                    a, b, bp = pr[p], pr[1 - p], ps[1 - q]
                    Ra = Rm[a]
                    v += 2 * (np.trace(Ra @ Ra).real / N[a]) ** 2
                    v += 4 * np.trace(Ra @ (Ra - Rm[b]) @ Ra @ (Ra - Rm[bp])).real / N[a]
            if set(pr) == set(ps):
                i, j = pr
                v += 4 * np.trace(Rm[i] @ Rm[j]).real ** 2 / (N[i] * N[j])
            out[r, s] = v
    return (1 + system.varsigma) * out


def mean_kl(system: PairSystem) -> np.ndarray:
    """(varsigma/2)(tr[R_i^-1 R_j]/(N_i - M) + tr[R_i R_j^-1]/(N_j - M))."""
    M = system.M
    inv = [m.matrix_function(lambda x: 1.0 / x) for m in system.models]
    out = []
    for i, j in system.pairs:
        Ri, Rj = system.models[i].R, system.models[j].R
        t1 = np.trace(inv[i] @ Rj).real / (system.N[i] - M)
        t2 = np.trace(Ri @ inv[j]).real / (system.N[j] - M)
        out.append(0.5 * system.varsigma * (t1 + t2))
    return np.array(out)


def _kl_pair_var(Ri, Rj, Ri_inv, Rj_inv, Ni, Nj, M):
    A = Ri @ Rj_inv
    B = Ri_inv @ Rj
    tA, tB = np.trace(A).real, np.trace(B).real
    return (Ni + Nj - M) * (
        -M / (2 * Ni * Nj)
        + np.trace(A @ A).real / (4 * (Nj - M) * Ni)
        + np.trace(B @ B).real / (4 * (Ni - M) * Nj)
        + (tA / (Nj - M)) ** 2 / (4 * Ni)
        + (tB / (Ni - M)) ** 2 / (4 * Nj)
    )


def var_kl(system: PairSystem, off_diagonal: Optional[np.ndarray] = None) -> np.ndarray:
    """Closed-form KL variance on the diagonal.

    Off-diagonal entries of systems with shared sets have no printed closed
    form; they are taken from ``off_diagonal`` when given (normally the
    single-integral evaluation) and are zero for pairs with no set in common.
    """
    M = system.M
    inv = [m.matrix_function(lambda x: 1.0 / x) for m in system.models]
    P = system.R
    out = np.zeros((P, P))
    for r, (i, j) in enumerate(system.pairs):
        mi, mj = system.models[i], system.models[j]
        out[r, r] = _kl_pair_var(mi.R, mj.R, inv[i], inv[j], system.N[i], system.N[j], M)
    out *= 1 + system.varsigma
    for r, pr in enumerate(system.pairs):
        for s, ps in enumerate(system.pairs):
            if r != s and set(pr) & set(ps):
                if off_diagonal is None:
                    raise ConfigError("shared-set KL covariances need the integral evaluation")
                out[r, s] = off_diagonal[r, s]
    return out


def mean_le(system: PairSystem) -> np.ndarray:
    """Closed-form second-order mean of the log-Euclidean estimator.

    Residues at the atoms of each set give the projector terms and residues
    at the roots theta of Gamma = 1 give the ratio terms. Non-real theta
    come in conjugate pairs and their contributions are summed as such.
    """
    if system.varsigma == 0:
        return np.zeros(system.R)
    out = np.zeros(system.R)
    logs = {}
    for a, m in enumerate(system.models):
        logs[a] = (m.matrix_function(np.log), m.matrix_function(lambda x: np.log(x) ** 2))
    thetas = {a: np.atleast_1d(theta_roots(m, n)) for a, (m, n) in enumerate(zip(system.models, system.N))}
    for r, pair in enumerate(system.pairs):
        total = 0.0
        for a, b in (pair, pair[::-1]):
            m = system.models[a]
            g, K = m.gammas, m.mult
            L1, L2 = logs[b]
            s1 = _atom_diag(m, L1).real  # tr[Pi_m log R_b]
            s2 = _atom_diag(m, L2).real  # tr[Pi_m log^2 R_b]
            lg = np.log(g)
            total -= np.sum((s2 - 2 * lg * s1 + K * lg**2) / K)
            th = thetas[a].astype(complex)
            D3 = g[None, :] ** 2 / (g[None, :] - th[:, None]) ** 3
            lt = np.log(th)
            num = D3 @ s2 - 2 * lt * (D3 @ s1) + lt**2 * (D3 @ K.astype(float))
            den = D3 @ K.astype(float)
            total += 0.5 * np.sum(num / den)
        out[r] = system.varsigma * np.real(total)
    return out


def asymptotic_law(system: PairSystem, rtol: float = 1e-10) -> AsymptoticLaw:
    """Mean and covariance of the limit law, closed forms first."""
    name = system.metric.name
    d = system.true_distances()
    if name == "EU":
        mean, cov = mean_euclidean(system), var_euclidean(system)
    elif name == "KL":
        shared = any(
            r != s and set(pr) & set(ps)
            for r, pr in enumerate(system.pairs)
            for s, ps in enumerate(system.pairs)
        )
        mean = mean_kl(system)
        cov = var_kl(system, var_general(system, rtol) if shared else None)
    elif name == "LE":
        mean, cov = mean_le(system), var_general(system, rtol)
    else:
        mean, cov = mean_generic_oracle(system), var_general(system, rtol)
    return AsymptoticLaw(d=d, mean=mean, cov=cov, M=system.M)
