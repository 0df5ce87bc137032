"""Ion systems and their concentration maps.

An :class:`IonSystem` holds the valences, chemical potentials and the
steric-coupling model for a solvent (index 0) plus N ion species. Three
coupling families are supported:

* :class:`WeightedA1` - every row of the coupling matrix is
  ``(1-gamma, gamma_1, ..., gamma_N)``; the solvent concentration then
  has a closed form through the Lambert W function.
* :class:`A3A4` - rank-one coupling ``g[i][j] = lam[i]*lam[j]``; the
  solvent concentration is a Lambert-type implicit function found by a
  scalar root search.
* :class:`GeneralG` - an explicit symmetric positive-semidefinite
  matrix; concentrations are found by damped Newton on log
  concentrations.

Each map returns the concentrations c_i(phi), the total ionic charge
density f(phi) = sum_i z_i c_i(phi) and its analytic derivative
df/dphi. The strong-coupling limits (c_i*, f*) of the first two
families are provided as separate maps.

All evaluations accept a scalar phi or a 1-D array of phi values.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ModelError, RootFindError
from .lambertw import lambert_w0_exp

_NEG_INF = -np.inf


# ---------------------------------------------------------------------------
# Steric-model descriptions


@dataclass(frozen=True)
class WeightedA1:
    """Row-structured steric coupling.

    Every row of the (N+1)x(N+1) coupling matrix equals
    ``(1-gamma, gamma_vec[0], ..., gamma_vec[N-1])``. ``gamma`` is the
    total ionic volume fraction; the per-species weights must be
    nonnegative and sum to ``gamma``.
    """

    gamma: float
    gamma_vec: tuple

    def __post_init__(self):
        object.__setattr__(self, "gamma_vec",
                           tuple(float(g) for g in self.gamma_vec))
        object.__setattr__(self, "gamma", float(self.gamma))
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("WeightedA1: gamma must lie in [0, 1]")
        if any(g < 0.0 for g in self.gamma_vec):
            raise ValueError("WeightedA1: all gamma_vec entries must be >= 0")
        if abs(sum(self.gamma_vec) - self.gamma) > 1e-12:
            raise ValueError(
                "WeightedA1: sum(gamma_vec) must equal gamma to 1e-12")

    @classmethod
    def uniform(cls, gamma, n):
        """Equal weights gamma/n for each of the n ion species."""
        return cls(gamma, (gamma / n,) * n)

    @classmethod
    def proportional(cls, gamma, z):
        """Weights gamma*|z_i|/Z proportional to the valence magnitudes."""
        zi = np.asarray(z, dtype=float)[1:]
        big_z = np.sum(np.abs(zi))
        return cls(gamma, tuple(gamma * abs(v) / big_z for v in zi))


@dataclass(frozen=True)
class A3A4:
    """Rank-one steric coupling g[i][j] = lam[i]*lam[j], lam[i] > 0."""

    lam: tuple

    def __post_init__(self):
        object.__setattr__(self, "lam", tuple(float(v) for v in self.lam))
        if any(v <= 0.0 for v in self.lam):
            raise ValueError("A3A4: all lam entries must be > 0")


class GeneralG:
    """Explicit steric coupling matrix.

    The matrix must be entrywise nonnegative, symmetric to 1e-12 and
    positive semidefinite (smallest eigenvalue >= -1e-10); these
    conditions guarantee a unique concentration map.
    """

    def __init__(self, g):
        g = np.array(g, dtype=float)
        if g.ndim != 2 or g.shape[0] != g.shape[1]:
            raise ValueError("GeneralG: g must be a square matrix")
        if np.any(g < 0.0):
            raise ValueError("GeneralG: all entries must be >= 0")
        if np.max(np.abs(g - g.T)) > 1e-12:
            raise ValueError("GeneralG: matrix must be symmetric to 1e-12")
        if np.linalg.eigvalsh(g).min() < -1e-10:
            raise ValueError(
                "GeneralG: matrix must be positive semidefinite "
                "(smallest eigenvalue >= -1e-10)")
        g.flags.writeable = False
        self.g = g

    def __eq__(self, other):
        return isinstance(other, GeneralG) and np.array_equal(self.g, other.g)

    def __repr__(self):
        return "GeneralG(%r)" % (self.g.tolist(),)


# ---------------------------------------------------------------------------
# Ion system


class IonSystem:
    """Immutable description of one electrolyte configuration.

    Parameters
    ----------
    z : sequence
        Valences (z_0, ..., z_N) with z_0 = 0 for the solvent and at
        least one sign change among the ions.
    model : WeightedA1 | A3A4 | GeneralG
        Steric-coupling family.
    Lambda : float
        Steric coupling strength, >= 0.
    mu_hat : sequence
        Coupling-independent chemical potentials (mu_hat_0..mu_hat_N).
    mu_tilde0 : float, optional
        Base coupling-scaled chemical potential. For WeightedA1 the
        species values are all mu_tilde0; for A3A4 they are
        lam_i * mu_tilde0. Ignored if mu_tilde is given.
    mu_tilde : sequence, optional
        Full vector of coupling-scaled chemical potentials. Required
        for GeneralG unless mu_tilde0 is given (then constant).
    """

    def __init__(self, z, model, Lambda, mu_hat, mu_tilde0=None, mu_tilde=None):
        z = np.array(z, dtype=float)
        mu_hat = np.array(mu_hat, dtype=float)
        if z.ndim != 1 or z.size < 3:
            raise ValueError("IonSystem: need z_0 plus at least two ion species")
        if z[0] != 0.0:
            raise ValueError("IonSystem: solvent valence z_0 must be 0")
        if not (z[1:].min() < 0.0 < z[1:].max()):
            raise ValueError(
                "IonSystem: ions must include both signs (z_i*z_j < 0)")
        if mu_hat.shape != z.shape:
            raise ValueError("IonSystem: mu_hat must have length N+1")
        if not np.all(np.isfinite(mu_hat)):
            raise ValueError("IonSystem: mu_hat must be finite")
        Lambda = float(Lambda)
        if not (math.isfinite(Lambda) and Lambda >= 0.0):
            raise ValueError("IonSystem: Lambda must be finite and >= 0")

        n = z.size - 1
        if isinstance(model, WeightedA1):
            if len(model.gamma_vec) != n:
                raise ValueError("IonSystem: gamma_vec must have length N")
            if mu_tilde is None:
                if mu_tilde0 is None:
                    raise ValueError("IonSystem: mu_tilde0 required")
                mu_tilde = np.full(n + 1, float(mu_tilde0))
            else:
                mu_tilde = np.array(mu_tilde, dtype=float)
            if mu_tilde.shape != z.shape:
                raise ValueError("IonSystem: mu_tilde must have length N+1")
            if np.max(np.abs(mu_tilde - mu_tilde[0])) > 1e-12:
                raise ValueError(
                    "IonSystem: WeightedA1 requires equal mu_tilde entries")
            if mu_tilde[0] <= 0.0:
                raise ValueError("IonSystem: mu_tilde0 must be > 0")
            mu_bar = mu_hat - mu_hat[0]
        elif isinstance(model, A3A4):
            lam = np.array(model.lam, dtype=float)
            if lam.size != n + 1:
                raise ValueError("IonSystem: lam must have length N+1")
            if mu_tilde is None:
                if mu_tilde0 is None:
                    raise ValueError("IonSystem: mu_tilde0 required")
                mu_tilde = lam * float(mu_tilde0)
            else:
                mu_tilde = np.array(mu_tilde, dtype=float)
            if mu_tilde.shape != z.shape:
                raise ValueError("IonSystem: mu_tilde must have length N+1")
            base = mu_tilde[0] / lam[0]
            if base <= 0.0:
                raise ValueError("IonSystem: mu_tilde0 must be > 0")
            if np.max(np.abs(mu_tilde - lam * base)) > 1e-12 * (1 + abs(base)):
                raise ValueError(
                    "IonSystem: A3A4 requires mu_tilde_i = lam_i*mu_tilde0")
            mu_bar = mu_hat - (lam / lam[0]) * mu_hat[0]
        elif isinstance(model, GeneralG):
            if model.g.shape != (n + 1, n + 1):
                raise ValueError("IonSystem: g must be (N+1)x(N+1)")
            if mu_tilde is None:
                mu_tilde = np.full(n + 1, float(mu_tilde0 or 0.0))
            else:
                mu_tilde = np.array(mu_tilde, dtype=float)
            if mu_tilde.shape != z.shape:
                raise ValueError("IonSystem: mu_tilde must have length N+1")
            mu_bar = None
        else:
            raise ValueError("IonSystem: unknown model type %r" % (model,))

        for a in (z, mu_hat, mu_tilde):
            a.flags.writeable = False
        self.z = z
        self.model = model
        self.Lambda = Lambda
        self.mu_hat = mu_hat
        self.mu_tilde = mu_tilde
        if mu_bar is not None:
            mu_bar.flags.writeable = False
        self.mu_bar = mu_bar

    @property
    def N(self):
        return self.z.size - 1

    @property
    def Z(self):
        return float(np.sum(np.abs(self.z[1:])))

    @property
    def mu_tilde0(self):
        if isinstance(self.model, A3A4):
            return float(self.mu_tilde[0] / self.model.lam[0])
        return float(self.mu_tilde[0])

    def with_lambda(self, Lambda):
        """Copy of this system with a different coupling strength."""
        return IonSystem(self.z, self.model, Lambda, self.mu_hat,
                         mu_tilde=self.mu_tilde)

    def steric_matrix(self):
        """The full (N+1)x(N+1) coupling matrix of this system."""
        n = self.N
        if isinstance(self.model, WeightedA1):
            row = np.concatenate(([1.0 - self.model.gamma],
                                  np.asarray(self.model.gamma_vec)))
            return np.tile(row, (n + 1, 1))
        if isinstance(self.model, A3A4):
            lam = np.asarray(self.model.lam)
            return np.outer(lam, lam)
        return self.model.g.copy()

    def __repr__(self):
        return ("IonSystem(z=%s, model=%r, Lambda=%g)"
                % (self.z.tolist(), self.model, self.Lambda))


# ---------------------------------------------------------------------------
# Evaluation containers


@dataclass(frozen=True)
class ConcentrationEval:
    """Concentrations and charge density at one or more potentials.

    ``c`` has shape (N+1,) for scalar phi and (N+1, M) for an array of
    M potentials; ``f`` and ``df_dphi`` follow the shape of ``phi``.
    """

    phi: object
    c: np.ndarray
    f: object
    df_dphi: object


@dataclass(frozen=True)
class LimitEval:
    """Strong-coupling limit concentrations and charge density.

    ``m_star``/``M_star`` are the infimum/supremum of the limiting
    charge density (finite closed forms exist for WeightedA1 only);
    ``idx_max``/``idx_min`` are the extreme-valence index sets.
    """

    phi: object
    c_star: np.ndarray
    f_star: object
    df_dphi: object
    m_star: float = None
    M_star: float = None
    idx_max: tuple = None
    idx_min: tuple = None


def _phi_array(phi):
    arr = np.asarray(phi, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("phi must be finite")
    return np.atleast_1d(arr).astype(float), arr.ndim == 0


def _scalarize(x, scalar):
    return float(x[0]) if scalar else x


def _check_positive(c):
    if not (np.all(np.isfinite(c)) and np.all(c > 0.0)):
        raise ModelError(
            "concentration overflow/underflow; potential outside the "
            "representable range for this system")


# ---------------------------------------------------------------------------
# Weighted (Lambert closed form) family


def _weighted_terms(sys, phi):
    """Stable pieces of H(phi) = 1-gamma + sum_j gamma_j exp(mu_bar_j - z_j phi).

    Returns (log H, Sg/H) where Sg = sum_j gamma_j z_j exp(mu_bar_j - z_j phi).
    Both are computed with a shared exponent shift so they stay finite
    for any phi that double precision can express.
    """
    model = sys.model
    gv = np.asarray(model.gamma_vec, dtype=float)
    expo = sys.mu_bar[1:, None] - sys.z[1:, None] * phi[None, :]
    with np.errstate(divide="ignore"):
        log_terms = np.log(gv)[:, None] + expo
        log_t0 = math.log(1.0 - model.gamma) if model.gamma < 1.0 else _NEG_INF
    m = np.maximum(np.max(log_terms, axis=0), log_t0)
    shifted = np.exp(log_terms - m[None, :])
    denom = np.exp(log_t0 - m) + np.sum(shifted, axis=0)
    log_h = m + np.log(denom)
    sg_over_h = (sys.z[1:] @ shifted) / denom
    return log_h, sg_over_h


def h_factor(sys, phi):
    """Steric screening factor H(phi) of a WeightedA1 system."""
    if not isinstance(sys.model, WeightedA1):
        raise ModelError("h_factor requires a WeightedA1 model")
    p, scalar = _phi_array(phi)
    log_h, _ = _weighted_terms(sys, p)
    return _scalarize(np.exp(log_h), scalar)


def conc_weighted_a1(sys, phi):
    """Closed-form concentration map of the WeightedA1 family.

    The solvent concentration is
    ``c_0 = W0(Lambda*H*exp(Lambda*mu_tilde0 + mu_hat0)) / (Lambda*H)``,
    evaluated through the log-argument Lambert W so that couplings up
    to Lambda ~ 1e6 stay well conditioned.
    """
    if not isinstance(sys.model, WeightedA1):
        raise ModelError("conc_weighted_a1 requires a WeightedA1 model")
    if sys.Lambda <= 0.0:
        raise ModelError("conc_weighted_a1 requires Lambda > 0 "
                         "(use conc_lambda_zero at Lambda = 0)")
    p, scalar = _phi_array(phi)
    lam = sys.Lambda
    log_h, sg_over_h = _weighted_terms(sys, p)

    y = math.log(lam) + log_h + lam * sys.mu_tilde0 + sys.mu_hat[0]
    w = lambert_w0_exp(y)
    log_c0 = np.log(w) - (math.log(lam) + log_h)

    c = np.exp(log_c0[None, :] + sys.mu_bar[:, None]
               - sys.z[:, None] * p[None, :])
    _check_positive(c)

    f = sys.z[1:] @ c[1:]
    dlog_c0 = sg_over_h * (w / (1.0 + w))
    df = f * dlog_c0 - (sys.z[1:] ** 2) @ c[1:]
    if scalar:
        return ConcentrationEval(float(p[0]), c[:, 0], float(f[0]), float(df[0]))
    return ConcentrationEval(p, c, f, df)


def conc_lambda_zero(sys, phi):
    """Concentration map without steric coupling: c_i = exp(mu_hat_i - z_i phi)."""
    if sys.Lambda != 0.0:
        raise ModelError("conc_lambda_zero requires Lambda = 0")
    p, scalar = _phi_array(phi)
    c = np.exp(sys.mu_hat[:, None] - sys.z[:, None] * p[None, :])
    _check_positive(c)
    f = sys.z[1:] @ c[1:]
    df = -(sys.z[1:] ** 2) @ c[1:]
    if scalar:
        return ConcentrationEval(float(p[0]), c[:, 0], float(f[0]), float(df[0]))
    return ConcentrationEval(p, c, f, df)


def limit_weighted_a1(sys, phi):
    """Strong-coupling limit of the WeightedA1 family.

    c_i* = mu_tilde0 * exp(mu_bar_i - z_i phi) / H(phi); the limiting
    charge density is bounded between m_star and M_star, which are
    weighted averages of the extreme-valence species.
    """
    if not isinstance(sys.model, WeightedA1):
        raise ModelError("limit_weighted_a1 requires a WeightedA1 model")
    p, scalar = _phi_array(phi)
    log_h, sg_over_h = _weighted_terms(sys, p)
    log_mu = math.log(sys.mu_tilde0)

    c = np.exp(log_mu + sys.mu_bar[:, None]
               - sys.z[:, None] * p[None, :] - log_h[None, :])
    _check_positive(c)
    f = sys.z[1:] @ c[1:]
    df = f * sg_over_h - (sys.z[1:] ** 2) @ c[1:]

    idx_max, idx_min = _extreme_index_sets(sys.z)
    m_star = _limit_bound(sys, idx_min)
    big_m_star = _limit_bound(sys, idx_max)
    if scalar:
        return LimitEval(float(p[0]), c[:, 0], float(f[0]), float(df[0]),
                         m_star, big_m_star, idx_max, idx_min)
    return LimitEval(p, c, f, df, m_star, big_m_star, idx_max, idx_min)


def _extreme_index_sets(z):
    zmax, zmin = z.max(), z.min()
    idx_max = tuple(int(i) for i in np.nonzero(z >= zmax - 1e-12)[0])
    idx_min = tuple(int(i) for i in np.nonzero(z <= zmin + 1e-12)[0])
    return idx_max, idx_min


def _limit_bound(sys, idx):
    """Limiting value of f* as the species in idx dominate."""
    gv = np.asarray(sys.model.gamma_vec, dtype=float)
    num = sum(sys.z[i] * math.exp(sys.mu_bar[i]) for i in idx)
    den = sum(gv[i - 1] * math.exp(sys.mu_bar[i]) for i in idx)
    if den == 0.0:
        return math.inf if num > 0 else -math.inf
    return sys.mu_tilde0 * num / den


# ---------------------------------------------------------------------------
# Rank-one (Lambert-type) family


def _root_increasing(fun, u_init, tol, bisect_width=1e-3, max_iter=200):
    """Root of a strictly increasing scalar function in log coordinates.

    ``fun(u)`` must return ``(value, d value/d u)``. The bracket is
    grown from ``u_init`` in steps of log 2, narrowed by bisection to
    ``bisect_width`` and polished by safeguarded Newton until
    ``|value| <= tol``.
    """
    u = float(u_init)
    v, _ = fun(u)
    if not math.isfinite(v):
        raise RootFindError("root search: function not finite at start")
    lo = hi = u
    vlo = vhi = v
    step = math.log(2.0)
    k = 0
    while vhi < 0.0:
        lo, vlo = hi, vhi
        hi += step
        vhi, _ = fun(hi)
        k += 1
        if math.isnan(vhi) or (vhi < 0.0 and (hi > 745.0 or k > 2200)):
            raise RootFindError("root search: no sign change above start")
    k = 0
    while vlo > 0.0:
        hi, vhi = lo, vlo
        lo -= step
        vlo, _ = fun(lo)
        k += 1
        if math.isnan(vlo) or (vlo > 0.0 and (lo < -745.0 or k > 2200)):
            raise RootFindError("root search: no sign change below start")

    while hi - lo > bisect_width:
        mid = 0.5 * (lo + hi)
        vm, _ = fun(mid)
        if vm <= 0.0:
            lo, vlo = mid, vm
        else:
            hi, vhi = mid, vm

    u = 0.5 * (lo + hi)
    for _ in range(max_iter):
        v, dv = fun(u)
        if abs(v) <= tol:
            return u
        if v <= 0.0:
            lo = u
        else:
            hi = u
        if dv > 0.0 and math.isfinite(dv):
            u_new = u - v / dv
        else:
            u_new = 0.5 * (lo + hi)
        if not (lo <= u_new <= hi):
            u_new = 0.5 * (lo + hi)
        if u_new == u:
            if abs(v) <= tol:
                return u
            u_new = 0.5 * (lo + hi)
            if u_new == u:
                break
        u = u_new
    v, _ = fun(u)
    if abs(v) <= tol:
        return u
    raise RootFindError("root search: residual %.3e above tolerance %.3e"
                        % (abs(v), tol))


def _a3a4_exponents(sys, p):
    """Log of exp(mu_bar_j - z_j phi) for each species and potential."""
    return sys.mu_bar[:, None] - sys.z[:, None] * p[None, :]


def conc_a3a4(sys, phi):
    """Lambert-type concentration map of the rank-one coupling family.

    The solvent concentration c_0 solves
    ``log t + Lambda*sum_j lam0*lam_j*t^(lam_j/lam0)*exp(mu_bar_j - z_j phi)
    = Lambda*lam0*mu_tilde0 + mu_hat0``; the left side is strictly
    increasing in t, so the root is unique. The charge-density slope
    comes from the rank-one solve of the linearized system.
    """
    if not isinstance(sys.model, A3A4):
        raise ModelError("conc_a3a4 requires an A3A4 model")
    if sys.Lambda <= 0.0:
        raise ModelError("conc_a3a4 requires Lambda > 0 "
                         "(use conc_lambda_zero at Lambda = 0)")
    p, scalar = _phi_array(phi)
    lam = np.asarray(sys.model.lam, dtype=float)
    lam0 = lam[0]
    big_lam = sys.Lambda
    rhs = big_lam * lam0 * sys.mu_tilde0 + sys.mu_hat[0]
    ez = _a3a4_exponents(sys, p)
    log_coef = np.log(lam0 * lam)
    ratio = lam / lam0
    tol = 0.5e-12 * (1.0 + big_lam)

    u_vals = np.empty(p.size)
    u_guess = sys.mu_hat[0]
    for k in range(p.size):
        col = ez[:, k]

        def k1(u, _col=col):
            with np.errstate(over="ignore"):
                terms = np.exp(ratio * u + log_coef + _col)
            s = big_lam * np.sum(terms)
            return u + s - rhs, 1.0 + big_lam * np.sum(ratio * terms)

        u_vals[k] = _root_increasing(k1, u_guess, tol)
        u_guess = u_vals[k]

    c = np.exp(ratio[:, None] * u_vals[None, :] + ez)
    _check_positive(c)
    f, df = _rank_one_slope(sys.z, lam, big_lam, c)
    if scalar:
        return ConcentrationEval(float(p[0]), c[:, 0], float(f[0]), float(df[0]))
    return ConcentrationEval(p, c, f, df)


def _rank_one_slope(z, lam, big_lam, c):
    """f and df/dphi for rank-one coupling via the Sherman-Morrison form
    of the linearized system (diag(1/c) + Lambda*lam*lam^T) dc = -z."""
    f = z[1:] @ c[1:]
    a = (z ** 2) @ c
    b = (z * lam) @ c
    q = (lam ** 2) @ c
    df = -a + big_lam * b ** 2 / (1.0 + big_lam * q)
    return f, df


def limit_a3a4(sys, phi):
    """Strong-coupling limit of the rank-one family.

    c_0* solves ``sum_i lam_i t^(lam_i/lam0) exp(mu_bar_i - z_i phi)
    = mu_tilde0`` (strictly increasing left side), and the limiting
    charge density obeys |f*| <= mu_tilde0 * N * max_i |z_i|/lam_i.
    """
    if not isinstance(sys.model, A3A4):
        raise ModelError("limit_a3a4 requires an A3A4 model")
    p, scalar = _phi_array(phi)
    lam = np.asarray(sys.model.lam, dtype=float)
    ratio = lam / lam[0]
    log_lam = np.log(lam)
    mu0 = sys.mu_tilde0
    ez = _a3a4_exponents(sys, p)
    tol = 1e-13 * max(1.0, mu0)

    u_vals = np.empty(p.size)
    u_guess = math.log(mu0 / np.sum(lam))
    for k in range(p.size):
        col = ez[:, k]

        def bal(u, _col=col):
            with np.errstate(over="ignore"):
                terms = np.exp(ratio * u + log_lam + _col)
            return np.sum(terms) - mu0, np.sum(ratio * terms)

        u_vals[k] = _root_increasing(bal, u_guess, tol)
        u_guess = u_vals[k]

    c = np.exp(ratio[:, None] * u_vals[None, :] + ez)
    _check_positive(c)
    f = sys.z[1:] @ c[1:]
    # Slope of the limit map: eliminate dc_0*/dphi from the constraint
    # sum lam_i dc_i*/dphi = 0.
    b = (sys.z * lam) @ c
    q = (lam ** 2) @ c
    df = b ** 2 / q - (sys.z ** 2) @ c
    idx_max, idx_min = _extreme_index_sets(sys.z)
    if scalar:
        return LimitEval(float(p[0]), c[:, 0], float(f[0]), float(df[0]),
                         None, None, idx_max, idx_min)
    return LimitEval(p, c, f, df, None, None, idx_max, idx_min)


def limit_bound_a3a4(sys):
    """Upper bound on |f*| for a rank-one system."""
    lam = np.asarray(sys.model.lam, dtype=float)
    return sys.mu_tilde0 * sys.N * float(np.max(np.abs(sys.z) / lam))


# ---------------------------------------------------------------------------
# General symmetric PSD coupling


def conc_general(sys, phi):
    """Concentration map for an explicit symmetric PSD coupling matrix.

    Damped Newton on u_i = log c_i; the Jacobian in these coordinates
    is I + Lambda * g * diag(c), which is invertible for PSD g and
    positive c. Raises ModelError if Newton fails within 200 steps.
    """
    if not isinstance(sys.model, GeneralG):
        raise ModelError("conc_general requires a GeneralG model")
    p, scalar = _phi_array(phi)
    g = sys.model.g
    big_lam = sys.Lambda
    n1 = sys.N + 1
    mu_full = big_lam * sys.mu_tilde + sys.mu_hat
    tol = 1e-13 * (1.0 + big_lam)
    tol_accept = 1e-10 * (1.0 + big_lam)
    eye = np.eye(n1)

    c = np.empty((n1, p.size))
    f = np.empty(p.size)
    df = np.empty(p.size)
    u_prev = None
    for k in range(p.size):
        u = mu_full - sys.z * p[k]
        if u_prev is not None:
            trial = u_prev + sys.z * (p[k - 1] - p[k])
            if _general_residual_norm(trial, sys.z, p[k], g, big_lam, mu_full) \
                    < _general_residual_norm(u, sys.z, p[k], g, big_lam, mu_full):
                u = trial
        u, res = _general_newton(u, sys.z, p[k], g, big_lam, mu_full, eye, tol)
        if res > tol_accept:
            raise ModelError(
                "conc_general: Newton stalled at residual %.3e (tolerance "
                "%.3e); coupling matrix may be outside the well-posed class"
                % (res, tol_accept))
        u_prev = u
        ck = np.exp(u)
        c[:, k] = ck
        f[k] = sys.z[1:] @ ck[1:]
        dc = np.linalg.solve(np.diag(1.0 / ck) + big_lam * g, -sys.z)
        df[k] = sys.z @ dc
    _check_positive(c)
    if scalar:
        return ConcentrationEval(float(p[0]), c[:, 0], float(f[0]), float(df[0]))
    return ConcentrationEval(p, c, f, df)


def _general_residual(u, z, phi_k, g, big_lam, mu_full):
    with np.errstate(over="ignore"):
        return u + z * phi_k + big_lam * (g @ np.exp(u)) - mu_full


def _general_residual_norm(u, z, phi_k, g, big_lam, mu_full):
    r = _general_residual(u, z, phi_k, g, big_lam, mu_full)
    return np.max(np.abs(r)) if np.all(np.isfinite(r)) else np.inf


def _general_newton(u, z, phi_k, g, big_lam, mu_full, eye, tol, max_iter=200):
    r = _general_residual(u, z, phi_k, g, big_lam, mu_full)
    rn = np.max(np.abs(r))
    for _ in range(max_iter):
        if rn <= tol:
            break
        jac = eye + big_lam * g * np.exp(u)[None, :]
        try:
            delta = np.linalg.solve(jac, -r)
        except np.linalg.LinAlgError:
            break
        step = 1.0
        improved = False
        while step >= 2.0 ** -20:
            u_new = u + step * delta
            r_new = _general_residual(u_new, z, phi_k, g, big_lam, mu_full)
            rn_new = np.max(np.abs(r_new)) if np.all(np.isfinite(r_new)) else np.inf
            if rn_new <= (1.0 - 1e-4 * step) * rn:
                u, r, rn = u_new, r_new, rn_new
                improved = True
                break
            step *= 0.5
        if not improved:
            break
    return u, rn


# ---------------------------------------------------------------------------
# Dispatch


def concentrations(sys, phi):
    """Concentration map of ``sys`` at ``phi``, routed by model family.

    Lambda = 0 removes the coupling entirely, so every family reduces
    to the same exponential map and is dispatched to
    :func:`conc_lambda_zero`.
    """
    if sys.Lambda == 0.0:
        return conc_lambda_zero(sys, phi)
    if isinstance(sys.model, WeightedA1):
        return conc_weighted_a1(sys, phi)
    if isinstance(sys.model, A3A4):
        return conc_a3a4(sys, phi)
    return conc_general(sys, phi)


def limits(sys, phi):
    """Strong-coupling limit map of ``sys`` at ``phi``."""
    if isinstance(sys.model, WeightedA1):
        return limit_weighted_a1(sys, phi)
    if isinstance(sys.model, A3A4):
        return limit_a3a4(sys, phi)
    raise ModelError("no closed limit map for a GeneralG model")
