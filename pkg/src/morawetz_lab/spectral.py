"""Functional calculus for mode operators: spectral cutoffs, resolvents,
weighted operator norms and the exponent fits built on them.

All operator norms are taken in the m-weighted inner product of the grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.linalg import eigh_tridiagonal, solve_banded

from .manifold import potential, r_tilde, smooth_step
from .operators import ModeOperator, RadialGrid, centered_difference, face_difference, face_measure

POWER_TOL = 1e-6
POWER_MAXITER = 10000
POWER_SEED = 42
H_SWEEP = tuple(2.0**j for j in range(1, 7))
Z_CONTOUR = (
    complex(1, 0.5),
    complex(1, -0.5),
    complex(-1, 0.5),
    complex(-1, -0.5),
    complex(2, 0.5),
    complex(2, -0.5),
    complex(-2, 0.5),
    complex(-2, -0.5),
)
SLOPE_TOL = 0.1


class SpectralError(ValueError):
    pass


# -- decompositions -------------------------------------------------------------


@dataclass(eq=False)
class SpectralDecomposition:
    """Eigenpairs of a ModeOperator; eigenvectors are m-orthonormal columns.

    ``window`` is the top of the computed part of the spectrum, or ``None``
    when every eigenpair is present.
    """

    op: ModeOperator
    eigenvalues: np.ndarray
    vectors: np.ndarray
    window: float | None = None

    @property
    def m(self) -> np.ndarray:
        return self.op.m

    @property
    def size(self) -> int:
        return int(self.eigenvalues.size)

    def coefficients(self, u) -> np.ndarray:
        """<u, v_k>_m for every computed k."""
        return self.vectors.T @ (self.m * u)

    def apply_function(self, f: Callable, u) -> np.ndarray:
        return self.vectors @ (f(self.eigenvalues) * self.coefficients(u))

    def covers(self, lam: float) -> bool:
        return self.window is None or lam <= self.window

    def residual(self) -> float:
        """max_k ||L v_k - lam_k v_k||_m / (1 + |lam_k|)."""
        if not self.size:
            return 0.0
        R = self.op.K @ self.vectors / self.m[:, None] - self.vectors * self.eigenvalues[None, :]
        res = np.sqrt(np.sum(R**2 * self.m[:, None], axis=0))
        return float(np.max(res / (1.0 + np.abs(self.eigenvalues))))

    def orthonormality_defect(self) -> float:
        if not self.size:
            return 0.0
        G = self.vectors.T @ (self.vectors * self.m[:, None])
        return float(np.max(np.abs(G - np.eye(self.size))))

    def projection_defect(self, u) -> float:
        """Relative m-norm of the part of u outside the computed eigenspace."""
        nu = math.sqrt(float(np.sum(np.abs(u) ** 2 * self.m)))
        if nu == 0.0:
            return 0.0
        rest = u - self.vectors @ self.coefficients(u)
        return math.sqrt(float(np.sum(np.abs(rest) ** 2 * self.m))) / nu


def rayleigh_quotients(op: ModeOperator, V: np.ndarray) -> np.ndarray:
    """<L v, v>_m / <v, v>_m evaluated from squared face differences.

    Forming L v directly loses eps*||L|| ~ eps/dr^2 absolutely; summing squared
    differences keeps low eigenvalues near relative precision on fine grids.
    """
    grid = op.grid
    DV = face_difference(grid.N, grid.dr) @ V
    zeroth = (op.mode.mu / grid.w_nodes**2 + potential(grid.spec, grid.nodes)) * grid.m
    num = np.sum(DV**2 * face_measure(grid)[:, None], axis=0) + np.sum(V**2 * zeroth[:, None], axis=0)
    return num / np.sum(V**2 * grid.m[:, None], axis=0)


def decompose(op: ModeOperator, lam_max: float | None = None, refine: bool | None = None) -> SpectralDecomposition:
    """Eigenpairs of op, all of them or only those in [-1, lam_max].

    Windowed decompositions (bisection plus inverse iteration) never allocate
    an N x N array; by default their eigenvalues are refined by Rayleigh quotients.
    """
    d, e = op.symmetric_tridiagonal()
    if lam_max is None:
        lam, Q = eigh_tridiagonal(d, e, lapack_driver="stemr")
    else:
        lam, Q = eigh_tridiagonal(d, e, select="v", select_range=(-1.0, lam_max), lapack_driver="stebz")
    if Q.shape[1]:
        # deterministic signs: the largest-magnitude entry of each vector is positive
        idx = np.argmax(np.abs(Q), axis=0)
        Q = Q * np.sign(Q[idx, np.arange(Q.shape[1])])[None, :]
    V = Q / np.sqrt(op.m)[:, None]
    if refine is None:
        refine = lam_max is not None
    if refine and V.shape[1]:
        lam = rayleigh_quotients(op, V)
        order = np.argsort(lam, kind="stable")
        lam, V = lam[order], V[:, order]
    return SpectralDecomposition(op=op, eigenvalues=lam, vectors=V, window=lam_max)


# -- cutoffs ---------------------------------------------------------------------


def plateau_window(x, lo0: float, lo1: float, hi1: float, hi0: float):
    """1 on [lo1, hi1], 0 outside (lo0, hi0), standard smooth steps in between."""
    x = np.asarray(x, dtype=float)
    up = smooth_step((x - lo0) / (lo1 - lo0))
    down = 1.0 - smooth_step((x - hi1) / (hi0 - hi1))
    return up * down


@dataclass(frozen=True)
class FrequencyCutoff:
    """psi = 1 on [1/2, 2] with support [1/4, 4]; psi_tilde = 1 on [1/4, 4] with support [1/8, 8]."""

    H: float = 1.0

    def __post_init__(self):
        if not self.H >= 1.0:
            raise SpectralError(f"H must be >= 1, got {self.H}")

    @staticmethod
    def psi(lam):
        return plateau_window(lam, 0.25, 0.5, 2.0, 4.0)

    @staticmethod
    def psi_tilde(lam):
        return plateau_window(lam, 0.125, 0.25, 4.0, 8.0)

    def support_top(self, tilde: bool = False) -> float:
        """Largest eigenvalue of the operator reached by psi(H^2 .)."""
        return (8.0 if tilde else 4.0) / self.H**2

    def weights(self, lam, tilde: bool = False) -> np.ndarray:
        f = self.psi_tilde if tilde else self.psi
        return f(self.H**2 * np.asarray(lam, dtype=float))


def _require_window(sd: SpectralDecomposition, top: float):
    if not sd.covers(top):
        raise SpectralError(f"decomposition stops at {sd.window}, cutoff reaches {top}")


def spectral_cutoff_apply(sd: SpectralDecomposition, fc: FrequencyCutoff, u, tilde: bool = False) -> np.ndarray:
    """sum_k psi(H^2 lam_k) <u, v_k>_m v_k."""
    u = np.asarray(u)
    if u.shape[0] != sd.op.N:
        raise SpectralError(f"vector of length {u.shape[0]} on a grid of {sd.op.N} nodes")
    _require_window(sd, fc.support_top(tilde))
    return sd.vectors @ (fc.weights(sd.eigenvalues, tilde) * sd.coefficients(u))


def _check_z(z) -> complex:
    z = complex(z)
    if z.imag == 0.0:
        raise SpectralError(f"resolvent needs Im z != 0, got z={z}")
    return z


def resolvent_apply(sd: SpectralDecomposition, fc: FrequencyCutoff, z, f) -> np.ndarray:
    """(H^2 L - z)^{-1} f from a complete decomposition."""
    z = _check_z(z)
    if sd.window is not None:
        raise SpectralError("resolvent needs the complete spectrum")
    c = sd.coefficients(np.asarray(f, dtype=complex))
    return sd.vectors @ (c / (fc.H**2 * sd.eigenvalues - z))


class BandedResolvent:
    """(H^2 L - z)^{-1} by tridiagonal solves of (H^2 K - z M) u = M f."""

    def __init__(self, op: ModeOperator, H: float, z):
        self.z = _check_z(z)
        self.H = float(H)
        self.m = op.m
        off = self.H**2 * op.K.diagonal(1)
        ab = np.zeros((3, op.N), dtype=complex)
        ab[0, 1:] = off
        ab[1] = self.H**2 * op.K.diagonal() - self.z * self.m
        ab[2, :-1] = off
        self._ab = ab

    def __call__(self, f) -> np.ndarray:
        return solve_banded((1, 1), self._ab, self.m * np.asarray(f, dtype=complex), check_finite=False)

    def adjoint(self) -> "BandedResolvent":
        """R(z)^dagger = R(conj z) in the m-inner product."""
        out = object.__new__(BandedResolvent)
        out.z, out.H, out.m = self.z.conjugate(), self.H, self.m
        out._ab = self._ab.conj()
        return out


# -- operator norms -------------------------------------------------------------


@dataclass(frozen=True)
class NormEstimate:
    value: float
    iterations: int
    converged: bool


def power_norm(
    apply: Callable,
    apply_adjoint: Callable,
    m: np.ndarray,
    tol: float = POWER_TOL,
    maxiter: int = POWER_MAXITER,
    seed: int = POWER_SEED,
    complex_start: bool = False,
) -> NormEstimate:
    """||T||_m by power iteration on T^dagger T from a seeded random start."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(m.size)
    if complex_start:
        v = v + 1j * rng.standard_normal(m.size)

    def mnorm(x):
        return math.sqrt(float(np.sum(np.abs(x) ** 2 * m)))

    v = v / mnorm(v)
    prev = 0.0
    for it in range(1, maxiter + 1):
        y = apply_adjoint(apply(v))
        lam = mnorm(y)
        if lam == 0.0:
            return NormEstimate(0.0, it, True)
        if abs(lam - prev) <= tol * lam:
            return NormEstimate(math.sqrt(lam), it, True)
        prev = lam
        v = y / lam
    return NormEstimate(math.sqrt(prev), maxiter, False)


@dataclass(eq=False)
class LowRankComposite:
    """T = [Dop] diag(a) V diag(d) V^T M diag(b), Dop an optional node derivative.

    ``V`` holds m-orthonormal eigenvectors, so the middle factor is a spectral
    multiplier restricted to the kept eigenpairs.
    """

    grid: RadialGrid
    V: np.ndarray
    d: np.ndarray
    a: np.ndarray
    b: np.ndarray
    deriv: sp.csr_matrix | None = None

    def apply(self, v):
        m = self.grid.m
        y = self.a * (self.V @ (self.d * (self.V.T @ (m * self.b * v))))
        return self.deriv @ y if self.deriv is not None else y

    def apply_adjoint(self, y):
        m = self.grid.m
        if self.deriv is not None:
            y = (self.deriv.T @ (m * y)) / m
        return self.b * (self.V @ (self.d * (self.V.T @ (m * self.a * y))))

    def norm(self, tol=POWER_TOL, maxiter=POWER_MAXITER, seed=POWER_SEED) -> NormEstimate:
        if not np.any(self.d) or not np.any(self.a) or not np.any(self.b):
            return NormEstimate(0.0, 0, True)
        return power_norm(self.apply, self.apply_adjoint, self.grid.m, tol, maxiter, seed)

    def exact_norm(self) -> float:
        """2-norm of the k x k core between the triangular factors (no iteration)."""
        if self.d.size == 0:
            return 0.0
        sm = np.sqrt(self.grid.m)
        Q = self.V * sm[:, None]
        A = self.a[:, None] * Q
        if self.deriv is not None:
            A = sm[:, None] * (self.deriv @ (A / sm[:, None]))
        B = self.b[:, None] * Q
        Ra = np.linalg.qr(A, mode="r")
        Rb = np.linalg.qr(B, mode="r")
        return float(np.linalg.norm((Ra * self.d[None, :]) @ Rb.T, 2))


def _scat_deriv(grid: RadialGrid, l: int) -> sp.csr_matrix:
    return centered_difference(grid.N, grid.dr, 1 if l == 0 else -1)


def conjugated_cutoff_operator(
    sd: SpectralDecomposition, fc: FrequencyCutoff, L_kind: str, s: float, rho: float
) -> LowRankComposite:
    """L x^{s+rho} Psi_H x^{-s} with x = 1/r~."""
    grid = sd.op.grid
    n = grid.spec.n
    if s < 0 or rho < 0 or not s + rho < min(2.0, n / 2.0):
        raise SpectralError(f"need s, rho >= 0 and s + rho < min(2, n/2); got s={s}, rho={rho}, n={n}")
    if L_kind not in ("id", "scat_deriv"):
        raise SpectralError(f"unknown L_kind {L_kind!r}")
    _require_window(sd, fc.support_top())
    psi = fc.weights(sd.eigenvalues)
    keep = psi > 0
    x = 1.0 / r_tilde(grid.nodes)
    deriv = _scat_deriv(grid, sd.op.mode.l) if L_kind == "scat_deriv" else None
    return LowRankComposite(grid, sd.vectors[:, keep], psi[keep], x ** (s + rho), x ** (-s), deriv)


def conjugated_cutoff_norm(
    sd: SpectralDecomposition, fc: FrequencyCutoff, L_kind: str = "id", s: float = 0.0, rho: float = 0.0
) -> float:
    """m-weighted norm of L x^{s+rho} Psi_H x^{-s} by power iteration."""
    return conjugated_cutoff_operator(sd, fc, L_kind, s, rho).norm().value


@dataclass(eq=False)
class ResolventComposite:
    """T = diag(p_out) [Dop] diag(p_mid) R(z) diag(p_in), Dop optional."""

    op: ModeOperator
    R: BandedResolvent
    p_out: np.ndarray
    p_mid: np.ndarray
    p_in: np.ndarray
    deriv: sp.csr_matrix | None = None

    def __post_init__(self):
        self._Radj = self.R.adjoint()

    def apply(self, v):
        y = self.p_mid * self.R(self.p_in * v)
        if self.deriv is not None:
            y = self.deriv @ y
        return self.p_out * y

    def apply_adjoint(self, y):
        m = self.op.m
        y = self.p_out * y
        if self.deriv is not None:
            y = (self.deriv.T @ (m * y)) / m
        return self.p_in * self._Radj(self.p_mid * y)

    def norm(self, tol=POWER_TOL, maxiter=POWER_MAXITER, seed=POWER_SEED) -> NormEstimate:
        return power_norm(self.apply, self.apply_adjoint, self.op.m, tol, maxiter, seed, complex_start=True)


def weighted_resolvent_operator(
    op: ModeOperator,
    H: float,
    z,
    *,
    out_power: float = 0.0,
    mid_power: float = 0.0,
    in_power: float = 0.0,
    deriv: bool = False,
) -> ResolventComposite:
    """x^{out} [d/dr] x^{mid} R(z) x^{in} with x = 1/r~ and R(z) = (H^2 L - z)^{-1}."""
    x = 1.0 / r_tilde(op.grid.nodes)
    D = _scat_deriv(op.grid, op.mode.l) if deriv else None
    return ResolventComposite(op, BandedResolvent(op, H, z), x**out_power, x**mid_power, x**in_power, D)


# -- fits ------------------------------------------------------------------------


def fit_decay_exponent(samples) -> tuple[float, float]:
    """Least-squares slope and intercept of log(norm) against log(scale)."""
    pts = [(float(a), float(b)) for a, b in samples]
    if len(pts) < 3:
        raise SpectralError("need at least 3 samples for a slope fit")
    if any(a <= 0 or b <= 0 for a, b in pts):
        raise SpectralError("slope fit needs positive scales and norms")
    X = np.log([a for a, _ in pts])
    Y = np.log([b for _, b in pts])
    A = np.vstack([X, np.ones_like(X)]).T
    (slope, intercept), *_ = np.linalg.lstsq(A, Y, rcond=None)
    return float(slope), float(intercept)


def local_slopes(samples) -> list[float]:
    """Slopes between consecutive log-log samples."""
    pts = [(float(a), float(b)) for a, b in samples]
    return [math.log(b1 / b0) / math.log(a1 / a0) for (a0, b0), (a1, b1) in zip(pts, pts[1:])]


# -- weighted inequalities -------------------------------------------------------


def weighted_gradient_sq(grid: RadialGrid, u, power: float, mu: float) -> float:
    """||x^p grad u||_m^2 with the per-mode angular part mu |u|^2 / w^2, x = 1/r~."""
    du = face_difference(grid.N, grid.dr) @ u
    rad = np.sum(face_measure(grid) * r_tilde(grid.faces) ** (-2 * power) * np.abs(du) ** 2)
    ang = mu * np.sum(r_tilde(grid.nodes) ** (-2 * power) * np.abs(u) ** 2 / grid.w_nodes**2 * grid.m)
    return float(rad + ang)


def weighted_sq(grid: RadialGrid, u, power: float) -> float:
    """||x^p u||_m^2, x = 1/r~."""
    return float(np.sum(r_tilde(grid.nodes) ** (-2 * power) * np.abs(u) ** 2 * grid.m))


def hardy_ratio(grid: RadialGrid, u, s: float, theta: float, mu: float = 0.0) -> float:
    """||x^{s+theta} u|| / (||x^s grad u||^theta ||x^s u||^{1-theta}), x = 1/r~."""
    n = grid.spec.n
    if not (s == 0.0 or 0.0 < s < (n - 2) / 2.0) or not 0.0 <= theta <= 1.0:
        raise SpectralError(f"need 0 <= s < (n-2)/2 and 0 <= theta <= 1; got s={s}, theta={theta}")
    num = math.sqrt(weighted_sq(grid, u, s + theta))
    g = math.sqrt(weighted_gradient_sq(grid, u, s, mu))
    b = math.sqrt(weighted_sq(grid, u, s))
    den = g**theta * b ** (1.0 - theta)
    if den == 0.0:
        raise SpectralError("zero denominator in the Hardy ratio")
    return num / den


def interpolation_bound_ratio(sd: SpectralDecomposition | ModeOperator, u, s: float) -> float:
    """||x^s grad u|| / (||L u||^{(1+s)/2} ||u||^{(1-s)/2})."""
    op = sd.op if isinstance(sd, SpectralDecomposition) else sd
    grid = op.grid
    n = grid.spec.n
    if not 0.0 <= s < min(1.0, (n - 2) / 2.0):
        raise SpectralError(f"need 0 <= s < min(1, (n-2)/2); got s={s}")
    lhs = math.sqrt(weighted_gradient_sq(grid, u, s, op.mode.mu))
    Lu = math.sqrt(weighted_sq(grid, op.apply(u), 0.0))
    nu = math.sqrt(weighted_sq(grid, u, 0.0))
    den = Lu ** ((1 + s) / 2) * nu ** ((1 - s) / 2)
    if den == 0.0:
        raise SpectralError("zero denominator in the interpolation ratio")
    return lhs / den


# -- localized cutoffs -----------------------------------------------------------


def localized_cutoff_operator(
    sd: SpectralDecomposition,
    phi: Callable,
    chi: Callable,
    m_weight: int,
    t: float,
    L_kind: str = "id",
) -> LowRankComposite:
    """L r~^m phi(r/t) psi(L) (1 - chi(r/t)) r~^m with the fixed psi (no H)."""
    grid = sd.op.grid
    if m_weight < 0 or int(m_weight) != m_weight:
        raise SpectralError("m_weight must be a nonnegative integer")
    r = grid.nodes
    ph = np.asarray(phi(r / t), dtype=float)
    cut = 1.0 - np.asarray(chi(r / t), dtype=float)
    if np.any(ph * cut != 0.0):
        raise SpectralError(f"supp phi and supp (1 - chi) overlap on the grid at t={t}")
    fc = FrequencyCutoff(1.0)
    _require_window(sd, fc.support_top())
    psi = fc.weights(sd.eigenvalues)
    keep = psi > 0
    w = r_tilde(r) ** m_weight
    deriv = _scat_deriv(grid, sd.op.mode.l) if L_kind == "scat_deriv" else None
    return LowRankComposite(grid, sd.vectors[:, keep], psi[keep], w * ph, cut * w, deriv)


def localized_cutoff_decay(
    sd: SpectralDecomposition,
    phi: Callable,
    chi: Callable,
    m_weight: int,
    t_samples,
    L_kind: str = "id",
) -> list[tuple[float, float]]:
    """(t, norm) for each sampled t."""
    out = []
    for t in t_samples:
        T = localized_cutoff_operator(sd, phi, chi, m_weight, float(t), L_kind)
        out.append((float(t), T.norm().value))
    return out
