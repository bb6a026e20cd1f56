"""Per-mode solutions of (d_t^2 + Delta_g + V) u = f.

The reference solver propagates exactly in the eigenbasis (cos(t sqrt L),
sin(t sqrt L)/sqrt L, Duhamel for f); a kick-drift-kick leapfrog exists for
cross-checks.  Outer Dirichlet truncation is harmless only while waves have
not reached r_max, so the exact solver refuses times past the guard.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy.linalg import eigvalsh_tridiagonal

from .operators import ModeOperator, RadialGrid
from .spectral import FrequencyCutoff, SpectralDecomposition, spectral_cutoff_apply

GUARD_MARGIN = 2.0
GAUSSIAN_REACH = 8.0
ZERO_MODE = 1e-12


class EvolutionError(ValueError):
    pass


# -- data ------------------------------------------------------------------------


@dataclass(eq=False)
class CauchyData:
    """Per-mode initial pairs (u0_l, v0_l) on one grid.

    ``support`` bounds the radial support of the data; ``None`` means the data
    are not compactly supported (eigenvector data) and no guard applies.
    """

    grid: RadialGrid
    modes: dict[int, tuple[np.ndarray, np.ndarray]]
    support: float | None = None

    def __post_init__(self):
        for l, (u, v) in self.modes.items():
            if u.shape != (self.grid.N,) or v.shape != (self.grid.N,):
                raise EvolutionError(f"mode {l}: data must have length {self.grid.N}")
            if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
                raise EvolutionError(f"mode {l}: data must be finite")
        if self.support is not None and self.support > self.grid.r_max - GUARD_MARGIN:
            raise EvolutionError(
                f"data support {self.support:g} exceeds r_max - {GUARD_MARGIN:g} = {self.grid.r_max - GUARD_MARGIN:g}"
            )

    def scaled(self, c: float) -> "CauchyData":
        return CauchyData(self.grid, {l: (c * u, c * v) for l, (u, v) in self.modes.items()}, self.support)

    def filtered(self, sds: Mapping[int, SpectralDecomposition], fc: FrequencyCutoff) -> "CauchyData":
        """Psi_H applied to both components of every mode; the support bound is kept."""
        out = {}
        for l, (u, v) in self.modes.items():
            out[l] = (spectral_cutoff_apply(sds[l], fc, u), spectral_cutoff_apply(sds[l], fc, v))
        return CauchyData(self.grid, out, self.support)


def gaussian_bump(
    grid: RadialGrid,
    r_c: float,
    sigma_b: float,
    modes=(0,),
    amplitude: float = 1.0,
    velocity: bool = False,
) -> CauchyData:
    """exp(-(r - r_c)^2 / (2 sigma_b^2)) in each listed mode, as position or velocity.

    The support bound r_c + 8 sigma_b is where the profile drops below e^-32.
    """
    if sigma_b <= 0:
        raise EvolutionError("sigma_b must be positive")
    g = amplitude * np.exp(-((grid.nodes - r_c) ** 2) / (2.0 * sigma_b**2))
    z = np.zeros(grid.N)
    pairs = {int(l): ((z.copy(), g.copy()) if velocity else (g.copy(), z.copy())) for l in modes}
    return CauchyData(grid, pairs, r_c + GAUSSIAN_REACH * sigma_b)


def eigenvector_data(sd: SpectralDecomposition, k: int, velocity: bool = False) -> CauchyData:
    v = sd.vectors[:, k].copy()
    z = np.zeros_like(v)
    return CauchyData(sd.op.grid, {sd.op.mode.l: (z, v) if velocity else (v, z)}, None)


def zero_data(grid: RadialGrid, modes=(0,)) -> CauchyData:
    return CauchyData(grid, {int(l): (np.zeros(grid.N), np.zeros(grid.N)) for l in modes}, 0.0)


@dataclass(eq=False)
class WaveState:
    t: float
    modes: dict[int, tuple[np.ndarray, np.ndarray]]


@dataclass(eq=False)
class WaveBatch:
    """Several states at once: per mode (N, nt) arrays for u and u_t."""

    times: np.ndarray
    modes: dict[int, tuple[np.ndarray, np.ndarray]]

    @classmethod
    def of(cls, state: WaveState) -> "WaveBatch":
        return cls(np.array([state.t]), {l: (u[:, None], ut[:, None]) for l, (u, ut) in state.modes.items()})


# -- forcing ---------------------------------------------------------------------


@dataclass(eq=False)
class ForcingSpec:
    """f(t, r) per mode, supported in t in [0, t_support] and r <= r_support.

    ``time_scale`` sets the Duhamel quadrature step (time_scale / 8).
    """

    grid: RadialGrid
    values: Callable[[float], Mapping[int, np.ndarray]]
    t_support: float
    r_support: float
    time_scale: float
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.t_support < 0 or self.time_scale <= 0:
            raise EvolutionError("forcing needs t_support >= 0 and time_scale > 0")
        if self.r_support > self.grid.r_max - GUARD_MARGIN:
            raise EvolutionError("forcing support reaches the truncation margin")

    def at(self, t: float) -> dict[int, np.ndarray]:
        if t < 0 or t > self.t_support:
            return {}
        key = float(t)
        if key not in self._cache:
            self._cache[key] = {int(l): np.asarray(f, dtype=float) for l, f in self.values(t).items()}
        return self._cache[key]

    def norm_at(self, t: float, weight: np.ndarray | None = None, multiplicities=None) -> float:
        """||weight f(t)||_m summed over modes (with multiplicities when given)."""
        tot = 0.0
        for l, f in self.at(t).items():
            mult = 1 if multiplicities is None else multiplicities[l]
            w = 1.0 if weight is None else weight
            tot += mult * float(np.sum((w * f) ** 2 * self.grid.m))
        return math.sqrt(tot)

    def quadrature_nodes(self, t_end: float) -> tuple[np.ndarray, np.ndarray]:
        """Composite Simpson nodes and weights on [0, min(t_end, t_support)]."""
        top = min(t_end, self.t_support)
        if top <= 0:
            return np.zeros(1), np.zeros(1)
        n = max(2, int(math.ceil(top / (self.time_scale / 8.0))))
        n += n % 2
        s = np.linspace(0.0, top, n + 1)
        w = np.ones(n + 1)
        w[1:-1:2] = 4.0
        w[2:-1:2] = 2.0
        return s, w * (top / n) / 3.0

    def l1_norm(self, t_end: float | None = None, weight=None, multiplicities=None) -> float:
        """int_0^T ||weight f(t)||_m dt by composite Simpson."""
        s, w = self.quadrature_nodes(self.t_support if t_end is None else t_end)
        return float(sum(wi * self.norm_at(si, weight, multiplicities) for si, wi in zip(s, w)))

    def filtered(self, sds: Mapping[int, SpectralDecomposition], fc: FrequencyCutoff) -> "ForcingSpec":
        """Psi_H f(t) in every mode; supports and time scale are those of f."""
        inner = self.values

        def values(t):
            return {l: spectral_cutoff_apply(sds[l], fc, np.asarray(f, dtype=float)) for l, f in inner(t).items()}

        return ForcingSpec(self.grid, values, self.t_support, self.r_support, self.time_scale)

    def scaled(self, c: float) -> "ForcingSpec":
        inner = self.values
        return ForcingSpec(
            self.grid,
            lambda t: {l: c * np.asarray(f) for l, f in inner(t).items()},
            self.t_support,
            self.r_support,
            self.time_scale,
        )


def separable_forcing(
    grid: RadialGrid,
    profiles: Mapping[int, np.ndarray],
    time_profile: Callable[[float], float],
    t_support: float,
    r_support: float,
    time_scale: float,
) -> ForcingSpec:
    """f(t, r) = a(t) g_l(r) in each listed mode."""
    prof = {int(l): np.asarray(g, dtype=float) for l, g in profiles.items()}
    return ForcingSpec(grid, lambda t: {l: time_profile(t) * g for l, g in prof.items()}, t_support, r_support, time_scale)


def bump_in_time(t, t_support: float):
    """sin^2 pulse on [0, t_support]."""
    if t < 0 or t > t_support:
        return 0.0
    return math.sin(math.pi * t / t_support) ** 2


# -- exact propagation -------------------------------------------------------------


def _frequencies(lam: np.ndarray) -> np.ndarray:
    return np.sqrt(np.maximum(lam, 0.0))


def _sinc_t(lam: np.ndarray, t: float) -> np.ndarray:
    """sin(t sqrt(lam)) / sqrt(lam), with its series for lam < 1e-12."""
    om = _frequencies(lam)
    small = np.abs(lam) < ZERO_MODE
    out = np.empty_like(om)
    out[~small] = np.sin(om[~small] * t) / om[~small]
    ls = lam[small]
    out[small] = t - ls * t**3 / 6.0 + ls**2 * t**5 / 120.0
    return out


def _cos_t(lam: np.ndarray, t: float) -> np.ndarray:
    return np.cos(_frequencies(lam) * t)


def _neg_sin_t(lam: np.ndarray, t: float) -> np.ndarray:
    """d/dt cos(t sqrt lam) = -lam sinc."""
    return -lam * _sinc_t(lam, t)


@dataclass(eq=False)
class ModalSeries:
    """Exact solution in eigen-coefficient space for one mode.

    c(t) = cos(t w) a + sinc(t) b + int_0^t sinc(t - s) f^(s) ds; the velocity
    likewise.  Vectors are recovered with ``sd.vectors @ c``.
    """

    sd: SpectralDecomposition
    l: int
    a: np.ndarray
    b: np.ndarray
    forcing: ForcingSpec | None = None
    _fcoef: dict = field(default_factory=dict, repr=False)

    def _forcing_coeffs(self, s: float) -> np.ndarray:
        key = float(s)
        if key not in self._fcoef:
            f = self.forcing.at(s).get(self.l)
            self._fcoef[key] = np.zeros(self.sd.size) if f is None else self.sd.coefficients(f)
        return self._fcoef[key]

    def coefficients(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        lam = self.sd.eigenvalues
        c = _cos_t(lam, t) * self.a + _sinc_t(lam, t) * self.b
        cd = _neg_sin_t(lam, t) * self.a + _cos_t(lam, t) * self.b
        if self.forcing is not None and t > 0:
            s, w = self.forcing.quadrature_nodes(t)
            for si, wi in zip(s, w):
                if wi == 0.0:
                    continue
                F = self._forcing_coeffs(si)
                c = c + wi * _sinc_t(lam, t - si) * F
                cd = cd + wi * _cos_t(lam, t - si) * F
        return c, cd

    def state(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        c, cd = self.coefficients(t)
        return self.sd.vectors @ c, self.sd.vectors @ cd

    def coefficient_batch(self, times) -> tuple[np.ndarray, np.ndarray]:
        """Coefficients at many times as (k, nt) arrays.

        Past the forcing window the Duhamel nodes are fixed, so those columns
        are built with one outer product per node.
        """
        times = np.asarray(times, dtype=float)
        lam = self.sd.eigenvalues[:, None]
        om = _frequencies(self.sd.eigenvalues)[:, None]
        small = np.abs(lam) < ZERO_MODE
        safe = np.where(small, 1.0, om)

        def sinc(tt):
            return np.where(small, tt, np.sin(safe * tt) / safe)

        T = times[None, :]
        C = np.cos(om * T) * self.a[:, None] + sinc(T) * self.b[:, None]
        Cd = -lam * sinc(T) * self.a[:, None] + np.cos(om * T) * self.b[:, None]
        if self.forcing is None:
            return C, Cd
        late = times >= self.forcing.t_support
        for i in np.nonzero(~late)[0]:
            C[:, i], Cd[:, i] = self.coefficients(float(times[i]))
        if np.any(late):
            s, w = self.forcing.quadrature_nodes(self.forcing.t_support)
            TL = times[late][None, :]
            for si, wi in zip(s, w):
                if wi == 0.0:
                    continue
                F = self._forcing_coeffs(si)[:, None]
                C[:, late] += wi * sinc(TL - si) * F
                Cd[:, late] += wi * np.cos(om * (TL - si)) * F
        return C, Cd

    def state_batch(self, times) -> tuple[np.ndarray, np.ndarray]:
        """(u, u_t) at many times as (N, nt) arrays."""
        C, Cd = self.coefficient_batch(times)
        return self.sd.vectors @ C, self.sd.vectors @ Cd


def guard_time(grid: RadialGrid, data: CauchyData, forcing: ForcingSpec | None = None) -> float:
    """T_max = r_max - r_support - 2, or inf when the data carry no support bound."""
    if data.support is None:
        return math.inf
    support = data.support
    if forcing is not None:
        support = max(support, forcing.r_support)
    return grid.r_max - support - GUARD_MARGIN


def _check_guard(grid, data, forcing, t):
    T_max = guard_time(grid, data, forcing)
    if t > T_max + 1e-12:
        raise EvolutionError(
            f"t={t:g} exceeds the finite-speed guard T_max={T_max:g}: the outer boundary would contaminate the solution"
        )


def modal_series(
    sds: Mapping[int, SpectralDecomposition],
    data: CauchyData,
    forcing: ForcingSpec | None = None,
    projection_tol: float = 1e-8,
) -> dict[int, ModalSeries]:
    """Exact per-mode series for the data and optional forcing."""
    out = {}
    for l, (u0, v0) in data.modes.items():
        if l not in sds:
            raise EvolutionError(f"no decomposition for mode {l}")
        sd = sds[l]
        if sd.window is not None:
            for comp in (u0, v0):
                if sd.projection_defect(comp) > projection_tol:
                    raise EvolutionError(
                        f"mode {l}: data leave the computed eigenspace (defect {sd.projection_defect(comp):.2e}); widen the window"
                    )
        out[l] = ModalSeries(sd, l, sd.coefficients(u0), sd.coefficients(v0), forcing)
    return out


def propagate_spectral(
    sds: Mapping[int, SpectralDecomposition],
    data: CauchyData,
    t: float,
    forcing: ForcingSpec | None = None,
) -> WaveState:
    """Exact modal solution at time t (Duhamel integral by composite Simpson)."""
    _check_guard(data.grid, data, forcing, t)
    series = modal_series(sds, data, forcing)
    return WaveState(float(t), {l: ser.state(t) for l, ser in series.items()})


def sample_batches(
    sds: Mapping[int, SpectralDecomposition],
    data: CauchyData,
    t_end: float,
    cadence: float,
    forcing: ForcingSpec | None = None,
    chunk: int = 256,
):
    """Yield WaveBatch chunks at t = 0, cadence, ..., t_end (inclusive, guard checked)."""
    _check_guard(data.grid, data, forcing, t_end)
    steps = int(round(t_end / cadence))
    if abs(steps * cadence - t_end) > 1e-9 * max(1.0, t_end):
        raise EvolutionError("t_end must be an integer multiple of the cadence")
    times = cadence * np.arange(steps + 1)
    series = modal_series(sds, data, forcing)
    for i in range(0, steps + 1, chunk):
        tt = times[i : i + chunk]
        yield WaveBatch(tt, {l: ser.state_batch(tt) for l, ser in series.items()})


# -- leapfrog -----------------------------------------------------------------------


def max_eigenvalue(op: ModeOperator) -> float:
    d, e = op.symmetric_tridiagonal()
    return float(eigvalsh_tridiagonal(d, e, select="i", select_range=(op.N - 1, op.N - 1))[0])


def propagate_leapfrog(
    op: ModeOperator,
    u0: np.ndarray,
    v0: np.ndarray,
    dt: float,
    t_end: float,
    forcing: Callable[[float], np.ndarray] | None = None,
    lam_max: float | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Kick-drift-kick leapfrog for one mode; returns (u, u_t) at t_end."""
    lam_max = max_eigenvalue(op) if lam_max is None else lam_max
    if dt > 0.5 / math.sqrt(max(lam_max, 1e-300)):
        raise EvolutionError(f"dt={dt:g} violates dt <= 0.5/sqrt(lam_max) = {0.5 / math.sqrt(lam_max):g}")
    steps = int(round(t_end / dt))
    if abs(steps * dt - t_end) > 1e-9 * max(1.0, t_end):
        raise EvolutionError("t_end must be an integer multiple of dt")
    u = np.array(u0, dtype=float)
    v = np.array(v0, dtype=float)

    def accel(x, t):
        a = -op.apply(x)
        return a + forcing(t) if forcing is not None else a

    a = accel(u, 0.0)
    for k in range(steps):
        t = k * dt
        v = v + 0.5 * dt * a
        u = u + dt * v
        a = accel(u, t + dt)
        v = v + 0.5 * dt * a
    return u, v


# -- energies ---------------------------------------------------------------------


def energy(state: WaveState, ops: Mapping[int, ModeOperator]) -> float:
    """sum_l mult_l (<L u, u>_m + ||u_t||_m^2): gradient, angular and potential parts."""
    tot = 0.0
    for l, (u, ut) in state.modes.items():
        op = ops[l]
        tot += op.mode.multiplicity * (op.quadratic_form(u) + float(np.sum(ut**2 * op.m)))
    return tot


def sobolev_energy(data: CauchyData, ops: Mapping[int, ModeOperator]) -> float:
    """||u0||_{H^1}^2 + ||v0||^2 summed over modes with multiplicities."""
    tot = 0.0
    for l, (u, v) in data.modes.items():
        op = ops[l]
        grad = float(u @ (op.gradient_form() @ u))
        tot += op.mode.multiplicity * (float(np.sum(u**2 * op.m)) + grad + float(np.sum(v**2 * op.m)))
    return tot


@dataclass(frozen=True)
class FluxReport:
    residual: float
    gronwall_slack: float
    energy_initial: float
    energy_final: float
    forcing_l1: float


def energy_flux_check(
    sds: Mapping[int, SpectralDecomposition],
    data: CauchyData,
    forcing: ForcingSpec | None,
    t_end: float,
    samples: int = 21,
) -> FluxReport:
    """Energy balance E(t) - E(0) = int_0^t 2 <u_t, f>_m ds, plus the Gronwall bound.

    The balance integral uses the forcing's own Simpson nodes, so the residual
    measures quadrature and propagation error together.
    """
    ops = {l: sd.op for l, sd in sds.items()}
    mult = {l: op.mode.multiplicity for l, op in ops.items()}
    _check_guard(data.grid, data, forcing, t_end)
    E0 = energy(WaveState(0.0, dict(data.modes)), ops)
    times = np.linspace(0.0, t_end, samples)
    series = modal_series(sds, data, forcing)
    scale = max(E0, 1e-300)
    resid = 0.0
    for t in times[1:]:
        state = WaveState(float(t), {l: ser.state(t) for l, ser in series.items()})
        Et = energy(state, ops)
        work = 0.0
        if forcing is not None:
            s, w = forcing.quadrature_nodes(t)
            for si, wi in zip(s, w):
                fs = forcing.at(si)
                for l, ser in series.items():
                    if l in fs:
                        ut = ser.state(si)[1]
                        work += wi * mult[l] * 2.0 * float(np.sum(ut * fs[l] * ops[l].m))
        scale = max(scale, Et)
        resid = max(resid, abs(Et - E0 - work))
    final = energy(WaveState(t_end, {l: ser.state(t_end) for l, ser in series.items()}), ops)
    l1 = forcing.l1_norm(t_end, multiplicities=mult) if forcing is not None else 0.0
    slack = math.sqrt(E0) + l1 - math.sqrt(final)
    return FluxReport(resid / scale, slack, E0, final, l1)


def support_radius(state: WaveState, grid: RadialGrid, threshold: float) -> float:
    """Largest node r_j where |u| or |u_t| exceeds threshold * (global max)."""
    if threshold <= 0:
        raise EvolutionError("threshold must be positive")
    peak = 0.0
    for u, ut in state.modes.values():
        peak = max(peak, float(np.max(np.abs(u))), float(np.max(np.abs(ut))))
    if peak == 0.0:
        return 0.0
    rad = 0.0
    for u, ut in state.modes.values():
        hit = np.nonzero((np.abs(u) > threshold * peak) | (np.abs(ut) > threshold * peak))[0]
        if hit.size:
            rad = max(rad, float(grid.nodes[hit[-1]]))
    return rad
