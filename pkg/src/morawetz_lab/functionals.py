"""Space-time weighted norms of frequency-localized waves.

Every quantity is a running trapezoid integral in t of an instantaneous
quadratic expression in the state, summed over modes with multiplicities.
Accumulators over adjacent time chunks merge by addition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .evolution import ForcingSpec, WaveBatch, WaveState
from .manifold import WeightFunctions, r_tilde
from .operators import ModeOperator, RadialGrid, face_difference, face_measure
from .spectral import fit_decay_exponent, plateau_window

OUTPUT_CADENCE = 0.1
PLATEAU_FRACTION = 0.1
KAPPA_COROLLARY = 0.51
LN2 = math.log(2.0)


class FunctionalError(ValueError):
    pass


# -- accumulator -------------------------------------------------------------------


@dataclass
class Channel:
    """Trapezoid integral of one nonnegative integrand sampled at increasing times."""

    total: float = 0.0
    t_last: float | None = None
    v_last: float = 0.0
    times: list = field(default_factory=list)
    values: list = field(default_factory=list)

    def add(self, t: float, v: float):
        if v < 0:
            raise FunctionalError(f"negative integrand {v}")
        if self.t_last is not None:
            if t <= self.t_last:
                raise FunctionalError(f"samples must increase in time ({t} after {self.t_last})")
            self.total += 0.5 * (t - self.t_last) * (self.v_last + v)
        self.t_last, self.v_last = float(t), float(v)
        self.times.append(float(t))
        self.values.append(self.total)

    def at(self, T: float) -> float:
        """Cumulative value at the last sample time <= T (+ rounding slack)."""
        if not self.times:
            return 0.0
        i = int(np.searchsorted(self.times, T + 1e-9, side="right")) - 1
        return self.values[i] if i >= 0 else 0.0

    def merged(self, later: "Channel") -> "Channel":
        if self.t_last is None:
            return Channel(later.total, later.t_last, later.v_last, list(later.times), list(later.values))
        if later.t_last is None:
            return Channel(self.total, self.t_last, self.v_last, list(self.times), list(self.values))
        if abs(later.times[0] - self.t_last) > 1e-12:
            raise FunctionalError("merged chunks must share their boundary sample")
        base = self.total
        return Channel(
            base + later.total,
            later.t_last,
            later.v_last,
            self.times + later.times[1:],
            self.values + [base + v for v in later.values[1:]],
        )


@dataclass
class MorawetzAccumulator:
    """Named trapezoid channels; see ``accumulate_*`` for the channel names."""

    channels: dict = field(default_factory=dict)
    shells: tuple = ()

    def add(self, name: str, t: float, v: float):
        self.channels.setdefault(name, Channel()).add(t, v)

    def value(self, name: str, T: float | None = None) -> float:
        ch = self.channels.get(name)
        if ch is None:
            return 0.0
        return ch.total if T is None else ch.at(T)

    def names(self) -> list[str]:
        return sorted(self.channels)

    def merge(self, later: "MorawetzAccumulator") -> "MorawetzAccumulator":
        """Accumulator for [T0, T2] from chunks [T0, T1] and [T1, T2]."""
        out = MorawetzAccumulator(shells=self.shells or later.shells)
        for name in sorted(set(self.channels) | set(later.channels)):
            a = self.channels.get(name, Channel())
            b = later.channels.get(name, Channel())
            out.channels[name] = a.merged(b)
        return out

    def plateau(self, name: str, T0: float) -> tuple[float, float, bool]:
        """(value at T0, value at 2 T0, increment <= 0.1 * value at T0)."""
        a = self.value(name, T0)
        b = self.value(name, 2 * T0)
        return a, b, b - a <= PLATEAU_FRACTION * a


# -- per-state integrands ------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GridWeights:
    """Node and face weights shared by every sample on one grid."""

    grid: RadialGrid
    wf: WeightFunctions
    shells: tuple

    @classmethod
    def build(cls, grid: RadialGrid, wf: WeightFunctions) -> "GridWeights":
        k_min = max(1, int(math.floor(math.log2(2.0 * wf.R))))
        k_max = int(math.floor(math.log2(grid.r_max)))
        return cls(grid, wf, tuple(range(k_min, k_max + 1)))

    def __post_init__(self):
        g, wf = self.grid, self.wf
        rn, rf = g.nodes, g.faces
        tn, tf = r_tilde(rn), r_tilde(rf)
        d = object.__setattr__
        d(self, "D", face_difference(g.N, g.dr))
        d(self, "fm", face_measure(g))
        d(self, "tn", tn)
        d(self, "tf", tf)
        d(self, "chi_n", wf.chi1_exterior(rn))
        d(self, "chi_f", wf.chi1_exterior(rf))
        d(self, "chi0_n", wf.chi0_interior(rn))
        d(self, "chi0_f", wf.chi0_interior(rf))
        d(self, "inv_w2", 1.0 / g.w_nodes**2)
        # half-open shells [2^k, 2^{k+1}) by face and node position
        d(self, "shell_faces", {k: (rf >= 2.0**k) & (rf < 2.0 ** (k + 1)) for k in self.shells})
        d(self, "shell_nodes", {k: (rn >= 2.0**k) & (rn < 2.0 ** (k + 1)) for k in self.shells})
        d(self, "shell_floor", 2.0 ** self.shells[0] if self.shells else math.inf)


def _batch(state) -> WaveBatch:
    return state if isinstance(state, WaveBatch) else WaveBatch.of(state)


def _wsum(weight: np.ndarray, X: np.ndarray, mask=None) -> np.ndarray:
    """Column sums of weight[:, None] * X, optionally restricted to a row mask."""
    if mask is not None:
        return weight[mask] @ X[mask]
    return weight @ X


def _record(acc: MorawetzAccumulator, times, values: Mapping[str, np.ndarray]):
    for name in values:
        for t, v in zip(times, values[name]):
            acc.add(name, float(t), float(v))


def thm1_integrands(gw: GridWeights, state, ops: Mapping[int, ModeOperator]) -> dict[str, np.ndarray]:
    """Instantaneous T1_a..T1_d, S_k and the shell-range part of T1_b, one entry per sample."""
    batch = _batch(state)
    g = gw.grid
    nt = batch.times.size
    out = {name: np.zeros(nt) for name in ("T1_a", "T1_b", "T1_c", "T1_d", "T1_b_shellrange")}
    for k in gw.shells:
        out[f"S_{k}"] = np.zeros(nt)
    a_w = gw.tn**-3 * g.m
    b_w = gw.chi_f**2 / (np.log(gw.tf) ** 2 * gw.tf) * gw.fm
    # angular gradient on the unit sphere: |grad_Y u|^2 = mu |u|^2
    c_w = gw.chi_n**2 * gw.tn**-3 * g.m
    d_wf = gw.chi0_f**2 * gw.fm
    d_wn = gw.chi0_n**2 * gw.inv_w2 * g.m
    s_w = gw.chi_f**2 / gw.tf * gw.fm
    far = g.faces >= gw.shell_floor
    for l, (U, Ut) in batch.modes.items():
        mode = ops[l].mode
        mult = mode.multiplicity
        DU2 = (gw.D @ U) ** 2
        U2 = U * U
        out["T1_a"] += mult * _wsum(a_w, U2)
        out["T1_b"] += mult * _wsum(b_w, DU2)
        out["T1_b_shellrange"] += mult * _wsum(b_w, DU2, far)
        out["T1_c"] += mult * mode.mu * _wsum(c_w, U2)
        out["T1_d"] += mult * (_wsum(d_wf, DU2) + mode.mu * _wsum(d_wn, U2))
        for k in gw.shells:
            out[f"S_{k}"] += mult * _wsum(s_w, DU2, gw.shell_faces[k])
    return out


def accumulate_thm1(
    acc: MorawetzAccumulator, state, gw: GridWeights, ops: Mapping[int, ModeOperator]
) -> MorawetzAccumulator:
    """Advance T1_a..T1_d, the shell series S_k and the shell-range part of T1_b."""
    acc.shells = gw.shells
    batch = _batch(state)
    _record(acc, batch.times, thm1_integrands(gw, batch, ops))
    return acc


def forcing_integrands(
    gw: GridWeights, forcing: ForcingSpec | None, t: float, ops: Mapping[int, ModeOperator]
) -> dict[str, float]:
    """||f||, per-shell ||r~^{1/2} f||^2 and ||(r~^2+t^2)^{1/4} log(r~^2+t^2) f||^2 at time t."""
    out = {"f_norm": 0.0, "N_log": 0.0}
    for k in gw.shells:
        out[f"F_{k}"] = 0.0
    if forcing is None:
        return out
    g = gw.grid
    sq = 0.0
    rho2 = gw.tn**2 + t * t
    logw = np.sqrt(rho2) * np.log(rho2) ** 2
    for l, f in forcing.at(t).items():
        mult = ops[l].mode.multiplicity
        f2m = f * f * g.m
        sq += mult * float(np.sum(f2m))
        out["N_log"] += mult * float(np.sum(logw * f2m))
        for k in gw.shells:
            out[f"F_{k}"] += mult * float(np.sum((gw.tn * f2m)[gw.shell_nodes[k]]))
    out["f_norm"] = math.sqrt(sq)
    return out


def accumulate_forcing(
    acc: MorawetzAccumulator, gw: GridWeights, forcing: ForcingSpec | None, times, ops
) -> MorawetzAccumulator:
    for t in np.atleast_1d(times):
        for name, v in forcing_integrands(gw, forcing, float(t), ops).items():
            acc.add(name, float(t), v)
    return acc


# -- dyadic shells ----------------------------------------------------------------------------


@dataclass(frozen=True)
class ShellReport:
    shells: tuple
    S: tuple
    linf: float
    l1_forcing: float
    N_L1: float
    N_shell: float
    N_log: float
    T1_b_shellrange: float
    log_comparison: float
    linf_comparison: float
    domination_constant: float


def shell_sum(shells) -> float:
    return float(sum(k**-2.0 for k in shells))


def domination_constant(shells) -> float:
    """c0 with N_log >= c0 N_shell: 4 ln^2 2 / sum_k k^-2 over the shells."""
    return 4.0 * LN2**2 / shell_sum(shells)


def shell_norms(acc: MorawetzAccumulator, T: float | None = None) -> ShellReport:
    """ell^inf over shells of sqrt(S_k), the ell^1 forcing sum, and the comparison quantities.

    On shell k, log r~ >= k ln 2, so the shell-range part of T1_b is at most
    sum_k (k ln 2)^-2 S_k, which in turn is at most (ln 2)^-2 (sum_k k^-2) max_k S_k.
    """
    shells = acc.shells
    S = tuple(acc.value(f"S_{k}", T) for k in shells)
    F = [acc.value(f"F_{k}", T) for k in shells]
    linf = math.sqrt(max(S)) if S else 0.0
    l1 = float(sum(math.sqrt(max(x, 0.0)) for x in F))
    log_cmp = float(sum(s / (k * LN2) ** 2 for k, s in zip(shells, S)))
    linf_cmp = shell_sum(shells) / LN2**2 * (max(S) if S else 0.0)
    return ShellReport(
        shells=tuple(shells),
        S=S,
        linf=linf,
        l1_forcing=l1,
        N_L1=acc.value("f_norm", T) ** 2,
        N_shell=l1**2,
        N_log=acc.value("N_log", T),
        T1_b_shellrange=acc.value("T1_b_shellrange", T),
        log_comparison=log_cmp,
        linf_comparison=linf_cmp,
        domination_constant=domination_constant(shells) if shells else 0.0,
    )


# -- light cone -------------------------------------------------------------------------


def phi0(y):
    """Even plateau: 1 on [-1, 1], supported in [-2, 2]."""
    return plateau_window(np.abs(np.asarray(y, dtype=float)), -2.0, -1.0, 1.0, 2.0)


def rho0(y):
    """Even plateau: 1 on [-2.25, 2.25], supported in [-2.75, 2.75] (so 1 near supp phi0)."""
    return plateau_window(np.abs(np.asarray(y, dtype=float)), -2.75, -2.25, 2.25, 2.75)


@dataclass(frozen=True)
class ConeRegionSpec:
    """Cone {t > 1/delta, r~/t < delta} with the commutator cutoffs at scale c < 3 delta."""

    delta: float = 0.25
    c: float = 1.0 / 16.0
    sigma: float = 0.4
    kappa: float = KAPPA_COROLLARY

    def __post_init__(self):
        if not 0.0 < self.delta <= 0.25:
            raise FunctionalError("delta must lie in (0, 1/4]")
        if not 0.0 < self.c < 3.0 * self.delta:
            raise FunctionalError("need 0 < c < 3 delta")
        if not 0.0 < self.sigma < 0.5:
            raise FunctionalError("sigma must lie in (0, 1/2)")

    def phi(self, y):
        return phi0(np.asarray(y) / self.c)

    def phi_tilde(self, y):
        return self.phi(np.asarray(y) / (3.0 * self.delta))

    def rho(self, y):
        return rho0(np.asarray(y) / self.c)

    def in_region(self, t: float, rt: np.ndarray) -> np.ndarray:
        if t <= 1.0 / self.delta:
            return np.zeros(rt.shape, dtype=bool)
        return rt / t < self.delta

    def hypothesis_set(self, t: float, rt: np.ndarray) -> np.ndarray:
        """supp d(phi) union supp(rho - phi) in terms of r~/t, intersected with t > 1/delta."""
        if t <= 1.0 / self.delta:
            return np.zeros(rt.shape, dtype=bool)
        y = rt / t
        ph = self.phi(y)
        return ((ph > 0) & (ph < 1)) | (np.abs(self.rho(y) - ph) > 0)

    @property
    def exponents(self) -> tuple[float, float]:
        """(k, s) = (2 kappa - 1, 1 - 2 sigma) of the proof multiplier's profile."""
        return 2.0 * self.kappa - 1.0, 1.0 - 2.0 * self.sigma


def _grad_parts(gw: GridWeights, op: ModeOperator, U, Ut):
    """Space-time gradient density split into a face part (|u_r|^2 with its face
    measure) and a node part (|u_t|^2 + mu |u|^2 / w^2 with m), per column."""
    faces = (gw.D @ U) ** 2 * gw.fm[:, None]
    nodes = (Ut * Ut + op.mode.mu * gw.inv_w2[:, None] * U * U) * gw.grid.m[:, None]
    return faces, nodes


def cone_tag(crs: "ConeRegionSpec") -> str:
    return f"{crs.delta:g}_{crs.sigma:g}_{crs.kappa:g}"


def cone_integrands(
    gw: GridWeights, state, crs: ConeRegionSpec, ops: Mapping[int, ModeOperator], forcing: ForcingSpec | None
) -> dict[str, np.ndarray]:
    batch = _batch(state)
    g = gw.grid
    tag = cone_tag(crs)
    names = ("C_grad", "C_fn", "C_hyp_grad", "C_hyp_ups", "C_forcing")
    out = {f"{n}[{tag}]": np.zeros(batch.times.size) for n in names}
    for i, t in enumerate(batch.times):
        region = crs.in_region(t, gw.tn)
        if not np.any(region):
            continue
        region_f = crs.in_region(t, gw.tf)
        ups = crs.hypothesis_set(t, gw.tn)
        ups_f = crs.hypothesis_set(t, gw.tf)
        base = t ** (-2.0 * crs.kappa)
        wt_n = base * (t / gw.tn) ** (2.0 * crs.sigma)
        wt_f = base * (t / gw.tf) ** (2.0 * crs.sigma)
        for l, (U, Ut) in batch.modes.items():
            op = ops[l]
            mult = op.mode.multiplicity
            df, dn = _grad_parts(gw, op, U[:, i : i + 1], Ut[:, i : i + 1])
            df, dn = df[:, 0], dn[:, 0]
            u2m = U[:, i] ** 2 * g.m
            grad_w = np.sum((wt_f * df)[region_f]) + np.sum((wt_n * dn)[region])
            grad_0 = np.sum(df[region_f]) + np.sum(dn[region])
            out[f"C_grad[{tag}]"][i] += mult * grad_w
            out[f"C_fn[{tag}]"][i] += mult * np.sum((wt_n * u2m / gw.tn**2)[region])
            out[f"C_hyp_grad[{tag}]"][i] += mult * base * grad_0
            # surrogate hypothesis norm on the commutator set: t^{-2 kappa}(|grad u|^2 + |u|^2 / t^2)
            ups_sum = np.sum(df[ups_f]) + np.sum((dn + u2m / t**2)[ups])
            out[f"C_hyp_ups[{tag}]"][i] += mult * base * ups_sum
        if forcing is not None:
            fw = gw.tn * t ** (1.0 - 2.0 * crs.kappa)
            for l, f in forcing.at(t).items():
                mult = ops[l].mode.multiplicity
                out[f"C_forcing[{tag}]"][i] += mult * np.sum((fw * f * f * g.m)[region])
    return out


def accumulate_cone(
    acc: MorawetzAccumulator,
    state,
    gw: GridWeights,
    crs: ConeRegionSpec,
    ops: Mapping[int, ModeOperator],
    forcing: ForcingSpec | None = None,
) -> MorawetzAccumulator:
    """Advance the cone integrals for one region; outside t > 1/delta the integrands vanish."""
    batch = _batch(state)
    _record(acc, batch.times, cone_integrands(gw, batch, crs, ops, forcing))
    return acc


def accumulate_local_energy(
    acc: MorawetzAccumulator, state, gw: GridWeights, K_radius: float, ops: Mapping[int, ModeOperator]
) -> MorawetzAccumulator:
    """||grad u||^2 over r <= K_radius (space-time gradient)."""
    if K_radius > gw.wf.R:
        raise FunctionalError(f"K_radius {K_radius} must not exceed R = {gw.wf.R}")
    batch = _batch(state)
    inside = gw.grid.nodes <= K_radius
    inside_f = gw.grid.faces <= K_radius
    tot = np.zeros(batch.times.size)
    for l, (U, Ut) in batch.modes.items():
        op = ops[l]
        df, dn = _grad_parts(gw, op, U, Ut)
        tot += op.mode.multiplicity * (df[inside_f].sum(axis=0) + dn[inside].sum(axis=0))
    _record(acc, batch.times, {f"local[{K_radius:g}]": tot})
    return acc


@dataclass(frozen=True)
class DyadicDecay:
    j: tuple
    blocks: tuple
    slope: float
    predicted_bound: float


def compact_set_decay(acc: MorawetzAccumulator, K_radius: float, eps: float, kappa: float, j_range) -> DyadicDecay:
    """B_j = int_{2^j}^{2^{j+1}} ||grad u||^2_{r <= K} dt and the fitted slope of log2 B_j against j.

    ``predicted_bound`` is 2 kappa - 1 + 2 eps, the largest block growth rate
    compatible with membership in t^{kappa - 1/2 + eps} L^2.
    """
    name = f"local[{K_radius:g}]"
    js = tuple(int(j) for j in j_range)
    B = tuple(acc.value(name, 2.0 ** (j + 1)) - acc.value(name, 2.0**j) for j in js)
    if any(b <= 0 for b in B):
        slope = math.nan if all(b == 0 for b in B) else -math.inf
    else:
        # log2 B_j against j is the same fit as log B against log 2^j
        slope, _ = fit_decay_exponent([(2.0**j, b) for j, b in zip(js, B)])
    return DyadicDecay(js, B, float(slope), 2.0 * kappa - 1.0 + 2.0 * eps)


# -- reports -------------------------------------------------------------------------


THM1_TERMS = ("T1_a", "T1_b", "T1_c", "T1_d")


def ratio_report(acc: MorawetzAccumulator, E0: float, T: float, fractions=(0.125, 0.25, 0.5, 1.0)) -> dict:
    """LHS_i / (E0 + N_L1) and LHS_i / (E0 + N_L1 + N_shell) for each T1 term, per T."""
    rows = []
    for fr in fractions:
        Tf = fr * T
        sh = shell_norms(acc, Tf)
        d1 = E0 + sh.N_L1
        d2 = d1 + sh.N_shell
        if d1 <= 0:
            raise FunctionalError("degenerate run: zero energy and zero forcing")
        row = {"T": Tf, "E0": E0, "N_L1": sh.N_L1, "N_shell": sh.N_shell}
        for name in THM1_TERMS:
            v = acc.value(name, Tf)
            row[name] = v
            row[f"{name}/(E0+N_L1)"] = v / d1
            row[f"{name}/(E0+N_L1+N_shell)"] = v / d2
        row["linf_shell^2/(E0+N_L1+N_shell)"] = sh.linf**2 / d2
        rows.append(row)
    return {"E0": E0, "T": T, "rows": rows}
