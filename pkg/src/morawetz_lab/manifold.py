"""Rotationally symmetric model manifolds with conic ends.

The metric is ``g = dr^2 + w(r)^2 g_{S^{n-1}}`` with a smooth cap at the axis
(``w(0) = 0``, ``w'(0) = 1``) and ``w(r) = c r`` exactly for ``r >= r_flat``
(``c = 1`` except for the ``cone`` warp).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.optimize import brentq
from scipy.special import comb

WARP_KINDS = ("euclidean", "trapped_bump", "cone")


class ManifoldError(ValueError):
    """Invalid manifold description or out-of-domain evaluation."""


# -- smooth steps ---------------------------------------------------------


def _phi_e(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = np.exp(-1.0 / x[pos])
    return out


def smooth_step(x):
    """C^inf step: 0 for x <= 0, 1 for x >= 1."""
    a = _phi_e(x)
    b = _phi_e(1.0 - np.asarray(x, dtype=float))
    return a / (a + b)


def smooth_step_deriv(x):
    x = np.asarray(x, dtype=float)
    a = _phi_e(x)
    b = _phi_e(1.0 - x)
    out = np.zeros_like(x)
    inside = (x > 0) & (x < 1)
    xi = x[inside]
    da = a[inside] / xi**2
    db = -b[inside] / (1.0 - xi) ** 2
    out[inside] = (da * b[inside] - a[inside] * db) / (a[inside] + b[inside]) ** 2
    return out


def chi0_step(sigma):
    """The standard cutoff: 0 for sigma <= 1, 1 for sigma >= 2."""
    s = np.asarray(sigma, dtype=float)
    a = _phi_e(s - 1.0)
    b = _phi_e(2.0 - s)
    return a / (a + b)


def chi0_complement(sigma):
    s = np.asarray(sigma, dtype=float)
    a = _phi_e(s - 1.0)
    b = _phi_e(2.0 - s)
    return b / (a + b)


def _bump(x):
    """exp(-x^2/(1-x^2)) on |x| < 1, zero outside; returns (b, b', b'')."""
    x = np.asarray(x, dtype=float)
    b = np.zeros_like(x)
    b1 = np.zeros_like(x)
    b2 = np.zeros_like(x)
    inside = np.abs(x) < 1.0
    xi = x[inside]
    q = 1.0 - xi**2
    val = np.exp(-(xi**2) / q)
    g = 2.0 * xi / q**2  # -d/dx of the exponent
    b[inside] = val
    b1[inside] = -val * g
    b2[inside] = val * (g**2 - 2.0 / q**2 - 8.0 * xi**2 / q**3)
    return b, b1, b2


# -- specs ----------------------------------------------------------------


@dataclass(frozen=True)
class ManifoldSpec:
    """Geometry plus potential.

    ``warp_params`` holds the kind-specific parameters:
    ``trapped_bump``: ``b``, ``r0``, ``sigma``; ``cone``: ``aperture``.
    """

    n: int
    warp_kind: str
    r_flat: float
    warp_params: dict[str, float] = field(default_factory=dict)
    V0: float = 0.0
    decay: float = 1.0
    R: float = 10.0

    def __post_init__(self):
        if self.n < 3:
            raise ManifoldError(f"n must be >= 3, got {self.n}")
        if self.warp_kind not in WARP_KINDS:
            raise ManifoldError(f"unknown warp kind {self.warp_kind!r}")
        if self.r_flat <= 0:
            raise ManifoldError("r_flat must be positive")
        if self.V0 < 0:
            raise ManifoldError("potential must be nonnegative (V0 >= 0)")
        if self.decay <= 0:
            raise ManifoldError("decay must be positive")
        if self.R < self.r_flat:
            raise ManifoldError(f"cutoff radius R={self.R} must be >= r_flat={self.r_flat}")
        p = self.warp_params
        if self.warp_kind == "euclidean":
            if p:
                raise ManifoldError("euclidean warp takes no parameters")
        elif self.warp_kind == "trapped_bump":
            missing = {"b", "r0", "sigma"} - set(p)
            extra = set(p) - {"b", "r0", "sigma"}
            if missing or extra:
                raise ManifoldError(f"trapped_bump needs exactly b, r0, sigma (got {sorted(p)})")
            if p["sigma"] <= 0 or p["b"] <= -1:
                raise ManifoldError("trapped_bump requires sigma > 0 and b > -1")
            lo, hi = p["r0"] - 3 * p["sigma"], p["r0"] + 3 * p["sigma"]
            if lo <= 0 or hi > self.r_flat:
                raise ManifoldError(
                    f"bump support [{lo}, {hi}] must lie inside (0, r_flat={self.r_flat}]"
                )
        else:
            if set(p) != {"aperture"}:
                raise ManifoldError("cone warp needs exactly 'aperture'")
            if not 0 < p["aperture"] <= 1.5:
                raise ManifoldError("cone aperture must lie in (0, 1.5]")

    # geometry

    @property
    def end_slope(self) -> float:
        """c in w(r) = c r on the conic end."""
        return self.warp_params["aperture"] if self.warp_kind == "cone" else 1.0

    @property
    def length_scale(self) -> float:
        """Smallest length over which the warp varies (inf when w = r)."""
        if self.warp_kind == "trapped_bump":
            return self.warp_params["sigma"]
        if self.warp_kind == "cone":
            return 0.75 * self.r_flat * math.log(4.0) / 8.0
        return math.inf

    def to_json(self) -> dict[str, Any]:
        warp = {"kind": self.warp_kind, **self.warp_params}
        return {
            "n": self.n,
            "warp": warp,
            "r_flat": self.r_flat,
            "potential": {"V0": self.V0, "delta": self.decay},
            "R": self.R,
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "ManifoldSpec":
        allowed = {"n", "warp", "r_flat", "potential", "R"}
        unknown = set(obj) - allowed
        if unknown:
            raise ManifoldError(f"unknown manifold fields: {sorted(unknown)}")
        for key in ("n", "warp", "r_flat"):
            if key not in obj:
                raise ManifoldError(f"missing manifold field {key!r}")
        warp = dict(obj["warp"])
        kind = warp.pop("kind", None)
        if kind not in WARP_KINDS:
            raise ManifoldError(f"unknown warp kind {kind!r}")
        pot = dict(obj.get("potential", {"V0": 0.0, "delta": 1.0}))
        if set(pot) - {"V0", "delta"}:
            raise ManifoldError(f"unknown potential fields: {sorted(set(pot) - {'V0', 'delta'})}")
        return cls(
            n=int(obj["n"]),
            warp_kind=kind,
            r_flat=float(obj["r_flat"]),
            warp_params={k: float(v) for k, v in warp.items()},
            V0=float(pot.get("V0", 0.0)),
            decay=float(pot.get("delta", 1.0)),
            R=float(obj.get("R", 10.0)),
        )


def euclidean(n: int, r_flat: float = 1.0, R: float = 4.0, V0: float = 0.0, decay: float = 1.0):
    return ManifoldSpec(n=n, warp_kind="euclidean", r_flat=r_flat, V0=V0, decay=decay, R=R)


def trapped_bump(
    n: int,
    b: float = 0.5,
    r0: float = 4.0,
    sigma: float = 1.0,
    r_flat: float = 8.0,
    R: float = 10.0,
    V0: float = 0.0,
    decay: float = 1.0,
):
    return ManifoldSpec(
        n=n,
        warp_kind="trapped_bump",
        r_flat=r_flat,
        warp_params={"b": b, "r0": r0, "sigma": sigma},
        V0=V0,
        decay=decay,
        R=R,
    )


def cone(n: int, aperture: float = 0.7, r_flat: float = 8.0, R: float = 10.0):
    return ManifoldSpec(
        n=n, warp_kind="cone", r_flat=r_flat, warp_params={"aperture": aperture}, R=R
    )


# -- evaluation -----------------------------------------------------------


def warp_arrays(spec: ManifoldSpec, r) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized (w, w', w'') at positive radii."""
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise ManifoldError("warp is only defined for r > 0")
    if spec.warp_kind == "euclidean":
        return r.copy(), np.ones_like(r), np.zeros_like(r)
    if spec.warp_kind == "trapped_bump":
        p = spec.warp_params
        a = 3.0 * p["sigma"]
        b0, b1, b2 = _bump((r - p["r0"]) / a)
        b1 = b1 / a
        b2 = b2 / a**2
        bb = p["b"]
        w = r * (1.0 + bb * b0)
        w1 = 1.0 + bb * b0 + r * bb * b1
        w2 = 2.0 * bb * b1 + r * bb * b2
        flat = r >= spec.r_flat
        w[flat], w1[flat], w2[flat] = r[flat], 1.0, 0.0
        return w, w1, w2
    # cone: w = r h(r), log h = log(c) S((log r - log r_a)/ell)
    c = spec.warp_params["aperture"]
    r_a = spec.r_flat / 4.0
    ell = math.log(4.0)
    lc = math.log(c)
    rr = np.maximum(r, 1e-300)
    x = (np.log(rr) - math.log(r_a)) / ell
    S = smooth_step(x)
    S1 = smooth_step_deriv(x)
    # second derivative of S by a centered difference in x (S is C^inf)
    hx = 1e-4
    S2 = (smooth_step_deriv(x + hx) - smooth_step_deriv(x - hx)) / (2 * hx)
    h = np.exp(lc * S)
    g1 = lc * S1 / ell  # d(log h)/d(log r)
    g2 = lc * S2 / ell**2
    w = r * h
    w1 = h * (1.0 + g1)
    # d/dr [h (1 + g1)] = h/r [g1 (1 + g1) + g2]
    w2 = h / rr * (g1 * (1.0 + g1) + g2)
    flat = r >= spec.r_flat
    w[flat], w1[flat], w2[flat] = c * r[flat], c, 0.0
    return w, w1, w2


def warp_eval(spec: ManifoldSpec, r: float) -> tuple[float, float, float]:
    if not r > 0:
        raise ManifoldError(f"warp_eval needs r > 0, got {r}")
    w, w1, w2 = warp_arrays(spec, np.array([float(r)]))
    return float(w[0]), float(w1[0]), float(w2[0])


def potential(spec: ManifoldSpec, r) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    return spec.V0 * (1.0 + r**2) ** (-(2.0 + spec.decay) / 2.0)


# -- angular modes ---------------------------------------------------------


@dataclass(frozen=True)
class AngularMode:
    l: int
    mu: float
    multiplicity: int


def harmonic_dimension(n: int, l: int) -> int:
    """Dimension of degree-l spherical harmonics on S^{n-1}."""
    d = comb(l + n - 1, n - 1, exact=True)
    if l >= 2:
        d -= comb(l + n - 3, n - 1, exact=True)
    return int(d)


def mode_spectrum(spec: ManifoldSpec, l_max: int) -> list[AngularMode]:
    if l_max < 0:
        raise ManifoldError("l_max must be >= 0")
    n = spec.n
    return [AngularMode(l, float(l * (l + n - 2)), harmonic_dimension(n, l)) for l in range(l_max + 1)]


def angular_mode(spec: ManifoldSpec, l: int) -> AngularMode:
    return mode_spectrum(spec, l)[l]


# -- trapping --------------------------------------------------------------


def trapping_report(spec: ManifoldSpec, samples: int = 20001) -> list[float]:
    """Radii in (0, r_flat) where w' changes sign, located to 1e-10 or better."""
    lo = spec.r_flat * 1e-6
    grid = np.linspace(lo, spec.r_flat, samples)
    _, d, _ = warp_arrays(spec, grid)
    roots = []

    def dw(r):
        return warp_arrays(spec, np.array([r]))[1][0]

    for i in np.nonzero(np.sign(d[:-1]) * np.sign(d[1:]) < 0)[0]:
        roots.append(float(brentq(dw, grid[i], grid[i + 1], xtol=1e-13, rtol=1e-15)))
    return roots


# -- weights ---------------------------------------------------------------


def r_tilde(r):
    """sqrt(r^2 + 4): a global radius that is >= 2 everywhere."""
    r = np.asarray(r, dtype=float)
    return np.sqrt(r * r + 4.0)


@dataclass(frozen=True)
class WeightFunctions:
    """Global radius r~ = sqrt(r^2 + 4) and the cutoffs built on radius R."""

    R: float

    def r_tilde(self, r):
        return r_tilde(r)

    def chi(self, r):
        return chi0_step(np.asarray(r, dtype=float) / self.R)

    def chi_deriv(self, r):
        return smooth_step_deriv(np.asarray(r, dtype=float) / self.R - 1.0) / self.R

    def chi1_exterior(self, r):
        return self.chi(r)

    def chi0_interior(self, r):
        return chi0_complement(np.asarray(r, dtype=float) / self.R)

    @classmethod
    def for_spec(cls, spec: ManifoldSpec) -> "WeightFunctions":
        return cls(R=spec.R)
