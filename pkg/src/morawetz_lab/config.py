"""Strict JSON experiment configs.

A config file overrides the suite defaults key by key at the top level;
unknown keys anywhere are rejected with their field path.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .evolution import GAUSSIAN_REACH, GUARD_MARGIN
from .manifold import ManifoldError, ManifoldSpec, euclidean, trapped_bump
from .operators import fnv1a_64

SUITES = ("verify-operators", "verify-speccalc", "run-decay", "run-local")
DEFAULT_SEED = 42


class ConfigError(ValueError):
    """Invalid configuration; the message lists field paths."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class GridConfig(_Strict):
    r_max: float = Field(gt=0)
    dr: float = Field(gt=0)

    @model_validator(mode="after")
    def _cells(self):
        n = self.r_max / self.dr
        if abs(n - round(n)) > 1e-9 * n or round(n) < 8:
            raise ValueError("r_max / dr must be an integer >= 8")
        return self

    @property
    def N(self) -> int:
        return int(round(self.r_max / self.dr))


class GeometryConfig(_Strict):
    label: str
    manifold: dict
    grid: GridConfig
    # grids for refinement studies: same r_max, dr halved
    refine: bool = False

    @field_validator("manifold")
    @classmethod
    def _manifold(cls, v):
        try:
            ManifoldSpec.from_json(v)
        except (ManifoldError, KeyError, TypeError, ValueError) as exc:
            raise ValueError(str(exc)) from exc
        return v

    @property
    def spec(self) -> ManifoldSpec:
        return ManifoldSpec.from_json(self.manifold)


class ModesConfig(_Strict):
    l_max: int = Field(ge=0, le=16)


class CutoffConfig(_Strict):
    psi: Literal["standard"] = "standard"
    H: tuple[float, ...] = (8.0,)

    @field_validator("H")
    @classmethod
    def _dyadic(cls, v):
        if not v:
            raise ValueError("H list must not be empty")
        for h in v:
            if h < 1 or abs(math.log2(h) - round(math.log2(h))) > 1e-12:
                raise ValueError(f"H = {h} is not a dyadic value 2^k >= 1")
        return tuple(sorted(v))


class DataConfig(_Strict):
    kind: Literal["gaussian"] = "gaussian"
    r_c: float = Field(default=10.0, gt=0)
    sigma_b: float = Field(default=2.0, gt=0)
    modes: tuple[int, ...] = (0, 1)
    amplitude: float = 1.0
    velocity: bool = False

    @property
    def support(self) -> float:
        return self.r_c + GAUSSIAN_REACH * self.sigma_b


class ForcingConfig(_Strict):
    kind: Literal["gaussian_pulse"] = "gaussian_pulse"
    r_c: float = Field(default=15.0, gt=0)
    sigma: float = Field(default=2.0, gt=0)
    t_support: float = Field(default=8.0, gt=0)
    amplitude: float = 0.3
    modes: tuple[int, ...] = (0,)

    @property
    def support(self) -> float:
        return self.r_c + GAUSSIAN_REACH * self.sigma


class ConeConfig(_Strict):
    delta: tuple[float, ...] = (0.125,)
    c: float = Field(default=1.0 / 16.0, gt=0)
    sigma: tuple[float, ...] = (0.1, 0.4)
    kappa: float = 0.51
    eps: float = Field(default=0.01, gt=0)

    @field_validator("delta")
    @classmethod
    def _delta(cls, v):
        for d in v:
            if not 0 < d < 0.25:
                raise ValueError(f"delta = {d} must lie in (0, 1/4)")
        return v

    @field_validator("sigma")
    @classmethod
    def _sigma(cls, v):
        for s in v:
            if not 0 < s < 0.5:
                raise ValueError(f"sigma = {s} must lie in (0, 1/2)")
        return v


class OperatorParams(_Strict):
    """Commutator-convergence and solver-oracle settings."""

    # False assembles the non-conservative stencil; A1 must then fail
    symmetrize: bool = True
    comm_r_max: float = 128.0
    comm_dr: tuple[float, ...] = (0.2, 0.1, 0.05)
    comm_vectors: int = Field(default=100, ge=1)
    comm_s: tuple[float, ...] = (0.5, 1.0)
    comm_modes: tuple[int, ...] = (0, 1)
    oracle_r_c: float = 20.0
    oracle_sigma_b: float = 2.0
    oracle_dr: float = 4e-4
    oracle_sample_dt: float = 0.5
    conservation_T: float = 100.0
    reversal_T: float = 20.0
    leapfrog_dr: float = 0.1
    leapfrog_dt: tuple[float, ...] = (0.02, 0.01, 0.005)
    leapfrog_T: float = 10.0


class SpeccalcParams(_Strict):
    """Hardy checks and the exponent-sweep settings."""

    hardy_r0: float = 16.0
    hardy_L: tuple[float, ...] = (2.0, 4.0, 6.0, 8.0)
    hardy_dr: float = 0.5
    hardy_random: int = Field(default=100, ge=1)
    H_sweep: tuple[float, ...] = (2.0, 4.0, 8.0, 16.0, 32.0, 64.0)
    conj_cutoff: tuple[tuple[float, float], ...] = ((0.0, 0.5), (1.0, 0.5), (1.5, 0.4))
    resolvent_s: tuple[float, ...] = (0.5, 1.0, 1.5)
    conj_resolvent: tuple[tuple[float, float], ...] = ((1.0, 0.5),)
    L_family: tuple[Literal["id", "scat_deriv"], ...] = ("id", "scat_deriv")
    local_r_max: float = 1100.0
    local_t: tuple[float, ...] = (8.0, 16.0, 32.0, 64.0, 128.0, 256.0)
    local_m: tuple[int, ...] = (0, 1)


class DecayParams(_Strict):
    T0_fraction: float = Field(default=0.25, gt=0, le=0.25)
    acceptance_H: float = 8.0


class LocalParams(_Strict):
    T0_fraction: float = Field(default=0.25, gt=0, le=0.25)
    acceptance_H: float = 4.0
    j_min: int = 2
    control_r_max: float = 4.0
    control_dr: float = 0.05
    control_j: tuple[int, int] = (2, 8)


class ExperimentConfig(_Strict):
    suite: Literal["verify-operators", "verify-speccalc", "run-decay", "run-local"]
    geometries: tuple[GeometryConfig, ...]
    modes: ModesConfig
    cutoff: CutoffConfig = CutoffConfig()
    data: DataConfig = DataConfig()
    forcing: Optional[ForcingConfig] = None
    functionals: tuple[Literal["thm1", "thm1prime", "thm2", "compact"], ...] = ()
    cone: ConeConfig = ConeConfig()
    t_end: Optional[float] = None
    output_dir: Optional[str] = None
    seed: int = DEFAULT_SEED
    operators: OperatorParams = OperatorParams()
    speccalc: SpeccalcParams = SpeccalcParams()
    decay: DecayParams = DecayParams()
    local: LocalParams = LocalParams()

    @model_validator(mode="after")
    def _consistency(self):
        if self.suite == "run-decay" and {"thm1", "thm1prime"} & set(self.functionals):
            for g in self.geometries:
                if g.spec.n < 4:
                    raise ValueError(f"geometry {g.label!r}: thm1/thm1prime functionals need n >= 4 (got n = {g.spec.n})")
        if self.suite == "verify-speccalc":
            sc = self.speccalc
            pairs = [("speccalc.conj_cutoff", s, r) for s, r in sc.conj_cutoff] + [("speccalc.conj_resolvent", s, r) for s, r in sc.conj_resolvent]
            pairs += [("speccalc.resolvent_s", s, 0.0) for s in sc.resolvent_s]
            for g in self.geometries:
                cap = min(2.0, g.spec.n / 2.0)
                for where, s, rho in pairs:
                    if s < 0 or rho < 0 or not s + rho < cap:
                        raise ValueError(
                            f"{where}: (s, rho) = ({s:g}, {rho:g}) violates 0 <= s, 0 <= rho, s + rho < min(2, n/2)"
                            f" = {cap:g} on geometry {g.label!r}"
                        )
        if self.suite in ("run-decay", "run-local"):
            for g in self.geometries:
                T_max = self.guard_time(g)
                t_end = self.end_time(g)
                if t_end > T_max:
                    raise ValueError(
                        f"t_end = {t_end:g} exceeds the guard T_max = {T_max:g} of geometry {g.label!r}"
                    )
            for l in self.data.modes + (self.forcing.modes if self.forcing else ()):
                if l > self.modes.l_max:
                    raise ValueError(f"mode {l} exceeds modes.l_max = {self.modes.l_max}")
        return self

    def guard_time(self, g: GeometryConfig) -> float:
        """Latest time before the outer boundary can influence the data's domain of dependence."""
        reach = self.data.support
        if self.forcing is not None:
            reach = max(reach, self.forcing.support)
        return g.grid.r_max - reach - GUARD_MARGIN

    def end_time(self, g: GeometryConfig) -> float:
        return self.t_end if self.t_end is not None else g.grid.r_max / 2.0

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))

    @property
    def hash_hex(self) -> str:
        return f"{fnv1a_64(self.canonical_json().encode()):016x}"


def _geometry(label, spec: ManifoldSpec, r_max, dr, refine=False) -> dict:
    return {"label": label, "manifold": spec.to_json(), "grid": {"r_max": r_max, "dr": dr}, "refine": refine}


def default_dict(suite: str) -> dict:
    """Defaults reproducing the acceptance settings of each suite."""
    if suite == "verify-operators":
        geos = [
            _geometry("euclidean-n3", euclidean(3, r_flat=8.0, R=10.0), 200.0, 0.05),
            _geometry("euclidean-n4", euclidean(4, r_flat=8.0, R=10.0), 200.0, 0.05),
            _geometry("euclidean-n4-V", euclidean(4, r_flat=8.0, R=10.0, V0=1.0), 200.0, 0.05),
            _geometry("trapped-n4", trapped_bump(4), 200.0, 0.05),
        ]
        return {"suite": suite, "geometries": geos, "modes": {"l_max": 16}}
    if suite == "verify-speccalc":
        geos = [
            _geometry("euclidean-n4", euclidean(4, r_flat=8.0, R=10.0), 2000.0, 0.5),
            _geometry("trapped-n4", trapped_bump(4), 2000.0, 0.125),
        ]
        return {"suite": suite, "geometries": geos, "modes": {"l_max": 1}}
    if suite == "run-decay":
        geos = [
            _geometry("euclidean-n4", euclidean(4, r_flat=8.0, R=10.0), 2000.0, 1.0, refine=True),
            _geometry("trapped-n4", trapped_bump(4), 2000.0, 0.125, refine=True),
        ]
        return {
            "suite": suite,
            "geometries": geos,
            "modes": {"l_max": 1},
            "cutoff": {"psi": "standard", "H": [4.0, 8.0, 16.0]},
            "data": {"r_c": 10.0, "sigma_b": 2.0, "modes": [0, 1]},
            "forcing": {"r_c": 15.0, "sigma": 2.0, "t_support": 8.0, "amplitude": 0.3, "modes": [0]},
            "functionals": ["thm1", "thm1prime"],
        }
    if suite == "run-local":
        geos = [
            _geometry("euclidean-n3", euclidean(3, r_flat=8.0, R=10.0), 1000.0, 0.5),
            _geometry("trapped-n3", trapped_bump(3), 1000.0, 0.125),
        ]
        return {
            "suite": suite,
            "geometries": geos,
            "modes": {"l_max": 1},
            "cutoff": {"psi": "standard", "H": [4.0]},
            "data": {"r_c": 5.0, "sigma_b": 1.5, "modes": [0, 1]},
            "forcing": {"r_c": 6.0, "sigma": 1.5, "t_support": 32.0, "amplitude": 0.1, "modes": [0]},
            "functionals": ["thm2", "compact"],
        }
    raise ConfigError(f"unknown suite {suite!r}; expected one of {', '.join(SUITES)}")


def _format_errors(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        path = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{path}: {err['msg']}")
    return "; ".join(lines)


def build_config(suite: str, overrides: dict | None = None) -> ExperimentConfig:
    base = default_dict(suite)
    overrides = dict(overrides or {})
    if "suite" in overrides and overrides["suite"] != suite:
        raise ConfigError(f"suite: config is for {overrides['suite']!r}, command is {suite!r}")
    base.update(overrides)
    try:
        return ExperimentConfig.model_validate(base)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc)) from None


def load_config(suite: str, path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return build_config(suite)
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: line {exc.lineno}: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise ConfigError("<root>: config must be a JSON object")
    return build_config(suite, raw)
