"""Per-mode discretization of Delta_g + V and of the radial multipliers A_F.

Everything is assembled from quadratic forms on a staggered grid, so the
Laplacian is exactly self-adjoint and every multiplier exactly skew-adjoint
with respect to the measure ``m_j = w(r_j)^{n-1} dr``.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .manifold import (
    AngularMode,
    ManifoldSpec,
    WeightFunctions,
    potential,
    smooth_step,
    smooth_step_deriv,
    warp_arrays,
)

KAPPA_MAX = 0.125


class ConfigurationError(ValueError):
    pass


# -- grid -------------------------------------------------------------------


def fnv1a_64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for byte in data:
        h ^= byte
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


@dataclass(frozen=True, eq=False)
class RadialGrid:
    """Cell-centred radial nodes ``r_j = (j + 1/2) dr``; faces at ``(j + 1) dr``."""

    spec: ManifoldSpec
    N: int
    dr: float
    nodes: np.ndarray = field(init=False, repr=False)
    faces: np.ndarray = field(init=False, repr=False)
    w_nodes: np.ndarray = field(init=False, repr=False)
    w_faces: np.ndarray = field(init=False, repr=False)
    m: np.ndarray = field(init=False, repr=False)
    face_weight: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.N < 4 or self.dr <= 0:
            raise ConfigurationError("grid needs N >= 4 and dr > 0")
        nodes = (np.arange(self.N) + 0.5) * self.dr
        faces = (np.arange(self.N) + 1.0) * self.dr
        wn = warp_arrays(self.spec, nodes)[0]
        wf = warp_arrays(self.spec, faces)[0]
        n = self.spec.n
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "faces", faces)
        object.__setattr__(self, "w_nodes", wn)
        object.__setattr__(self, "w_faces", wf)
        object.__setattr__(self, "m", wn ** (n - 1) * self.dr)
        # w^{n-1} at the faces; the last face carries the outer Dirichlet closure
        object.__setattr__(self, "face_weight", wf ** (n - 1))

    @property
    def r_max(self) -> float:
        return self.N * self.dr

    def check_resolution(self):
        if self.dr > self.spec.length_scale / 8.0:
            raise ConfigurationError(
                f"dr={self.dr} does not resolve the warp (need dr <= {self.spec.length_scale / 8.0:g})"
            )

    def check_cutoff(self, R: float):
        if self.r_max < 4 * R:
            raise ConfigurationError(f"r_max={self.r_max} must be >= 4R={4 * R}")

    @property
    def hash(self) -> int:
        spec = self.spec
        payload = json.dumps(
            [self.N, repr(float(self.dr)), spec.n, spec.warp_kind, sorted(spec.warp_params.items())],
            separators=(",", ":"),
        )
        return fnv1a_64(payload.encode())

    @property
    def hash_hex(self) -> str:
        return f"{self.hash:016x}"

    def inner(self, u, v) -> float:
        return float(np.sum(np.conj(u) * v * self.m).real)

    def norm(self, u) -> float:
        return math.sqrt(max(float(np.sum(np.abs(u) ** 2 * self.m)), 0.0))


def make_grid(spec: ManifoldSpec, r_max: float, dr: float) -> RadialGrid:
    N = int(round(r_max / dr))
    return RadialGrid(spec, N, r_max / N)


# -- face differences -------------------------------------------------------


def face_difference(N: int, dr: float) -> sp.csr_matrix:
    """(u_{j+1} - u_j)/dr at faces j+1/2; last row uses the Dirichlet ghost -u_{N-1}."""
    main = -np.ones(N) / dr
    upper = np.ones(N - 1) / dr
    D = sp.diags([main, upper], [0, 1], shape=(N, N), format="lil")
    # ghost u_N = -u_{N-1} mirrored at r_max: (0 - u_{N-1}) / (dr/2)
    D[N - 1, N - 1] = -2.0 / dr
    return D.tocsr()


def face_measure(grid: RadialGrid) -> np.ndarray:
    """Quadrature weight of each face difference in the Dirichlet form."""
    wts = grid.face_weight * grid.dr
    wts = wts.copy()
    # the outer half-cell: (2u/dr)^2 * W * dr/2 reproduces the 2W/dr closure
    wts[-1] *= 0.5
    return wts


def flux_stiffness(grid: RadialGrid, coeff_faces=None) -> sp.csr_matrix:
    """Symmetric K with u^T K u = sum_f c_f W_f |du_f|^2 (measure dr)."""
    D = face_difference(grid.N, grid.dr)
    wts = face_measure(grid)
    if coeff_faces is not None:
        wts = wts * coeff_faces
    return (D.T @ sp.diags(wts) @ D).tocsr()


# -- mode operator ----------------------------------------------------------


@dataclass(eq=False)
class ModeOperator:
    """L u = -(w^{n-1})^{-1}(w^{n-1}u')' + mu w^{-2} u + V u, stored as M^{-1} K."""

    grid: RadialGrid
    mode: AngularMode
    K: sp.csr_matrix
    axis_closure: str
    outer_closure: str = "dirichlet"

    @property
    def m(self) -> np.ndarray:
        return self.grid.m

    @property
    def N(self) -> int:
        return self.grid.N

    def apply(self, u):
        return (self.K @ u) / self.m

    def matrix(self) -> np.ndarray:
        return self.K.toarray() / self.m[:, None]

    def sparse(self) -> sp.csr_matrix:
        return (sp.diags(1.0 / self.m) @ self.K).tocsr()

    def symmetric_tridiagonal(self) -> tuple[np.ndarray, np.ndarray]:
        """Diagonal and off-diagonal of M^{-1/2} K M^{-1/2}."""
        s = 1.0 / np.sqrt(self.m)
        d = self.K.diagonal() * s * s
        e = self.K.diagonal(1) * s[:-1] * s[1:]
        return d, e

    def quadratic_form(self, u) -> float:
        return float(np.real(np.conj(u) @ (self.K @ u)))

    def gradient_form(self) -> sp.csr_matrix:
        """Stiffness of |grad_g u|^2 alone (no potential)."""
        grid = self.grid
        K = flux_stiffness(grid)
        ang = self.mode.mu / grid.w_nodes**2 * grid.m
        return (K + sp.diags(ang)).tocsr()


def assemble_laplacian(
    grid: RadialGrid, spec: ManifoldSpec, mode: AngularMode, check=True, symmetrize=True
) -> ModeOperator:
    """Flux-form operator; ``symmetrize=False`` gives the non-conservative stencil (a negative control)."""
    if grid.spec is not spec and grid.spec != spec:
        raise ConfigurationError("grid was built for a different manifold")
    if check:
        grid.check_resolution()
    if not symmetrize:
        return _nonconservative_laplacian(grid, spec, mode)
    K = flux_stiffness(grid)
    # axis closure: even reflection for l = 0, odd (Dirichlet) for l >= 1; the
    # face weight w(0)^{n-1} vanishes so both add nothing to K
    axis = "neumann" if mode.l == 0 else "dirichlet"
    diag = (mode.mu / grid.w_nodes**2 + potential(spec, grid.nodes)) * grid.m
    K = (K + sp.diags(diag)).tocsr()
    return ModeOperator(grid=grid, mode=mode, K=K, axis_closure=axis)


def _nonconservative_laplacian(grid: RadialGrid, spec: ManifoldSpec, mode: AngularMode) -> ModeOperator:
    # -u'' - (n-1) (w'/w) u' with centred stencils; not symmetric in the m inner product
    parity = 1 if mode.l == 0 else -1
    N, dr = grid.N, grid.dr
    D2 = sp.diags([np.ones(N - 1), -2.0 * np.ones(N), np.ones(N - 1)], [-1, 0, 1], shape=(N, N), format="lil")
    D2[0, 0] += parity
    D2[N - 1, N - 1] -= 1.0
    D2 = D2.tocsr() / dr**2
    w, w1, _ = warp_arrays(spec, grid.nodes)
    drift = sp.diags((spec.n - 1) * w1 / w) @ centered_difference(N, dr, parity)
    L = -D2 - drift + sp.diags(mode.mu / w**2 + potential(spec, grid.nodes))
    K = (sp.diags(grid.m) @ L).tocsr()
    axis = "neumann" if mode.l == 0 else "dirichlet"
    return ModeOperator(grid=grid, mode=mode, K=K, axis_closure=axis)


def m_adjoint(A, m):
    """Adjoint of A with respect to <u, v>_m."""
    if sp.issparse(A):
        return (sp.diags(1.0 / m) @ A.T @ sp.diags(m)).tocsr()
    return (A.T * m[None, :]) / m[:, None]


def self_adjointness_defect(op: ModeOperator) -> float:
    """max |m_i L_ij - m_j L_ji|, relative to max |m_i L_ij|."""
    ML = (sp.diags(op.m) @ op.sparse()).tocsr()
    diff = abs(ML - ML.T)
    return float(diff.max() / abs(ML).max()) if diff.nnz else 0.0


# -- multipliers ------------------------------------------------------------


def varsigma_density(x):
    """Normalized bump: 1 on [1, 2], supported in [1/2, 4], integral 1."""
    x = np.asarray(x, dtype=float)
    return smooth_step((x - 0.5) / 0.5) * (1.0 - smooth_step((x - 2.0) / 2.0)) / 2.25


_GL_X, _GL_W = np.polynomial.legendre.leggauss(64)


def varsigma(x):
    """Step with varsigma = 0 for x <= 1/2, 1 for x >= 4, varsigma' >= 1/4 on [1, 2]."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.zeros_like(x)
    top = np.clip(x, 0.5, 4.0)
    # integrate the density piecewise over [1/2, 1], [1, 2], [2, 4] for accuracy
    for a, b in ((0.5, 1.0), (1.0, 2.0), (2.0, 4.0)):
        hi = np.clip(top, a, b)
        half = 0.5 * (hi - a)
        pts = a + half[:, None] * (_GL_X[None, :] + 1.0)
        out += half * (varsigma_density(pts) @ _GL_W)
    out[x >= 4.0] = 1.0
    return out


@dataclass(frozen=True)
class MultiplierSpec:
    """F(r) for A_F: ``power`` (r^s), ``log_pA`` (1 - 1/log r~),
    ``log_bump_ppA`` (1 - 1/log r~ + kappa varsigma(r/Lambda)); ``cutoff`` multiplies by chi."""

    kind: str
    s: float = 0.0
    kappa: float = 0.0
    Lambda: float = 0.0
    cutoff: bool = False

    def __post_init__(self):
        if self.kind not in ("power", "log_pA", "log_bump_ppA", "zero"):
            raise ConfigurationError(f"unknown multiplier kind {self.kind!r}")
        if self.kind == "power" and not 0.0 <= self.s <= 1.0:
            raise ConfigurationError("power multiplier needs 0 <= s <= 1")
        if self.kind == "log_bump_ppA":
            if not 0.0 < self.kappa <= KAPPA_MAX:
                raise ConfigurationError(f"kappa must lie in (0, {KAPPA_MAX}]")
            k = math.log2(self.Lambda) if self.Lambda > 0 else 0.5
            if abs(k - round(k)) > 1e-12:
                raise ConfigurationError("Lambda must be a power of two")

    def F(self, r, wf: WeightFunctions) -> tuple[np.ndarray, np.ndarray]:
        """F and F' at radii r (without the cutoff)."""
        r = np.asarray(r, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(r), np.zeros_like(r)
        if self.kind == "power":
            if self.s == 0.0:
                return np.ones_like(r), np.zeros_like(r)
            return r**self.s, self.s * r ** (self.s - 1.0)
        rt = wf.r_tilde(r)
        lg = np.log(rt)
        F = 1.0 - 1.0 / lg
        dF = (r / rt) / (rt * lg**2)
        if self.kind == "log_bump_ppA":
            F = F + self.kappa * varsigma(r / self.Lambda)
            dF = dF + self.kappa / self.Lambda * varsigma_density(r / self.Lambda)
        return F, dF


def centered_difference(N: int, dr: float, axis_parity: int) -> sp.csr_matrix:
    """Centred d/dr with ghost u_{-1} = parity*u_0 and u_N = -u_{N-1}."""
    D = sp.diags([-np.ones(N - 1), np.ones(N - 1)], [-1, 1], shape=(N, N), format="lil")
    D[0, 0] = -axis_parity
    D[N - 1, N - 1] = -1.0
    return (D.tocsr() / (2.0 * dr)).tocsr()


def assemble_multiplier(grid: RadialGrid, wf: WeightFunctions, ms: MultiplierSpec, l: int = 0) -> sp.csr_matrix:
    """A_F = (D - D^{*m})/2 with D = F d/dr (centred)."""
    F, _ = ms.F(grid.nodes, wf)
    if ms.cutoff:
        F = F * wf.chi(grid.nodes)
    parity = 1 if l == 0 else -1
    D0 = centered_difference(grid.N, grid.dr, parity)
    D = sp.diags(F) @ D0
    A = 0.5 * (D - m_adjoint(D, grid.m))
    return A.tocsr()


def skew_defect(A, m) -> float:
    """||A + A^{dagger m}|| / ||A|| (max-entry norms)."""
    S = A + m_adjoint(A, m)
    if sp.issparse(S):
        num = abs(S).max() if S.nnz else 0.0
        den = abs(A).max() if A.nnz else 0.0
    else:
        num, den = np.abs(S).max(), np.abs(A).max()
    return float(num / den) if den > 0 else float(num)


def commutator(L, A):
    Lm = L.sparse() if isinstance(L, ModeOperator) else L
    if Lm.shape[1] != A.shape[0] or A.shape[1] != Lm.shape[0]:
        raise ConfigurationError(f"dimension mismatch {Lm.shape} vs {A.shape}")
    C = Lm @ A - A @ Lm
    return C.tocsr() if sp.issparse(C) else C


def zeroth_coefficient(n: int, ms: MultiplierSpec) -> float:
    """Coefficient of the zeroth-order term in the model commutator (as written in the identities)."""
    if ms.kind == "power":
        s = ms.s
        return -(n - 1) / 2.0 * (s - 1.0) * (n + s - 3.0)
    if ms.kind in ("log_pA", "log_bump_ppA"):
        return (n - 1) * (n - 3) / 2.0
    raise ConfigurationError(f"no commutator identity for kind {ms.kind!r}")


def exact_zeroth_power(n: int, s: float) -> float:
    """-1/2 Delta (d_r^* r^s) = c r^{s-3} on the exact Euclidean end."""
    return -0.5 * (s + n - 1.0) * (s - 1.0) * (n + s - 3.0)


def assemble_comm_rhs(
    grid: RadialGrid,
    spec: ManifoldSpec,
    wf: WeightFunctions,
    ms: MultiplierSpec,
    mode: AngularMode,
    zeroth: str = "paper",
) -> sp.csr_matrix:
    """Principal plus zeroth-order part of [Delta_g + V, chi A_F], remainders dropped.

    ``zeroth='exact'`` swaps in the exact Euclidean-end coefficient for the power family.
    """
    if ms.kind not in ("power", "log_pA", "log_bump_ppA"):
        raise ConfigurationError(f"unsupported multiplier kind {ms.kind!r}")
    chi_f = wf.chi(grid.faces) if ms.cutoff else np.ones(grid.N)
    chi_n = wf.chi(grid.nodes) if ms.cutoff else np.ones(grid.N)
    _, dF_faces = ms.F(grid.faces, wf)
    r = grid.nodes
    radial = flux_stiffness(grid, 2.0 * chi_f * dF_faces)
    if ms.kind == "power":
        ang = 2.0 * r ** (ms.s - 3.0) * chi_n * mode.mu
        if zeroth == "exact":
            c0 = exact_zeroth_power(spec.n, ms.s)
        else:
            c0 = zeroth_coefficient(spec.n, ms)
        zero = c0 * r ** (ms.s - 3.0)
    else:
        rt = wf.r_tilde(r)
        ang = 2.0 * rt**-3.0 * chi_n * mode.mu
        zero = zeroth_coefficient(spec.n, ms) * rt**-3.0
    diag = (ang + zero) * grid.m
    return (sp.diags(1.0 / grid.m) @ (radial + sp.diags(diag))).tocsr()


# -- norms ------------------------------------------------------------------


def weighted_norm(grid: RadialGrid, u, weight) -> float:
    """sqrt(sum weight(r_j)^2 |u_j|^2 m_j)."""
    wv = weight(grid.nodes) if callable(weight) else np.broadcast_to(weight, grid.nodes.shape)
    return math.sqrt(float(np.sum(wv**2 * np.abs(u) ** 2 * grid.m)))


def weighted_gradient_sq(grid: RadialGrid, u, weight=None, mu: float = 0.0) -> float:
    """sum_f c(r_f)^2 W_f |du_f|^2 dr + mu sum_j c(r_j)^2 |u_j|^2 / w_j^2 m_j."""
    D = face_difference(grid.N, grid.dr)
    du = D @ u
    wts = face_measure(grid)
    wn = np.ones(grid.N)
    if weight is not None:
        wts = wts * weight(grid.faces) ** 2
        wn = weight(grid.nodes) ** 2
    val = float(np.sum(wts * np.abs(du) ** 2))
    if mu:
        val += float(np.sum(wn * mu * np.abs(u) ** 2 / grid.w_nodes**2 * grid.m))
    return val


# -- binary export ------------------------------------------------------------

_MAGIC = b"MLABMAT1"


def write_dense(path, matrix, grid_hash: int) -> None:
    """Header: magic, rows, cols (uint64 LE), grid hash (uint64 LE); then row-major float64 LE."""
    A = np.asarray(matrix.toarray() if sp.issparse(matrix) else matrix, dtype="<f8")
    if A.ndim == 1:
        A = A[None, :]
    with open(Path(path), "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<QQQ", A.shape[0], A.shape[1], grid_hash))
        fh.write(np.ascontiguousarray(A).tobytes(order="C"))


def read_dense(path) -> tuple[np.ndarray, int]:
    raw = Path(path).read_bytes()
    if raw[:8] != _MAGIC:
        raise ValueError("not a dense matrix dump")
    rows, cols, gh = struct.unpack("<QQQ", raw[8:32])
    A = np.frombuffer(raw[32:], dtype="<f8")
    if A.size != rows * cols:
        raise ValueError("truncated matrix dump")
    return A.reshape(rows, cols).copy(), gh
