import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from conftest import bump_vectors, flat_operator
from morawetz_lab.manifold import WeightFunctions, angular_mode, euclidean, trapped_bump
from morawetz_lab.operators import (
    MultiplierSpec,
    assemble_comm_rhs,
    assemble_laplacian,
    assemble_multiplier,
    commutator,
    exact_zeroth_power,
    make_grid,
    read_dense,
    self_adjointness_defect,
    skew_defect,
    weighted_norm,
    write_dense,
    zeroth_coefficient,
)


def lowest_eigenvalues(op, k):
    return np.sort(np.linalg.eigvals(op.matrix()).real)[:k]


def test_ball_eigenvalues_l0_converge_at_second_order():
    # Dirichlet ball of radius pi, l = 0: eigenfunctions sin(kr)/r, eigenvalues k^2
    errs = []
    for N in (200, 400):
        spec = euclidean(3, r_flat=1.0, R=1.0)
        op = assemble_laplacian(make_grid(spec, math.pi, math.pi / N), spec, angular_mode(spec, 0))
        lam = lowest_eigenvalues(op, 3)
        errs.append(np.abs(lam - np.array([1.0, 4.0, 9.0])))
        assert np.all(errs[-1] < 10 * (math.pi / N) ** 2 * np.array([1, 4, 9]) ** 2)
    assert np.all(errs[0] / errs[1] > 3.5)


def test_ball_eigenvalues_l1_match_bessel_root_oracle():
    # zeros of j_1(x) = sin x / x^2 - cos x / x solve tan x = x
    roots = [brentq(lambda x: math.sin(x) - x * math.cos(x), (k + 0.01) * math.pi, (k + 0.5) * math.pi - 1e-9) for k in (1, 2)]
    spec = euclidean(3, r_flat=1.0, R=1.0)
    op = assemble_laplacian(make_grid(spec, math.pi, math.pi / 400), spec, angular_mode(spec, 1))
    lam = lowest_eigenvalues(op, 2)
    want = (np.array(roots) / math.pi) ** 2
    assert np.allclose(lam, want, rtol=2e-4)


def test_quadratic_form_is_flux_sum(rng):
    op = flat_operator(n=4, l=0, r_max=20.0, dr=0.1)
    g = op.grid
    for _ in range(5):
        u = rng.standard_normal(g.N)
        u[-1] = 0.0
        # sum over interior faces (j+1) dr of |u'|^2 w^{n-1} dr
        direct = sum(((u[j + 1] - u[j]) / g.dr) ** 2 * ((j + 1) * g.dr) ** 3 * g.dr for j in range(g.N - 1))
        assert op.quadratic_form(u) == pytest.approx(direct, rel=1e-12)


def test_nonnegative_potential_raises_every_eigenvalue():
    base = flat_operator(n=4, l=0, r_max=20.0, dr=0.2, r_flat=1.0, R=4.0)
    pot = flat_operator(n=4, l=0, r_max=20.0, dr=0.2, r_flat=1.0, R=4.0, V0=1.0, decay=1.0)
    a = np.sort(np.linalg.eigvals(base.matrix()).real)
    b = np.sort(np.linalg.eigvals(pot.matrix()).real)
    assert np.all(b > a)


@pytest.mark.parametrize("maker", [lambda: euclidean(4, r_flat=8.0, R=10.0), lambda: trapped_bump(4)])
def test_self_adjoint_and_nonnegative(maker):
    spec = maker()
    grid = make_grid(spec, 60.0, 0.1)
    for l in (0, 1, 5):
        op = assemble_laplacian(grid, spec, angular_mode(spec, l))
        assert self_adjointness_defect(op) <= 1e-13
        d, e = op.symmetric_tridiagonal()
        assert np.linalg.eigvalsh(np.diag(d) + np.diag(e, 1) + np.diag(e, -1))[0] > 0


def test_broken_adjoint_is_detected():
    spec = euclidean(4, r_flat=8.0, R=10.0)
    op = assemble_laplacian(make_grid(spec, 60.0, 0.1), spec, angular_mode(spec, 1), symmetrize=False)
    assert self_adjointness_defect(op) > 1e-12


def test_zero_multiplier_is_zero():
    op = flat_operator(n=4, r_max=20.0, dr=0.1)
    A = assemble_multiplier(op.grid, WeightFunctions(4.0), MultiplierSpec("zero"))
    assert abs(A).max() == 0.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_constant_multiplier_has_vanishing_form(seed):
    op = flat_operator(n=4, r_max=20.0, dr=0.1)
    u = np.random.default_rng(seed).standard_normal(op.N)
    A = assemble_multiplier(op.grid, WeightFunctions(4.0), MultiplierSpec("power", s=0.0))
    val = float(u @ (op.m * (A @ u)))
    scale = float(np.sqrt(np.sum(u**2 * op.m)) * np.sqrt(np.sum((A @ u) ** 2 * op.m)))
    assert abs(val) <= 1e-13 * scale


def test_power_multiplier_skew_by_direct_matrix():
    op = flat_operator(n=4, r_max=30.0, dr=0.1)
    A = assemble_multiplier(op.grid, WeightFunctions(4.0), MultiplierSpec("power", s=0.5)).toarray()
    M = np.diag(op.m)
    adj = np.linalg.solve(M, A.T @ M)
    assert np.abs(A + adj).max() <= 1e-13 * np.abs(A).max()
    assert skew_defect(sp.csr_matrix(A), op.m) <= 1e-13


def test_commutator_trivial_cases():
    op = flat_operator(n=4, r_max=20.0, dr=0.1)
    I = sp.identity(op.N, format="csr")
    assert abs(commutator(op, I)).max() == 0.0
    C = commutator(op, op.sparse())
    assert abs(C).max() <= 1e-12 * abs(op.sparse()).max() ** 2


def test_commutator_positive_for_s_equal_one(rng):
    spec = euclidean(4, r_flat=1.0, R=4.0)
    grid = make_grid(spec, 80.0, 0.1)
    op = assemble_laplacian(grid, spec, angular_mode(spec, 0))
    A = assemble_multiplier(grid, WeightFunctions(4.0), MultiplierSpec("power", s=1.0, cutoff=True))
    C = commutator(op, A)
    for u in bump_vectors(grid.nodes, 100, 8.5, 70.0, rng):
        assert float(u @ (grid.m * (C @ u))) >= -1e-10 * float(u @ (grid.m * u))


def test_zeroth_coefficients():
    assert zeroth_coefficient(4, MultiplierSpec("power", s=1.0)) == 0.0
    assert zeroth_coefficient(3, MultiplierSpec("log_pA")) == 0.0
    assert zeroth_coefficient(4, MultiplierSpec("power", s=0.5)) == pytest.approx(9.0 / 8.0)


@pytest.mark.parametrize("n,s", [(4, 0.5), (4, 1.0), (3, 0.5), (5, 0.25)])
def test_exact_zeroth_term_against_finite_differences(n, s):
    # -1/2 Delta(d_r^* r^s) with d_r^* = -d_r - (n-1)/r and Delta = -d_r^2 - (n-1)/r d_r
    def g(r):
        return -(s + n - 1) * r ** (s - 1)

    r, h = 5.0, 1e-3
    g1 = (g(r + h) - g(r - h)) / (2 * h)
    g2 = (g(r + h) - 2 * g(r) + g(r - h)) / h**2
    val = -0.5 * (-g2 - (n - 1) / r * g1)
    assert exact_zeroth_power(n, s) * r ** (s - 3) == pytest.approx(val, rel=1e-5)


def test_comm_rhs_matches_commutator_on_flat_end(rng):
    spec = euclidean(4, r_flat=1.0, R=4.0)
    wf = WeightFunctions.for_spec(spec)
    ms = MultiplierSpec("power", s=1.0)
    res = []
    for dr in (0.2, 0.1):
        grid = make_grid(spec, 64.0, dr)
        mode = angular_mode(spec, 1)
        op = assemble_laplacian(grid, spec, mode)
        E = commutator(op, assemble_multiplier(grid, wf, ms, 1)) - assemble_comm_rhs(grid, spec, wf, ms, mode, zeroth="exact")
        u = bump_vectors(grid.nodes, 1, 10.0, 50.0, np.random.default_rng(1))[0]
        res.append(abs(float(u @ (grid.m * (E @ u)))) / float(u @ (grid.m * u)))
    assert res[1] < res[0] / 3.0


def test_weighted_norm_cases():
    op = flat_operator(n=4, r_max=10.0, dr=0.1)
    g = op.grid
    assert weighted_norm(g, np.zeros(g.N), 1.0) == 0.0
    e = np.zeros(g.N)
    e[7] = 1.0
    assert weighted_norm(g, e, 1.0) == pytest.approx(math.sqrt(g.m[7]), rel=1e-15)
    direct = math.sqrt(sum((r * r + 4.0) ** -1.5 * r**3 * g.dr for r in g.nodes))
    got = weighted_norm(g, np.ones(g.N), lambda r: (r * r + 4.0) ** -0.75)
    assert got == pytest.approx(direct, rel=1e-12)


def test_dense_dump_round_trip(tmp_path):
    op = flat_operator(n=3, r_max=5.0, dr=0.5)
    path = tmp_path / "L.bin"
    write_dense(path, op.K, op.grid.hash)
    A, h = read_dense(path)
    assert h == op.grid.hash
    assert np.array_equal(A, op.K.toarray())


def test_grid_hash_tracks_grid_and_geometry():
    a = make_grid(euclidean(4), 10.0, 0.1)
    assert a.hash == make_grid(euclidean(4), 10.0, 0.1).hash
    assert a.hash != make_grid(euclidean(4), 10.0, 0.05).hash
    assert a.hash != make_grid(euclidean(3), 10.0, 0.1).hash
