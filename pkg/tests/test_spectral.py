import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import bump_vectors, flat_operator
from morawetz_lab.checks import hardy_family
from morawetz_lab.spectral import (
    BandedResolvent,
    FrequencyCutoff,
    SpectralError,
    conjugated_cutoff_norm,
    conjugated_cutoff_operator,
    decompose,
    fit_decay_exponent,
    hardy_ratio,
    interpolation_bound_ratio,
    localized_cutoff_decay,
    resolvent_apply,
    spectral_cutoff_apply,
)


@pytest.fixture(scope="module")
def full_sd():
    return decompose(flat_operator(n=4, l=0, r_max=40.0, dr=0.2))


def mnorm(sd, u):
    return math.sqrt(float(np.sum(np.abs(u) ** 2 * sd.m)))


def test_decomposition_is_m_orthonormal(full_sd):
    assert full_sd.orthonormality_defect() < 1e-10
    assert full_sd.residual() < 1e-8


def test_windowed_matches_full(full_sd):
    top = 0.3
    win = decompose(full_sd.op, lam_max=top)
    want = full_sd.eigenvalues[full_sd.eigenvalues <= top]
    assert np.allclose(win.eigenvalues, want, rtol=1e-10, atol=1e-14)


def test_cutoff_keeps_plateau_and_kills_outside(full_sd):
    k = 5
    v, lam = full_sd.vectors[:, k], full_sd.eigenvalues[k]
    fc = FrequencyCutoff(math.sqrt(1.0 / lam))
    assert np.allclose(spectral_cutoff_apply(full_sd, fc, v), v, atol=1e-12)
    fc8 = FrequencyCutoff(math.sqrt(8.0 / lam))
    assert mnorm(full_sd, spectral_cutoff_apply(full_sd, fc8, v)) < 1e-12


def test_psi_tilde_is_one_on_supp_psi():
    lam = np.linspace(0.0, 10.0, 20001)
    psi = FrequencyCutoff.psi(lam)
    assert np.array_equal(FrequencyCutoff.psi_tilde(lam) * psi, psi)
    assert FrequencyCutoff.psi(1.0) == 1.0 and FrequencyCutoff.psi(4.0) == 0.0


def test_cutoff_rejects_short_window():
    sd = decompose(flat_operator(n=4, r_max=20.0, dr=0.2), lam_max=0.1)
    with pytest.raises(SpectralError):
        spectral_cutoff_apply(sd, FrequencyCutoff(1.0), np.ones(sd.op.N))


def test_resolvent_diagonal_action(full_sd):
    H = 2.0
    k = 3
    v, lam = full_sd.vectors[:, k], full_sd.eigenvalues[k]
    z = H**2 * lam + 1j
    out = resolvent_apply(full_sd, FrequencyCutoff(H), z, v)
    assert np.allclose(out, v / (H**2 * lam - z), atol=1e-10)


def test_resolvent_rejects_real_z(full_sd):
    with pytest.raises(SpectralError):
        resolvent_apply(full_sd, FrequencyCutoff(1.0), 1.0, np.ones(full_sd.op.N))


@settings(max_examples=25, deadline=None)
@given(
    st.floats(-3, 3, allow_nan=False),
    st.floats(0.05, 2, allow_nan=False),
    st.sampled_from([1.0, 2.0, 8.0]),
    st.integers(0, 2**32 - 1),
)
def test_resolvent_bounded_by_inverse_imaginary_part(x, y, H, seed):
    op = flat_operator(n=4, r_max=20.0, dr=0.2)
    R = BandedResolvent(op, H, complex(x, y))
    f = np.random.default_rng(seed).standard_normal(op.N)
    u = R(f)
    norm = lambda a: math.sqrt(float(np.sum(np.abs(a) ** 2 * op.m)))
    assert norm(u) <= norm(f) / y * (1 + 1e-10)
    # (H^2 L - z) R f = f
    back = H**2 * op.apply(u) - complex(x, y) * u
    assert norm(back - f) <= 1e-10 * norm(f) * max(1.0, H**2 * 4 / 0.04)


def test_banded_resolvent_matches_spectral(full_sd, rng):
    f = rng.standard_normal(full_sd.op.N)
    z = complex(0.7, -0.3)
    a = BandedResolvent(full_sd.op, 3.0, z)(f)
    b = resolvent_apply(full_sd, FrequencyCutoff(3.0), z, f)
    assert np.allclose(a, b, rtol=1e-9, atol=1e-11)


def test_conjugated_norm_is_sup_of_psi(full_sd):
    lam = full_sd.eigenvalues[10]
    fc = FrequencyCutoff(math.sqrt(1.0 / lam))
    assert conjugated_cutoff_operator(full_sd, fc, "id", 0.0, 0.0).exact_norm() == pytest.approx(1.0, rel=1e-12)
    # the power iteration stops on a relative step change of POWER_TOL
    assert conjugated_cutoff_norm(full_sd, fc) == pytest.approx(1.0, rel=1e-4)


def test_conjugated_norm_zero_when_window_empty(full_sd):
    fc = FrequencyCutoff(math.sqrt(4.0 / full_sd.eigenvalues[0]) * 1.01)
    assert conjugated_cutoff_norm(full_sd, fc) == 0.0


@pytest.mark.parametrize("L_kind,s,rho", [("id", 0.5, 0.5), ("scat_deriv", 1.0, 0.0), ("id", 0.0, 1.5)])
def test_power_iteration_matches_exact_factor_norm(full_sd, L_kind, s, rho):
    lam = full_sd.eigenvalues[6]
    T = conjugated_cutoff_operator(full_sd, FrequencyCutoff(math.sqrt(1.0 / lam)), L_kind, s, rho)
    assert T.norm(tol=1e-12).value == pytest.approx(T.exact_norm(), rel=1e-5)


def test_conjugated_norm_rejects_out_of_range(full_sd):
    with pytest.raises(SpectralError, match="min"):
        conjugated_cutoff_norm(full_sd, FrequencyCutoff(2.0), "id", 1.5, 0.5)


def test_fit_exact_power():
    slope, icpt = fit_decay_exponent([(h, 3.0 * h**-2) for h in (2, 4, 8, 16)])
    assert slope == pytest.approx(-2.0, abs=1e-12)
    assert icpt == pytest.approx(math.log(3.0), abs=1e-12)
    assert fit_decay_exponent([(h, 5.0) for h in (2, 4, 8)])[0] == pytest.approx(0.0, abs=1e-12)


def test_fit_with_noise():
    rng = np.random.default_rng(7)
    hs = [2.0**j for j in range(1, 7)]
    slope, _ = fit_decay_exponent([(h, h**-1 * (1 + 0.01 * rng.standard_normal())) for h in hs])
    assert -1.05 <= slope <= -0.95


def test_fit_rejects_degenerate_input():
    with pytest.raises(SpectralError):
        fit_decay_exponent([(1, 1), (2, 2)])
    with pytest.raises(SpectralError):
        fit_decay_exponent([(1, 1), (2, 0), (3, 1)])


def test_hardy_theta_zero_is_one(rng):
    op = flat_operator(n=4, r_max=60.0, dr=0.1)
    for u in bump_vectors(op.grid.nodes, 5, 3.0, 50.0, rng):
        assert hardy_ratio(op.grid, u, 0.5, 0.0) == pytest.approx(1.0, rel=1e-14)


def test_hardy_optimizing_sequence_approaches_one_from_below():
    # the sin-log family attains 1/sqrt(1 + (pi/L)^2) in the continuum with x = 1/r
    fam, _ = hardy_family(4.0, (2.0, 4.0, 6.0), 0.05)
    ratios = [row["ratio"] for row in fam]
    assert all(a < b for a, b in zip(ratios, ratios[1:]))
    assert ratios[-1] < 1.0
    for row in fam:
        assert row["ratio"] <= row["continuum_1_over_r"] * (1 + 1e-3)


def test_interpolation_ratio_at_most_one_for_s_zero(full_sd, rng):
    for k in (0, 5, 40):
        assert interpolation_bound_ratio(full_sd, full_sd.vectors[:, k], 0.0) <= 1.0 + 1e-10
    for u in bump_vectors(full_sd.op.grid.nodes, 20, 2.0, 35.0, rng):
        assert interpolation_bound_ratio(full_sd, u, 0.0) <= 1.0 + 1e-12


def test_interpolation_ratio_stable_under_refinement():
    maxima = []
    for dr in (0.2, 0.1):
        op = flat_operator(n=4, r_max=60.0, dr=dr)
        rng = np.random.default_rng(3)
        U = bump_vectors(op.grid.nodes, 200, 2.0, 50.0, rng)
        maxima.append(max(interpolation_bound_ratio(op, u, 0.5) for u in U))
    assert all(math.isfinite(x) for x in maxima)
    assert abs(maxima[0] / maxima[1] - 1.0) <= 0.10


def test_localized_cutoff_trivial_cases():
    op = flat_operator(n=4, r_max=60.0, dr=0.2)
    sd = decompose(op, lam_max=4.0)
    ts = (2.0, 4.0, 8.0)
    zero = lambda x: np.zeros_like(x)
    one = lambda x: np.ones_like(x)
    chi = lambda x: (x < 0.5).astype(float)
    phi = lambda x: (x > 2.0).astype(float)
    assert [n for _, n in localized_cutoff_decay(sd, zero, chi, 1, ts)] == [0.0] * 3
    assert [n for _, n in localized_cutoff_decay(sd, phi, one, 1, ts)] == [0.0] * 3


def test_localized_cutoff_rejects_overlap():
    sd = decompose(flat_operator(n=4, r_max=30.0, dr=0.2), lam_max=4.0)
    one = lambda x: np.ones_like(x)
    zero = lambda x: np.zeros_like(x)
    with pytest.raises(SpectralError, match="overlap"):
        localized_cutoff_decay(sd, one, zero, 0, (2.0,))
