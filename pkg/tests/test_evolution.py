import math

import numpy as np
import pytest

from conftest import flat_operator, trapped_operator
from morawetz_lab.evolution import (
    CauchyData,
    EvolutionError,
    WaveState,
    energy,
    energy_flux_check,
    gaussian_bump,
    propagate_leapfrog,
    propagate_spectral,
    separable_forcing,
    support_radius,
    zero_data,
)
from morawetz_lab.spectral import SpectralDecomposition, decompose


@pytest.fixture(scope="module")
def sd():
    return decompose(flat_operator(n=4, l=0, r_max=30.0, dr=0.2))


def eig_data(sd, k, velocity=False):
    v = sd.vectors[:, k].copy()
    z = np.zeros_like(v)
    return CauchyData(sd.op.grid, {0: (z, v) if velocity else (v, z)})


def test_eigenvector_cosine_closed_form(sd):
    k = 4
    lam, v = sd.eigenvalues[k], sd.vectors[:, k]
    for t in (0.0, 1.3, 17.0):
        u, ut = propagate_spectral({0: sd}, eig_data(sd, k), t).modes[0]
        assert np.allclose(u, math.cos(math.sqrt(lam) * t) * v, atol=1e-12)
        assert np.allclose(ut, -math.sqrt(lam) * math.sin(math.sqrt(lam) * t) * v, atol=1e-12)


def test_zero_mode_moves_linearly(sd):
    v = sd.vectors[:, 0].copy()
    flat = SpectralDecomposition(sd.op, np.array([0.0]), v[:, None])
    data = CauchyData(sd.op.grid, {0: (np.zeros_like(v), v)})
    for t in (0.5, 3.0):
        u, ut = propagate_spectral({0: flat}, data, t).modes[0]
        assert np.allclose(u, t * v, atol=1e-14)
        assert np.allclose(ut, v, atol=1e-14)


def test_leapfrog_single_step(sd, rng):
    op = sd.op
    u0 = rng.standard_normal(op.N)
    dt = 0.02
    u1, _ = propagate_leapfrog(op, u0, np.zeros(op.N), dt, dt)
    assert np.allclose(u1, u0 - 0.5 * dt**2 * op.apply(u0), rtol=0, atol=1e-14 * np.abs(u0).max())


def test_leapfrog_rejects_unstable_step(sd):
    with pytest.raises(EvolutionError, match="dt"):
        propagate_leapfrog(sd.op, np.zeros(sd.op.N), np.zeros(sd.op.N), 1.0, 1.0)


def test_leapfrog_energy_drift_is_second_order():
    op = flat_operator(n=4, l=0, r_max=80.0, dr=0.2)
    g = gaussian_bump(op.grid, 20.0, 2.0).modes[0][0]
    E0 = op.quadratic_form(g)
    drift = []
    for dt in (0.02, 0.01):
        u, v = propagate_leapfrog(op, g, np.zeros(op.N), dt, 50.0)
        drift.append(abs(op.quadratic_form(u) + float(np.sum(v**2 * op.m)) - E0))
    assert drift[0] / drift[1] >= 3.5


def test_leapfrog_converges_to_spectral():
    sd = decompose(flat_operator(n=4, l=0, r_max=60.0, dr=0.2))
    op = sd.op
    data = gaussian_bump(op.grid, 20.0, 2.0)
    t = 6.0
    exact = propagate_spectral({0: sd}, data, t).modes[0][0]
    errs = []
    for dt in (0.02, 0.01):
        u, _ = propagate_leapfrog(op, *data.modes[0], dt, t)
        errs.append(np.abs(u - exact).max())
    assert 3.5 <= errs[0] / errs[1] <= 4.5


def test_energy_of_zero_state_and_eigenmode(sd):
    ops = {0: sd.op}
    assert energy(WaveState(0.0, zero_data(sd.op.grid).modes), ops) == 0.0
    k = 7
    for t in (0.0, 2.0, 9.5):
        E = energy(propagate_spectral({0: sd}, eig_data(sd, k), t), ops)
        assert E == pytest.approx(sd.eigenvalues[k], rel=1e-10)


def test_flux_check_without_forcing(sd):
    rep = energy_flux_check({0: sd}, gaussian_bump(sd.op.grid, 10.0, 1.5), None, 5.0)
    assert rep.residual <= 1e-9
    assert rep.forcing_l1 == 0.0


def test_flux_check_resonant_forcing(sd):
    k = 3
    v = sd.vectors[:, k]
    om = math.sqrt(sd.eigenvalues[k])
    f = separable_forcing(sd.op.grid, {0: v}, lambda t: math.cos(om * t), 20.0, 0.0, 2 * math.pi / om)
    data = CauchyData(sd.op.grid, {0: (0.1 * v, np.zeros_like(v))})
    rep = energy_flux_check({0: sd}, data, f, 20.0)
    assert rep.energy_final > rep.energy_initial
    assert rep.gronwall_slack >= 0.0
    twice = separable_forcing(sd.op.grid, {0: 2 * v}, lambda t: math.cos(om * t), 20.0, 0.0, 2 * math.pi / om)
    assert twice.l1_norm() == pytest.approx(2 * f.l1_norm(), rel=1e-14)


def test_support_radius_cases():
    op = flat_operator(n=4, r_max=60.0, dr=0.1)
    data = gaussian_bump(op.grid, 20.0, 1.0)
    state = WaveState(0.0, data.modes)
    assert support_radius(state, op.grid, 1e-8) <= 20.0 + 8.0
    assert support_radius(WaveState(0.0, zero_data(op.grid).modes), op.grid, 1e-8) == 0.0


def test_support_grows_at_unit_speed():
    op = trapped_operator(n=4, r_max=60.0, dr=0.1)
    sd = decompose(op)
    data = gaussian_bump(op.grid, 20.0, 1.0)
    r0 = support_radius(WaveState(0.0, data.modes), op.grid, 1e-6)
    r1 = support_radius(propagate_spectral({0: sd}, data, 10.0), op.grid, 1e-6)
    assert r1 <= r0 + 10.0 + 2.0


def test_guard_is_enforced(sd):
    data = gaussian_bump(sd.op.grid, 10.0, 1.0)
    with pytest.raises(EvolutionError, match="guard"):
        propagate_spectral({0: sd}, data, 20.0)
