import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from morawetz_lab.manifold import (
    ManifoldError,
    ManifoldSpec,
    WeightFunctions,
    angular_mode,
    chi0_step,
    cone,
    euclidean,
    harmonic_dimension,
    mode_spectrum,
    r_tilde,
    smooth_step,
    trapped_bump,
    trapping_report,
    warp_arrays,
    warp_eval,
)


def numeric_dw(spec, r, h=1e-5):
    """Central difference of w alone; independent of the analytic w'."""
    return (warp_eval(spec, r + h)[0] - warp_eval(spec, r - h)[0]) / (2 * h)


def bisect(f, a, b, tol=1e-12):
    fa = f(a)
    while b - a > tol:
        c = 0.5 * (a + b)
        fc = f(c)
        if (fc > 0) == (fa > 0):
            a, fa = c, fc
        else:
            b = c
    return 0.5 * (a + b)


def test_euclidean_warp_is_identity():
    assert warp_eval(euclidean(4), 5.0) == (5.0, 1.0, 0.0)


def test_trapped_bump_centre_value():
    w, _, _ = warp_eval(trapped_bump(4, b=0.5, r0=4.0, sigma=1.0), 4.0)
    assert w == pytest.approx(6.0, abs=1e-14)


def test_trapped_roots_match_bisection_oracle():
    spec = trapped_bump(4, b=0.5, r0=4.0, sigma=1.0)
    roots = trapping_report(spec)
    assert len(roots) == 2
    r = np.linspace(0.5, 7.9, 7401)
    d = np.array([numeric_dw(spec, x) for x in r])
    brackets = np.nonzero(np.sign(d[:-1]) != np.sign(d[1:]))[0]
    oracle = [bisect(lambda x: numeric_dw(spec, x), r[i], r[i + 1], 1e-10) for i in brackets]
    assert len(oracle) == 2
    for got, want in zip(roots, oracle):
        assert got == pytest.approx(want, abs=1e-6)
        assert abs(warp_eval(spec, got)[1]) < 1e-12
    # w' > 0 wherever the bump increases, so both roots sit on the descending flank
    assert 4.0 < roots[0] < roots[1] < 7.0
    assert warp_eval(spec, roots[0])[2] < 0 < warp_eval(spec, roots[1])[2]


def test_derivatives_match_finite_differences():
    for spec in (trapped_bump(4), cone(4)):
        for r in (1.3, 3.1, 4.4, 6.0):
            w, w1, w2 = warp_eval(spec, r)
            assert w1 == pytest.approx(numeric_dw(spec, r), rel=1e-6, abs=1e-8)
            h = 1e-4
            d2 = (warp_eval(spec, r + h)[0] - 2 * w + warp_eval(spec, r - h)[0]) / h**2
            assert w2 == pytest.approx(d2, rel=1e-3, abs=1e-5)


@pytest.mark.parametrize("n,l,mu,mult", [(3, 1, 2.0, 3), (4, 1, 3.0, 4), (3, 0, 0.0, 1), (5, 0, 0.0, 1), (3, 2, 6.0, 5)])
def test_mode_spectrum_values(n, l, mu, mult):
    mode = angular_mode(euclidean(n), l)
    assert (mode.mu, mode.multiplicity) == (mu, mult)


@given(st.integers(3, 7), st.integers(0, 12))
def test_harmonic_dimension_counts_homogeneous_polynomials(n, l):
    # dim of harmonic polynomials = dim P_l - dim P_{l-2} in n variables
    def dim(k):
        return math.comb(k + n - 1, n - 1) if k >= 0 else 0

    assert harmonic_dimension(n, l) == dim(l) - dim(l - 2)


def test_mode_spectrum_is_increasing():
    modes = mode_spectrum(euclidean(4), 16)
    mus = [m.mu for m in modes]
    assert mus == sorted(mus) and len(modes) == 17


def test_trapping_report_empty_without_trapping():
    assert trapping_report(euclidean(4, r_flat=8.0, R=10.0)) == []
    assert trapping_report(cone(4, aperture=0.7)) == []


def test_cone_reaches_exact_aperture():
    spec = cone(4, aperture=0.7, r_flat=8.0)
    assert warp_eval(spec, 9.0) == (pytest.approx(6.3), 0.7, 0.0)
    w, w1, _ = warp_arrays(spec, np.array([1e-3, 0.5]))
    assert w1[0] == pytest.approx(1.0)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"n": 2, "warp_kind": "euclidean", "r_flat": 1.0},
        {"n": 4, "warp_kind": "spiral", "r_flat": 1.0},
        {"n": 4, "warp_kind": "euclidean", "r_flat": 1.0, "V0": -1.0},
        {"n": 4, "warp_kind": "trapped_bump", "r_flat": 8.0, "warp_params": {"b": 0.5, "r0": 7.0, "sigma": 1.0}},
        {"n": 4, "warp_kind": "euclidean", "r_flat": 8.0, "R": 4.0},
    ],
)
def test_invalid_specs_rejected(kwargs):
    with pytest.raises(ManifoldError):
        ManifoldSpec(**kwargs)


def test_warp_rejects_nonpositive_radius():
    with pytest.raises(ManifoldError):
        warp_eval(euclidean(4), 0.0)


def test_json_round_trip():
    for spec in (euclidean(4, V0=1.0), trapped_bump(3), cone(5)):
        assert ManifoldSpec.from_json(spec.to_json()) == spec
    with pytest.raises(ManifoldError):
        ManifoldSpec.from_json({"n": 4, "warp": {"kind": "euclidean"}, "r_flat": 1.0, "extra": 1})


@settings(max_examples=50)
@given(st.floats(0.0, 50.0))
def test_weight_functions(r):
    wf = WeightFunctions(R=4.0)
    assert r_tilde(r) >= 2.0
    assert wf.chi(r) + wf.chi0_interior(r) == pytest.approx(1.0)
    if r <= 4.0:
        assert wf.chi(r) == 0.0
    if r >= 8.0:
        assert wf.chi(r) == 1.0


def test_smooth_steps_are_monotone():
    x = np.linspace(-0.5, 1.5, 2001)
    s = smooth_step(x)
    assert np.all(np.diff(s) >= 0) and s[0] == 0 and s[-1] == 1
    c = chi0_step(np.linspace(0.5, 2.5, 2001))
    assert np.all(np.diff(c) >= 0)
