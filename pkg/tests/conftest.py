import numpy as np
import pytest

from morawetz_lab.manifold import angular_mode, euclidean, trapped_bump
from morawetz_lab.operators import assemble_laplacian, make_grid


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def flat_operator(n=4, l=0, r_max=40.0, dr=0.1, **kw):
    spec = euclidean(n, **kw)
    grid = make_grid(spec, r_max, dr)
    return assemble_laplacian(grid, spec, angular_mode(spec, l))


def trapped_operator(n=4, l=0, r_max=40.0, dr=0.1):
    spec = trapped_bump(n)
    grid = make_grid(spec, r_max, dr)
    return assemble_laplacian(grid, spec, angular_mode(spec, l))


def bump_vectors(r, count, lo, hi, rng):
    """Random smooth vectors supported in (lo, hi): cosine sums times exp(-1/(1-x^2))."""
    x = (2.0 * r - lo - hi) / (hi - lo)
    env = np.zeros_like(r)
    inside = np.abs(x) < 1
    env[inside] = np.exp(-1.0 / (1.0 - x[inside] ** 2))
    out = []
    for _ in range(count):
        freqs = rng.uniform(0.1, 1.0, 4)
        phases = rng.uniform(0, 2 * np.pi, 4)
        amps = rng.standard_normal(4)
        out.append(env * sum(a * np.cos(f * r + p) for a, f, p in zip(amps, freqs, phases)))
    return out
