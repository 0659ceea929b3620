import math

import numpy as np
import pytest

from sns.galerkin import (
    LevelRecord,
    convergence_audit,
    coupled_noise_norms,
    level_distance,
    mollified_noise,
    run_level,
    time_derivative_norm,
)
from sns.noise import OuEnsemble, assemble_X, evolve_ou, renorm_constant
from sns.solver import SolverConfig, run
from sns.spectral_core import FourierGrid
from sns.verification import brute_force_r

BASE = SolverConfig(n=32, seed=7, dt=5e-4, t_end=0.1, magnitudes=False, output_every=10)


@pytest.fixture(scope="module")
def levels():
    return [run_level(BASE, lv) for lv in (4.0, 8.0, 16.0, 32.0)]


def test_large_level_is_bit_identical():
    g = FourierGrid(BASE.n)
    ref = run(BASE, keep_fields=True)
    top = run_level(BASE, 2.0 * g.radius)
    assert ref.rows == top.record.rows
    for (_, a), (_, b) in zip(ref.fields, top.record.fields):
        assert np.array_equal(a.coeffs, b.coeffs)


def test_mollified_noise_contracts():
    g = FourierGrid(16)
    ens = evolve_ou(OuEnsemble.start(g, np.arange(20)), 0.5)
    for p in range(20):
        X = assemble_X(ens, p)
        assert mollified_noise(X, 1.0).norm() < X.norm()
    xn, x = coupled_noise_norms(BASE, 1.0)
    assert xn < x


def test_identical_levels_have_zero_distance(levels):
    assert level_distance(levels[1], levels[1]) == 0.0
    with pytest.raises(ValueError):
        run_level(BASE, -1.0)


def test_distances_decrease_and_bounds_uniform(levels):
    audit = convergence_audit(levels)
    d = audit.distances
    assert audit.monotone and d[0] > d[1] > d[2] and math.isnan(d[-1])
    sups = [a.sup_norm for a in audit.levels]
    ints = [a.h1_integral for a in audit.levels]
    assert all(math.isfinite(x) for x in sups + ints)
    assert max(sups) <= 2.0 * min(sups)
    assert audit.dt_norm_ratio <= 2.0
    with pytest.raises(ValueError):
        convergence_audit(levels[:2])


def test_time_derivative_norm_of_constant_path(levels):
    rec = levels[0].record
    still = LevelRecord(1.0, type(rec)(rec.config, fields=[(0.0, rec.fields[0][1]),
                                                           (0.1, rec.fields[0][1])]))
    assert time_derivative_norm(still, 0.1) == 0.0


def test_mollified_renorm_constant_oracle():
    g = FourierGrid(64)
    for lam, n in ((8.0, 4.0), (8.0, 16.0), (27.0, 8.0)):
        got = renorm_constant(lam, 1.0, g, mollify=n)
        assert got == pytest.approx(brute_force_r(lam, 1.0, 64, mollify=n), rel=1e-12)
