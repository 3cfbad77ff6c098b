import math

import numpy as np
import pytest
from scipy.special import comb, factorial2

from conftest import random_field
from llns.besov import (
    StructureFunctionTable, besov_norm, block_norms, corridor_index, decompose, default_ladder,
    increment_seminorm, k41_thermal_constant, lizorkin_exponent, lp_norm, structure_function,
    superposition_predict, thermal_constant, time_holder_seminorm, uniformity_report,
)
from llns.harness import synthetic_besov
from llns.spectral import TorusGrid, from_modes, norm, project_cutoff, to_spectral, zeros


def test_corridor_arithmetic():
    assert list(corridor_index([0, 1, 2, 3, 4, 5, 7, 8])) == [0, 1, 2, 2, 3, 3, 3, 4]
    g = TorusGrid(2, 32)
    dec = decompose(from_modes(g, [((5, -2), [1, 2])]))
    nonzero = [j for j, b in enumerate(dec.blocks) if np.any(b.coeffs)]
    assert nonzero == [3]


def test_blocks_sum_to_input():
    f = random_field(3, 16, seed=4, div_free=False, zero_mean=False)
    assert np.array_equal(decompose(f).total().coeffs, f.coeffs)


@pytest.mark.parametrize("p", [1, 2, 3, 4, 6])
def test_single_mode_besov_norm(p):
    g = TorusGrid(2, 32)
    f = from_modes(g, [((5, 1), [1, 0])], real=False)
    assert lp_norm(f, p) == pytest.approx(1.0, rel=1e-12)
    assert besov_norm(f, 0.5, p) == pytest.approx(2**1.5, rel=1e-12)


def test_sine_lp_norms():
    g = TorusGrid(2, 16)
    x = g.coordinates()
    f = to_spectral(np.stack([np.zeros(g.shape), np.sin(x[0])]))
    assert lp_norm(f, 2) == pytest.approx(math.sqrt(0.5), rel=1e-14)
    assert lp_norm(f, 4) == pytest.approx((3 / 8) ** 0.25, rel=1e-14)


def test_sigma_zero_is_sup_of_blocks():
    f = random_field(2, 32, seed=5)
    assert besov_norm(f, 0.0, 2) == pytest.approx(block_norms(f, 2).max(), rel=1e-15)
    assert besov_norm(f, 0.0, 2) <= norm(f)


def test_cutoff_monotonicity_on_random_fields():
    for seed in range(100):
        f = random_field(2, 16, seed=seed)
        for m in (1, 2, 3):
            for sigma, p in ((1 / 3, 2), (0.5, 4)):
                assert besov_norm(project_cutoff(f, m), sigma, p) <= besov_norm(f, sigma, p)


def test_increment_seminorm_examples():
    g = TorusGrid(2, 16)
    assert increment_seminorm(zeros(g), 0.5, 2) == 0
    x = g.coordinates()
    f = to_spectral(np.stack([np.zeros(g.shape), np.sin(x[0])]))
    ladder = np.asarray(default_ladder(g))
    expected = np.max((1 - np.cos(ladder)) / ladder)
    assert increment_seminorm(f, 0.5, 2) == pytest.approx(expected, rel=1e-12)
    assert expected == pytest.approx(2 / math.pi)


def test_lizorkin_exponent_on_synthetic_field():
    g = TorusGrid(2, 256)
    f = synthetic_besov(g, 0.4, seed=1, target_energy=1.0)
    assert lizorkin_exponent(f, 2) == pytest.approx(0.4, abs=0.05)


def test_time_holder_examples():
    g = TorusGrid(2, 8)
    v = from_modes(g, [((1, 0), [0, 1])])
    times = [0.0, 0.5, 1.0, 2.0]
    const = [v] * 4
    assert time_holder_seminorm((times, const), 0.4, 0.0, 2) == 0
    lin = [v * t for t in times]
    gamma = 0.4
    T = times[-1]
    expected = T ** (1 - gamma) * besov_norm(v, 0.0, 2)
    assert time_holder_seminorm((times, lin), gamma, 0.0, 2) == pytest.approx(expected, rel=1e-14)
    with pytest.raises(ValueError):
        time_holder_seminorm((times, lin), 1.0, 0.0, 2)


def test_structure_function_examples():
    g = TorusGrid(2, 32)
    z = structure_function(zeros(g), (2, 4))
    assert not np.any(z.values)
    x = g.coordinates()
    f = to_spectral(np.stack([np.zeros(g.shape), np.sin(x[0])]))
    table = structure_function(f, (2,), axes=(0,))
    assert np.allclose(table[2], 1 - np.cos(table.r), atol=1e-14)


def _gaussian_shift_moment(a, p, theta):
    # E (a + g)^p with g ~ N(0, 2 theta)
    return sum(comb(p, k) * a ** (p - k) * (factorial2(k - 1) if k else 1) * (2 * theta) ** (k / 2)
               for k in range(0, p + 1, 2))


def test_superposition_coefficients():
    r = np.array([0.1, 0.2])
    zero = {p: (r, np.zeros(2)) for p in (2, 4, 6)}
    out = superposition_predict(zero, 0.5)
    assert np.array_equal(out[2], [1.0, 1.0])
    assert np.array_equal(out[4], [12 * 0.25] * 2)
    assert np.array_equal(out[6], [120 * 0.125] * 2)
    a = np.array([0.3, -1.2])
    s = {p: (r, a**p) for p in (2, 4, 6)}
    theta = 0.07
    pred = superposition_predict(s, theta)
    for p in (2, 4, 6):
        assert np.allclose(pred[p], [_gaussian_shift_moment(v, p, theta) for v in a], rtol=1e-13)
    ident = superposition_predict(s, 0.0)
    for p in (2, 4, 6):
        assert np.array_equal(ident[p], a**p)
    with pytest.raises(ValueError):
        superposition_predict({2: (r, a), 4: (r + 1, a), 6: (r, a)}, 0.1)


def test_superposition_accepts_table():
    table = StructureFunctionTable((2, 4, 6), np.array([1.0]), np.array([[1.0], [2.0], [3.0]]))
    out = superposition_predict(table, 1.0)
    assert out[2][0] == 3 and out[4][0] == 2 + 12 + 12 and out[6][0] == 3 + 60 + 180 + 120


def test_thermal_constant():
    c = thermal_constant(2, 2 / 3, 1e-8, 1e-3, 1.0)
    assert c.value == pytest.approx(1e-8, rel=1e-15)
    assert c.regime == "neutral"
    for p in (2, 4, 6):
        v = thermal_constant(p, p / 3, 1e-8, 0.01, 0.5).value
        assert v == pytest.approx(k41_thermal_constant(p, 1e-8, 0.5), rel=1e-14)
        assert v == pytest.approx(1e-8 ** (p / 2) * 0.5 ** (11 * p / 6), rel=1e-14)
    assert thermal_constant(6, 1.78, 1e-8, 0.01, 1.0).regime == "vanishing"
    assert thermal_constant(2, 0.8, 1e-8, 0.01, 1.0).regime == "diverging"


def test_uniformity_report_trivial_cases():
    g = TorusGrid(2, 8)
    z = zeros(g)
    reports, _ = uniformity_report({0.1: [([0.0, 1.0], [z, z])]}, 1 / 3, 2, 2)
    assert reports[0].mean_sq == 0
    v = from_modes(g, [((1, 0), [0, 1])])
    traj = ([0.0, 0.5, 1.0], [v, v * 0.5, v * 0.25])
    single, _ = uniformity_report({0.1: [traj]}, 1 / 3, 2, 2)
    dup, _ = uniformity_report({0.1: [traj] * 5}, 1 / 3, 2, 2)
    assert dup[0].mean_sq == pytest.approx(single[0].mean_sq, rel=1e-15)
    assert dup[0].se_sq == 0
