import math

import numpy as np
import pytest

from conftest import random_field
from llns.harness import taylor_green
from llns.integrator import ForcingSpec, TrajectoryStore, make_params, run
from llns.noise import RngStream
from llns.residual import (
    ResidualProbe, TestFunction, dealias_constant, dealias_gap_norm, default_test_functions, rate_fit, residual,
    residual_decomposition, weak_form_check, weak_incompressibility,
)
from llns.spectral import TorusGrid, from_modes, zeros

TESTS = [TestFunction((1, 1), 0), TestFunction((2, -1), 1), TestFunction((5, 3), 0), TestFunction((0, 7), 0)]


def _constant_traj(u, p, n=21, dt=0.05):
    traj = TrajectoryStore(p, 0, 0)
    for i in range(n):
        traj.append(i, i * dt, u)
    return traj


def test_test_functions():
    phis = default_test_functions(2, 1)
    assert sorted((f.k, f.component) for f in phis) == sorted(
        (k, c) for k in [(1, 0), (-1, 1), (0, 1), (1, 1)] for c in (0, 1))
    assert np.allclose(TestFunction((3, 4), kind="gradient").vector(), [0.6j, 0.8j])
    with pytest.raises(ValueError):
        TestFunction((0, 0), kind="gradient")


def test_zero_trajectory_has_zero_residual():
    g = TorusGrid(2, 16)
    p = make_params(0.1, 0.75, 2, g, 0.05, 1.0, noise=False)
    traj = _constant_traj(zeros(g), p)
    for phi in TESTS:
        assert residual(traj, phi, 1.0) == 0
        assert weak_form_check(traj, phi, lambda t: math.cos(math.pi * t / 2), lambda t: 0.0) == 0


def test_steady_taylor_green():
    g = TorusGrid(2, 16)
    p = make_params(0.1, 0.75, 2, g, 0.05, 1.0, noise=False)
    traj = _constant_traj(taylor_green(g), p)
    T = 1.0
    psi = lambda t: math.cos(math.pi * t / (2 * T))  # noqa: E731
    dpsi = lambda t: -math.pi / (2 * T) * math.sin(math.pi * t / (2 * T))  # noqa: E731
    for phi in TESTS + [TestFunction((1, 1), 1), TestFunction((2, 0), 0)]:
        assert abs(residual(traj, phi, T)) < 1e-14
        assert abs(weak_form_check(traj, phi, psi, dpsi)) < 1e-3


def _forced_run(noise, sample_every=1, t_end=0.2, dt=2.5e-3):
    u0 = random_field(2, 32, 3, seed=11) * 0.5
    f = ForcingSpec((((1, 2), (0.2, -0.1)), ((9, 0), (0, 0.3))), "cosine", 3.0)
    p = make_params(2.0**-4, 0.75, 2, u0.grid, dt, t_end, forcing=f, noise=noise)
    return p, run(u0, p, RngStream(4, 2), sample_every)


def test_quadrature_is_second_order():
    p, traj = _forced_run(False)
    phi = TestFunction((1, 1), 0)
    ref = residual(traj, phi, 0.2)
    errs = []
    for c in (4, 8, 16):
        sub = TrajectoryStore(p, 0, 0, traj.times[::c], traj.steps[::c], traj.snapshots[::c])
        errs.append(abs(residual(sub, phi, 0.2) - ref))
    ratios = [errs[i + 1] / errs[i] for i in range(2)]
    assert all(3.0 < r < 5.0 for r in ratios)


def test_decomposition_closes_and_probe_agrees():
    p, traj = _forced_run(True, t_end=0.05)
    phis = [TestFunction((1, 1), 0), TestFunction((9, 0), 1), TestFunction((12, 5), 0), TestFunction((1, 2), 1)]
    probe = ResidualProbe(p, phis)
    u0 = traj.snapshots[0]
    run(u0, p, RngStream(4, 2), observers=[probe])
    for i, phi in enumerate(phis):
        b = residual_decomposition(traj, phi, 0.05)
        assert abs(b.total - b.closure_sum) <= 1e-8 * abs(b.total)
        assert abs(residual(traj, phi, 0.05, quadrature="ito") - b.total) <= 1e-8 * abs(b.total)
        pb = probe.breakdown(i)
        for name in ("dealias_gap", "viscous", "noise", "force_gap", "total"):
            assert getattr(pb, name) == pytest.approx(getattr(b, name), rel=1e-10, abs=1e-15)
    assert residual_decomposition(traj, phis[0], 0.05).dealias_gap == 0
    assert residual_decomposition(traj, phis[2], 0.05).dealias_gap != 0
    assert residual_decomposition(traj, phis[3], 0.05).force_gap == 0
    assert residual_decomposition(traj, phis[1], 0.05).force_gap != 0  # k = (9, 0) lies beyond Lambda = 8
    rates = residual_decomposition(traj, phis[0], 0.05).expected_rates()
    assert rates["viscous"] == p.nu and rates["noise"] == p.nu**p.kappa


def test_noise_term_vanishes_without_noise():
    p, traj = _forced_run(False, t_end=0.02)
    b = residual_decomposition(traj, TestFunction((1, 1), 0), 0.02)
    assert b.noise == 0


def test_decomposition_needs_every_step():
    p, traj = _forced_run(False, sample_every=2, t_end=0.02)
    with pytest.raises(ValueError):
        residual_decomposition(traj, TestFunction((1, 1), 0), 0.02)


def test_weak_form_equals_integrated_residual():
    p, traj = _forced_run(True, t_end=0.2)
    T = 0.2
    psi = lambda t: math.cos(math.pi * t / (2 * T))  # noqa: E731
    dpsi = lambda t: -math.pi / (2 * T) * math.sin(math.pi * t / (2 * T))  # noqa: E731
    phi = TestFunction((1, 1), 0)
    w = weak_form_check(traj, phi, psi, dpsi)
    times = np.asarray(traj.times)
    r = np.array([residual(traj, phi, t) for t in times])
    integral = np.trapezoid(r * np.array([dpsi(t) for t in times]), times)
    assert abs(w - integral) < 1e-4 * abs(w)
    assert abs(w + integral) > 1e-3 * abs(w)
    with pytest.raises(ValueError):
        weak_form_check(traj, phi, lambda t: 1.0, lambda t: 0.0)


def test_weak_incompressibility():
    p, traj = _forced_run(True, t_end=0.02, sample_every=4)
    assert weak_incompressibility(traj, (1, 2)) < 1e-12
    g = traj.snapshots[0].grid
    bad = from_modes(g, [((1, 2), [0.3, 0.6])])  # parallel to k: a gradient mode of amplitude 0.3 sqrt(5)
    corrupt = TrajectoryStore(p, 0, 0, [0.0], [0], [bad])
    assert weak_incompressibility(corrupt, (1, 2)) == pytest.approx(0.3 * math.sqrt(5), rel=1e-14)


def test_rate_fit_and_dealias_helpers():
    nus = np.array([0.1, 0.05, 0.025])
    assert rate_fit(nus, 3 * nus**1.5) == pytest.approx(1.5)
    u = random_field(2, 32, 3, seed=1)
    assert dealias_gap_norm(u, 3) > 0
    band = random_field(2, 32, 2, seed=1)
    assert dealias_gap_norm(band.with_coeffs(band.coeffs, cutoff_m=2), 3) < 1e-14
    k = dealias_constant([0.0, 1.0], [u, u], 3)
    assert k > 0
