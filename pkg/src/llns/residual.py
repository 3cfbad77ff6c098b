"""Euler residual of LLNS trajectories, its four-term split and weak-form checks.

For a test function phi the residual at time t is::

    <u(t), phi> - <u(0), phi> + int_0^t <P div(u u), phi> ds - int_0^t <P f, phi> ds

with the full (untruncated) product u u. Along the discrete scheme the
left-point version of this quantity splits exactly into

    dealias_gap  sum dt <P div[(u u) - pi(u u)], phi>
    viscous      sum <(exp(-nu |k|^2 dt) - 1) w_n, phi>
    noise        sum <a P div pi dxi_n, phi>
    force_gap    -sum dt <P (f - pi f), phi>

where ``w_n = u_n + dt (N(u_n) + P pi f(t_n))`` is the pre-viscous state.
"""
from dataclasses import dataclass

import numpy as np

from llns import noise as _noise
from llns.besov import besov_norm
from llns.noise import RngStream
from llns.spectral import SpectralField, TorusGrid, cutoff_mask, galerkin_nonlinear, physical, product_coeffs

QUADRATURES = ("trapezoid", "ito")


@dataclass(frozen=True)
class TestFunction:
    """Fourier test function.

    ``kind='mode'`` is ``exp(i k.x) e_component``; ``kind='gradient'`` is the
    unit gradient ``i (k/|k|) exp(i k.x)``.
    """

    __test__ = False  # keeps pytest from collecting it

    k: tuple
    component: int = 0
    kind: str = "mode"

    def __post_init__(self):
        object.__setattr__(self, "k", tuple(int(v) for v in self.k))
        if self.kind not in ("mode", "gradient"):
            raise ValueError(f"unknown test function kind {self.kind!r}")
        if self.kind == "gradient" and not any(self.k):
            raise ValueError("gradient test function needs k != 0")
        if not 0 <= self.component < len(self.k):
            raise ValueError("component out of range")

    @property
    def d(self):
        return len(self.k)

    @property
    def kinf(self):
        return max(abs(v) for v in self.k)

    def vector(self):
        """Fourier amplitude of phi at its wavevector."""
        if self.kind == "mode":
            e = np.zeros(self.d, dtype=complex)
            e[self.component] = 1.0
            return e
        kv = np.asarray(self.k, dtype=float)
        return 1j * kv / np.linalg.norm(kv)

    def pair_vector(self, coeff):
        """<g, phi> given the coefficient vector g(k)."""
        return complex(np.dot(coeff, np.conj(self.vector())))

    def pair(self, g):
        return self.pair_vector(g.coefficient(self.k))


def default_test_functions(d, kmax=4):
    """All Fourier modes with |k|_inf <= kmax (one of each +-k pair) and every component."""
    out = []
    for k in np.ndindex(*([2 * kmax + 1] * d)):
        kk = tuple(v - kmax for v in k)
        if not any(kk):
            continue
        for v in reversed(kk):
            if v != 0:
                if v > 0:
                    out.extend(TestFunction(kk, c) for c in range(d))
                break
    return out


def _leray_vec(vec, k):
    kv = np.asarray(k, dtype=float)
    k2 = kv @ kv
    if k2 == 0:
        return vec
    return vec - kv * (kv @ vec) / k2


def full_nonlinear_coeff(u, k):
    """Coefficient at k of P div(u u) with the untruncated product over the stored band."""
    if k[-1] < 0:
        return np.conj(full_nonlinear_coeff(u, tuple(-v for v in k)))
    kinf = max(abs(v) for v in k)
    t = product_coeffs(u, kinf + 1)
    n = 2 * (kinf + 1)
    tk = t[(slice(None), slice(None)) + tuple(v % n for v in k)]
    kv = np.asarray(k, dtype=float)
    div = 1j * tk @ kv
    return _leray_vec(div, k)


def nonlinear_pairing(u, phi):
    """<P div(u (x) u), phi>, equivalently -<u (x) u, grad P phi>."""
    if phi.kind == "gradient":
        return 0j
    return phi.pair_vector(full_nonlinear_coeff(u, phi.k))


def _force_coeff(forcing, grid, k, t, truncate_m=None):
    if forcing is None or forcing.is_zero:
        return np.zeros(grid.d, dtype=complex)
    c = np.zeros(grid.d, dtype=complex)
    for kk, amp in forcing.modes:
        kk = tuple(int(v) for v in kk)
        amp = np.asarray(amp, dtype=complex)
        if kk == tuple(k):
            c += amp
        if tuple(-v for v in kk) == tuple(k):
            c += np.conj(amp)
    if truncate_m is not None and max(abs(v) for v in k) >= 2**truncate_m:
        c[:] = 0
    return _leray_vec(c, k) * forcing.amplitude(t)


def force_pairing(forcing, grid, phi, t, truncate_m=None):
    """<P f(t), phi> (or <P pi f(t), phi> with ``truncate_m``)."""
    return phi.pair_vector(_force_coeff(forcing, grid, phi.k, t, truncate_m))


def _series(traj, phi, forcing, upto):
    times = np.asarray(traj.times[: upto + 1])
    snaps = traj.snapshots[: upto + 1]
    grid = snaps[0].grid
    pair_u = np.array([phi.pair(u) for u in snaps])
    pair_nl = np.array([nonlinear_pairing(u, phi) for u in snaps])
    pair_f = np.array([force_pairing(forcing, grid, phi, t) for t in times])
    return times, pair_u, pair_nl, pair_f


def _index_of(traj, t):
    times = np.asarray(traj.times)
    if not times[0] - 1e-12 <= t <= times[-1] + 1e-12:
        raise ValueError(f"t={t} outside the trajectory span [{times[0]}, {times[-1]}]")
    i = int(np.argmin(np.abs(times - t)))
    if abs(times[i] - t) > 1e-9 * max(1.0, abs(t)):
        raise ValueError(f"t={t} is not a stored sample time")
    return i


def residual(traj, phi, t, f=None, quadrature="trapezoid"):
    """Euler residual at time t as a complex number (real, imaginary parts).

    ``f`` defaults to the trajectory's forcing. ``quadrature='ito'`` uses
    left-point sums, which reproduce the scheme exactly when every step is stored.
    """
    if quadrature not in QUADRATURES:
        raise ValueError(f"unknown quadrature {quadrature!r}")
    forcing = traj.params.forcing if f is None else f
    i = _index_of(traj, t)
    times, pu, pnl, pf = _series(traj, phi, forcing, i)
    g = pnl - pf
    if i == 0:
        integral = 0j
    elif quadrature == "trapezoid":
        integral = np.trapezoid(g, times)
    else:
        integral = np.sum(g[:-1] * np.diff(times))
    return complex(pu[-1] - pu[0] + integral)


@dataclass(frozen=True)
class ResidualBreakdown:
    t: float
    dealias_gap: complex
    viscous: complex
    noise: complex
    force_gap: complex
    total: complex
    nu: float
    m: int
    kappa: float
    sigma: float = 1.0 / 3.0
    phi: TestFunction = None

    @property
    def closure_sum(self):
        return self.dealias_gap + self.viscous + self.noise + self.force_gap

    def expected_rates(self):
        """Nominal vanishing rates of each term in the viscosity and cutoff."""
        return {"viscous": self.nu, "noise": self.nu**self.kappa, "dealias_gap": 2.0 ** (-self.sigma * self.m)}


class ResidualProbe:
    """Step observer accumulating the residual and its split for test functions.

    Pass an instance in ``observers`` to :func:`llns.integrator.run`; no
    snapshots need to be stored.
    """

    def __init__(self, params, phis):
        self.params = params
        self.phis = list(phis)
        self.grid = params.grid
        self.steps = []
        n = len(self.phis)
        self._rows = {key: [[] for _ in range(n)] for key in ("u", "a", "b", "c", "d", "nl", "f")}
        self._last_u = {}

    def __call__(self, parts):
        p = self.params
        self.steps.append(parts.n)
        for i, phi in enumerate(self.phis):
            in_band = phi.kinf < p.cutoff
            nl_full = nonlinear_pairing(parts.u, phi)
            rows = self._rows
            rows["u"][i].append(phi.pair(parts.u))
            rows["nl"][i].append(p.dt * nl_full)
            rows["f"][i].append(p.dt * force_pairing(p.forcing, self.grid, phi, parts.t))
            rows["a"][i].append(0j if in_band else p.dt * nl_full)
            lam = p.nu * float(np.dot(phi.k, phi.k))
            rows["b"][i].append((np.exp(-lam * p.dt) - 1.0) * phi.pair(parts.w))
            rows["c"][i].append(phi.pair(parts.stoch))
            gap = force_pairing(p.forcing, self.grid, phi, parts.t) - force_pairing(
                p.forcing, self.grid, phi, parts.t, truncate_m=p.m)
            rows["d"][i].append(-p.dt * gap)
            self._last_u[i] = phi.pair(parts.u_next)

    def breakdown(self, index=0, upto=None, sigma=1.0 / 3.0):
        """Split accumulated over the first ``upto`` steps (all by default)."""
        p = self.params
        rows = self._rows
        n = len(self.steps) if upto is None else upto
        sums = {key: complex(np.sum(rows[key][index][:n])) for key in ("a", "b", "c", "d")}
        total = self.residual(index, n)
        return ResidualBreakdown(n * p.dt, sums["a"], sums["b"], sums["c"], sums["d"], total,
                                 p.nu, p.m, p.kappa, sigma, self.phis[index])

    def residual(self, index=0, upto=None):
        """Left-point residual after ``upto`` steps."""
        rows = self._rows
        n = len(self.steps) if upto is None else upto
        if n == 0:
            return 0j
        u_end = self._last_u[index] if n == len(self.steps) else rows["u"][index][n]
        u0 = rows["u"][index][0]
        return complex(u_end - u0 + np.sum(rows["nl"][index][:n]) - np.sum(rows["f"][index][:n]))


def residual_decomposition(traj, phi, t, params=None, sigma=1.0 / 3.0):
    """Four-term split of the left-point residual, from a trajectory stored at every step.

    The noise term regenerates each increment from the trajectory's seed and
    member, evaluating only the single mode of phi.
    """
    p = traj.params if params is None else params
    i = _index_of(traj, t)
    steps = np.asarray(traj.steps[: i + 1])
    if not np.array_equal(steps, np.arange(i + 1)):
        raise ValueError("residual_decomposition needs every step stored; use ResidualProbe instead")
    grid = p.grid
    k = phi.k
    lam = p.nu * float(np.dot(k, k))
    decay = np.exp(-lam * p.dt)
    in_band = phi.kinf < p.cutoff
    a = b = c = dd = 0j
    for n in range(i):
        u = traj.snapshots[n]
        tn = n * p.dt
        nl_trunc = galerkin_nonlinear(u, p.m).coefficient(k) if p.nonlinear else np.zeros(grid.d, complex)
        f_trunc = _force_coeff(p.forcing, grid, k, tn, truncate_m=p.m)
        w = u.coefficient(k) + p.dt * (nl_trunc + f_trunc)
        b += (decay - 1.0) * phi.pair_vector(w)
        if not in_band:
            a += p.dt * nonlinear_pairing(u, phi)
        if p.amplitude > 0:
            rng = RngStream(traj.seed, traj.member, n)
            c += phi.pair_vector(_noise.forcing_at(k, p.d, p.m, p.dt, rng, p.amplitude))
        gap = _force_coeff(p.forcing, grid, k, tn) - f_trunc
        dd += -p.dt * phi.pair_vector(gap)
    total = residual(traj, phi, t, quadrature="ito")
    return ResidualBreakdown(float(traj.times[i]), a, b, c, dd, total, p.nu, p.m, p.kappa, sigma, phi)


def weak_incompressibility(traj, chi_k):
    """max over stored times of |<u(t), grad chi>| for the unit gradient test function."""
    phi = TestFunction(chi_k, kind="gradient")
    return float(max(abs(phi.pair(u)) for u in traj.snapshots))


def weak_form_check(traj, phi, psi, dpsi, f=None, quadrature="trapezoid"):
    """int <u, phi> psi' dt + <u(0), phi> psi(0) - int <P[div(u u) - f], phi> psi dt.

    ``psi`` and ``dpsi`` are callables with ``psi(T) = 0``. By integration
    by parts the value equals the time integral of residual(t) psi'(t).
    """
    times = np.asarray(traj.times)
    T = times[-1]
    if abs(psi(T)) > 1e-12:
        raise ValueError("psi must vanish at the final time")
    forcing = traj.params.forcing if f is None else f
    _, pu, pnl, pf = _series(traj, phi, forcing, len(times) - 1)
    ps = np.array([psi(t) for t in times])
    dps = np.array([dpsi(t) for t in times])
    g1 = pu * dps
    g2 = (pnl - pf) * ps
    if quadrature == "trapezoid":
        i1, i2 = np.trapezoid(g1, times), np.trapezoid(g2, times)
    else:
        i1, i2 = np.sum(g1[:-1] * np.diff(times)), np.sum(g2[:-1] * np.diff(times))
    return complex(i1 + pu[0] * ps[0] - i2)


def rate_fit(nus, values):
    """Least-squares slope of log|value| against log nu."""
    x = np.log(np.asarray(nus, dtype=float))
    y = np.log(np.abs(np.asarray(values)))
    return float(np.polyfit(x, y, 1)[0])


def dealias_gap_norm(u, m, p=4):
    """||(u u) - pi(u u)||_{L^{p/2}} for the full product over the stored band."""
    g = u.grid
    lam_store = 2**u.cutoff_m if u.cutoff_m is not None else g.n // 2
    limit = 2 * lam_store
    t = product_coeffs(u, limit)
    big = TorusGrid(g.d, 2 * limit)
    outside = ~cutoff_mask(big, m)
    gap = np.where(outside, t, 0)
    rows = [physical(SpectralField(big, gap[i]), big.n) for i in range(g.d)]
    mag2 = sum(np.sum(v**2, axis=0) for v in rows)
    q = p / 2
    return float(np.mean(mag2 ** (q / 2)) ** (1.0 / q))


def dealias_constant(times, snapshots, m, sigma=1.0 / 3.0, p=4):
    """K = int ||(1 - pi)(u u)||_{L^{p/2}} dt / (2^(-sigma m) int ||u||^2_{B^sigma_{p,inf}} dt)."""
    gaps = np.array([dealias_gap_norm(u, m, p) for u in snapshots])
    norms = np.array([besov_norm(u, sigma, p) ** 2 for u in snapshots])
    times = np.asarray(times)
    if len(times) > 1:
        num, den = np.trapezoid(gaps, times), np.trapezoid(norms, times)
    else:
        num, den = gaps[0], norms[0]
    return float(num / (2.0 ** (-sigma * m) * den))
