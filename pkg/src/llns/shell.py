"""Stochastic Sabra shell model, vectorized over ensemble members.

    du_n/dt = i (a k_{n+1} u_{n+2} u*_{n+1} + b k_n u_{n+1} u*_{n-1} - c k_{n-1} u_{n-1} u_{n-2})
              - nu k_n^2 u_n + f_n + nu^kappa k_n eta_n

with (a, b, c) = (1, -1/2, -1/2), k_n = k0 lam^n for n = 1..N and zero
amplitudes outside the ladder. The drift is advanced by a fourth-order
integrating-factor Runge-Kutta step; the additive noise enters with the
exact Ornstein-Uhlenbeck weight of each shell.
"""
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.stats import ks_2samp

from llns import _philox

SABRA = (1.0, -0.5, -0.5)


@dataclass(frozen=True)
class ShellParams:
    N: int
    nu: float
    dt: float
    t_end: float
    lam: float = 2.0
    k0: float = 1.0
    kappa: float = 15.0 / 8.0
    noise_scale: float = 1.0
    forcing: tuple = ()
    nonlinear: bool = True
    noise: bool = True

    def __post_init__(self):
        if self.N < 10:
            raise ValueError("need at least 10 shells")
        if not self.lam > 1:
            raise ValueError("lam must exceed 1")
        if self.nu < 0 or not self.dt > 0 or self.t_end < 0:
            raise ValueError("need nu >= 0, dt > 0, t_end >= 0")
        if len(self.forcing) > 2:
            raise ValueError("forcing acts on shells 1 and 2 only")

    @property
    def k(self):
        return self.k0 * self.lam ** np.arange(1, self.N + 1)

    @property
    def n_steps(self):
        return int(round(self.t_end / self.dt))

    def force_vector(self):
        f = np.zeros(self.N, dtype=np.complex128)
        f[: len(self.forcing)] = np.asarray(self.forcing, dtype=np.complex128)
        return f

    def noise_weights(self):
        """Per-step noise standard deviation of each shell (complex, E|z|^2 = 1)."""
        if not self.noise or self.nu == 0:
            return np.zeros(self.N)
        k = self.k
        amp = self.noise_scale * self.nu**self.kappa * k
        x = 2 * self.nu * k**2 * self.dt
        ou = np.sqrt(-np.expm1(-x) / x)
        return amp * math.sqrt(self.dt) * ou


@dataclass
class ShellState:
    """Amplitudes ``u`` with shape ``(N,)`` or ``(members, N)``."""

    u: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.complex128)
        if self.u.shape[-1] < 10:
            raise ValueError("need at least 10 shells")
        if not np.all(np.isfinite(self.u)):
            raise ValueError("shell amplitudes must be finite")

    def energy(self):
        return 0.5 * np.sum(np.abs(self.u) ** 2, axis=-1)


class ShellBlowUp(FloatingPointError):
    def __init__(self, step, shell, member=None):
        where = f" member {member}" if member is not None else ""
        super().__init__(f"non-finite amplitude at step {step}, shell {shell}{where}")
        self.step, self.shell, self.member = step, shell, member


@njit(cache=True)
def _rhs(u, k, f, nonlinear, out):
    a, b, c = 1.0, -0.5, -0.5
    n_mem, n_sh = u.shape
    for m in range(n_mem):
        for n in range(n_sh):
            acc = 0j
            if nonlinear:
                if n + 2 < n_sh:
                    acc += a * k[n + 1] * u[m, n + 2] * np.conj(u[m, n + 1])
                if n + 1 < n_sh and n >= 1:
                    acc += b * k[n] * u[m, n + 1] * np.conj(u[m, n - 1])
                if n >= 2:
                    acc -= c * k[n - 1] * u[m, n - 1] * u[m, n - 2]
                acc = 1j * acc
            out[m, n] = acc + f[n]


@njit(cache=True)
def _ifrk4(u, k, f, e_half, dt, nonlinear):
    n_mem, n_sh = u.shape
    k1 = np.empty_like(u)
    k2 = np.empty_like(u)
    k3 = np.empty_like(u)
    k4 = np.empty_like(u)
    tmp = np.empty_like(u)
    _rhs(u, k, f, nonlinear, k1)
    for m in range(n_mem):
        for n in range(n_sh):
            tmp[m, n] = e_half[n] * (u[m, n] + 0.5 * dt * k1[m, n])
    _rhs(tmp, k, f, nonlinear, k2)
    for m in range(n_mem):
        for n in range(n_sh):
            tmp[m, n] = e_half[n] * u[m, n] + 0.5 * dt * k2[m, n]
    _rhs(tmp, k, f, nonlinear, k3)
    for m in range(n_mem):
        for n in range(n_sh):
            tmp[m, n] = e_half[n] * e_half[n] * u[m, n] + dt * e_half[n] * k3[m, n]
    _rhs(tmp, k, f, nonlinear, k4)
    out = np.empty_like(u)
    for m in range(n_mem):
        for n in range(n_sh):
            e = e_half[n]
            out[m, n] = e * e * u[m, n] + dt / 6.0 * (
                e * e * k1[m, n] + 2.0 * e * (k2[m, n] + k3[m, n]) + k4[m, n])
    return out


def _check(u, step):
    bad = ~np.isfinite(u)
    if np.any(bad):
        idx = np.argwhere(bad)[0]
        member, shell = (int(idx[0]), int(idx[1]) + 1)
        raise ShellBlowUp(step, shell, member)


def _noise(p, seed, members, step, shape):
    z = _philox.complex_normals(seed, _philox.DOMAIN_SHELL, np.arange(1, p.N + 1)[None, :], step,
                                np.asarray(members)[:, None], 1)
    return z[..., 0].reshape(shape)


class _Stepper:
    def __init__(self, p):
        self.p = p
        self.k = p.k
        self.f = p.force_vector()
        self.e_half = np.exp(-p.nu * self.k**2 * p.dt / 2)
        self.w = p.noise_weights()

    def __call__(self, u, seed, members, step):
        p = self.p
        out = _ifrk4(u, self.k, self.f, self.e_half, p.dt, p.nonlinear)
        if np.any(self.w):
            out += self.w * _noise(p, seed, members, step, out.shape)
        _check(out, step)
        return out


def shell_step(s, p, seed, member=0, step=0):
    """One step of a single state (or a member batch with ``member`` an array)."""
    u = np.atleast_2d(s.u)
    members = np.atleast_1d(member)
    if members.size != u.shape[0]:
        raise ValueError("one member index per state row is required")
    out = _Stepper(p)(u, seed, members, step)
    return ShellState(out.reshape(s.u.shape), s.t + p.dt)


OBSERVABLE_KINDS = ("re", "im", "abs", "energy")


def parse_observable(spec):
    """'energy' or '<re|im|abs>:<shell>' with shells numbered from 1."""
    if spec == "energy":
        return "energy", None
    kind, _, shell = spec.partition(":")
    if kind not in OBSERVABLE_KINDS or not shell.isdigit() or int(shell) < 1:
        raise ValueError(f"unknown shell observable {spec!r}")
    return kind, int(shell)


def evaluate_observable(u, spec):
    kind, shell = parse_observable(spec)
    if kind == "energy":
        return 0.5 * np.sum(np.abs(u) ** 2, axis=-1)
    if shell > u.shape[-1]:
        raise ValueError(f"shell {shell} beyond the ladder")
    v = u[..., shell - 1]
    return {"re": v.real, "im": v.imag, "abs": np.abs(v)}[kind]


@dataclass
class ShellEnsemble:
    """Observable paths ``paths[name]`` with shape ``(members, len(times))``."""

    params: ShellParams
    seed: int
    times: np.ndarray
    paths: dict = field(default_factory=dict)
    final: np.ndarray = None

    def marginal(self, name, t):
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 0.5 * self.params.dt + 1e-12:
            raise KeyError(f"no sample at t={t}")
        return self.paths[name][:, i]


def transition_ensemble(u0, p, n_members, observables=("re:1",), seed=0, sample_every=1):
    """Evolve ``n_members`` copies of u0 with independent noise streams."""
    if n_members < 2:
        raise ValueError("need at least two members")
    u = np.tile(np.asarray(u0.u, dtype=np.complex128).reshape(1, -1), (n_members, 1))
    if u.shape[1] != p.N:
        raise ValueError("initial state does not match N")
    members = np.arange(n_members)
    stepper = _Stepper(p)
    n_steps = p.n_steps
    sample_steps = [0] + [s for s in range(1, n_steps + 1) if s % sample_every == 0 or s == n_steps]
    paths = {name: np.zeros((n_members, len(sample_steps))) for name in observables}
    col = 0
    for name in observables:
        paths[name][:, 0] = evaluate_observable(u, name)
    for s in range(1, n_steps + 1):
        u = stepper(u, seed, members, s - 1)
        if s == sample_steps[col + 1] if col + 1 < len(sample_steps) else False:
            col += 1
            for name in observables:
                paths[name][:, col] = evaluate_observable(u, name)
    times = np.asarray(sample_steps, dtype=float) * p.dt
    return ShellEnsemble(p, seed, times, paths, u)


def ks_critical(n_a, n_b, c_alpha=1.36):
    """Two-sample KS critical value (5% level by default)."""
    return c_alpha * math.sqrt((n_a + n_b) / (n_a * n_b))


@dataclass(frozen=True)
class ReIndependenceReport:
    nus: tuple
    distances: tuple
    critical: tuple
    trend: str
    variances: tuple


def re_independence_report(ensembles, observable, t, min_members=200):
    """KS distances between consecutive viscosities (ordered from large to small nu).

    ``trend`` is 'decreasing' when the last distance does not exceed the one
    before it, 'plateau' when both are below the KS critical value, and
    'increasing' otherwise.
    """
    ensembles = sorted(ensembles, key=lambda e: -e.params.nu)
    if len(ensembles) < 3:
        raise ValueError("need at least three viscosities")
    samples = []
    for ens in ensembles:
        x = ens.marginal(observable, t)
        if x.size < min_members:
            raise ValueError(f"ensemble at nu={ens.params.nu} has {x.size} < {min_members} members")
        samples.append(x)
    dist, crit = [], []
    for a, b in zip(samples[:-1], samples[1:]):
        dist.append(float(ks_2samp(a, b).statistic))
        crit.append(ks_critical(a.size, b.size))
    if dist[-1] <= dist[-2]:
        trend = "decreasing"
    elif dist[-1] < crit[-1] and dist[-2] < crit[-2]:
        trend = "plateau"
    else:
        trend = "increasing"
    return ReIndependenceReport(tuple(e.params.nu for e in ensembles), tuple(dist), tuple(crit), trend,
                                tuple(float(np.var(x)) for x in samples))


def k41_state(p, seed=0, amplitude=1.0):
    """Deterministic rough state u_n = amplitude k_n^(-1/3) exp(i theta_n), keyed phases."""
    z = _philox.complex_normals(seed, _philox.DOMAIN_INITIAL, np.arange(1, p.N + 1), 1, 0, 1)[:, 0]
    return ShellState(amplitude * p.k ** (-1.0 / 3.0) * z / np.abs(z))
