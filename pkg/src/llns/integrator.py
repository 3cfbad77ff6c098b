"""Time stepping of the truncated LLNS system with a per-step energy audit.

The scheme is integrating-factor Euler-Maruyama::

    w    = u + dt * (N(u) + P pi f(t_n))
    u'   = exp(-nu |k|^2 dt) w + a * P div pi dxi_n,      a = theta * nu^kappa

Each step records the exact discrete energy budget of that update, so the
audit residual isolates the two quantities that are zero only in
expectation or to rounding: ``dt <u, N(u)>`` and the noise energy minus its
Ito mean.
"""
import math
from dataclasses import dataclass, field, replace

import numpy as np

from llns import noise as _noise
from llns.spectral import (
    SpectralField, TorusGrid, cutoff_mask, energy, from_modes, galerkin_nonlinear,
    inner, is_band_limited, leray_project, mean, project_cutoff,
)

PROFILES = ("constant", "cosine")


class BlowUpError(FloatingPointError):
    """The discrete system produced a non-finite value."""

    def __init__(self, step, t, detail=""):
        super().__init__(f"non-finite state at step {step} (t={t:g}){': ' + detail if detail else ''}")
        self.step = step
        self.t = t


@dataclass(frozen=True)
class ForcingSpec:
    """Deterministic body force ``profile(t) * sum_k c_k e^{ik.x} + c.c.``.

    ``modes`` is a tuple of ``(k, c)`` pairs with ``c`` a complex vector. The
    ``cosine`` profile multiplies by ``cos(omega t)``.
    """

    modes: tuple = ()
    profile: str = "constant"
    omega: float = 0.0

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise ValueError(f"unknown forcing profile {self.profile!r}")
        for k, _ in self.modes:
            if all(int(v) == 0 for v in k):
                raise ValueError("forcing must have zero mean (no k = 0 mode)")

    @property
    def is_zero(self):
        return not self.modes

    def amplitude(self, t):
        return 1.0 if self.profile == "constant" else math.cos(self.omega * t)

    def field(self, grid, t=0.0):
        """The full (untruncated, unprojected) force on ``grid`` at time ``t``."""
        return from_modes(grid, self.modes) * self.amplitude(t)

    def max_kinf(self):
        return max((max(abs(int(v)) for v in k) for k, _ in self.modes), default=0)


@dataclass(frozen=True)
class SolverParams:
    d: int
    n: int
    nu: float
    alpha: float
    m: int
    kappa: float
    theta: float
    dt: float
    t_end: float
    forcing: ForcingSpec = field(default_factory=ForcingSpec)
    nonlinear: bool = True
    noise: bool = True

    @property
    def grid(self):
        return TorusGrid(self.d, self.n)

    @property
    def cutoff(self):
        return 2**self.m

    @property
    def amplitude(self):
        """Noise prefactor theta * nu^kappa, or 0 with noise off."""
        return self.theta * self.nu**self.kappa if self.noise else 0.0

    @property
    def n_steps(self):
        return int(round(self.t_end / self.dt))


def cutoff_exponent(nu, alpha):
    """m = round(-alpha log2 nu), halves rounded up."""
    return int(math.floor(-alpha * math.log2(nu) + 0.5))


def kappa_for(d):
    return 3 * (d + 2) / 8


def make_params(nu, alpha, d, grid, dt, t_end, forcing=None, theta=math.sqrt(2.0),
                nonlinear=True, noise=True):
    """Validated parameters with m and kappa derived from nu, alpha and d."""
    if not nu > 0:
        raise ValueError("nu must be positive")
    if not 0.75 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [3/4, 1], got {alpha}")
    if grid.d != d:
        raise ValueError("grid dimension does not match d")
    if not dt > 0 or not t_end >= 0:
        raise ValueError("dt must be positive and t_end nonnegative")
    if theta < 0:
        raise ValueError("theta must be nonnegative")
    m = cutoff_exponent(nu, alpha)
    if m < 1:
        raise ValueError(f"nu={nu} gives cutoff exponent {m}; need m >= 1")
    if 2**m > grid.n // 2:
        raise ValueError(f"cutoff 2^{m} exceeds the band of an n={grid.n} grid (under-resolved)")
    forcing = forcing or ForcingSpec()
    if forcing.max_kinf() > grid.band:
        raise ValueError("forcing modes lie outside the grid band")
    return SolverParams(d, grid.n, float(nu), float(alpha), m, kappa_for(d), float(theta),
                        float(dt), float(t_end), forcing, nonlinear, noise)


def cfl_dt(u, m, safety=0.5):
    """Advective step bound safety / (2^m max|u|); infinite for u = 0."""
    from llns.spectral import from_spectral

    umax = float(np.max(np.sqrt(np.sum(from_spectral(u) ** 2, axis=0))))
    return math.inf if umax == 0 else safety / (2**m * umax)


def ito_input(p):
    """Mean noise energy per step: (1/2) a^2 (d-1) sum_{0<|k|_inf<Lambda} |k|^2 dt."""
    lam = p.cutoff
    k1 = np.arange(-(lam - 1), lam)
    ksq = sum(np.meshgrid(*([k1.astype(float) ** 2] * p.d), indexing="ij"))
    return 0.5 * p.amplitude**2 * _noise.forcing_contraction(p.d) * float(ksq.sum()) * p.dt


@dataclass
class TrajectoryStore:
    """Snapshots at sampled steps plus per-step audit series.

    ``audit`` maps term names to arrays of length ``n_steps``; ``energy``
    has one more entry (the initial energy).
    """

    params: SolverParams
    seed: int
    member: int
    times: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    audit: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.snapshots)

    def append(self, step, t, u):
        if self.times and t <= self.times[-1]:
            raise ValueError("snapshot times must increase")
        self.steps.append(step)
        self.times.append(t)
        self.snapshots.append(u)

    def at(self, t, tol=1e-12):
        i = int(np.argmin(np.abs(np.asarray(self.times) - t)))
        if abs(self.times[i] - t) > tol * max(1.0, abs(t)):
            raise KeyError(f"no snapshot at t={t}")
        return self.snapshots[i]


AUDIT_TERMS = ("dissipation", "force_work", "drift_defect", "noise_work", "ito_input")


@dataclass(frozen=True, eq=False)
class StepParts:
    """Intermediate quantities of one step, handed to observers."""

    n: int
    t: float
    u: SpectralField
    nonlinear: SpectralField
    force: SpectralField
    w: SpectralField
    stoch: SpectralField
    u_next: SpectralField


def _decay(p, grid):
    return np.exp(-p.nu * grid.k2(True) * p.dt)


def _prepared_force(p, grid, t, mask):
    if p.forcing.is_zero:
        return None
    f = leray_project(p.forcing.field(grid, t))
    return f.with_coeffs(np.where(mask, f.coeffs, 0), cutoff_m=p.m)


def _check_state(u, p):
    if u.grid != p.grid or not u.real:
        raise ValueError("state does not live on the parameter grid")
    if not is_band_limited(u, p.m):
        raise ValueError(f"state is not band-limited to |k|_inf < 2^{p.m}")


# overflow is reported as BlowUpError below, not as a floating-point warning
@np.errstate(over="ignore", invalid="ignore")
def _advance(u, p, rng, n, decay, mask, sampler, want_parts=False):
    grid = u.grid
    t = n * p.dt
    nl = galerkin_nonlinear(u, p.m) if p.nonlinear else None
    f = _prepared_force(p, grid, t, mask)
    drift = np.zeros_like(u.coeffs)
    if nl is not None:
        drift += nl.coeffs
    if f is not None:
        drift += f.coeffs
    w = u.with_coeffs(u.coeffs + p.dt * drift)
    v = w.with_coeffs(decay * w.coeffs)
    a = p.amplitude
    if a > 0:
        inc = _noise.sample_increment(p.d, p.m, p.dt, rng.at_step(n), sampler)
        stoch = _noise.stochastic_forcing(inc, a, grid)
        u_next = v.with_coeffs(v.coeffs + stoch.coeffs, is_divergence_free=True, cutoff_m=p.m)
    else:
        stoch = None
        u_next = replace(v, is_divergence_free=True, cutoff_m=p.m)
    if not np.all(np.isfinite(u_next.coeffs)):
        raise BlowUpError(n, t)
    g = u.with_coeffs(drift)
    terms = {
        "dissipation": energy(v) - energy(w),
        "force_work": p.dt * inner(u, f) if f is not None else 0.0,
        "drift_defect": 0.5 * p.dt**2 * inner(g, g),
        "noise_work": inner(v, stoch) if stoch is not None else 0.0,
    }
    parts = None
    if want_parts:
        zero = u.with_coeffs(np.zeros_like(u.coeffs))
        parts = StepParts(n, t, u, nl or zero, f or zero, w, stoch or zero, u_next)
    return u_next, terms, parts


def prepare_initial(u0, p):
    """Apply pi_Lambda and Leray to u0 and clear its rounding-level mean."""
    if u0.grid != p.grid:
        raise ValueError("initial field does not live on the parameter grid")
    scale = max(float(np.max(np.abs(u0.coeffs))), 1.0)
    if np.any(np.abs(mean(u0)) > 1e-12 * scale):
        raise ValueError("initial field must have zero mean")
    u = leray_project(project_cutoff(u0, p.m))
    coeffs = u.coeffs.copy()
    coeffs[(slice(None),) + (0,) * p.d] = 0
    return u.with_coeffs(coeffs)


def step(u, p, rng):
    """One step from ``u`` at step counter ``rng.step`` (time rng.step * dt)."""
    _check_state(u, p)
    grid = u.grid
    u_next, _, _ = _advance(u, p, rng, rng.step, _decay(p, grid), cutoff_mask(grid, p.m), None)
    return u_next


def run(u0, p, rng, sample_every=1, observers=()):
    """March ``p.n_steps`` steps, storing every ``sample_every``-th state.

    The snapshot at step 0 and at the final step are always stored.
    ``observers`` receive a :class:`StepParts` after every step.
    """
    if sample_every < 1:
        raise ValueError("sample_every must be >= 1")
    u = prepare_initial(u0, p)
    grid = u.grid
    decay = _decay(p, grid)
    mask = cutoff_mask(grid, p.m)
    sampler = _noise.BandSampler(p.d, p.m)
    n_steps = p.n_steps
    traj = TrajectoryStore(p, rng.seed, rng.member)
    traj.append(0, 0.0, u)
    series = {k: np.zeros(n_steps) for k in AUDIT_TERMS}
    energies = np.zeros(n_steps + 1)
    means = np.zeros((n_steps + 1, p.d))
    energies[0] = energy(u)
    ito = ito_input(p)
    series["ito_input"][:] = ito
    want = bool(observers)
    for n in range(n_steps):
        u, terms, parts = _advance(u, p, rng, n, decay, mask, sampler, want)
        for key, val in terms.items():
            series[key][n] = val
        with np.errstate(over="ignore", invalid="ignore"):
            energies[n + 1] = energy(u)
        means[n + 1] = mean(u).real
        for obs in observers:
            obs(parts)
        if (n + 1) % sample_every == 0 or n + 1 == n_steps:
            traj.append(n + 1, (n + 1) * p.dt, u)
    series["energy"] = energies
    series["mean"] = means
    traj.audit = series
    return traj


@dataclass(frozen=True)
class AuditReport:
    residuals: np.ndarray
    mean: float
    std: float
    max_abs: float
    max_relative: float


def energy_audit(traj, p=None):
    """Per-step residual r_n = Delta E_n minus the modeled budget terms."""
    a = traj.audit
    if not a:
        raise ValueError("trajectory has no audit series")
    e = a["energy"]
    modeled = sum(a[k] for k in AUDIT_TERMS)
    r = np.diff(e) - modeled
    scale = np.maximum(e[:-1], np.finfo(float).tiny)
    return AuditReport(r, float(r.mean()), float(r.std()), float(np.abs(r).max(initial=0.0)),
                       float(np.max(np.abs(r) / scale, initial=0.0)))
