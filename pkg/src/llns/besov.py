"""Littlewood-Paley corridors, Besov norms, increments and structure functions.

Corridors are sharp: ``C_0 = {0}`` and ``C_j = {2^(j-1) <= |k|_inf < 2^j}``.
All L^p norms use the normalized measure on the torus and the Euclidean
norm of the vector value at each point. For even integer p the averages are
exact: fields are evaluated on grids fine enough that ``|u|^p`` is not aliased.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from llns.spectral import SpectralField, TorusGrid, physical


def corridor_index(kinf):
    """j with k in C_j, elementwise (0 for k = 0)."""
    return np.frexp(np.asarray(kinf, dtype=np.float64))[1].astype(np.int64)


@dataclass(frozen=True, eq=False)
class CorridorDecomposition:
    blocks: list
    source: SpectralField

    @property
    def n_blocks(self):
        return len(self.blocks)

    def total(self):
        coeffs = sum(b.coeffs for b in self.blocks)
        return self.source.with_coeffs(coeffs)


def decompose(f):
    """Split ``f`` into its corridor blocks; the blocks sum back to ``f`` exactly."""
    j = corridor_index(f.grid.kinf(f.real))
    blocks = []
    for jj in range(int(j.max()) + 1):
        mask = j == jj
        blocks.append(f.with_coeffs(np.where(mask, f.coeffs, 0)))
    return CorridorDecomposition(blocks, f)


def _even_int(p):
    return float(p).is_integer() and int(p) % 2 == 0


def _eval_size(n_band, p):
    """Points per axis making the mean of |u|^p exact for a band |k_i| < n_band."""
    factor = max(1, math.ceil(p / 2))
    n = 2 * n_band * factor
    return 1 << max(2, (n - 1).bit_length())


def lp_norm(f, p, n_eval=None):
    """(mean |u(x)|^p)^(1/p); Parseval for p = 2."""
    if p < 1:
        raise ValueError("p must be >= 1")
    if not np.any(f.coeffs):
        return 0.0
    if p == 2:
        w = f.grid.weights(f.real)
        return float(np.sqrt(np.sum(w * np.sum(np.abs(f.coeffs) ** 2, axis=0))))
    if n_eval is None:
        kmax = int(np.max(np.where(np.any(f.coeffs != 0, axis=0), f.grid.kinf(f.real), 0)))
        n_eval = _eval_size(kmax + 1, p)
        if not _even_int(p):
            n_eval = max(n_eval, f.grid.n)
    vals = physical(f, n_eval)
    mag = np.sqrt(np.sum(np.abs(vals) ** 2, axis=0))
    return float(np.mean(mag**p) ** (1.0 / p))


def block_norms(f, p):
    """Array of ||block_j||_{L^p} for j = 0, 1, ..."""
    return np.array([lp_norm(b, p) for b in decompose(f).blocks])


def besov_norm(f, sigma, p):
    """sup_j 2^(sigma j) ||block_j(f)||_{L^p} (q = infinity)."""
    norms = block_norms(f, p)
    j = np.arange(norms.size)
    return float(np.max(2.0 ** (sigma * j) * norms, initial=0.0))


def default_ladder(grid):
    """Dyadic separations 2pi 2^-l, l = 1 .. log2(n)."""
    return tuple(2 * np.pi * 2.0**-l for l in range(1, int(math.log2(grid.n)) + 1))


def increment(f, r, axis):
    """The field x -> u(x + r e_axis) - u(x), by an exact spectral shift."""
    k = f.grid.wavenumbers(f.real)[axis]
    return f.with_coeffs((np.exp(1j * k * r) - 1.0) * f.coeffs)


def increment_norms(f, p, r_ladder, axes=None):
    """||delta_a u(r)||_{L^p} as an array indexed by (axis, r)."""
    if len(r_ladder) == 0:
        raise ValueError("empty separation ladder")
    axes = range(f.d) if axes is None else axes
    return np.array([[lp_norm(increment(f, r, a), p) for r in r_ladder] for a in axes])


def increment_seminorm(f, sigma, p, r_ladder=None):
    """sup over axis directions and ladder r of ||delta u(r)||_p^p / r^(sigma p)."""
    r_ladder = default_ladder(f.grid) if r_ladder is None else tuple(r_ladder)
    norms = increment_norms(f, p, r_ladder)
    r = np.asarray(r_ladder)
    return float(np.max(norms**p / r ** (sigma * p)))


def _slope(x, y):
    """Least-squares slope; nan when fewer than two finite points remain."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    ok = np.isfinite(x) & np.isfinite(y)
    if np.count_nonzero(ok) < 2:
        return float("nan")
    return float(np.polyfit(x[ok], y[ok], 1)[0])


def lizorkin_exponent(f, p=2, j_range=None):
    """Regularity estimate from the decay of corridor norms, fitted over ``j_range``."""
    norms = block_norms(f, p)
    # the first corridors hold too few lattice points to follow the power law
    # corridors beyond log2(n/2) are cut by the grid band
    lo, hi = j_range if j_range is not None else (3, f.grid.max_cutoff_exponent + 1)
    j = np.arange(lo, hi)
    block = np.asarray(norms[lo:hi], dtype=float)
    with np.errstate(divide="ignore"):
        logs = np.where(block > 0, np.log2(np.where(block > 0, block, 1.0)), -np.inf)
    return -_slope(j[: logs.size], logs)


def increment_exponent(f, p=2, r_ladder=None):
    """Regularity estimate from log ||delta u(r)||_p versus log r (axis averaged).

    The default ladder r = 2pi 2^-l, l = 4 .. max(5, log2(n) - 4), stays
    away from the box scale and keeps r Lambda large so the missing tail
    beyond the cutoff barely bends the fit.
    """
    if r_ladder is None:
        top = max(5, int(math.log2(f.grid.n)) - 4)
        r_ladder = tuple(2 * np.pi * 2.0**-l for l in range(4, top + 1))
    sp = np.mean(increment_norms(f, p, r_ladder) ** p, axis=0)
    with np.errstate(divide="ignore"):
        return _slope(np.log(r_ladder), np.log(sp)) / p


def _as_series(traj):
    if hasattr(traj, "snapshots"):
        return list(traj.times), list(traj.snapshots)
    times, snaps = traj
    return list(times), list(snaps)


def time_holder_seminorm(traj, gamma, sigma_minus_beta, p_half, stride=1):
    """sup over snapshot pairs of ||u(t) - u(s)||_{B^(sigma-beta)_{p/2,inf}} / |t - s|^gamma.

    ``traj`` is a trajectory store or a ``(times, snapshots)`` pair. With
    ``stride > 1`` only every stride-th snapshot enters the pairs.
    """
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    times, snaps = _as_series(traj)
    times, snaps = times[::stride], snaps[::stride]
    if len(snaps) < 2:
        raise ValueError("need at least two snapshots")
    best = 0.0
    for i in range(len(snaps)):
        for j in range(i + 1, len(snaps)):
            diff = snaps[j] - snaps[i]
            val = besov_norm(diff, sigma_minus_beta, p_half) / abs(times[j] - times[i]) ** gamma
            best = max(best, val)
    return best


@dataclass(frozen=True)
class StructureFunctionTable:
    """``values[i, l]`` is S_{orders[i]}(r[l]) averaged over axes and base points."""

    orders: tuple
    r: np.ndarray
    values: np.ndarray
    averaging: str = "axis directions and all base points"
    kind: str = "magnitude"

    def __getitem__(self, p):
        return self.values[list(self.orders).index(p)]


def structure_function(field, orders, r_ladder=None, kind="magnitude", axes=None):
    """S_p(r) = <|delta u(r)|^p> for each order p.

    ``kind='magnitude'`` uses the Euclidean norm of the vector increment,
    ``kind='longitudinal'`` the component along the separation. ``axes``
    restricts the separation directions (all axes by default).
    """
    if kind not in ("magnitude", "longitudinal"):
        raise ValueError(f"unknown increment kind {kind!r}")
    orders = tuple([orders] if np.isscalar(orders) else orders)
    if any(p < 1 for p in orders):
        raise ValueError("orders must be >= 1")
    r_ladder = default_ladder(field.grid) if r_ladder is None else tuple(r_ladder)
    pmax = max(orders)
    n_eval = _eval_size(field.grid.n // 2, pmax)
    if not all(_even_int(p) for p in orders):
        n_eval = max(n_eval, field.grid.n)
    axes = tuple(range(field.d)) if axes is None else tuple(axes)
    out = np.zeros((len(orders), len(r_ladder)))
    for a in axes:
        for l, r in enumerate(r_ladder):
            vals = physical(increment(field, r, a), n_eval)
            if kind == "magnitude":
                mag = np.sqrt(np.sum(np.abs(vals) ** 2, axis=0))
            else:
                mag = np.abs(vals[a])
            for i, p in enumerate(orders):
                out[i, l] += np.mean(mag**p)
    return StructureFunctionTable(orders, np.asarray(r_ladder, dtype=float), out / len(axes), kind=kind)


def superposition_predict(s_ns, theta):
    """Structure functions of a field plus independent Gaussian thermal noise.

    ``s_ns`` is a table holding orders 2, 4 and 6 (or a mapping from order
    to ``(r, values)``). Returns ``{2: S2, 4: S4, 6: S6}``.
    """
    if theta < 0:
        raise ValueError("thermal level must be nonnegative")
    if isinstance(s_ns, StructureFunctionTable):
        series = {p: (s_ns.r, s_ns[p]) for p in (2, 4, 6)}
    else:
        series = {p: s_ns[p] for p in (2, 4, 6)}
    r0 = np.asarray(series[2][0])
    for p in (4, 6):
        if not np.array_equal(np.asarray(series[p][0]), r0):
            raise ValueError("structure-function tables use different r grids")
    s2, s4, s6 = (np.asarray(series[p][1], dtype=float) for p in (2, 4, 6))
    return {
        2: s2 + 2 * theta,
        4: s4 + 12 * theta * s2 + 12 * theta**2,
        6: s6 + 30 * theta * s4 + 180 * theta**2 * s2 + 120 * theta**3,
    }


@dataclass(frozen=True)
class ThermalConstant:
    value: float
    exponent: float
    regime: str


def thermal_constant(p, zeta_p, Theta_eta, eta_over_L, eta_Lambda):
    """Theta^(p/2) (eta/L)^(p/3 - zeta_p) (eta Lambda)^(3p/2 + zeta_p).

    ``regime`` is 'vanishing' when p/3 - zeta_p > 0 (the constant tends to 0
    as eta/L -> 0), 'diverging' when negative and 'neutral' at zero.
    """
    for name, v in (("p", p), ("Theta_eta", Theta_eta), ("eta_over_L", eta_over_L), ("eta_Lambda", eta_Lambda)):
        if not v > 0:
            raise ValueError(f"{name} must be positive")
    expo = p / 3 - zeta_p
    value = Theta_eta ** (p / 2) * eta_over_L**expo * eta_Lambda ** (1.5 * p + zeta_p)
    regime = "vanishing" if expo > 0 else "diverging" if expo < 0 else "neutral"
    return ThermalConstant(float(value), float(expo), regime)


def k41_thermal_constant(p, Theta_eta, eta_Lambda):
    """The zeta_p = p/3 case, Theta^(p/2) (eta Lambda)^(11p/6)."""
    return Theta_eta ** (p / 2) * eta_Lambda ** (11 * p / 6)


@dataclass
class BesovReport:
    nu: float
    sigma: float
    p: float
    r: float
    per_member: np.ndarray
    per_snapshot: list = field(default_factory=list)
    mean_sq: float = 0.0
    se_sq: float = 0.0


def time_lr_norm(times, values, r):
    """(integral |v(t)|^r dt)^(1/r) by the trapezoid rule; a single sample is returned as is."""
    values = np.asarray(values, dtype=float)
    if values.size == 1:
        return float(values[0])
    return float(np.trapezoid(values**r, np.asarray(times)) ** (1.0 / r))


def uniformity_report(ensembles, sigma, p, r):
    """Ensemble mean of ||u||^2_{L^r B^sigma_{p,inf}} per viscosity, with a flat-trend flag.

    ``ensembles`` maps nu to a list of trajectories (or ``(times, snapshots)``
    pairs). Returns ``(reports, flat)``; ``flat`` is True when the weighted
    slope of the mean against log nu is within two standard errors of zero.
    """
    if not ensembles:
        raise ValueError("empty ensemble")
    reports = []
    for nu, members in sorted(ensembles.items(), reverse=True):
        if not members:
            raise ValueError(f"empty ensemble at nu={nu}")
        per_member, per_snap = [], []
        for traj in members:
            times, snaps = _as_series(traj)
            vals = np.array([besov_norm(u, sigma, p) for u in snaps])
            per_snap.append(vals)
            per_member.append(time_lr_norm(times, vals, r))
        sq = np.asarray(per_member) ** 2
        se = float(sq.std(ddof=1) / np.sqrt(sq.size)) if sq.size > 1 else 0.0
        reports.append(BesovReport(nu, sigma, p, r, np.asarray(per_member), per_snap, float(sq.mean()), se))
    return reports, _flat_trend(reports)


def _flat_trend(reports):
    if len(reports) < 2:
        return True
    x = np.log([rep.nu for rep in reports])
    y = np.array([rep.mean_sq for rep in reports])
    se = np.array([rep.se_sq for rep in reports])
    scale = max(float(np.max(np.abs(y))), np.finfo(float).tiny)
    w = 1.0 / np.maximum(se, 1e-12 * scale) ** 2
    xm = np.sum(w * x) / np.sum(w)
    sxx = np.sum(w * (x - xm) ** 2)
    if sxx == 0:
        return True
    slope = np.sum(w * (x - xm) * y) / sxx
    slope_se = 1.0 / np.sqrt(sxx)
    return bool(abs(slope) <= 2 * slope_se)
