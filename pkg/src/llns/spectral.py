"""Periodic grids, Fourier coefficients and the spectral operators of the model.

Coefficients follow the mean convention: the coefficient of ``exp(i k.x)``
is the average of ``f(x) exp(-i k.x)`` over the torus ``[0, 2pi)^d``, so a
field ``cos(x_1)`` has coefficient 1/2 at ``k = +-e_1``.

Real fields are stored in the half-spectrum (``rfftn``) layout, which makes
Hermitian symmetry structural except on the ``k_d = 0`` plane. Complex
fields, used only for diagnostics on non-real test data, are stored in the
full ``fftn`` layout.
"""
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
import scipy.fft as sfft


@dataclass(frozen=True)
class TorusGrid:
    """Collocation grid with ``n`` points per axis on ``[0, 2pi)^d``."""

    d: int
    n: int

    def __post_init__(self):
        if self.d not in (2, 3):
            raise ValueError(f"d must be 2 or 3, got {self.d}")
        if self.n < 4 or self.n & (self.n - 1):
            raise ValueError(f"n_per_dim must be a power of two >= 4, got {self.n}")

    @property
    def axes(self):
        return tuple(range(1, self.d + 1))

    @property
    def shape(self):
        return (self.n,) * self.d

    @property
    def band(self):
        """Largest resolvable |k_i|; the Nyquist index is excluded."""
        return self.n // 2 - 1

    @property
    def max_cutoff_exponent(self):
        return int(np.log2(self.n // 2))

    def spectral_shape(self, real=True):
        if real:
            return (self.n,) * (self.d - 1) + (self.n // 2 + 1,)
        return self.shape

    def wavenumbers(self, real=True):
        """Integer wavevector components as a tuple of broadcastable arrays."""
        return _wavenumbers(self.d, self.n, real)

    def kinf(self, real=True):
        ks = self.wavenumbers(real)
        out = np.abs(ks[0])
        for k in ks[1:]:
            out = np.maximum(out, np.abs(k))
        return out

    def k2(self, real=True):
        return sum(k.astype(np.float64) ** 2 for k in self.wavenumbers(real))

    def weights(self, real=True):
        """Multiplicity of each stored coefficient in a sum over all of Z^d."""
        return _weights(self.d, self.n, real)

    def in_band(self, real=True):
        return self.kinf(real) <= self.band

    def coordinates(self):
        x = np.arange(self.n) * (2 * np.pi / self.n)
        return np.meshgrid(*([x] * self.d), indexing="ij")


@lru_cache(maxsize=64)
def _wavenumbers(d, n, real):
    freqs = [sfft.fftfreq(n, 1.0 / n)] * (d - 1)
    freqs.append(sfft.rfftfreq(n, 1.0 / n) if real else sfft.fftfreq(n, 1.0 / n))
    ks = tuple(np.rint(k).astype(np.int64) for k in np.meshgrid(*freqs, indexing="ij", sparse=True))
    for k in ks:
        k.setflags(write=False)
    return ks


@lru_cache(maxsize=64)
def _weights(d, n, real):
    if not real:
        w = np.ones((n,) * d)
    else:
        w = np.full((n,) * (d - 1) + (n // 2 + 1,), 2.0)
        w[..., 0] = 1.0
        w[..., -1] = 1.0
    w.setflags(write=False)
    return w


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Fourier coefficients of a d-component vector field on a torus grid.

    ``coeffs`` has shape ``(d,) + grid.spectral_shape(real)``.
    """

    grid: TorusGrid
    coeffs: np.ndarray
    is_divergence_free: bool = False
    cutoff_m: int = None
    real: bool = True

    def __post_init__(self):
        expected = (self.grid.d,) + self.grid.spectral_shape(self.real)
        if self.coeffs.shape != expected:
            raise ValueError(f"coefficient shape {self.coeffs.shape} does not match {expected}")

    @property
    def d(self):
        return self.grid.d

    def with_coeffs(self, coeffs, **flags):
        return replace(self, coeffs=coeffs, **flags)

    def __add__(self, other):
        _check_compatible(self, other)
        return SpectralField(
            self.grid, self.coeffs + other.coeffs,
            self.is_divergence_free and other.is_divergence_free,
            _merge_cutoff(self.cutoff_m, other.cutoff_m), self.real,
        )

    def __sub__(self, other):
        return self + other * -1.0

    def __mul__(self, scalar):
        if not np.isscalar(scalar):
            return NotImplemented
        return replace(self, coeffs=self.coeffs * scalar)

    __rmul__ = __mul__

    def coefficient(self, k):
        """Coefficient vector at integer wavevector ``k`` (any sign)."""
        k = tuple(int(v) for v in k)
        if len(k) != self.d:
            raise ValueError("wavevector has wrong dimension")
        if max(abs(v) for v in k) > self.grid.n // 2:
            return np.zeros(self.d, dtype=complex)
        if self.real and k[-1] < 0:
            return np.conj(self.coefficient(tuple(-v for v in k)))
        idx = tuple(v % self.grid.n for v in k)
        return self.coeffs[(slice(None),) + idx].copy()


def _merge_cutoff(a, b):
    if a is None or b is None:
        return None
    return max(a, b)


def _check_compatible(a, b):
    if a.grid != b.grid or a.real != b.real:
        raise ValueError("fields live on different grids or layouts")


def zeros(grid, real=True):
    coeffs = np.zeros((grid.d,) + grid.spectral_shape(real), dtype=np.complex128)
    return SpectralField(grid, coeffs, True, 0, real)


def to_spectral(samples, grid=None):
    """Coefficients of a vector field sampled on the collocation grid.

    ``samples`` has shape ``(d, n, ..., n)``. Real samples give the
    half-spectrum layout, complex samples the full layout.
    """
    samples = np.asarray(samples)
    if samples.ndim < 3:
        raise ValueError("samples must have shape (d, n, ..., n)")
    if grid is None:
        grid = TorusGrid(samples.shape[0], samples.shape[1])
    if samples.shape != (grid.d,) + grid.shape:
        raise ValueError(f"samples shape {samples.shape} does not match grid {(grid.d,) + grid.shape}")
    if not np.all(np.isfinite(samples)):
        raise ValueError("samples contain non-finite values")
    if np.iscomplexobj(samples):
        coeffs = sfft.fftn(samples, axes=grid.axes, norm="forward")
        return SpectralField(grid, coeffs, False, None, False)
    coeffs = sfft.rfftn(samples.astype(np.float64), axes=grid.axes, norm="forward")
    return SpectralField(grid, coeffs, False, None, True)


def from_spectral(f):
    """Physical-space samples on the collocation grid."""
    return physical(f, f.grid.n)


def physical(f, n_out):
    """Samples on a grid of ``n_out`` points per axis (zero-padded or truncated)."""
    g = f.grid
    coeffs = f.coeffs if n_out == g.n else resample(f.coeffs, g.d, g.n, n_out, f.real)
    axes = tuple(range(1, g.d + 1))
    if f.real:
        return sfft.irfftn(coeffs, s=(n_out,) * g.d, axes=axes, norm="forward")
    return sfft.ifftn(coeffs, axes=axes, norm="forward")


def _axis_index(n, limit):
    """fft-order positions of wavenumbers -(limit-1)..(limit-1) in an n-point axis."""
    pos = np.arange(limit)
    neg = np.arange(n - limit + 1, n)
    return np.concatenate([pos, neg])


def resample(coeffs, d, n_from, n_to, real=True, limit=None):
    """Copy the modes with |k_i| < limit between layouts of two grid sizes.

    ``coeffs`` carries any number of leading (component) axes before the d
    spatial axes. ``limit`` defaults to the largest band common to both grids.
    """
    if limit is None:
        limit = min(n_from, n_to) // 2
    if limit > min(n_from, n_to) // 2:
        raise ValueError("limit exceeds the smaller grid's band")
    lead = coeffs.shape[: coeffs.ndim - d]
    if real:
        shape_to = lead + (n_to,) * (d - 1) + (n_to // 2 + 1,)
    else:
        shape_to = lead + (n_to,) * d
    out = np.zeros(shape_to, dtype=coeffs.dtype)
    src = [_axis_index(n_from, limit)] * (d - 1)
    dst = [_axis_index(n_to, limit)] * (d - 1)
    if real:
        src.append(np.arange(limit))
        dst.append(np.arange(limit))
    else:
        src.append(_axis_index(n_from, limit))
        dst.append(_axis_index(n_to, limit))
    lead_sl = (slice(None),) * len(lead)
    out[lead_sl + np.ix_(*dst)] = coeffs[lead_sl + np.ix_(*src)]
    return out


def cutoff_mask(grid, m, real=True):
    return grid.kinf(real) < 2**m


def _check_cutoff(grid, m):
    if m < 0 or 2**m > grid.n // 2:
        raise ValueError(f"cutoff 2^{m} exceeds the resolvable band of an n={grid.n} grid")


def project_cutoff(f, m):
    """Keep the modes with |k|_inf < 2^m and zero all others."""
    _check_cutoff(f.grid, m)
    mask = cutoff_mask(f.grid, m, f.real)
    return f.with_coeffs(np.where(mask, f.coeffs, 0), cutoff_m=m)


def is_band_limited(f, m):
    outside = ~cutoff_mask(f.grid, m, f.real)
    return not np.any(f.coeffs[:, outside])


def leray_project(f):
    """Leray-Hodge projection; the k = 0 mode passes through unchanged."""
    coeffs = leray_coeffs(f.coeffs, f.grid.wavenumbers(f.real))
    return f.with_coeffs(coeffs, is_divergence_free=True)


def leray_coeffs(coeffs, ks):
    k2 = sum(k.astype(np.float64) ** 2 for k in ks)
    k2 = np.where(k2 == 0, 1.0, k2)
    kdotu = sum(k * c for k, c in zip(ks, coeffs))
    return np.stack([c - k * kdotu / k2 for k, c in zip(ks, coeffs)])


def divergence_residual(f):
    """max_k |k . u(k)|, the spectral divergence of the field."""
    ks = f.grid.wavenumbers(f.real)
    return float(np.max(np.abs(sum(k * c for k, c in zip(ks, f.coeffs)))))


def spectral_derivative(f, axis):
    """Partial derivative along ``axis`` (0-based)."""
    k = f.grid.wavenumbers(f.real)[axis]
    return f.with_coeffs(1j * k * f.coeffs)


def laplacian(f):
    return f.with_coeffs(-f.grid.k2(f.real) * f.coeffs)


def inner(f, g):
    """<f, g> = (2pi)^-d integral of f . conj(g), summed over the whole lattice."""
    _check_compatible(f, g)
    w = f.grid.weights(f.real)
    s = np.sum(w * np.sum(f.coeffs * np.conj(g.coeffs), axis=0))
    return float(s.real) if f.real else complex(s)


def norm(f):
    return float(np.sqrt(abs(inner(f, f))))


def energy(f):
    """Kinetic energy (1/2) <u, u>."""
    return 0.5 * inner(f, f)


def mean(f):
    """Spatial mean vector (the k = 0 coefficient)."""
    return f.coeffs[(slice(None),) + (0,) * f.d].copy()


def hermitian_residue(f):
    """Relative asymmetry between the stored pairs u(k) and conj(u(-k)).

    In the half-spectrum layout only the ``k_d = 0`` and Nyquist planes
    store both members of a pair.
    """
    scale = np.max(np.abs(f.coeffs))
    if scale == 0:
        return 0.0
    n, d = f.grid.n, f.d
    if f.real:
        worst = 0.0
        for last in (0, n // 2):
            plane = f.coeffs[..., last]
            mirrored = plane
            for ax in range(1, d):
                mirrored = np.roll(np.flip(mirrored, axis=ax), 1, axis=ax)
            worst = max(worst, float(np.max(np.abs(plane - np.conj(mirrored)))))
        return worst / scale
    mirrored = f.coeffs
    for ax in range(1, d + 1):
        mirrored = np.roll(np.flip(mirrored, axis=ax), 1, axis=ax)
    return float(np.max(np.abs(f.coeffs - np.conj(mirrored)))) / scale


def product_coeffs(u, limit_out):
    """Exact coefficients of the tensor u_i u_j for |k|_inf < limit_out.

    The input is treated as band-limited to its cutoff (or the grid band).
    Returns an array ``(d, d) + spectral_shape`` on a grid of ``2*limit_out``
    points. Padding is chosen so no aliased mode lands inside the output band.
    """
    if not u.real:
        raise ValueError("product_coeffs needs a real field")
    g = u.grid
    lam = 2**u.cutoff_m if u.cutoff_m is not None else g.n // 2
    n_pad = max(limit_out + 2 * lam, 2 * limit_out)
    n_pad += n_pad % 2
    up = physical(u, n_pad) if n_pad >= g.n else _physical_small(u, n_pad, lam)
    d = g.d
    axes = tuple(range(1, d + 1))
    n_out = 2 * limit_out
    out = np.empty((d, d) + (n_out,) * (d - 1) + (n_out // 2 + 1,), dtype=np.complex128)
    for i in range(d):
        for j in range(i, d):
            t = sfft.rfftn(up[i] * up[j], axes=tuple(a - 1 for a in axes), norm="forward")
            t = resample(t, d, n_pad, n_out, True, limit_out)
            out[i, j] = t
            if j != i:
                out[j, i] = t
    return out


def _physical_small(u, n_pad, lam):
    g = u.grid
    coeffs = resample(u.coeffs, g.d, g.n, n_pad, True, lam)
    return sfft.irfftn(coeffs, s=(n_pad,) * g.d, axes=tuple(range(1, g.d + 1)), norm="forward")


def divergence_of_tensor(t, ks):
    """Coefficients of -P div(T) given tensor coefficients ``t[i, j]``."""
    d = len(ks)
    div = np.stack([sum(1j * ks[j] * t[i, j] for j in range(d)) for i in range(d)])
    return -leray_coeffs(div, ks)


def galerkin_nonlinear(u, m):
    """-P div pi_Lambda(u (x) u) for a band-limited, divergence-free field.

    The quadratic convolution is evaluated exactly on a zero-padded grid of
    at least 3 * 2^m points per axis and then restricted to |k|_inf < 2^m.
    """
    g = u.grid
    _check_cutoff(g, m)
    if not u.real:
        raise ValueError("galerkin_nonlinear needs a real field")
    if not is_band_limited(u, m):
        raise ValueError(f"field is not band-limited to |k|_inf < 2^{m}")
    if m == 0:
        return zeros(g)
    lam = 2**m
    t = product_coeffs(replace(u, cutoff_m=m), lam)
    small = TorusGrid(g.d, 2 * lam)
    nl = divergence_of_tensor(t, small.wavenumbers(True))
    nl = np.where(cutoff_mask(small, m), nl, 0)
    coeffs = resample(nl, g.d, 2 * lam, g.n, True, lam)
    return SpectralField(g, coeffs, True, m, True)


def from_modes(grid, modes, real=True):
    """Field built from ``(k, c)`` pairs, ``c`` a length-d complex vector.

    A real field receives ``c exp(i k.x) + conj(c) exp(-i k.x)``; a complex
    field receives only ``c exp(i k.x)``.
    """
    f = zeros(grid, real)
    out = f.coeffs
    n = grid.n
    for k, c in modes:
        k = tuple(int(v) for v in k)
        c = np.asarray(c, dtype=np.complex128)
        if len(k) != grid.d or c.shape != (grid.d,):
            raise ValueError("mode wavevector or amplitude has wrong dimension")
        if max(abs(v) for v in k) > grid.band:
            raise ValueError(f"mode {k} lies outside the grid band")
        if not real:
            out[(slice(None),) + tuple(v % n for v in k)] += c
            continue
        for kk, cc in ((k, c), (tuple(-v for v in k), np.conj(c))):
            if kk[-1] >= 0:
                out[(slice(None),) + tuple(v % n for v in kk)] += cc
    return SpectralField(grid, out, False, None, real)
