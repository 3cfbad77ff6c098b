"""Truncated thermal noise: symmetric traceless Brownian increments per mode.

Each wavevector's raw Gaussians are keyed by ``(seed, k, step, member)`` in a
counter-based generator, so an increment at a given mode does not depend on
the cutoff, the grid size, or which other modes were drawn.
"""
from dataclasses import dataclass

import numpy as np

from llns import _philox
from llns.spectral import SpectralField, TorusGrid, cutoff_mask, leray_coeffs, resample


def covariance_oracle(i, j, k, l, d=3):
    """delta_ik delta_jl + delta_il delta_jk - (2/3) delta_ij delta_kl (1-based)."""
    for idx in (i, j, k, l):
        if not 1 <= idx <= d:
            raise ValueError(f"component index {idx} outside 1..{d}")
    dl = lambda a, b: 1.0 if a == b else 0.0  # noqa: E731
    return dl(i, k) * dl(j, l) + dl(i, l) * dl(j, k) - (2.0 / 3.0) * dl(i, j) * dl(k, l)


def realized_covariance(i, j, k, l, d):
    """Covariance actually produced by the sampler.

    A symmetric matrix with isotropic covariance projected onto its traceless
    part has trace weight 2/d; this equals ``covariance_oracle`` for d = 3.
    """
    for idx in (i, j, k, l):
        if not 1 <= idx <= d:
            raise ValueError(f"component index {idx} outside 1..{d}")
    dl = lambda a, b: 1.0 if a == b else 0.0  # noqa: E731
    return dl(i, k) * dl(j, l) + dl(i, l) * dl(j, k) - (2.0 / d) * dl(i, j) * dl(k, l)


def forcing_contraction(d):
    """Sum over components of E|P (i k . dxi)(k)|^2 / (|k|^2 dt).

    Closed form of the contraction of the noise covariance with the Leray
    projector; the traceless part drops out because P k = 0.
    """
    return float(d - 1)


@dataclass(frozen=True)
class RngStream:
    """Key of one noise draw: 64-bit seed, ensemble member and step counter."""

    seed: int
    member: int = 0
    step: int = 0

    def __post_init__(self):
        _philox.split_seed(self.seed)
        if not 0 <= self.member < 2**32 or not 0 <= self.step < 2**32:
            raise ValueError("member and step must fit in 32 bits")

    def at_step(self, step):
        return RngStream(self.seed, self.member, step)


@dataclass(frozen=True, eq=False)
class NoiseIncrement:
    """Brownian increments for every mode with |k|_inf < 2^m.

    ``entries`` has shape ``(d, d) + band.spectral_shape()`` where ``band`` is
    the compact grid of ``2^(m+1)`` points holding exactly the retained modes.
    """

    m: int
    dt: float
    entries: np.ndarray
    d: int

    @property
    def band(self):
        return TorusGrid(self.d, 2 ** (self.m + 1))

    def matrix(self, k):
        """The d x d increment at wavevector ``k`` (zero outside the cutoff)."""
        k = tuple(int(v) for v in k)
        if max(abs(v) for v in k) >= 2**self.m:
            return np.zeros((self.d, self.d), dtype=complex)
        if k[-1] < 0:
            return np.conj(self.matrix(tuple(-v for v in k)))
        n = 2 ** (self.m + 1)
        return self.entries[(slice(None), slice(None)) + tuple(v % n for v in k)].copy()


def _index_code(ks, d):
    if d == 2:
        bits, off = 16, 2**15
    else:
        bits, off = 10, 2**9
    if any(np.any(np.abs(k) >= off) for k in ks):
        raise ValueError("wavevector too large for the noise key")
    code = np.zeros(np.broadcast(*ks).shape, dtype=np.int64)
    for k in ks:
        code = (code << bits) | (k + off)
    return code


def _canonical(ks):
    """True for the representative of each +-k pair on the k_d = 0 plane."""
    d = len(ks)
    shape = np.broadcast(*ks).shape
    canon = np.zeros(shape, dtype=bool)
    decided = np.zeros(shape, dtype=bool)
    for k in reversed(ks):
        kk = np.broadcast_to(k, shape)
        canon |= ~decided & (kk > 0)
        decided |= kk != 0
    return canon | ~decided  # k = 0 is its own representative


def keyed_normals(ks, seed, member, step, count, domain):
    """``count`` unit complex Gaussians per wavevector with Z(-k) = conj(Z(k)).

    Returns shape ``broadcast_shape + (count,)``. At k = 0 the values are
    real with unit variance.
    """
    d = len(ks)
    shape = np.broadcast(*ks).shape
    ks = tuple(np.broadcast_to(k, shape) for k in ks)
    canon = _canonical(ks)
    rep = tuple(np.where(canon, k, -k) for k in ks)
    z = _philox.complex_normals(seed, domain, _index_code(rep, d), step, member, count)
    z = np.where(canon[..., None], z, np.conj(z))
    zero = np.all([k == 0 for k in ks], axis=0)
    return np.where(zero[..., None], np.sqrt(2.0) * z.real, z)


def raw_draws(ks, d, seed, member, step):
    """Unit complex Gaussian d x d matrices Y(k) with Y(-k) = conj(Y(k)).

    ``ks`` is a tuple of broadcastable integer arrays. The returned array has
    shape ``(d, d) + broadcast_shape``; every entry has E|Y|^2 = 1 except at
    k = 0, where the matrix is real.
    """
    z = keyed_normals(ks, seed, member, step, d * d, _philox.DOMAIN_PDE_NOISE)
    return np.moveaxis(z.reshape(z.shape[:-1] + (d, d)), (-2, -1), (0, 1))


def _symmetric_traceless(y, d, scale=1.0):
    # the last diagonal entry is set after scaling so the trace vanishes exactly
    s = (y + np.swapaxes(y, 0, 1)) * (scale / np.sqrt(2.0))
    a = s.copy()
    tr = sum(s[i, i] for i in range(d))
    for i in range(d - 1):
        a[i, i] = s[i, i] - tr / d
    a[d - 1, d - 1] = -sum(a[i, i] for i in range(d - 1))
    return a


class BandSampler:
    """Per-band constants reused across steps (keys, conjugation masks)."""

    def __init__(self, d, m):
        if m < 1:
            raise ValueError("cutoff exponent must be at least 1")
        self.d, self.m = d, m
        self.band = TorusGrid(d, 2 ** (m + 1))
        ks = tuple(np.broadcast_to(k, self.band.spectral_shape(True)) for k in self.band.wavenumbers(True))
        self._shape = ks[0].shape
        self._canon = _canonical(ks)[..., None]
        self._zero = np.all([k == 0 for k in ks], axis=0)[..., None]
        self._codes = _index_code(tuple(np.where(self._canon[..., 0], k, -k) for k in ks), d)
        self._mask = cutoff_mask(self.band, m)

    def draws(self, seed, member, step):
        d = self.d
        z = _philox.complex_normals(seed, _philox.DOMAIN_PDE_NOISE, self._codes, step, member, d * d)
        z = np.where(self._canon, z, np.conj(z))
        z = np.where(self._zero, np.sqrt(2.0) * z.real, z)
        return np.moveaxis(z.reshape(self._shape + (d, d)), (-2, -1), (0, 1))

    def increment(self, dt, rng):
        if dt <= 0:
            raise ValueError("dt must be positive")
        y = self.draws(rng.seed, rng.member, rng.step)
        a = _symmetric_traceless(y, self.d, np.sqrt(dt))
        return NoiseIncrement(self.m, dt, np.where(self._mask, a, 0), self.d)


def sample_increment(d, m, dt, rng, sampler=None):
    """Draw the truncated increment over one step of length ``dt``.

    Entries have E[dxi_ij(k) conj(dxi_kl(k))] = dt * realized_covariance and
    satisfy symmetry, zero trace and conjugacy exactly. Passing a cached
    ``BandSampler`` for ``(d, m)`` avoids rebuilding the mode keys.
    """
    sampler = sampler or BandSampler(d, m)
    if (sampler.d, sampler.m) != (d, m):
        raise ValueError("sampler was built for a different band")
    return sampler.increment(dt, rng)


def stochastic_forcing(inc, amplitude, grid):
    """amplitude * P div(pi_Lambda dxi), placed on ``grid``.

    Component i at mode k is amplitude * sum_jl P_il(k) (i k_j) dxi_lj(k).
    """
    if amplitude < 0:
        raise ValueError("amplitude must be nonnegative")
    if 2**inc.m > grid.n // 2:
        raise ValueError("noise cutoff exceeds the grid band")
    band = inc.band
    coeffs = _forcing_coeffs(inc.entries, band.wavenumbers(True), amplitude)
    coeffs = resample(coeffs, inc.d, band.n, grid.n, True, 2**inc.m)
    return SpectralField(grid, coeffs, True, inc.m, True)


def forcing_at(k, d, m, dt, rng, amplitude):
    """Stochastic forcing vector at a single wavevector, without the full band."""
    k = tuple(int(v) for v in k)
    if max(abs(v) for v in k) >= 2**m:
        return np.zeros(d, dtype=complex)
    ks = tuple(np.array([v], dtype=np.int64) for v in k)
    y = raw_draws(ks, d, rng.seed, rng.member, rng.step)
    a = _symmetric_traceless(y, d, np.sqrt(dt))
    return _forcing_coeffs(a, ks, amplitude)[:, 0]


def _forcing_coeffs(a, ks, amplitude):
    d = len(ks)
    div = np.stack([sum(1j * ks[j] * a[l, j] for j in range(d)) for l in range(d)])
    return amplitude * leray_coeffs(div, ks)
