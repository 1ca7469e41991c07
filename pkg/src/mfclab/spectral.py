"""Fourier-side calculus on the flat torus T^d = [0,1)^d.

Probability measures are carried by their Fourier coefficients

    c_k = integral of exp(+i 2 pi k.x) dm(x),   k in Z^d, |k|_inf <= K,

so that a band-limited density reconstructs as f(x) = sum_k c_k exp(-i 2 pi k.x).
With this pairing, ``numpy.fft.ifftn`` of grid samples returns exactly the
coefficients above (indexed mod n), and ``numpy.fft.fftn`` of an embedded
coefficient array evaluates the series on the grid.

The dual-Sobolev machinery uses the anisotropic weight

    w(k) = 1 + sum_i |k_i|^(2s),

with <p, q>_{-s} = sum_k p_k conj(q_k) / w(k) and the dual maps
q* = q/w (H^{-s} -> H^s) and f* = f*w (H^s -> H^{-s}).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyPointSet,
    NegativeDensity,
    NegativeTime,
    NotNormalized,
    ResolutionTooLow,
)

__all__ = [
    "GridField",
    "SobolevWeight",
    "SpectralMeasure",
    "SpectralVector",
    "from_density",
    "to_density",
    "empirical",
    "hs_inner",
    "hs_norm",
    "dual_map",
    "dual_coeffs",
    "dual_embed",
    "heat_multiplier",
    "expectation",
    "eval_modes",
    "grid_nodes",
    "grid_gradient",
    "grid_laplacian",
    "regrid",
    "mode_values",
    "clip_and_renormalize",
    "lebesgue",
    "random_measure",
]

DEFAULT_TOL_NEG = 1e-8
_MEAN_TOL = 1e-10


# ---------------------------------------------------------------------------
# mode bookkeeping
# ---------------------------------------------------------------------------

def mode_values(cutoff: int) -> np.ndarray:
    """1D mode indices [-K, ..., K] matching coefficient-array axes."""
    return np.arange(-cutoff, cutoff + 1)


def _mode_mesh(dim: int, cutoff: int) -> list[np.ndarray]:
    k = mode_values(cutoff)
    return list(np.meshgrid(*([k] * dim), indexing="ij"))


def _ksq(dim: int, cutoff: int) -> np.ndarray:
    mesh = _mode_mesh(dim, cutoff)
    return sum(m.astype(float) ** 2 for m in mesh)


def _center(coeffs: np.ndarray) -> tuple:
    return tuple(s // 2 for s in coeffs.shape)


def _embed(coeffs: np.ndarray, cutoff: int, n: int) -> np.ndarray:
    """Place coefficients c_k at FFT index (k mod n) in an n^d array."""
    d = coeffs.ndim
    out = np.zeros((n,) * d, dtype=complex)
    idx = np.ix_(*[mode_values(cutoff) % n] * d)
    out[idx] = coeffs
    return out


def _extract(full: np.ndarray, cutoff: int) -> np.ndarray:
    """Read coefficients c_k, |k|_inf <= K, from an FFT-indexed array."""
    n = full.shape[0]
    d = full.ndim
    idx = np.ix_(*[mode_values(cutoff) % n] * d)
    return full[idx].copy()


def _hermitian_project(coeffs: np.ndarray) -> np.ndarray:
    """Average c with conj(c[-k]) so c_{-k} = conj(c_k) holds exactly."""
    flipped = np.conj(coeffs[(slice(None, None, -1),) * coeffs.ndim])
    return 0.5 * (coeffs + flipped)


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridField:
    """Real-valued function sampled at the uniform grid nodes j/n.

    ``values`` has shape (n,)*dim. Scalar fields only; vector fields are
    passed around as tuples/arrays of GridField-compatible value arrays.
    """

    dim: int
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != self.dim:
            raise DimensionMismatch(
                f"values array has {vals.ndim} axes, expected dim={self.dim}"
            )
        if any(s != vals.shape[0] for s in vals.shape):
            raise DimensionMismatch("grid must be uniform along all axes")
        if vals.shape[0] < 4:
            raise ResolutionTooLow("GridField needs resolution >= 4")
        if not np.all(np.isfinite(vals)):
            raise ValueError("GridField values must be finite")
        object.__setattr__(self, "values", _freeze(vals))

    @property
    def resolution(self) -> int:
        return self.values.shape[0]

    def mean(self) -> float:
        return float(self.values.mean())


@dataclass(frozen=True)
class SobolevWeight:
    """Anisotropic Sobolev weight w(k) = 1 + sum_i |k_i|^(2s)."""

    s: float

    def __post_init__(self):
        if self.s < 0:
            raise ValueError("Sobolev order s must be nonnegative")

    def weights(self, dim: int, cutoff: int) -> np.ndarray:
        mesh = _mode_mesh(dim, cutoff)
        w = np.ones((2 * cutoff + 1,) * dim)
        for m in mesh:
            w = w + np.abs(m.astype(float)) ** (2.0 * self.s)
        return w


@dataclass(frozen=True)
class SpectralVector:
    """Signed spectral object: coefficients on |k|_inf <= K, no mass constraint.

    Carrier for differences of measures, gradients, and other H^{-s} vectors.
    Hermitian symmetry is enforced so the object represents a real
    distribution.
    """

    dim: int
    cutoff: int
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        expected = (2 * self.cutoff + 1,) * self.dim
        if c.shape != expected:
            raise DimensionMismatch(f"coeffs shape {c.shape} != {expected}")
        object.__setattr__(self, "coeffs", _freeze(_hermitian_project(c)))

    def __sub__(self, other):
        _check_compatible(self, other)
        return SpectralVector(self.dim, self.cutoff, self.coeffs - other.coeffs)

    def __add__(self, other):
        _check_compatible(self, other)
        return SpectralVector(self.dim, self.cutoff, self.coeffs + other.coeffs)

    def __mul__(self, scalar: float):
        return SpectralVector(self.dim, self.cutoff, self.coeffs * float(scalar))

    __rmul__ = __mul__


@dataclass(frozen=True)
class SpectralMeasure:
    """Probability measure on T^d represented by truncated Fourier coefficients.

    Invariants enforced at construction: c_0 = 1 exactly and Hermitian
    symmetry c_{-k} = conj(c_k) exactly (by projection). Approximate
    nonnegativity of the reconstructed density is a property of
    density-backed measures; check it explicitly with
    :meth:`density_min` / :func:`from_density`. Empirical measures of point
    sets satisfy it as measures but not as truncated reconstructions
    (Dirichlet-kernel dips), so no blanket constructor check is applied.
    """

    dim: int
    cutoff: int
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        expected = (2 * self.cutoff + 1,) * self.dim
        if c.shape != expected:
            raise DimensionMismatch(f"coeffs shape {c.shape} != {expected}")
        c = _hermitian_project(c)
        c0 = c[_center(c)]
        if abs(c0 - 1.0) > 1e-6:
            raise NotNormalized(f"c_0 = {c0}, expected 1")
        c[_center(c)] = 1.0
        object.__setattr__(self, "coeffs", _freeze(c))

    def __sub__(self, other) -> SpectralVector:
        _check_compatible(self, other)
        return SpectralVector(self.dim, self.cutoff, self.coeffs - other.coeffs)

    def density_min(self, oversample: int = 4) -> float:
        """Min of the reconstructed density on an oversample*K-per-axis grid."""
        n = max(oversample * self.cutoff, 2 * self.cutoff + 1, 8)
        return float(to_density(self, n).values.min())

    def mix(self, other: "SpectralMeasure", lam: float) -> "SpectralMeasure":
        """Convex combination (1-lam)*self + lam*other."""
        _check_compatible(self, other)
        return SpectralMeasure(
            self.dim, self.cutoff,
            (1.0 - lam) * self.coeffs + lam * other.coeffs,
        )


SpectralObject = Union[SpectralMeasure, SpectralVector]


def _check_compatible(a, b) -> None:
    if a.dim != b.dim or a.cutoff != b.cutoff:
        raise DimensionMismatch(
            f"(dim={a.dim}, K={a.cutoff}) vs (dim={b.dim}, K={b.cutoff}); "
            "binary spectral operations require matching dim and cutoff"
        )


def lebesgue(dim: int, cutoff: int) -> SpectralMeasure:
    """Uniform measure: c_0 = 1, all other coefficients zero."""
    c = np.zeros((2 * cutoff + 1,) * dim, dtype=complex)
    c[(cutoff,) * dim] = 1.0
    return SpectralMeasure(dim, cutoff, c)


# ---------------------------------------------------------------------------
# transforms
# ---------------------------------------------------------------------------

def from_density(
    f: GridField,
    cutoff: int,
    tol_neg: float = DEFAULT_TOL_NEG,
) -> SpectralMeasure:
    """Truncated Fourier transform of a nonnegative unit-mass grid density."""
    vals = f.values
    if vals.min() < -tol_neg:
        raise NegativeDensity(
            f"min(f) = {vals.min():.3e} < -tol_neg = {-tol_neg:.3e}"
        )
    mean = vals.mean()
    if abs(mean - 1.0) > _MEAN_TOL:
        raise NotNormalized(f"mean(f) = {mean!r}, expected 1 within {_MEAN_TOL}")
    if f.resolution < 2 * cutoff + 1:
        raise ResolutionTooLow(
            f"resolution {f.resolution} < 2K+1 = {2 * cutoff + 1}"
        )
    full = np.fft.ifftn(vals)
    c = _extract(full, cutoff)
    c[_center(c)] = 1.0
    return SpectralMeasure(f.dim, cutoff, c)


def to_density(m: SpectralObject, resolution: int) -> GridField:
    """Evaluate the truncated Fourier series on a resolution^d grid."""
    if resolution < 2 * m.cutoff + 1:
        raise ResolutionTooLow(
            f"resolution {resolution} < 2K+1 = {2 * m.cutoff + 1}"
        )
    full = _embed(m.coeffs, m.cutoff, resolution)
    vals = np.fft.fftn(full)
    return GridField(m.dim, vals.real)


def empirical(points: Sequence, cutoff: int) -> SpectralMeasure:
    """Empirical measure (1/N) sum_j delta_{x_j}: c_k = mean_j e^{i2pi k.x_j}."""
    pts = np.asarray(points, dtype=float)
    if pts.size == 0:
        raise EmptyPointSet("empirical measure needs at least one point")
    if pts.ndim == 1:
        pts = pts[:, None]  # a flat array is N points on the circle
    n_pts, d = pts.shape
    pts = np.mod(pts, 1.0)
    k = mode_values(cutoff)
    # per-axis phase factors, shape (2K+1, N); tensor-contract across axes
    phases = [np.exp(2j * np.pi * np.outer(k, pts[:, i])) for i in range(d)]
    acc = phases[0]
    for p in phases[1:]:
        acc = acc[..., np.newaxis, :] * p
    c = acc.mean(axis=-1)
    return SpectralMeasure(d, cutoff, c)


def eval_modes(coeffs: np.ndarray, cutoff: int, points: np.ndarray) -> np.ndarray:
    """Evaluate f(x) = sum_k c_k e^{-i2pi k.x} at arbitrary points.

    Exact for band-limited fields; used for particle feedback and projection
    checks. ``points`` has shape (N, d); returns real array of shape (N,).
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    d = pts.shape[1]
    k = mode_values(cutoff)
    acc = np.exp(-2j * np.pi * np.outer(k, pts[:, 0]))
    for i in range(1, d):
        acc = acc[..., np.newaxis, :] * np.exp(-2j * np.pi * np.outer(k, pts[:, i]))
    out = np.tensordot(coeffs, acc, axes=(tuple(range(d)), tuple(range(d))))
    return out.real


# ---------------------------------------------------------------------------
# H^s / H^{-s} calculus
# ---------------------------------------------------------------------------

def hs_inner(p: SpectralObject, q: SpectralObject, weight: SobolevWeight) -> float:
    """Dual-Sobolev inner product <p, q>_{-s} = sum_k p_k conj(q_k)/w(k)."""
    _check_compatible(p, q)
    w = weight.weights(p.dim, p.cutoff)
    val = np.sum(p.coeffs * np.conj(q.coeffs) / w)
    return float(val.real)


def hs_norm(q: SpectralObject, weight: SobolevWeight) -> float:
    """H^{-s} norm sqrt(<q, q>_{-s})."""
    return float(np.sqrt(max(hs_inner(q, q, weight), 0.0)))


def dual_coeffs(q: SpectralObject, weight: SobolevWeight) -> np.ndarray:
    """Coefficients of q* in H^s: q_k / w(k)."""
    w = weight.weights(q.dim, q.cutoff)
    return q.coeffs / w


def dual_map(q: SpectralObject, weight: SobolevWeight,
             resolution: int | None = None) -> GridField:
    """H^{-s} -> H^s dual element q* with coefficients q_k/w(k), on a grid."""
    res = resolution if resolution is not None else max(2 * q.cutoff + 2, 8)
    vec = SpectralVector(q.dim, q.cutoff, dual_coeffs(q, weight))
    return to_density(vec, res)


def dual_embed(f_coeffs: np.ndarray, dim: int, cutoff: int,
               weight: SobolevWeight) -> SpectralVector:
    """H^s -> H^{-s} dual element f* with coefficients w(k)*f_k.

    This is the direction used by the sup-convolution fixed point: the flat
    derivative (an H^s function) is mapped to the H^{-s} update direction.
    """
    w = weight.weights(dim, cutoff)
    return SpectralVector(dim, cutoff, np.asarray(f_coeffs, dtype=complex) * w)


def heat_multiplier(obj, t: float):
    """Apply the heat semigroup e^{t Laplacian}: mode k scaled by e^{-4pi^2|k|^2 t}.

    Accepts SpectralMeasure, SpectralVector, or GridField and returns the
    same type. Matches the generator of dX = ... + sqrt(2) dW.
    """
    if t < 0:
        raise NegativeTime(f"heat time t = {t} < 0")
    if isinstance(obj, GridField):
        n = obj.resolution
        freqs = [np.fft.fftfreq(n, d=1.0 / n) for _ in range(obj.dim)]
        mesh = np.meshgrid(*freqs, indexing="ij")
        ksq = sum(m ** 2 for m in mesh)
        damped = np.fft.ifftn(obj.values) * np.exp(-4.0 * np.pi ** 2 * ksq * t)
        return GridField(obj.dim, np.fft.fftn(damped).real)
    factor = np.exp(-4.0 * np.pi ** 2 * _ksq(obj.dim, obj.cutoff) * t)
    cls = type(obj)
    return cls(obj.dim, obj.cutoff, obj.coeffs * factor)


def expectation(m: SpectralObject, g: GridField) -> float:
    """Quadrature of integral g dm by the torus rectangle rule.

    Exact whenever g is band-limited below the grid Nyquist and the measure's
    cutoff fits the grid; this rectangle rule is the package-wide
    quadrature convention.
    """
    dens = to_density(m, g.resolution)
    return float((dens.values * g.values).mean())


# ---------------------------------------------------------------------------
# grid calculus helpers
# ---------------------------------------------------------------------------

def grid_nodes(dim: int, resolution: int) -> np.ndarray:
    """Grid node coordinates, shape (resolution^dim, dim)."""
    axis = np.arange(resolution) / resolution
    mesh = np.meshgrid(*([axis] * dim), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def _spectral_diff(values: np.ndarray, axis: int) -> np.ndarray:
    n = values.shape[0]
    freqs = np.fft.fftfreq(n, d=1.0 / n)
    shape = [1] * values.ndim
    shape[axis] = n
    k = freqs.reshape(shape)
    # series f = sum c_k e^{-2pi i k.x}  =>  df/dx_axis carries factor -2pi i k
    return np.fft.fftn(np.fft.ifftn(values) * (-2j * np.pi * k)).real


def grid_gradient(f: GridField) -> np.ndarray:
    """Spectral gradient; returns array of shape (dim, n, ..., n)."""
    return np.stack([_spectral_diff(f.values, ax) for ax in range(f.dim)])


def grid_laplacian(f: GridField) -> GridField:
    n = f.resolution
    freqs = [np.fft.fftfreq(n, d=1.0 / n) for _ in range(f.dim)]
    mesh = np.meshgrid(*freqs, indexing="ij")
    ksq = sum(m ** 2 for m in mesh)
    vals = np.fft.fftn(np.fft.ifftn(f.values) * (-4.0 * np.pi ** 2 * ksq)).real
    return GridField(f.dim, vals)


def regrid(f: GridField, resolution: int) -> GridField:
    """Exact spectral resampling of a band-limited grid field."""
    if resolution == f.resolution:
        return f
    coeffs = np.fft.ifftn(f.values)
    K = (f.resolution - 1) // 2
    if resolution < 2 * K + 1:
        K = (resolution - 1) // 2  # content above new Nyquist is dropped
    c = _extract(coeffs, K)
    return GridField(f.dim, np.fft.fftn(_embed(c, K, resolution)).real)


def clip_and_renormalize(f: GridField) -> GridField:
    """Explicit repair: clip negative density values to 0 and rescale to mass 1.

    Never applied implicitly by any operation in this package.
    """
    vals = np.maximum(f.values, 0.0)
    mean = vals.mean()
    if mean <= 0:
        raise NegativeDensity("density is nonpositive everywhere; cannot repair")
    return GridField(f.dim, vals / mean)


def random_measure(dim: int, cutoff: int, rng: np.random.Generator,
                   roughness: float = 0.8) -> SpectralMeasure:
    """Random admissible measure: 1 plus a rescaled mean-zero trig polynomial.

    The perturbation amplitude is chosen so the density stays bounded below
    by 1 - roughness > 0 pointwise; no clipping is involved, so the result
    is a genuine smooth probability density. Deterministic given ``rng``.
    """
    shape = (2 * cutoff + 1,) * dim
    c = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    k = mode_values(cutoff).astype(float)
    mesh = np.meshgrid(*([k] * dim), indexing="ij")
    decay = np.ones(shape)
    for m in mesh:
        decay = decay / (1.0 + m ** 2)
    c = _hermitian_project(c * decay)
    c[(cutoff,) * dim] = 1.0
    base = SpectralMeasure(dim, cutoff, c)
    n = max(4 * cutoff, 2 * cutoff + 1, 16)
    low = to_density(base, n).values.min()
    if low >= 1.0 - 1e-9:
        return base
    lam = 1.0 - min(1.0, roughness / max(1.0 - low, 1e-12))
    return base.mix(lebesgue(dim, cutoff), lam)
