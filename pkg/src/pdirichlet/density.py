"""Densities on the unit square: references, sampling, KDE and spline-KDE.

Three strictly positive reference densities drive the studies. Point clouds
are drawn from them by inverse-transform sampling on a fine lattice. Kernel
density estimates can be evaluated exactly (truncated sums) at arbitrary
points or on a full uniform mesh via binned FFT convolution; the
spline-smoothed variant fits a penalized tensor-product cubic B-spline to
KDE values on a square knot lattice. Every estimator is exposed as a
`DensityField` with consistent value/gradient evaluation and a positivity
floor, which is what the continuum solver consumes.

The eta-moment constant sigma (the weight appearing in front of local
continuum energies) is computed here as well, split into a closed-form
angular factor and a 1D radial integral.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.integrate import quad
from scipy.interpolate import BSpline
from scipy.signal import fftconvolve
from scipy.spatial import cKDTree
from scipy.special import gamma as _gamma

from .errors import SingularSystemError, ValidationError

__all__ = [
    "DensityField",
    "ReferenceDensity",
    "SampleSet",
    "Kernel",
    "SplineConfig",
    "KdeDensityField",
    "SplineDensityField",
    "reference_density",
    "sample_density",
    "kernel",
    "kde_evaluate",
    "kde_field",
    "spline_knots",
    "skde_fit",
    "density_gradient",
    "sigma_eta",
    "uniform_mesh",
]

# Normalization of the oscillatory reference density, frozen from adaptive
# quadrature of cos(6 pi ((x-1/2)^2 + (y-1/5)^2))/3 + 1/2 over the unit square.
_RHO3_NORM = 0.5031765765112621

_FLOOR_RATIO = 1.0e-3
_GAUSS_TRUNC = 5.0


def uniform_mesh(mesh_size: int) -> np.ndarray:
    """1D evaluation sites i/(D-1), i = 0..D-1, shared by all mesh dumps."""
    if mesh_size < 2:
        raise ValidationError(f"mesh size must be >= 2, got {mesh_size}")
    return np.linspace(0.0, 1.0, mesh_size)


def _as_points(points: np.ndarray) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValidationError(f"expected points of shape (m, 2), got {pts.shape}")
    return pts


def _check_unit_square(pts: np.ndarray) -> None:
    if pts.size and (pts.min() < -1e-12 or pts.max() > 1.0 + 1e-12):
        raise ValidationError("points fall outside the unit square")


class DensityField:
    """Common interface of every density representation.

    Subclasses implement `_values` and `_gradients`; this base layers the
    positivity floor on top (values clamped from below, gradients zeroed
    wherever the clamp is active) and provides mesh dumps.
    """

    kind: str = "field"
    floor: float = 0.0

    def _values(self, pts: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _gradients(self, pts: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def value_at(self, points: np.ndarray, clip: bool = True) -> np.ndarray:
        pts = _as_points(points)
        _check_unit_square(pts)
        vals = self._values(pts)
        if clip and self.floor > 0.0:
            vals = np.maximum(vals, self.floor)
        return vals

    def gradient_at(self, points: np.ndarray, clip: bool = True) -> np.ndarray:
        pts = _as_points(points)
        _check_unit_square(pts)
        grads = self._gradients(pts)
        if clip and self.floor > 0.0:
            raw = self._values(pts)
            grads = np.where((raw < self.floor)[:, None], 0.0, grads)
        return grads

    def on_mesh(self, mesh_size: int) -> np.ndarray:
        """Raw (unclamped) values on the uniform mesh, shape (D, D), rows y."""
        sites = uniform_mesh(mesh_size)
        xx, yy = np.meshgrid(sites, sites)
        pts = np.column_stack([xx.ravel(), yy.ravel()])
        return self.value_at(pts, clip=False).reshape(mesh_size, mesh_size)

    def gradient_on_mesh(self, mesh_size: int) -> np.ndarray:
        """Raw gradient on the uniform mesh, shape (D, D, 2)."""
        sites = uniform_mesh(mesh_size)
        xx, yy = np.meshgrid(sites, sites)
        pts = np.column_stack([xx.ravel(), yy.ravel()])
        return self.gradient_at(pts, clip=False).reshape(mesh_size, mesh_size, 2)


class ReferenceDensity(DensityField):
    """Analytic density on the unit square with exact gradient and sampler."""

    kind = "exact"

    def __init__(self, name, value_fn, grad_fn):
        self.name = name
        self._value_fn = value_fn
        self._grad_fn = grad_fn
        self._sampler_cache: dict[int, tuple] = {}

    def _values(self, pts):
        return self._value_fn(pts[:, 0], pts[:, 1])

    def _gradients(self, pts):
        gx, gy = self._grad_fn(pts[:, 0], pts[:, 1])
        return np.column_stack([np.broadcast_to(gx, pts[:, 0].shape),
                                np.broadcast_to(gy, pts[:, 0].shape)])

    def _sampler(self, grid_size):
        cached = self._sampler_cache.get(grid_size)
        if cached is not None:
            return cached
        s = np.linspace(0.0, 1.0, grid_size)
        xx, yy = np.meshgrid(s, s)
        v = self._value_fn(xx.ravel(), yy.ravel()).reshape(grid_size, grid_size)
        dx = s[1] - s[0]
        marg_x = np.trapezoid(v, dx=dx, axis=0)
        cdf_x = np.concatenate([[0.0], np.cumsum((marg_x[:-1] + marg_x[1:]) / 2.0 * dx)])
        cdf_x /= cdf_x[-1]
        cdf_y = np.zeros_like(v)
        cdf_y[1:, :] = np.cumsum((v[:-1, :] + v[1:, :]) / 2.0 * dx, axis=0)
        cdf_y /= cdf_y[-1, :]
        self._sampler_cache[grid_size] = (s, cdf_x, cdf_y)
        return self._sampler_cache[grid_size]


def _rho1(x, y):
    return np.ones_like(np.asarray(x, dtype=float))


def _rho1_grad(x, y):
    z = np.zeros_like(np.asarray(x, dtype=float))
    return z, z


def _rho2(x, y):
    return (x * y + 0.2) / 0.45


def _rho2_grad(x, y):
    return y / 0.45, x / 0.45


def _rho3(x, y):
    s = (x - 0.5) ** 2 + (y - 0.2) ** 2
    return (np.cos(6.0 * np.pi * s) / 3.0 + 0.5) / _RHO3_NORM


def _rho3_grad(x, y):
    s = (x - 0.5) ** 2 + (y - 0.2) ** 2
    common = -4.0 * np.pi * np.sin(6.0 * np.pi * s) / _RHO3_NORM
    return common * (x - 0.5), common * (y - 0.2)


_DENSITIES = {
    "rho1": (_rho1, _rho1_grad),
    "rho2": (_rho2, _rho2_grad),
    "rho3": (_rho3, _rho3_grad),
}


def reference_density(name: str) -> ReferenceDensity:
    """Look up one of the built-in densities: rho1 (uniform), rho2, rho3.

    All three are strictly positive and integrate to one over the unit
    square; rho2 is the tilted bilinear density, rho3 the oscillatory one.
    """
    if name not in _DENSITIES:
        raise ValidationError(f"unknown density {name!r}; choose from {sorted(_DENSITIES)}")
    value_fn, grad_fn = _DENSITIES[name]
    return ReferenceDensity(name, value_fn, grad_fn)


@dataclass(frozen=True)
class SampleSet:
    """Point cloud drawn from a named density, with its seed for provenance."""

    points: np.ndarray
    density: str
    seed: int

    @property
    def n(self) -> int:
        return self.points.shape[0]


def sample_density(
    density: ReferenceDensity, n: int, seed: int, grid_size: int = 1024
) -> SampleSet:
    """Draw n points by inverse-transform sampling on a uniform lattice.

    The marginal CDF in x and per-column conditional CDFs in y are tabulated
    on a ``grid_size`` lattice; draws invert them with binary search and
    linear interpolation. Identical (density, n, seed, grid_size) inputs
    reproduce the identical cloud.

    Parameters
    ----------
    density : ReferenceDensity
        Source density.
    n : int
        Number of points, >= 1.
    seed : int
        Seed for `numpy.random.default_rng`.
    grid_size : int, optional
        Lattice resolution for the tabulated CDFs (default 1024).

    Returns
    -------
    SampleSet
        Cloud of shape (n, 2) inside the unit square.
    """
    if n < 1:
        raise ValidationError(f"need n >= 1 samples, got {n}")
    if grid_size < 2:
        raise ValidationError(f"grid_size must be >= 2, got {grid_size}")
    sites, cdf_x, cdf_y = density._sampler(grid_size)
    rng = np.random.default_rng(seed)
    u = rng.random((n, 2))
    x = np.interp(u[:, 0], cdf_x, sites)
    col = np.clip(np.rint(x * (grid_size - 1)).astype(int), 0, grid_size - 1)
    u2 = u[:, 1]
    lo = np.zeros(n, dtype=int)
    hi = np.full(n, grid_size - 1, dtype=int)
    while int((hi - lo).max()) > 1:
        mid = (lo + hi) // 2
        below = cdf_y[mid, col] <= u2
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    f_lo = cdf_y[lo, col]
    f_hi = cdf_y[lo + 1, col]
    frac = (u2 - f_lo) / np.maximum(f_hi - f_lo, 1e-300)
    y = sites[lo] + frac * (sites[1] - sites[0])
    pts = np.column_stack([x, np.clip(y, 0.0, 1.0)])
    return SampleSet(points=pts, density=density.name, seed=seed)


@dataclass(frozen=True)
class Kernel:
    """Radial smoothing kernel, normalized to unit mass in the plane.

    ``support`` is the support radius in kernel units (before scaling by the
    bandwidth); ``truncation`` is the radius actually used in evaluations.
    For the Gaussian the two differ: it is treated as compactly supported at
    5 bandwidths, which discards less than 1e-5 of its mass.
    """

    name: str
    support: float
    truncation: float

    def value(self, sq: np.ndarray) -> np.ndarray:
        """Kernel value at squared radius ``sq`` (kernel units)."""
        sq = np.asarray(sq, dtype=float)
        if self.name == "gaussian":
            out = np.exp(-sq / 2.0) / (2.0 * np.pi)
            return np.where(sq <= self.truncation**2, out, 0.0)
        if self.name == "uniform-ball":
            return np.where(sq <= 1.0, 1.0 / np.pi, 0.0)
        if self.name == "epanechnikov":
            return np.where(sq <= 1.0, (2.0 / np.pi) * (1.0 - sq), 0.0)
        raise ValidationError(f"unknown kernel {self.name!r}")

    def grad_factor(self, sq: np.ndarray) -> np.ndarray:
        """Factor phi with grad K(v) = -v * phi(|v|^2), in kernel units."""
        sq = np.asarray(sq, dtype=float)
        if self.name == "gaussian":
            return self.value(sq)
        if self.name == "epanechnikov":
            return np.where(sq <= 1.0, 4.0 / np.pi, 0.0)
        raise ValidationError(f"kernel {self.name!r} has no usable gradient")


_KERNELS = {
    "gaussian": Kernel("gaussian", math.inf, _GAUSS_TRUNC),
    "uniform-ball": Kernel("uniform-ball", 1.0, 1.0),
    "epanechnikov": Kernel("epanechnikov", 1.0, 1.0),
}


def kernel(name: str) -> Kernel:
    if name not in _KERNELS:
        raise ValidationError(f"unknown kernel {name!r}; choose from {sorted(_KERNELS)}")
    return _KERNELS[name]


def _sample_array(samples) -> np.ndarray:
    pts = samples.points if isinstance(samples, SampleSet) else np.asarray(samples, float)
    return _as_points(pts)


def kde_evaluate(samples, h: float, points: np.ndarray, kernel_name: str = "gaussian") -> np.ndarray:
    """Exact kernel density estimate at arbitrary points.

    Computes (1/n) sum_i K_h(x - x_i) with K_h(u) = h^-2 K(u/h), truncating
    each kernel at ``truncation * h``. Small problems use dense distance
    blocks; large ones a KD-tree over the samples.

    Parameters
    ----------
    samples : SampleSet or ndarray
        Sample cloud, shape (n, 2).
    h : float
        Bandwidth, > 0.
    points : ndarray
        Evaluation points, shape (m, 2).
    kernel_name : str, optional
        One of gaussian (default), uniform-ball, epanechnikov.

    Returns
    -------
    ndarray, shape (m,)
    """
    if h <= 0:
        raise ValidationError(f"bandwidth must be positive, got {h}")
    pts = _as_points(points)
    data = _sample_array(samples)
    k = kernel(kernel_name)
    n = data.shape[0]
    radius = k.truncation * h
    scale = 1.0 / (n * h * h)
    if n * pts.shape[0] <= 8_000_000:
        out = np.empty(pts.shape[0])
        step = max(1, 8_000_000 // max(n, 1))
        for start in range(0, pts.shape[0], step):
            block = pts[start : start + step]
            d2 = ((block[:, None, :] - data[None, :, :]) ** 2).sum(axis=2)
            out[start : start + step] = k.value(d2 / (h * h)).sum(axis=1) * scale
        return out
    tree = cKDTree(data)
    out = np.zeros(pts.shape[0])
    neighborhoods = tree.query_ball_point(pts, radius)
    for i, idx in enumerate(neighborhoods):
        if idx:
            d2 = ((pts[i] - data[idx]) ** 2).sum(axis=1)
            out[i] = k.value(d2 / (h * h)).sum() * scale
    return out


def _kde_gradient(data: np.ndarray, h: float, pts: np.ndarray, k: Kernel) -> np.ndarray:
    n = data.shape[0]
    scale = 1.0 / (n * h**4)
    out = np.empty((pts.shape[0], 2))
    step = max(1, 8_000_000 // max(n, 1))
    for start in range(0, pts.shape[0], step):
        block = pts[start : start + step]
        diff = block[:, None, :] - data[None, :, :]
        sq = (diff**2).sum(axis=2) / (h * h)
        phi = k.grad_factor(sq)
        out[start : start + step] = -(diff * phi[:, :, None]).sum(axis=1) * scale
    return out


class KdeDensityField(DensityField):
    """Kernel density estimate as an evaluable field.

    Pointwise queries use the exact truncated sums; `on_mesh` switches to a
    binned FFT convolution with the same truncated kernel, which is what the
    large error studies rely on (the two paths are cross-checked in tests).
    The positivity floor is 1e-3 times the maximum found on a coarse mesh.
    """

    kind = "kde"

    def __init__(self, samples, h: float, kernel_name: str = "gaussian"):
        if h <= 0:
            raise ValidationError(f"bandwidth must be positive, got {h}")
        self.samples = _sample_array(samples)
        self.h = float(h)
        self.kernel = kernel(kernel_name)
        self.floor = _FLOOR_RATIO * float(self.on_mesh(256).max())

    def _values(self, pts):
        return kde_evaluate(self.samples, self.h, pts, self.kernel.name)

    def _gradients(self, pts):
        return _kde_gradient(self.samples, self.h, pts, self.kernel)

    def _binned_mass(self, mesh_size: int) -> np.ndarray:
        d = mesh_size
        delta = 1.0 / (d - 1)
        g = self.samples / delta
        i0 = np.minimum(np.floor(g[:, 0]).astype(int), d - 2)
        j0 = np.minimum(np.floor(g[:, 1]).astype(int), d - 2)
        fx = g[:, 0] - i0
        fy = g[:, 1] - j0
        w = 1.0 / self.samples.shape[0]
        mass = np.zeros((d, d))
        np.add.at(mass, (j0, i0), w * (1 - fx) * (1 - fy))
        np.add.at(mass, (j0, i0 + 1), w * fx * (1 - fy))
        np.add.at(mass, (j0 + 1, i0), w * (1 - fx) * fy)
        np.add.at(mass, (j0 + 1, i0 + 1), w * fx * fy)
        return mass

    def _kernel_stencil(self, mesh_size: int, gradient: bool = False):
        delta = 1.0 / (mesh_size - 1)
        radius = self.kernel.truncation * self.h
        span = int(np.ceil(radius / delta))
        offs = np.arange(-span, span + 1) * delta
        ox, oy = np.meshgrid(offs, offs)
        sq = (ox**2 + oy**2) / self.h**2
        if not gradient:
            return self.kernel.value(sq) / self.h**2
        phi = self.kernel.grad_factor(sq) / self.h**4
        return -ox * phi, -oy * phi

    def on_mesh(self, mesh_size: int) -> np.ndarray:
        mass = self._binned_mass(mesh_size)
        stencil = self._kernel_stencil(mesh_size)
        return fftconvolve(mass, stencil, mode="same")

    def gradient_on_mesh(self, mesh_size: int) -> np.ndarray:
        mass = self._binned_mass(mesh_size)
        sx, sy = self._kernel_stencil(mesh_size, gradient=True)
        gx = fftconvolve(mass, sx, mode="same")
        gy = fftconvolve(mass, sy, mode="same")
        return np.stack([gx, gy], axis=-1)


def kde_field(samples, h: float, kernel_name: str = "gaussian") -> KdeDensityField:
    """Wrap a sample cloud as an evaluable KDE field."""
    return KdeDensityField(samples, h, kernel_name)


@dataclass(frozen=True)
class SplineConfig:
    """Settings of the spline-smoothed KDE fit.

    ``num_knots`` is the total number of data sites T, required to be a
    perfect square (the sites form a uniform sqrt(T) x sqrt(T) lattice over
    the unit square). ``lam`` weights the squared second-derivative penalty;
    ``penalty_order`` is fixed at 2.
    """

    num_knots: int
    lam: float
    penalty_order: int = 2

    def __post_init__(self):
        g = int(round(math.sqrt(self.num_knots)))
        if g * g != self.num_knots:
            raise ValidationError(f"num_knots must be a perfect square, got {self.num_knots}")
        if g < 4:
            raise ValidationError(f"need at least a 4x4 knot lattice, got {g}x{g}")
        if self.lam < 0:
            raise ValidationError(f"lam must be >= 0, got {self.lam}")
        if self.penalty_order != 2:
            raise ValidationError("only a second-order roughness penalty is supported")

    @property
    def grid_size(self) -> int:
        return int(round(math.sqrt(self.num_knots)))


def spline_knots(config: SplineConfig) -> np.ndarray:
    """Data-site lattice of the fit, shape (T, 2), x fastest."""
    s = np.linspace(0.0, 1.0, config.grid_size)
    xx, yy = np.meshgrid(s, s)
    return np.column_stack([xx.ravel(), yy.ravel()])


def _open_knot_vector(sites: np.ndarray, degree: int = 3) -> np.ndarray:
    return np.concatenate([np.full(degree, sites[0]), sites, np.full(degree, sites[-1])])


def _derivative_matrix(t: np.ndarray, degree: int) -> sp.csr_matrix:
    # Coefficient map of spline differentiation: degree k on t -> degree k-1
    # on t[1:-1], d_j = k (c_{j+1} - c_j) / (t_{j+k+1} - t_{j+1}).
    n = len(t) - degree - 1
    denom = t[degree + 1 : degree + n] - t[1:n]
    rows = np.repeat(np.arange(n - 1), 2)
    cols = np.empty(2 * (n - 1), dtype=int)
    cols[0::2] = np.arange(n - 1)
    cols[1::2] = np.arange(1, n)
    vals = np.empty(2 * (n - 1))
    vals[0::2] = -degree / denom
    vals[1::2] = degree / denom
    return sp.csr_matrix((vals, (rows, cols)), shape=(n - 1, n))


def _bspline_gram(t: np.ndarray, degree: int, deriv: int) -> np.ndarray:
    # Exact Gram matrix of deriv-th basis derivatives via per-span Gauss
    # quadrature (degree+1 points: exact up to degree 2*degree products).
    n = len(t) - degree - 1
    chain = sp.identity(n, format="csr")
    tt, deg = t, degree
    for _ in range(deriv):
        chain = _derivative_matrix(tt, deg) @ chain
        tt, deg = tt[1:-1], deg - 1
    xg, wg = np.polynomial.legendre.leggauss(degree + 1)
    breaks = np.unique(t)
    xq, wq = [], []
    for a, b in zip(breaks[:-1], breaks[1:]):
        xq.append(0.5 * (a + b) + 0.5 * (b - a) * xg)
        wq.append(0.5 * (b - a) * wg)
    xq = np.concatenate(xq)
    wq = np.concatenate(wq)
    basis = BSpline.design_matrix(xq, tt, deg) @ chain
    return (basis.T @ sp.diags(wq) @ basis).toarray()


class SplineDensityField(DensityField):
    """Penalized tensor-product cubic B-spline fit of gridded density values."""

    kind = "skde"

    def __init__(self, knot_vector: np.ndarray, coefs: np.ndarray, config: SplineConfig):
        self.t = knot_vector
        self.coefs = coefs  # (n_basis_y, n_basis_x)
        self.config = config
        d1 = _derivative_matrix(self.t, 3)
        self._coefs_dx = coefs @ d1.T.toarray()
        self._coefs_dy = d1.toarray() @ coefs
        lattice_vals = self._values(spline_knots(config))
        self.floor = _FLOOR_RATIO * float(lattice_vals.max())

    def _design(self, u: np.ndarray, deriv: int = 0) -> sp.csr_matrix:
        t = self.t if deriv == 0 else self.t[1:-1]
        return BSpline.design_matrix(np.clip(u, 0.0, 1.0), t, 3 - deriv)

    def _combine(self, bx, by, coefs) -> np.ndarray:
        return np.asarray(by.multiply(bx @ coefs.T).sum(axis=1)).ravel()

    def _values(self, pts):
        out = np.empty(pts.shape[0])
        step = 1 << 16
        for s in range(0, pts.shape[0], step):
            blk = pts[s : s + step]
            bx = self._design(blk[:, 0])
            by = self._design(blk[:, 1])
            out[s : s + step] = self._combine(bx, by, self.coefs)
        return out

    def _gradients(self, pts):
        out = np.empty((pts.shape[0], 2))
        step = 1 << 16
        for s in range(0, pts.shape[0], step):
            blk = pts[s : s + step]
            bx3 = self._design(blk[:, 0])
            by3 = self._design(blk[:, 1])
            bx2 = self._design(blk[:, 0], deriv=1)
            by2 = self._design(blk[:, 1], deriv=1)
            out[s : s + step, 0] = self._combine(bx2, by3, self._coefs_dx)
            out[s : s + step, 1] = self._combine(bx3, by2, self._coefs_dy)
        return out


def skde_fit(values: np.ndarray, config: SplineConfig) -> SplineDensityField:
    """Fit the smoothing spline to density values on the knot lattice.

    Minimizes (1/T) sum_i (u(t_i) - f_i)^2 + lam * |Hessian u|^2_{L2} over
    tensor-product cubic B-splines on the lattice of `spline_knots`. The
    penalty annihilates affine fields, so affine data is reproduced exactly
    for every lam.

    Parameters
    ----------
    values : ndarray
        Density values at the knot lattice, shape (T,) in knot order or
        (sqrt(T), sqrt(T)) with rows indexing y.
    config : SplineConfig

    Returns
    -------
    SplineDensityField
    """
    g = config.grid_size
    f = np.asarray(values, dtype=float)
    if f.shape == (g, g):
        f = f.ravel()
    if f.shape != (g * g,):
        raise ValidationError(f"expected {g * g} values (or a {g}x{g} array), got {f.shape}")
    sites = np.linspace(0.0, 1.0, g)
    t = _open_knot_vector(sites)
    b1 = BSpline.design_matrix(sites, t, 3)
    a = sp.kron(b1, b1, format="csr")  # rows: y outer, x inner
    g0 = _bspline_gram(t, 3, 0)
    g1 = _bspline_gram(t, 3, 1)
    g2 = _bspline_gram(t, 3, 2)
    penalty = (
        sp.kron(sp.csr_matrix(g0), sp.csr_matrix(g2))
        + 2.0 * sp.kron(sp.csr_matrix(g1), sp.csr_matrix(g1))
        + sp.kron(sp.csr_matrix(g2), sp.csr_matrix(g0))
    )
    npts = g * g
    normal = (a.T @ a) / npts + config.lam * penalty
    rhs = a.T @ f / npts
    try:
        solve = spla.splu(sp.csc_matrix(normal))
        coefs = solve.solve(rhs)
    except RuntimeError as exc:
        raise SingularSystemError(f"spline normal equations are singular: {exc}") from exc
    if not np.all(np.isfinite(coefs)):
        raise SingularSystemError("spline fit produced non-finite coefficients")
    nb = len(t) - 4
    return SplineDensityField(t, coefs.reshape(nb, nb), config)


def density_gradient(field: DensityField, points: np.ndarray) -> np.ndarray:
    """Gradient of a density field at arbitrary points, shape (m, 2).

    Differentiates the field's own representation (analytic formula, kernel
    derivatives, or spline derivatives); zero wherever the positivity floor
    is active.
    """
    return field.gradient_at(points)


def sigma_eta(p: float, eta: str = "indicator", d: int = 2) -> float:
    """Directional p-th moment of a radial profile over d-space.

    Computes the integral of eta(|x|) |x . e1|^p, split into the closed-form
    angular factor 2 pi^((d-1)/2) Gamma((p+1)/2) / Gamma((p+d)/2) and a 1D
    radial integral of eta(r) r^(p+d-1).

    Parameters
    ----------
    p : float
        Exponent, >= 1.
    eta : str, optional
        Radial profile: indicator (default, unit ball) or gaussian
        (exp(-r^2/2), integrated over its full support).
    d : int, optional
        Ambient dimension, >= 1 (default 2).

    Returns
    -------
    float
    """
    if p < 1:
        raise ValidationError(f"exponent p must be >= 1, got {p}")
    if d < 1:
        raise ValidationError(f"dimension must be >= 1, got {d}")
    angular = 2.0 * np.pi ** ((d - 1) / 2.0) * _gamma((p + 1) / 2.0) / _gamma((p + d) / 2.0)
    if eta == "indicator":
        radial = 1.0 / (p + d)
    elif eta == "gaussian":
        radial, _ = quad(lambda r: np.exp(-r * r / 2.0) * r ** (p + d - 1), 0.0, np.inf)
    else:
        raise ValidationError(f"unknown profile {eta!r}; choose indicator or gaussian")
    return float(angular * radial)
