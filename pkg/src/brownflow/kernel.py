"""Mollifier, its square-root scaling and the two-point covariance kernel.

The bump is ``phi(u) = c * exp(-1 / (1 - |u/r|^2))`` inside the ball of
radius ``r``. The flow is driven through ``phi_eps(u) = eps^(-d/2) *
phi(u/eps)^(1/2)``, so ``int phi_eps^2 = int phi = 1`` for every ``eps``.

In one dimension the covariance felt by two particles at displacement ``x``
is ``g_eps(x) = int phi_eps(x + q) phi_eps(q) dq``. A change of variables
gives ``g_eps(x) = g_1(x / eps)``, so a single table of the unit-scale
kernel serves every ``eps``.
"""
from __future__ import annotations

import functools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicSpline

__all__ = [
    "QuadratureError",
    "MollifierKernel",
    "CovarianceKernel",
    "quad",
    "make_mollifier",
    "phi_eps",
    "g_eps",
    "diffusion_matrix",
]

TABLE_INTERVALS = 4096
_TABLE_TRAPEZOID_NODES = 512


class QuadratureError(RuntimeError):
    """Raised when adaptive quadrature misses its relative tolerance."""

    def __init__(self, message: str, achieved: float):
        super().__init__(f"{message} (achieved relative error {achieved:.3g})")
        self.achieved = achieved


def quad(func, a: float, b: float, rtol: float = 1e-10, atol: float = 1e-15) -> float:
    """Adaptive Gauss-Kronrod quadrature of a scalar function on ``[a, b]``."""
    if b <= a:
        return 0.0
    with warnings.catch_warnings():
        # convergence is judged below from the returned error estimate
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        value, abserr = integrate.quad(func, a, b, epsabs=atol, epsrel=rtol, limit=500)
    if abserr > max(rtol * abs(value), atol):
        raise QuadratureError(
            f"quadrature on [{a}, {b}] did not converge", abserr / max(abs(value), atol)
        )
    return value


def _unit_sphere_area(d: int) -> float:
    return 2.0 * math.pi ** (d / 2) / math.gamma(d / 2)


def _norm(u, d: int) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if d == 1:
        return np.abs(u)
    if u.shape[-1] != d:
        raise ValueError(f"points must have trailing dimension {d}, got shape {u.shape}")
    return np.linalg.norm(u, axis=-1)


@dataclass(frozen=True)
class MollifierKernel:
    """Spherically symmetric C^infinity bump of unit mass.

    Parameters
    ----------
    dim : int
        Dimension of the ambient space.
    radius : float
        Support radius; the bump vanishes for ``|u| >= radius``.
    norm : float
        Normalization constant ``c``.
    rtol : float
        Relative tolerance used by every quadrature on this kernel.
    """

    dim: int
    radius: float
    norm: float
    rtol: float = 1e-10

    def profile(self, rho) -> np.ndarray:
        """Radial profile ``phi`` as a function of ``|u|``."""
        z = (np.asarray(rho, dtype=float) / self.radius) ** 2
        out = np.zeros_like(z)
        inside = z < 1.0
        out[inside] = self.norm * np.exp(-1.0 / (1.0 - z[inside]))
        return out

    def sqrt_profile(self, rho) -> np.ndarray:
        """``phi(|u|) ** 0.5`` evaluated without a square root of an underflowed value."""
        z = (np.asarray(rho, dtype=float) / self.radius) ** 2
        out = np.zeros_like(z)
        inside = z < 1.0
        out[inside] = math.sqrt(self.norm) * np.exp(-0.5 / (1.0 - z[inside]))
        return out

    def __call__(self, u) -> np.ndarray:
        return self.profile(_norm(u, self.dim))

    def radial_integral(self, func) -> float:
        """Integral over R^d of ``func(|u|)`` restricted to the support ball."""
        area = _unit_sphere_area(self.dim)
        d = self.dim
        return area * quad(lambda rho: rho ** (d - 1) * func(rho), 0.0, self.radius, self.rtol)

    def mass(self) -> float:
        return self.radial_integral(lambda rho: float(self.profile(rho)))


def make_mollifier(d: int = 1, r: float = 1.0, rtol: float = 1e-10) -> MollifierKernel:
    """Build the unit-mass bump in dimension ``d`` with support radius ``r``."""
    if int(d) != d or d < 1:
        raise ValueError(f"dimension must be a positive integer, got {d}")
    if not r > 0:
        raise ValueError(f"support radius must be positive, got {r}")
    unnormalized = MollifierKernel(dim=int(d), radius=float(r), norm=1.0, rtol=rtol)
    mass = unnormalized.mass()
    return MollifierKernel(dim=int(d), radius=float(r), norm=1.0 / mass, rtol=rtol)


def phi_eps(k: MollifierKernel, eps: float, u) -> np.ndarray:
    """Scaled square-root kernel ``eps^(-d/2) * phi(u / eps)^(1/2)``."""
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    rho = _norm(u, k.dim)
    return eps ** (-k.dim / 2) * k.sqrt_profile(rho / eps)


@functools.lru_cache(maxsize=8)
def _unit_table(radius: float, norm: float) -> tuple[np.ndarray, np.ndarray]:
    # g_1 on [-2r, 2r]; the integrand vanishes with all derivatives at the
    # ends of the overlap, so the trapezoid rule converges super-algebraically.
    k = MollifierKernel(dim=1, radius=radius, norm=norm)
    y = np.linspace(-2.0 * radius, 2.0 * radius, TABLE_INTERVALS + 1)
    lo = np.maximum(-radius, -radius - y)
    hi = np.minimum(radius, radius - y)
    s = lo[:, None] + (hi - lo)[:, None] * np.linspace(0.0, 1.0, _TABLE_TRAPEZOID_NODES + 1)
    vals = k.sqrt_profile(np.abs(s)) * k.sqrt_profile(np.abs(s + y[:, None]))
    g = np.trapezoid(vals, s, axis=1)
    g[0] = g[-1] = 0.0
    # the centre node is int phi = 1 up to ~1e-13; pin it so coincident
    # particles get an exactly rank-one diffusion matrix
    g /= g[TABLE_INTERVALS // 2]
    return y, g


@dataclass(frozen=True)
class CovarianceKernel:
    """Two-point covariance ``g_eps`` of the one-dimensional flow.

    With ``tabulated=True`` evaluations go through a cubic spline of the
    unit-scale kernel on 4097 nodes over ``[-2r, 2r]``; otherwise every
    value is a fresh adaptive quadrature.
    """

    mollifier: MollifierKernel
    eps: float
    tabulated: bool = True
    _spline: CubicSpline | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.mollifier.dim != 1:
            raise ValueError("the covariance kernel is defined for d=1 only")
        if not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if self.tabulated:
            y, g = _unit_table(self.mollifier.radius, self.mollifier.norm)
            object.__setattr__(self, "_spline", CubicSpline(y, g))

    @property
    def support(self) -> float:
        """Displacements at or beyond this value decorrelate exactly."""
        return 2.0 * self.eps * self.mollifier.radius

    def direct(self, x: float) -> float:
        x = float(x)
        if abs(x) >= self.support:
            return 0.0
        k, eps = self.mollifier, self.eps
        a = eps * k.radius
        lo, hi = max(-a, -a - x), min(a, a - x)

        def integrand(q):
            return float(phi_eps(k, eps, q + x) * phi_eps(k, eps, q))

        return quad(integrand, lo, hi, k.rtol)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if not self.tabulated:
            return np.vectorize(self.direct, otypes=[float])(x)
        y = np.abs(x) / self.eps
        out = np.zeros_like(y)
        inside = y < 2.0 * self.mollifier.radius
        # spline overshoot near the peak is O(1e-13); keep the kernel's bounds
        out[inside] = np.clip(self._spline(y[inside]), 0.0, 1.0)
        return out


def g_eps(ck: CovarianceKernel, x) -> np.ndarray:
    """Covariance ``g_eps(x)``; exactly zero for ``|x| >= 2 eps r``."""
    return ck(x)


def diffusion_matrix(ck: CovarianceKernel, x) -> np.ndarray:
    """n-point diffusion matrix ``A_ij = g_eps(x_i - x_j)``.

    Accepts positions of shape ``(n,)`` or a batch ``(..., n)``. The
    diagonal is set to exactly one.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 0 or x.shape[-1] < 1:
        raise ValueError("need at least one point")
    n = x.shape[-1]
    a = ck(x[..., :, None] - x[..., None, :])
    idx = np.arange(n)
    a[..., idx, idx] = 1.0
    return a
