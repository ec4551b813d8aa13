"""Standard tractor bundle on radial geometries.

A section of the rank-(n+2) bundle is stored per metric as a triple
(rho, omega, sigma); for radial data the vector slot reduces to its
arclength radial component omega_r.  The bundle carries the Lorentzian
metric h(I, I) = 2 sigma rho + g(omega, omega) and the canonical
connection

    nabla_x I = (nabla_x rho - P(x, omega),
                 nabla_x omega + sigma P(x) + rho x,
                 nabla_x sigma - g(omega, x)),

with P the Schouten tensor.  The splitting operator
L sigma = (-(Delta sigma + J sigma)/n, grad sigma, sigma) turns a density
into a tractor; L sigma is parallel exactly when sigma^{-2} g is Einstein.

Two backends coexist.  The finite-difference backend covers radial tractors
on any arclength geometry (conformally rescaled geometries must be routed
through their arclength representative rather than re-metrized).  The flat
closed-form backend covers densities alpha + beta.x + gamma |x|^2 on
Euclidean space, including the non-radial parallel basis elements, through
QuadraticDensity.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .errors import DomainError, GridMismatchError, ParameterError
from .geometry import (
    RadialField,
    WarpedGeometry,
    interior_mask,
    laplacian,
    ricci_eigenvalues,
    scalar_curvature,
)

__all__ = [
    "Tractor",
    "TractorDerivative",
    "QuadraticDensity",
    "canonical_tractor",
    "schouten",
    "split",
    "tmetric",
    "quad_tractor_norm",
    "quad_tractor_inner",
    "tderiv",
    "parallel_residual",
    "grad_norm_sq",
]


@dataclass(eq=False)
class Tractor:
    """Radial tractor (rho, omega_r, sigma) over an arclength geometry."""

    geom: WarpedGeometry
    rho: RadialField
    omega_r: RadialField
    sigma: RadialField

    def __post_init__(self):
        grid = self.geom.grid
        for f in (self.rho, self.omega_r, self.sigma):
            if f.grid is not grid:
                raise GridMismatchError("tractor components live on different grids")


@dataclass(eq=False)
class TractorDerivative:
    """nabla I of a radial tractor.

    `radial` holds nabla_{d/dt} I.  For unit tangential e, diagonality of the
    Schouten tensor and the warped-product identity nabla_e d/dt = (f'/f) e
    collapse nabla_e I to (0, c e, 0); `tangential_coeff` is that scalar c,
    and the vanishing of the rho- and sigma-slots is structural.
    """

    radial: Tractor
    tangential_coeff: RadialField


def _require_arclength(geom: WarpedGeometry):
    if not geom.is_arclength:
        raise DomainError(
            "tractor operations need an arclength radial coordinate; "
            "route conformally rescaled geometries through their base scale"
        )


def canonical_tractor(geom: WarpedGeometry) -> Tractor:
    """The canonical tractor X = (1, 0, 0)."""
    grid = geom.grid
    return Tractor(
        geom,
        RadialField.constant(grid, 1.0),
        RadialField.constant(grid, 0.0),
        RadialField.constant(grid, 0.0),
    )


def schouten(geom: WarpedGeometry) -> Tuple[RadialField, RadialField, RadialField]:
    """Schouten eigenvalues (radial, tangential) and the trace J = R/(2(n-1))."""
    n = geom.n
    if n < 3:
        raise ParameterError("Schouten tensor needs n >= 3")
    ric_rad, ric_tan = ricci_eigenvalues(geom)
    R = scalar_curvature(geom).values
    half_trace = R / (2.0 * (n - 1))
    p_rad = (ric_rad.values - half_trace) / (n - 2)
    p_tan = (ric_tan.values - half_trace) / (n - 2)
    grid = geom.grid
    return (
        RadialField(grid, p_rad),
        RadialField(grid, p_tan),
        RadialField(grid, half_trace),
    )


def split(geom: WarpedGeometry, sigma: RadialField) -> Tractor:
    """BGG splitting L sigma = (-(Delta sigma + J sigma)/n, sigma', sigma)."""
    _require_arclength(geom)
    if sigma.grid is not geom.grid:
        raise GridMismatchError("density lives on a different grid")
    _, _, J = schouten(geom)
    lap = laplacian(geom, sigma)
    rho = -(lap.values + J.values * sigma.values) / geom.n
    omega = geom.grid.d1(sigma.values)
    grid = geom.grid
    return Tractor(geom, RadialField(grid, rho), RadialField(grid, omega), sigma)


def tmetric(i1: Tractor, i2: Tractor) -> RadialField:
    """Tractor metric, polarized: sigma1 rho2 + sigma2 rho1 + omega1 omega2."""
    if i1.geom.grid is not i2.geom.grid:
        raise GridMismatchError("tractors live on different grids")
    vals = (
        i1.sigma.values * i2.rho.values
        + i2.sigma.values * i1.rho.values
        + i1.omega_r.values * i2.omega_r.values
    )
    return RadialField(i1.geom.grid, vals)


@dataclass(frozen=True)
class QuadraticDensity:
    """u(x) = alpha + beta . x + gamma |x|^2 on flat R^n."""

    alpha: float
    beta: Tuple[float, ...]
    gamma: float


def quad_tractor_norm(q: QuadraticDensity) -> float:
    """|Lu|^2 for a flat quadratic density: |beta|^2 - 4 alpha gamma."""
    b = np.asarray(q.beta, dtype=float)
    return float(b @ b - 4.0 * q.alpha * q.gamma)


def quad_tractor_inner(q1: QuadraticDensity, q2: QuadraticDensity) -> float:
    """h(Lu, Lv) for flat quadratics, by polarization of quad_tractor_norm."""
    b1 = np.asarray(q1.beta, dtype=float)
    b2 = np.asarray(q2.beta, dtype=float)
    return float(b1 @ b2 - 2.0 * (q1.alpha * q2.gamma + q2.alpha * q1.gamma))


def tderiv(geom: WarpedGeometry, I: Tractor) -> TractorDerivative:
    """Covariant derivative of a radial tractor."""
    _require_arclength(geom)
    p_rad, p_tan, _ = schouten(geom)
    grid = geom.grid
    d1 = grid.d1
    rho_t = d1(I.rho.values) - p_rad.values * I.omega_r.values
    omega_t = d1(I.omega_r.values) + I.sigma.values * p_rad.values + I.rho.values
    sigma_t = d1(I.sigma.values) - I.omega_r.values
    tang = (
        I.omega_r.values * geom.fp.values / geom.f.values
        + I.sigma.values * p_tan.values
        + I.rho.values
    )
    radial = Tractor(
        geom,
        RadialField(grid, rho_t),
        RadialField(grid, omega_t),
        RadialField(grid, sigma_t),
    )
    return TractorDerivative(radial, RadialField(grid, tang))


def parallel_residual(geom: WarpedGeometry, I: Tractor) -> float:
    """L-infinity size of nabla I over the interior nodes (all four scalars)."""
    d = tderiv(geom, I)
    sl = slice(1, -1)
    return float(
        max(
            np.max(np.abs(d.radial.rho.values[sl])),
            np.max(np.abs(d.radial.omega_r.values[sl])),
            np.max(np.abs(d.radial.sigma.values[sl])),
            np.max(np.abs(d.tangential_coeff.values[sl])),
        )
    )


def grad_norm_sq(geom: WarpedGeometry, I: Tractor) -> RadialField:
    """|nabla I|^2 = h(nabla_t I, nabla_t I) + (n-1) c^2 for radial I.

    For I = L u the sigma-slot of nabla_t I vanishes identically, so the
    radial part is the square of the omega-slot and the whole field is
    nonnegative.
    """
    d = tderiv(geom, I)
    radial_sq = tmetric(d.radial, d.radial)
    c = d.tangential_coeff.values
    return RadialField(geom.grid, radial_sq.values + (geom.n - 1) * c * c)
