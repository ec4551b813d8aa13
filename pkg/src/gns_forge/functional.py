"""The conformal GNS functional, its exponents, multipliers, and residuals.

The functional is the quotient

    Q_k(w) = F(w) * (int w^p_leb v^{m-k})^p_f / (int w^q_leb v^m dvol)^q_f,

with F(w) = int w L_phi^m w v^m dvol the energy of the weighted conformal
Laplacian, p_f = 2m/(nk), q_f = (2m + k(n-2))/(nk), and Lebesgue exponents
p_leb = 2(m+n-k)/(m+n-2), q_leb = 2(m+n)/(m+n-2).  Its infimum over
positive w encodes the sharp constant of a Gagliardo-Nirenberg-Sobolev
inequality on flat space.

Critical points are described through the conformal factor u = w^{-2/(m+n-2)}
and the weighted curvature data of the conformally changed SMMS: the scalar
equation (conformal direction), the measure equation, and the quasi-Einstein
tensor equation, each with Lagrange multipliers lambda and mu that are
available both as quadrature ratios and as pointwise tractor expressions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import DomainError, ParameterError
from .geometry import (
    DEFAULT_TAIL_TOL,
    GnsParams,
    RadialField,
    SMMS,
    WarpedGeometry,
    arc_derivative,
    gradient_squared,
    hessian_eigenvalues,
    integrate,
    ricci_eigenvalues,
    weighted_conformal_laplacian,
    weighted_scalar,
)
from .tractor import split, tmetric

__all__ = [
    "ExponentSet",
    "FunctionalValue",
    "Multipliers",
    "CwmFields",
    "exponents",
    "energy",
    "qk",
    "cwm_fields",
    "multipliers_integral",
    "el_residual_conformal",
    "el_residual_measure",
    "el_residual_metric",
    "tractor_multipliers",
    "crit_identity_residual",
    "dd_extremal",
    "to_root_scale",
]


@dataclass(frozen=True)
class ExponentSet:
    """All exponents attached to (n, m, k).

    p_f and q_f are the powers on the two integrals inside Q_k; p_leb and
    q_leb are the Lebesgue exponents of the underlying GNS inequality, whose
    interpolation exponent theta is fixed by dilation scaling.  const_power
    converts sigma_{1,k} into the GNS constant C = sigma^const_power.
    """

    p_f: float
    q_f: float
    p_leb: float
    q_leb: float
    theta: float
    const_power: float


def _exponent_set(n: int, m: float, k: float) -> ExponentSet:
    denom = 2.0 * m + k * (n - 2.0)
    if denom == 0.0:
        raise ParameterError("2m + k(n-2) = 0: the GNS constant power is undefined")
    p_f = 2.0 * m / (n * k)
    q_f = denom / (n * k)
    p_leb = 2.0 * (m + n - k) / (m + n - 2.0)
    q_leb = 2.0 * (m + n) / (m + n - 2.0)
    # the inequality reads ||w||_lhs <= C ||grad w||_2^theta ||w||_rhs^(1-theta);
    # the m <= -n-2 branch swaps which Lebesgue norm sits on the left.
    lhs, rhs = (q_leb, p_leb) if m >= 0 else (p_leb, q_leb)
    theta = (1.0 / rhs - 1.0 / lhs) / (1.0 / rhs - (n - 2.0) / (2.0 * n))
    const_power = -(m + n - 2.0) * n * k / ((m + n) * denom)
    return ExponentSet(p_f, q_f, p_leb, q_leb, theta, const_power)


def exponents(params: GnsParams) -> ExponentSet:
    return _exponent_set(params.n, params.m, params.k)


@dataclass(frozen=True)
class FunctionalValue:
    """Q_k at one profile, with the three constituent integrals.

    When p_f = 0 (the m = 0 Yamabe case) the middle factor of Q_k is defined
    as 1 and omegak is reported as nan, since its integral may diverge.
    """

    energy: float
    omega0: float
    omegak: float
    qk: float


@dataclass(frozen=True)
class Multipliers:
    lam: float
    mu: float


def to_root_scale(smms: SMMS, w: RadialField) -> Tuple[SMMS, RadialField]:
    """Pull (smms, w) back to the arclength representative of its conformal
    class; the identity when smms was not produced by conformal_rescale."""
    if smms.root is None:
        return smms, w
    alpha = (smms.m + smms.n - 2.0) / 2.0
    vals = np.exp(alpha * smms.log_factor.values) * w.values
    return smms.root, RadialField(smms.root.grid, vals)


def energy(smms: SMMS, w: RadialField, tail_tol: Optional[float] = DEFAULT_TAIL_TOL) -> float:
    """F(w) = int (|grad w|^2 + c R_phi^m w^2) v^m dvol, the integrated-by-
    parts form of int w L_phi^m w v^m dvol.

    Conformally rescaled SMMS are routed through their arclength
    representative via the covariance law, which is exact at rounding level.
    """
    smms, w = to_root_scale(smms, w)
    if np.any(w.values < 0):
        raise DomainError("energy expects a nonnegative profile")
    m, n = smms.m, smms.n
    c = (m + n - 2.0) / (4.0 * (m + n - 1.0))
    gsq = gradient_squared(smms.geom, w.values)
    rphi = weighted_scalar(smms).values
    vm = smms.v.values ** m
    integrand = (gsq + c * rphi * w.values**2) * vm
    value, _ = integrate(smms.geom, integrand, tail_tol=tail_tol, name="energy")
    return value


def qk(
    smms: SMMS,
    k: float,
    w: RadialField,
    tail_tol: Optional[float] = DEFAULT_TAIL_TOL,
) -> FunctionalValue:
    """Evaluate the conformal GNS functional at w."""
    smms.params.validate_k(k)
    smms, w = to_root_scale(smms, w)
    m, n = smms.m, smms.n
    exps = _exponent_set(n, m, k)
    e = energy(smms, w, tail_tol=tail_tol)
    vm = smms.v.values ** m
    omega0, _ = integrate(
        smms.geom, w.values ** exps.q_leb * vm, tail_tol=tail_tol, name="omega0"
    )
    if exps.p_f == 0.0:
        omegak = float("nan")
        middle = 1.0
    else:
        vmk = smms.v.values ** (m - k)
        omegak, _ = integrate(
            smms.geom, w.values ** exps.p_leb * vmk, tail_tol=tail_tol, name="omegak"
        )
        middle = omegak ** exps.p_f
    value = e * middle / omega0 ** exps.q_f
    return FunctionalValue(e, omega0, omegak, value)


# ---------------------------------------------------------------------------
# conformally changed weighted curvature
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class CwmFields:
    """Weighted curvature data of the conformal change by u = e^{f/(m+n-2)}.

    r_fphi is the covariant-route value; the trace route (through the
    Bakry-Emery eigenvalues and the weighted measure Laplacian of
    beta = log(u/v)) is exposed through route_gap = covariant - trace, which
    must vanish at second order.  drho_weight and domega_weight are the
    densities u^{2-m-n} v^m and u^{-m-n} v^m of the two conformal measures.
    """

    u: RadialField
    beta: RadialField
    r_fphi: RadialField
    ric_fphi_rad: RadialField
    ric_fphi_tan: RadialField
    delta_rho_beta: RadialField
    drho_weight: RadialField
    domega_weight: RadialField
    route_gap: RadialField


def cwm_fields(smms: SMMS, u: RadialField) -> CwmFields:
    if np.any(u.values <= 0):
        raise DomainError("conformal factor u must be positive")
    geom = smms.geom
    grid = geom.grid
    m, n = smms.m, smms.n
    mn2 = m + n - 2.0
    lu = np.log(u.values)
    lv = smms.log_v()
    beta = lu - lv

    # covariant route through the conformal Laplacian, xi = u^{-(m+n-2)/2}
    xi = RadialField(grid, np.exp(-0.5 * mn2 * lu))
    lxi = weighted_conformal_laplacian(smms, xi)
    r_cov = (4.0 * (m + n - 1.0) / mn2) * lxi.values / xi.values

    # trace route through the Bakry-Emery tensor of f + phi
    fplus = mn2 * lu - m * lv
    h_rad, h_tan = hessian_eigenvalues(geom, fplus)
    lu_t = arc_derivative(geom, lu)
    lv_t = arc_derivative(geom, lv)
    fplus_t = mn2 * lu_t - m * lv_t
    ric0_rad, ric0_tan = ricci_eigenvalues(geom)
    lap_f = mn2 * (
        hessian_eigenvalues(geom, lu)[0] + (n - 1) * hessian_eigenvalues(geom, lu)[1]
    )
    delta_fplus_f = lap_f - fplus_t * (mn2 * lu_t)
    shared = delta_fplus_f / mn2
    ric_rad = ric0_rad.values + h_rad + mn2 * lu_t**2 - m * lv_t**2 + shared
    ric_tan = ric0_tan.values + h_tan + shared
    beta_t = lu_t - lv_t
    lap_beta = (
        hessian_eigenvalues(geom, beta)[0]
        + (n - 1) * hessian_eigenvalues(geom, beta)[1]
    )
    delta_fplus_beta = lap_beta - fplus_t * beta_t
    r_trace = ric_rad + (n - 1) * ric_tan + m * delta_fplus_beta

    delta_rho_beta = lap_beta + ((2.0 - m - n) * lu_t + m * lv_t) * beta_t
    drho = np.exp((2.0 - m - n) * lu + m * lv)
    domega = np.exp(-(m + n) * lu + m * lv)

    return CwmFields(
        u=u,
        beta=RadialField(grid, beta),
        r_fphi=RadialField(grid, r_cov),
        ric_fphi_rad=RadialField(grid, ric_rad),
        ric_fphi_tan=RadialField(grid, ric_tan),
        delta_rho_beta=RadialField(grid, delta_rho_beta),
        drho_weight=RadialField(grid, drho),
        domega_weight=RadialField(grid, domega),
        route_gap=RadialField(grid, r_cov - r_trace),
    )


def multipliers_integral(
    smms: SMMS,
    k: float,
    u: RadialField,
    tail_tol: Optional[float] = DEFAULT_TAIL_TOL,
    cw: Optional[CwmFields] = None,
) -> Multipliers:
    """Lagrange multipliers as ratios of total weighted curvature integrals."""
    m, n = smms.m, smms.n
    cw = cw or cwm_fields(smms, u)
    geom = smms.geom
    total_r, _ = integrate(
        geom, cw.r_fphi.values * cw.drho_weight.values, tail_tol=tail_tol, name="R drho"
    )
    omega_m, _ = integrate(geom, cw.domega_weight.values, tail_tol=tail_tol, name="omega(M)")
    ratio = (u.values / smms.v.values) ** k
    uv_int, _ = integrate(
        geom, ratio * cw.domega_weight.values, tail_tol=tail_tol, name="(u/v)^k domega"
    )
    denom = (m + n - 2.0) * n * k
    lam = (2.0 * m + k * (n - 2.0)) * total_r / (denom * omega_m)
    mu = m * total_r / (denom * uv_int)
    return Multipliers(lam, mu)


def _power_ratio(u: np.ndarray, v: np.ndarray, pu: float, pv: float) -> np.ndarray:
    return np.exp(pu * np.log(u) + pv * np.log(v))


def el_residual_conformal(
    smms: SMMS,
    k: float,
    u: RadialField,
    mult: Multipliers,
    cw: Optional[CwmFields] = None,
) -> RadialField:
    """Scalar Euler-Lagrange residual:
    R_fphi + 2(m+n-k) mu u^{k-2} v^{-k} - (m+n) lambda u^{-2}."""
    m, n = smms.m, smms.n
    cw = cw or cwm_fields(smms, u)
    uk = _power_ratio(u.values, smms.v.values, k - 2.0, -k)
    vals = (
        cw.r_fphi.values
        + 2.0 * (m + n - k) * mult.mu * uk
        - (m + n) * mult.lam * u.values**-2
    )
    return RadialField(smms.grid, vals)


def el_residual_measure(
    smms: SMMS,
    k: float,
    u: RadialField,
    mult: Multipliers,
    cw: Optional[CwmFields] = None,
) -> RadialField:
    """Measure-direction residual:
    R_fphi - m Delta_rho beta + n(2-k) mu u^{k-2} v^{-k} - n lambda u^{-2}."""
    m, n = smms.m, smms.n
    cw = cw or cwm_fields(smms, u)
    uk = _power_ratio(u.values, smms.v.values, k - 2.0, -k)
    vals = (
        cw.r_fphi.values
        - m * cw.delta_rho_beta.values
        + n * (2.0 - k) * mult.mu * uk
        - n * mult.lam * u.values**-2
    )
    return RadialField(smms.grid, vals)


def el_residual_metric(
    smms: SMMS,
    k: float,
    u: RadialField,
    mult: Multipliers,
    cw: Optional[CwmFields] = None,
) -> Tuple[RadialField, RadialField]:
    """Eigenvalue residuals of the quasi-Einstein equation:
    Ric_fphi + (2-k) mu u^{k-2} v^{-k} g - lambda u^{-2} g."""
    cw = cw or cwm_fields(smms, u)
    uk = _power_ratio(u.values, smms.v.values, k - 2.0, -k)
    shift = (2.0 - k) * mult.mu * uk - mult.lam * u.values**-2
    return (
        RadialField(smms.grid, cw.ric_fphi_rad.values + shift),
        RadialField(smms.grid, cw.ric_fphi_tan.values + shift),
    )


def tractor_multipliers(
    smms: SMMS, k: float, u: RadialField
) -> Tuple[RadialField, RadialField]:
    """Pointwise multiplier fields solved from the tractor identities.

    Constancy of the returned fields is a theorem conclusion, not a
    construction guarantee; callers test it.
    """
    if k == 0:
        raise ParameterError("tractor multipliers need k != 0")
    m, n = smms.m, smms.n
    geom = smms.geom
    lu = split(geom, u)
    lv = split(geom, smms.v)
    lu2 = tmetric(lu, lu).values
    lv2 = tmetric(lv, lv).values
    luv = tmetric(lu, lv).values
    uv = u.values * smms.v.values
    v2 = smms.v.values ** 2
    u2 = u.values ** 2
    mn2 = m + n - 2.0
    lam_num = (
        -k * (m + n - 1.0) * mn2 * v2 * lu2
        + m * (m - 1.0) * (2.0 - k) * u2 * lv2
        + 2.0 * (k - 1.0) * m * mn2 * uv * luv
    )
    lam = lam_num / (mn2 * k * v2)
    mu_num = -m * mn2 * uv * luv + m * (m - 1.0) * u2 * lv2
    mu = mu_num / (mn2 * k * _power_ratio(u.values, smms.v.values, k, 2.0 - k))
    return RadialField(smms.grid, lam), RadialField(smms.grid, mu)


def crit_identity_residual(
    smms: SMMS,
    k: float,
    u: RadialField,
    mult: Multipliers,
    norms: Optional[Tuple[float, float, float]] = None,
) -> RadialField:
    """Residual of the general critical-point identity

    (m+n) lambda v^2 - 2(m+n-k) mu u^k v^{2-k}
        = -(m+n)(m+n-1) v^2 |Lu|^2 + 2m(m+n-1) uv <Lu,Lv> - m(m-1) u^2 |Lv|^2.

    `norms` optionally supplies (|Lu|^2, <Lu,Lv>, |Lv|^2) from the flat
    closed-form backend, which checks the identity at rounding level; by
    default they come from the finite-difference splitting.
    """
    m, n = smms.m, smms.n
    if norms is not None:
        lu2, luv, lv2 = norms
    else:
        geom = smms.geom
        lu = split(geom, u)
        lv = split(geom, smms.v)
        lu2 = tmetric(lu, lu).values
        lv2 = tmetric(lv, lv).values
        luv = tmetric(lu, lv).values
    v2 = smms.v.values ** 2
    uv = u.values * smms.v.values
    lhs = (m + n) * mult.lam * v2 - 2.0 * (m + n - k) * mult.mu * _power_ratio(
        u.values, smms.v.values, k, 2.0 - k
    )
    rhs = (
        -(m + n) * (m + n - 1.0) * v2 * lu2
        + 2.0 * m * (m + n - 1.0) * uv * luv
        - m * (m - 1.0) * u.values**2 * lv2
    )
    return RadialField(smms.grid, lhs - rhs)


def dd_extremal(geom: WarpedGeometry, branch: str) -> Tuple[RadialField, RadialField]:
    """The closed-form extremal pair (u, w) on flat space.

    sphere_like (m >= 0): u = 1 + r^2; ball_like (m <= -n-2, unit ball):
    u = 1 - r^2.  Either way w = u^{-(m+n-2)/2}, and the exponent identity
    1/(t-1) = (m+n-2)/2 with t = (m+n)/(m+n-2) ties w to the classical
    two-parameter extremal families.
    """
    params = geom.params
    m, n = params.m, params.n
    r = geom.grid.r
    if branch == "sphere_like":
        if m < 0:
            raise ParameterError("sphere_like branch needs m >= 0")
        uvals = 1.0 + r**2
    elif branch == "ball_like":
        if not params.ball_branch:
            raise ParameterError("ball_like branch needs m <= -(n+2)")
        if geom.grid.domain != "unit_ball" or geom.grid.scale != 1.0:
            raise ParameterError("ball_like branch needs the unit-ball domain")
        uvals = 1.0 - r**2
    else:
        raise ParameterError(f"unknown branch {branch!r}")
    t = (m + n) / (m + n - 2.0)
    if abs(1.0 / (t - 1.0) - (m + n - 2.0) / 2.0) > 1e-12 * max(1.0, abs(m + n)):
        raise ParameterError("exponent bookkeeping failed for the extremal family")
    w = uvals ** (-(m + n - 2.0) / 2.0)
    grid = geom.grid
    return RadialField(grid, uvals), RadialField(grid, w)
