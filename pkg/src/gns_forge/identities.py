"""Verification harness for the structural identities of the theory.

Each check evaluates both sides of an identity by independent routes
(finite differences against closed forms, tensor language against tractor
language) and returns the residual field or its norm; nothing here is
asserted, so the same machinery drives both the test suite and the CLI
verify command.  Residual norms are meant to be taken over an interior
window: the outermost nodes of a compactified grid carry one-sided
stencils, and identity verification is not boundary analysis.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from .errors import PreconditionError
from .functional import CwmFields, Multipliers, cwm_fields
from .geometry import (
    RadialField,
    SMMS,
    WarpedGeometry,
    arc_derivative,
    conformal_rescale,
    divergence,
    gradient_squared,
    hessian_eigenvalues,
    integrate,
    interior_mask,
    laplacian,
    linf,
    ricci_eigenvalues,
    weighted_conformal_laplacian,
)
from .tractor import grad_norm_sq, parallel_residual, split, tderiv, tmetric

__all__ = [
    "covariance_check",
    "SmmsTractorResiduals",
    "smms_tractor_check",
    "obata_identity_residual",
    "obata_tensorial_residual",
    "TrichotomyReport",
    "qe_trichotomy",
    "VRigidReport",
    "v_rigid_check",
]

PARALLEL_TOL = 1e-6


def _reduced_parallel_residual(geom: WarpedGeometry, I) -> float:
    """Parallelism measure through the omega and sigma slots only.

    By the prolongation property, vanishing of those slots forces the rho
    slot to vanish as well, so this is a sufficient test; it avoids the rho
    slot's third-derivative rounding floor, which on fine compactified grids
    sits orders of magnitude above the second-derivative noise.
    """
    d = tderiv(geom, I)
    sl = slice(1, -1)
    return float(
        max(
            np.max(np.abs(d.radial.omega_r.values[sl])),
            np.max(np.abs(d.radial.sigma.values[sl])),
            np.max(np.abs(d.tangential_coeff.values[sl])),
        )
    )


def covariance_check(
    smms: SMMS, s: RadialField, w: RadialField, mask: Optional[np.ndarray] = None
) -> float:
    """Relative L-infinity residual of the conformal covariance law.

    The left side applies the conformal Laplacian of the directly rescaled
    SMMS (lapse-carrying operators); the right side conjugates the original
    operator by the density weights e^{+-(m+n-+2)s/2}.
    """
    m, n = smms.m, smms.n
    rescaled = conformal_rescale(smms, s)
    lhs = weighted_conformal_laplacian(rescaled, w).values
    inner = RadialField(smms.grid, np.exp(0.5 * (m + n - 2.0) * s.values) * w.values)
    rhs = np.exp(-0.5 * (m + n + 2.0) * s.values) * weighted_conformal_laplacian(
        smms, inner
    ).values
    if mask is None:
        mask = interior_mask(smms.grid)
    scale = np.max(np.abs(rhs[mask])) + 1e-300
    return float(np.max(np.abs((lhs - rhs)[mask])) / scale)


@dataclass(eq=False)
class SmmsTractorResiduals:
    """Residuals of the three tensor-to-tractor translation identities."""

    res1_rad: RadialField
    res1_tan: RadialField
    res2: RadialField
    res3: RadialField


def smms_tractor_check(
    smms: SMMS, u: RadialField, cw: Optional[CwmFields] = None
) -> SmmsTractorResiduals:
    """Check the translation between weighted curvature and tractor data.

    First display (eigenvalue-wise, both sides made traceless): the traceless
    Bakry-Emery tensor of the conformal change equals

        (uv)^{-1} [ (m+n-2) v (grad Lu)_omega - m u (grad Lv)_omega ],

    where (grad L.)_omega is the vector slot of the tractor derivative; the
    canonical-tractor term of the identity lives in the rho slot and serves
    exactly to cancel it, so it never appears at the tensor level.  Second
    and third displays relate R_fphi and the measure Laplacian of beta to the
    tractor inner products.
    """
    m, n = smms.m, smms.n
    geom = smms.geom
    grid = geom.grid
    cw = cw or cwm_fields(smms, u)
    lu = split(geom, u)
    lv = split(geom, smms.v)
    lu2 = tmetric(lu, lu).values
    lv2 = tmetric(lv, lv).values
    luv = tmetric(lu, lv).values
    uv = u.values * smms.v.values

    trace = cw.ric_fphi_rad.values + (n - 1) * cw.ric_fphi_tan.values
    lhs_rad = cw.ric_fphi_rad.values - trace / n
    lhs_tan = cw.ric_fphi_tan.values - trace / n

    du = tderiv(geom, lu)
    dv = tderiv(geom, lv)
    rhs_rad = (
        (m + n - 2.0) * smms.v.values * du.radial.omega_r.values
        - m * u.values * dv.radial.omega_r.values
    ) / uv
    rhs_tan = (
        (m + n - 2.0) * smms.v.values * du.tangential_coeff.values
        - m * u.values * dv.tangential_coeff.values
    ) / uv
    rhs_trace = rhs_rad + (n - 1) * rhs_tan
    rhs_rad = rhs_rad - rhs_trace / n
    rhs_tan = rhs_tan - rhs_trace / n

    res2 = (
        cw.r_fphi.values
        - m * cw.delta_rho_beta.values
        - (-(m + n - 1.0) * n * lu2 / u.values**2 + m * n * luv / uv)
    )
    res3 = (
        cw.r_fphi.values
        - (m + n) * cw.delta_rho_beta.values
        - (
            -(m + n - 2.0) * n * luv / uv
            + (m - 1.0) * n * lv2 / smms.v.values ** 2
        )
    )
    return SmmsTractorResiduals(
        RadialField(grid, lhs_rad - rhs_rad),
        RadialField(grid, lhs_tan - rhs_tan),
        RadialField(grid, res2),
        RadialField(grid, res3),
    )


def obata_identity_residual(
    geom: WarpedGeometry,
    u: RadialField,
    v: RadialField,
    parallel_tol: float = PARALLEL_TOL,
) -> RadialField:
    """Residual of the divergence identity

    u^{n-2} div(u^{2-n} grad <Lu,Lv>) - v^{n-1}/(2u) div(v^{2-n} grad |Lu|^2)
        = -(v/u) |grad Lu|^2,

    valid when Lv is parallel.  Both u and v must be nonvanishing on the
    grid; the right side is manifestly nonpositive for positive u, v.
    """
    lv = split(geom, v)
    res = _reduced_parallel_residual(geom, lv)
    if res > parallel_tol:
        raise PreconditionError(
            f"Lv is not parallel (residual {res:.3e} > {parallel_tol:.1e})"
        )
    n = geom.n
    lu = split(geom, u)
    q_uv = tmetric(lu, lv).values
    q_uu = tmetric(lu, lu).values
    uv_ = u.values
    vv = v.values
    term1 = uv_ ** (n - 2) * divergence(
        geom, uv_ ** (2 - n) * arc_derivative(geom, q_uv)
    )
    term2 = (vv ** (n - 1) / (2.0 * uv_)) * divergence(
        geom, vv ** (2 - n) * arc_derivative(geom, q_uu)
    )
    rhs = -(vv / uv_) * grad_norm_sq(geom, lu).values
    return RadialField(geom.grid, term1 - term2 - rhs)


def _conformal_ricci_eigenvalues(
    geom: WarpedGeometry, u: RadialField
) -> Tuple[np.ndarray, np.ndarray]:
    """Eigenvalues of Ric(u^{-2} g) as a (0,2)-tensor in g-coordinates."""
    n = geom.n
    rad0, tan0 = ricci_eigenvalues(geom)
    h_rad, h_tan = hessian_eigenvalues(geom, u)
    uu = u.values
    lap_u = h_rad + (n - 1) * h_tan
    shift = lap_u / uu - (n - 1) * gradient_squared(geom, u) / uu**2
    rad = rad0.values + (n - 2) * h_rad / uu + shift
    tan = tan0.values + (n - 2) * h_tan / uu + shift
    return rad, tan


def obata_tensorial_residual(
    geom: WarpedGeometry,
    lambda_e: float,
    u: RadialField,
    einstein_tol: float = 1e-8,
) -> RadialField:
    """Tensorial form of the divergence identity on an Einstein background.

    With Ric = (n-1) lambda_e g and hat g = u^{-2} g, the identity reads

        u^2/(n-2)^2 |Ric(hat g)_0|^2
            = (1/n) u^{n-1} div(u^{2-n} grad(Delta u + n lambda_e u))
              - 1/(2n(n-1)) Delta R_hat,

    with all norms, traces, and Laplacians taken in g, and R_hat the scalar
    curvature function of hat g (computed through the tractor norm of Lu).
    """
    n = geom.n
    rad0, tan0 = ricci_eigenvalues(geom)
    dev = max(
        linf(rad0.values - (n - 1) * lambda_e), linf(tan0.values - (n - 1) * lambda_e)
    )
    if dev > einstein_tol:
        raise PreconditionError(
            f"background is not Einstein with Ric = (n-1)*{lambda_e} g "
            f"(deviation {dev:.3e})"
        )
    uu = u.values
    t_rad, t_tan = _conformal_ricci_eigenvalues(geom, u)
    tr = t_rad + (n - 1) * t_tan
    t0_rad = t_rad - tr / n
    t0_tan = t_tan - tr / n
    lhs = uu**2 / (n - 2) ** 2 * (t0_rad**2 + (n - 1) * t0_tan**2)

    lap_u = laplacian(geom, u).values
    flux = uu ** (2 - n) * arc_derivative(geom, lap_u + n * lambda_e * uu)
    first = uu ** (n - 1) / n * divergence(geom, flux)
    r_hat = -n * (n - 1) * tmetric(split(geom, u), split(geom, u)).values
    second = laplacian(geom, RadialField(geom.grid, r_hat)).values / (
        2.0 * n * (n - 1)
    )
    return RadialField(geom.grid, lhs - (first - second))


@dataclass(eq=False)
class TrichotomyReport:
    """Diagnostic classification of a doubly-critical configuration.

    The quadratic a (u/v)^2 + 2 b (u/v) - c vanishes identically whenever
    the multiplier identity holds with parallel Lu, Lv; its coefficients are

        a = m(m-1)(2-k) |Lv|^2,
        b = m(m+n-2)(k-1) <Lu,Lv>,
        c = (m+n-2) k (lambda + (m+n-1)|Lu|^2).

    Nonconstant u/v forces a = b = c = 0, which pins k to 1 (scalar-flat
    background) or 2 (tractor-orthogonal data).
    """

    a: float
    b: float
    c: float
    quad_residual: float
    classification: str
    norms: Dict[str, float]
    constancy: Dict[str, float]
    parallel_residuals: Tuple[float, float]
    flags: Dict[str, bool]
    notes: str = ""


def qe_trichotomy(
    smms: SMMS,
    k: float,
    u: RadialField,
    tol: float = 1e-6,
    mask: Optional[np.ndarray] = None,
) -> TrichotomyReport:
    """Classify a configuration against the rigidity trichotomy.

    Diagnostic rather than assertive: precondition failures (nonparallel
    tractors, nonconstant inner products) are reported in the fields, not
    raised.
    """
    m, n = smms.m, smms.n
    geom = smms.geom
    if mask is None:
        mask = interior_mask(geom.grid)
    lu = split(geom, u)
    lv = split(geom, smms.v)
    res_lu = parallel_residual(geom, lu)
    res_lv = parallel_residual(geom, lv)
    lu2 = tmetric(lu, lu).values[mask]
    lv2 = tmetric(lv, lv).values[mask]
    luv = tmetric(lu, lv).values[mask]
    norms = {
        "lu2": float(np.mean(lu2)),
        "luv": float(np.mean(luv)),
        "lv2": float(np.mean(lv2)),
    }
    constancy = {
        "lu2": float(np.ptp(lu2)),
        "luv": float(np.ptp(luv)),
        "lv2": float(np.ptp(lv2)),
    }
    mn2 = m + n - 2.0
    ratio = (u.values / smms.v.values)[mask]
    lam_num = (
        -k * (m + n - 1.0) * mn2 * norms["lu2"]
        + m * (m - 1.0) * (2.0 - k) * norms["lv2"] * float(np.mean(ratio**2))
        + 2.0 * (k - 1.0) * m * mn2 * norms["luv"] * float(np.mean(ratio))
    )
    lam = lam_num / (mn2 * k)
    a = m * (m - 1.0) * (2.0 - k) * norms["lv2"]
    b = m * mn2 * (k - 1.0) * norms["luv"]
    c = mn2 * k * (lam + (m + n - 1.0) * norms["lu2"])
    quad = a * ratio**2 + 2.0 * b * ratio - c
    quad_residual = float(np.max(np.abs(quad)))

    ratio_const = float(np.ptp(ratio)) <= tol * max(1.0, float(np.mean(np.abs(ratio))))
    flags = {
        "ratio_constant": ratio_const,
        "k1_scalar_flat": (not ratio_const)
        and abs(k - 1.0) <= tol
        and abs(norms["lv2"]) <= tol,
        "k2_orthogonal": (not ratio_const)
        and abs(k - 2.0) <= tol
        and abs(norms["luv"]) <= tol,
    }
    hits = [name for name, hit in flags.items() if hit]
    classification = hits[0] if len(hits) == 1 else "none"
    notes = ""
    if len(hits) > 1:
        notes = f"ambiguous classification: {hits}"
    if max(res_lu, res_lv) > PARALLEL_TOL:
        notes = (notes + "; " if notes else "") + "parallel precondition fails"
    return TrichotomyReport(
        a=a,
        b=b,
        c=c,
        quad_residual=quad_residual,
        classification=classification,
        norms=norms,
        constancy=constancy,
        parallel_residuals=(res_lu, res_lv),
        flags=flags,
        notes=notes,
    )


@dataclass(eq=False)
class VRigidReport:
    """Residuals of the Ricci-flat-measure rigidity identities."""

    norm_res1: RadialField
    norm_res2: RadialField
    divergence_integral: float
    tail_fraction: float


def v_rigid_check(
    smms: SMMS,
    k: float,
    u: RadialField,
    mult: Multipliers,
    ricci_flat_tol: float = 1e-6,
) -> VRigidReport:
    """Check the two multiplier-norm identities and the divergence identity
    for a measure density with v^{-2} g Ricci-flat.

    norm_res1: -2(k-1) mu (u/v)^k - (lambda + (m+n-1)|Lu|^2)
    norm_res2: -k mu (u/v)^{k-1} - m <Lu,Lv>

    The divergence check integrates the difference between -(v/u)|grad Lu|^2
    and its pure-divergence form against u^{2-m-n} v^m (u/v)^{1-k} dvol; the
    tail estimate of that integral is reported rather than enforced, since
    non-minimizing inputs may carry genuine boundary terms.
    """
    m, n = smms.m, smms.n
    geom = smms.geom
    rad, tan = _conformal_ricci_eigenvalues(geom, smms.v)
    mask = interior_mask(geom.grid)
    dev = max(linf(rad, mask), linf(tan, mask))
    if dev > ricci_flat_tol:
        raise PreconditionError(
            f"v^(-2) g is not Ricci-flat (deviation {dev:.3e})"
        )
    lu = split(geom, u)
    lv = split(geom, smms.v)
    lu2 = tmetric(lu, lu).values
    luv = tmetric(lu, lv).values
    ratio = u.values / smms.v.values
    res1 = -2.0 * (k - 1.0) * mult.mu * ratio**k - (
        mult.lam + (m + n - 1.0) * lu2
    )
    res2 = -k * mult.mu * ratio ** (k - 1.0) - m * luv

    big_c = 0.0 if m == 0 else k * (k - 1.0) * mult.mu / (m * (m + n - 1.0))
    uu, vv = u.values, smms.v.values
    x_arc = vv * arc_derivative(geom, uu) - uu * arc_derivative(geom, vv)
    div_expr = (
        big_c
        * np.exp((m + n - 2.0) * np.log(uu) - m * np.log(vv))
        * divergence(
            geom, np.exp((k - m - n) * np.log(uu) + (m - k) * np.log(vv)) * x_arc
        )
    )
    lhs = -(vv / uu) * grad_norm_sq(geom, lu).values
    weight = np.exp((2.0 - m - n + 1.0 - k) * np.log(uu) + (m + k - 1.0) * np.log(vv))
    value, tail = integrate(
        geom, (lhs - div_expr) * weight, tail_tol=None, name="divergence identity"
    )
    grid = geom.grid
    return VRigidReport(
        RadialField(grid, res1), RadialField(grid, res2), value, tail
    )
