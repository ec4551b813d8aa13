"""Numerical minimization of the conformal GNS functional.

The discrete objective is built from the grid quadrature: the energy is the
quadratic form w K w with K assembled from the first-derivative stencil and
the curvature weight, and the two Lebesgue integrals are weighted power
sums.  The gradient is the exact derivative of this discrete objective, so
it matches finite differences of Q_k to rounding, and its zero set is the
discrete Euler-Lagrange equation.

Positivity is enforced by parametrization: eta = log w on unbounded domains,
w = psi^2 on the ball branch (whose extremal vanishes at the boundary, where
log w is unbounded).  Descent directions are preconditioned by the inverse
of the discrete Helmholtz form M = mass + stiffness (a Sobolev gradient);
raw L2 gradient steps would be stability-limited by the near-origin grid
spacing.  The line search is plain Armijo backtracking.

On flat space the functional is dilation invariant; the zero mode is gauged
away by pinning the radius enclosing half of the omega0 mass, implemented
as a resampling of log w in log r.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DivergenceError, DomainError, GnsForgeError, ParameterError
from .functional import (
    Multipliers,
    _exponent_set,
    cwm_fields,
    el_residual_conformal,
    el_residual_measure,
    el_residual_metric,
    multipliers_integral,
    tractor_multipliers,
    to_root_scale,
    dd_extremal,
)
from .geometry import RadialField, SMMS, interior_mask, linf, weighted_scalar

__all__ = ["SolverOptions", "MinimizeResult", "SweepRow", "minimize", "sweep"]


@dataclass(frozen=True)
class SolverOptions:
    """Iteration controls; normalization is fixed omega0 = 1 throughout."""

    max_iters: int = 20000
    grad_tol: float = 1e-7
    step0: float = 1.0
    backtrack_factor: float = 0.5
    seed: int = 0
    armijo: float = 1e-4
    gauge: bool = True
    gauge_deadband: float = 0.05
    direction_cap: float = 50.0

    def __post_init__(self):
        if self.max_iters < 1:
            raise ParameterError("max_iters must be >= 1")
        if not (0.0 < self.backtrack_factor < 1.0):
            raise ParameterError("backtrack_factor must be in (0, 1)")


@dataclass(eq=False)
class MinimizeResult:
    w_star: RadialField
    sigma: float
    iterations: int
    grad_norm: float
    converged: bool
    residual_report: Dict[str, float]
    max_accept_increase: float
    q_history: np.ndarray


@dataclass(eq=False)
class SweepRow:
    k: float
    sigma: float
    res_conformal: float
    res_measure: float
    res_metric: float
    error: str = ""
    result: Optional[MinimizeResult] = None


class _Discrete:
    """Discrete objective Q_k and its exact gradient on one SMMS.

    The Dirichlet energy uses cell (two-point) differences with midpoint
    cell weights rather than the centered nodal stencil: the centered
    first-derivative operator annihilates the odd-even mode, which a
    minimizer would otherwise exploit to drive Q_k below its continuum
    infimum.  The cell form is the standard P1 quadratic form, positive
    semidefinite with constants as its only kernel.
    """

    def __init__(self, smms: SMMS, k: float):
        geom = smms.geom
        grid = geom.grid
        m, n = smms.m, smms.n
        self.exps = _exponent_set(n, m, k)
        self.k = k
        nu = grid.quad_weight * geom.vol_density
        vm = smms.v.values ** m
        self.nu0 = nu * vm
        self.nuk = nu * smms.v.values ** (m - k) if self.exps.p_f != 0.0 else None
        dr = np.diff(grid.r)
        ncell = grid.N - 1
        diff = sp.diags([-1.0 / dr, 1.0 / dr], offsets=[0, 1], shape=(ncell, grid.N))
        dens = geom.vol_density * vm / geom.lapse.values**2
        cell_w = 0.5 * (dens[:-1] + dens[1:]) * dr
        stiff = (diff.T @ sp.diags(cell_w) @ diff).tocsr()
        c = (m + n - 2.0) / (4.0 * (m + n - 1.0))
        self.K = stiff + sp.diags(c * weighted_scalar(smms).values * self.nu0)
        self.kdiag_abs = np.abs(self.K.diagonal())
        helmholtz = (sp.diags(self.nu0) + stiff).tocsc()
        self.solve = spla.splu(helmholtz).solve

    def value_parts(self, w: np.ndarray):
        with np.errstate(over="ignore", invalid="ignore"):
            e = float(w @ (self.K @ w))
            om0 = float(self.nu0 @ w**self.exps.q_leb)
            if self.nuk is None:
                mid = 1.0
                omk = float("nan")
            else:
                omk = float(self.nuk @ w**self.exps.p_leb)
                mid = omk**self.exps.p_f
            if not (om0 > 0.0) or not np.isfinite(e) or not np.isfinite(mid):
                return float("inf"), e, om0, float("nan")
            q = e * mid / om0**self.exps.q_f
        return (q if np.isfinite(q) else float("inf")), e, om0, omk

    def value(self, w: np.ndarray) -> float:
        return self.value_parts(w)[0]

    def grad_w(self, w: np.ndarray) -> np.ndarray:
        """dQ/dw of the discrete functional (exact)."""
        q, e, om0, omk = self.value_parts(w)
        if not np.isfinite(q):
            raise DivergenceError("qk", float("inf"), "iterate left the feasible set")
        ex = self.exps
        g = 2.0 * (self.K @ w) / e - ex.q_f * ex.q_leb * w ** (
            ex.q_leb - 1.0
        ) * self.nu0 / om0
        if self.nuk is not None:
            g = g + ex.p_f * ex.p_leb * w ** (ex.p_leb - 1.0) * self.nuk / omk
        return q * g

    def hess_diag(self, w: np.ndarray) -> np.ndarray:
        """Positive estimate of the diagonal of the w-space Hessian of Q.

        High-frequency modes see curvature 2Q/E times the stiffness diagonal
        (not the unit factor of the Helmholtz preconditioner); steering a
        Jacobi component by this estimate keeps them inside the explicit
        stability region."""
        q, e, om0, omk = self.value_parts(w)
        ex = self.exps
        hd = 2.0 * q / e * self.kdiag_abs + q * ex.q_f * ex.q_leb * abs(
            ex.q_leb - 1.0
        ) * np.abs(w) ** (ex.q_leb - 2.0) * self.nu0 / om0
        if self.nuk is not None:
            hd = hd + q * abs(ex.p_f) * ex.p_leb * abs(ex.p_leb - 1.0) * np.abs(
                w
            ) ** (ex.p_leb - 2.0) * self.nuk / omk
        return np.maximum(hd, 1e-300)

    def stationarity(self, w: np.ndarray) -> np.ndarray:
        """b(w) = grad Q / Q; its zero set is the discrete criticality."""
        q, e, om0, omk = self.value_parts(w)
        ex = self.exps
        b = 2.0 * (self.K @ w) / e - ex.q_f * ex.q_leb * w ** (
            ex.q_leb - 1.0
        ) * self.nu0 / om0
        if self.nuk is not None:
            b = b + ex.p_f * ex.p_leb * w ** (ex.p_leb - 1.0) * self.nuk / omk
        return b

    def newton_polish(self, w: np.ndarray, max_steps: int = 12, target: float = 1e-13):
        """Damped Newton iteration on the stationarity system b(w) = 0.

        Certified line-search descent on Q stalls once predicted decreases
        fall below the float resolution of Q itself (about 1e-6 in the dual
        gradient norm); the stationarity system has no such floor.  The
        Jacobian is banded plus three rank-one terms, handled by a sparse LU
        and the Woodbury identity; the scaling and flat-space dilation
        near-null directions are Tikhonov-shifted.  Positivity of the bulk
        iterate is preserved by step damping; nodes at the underflow floor
        are frozen.

        Returns (w, residual_norm_history).
        """
        ex = self.exps
        hist = []
        w = w.copy()
        wmax = float(np.max(w))
        for _ in range(max_steps):
            q, e, om0, omk = self.value_parts(w)
            b = self.stationarity(w)
            scale = np.sqrt(self.nu0)
            rnorm = float(np.linalg.norm(b / np.maximum(scale, 1e-300)) )
            hist.append(rnorm)
            if rnorm <= target:
                break
            # powers in the Jacobian are floored so that an underflowed tail
            # node gets a huge diagonal (graceful freeze) instead of a
            # singular one; the residual itself uses the true w, so the
            # tail can regrow through the Newton step where it wants to
            wq = np.maximum(w, 1e-30 * wmax)
            kw = 2.0 * (self.K @ w) / e
            dq = -ex.q_f * ex.q_leb * (ex.q_leb - 1.0) * wq ** (
                ex.q_leb - 2.0
            ) * self.nu0 / om0
            us = [kw]
            vs = [-kw]
            g0 = ex.q_leb * w ** (ex.q_leb - 1.0) * self.nu0 / om0
            us.append(ex.q_f * g0)
            vs.append(g0)
            if self.nuk is not None:
                dq = dq + ex.p_f * ex.p_leb * (ex.p_leb - 1.0) * wq ** (
                    ex.p_leb - 2.0
                ) * self.nuk / omk
                gk = ex.p_leb * w ** (ex.p_leb - 1.0) * self.nuk / omk
                us.append(-ex.p_f * gk)
                vs.append(gk)
            # active set: zero nodes stay clamped unless the stationarity
            # pressure wants them positive again (b < 0 releases them)
            free = (w > 0) | (b < 0)
            eps = 1e-9 * max(1.0, 2.0 * q / e)
            mvec = free.astype(float)
            dm = sp.diags(mvec)
            band = (
                dm @ ((2.0 / e) * self.K + sp.diags(dq + eps * self.nu0)) @ dm
                + sp.diags(1.0 - mvec)
            ).tocsc()
            try:
                solve = spla.splu(band).solve
            except RuntimeError:
                break
            rhs = np.stack([mvec * b] + [mvec * u_ for u_ in us], axis=1)
            sols = solve(rhs)
            xb, xu = sols[:, 0], sols[:, 1:]
            vmat = np.stack([mvec * v_ for v_ in vs], axis=1)
            small = np.eye(len(us)) + vmat.T @ xu
            try:
                coef = np.linalg.solve(small, vmat.T @ xb)
            except np.linalg.LinAlgError:
                break
            delta = xb - xu @ coef
            # b is homogeneous of degree -1, so J_b w = -b exactly and pure
            # rescalings shrink the residual without approaching criticality;
            # deflate that direction and renormalize after each step.
            ww = float((w * self.nu0) @ w)
            delta = delta - w * (float((delta * self.nu0) @ w) / ww)
            t = 1.0
            improved = False
            for _ in range(30):
                w_try = np.clip(w - t * delta, 0.0, None)
                if np.any(w_try > 0):
                    om0 = float(self.nu0 @ w_try**ex.q_leb)
                    w_try = w_try * om0 ** (-1.0 / ex.q_leb)
                    b_try = self.stationarity(w_try)
                    rn_try = float(
                        np.linalg.norm(b_try / np.maximum(scale, 1e-300))
                    )
                    if np.isfinite(rn_try) and rn_try < rnorm:
                        w = w_try
                        improved = True
                        break
                t *= 0.5
            if not improved:
                break
        return w, hist


def _half_mass_radius(r: np.ndarray, mass: np.ndarray) -> float:
    c = np.cumsum(mass)
    total = c[-1]
    i = int(np.searchsorted(c, 0.5 * total))
    return float(r[min(i, len(r) - 1)])


def _dilate_log(r: np.ndarray, eta: np.ndarray, factor: float) -> np.ndarray:
    """eta(r) -> eta(factor * r) by interpolation in log r, linear
    extrapolation at the ends (power-law tails are linear in log r)."""
    x = np.log(r)
    xq = x + np.log(factor)
    out = np.interp(xq, x, eta)
    lo = xq < x[0]
    if np.any(lo):
        slope = (eta[1] - eta[0]) / (x[1] - x[0])
        out[lo] = eta[0] + slope * (xq[lo] - x[0])
    hi = xq > x[-1]
    if np.any(hi):
        slope = (eta[-1] - eta[-2]) / (x[-1] - x[-2])
        out[hi] = eta[-1] + slope * (xq[hi] - x[-1])
    return out


def _default_start_x(smms: SMMS) -> np.ndarray:
    """Cold-start state: log of a Gaussian bump, or its square root on the
    ball branch.  Working in the parametrization avoids tail underflow."""
    r = smms.grid.r
    if smms.params.ball_branch:
        return 1.0 - (r / smms.grid.scale) ** 2
    return -(r**2)


def minimize(
    smms: SMMS,
    k: float,
    opts: Optional[SolverOptions] = None,
    w0: Optional[RadialField] = None,
    warm_start: bool = False,
) -> MinimizeResult:
    """Projected descent on Q_k over positive radial profiles.

    Cold start is a Gaussian-like bump (ball branch: a boundary-vanishing
    bump); warm_start=True begins from the closed-form extremal family.
    Non-convergence is reported through the result, not raised.
    """
    opts = opts or SolverOptions()
    smms.params.validate_k(k)
    if smms.root is not None:
        root = smms.root
        w0r = None
        if w0 is not None:
            _, w0r = to_root_scale(smms, w0)
        res = minimize(root, k, opts, w0r, warm_start)
        alpha = (smms.m + smms.n - 2.0) / 2.0
        w_back = RadialField(
            smms.grid, np.exp(-alpha * smms.log_factor.values) * res.w_star.values
        )
        return MinimizeResult(
            w_back,
            res.sigma,
            res.iterations,
            res.grad_norm,
            res.converged,
            res.residual_report,
            res.max_accept_increase,
            res.q_history,
        )

    disc = _Discrete(smms, k)
    ball = smms.params.ball_branch
    grid = smms.grid

    if warm_start and w0 is None:
        branch = "ball_like" if ball else "sphere_like"
        _, w0 = dd_extremal(smms.geom, branch)
    if w0 is not None:
        wv = w0.values
        if np.any(wv < 0):
            raise DomainError("initial iterate must be nonnegative")
        if ball:
            x = np.sqrt(wv)
        else:
            if np.any(wv <= 0):
                raise DomainError("initial iterate must be positive off the ball branch")
            x = np.log(wv)
    else:
        x = _default_start_x(smms)

    def w_of(xv: np.ndarray) -> np.ndarray:
        if ball:
            return xv * xv
        with np.errstate(over="ignore"):
            return np.exp(np.minimum(xv, 700.0))

    def normalize_x(xv: np.ndarray) -> np.ndarray:
        om0 = float(disc.nu0 @ w_of(xv) ** disc.exps.q_leb)
        if ball:
            return xv * om0 ** (-0.5 / disc.exps.q_leb)
        return xv - np.log(om0) / disc.exps.q_leb

    x = normalize_x(x)
    w = w_of(x)

    gauge_on = opts.gauge and grid.domain == "half_line" and not ball
    rho_target = None
    if gauge_on:
        rho_target = _half_mass_radius(grid.r, disc.nu0 * w**disc.exps.q_leb)

    j = disc.value(w)
    best_j, best_x = j, x.copy()
    q_history: List[float] = [j]
    max_increase = 0.0
    grad_norm = float("inf")
    iterations = 0
    converged = False
    step = opts.step0
    j_mark = j

    for iterations in range(1, opts.max_iters + 1):
        gw = disc.grad_w(w)
        gx = 2.0 * x * gw if ball else w * gw
        # Sobolev direction conjugated by the parametrization, plus a Jacobi
        # component scaled by the Hessian diagonal.  The Helmholtz solve
        # drives the smooth modes; the Jacobi part keeps the high-frequency
        # modes (whose true curvature carries the extra factor 2Q/E) inside
        # the stable step range.  Both metrics are positive, so their sum
        # preserves descent; the division by w is floored at a small
        # fraction of the bulk scale, where the gradient mass is negligible,
        # and Armijo has the final word.
        with np.errstate(divide="ignore"):
            z = disc.solve(gw) + gw / disc.hess_diag(w)
        if ball:
            floor = 1e-8 * float(np.max(np.abs(x)))
            d = z / (2.0 * np.maximum(np.abs(x), floor) * np.sign(x + (x == 0)))
        else:
            floor = 1e-8 * float(np.max(w))
            d = z / np.maximum(w, floor)
        sq = float(gx @ d)
        if sq <= 0.0:
            # fall back to a plain preconditioned gradient if the conjugated
            # direction loses descent (possible far from the minimum)
            d = disc.solve(gx)
            sq = float(gx @ d)
            if sq <= 0.0:
                break
        grad_norm = float(np.sqrt(sq))
        if grad_norm <= opts.grad_tol:
            converged = True
            break
        cap = opts.direction_cap
        dmax = float(np.max(np.abs(d)))
        if dmax > cap:
            d = d * (cap / dmax)
            sq = float(gx @ d)
        step = min(max(step / opts.backtrack_factor, 1e-10), opts.step0)
        accepted = False
        while step > 1e-16:
            x_new = x - step * d
            w_new = w_of(x_new)
            j_new = disc.value(w_new)
            if np.isfinite(j_new) and j_new <= j - opts.armijo * step * sq:
                accepted = True
                break
            step *= opts.backtrack_factor
        if not accepted:
            break
        max_increase = max(max_increase, j_new - j)
        j = j_new
        x = x_new
        w = w_new
        q_history.append(j)
        if j < best_j:
            best_j, best_x = j, x.copy()
        if gauge_on and iterations % 10 == 0:
            rho = _half_mass_radius(grid.r, disc.nu0 * w**disc.exps.q_leb)
            drift = abs(rho / rho_target - 1.0)
            if drift > opts.gauge_deadband:
                x_try = normalize_x(_dilate_log(grid.r, x, rho / rho_target))
                j_try = disc.value(w_of(x_try))
                if np.isfinite(j_try) and j_try <= j + 1e-12 * abs(j):
                    x = x_try
                    w = w_of(x)
                    j = j_try
        if iterations % 200 == 0:
            # certified descent has reached the float resolution of Q;
            # the terminal stationarity polish takes over from here
            if j_mark - j <= 1e-12 * abs(j):
                break
            j_mark = j

    x_star = normalize_x(best_x)
    w_star = w_of(x_star)
    if not converged:
        # descent has hit the float resolution of Q; finish on the
        # stationarity system, which has no such floor
        w_try, _ = disc.newton_polish(w_star)
        if disc.value(w_try) <= best_j + 1e-10 * abs(best_j):
            w_star = w_try
        om0 = float(disc.nu0 @ w_star**disc.exps.q_leb)
        w_star = w_star * om0 ** (-1.0 / disc.exps.q_leb)
        gw = disc.grad_w(w_star)
        gx = 2.0 * np.sqrt(np.maximum(w_star, 0.0)) * gw if ball else w_star * gw
        d = disc.solve(gx)
        grad_norm = float(np.sqrt(max(gx @ d, 0.0)))
        converged = grad_norm <= opts.grad_tol
    sigma = disc.value(w_star)
    report = _residual_report(smms, k, w_star, disc, opts)
    return MinimizeResult(
        RadialField(grid, w_star),
        sigma,
        iterations,
        grad_norm,
        converged,
        report,
        max_increase,
        np.asarray(q_history),
    )


def _mass_window(smms: SMMS, w: np.ndarray, q_leb: float, nu0: np.ndarray) -> np.ndarray:
    """Interior nodes carrying all but 1e-3 of the omega0 mass."""
    mass = nu0 * w**q_leb
    c = np.cumsum(mass)
    keep = c <= (1.0 - 1e-3) * c[-1]
    if not np.any(keep):
        keep = np.ones_like(keep, dtype=bool)
    return interior_mask(smms.grid) & keep


def _residual_report(
    smms: SMMS, k: float, w: np.ndarray, disc: _Discrete, opts: SolverOptions
) -> Dict[str, float]:
    """Euler-Lagrange residuals, multipliers by both routes, and a seeded
    directional-criticality statistic at the final iterate."""
    m, n = smms.m, smms.n
    grid = smms.grid
    report: Dict[str, float] = {}
    try:
        wpos = np.maximum(w, 1e-150)
        u = RadialField(grid, wpos ** (-2.0 / (m + n - 2.0)))
        cw = cwm_fields(smms, u)
        mult = multipliers_integral(smms, k, u, tail_tol=None, cw=cw)
        mask = _mass_window(smms, w, disc.exps.q_leb, disc.nu0)
        report["lambda_integral"] = mult.lam
        report["mu_integral"] = mult.mu
        report["res_conformal"] = linf(
            el_residual_conformal(smms, k, u, mult, cw=cw), mask
        )
        report["res_measure"] = linf(
            el_residual_measure(smms, k, u, mult, cw=cw), mask
        )
        rr, rt = el_residual_metric(smms, k, u, mult, cw=cw)
        report["res_metric"] = max(linf(rr, mask), linf(rt, mask))
        if smms.geom.is_arclength:
            lamf, muf = tractor_multipliers(smms, k, u)
            report["lambda_tractor"] = float(np.median(lamf.values[mask]))
            report["mu_tractor"] = float(np.median(muf.values[mask]))
    except GnsForgeError as exc:
        report["report_error"] = float("nan")
        report["report_error_message"] = str(exc)  # type: ignore[assignment]

    rng = np.random.default_rng(opts.seed)
    gw = disc.grad_w(w)
    geta = w * gw
    worst = 0.0
    r = grid.r
    span = r[min(len(r) - 1, int(0.9 * len(r)))]
    for _ in range(100):
        c0 = rng.uniform(0.1, 0.9) * min(span, 5.0)
        width = rng.uniform(0.2, 1.0)
        delta = np.exp(-(((r - c0) / width) ** 2))
        norm = float(np.sqrt(delta @ (disc.nu0 * delta)))
        if norm == 0.0:
            continue
        worst = max(worst, abs(float(geta @ delta)) / norm)
    report["directional_derivative"] = worst
    return report


def sweep(smms: SMMS, k_list, opts: Optional[SolverOptions] = None) -> List[SweepRow]:
    """Independent minimize runs over a list of exponents k.

    Rows are computed independently (optionally in parallel, capped by the
    GNS_FORGE_THREADS environment variable); a failing row carries its error
    message and the sweep continues.
    """
    opts = opts or SolverOptions()

    def run(kv: float) -> SweepRow:
        try:
            res = minimize(smms, kv, opts)
            rep = res.residual_report
            return SweepRow(
                kv,
                res.sigma,
                rep.get("res_conformal", float("nan")),
                rep.get("res_measure", float("nan")),
                rep.get("res_metric", float("nan")),
                "" if res.converged else "did not reach grad_tol",
                res,
            )
        except GnsForgeError as exc:
            return SweepRow(
                kv,
                float("nan"),
                float("nan"),
                float("nan"),
                float("nan"),
                f"{type(exc).__name__}: {exc}",
                None,
            )

    threads = int(os.environ.get("GNS_FORGE_THREADS", "1") or "1")
    ks = list(k_list)
    if threads > 1 and len(ks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(run, ks))
    return [run(kv) for kv in ks]
