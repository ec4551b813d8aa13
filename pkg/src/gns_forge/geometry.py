"""Radial model geometries, discretization, quadrature, and weighted operators.

A rotationally symmetric metric is represented as

    g = a(r)^2 dr^2 + f(r)^2 g_{S^{n-1}},

where the lapse a is identically one for the named models (euclidean,
sphere, hyperbolic; warp functions r, sin r, sinh r) and becomes nontrivial
only for conformally rescaled geometries, whose radial coordinate is no
longer arclength.  A smooth metric measure space (SMMS) adds a positive
density v and a dimensional parameter m, for the measure v^m dvol; the
weight function is always derived as phi = -m log v, never stored.

Sign convention: Delta = tr grad^2, so Delta w = w'' + (n-1) w'/r on flat
space.  Radial grids compactify the half line through r = scale * s/(1-s)
with midpoint nodes in s, which excludes both the origin and infinity;
derivatives use three-point stencils on the nonuniform r nodes (exact for
quadratics in r) with one-sided four-point stencils at the two ends.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from functools import cached_property
from typing import Callable, Optional, Tuple

import numpy as np

from .errors import (
    DivergenceError,
    DomainError,
    GridMismatchError,
    ParameterError,
)

__all__ = [
    "GnsParams",
    "RadialGrid",
    "RadialField",
    "WarpedGeometry",
    "SMMS",
    "make_grid",
    "build_geometry",
    "custom_geometry",
    "make_smms",
    "laplacian",
    "weighted_laplacian",
    "scalar_curvature",
    "ricci_eigenvalues",
    "weighted_scalar",
    "bakry_emery_eigenvalues",
    "conformal_rescale",
    "weighted_conformal_laplacian",
    "integrate",
    "sphere_area",
    "interior_mask",
    "linf",
]

MODELS = ("euclidean", "sphere", "hyperbolic", "custom")
DOMAINS = ("half_line", "unit_ball")

DEFAULT_TAIL_TOL = 1e-9


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GnsParams:
    """Dimension n, dimensional parameter m, exponent k.

    Two admissible branches: m >= 0 with k in (0, (m+n+2)/2], or
    m <= -n-2 with k in (0, -2m/(n-2)].  Either way m+n-2 != 0.
    """

    n: int
    m: float
    k: float

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 3:
            raise ParameterError(f"dimension n must be an integer >= 3, got {self.n}")
        if self.m + self.n - 2 == 0:
            raise ParameterError("m + n - 2 must be nonzero")
        if not (self.m >= 0 or self.m <= -self.n - 2):
            raise ParameterError(
                f"m = {self.m} outside both branches: need m >= 0 or m <= -(n+2) = {-self.n - 2}"
            )
        self.validate_k(self.k)

    @property
    def ball_branch(self) -> bool:
        return self.m < 0

    def k_max(self) -> float:
        if self.m >= 0:
            return (self.m + self.n + 2) / 2.0
        return -2.0 * self.m / (self.n - 2)

    def validate_k(self, k: float) -> None:
        hi = self.k_max()
        if not (0.0 < k <= hi):
            raise ParameterError(f"k = {k} outside the admissible range (0, {hi}]")

    def with_k(self, k: float) -> "GnsParams":
        return GnsParams(self.n, self.m, k)


# ---------------------------------------------------------------------------
# grids and differentiation stencils
# ---------------------------------------------------------------------------


def _lagrange_deriv_weights(x: np.ndarray, x0: float, order: int) -> np.ndarray:
    """Weights w with sum_j w[j] p(x[j]) = p^(order)(x0) for deg(p) < len(x).

    The solve runs in coordinates scaled to unit spread; otherwise the
    Vandermonde system is badly conditioned for both very fine and very
    coarse node spacings.
    """
    k = len(x)
    scale = float(np.max(np.abs(x - x0)))
    xi = (x - x0) / scale
    a = np.vander(xi, k, increasing=True).T
    rhs = np.zeros(k)
    rhs[order] = math.factorial(order)
    return np.linalg.solve(a, rhs) / scale**order


@dataclass(eq=False)
class RadialGrid:
    """Compactified radial grid with midpoint quadrature weights.

    quad_weight implements integration in dr (the s-space Jacobian is folded
    in), so grid.integrate_dr(values) approximates the integral of the
    sampled function over the physical radial domain.
    """

    domain: str
    N: int
    scale: float
    s: np.ndarray
    r: np.ndarray
    jacobian: np.ndarray
    quad_weight: np.ndarray

    def __post_init__(self):
        r = self.r
        a = r[1:-1] - r[:-2]
        b = r[2:] - r[1:-1]
        self._d1m = -b / (a * (a + b))
        self._d10 = (b - a) / (a * b)
        self._d1p = a / (b * (a + b))
        self._d2m = 2.0 / (a * (a + b))
        self._d20 = -2.0 / (a * b)
        self._d2p = 2.0 / (b * (a + b))
        # Boundary rows differentiate in the uniform s coordinate and convert
        # through the analytic map Jacobian: a one-sided polynomial stencil in
        # r is useless at the outermost compactified node (the last cell spans
        # a decade of radius), while decaying profiles stay smooth in s.
        s = self.s
        w1L = _lagrange_deriv_weights(s[:4], s[0], 1)
        w2L = _lagrange_deriv_weights(s[:4], s[0], 2)
        w1R = _lagrange_deriv_weights(s[-4:], s[-1], 1)
        w2R = _lagrange_deriv_weights(s[-4:], s[-1], 2)
        if self.domain == "half_line":
            jsL = 2.0 * self.scale / (1.0 - s[0]) ** 3
            jsR = 2.0 * self.scale / (1.0 - s[-1]) ** 3
        else:
            jsL = jsR = 0.0
        jL, jR = self.jacobian[0], self.jacobian[-1]
        self._d1L = w1L / jL
        self._d1R = w1R / jR
        self._d2L = (w2L - w1L * (jsL / jL)) / jL**2
        self._d2R = (w2R - w1R * (jsR / jR)) / jR**2

    def d1(self, values: np.ndarray) -> np.ndarray:
        out = np.empty_like(values)
        out[1:-1] = (
            self._d1m * values[:-2] + self._d10 * values[1:-1] + self._d1p * values[2:]
        )
        out[0] = self._d1L @ values[:4]
        out[-1] = self._d1R @ values[-4:]
        return out

    def d2(self, values: np.ndarray) -> np.ndarray:
        out = np.empty_like(values)
        out[1:-1] = (
            self._d2m * values[:-2] + self._d20 * values[1:-1] + self._d2p * values[2:]
        )
        out[0] = self._d2L @ values[:4]
        out[-1] = self._d2R @ values[-4:]
        return out

    def d1_matrix(self):
        """First-derivative stencil as a sparse matrix (solver use)."""
        import scipy.sparse as sp

        n = self.N
        rows, cols, vals = [], [], []
        for j in range(4):
            rows.append(0)
            cols.append(j)
            vals.append(self._d1L[j])
            rows.append(n - 1)
            cols.append(n - 4 + j)
            vals.append(self._d1R[j])
        i = np.arange(1, n - 1)
        rows.extend(np.repeat(i, 3))
        cols.extend(np.stack([i - 1, i, i + 1], axis=1).ravel())
        vals.extend(np.stack([self._d1m, self._d10, self._d1p], axis=1).ravel())
        return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))

    def integrate_dr(self, values: np.ndarray) -> float:
        return float(np.dot(self.quad_weight, values))


def make_grid(domain: str, N: int, scale: float = 1.0) -> RadialGrid:
    """Midpoint grid on (0, infinity) (half_line) or (0, scale) (unit_ball).

    half_line maps r = scale * s/(1-s); unit_ball maps r = scale * s.  The
    nodes sit at s_i = (i + 1/2)/N, so the origin (and infinity) are never
    sampled.
    """
    if domain not in DOMAINS:
        raise ParameterError(f"unknown domain {domain!r}; expected one of {DOMAINS}")
    if int(N) != N or N < 16:
        raise ParameterError(f"N must be an integer >= 16, got {N}")
    if not (scale > 0):
        raise ParameterError(f"scale must be positive, got {scale}")
    N = int(N)
    s = (np.arange(N) + 0.5) / N
    if domain == "half_line":
        r = scale * s / (1.0 - s)
        jac = scale / (1.0 - s) ** 2
    else:
        r = scale * s
        jac = np.full(N, float(scale))
    return RadialGrid(domain, N, float(scale), s, r, jac, jac / N)


# ---------------------------------------------------------------------------
# radial fields
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class RadialField:
    """A scalar function of r sampled on a grid."""

    grid: RadialGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.N,):
            raise GridMismatchError(
                f"field has shape {self.values.shape}, grid has {self.grid.N} nodes"
            )
        if not np.all(np.isfinite(self.values)):
            raise DomainError("field values must be finite at every node")

    @classmethod
    def constant(cls, grid: RadialGrid, c: float) -> "RadialField":
        return cls(grid, np.full(grid.N, float(c)))

    @classmethod
    def from_function(cls, grid: RadialGrid, fn: Callable[[np.ndarray], np.ndarray]) -> "RadialField":
        return cls(grid, np.asarray(fn(grid.r), dtype=float))

    def _values_of(self, other):
        if isinstance(other, RadialField):
            if other.grid is not self.grid:
                raise GridMismatchError("fields live on different grids")
            return other.values
        return other

    def __add__(self, other):
        return RadialField(self.grid, self.values + self._values_of(other))

    __radd__ = __add__

    def __sub__(self, other):
        return RadialField(self.grid, self.values - self._values_of(other))

    def __rsub__(self, other):
        return RadialField(self.grid, self._values_of(other) - self.values)

    def __mul__(self, other):
        return RadialField(self.grid, self.values * self._values_of(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return RadialField(self.grid, self.values / self._values_of(other))

    def __rtruediv__(self, other):
        return RadialField(self.grid, self._values_of(other) / self.values)

    def __pow__(self, p):
        return RadialField(self.grid, self.values ** p)

    def __neg__(self):
        return RadialField(self.grid, -self.values)


def _vals(x) -> np.ndarray:
    return x.values if isinstance(x, RadialField) else np.asarray(x, dtype=float)


def sphere_area(n: int) -> float:
    """Area of the unit (n-1)-sphere."""
    return 2.0 * math.pi ** (n / 2.0) / math.gamma(n / 2.0)


def interior_mask(
    grid: RadialGrid,
    frac: float = 0.05,
    r_lo: Optional[float] = None,
    r_hi: Optional[float] = None,
) -> np.ndarray:
    """Node mask excluding a fraction of the parameter range at each end.

    The cut is made in s, so the retained physical window [r(frac), r(1-frac)]
    is independent of resolution; optional r bounds tighten it further.
    """
    mask = (grid.s >= frac) & (grid.s <= 1.0 - frac)
    if r_lo is not None:
        mask &= grid.r >= r_lo
    if r_hi is not None:
        mask &= grid.r <= r_hi
    return mask


def linf(x, mask: Optional[np.ndarray] = None) -> float:
    v = _vals(x)
    if mask is not None:
        v = v[mask]
    return float(np.max(np.abs(v))) if v.size else 0.0


# ---------------------------------------------------------------------------
# warped geometries
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class WarpedGeometry:
    """g = lapse^2 dr^2 + f^2 g_{S^{n-1}} on a radial grid.

    For the named models the warp and its derivatives are closed-form and the
    curvature fields are exact constants; custom geometries (typically the
    output of conformal_rescale) evaluate curvature from the stored warp and
    lapse data.
    """

    params: GnsParams
    model: str
    grid: RadialGrid
    f: RadialField
    fp: RadialField
    fpp: RadialField
    lapse: RadialField
    lapse_p: RadialField

    def __post_init__(self):
        if self.model not in MODELS:
            raise ParameterError(f"unknown model {self.model!r}")
        if np.any(self.f.values <= 0):
            raise DomainError("warp function must be positive on the domain interior")

    @property
    def n(self) -> int:
        return self.params.n

    @property
    def is_arclength(self) -> bool:
        return bool(np.all(self.lapse.values == 1.0))

    @cached_property
    def _curvature(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(ric_rad, ric_tan, R) as arrays; closed-form for named models."""
        n = self.n
        if self.model == "euclidean":
            z = np.zeros(self.grid.N)
            return z, z, z.copy()
        if self.model == "sphere":
            c = np.full(self.grid.N, float(n - 1))
            return c, c.copy(), np.full(self.grid.N, float(n * (n - 1)))
        if self.model == "hyperbolic":
            c = np.full(self.grid.N, -float(n - 1))
            return c, c.copy(), np.full(self.grid.N, -float(n * (n - 1)))
        f, fp, fpp = self.f.values, self.fp.values, self.fpp.values
        a, ap = self.lapse.values, self.lapse_p.values
        f_tt = fpp / a**2 - fp * ap / a**3
        rad = -(n - 1) * f_tt / f
        tan = -f_tt / f + (n - 2) * (1.0 - (fp / a) ** 2) / f**2
        return rad, tan, rad + (n - 1) * tan

    @cached_property
    def vol_density(self) -> np.ndarray:
        """Volume density against dr: area(S^{n-1}) * lapse * f^(n-1)."""
        return (
            sphere_area(self.n)
            * self.lapse.values
            * self.f.values ** (self.n - 1)
        )


def build_geometry(
    params: GnsParams,
    model: str,
    N: int = 4096,
    scale: float = 1.0,
    domain: Optional[str] = None,
) -> WarpedGeometry:
    """Named model geometry with a freshly built grid.

    euclidean defaults to the compactified half line and also admits
    domain="unit_ball" for ball-supported work; the sphere always lives on
    r in (0, pi).  The hyperbolic model is sampled on the bounded interval
    r in (0, 16*scale): sinh overflows past r ~ 700 on the compactified half
    line, and every hyperbolic check in the suite is pointwise at moderate
    radius.
    """
    if model == "sphere":
        grid = make_grid("unit_ball", N, math.pi)
        f = np.sin(grid.r)
        fp = np.cos(grid.r)
        fpp = -np.sin(grid.r)
    elif model == "hyperbolic":
        grid = make_grid("unit_ball", N, 16.0 * scale)
        f = np.sinh(grid.r)
        fp = np.cosh(grid.r)
        fpp = np.sinh(grid.r)
    elif model == "euclidean":
        grid = make_grid(domain or "half_line", N, scale)
        f = grid.r.copy()
        fp = np.ones(grid.N)
        fpp = np.zeros(grid.N)
    else:
        raise ParameterError(f"build_geometry expects a named model, got {model!r}")
    one = np.ones(grid.N)
    zero = np.zeros(grid.N)
    return WarpedGeometry(
        params,
        model,
        grid,
        RadialField(grid, f),
        RadialField(grid, fp),
        RadialField(grid, fpp),
        RadialField(grid, one),
        RadialField(grid, zero),
    )


def custom_geometry(
    params: GnsParams,
    grid: RadialGrid,
    f,
    fp=None,
    fpp=None,
    lapse=None,
    lapse_p=None,
) -> WarpedGeometry:
    """Custom warped geometry; missing derivative data is filled in by
    finite differences of the supplied fields."""
    fv = _vals(f)
    fpv = _vals(fp) if fp is not None else grid.d1(fv)
    fppv = _vals(fpp) if fpp is not None else grid.d2(fv)
    av = _vals(lapse) if lapse is not None else np.ones(grid.N)
    apv = _vals(lapse_p) if lapse_p is not None else (
        grid.d1(av) if lapse is not None else np.zeros(grid.N)
    )
    return WarpedGeometry(
        params,
        "custom",
        grid,
        RadialField(grid, fv),
        RadialField(grid, fpv),
        RadialField(grid, fppv),
        RadialField(grid, av),
        RadialField(grid, apv),
    )


# ---------------------------------------------------------------------------
# smooth metric measure spaces
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class SMMS:
    """The triple (M, g, v^m dvol) on a radial geometry.

    When produced by conformal_rescale, `root` and `log_factor` record the
    arclength representative and the accumulated conformal factor; scale
    covariant quantities (the GNS functional, its energy) are evaluated by
    routing through that representative, which keeps conformal invariance
    exact at rounding level.
    """

    geom: WarpedGeometry
    v: RadialField
    m: float
    root: Optional["SMMS"] = None
    log_factor: Optional[RadialField] = None

    def __post_init__(self):
        if self.v.grid is not self.geom.grid:
            raise GridMismatchError("density and geometry live on different grids")
        if np.any(self.v.values <= 0):
            raise DomainError("density v must be positive at every node")
        if self.m == 0 and np.ptp(self.v.values) > 1e-13 * max(
            1.0, float(np.max(np.abs(self.v.values)))
        ):
            raise DomainError("m = 0 requires a constant density v")

    @property
    def params(self) -> GnsParams:
        return self.geom.params

    @property
    def n(self) -> int:
        return self.geom.params.n

    @property
    def grid(self) -> RadialGrid:
        return self.geom.grid

    def log_v(self) -> np.ndarray:
        return np.log(self.v.values)


def make_smms(geom: WarpedGeometry, v: Optional[RadialField] = None) -> SMMS:
    """SMMS over geom with density v (default 1) and m from geom.params."""
    if v is None:
        v = RadialField.constant(geom.grid, 1.0)
    return SMMS(geom, v, geom.params.m)


# ---------------------------------------------------------------------------
# differential operators
# ---------------------------------------------------------------------------


def arc_derivative(geom: WarpedGeometry, w) -> np.ndarray:
    """dw/dt, the derivative against arclength (d/dr over the lapse)."""
    return geom.grid.d1(_vals(w)) / geom.lapse.values


def gradient_squared(geom: WarpedGeometry, w) -> np.ndarray:
    g = arc_derivative(geom, w)
    return g * g


def hessian_eigenvalues(geom: WarpedGeometry, w) -> Tuple[np.ndarray, np.ndarray]:
    """(radial, tangential) eigenvalues of the Hessian of a radial function."""
    wv = _vals(w)
    a = geom.lapse.values
    wp = geom.grid.d1(wv)
    wpp = geom.grid.d2(wv)
    rad = wpp / a**2 - wp * geom.lapse_p.values / a**3
    tan = geom.fp.values * wp / (a**2 * geom.f.values)
    return rad, tan


def divergence(geom: WarpedGeometry, y) -> np.ndarray:
    """Divergence of the radial vector field with arclength component y."""
    yv = _vals(y)
    return (
        geom.grid.d1(yv) + (geom.n - 1) * geom.fp.values / geom.f.values * yv
    ) / geom.lapse.values


def _laplacian_values(geom: WarpedGeometry, wv: np.ndarray) -> np.ndarray:
    rad, tan = hessian_eigenvalues(geom, wv)
    return rad + (geom.n - 1) * tan


def laplacian(geom: WarpedGeometry, w: RadialField) -> RadialField:
    """Laplace-Beltrami operator on radial functions."""
    if w.grid is not geom.grid:
        raise GridMismatchError("field and geometry live on different grids")
    return RadialField(geom.grid, _laplacian_values(geom, w.values))


def scalar_curvature(geom: WarpedGeometry) -> RadialField:
    rad, tan, R = geom._curvature
    return RadialField(geom.grid, R.copy())


def ricci_eigenvalues(geom: WarpedGeometry) -> Tuple[RadialField, RadialField]:
    rad, tan, R = geom._curvature
    return RadialField(geom.grid, rad.copy()), RadialField(geom.grid, tan.copy())


def weighted_laplacian(smms: SMMS, w: RadialField) -> RadialField:
    """Delta_phi w = Delta w - <grad phi, grad w> with phi = -m log v."""
    if w.grid is not smms.grid:
        raise GridMismatchError("field and SMMS live on different grids")
    geom = smms.geom
    lvp = geom.grid.d1(smms.log_v())
    wp = geom.grid.d1(w.values)
    drift = smms.m * lvp * wp / geom.lapse.values ** 2
    return RadialField(geom.grid, _laplacian_values(geom, w.values) + drift)


def weighted_scalar(smms: SMMS) -> RadialField:
    """R_phi^m = R + 2 Delta phi - (m+1)/m |grad phi|^2, phi = -m log v.

    Recast through log v the 1/m cancels, so m = 0 (with constant v) cleanly
    reduces to the ordinary scalar curvature.
    """
    geom = smms.geom
    m = smms.m
    _, _, R = geom._curvature
    if m == 0:
        return RadialField(geom.grid, R.copy())
    lv = smms.log_v()
    dlv = _laplacian_values(geom, lv)
    gsq = gradient_squared(geom, lv)
    return RadialField(geom.grid, R - 2.0 * m * dlv - m * (m + 1.0) * gsq)


def bakry_emery_eigenvalues(smms: SMMS) -> Tuple[RadialField, RadialField]:
    """Eigenvalues of Ric_phi^m = Ric + hess phi - (1/m) dphi x dphi."""
    geom = smms.geom
    m = smms.m
    rad0, tan0, _ = geom._curvature
    if m == 0:
        return RadialField(geom.grid, rad0.copy()), RadialField(geom.grid, tan0.copy())
    lv = smms.log_v()
    h_rad, h_tan = hessian_eigenvalues(geom, lv)
    gsq = gradient_squared(geom, lv)
    rad = rad0 - m * h_rad - m * gsq
    tan = tan0 - m * h_tan
    return RadialField(geom.grid, rad), RadialField(geom.grid, tan)


def weighted_conformal_laplacian(smms: SMMS, w: RadialField) -> RadialField:
    """L_phi^m w = -Delta_phi w + (m+n-2)/(4(m+n-1)) R_phi^m w."""
    m, n = smms.m, smms.n
    if m + n - 1 == 0:
        raise ParameterError("m + n - 1 must be nonzero for the conformal Laplacian")
    c = (m + n - 2.0) / (4.0 * (m + n - 1.0))
    return RadialField(
        smms.grid,
        -weighted_laplacian(smms, w).values + c * weighted_scalar(smms).values * w.values,
    )


def conformal_rescale(smms: SMMS, s: RadialField) -> SMMS:
    """The SMMS (e^{2s} g, (e^s v)^m dvol) over the same grid.

    Warp and lapse data are scaled by the product rule, so rescaling by s and
    then by -s restores the original fields exactly.  At m = 0 the measure is
    the bare volume element and v is immaterial, so it is left untouched.
    """
    if s.grid is not smms.grid:
        raise GridMismatchError("conformal factor lives on a different grid")
    geom = smms.geom
    grid = geom.grid
    sv = s.values
    sp = grid.d1(sv)
    spp = grid.d2(sv)
    es = np.exp(sv)
    f, fp, fpp = geom.f.values, geom.fp.values, geom.fpp.values
    a, ap = geom.lapse.values, geom.lapse_p.values
    new_geom = WarpedGeometry(
        geom.params,
        "custom",
        grid,
        RadialField(grid, es * f),
        RadialField(grid, es * (sp * f + fp)),
        RadialField(grid, es * ((spp + sp * sp) * f + 2.0 * sp * fp + fpp)),
        RadialField(grid, es * a),
        RadialField(grid, es * (sp * a + ap)),
    )
    new_v = RadialField(grid, es * smms.v.values) if smms.m != 0 else smms.v
    if smms.root is not None:
        root = smms.root
        total = RadialField(grid, smms.log_factor.values + sv)
    else:
        root = smms
        total = s
    return SMMS(new_geom, new_v, smms.m, root=root, log_factor=total)


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------


def _tail_estimate(grid: RadialGrid, contrib: np.ndarray, name: str) -> float:
    """Estimated relative mass beyond the grid, from the last r-decade.

    Fits the decay rate of the geometric integrand over the last decade of r
    and extrapolates past the outermost node; growing or sub-integrable
    behaviour yields an infinite estimate.
    """
    total = float(np.sum(contrib))
    if total <= 0.0:
        return 0.0
    decade = grid.r >= grid.r[-1] / 10.0
    dec = contrib[decade]
    if dec.size < 4:
        return 0.0
    third = max(1, dec.size // 3)
    lead, trail = float(np.mean(dec[:third])), float(np.mean(dec[-third:]))
    if trail <= 1e-300 * total:
        return 0.0
    if trail >= lead:
        return float("inf")
    # per-node contribution ~ h * jac * I(r); slope of I * vol_density itself
    dens = contrib / grid.quad_weight
    dd = dens[decade]
    r = grid.r[decade]
    good = dd > 0
    if np.count_nonzero(good) < 4:
        return 0.0
    p = -np.polyfit(np.log(r[good]), np.log(dd[good]), 1)[0]
    if p <= 1.05:
        return float("inf")
    beyond = float(dd[-1]) * grid.r[-1] / (p - 1.0)
    return beyond / total


def integrate(
    smms_or_geom,
    integrand,
    tail_tol: Optional[float] = DEFAULT_TAIL_TOL,
    name: str = "integrand",
) -> Tuple[float, float]:
    """Volume integral over M and its estimated relative tail.

    Integrates integrand * dvol = area(S^{n-1}) * integrand * lapse * f^{n-1} dr
    with the grid's composite midpoint rule.  On the half line, the decay of
    the integrand over the last decade of r is checked against tail_tol
    (growing or non-integrable behaviour estimates as infinite);
    tail_tol=None records the tail estimate without enforcing anything, for
    diagnostic contexts where slow tails are reported rather than fatal.
    """
    geom = smms_or_geom.geom if isinstance(smms_or_geom, SMMS) else smms_or_geom
    vals = _vals(integrand)
    weighted = vals * geom.vol_density
    value = geom.grid.integrate_dr(weighted)
    tail = 0.0
    if geom.grid.domain == "half_line":
        contrib = geom.grid.quad_weight * np.abs(weighted)
        tail = _tail_estimate(geom.grid, contrib, name)
        if tail_tol is not None and tail > tail_tol:
            raise DivergenceError(name, tail)
    return value, tail
