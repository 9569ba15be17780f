"""Smoothed max-selector partition functions and their calculus.

The partition is built from four weighted candidates on the quadrant,

    c0 = e0,   c1 = (1+e1) u1,   c2 = (1+e2) u2,   c3 = (1+e3) |u|,

averaged over small admissible parameter windows with smooth unit-mass
bump weights.  Piece i collects candidate i exactly where it strictly
dominates the other three, so the pieces sum to the averaged maximum;
the total is convex on the quadrant while each piece alone is not.  On
the cylinders only c0 and c_k compete and piece k carries the gated
linear growth; off the product ends everything vanishes.

Admissible windows: e0 in (2, 3), e1 and e2 in (2 eps, 3 eps), e3 in
(2 eps^2, 3 eps^2).  The source for this construction states both the
eps and the eps^2 window for e1, e2; the assignment above is the one
that keeps the cone ordering (1+e2) u2 < (1+e1) u1 on X_1 consistent.

All derivative fields are evaluated analytically from the cumulative-
product form of each piece (one remaining quadrature per piece); finite
differences appear only as test oracles.  The averaged maximum is exact
off the measure-zero tie hyperplanes in parameter space; sites within
1e-12 of a tie are nudged by one ulp and the event is logged.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import chebyshev as cheb

from .geometry import CornerModel, REGION_CYL1, REGION_CYL2, REGION_QUADRANT
from .operators import kappa

__all__ = [
    "BumpProfile",
    "YafaevConfig",
    "YafaevField",
    "cone_membership",
    "g_raw",
    "quadrant_fields",
    "cylinder_fields",
    "scaled_quadrant_fields",
    "scaled_cylinder_fields",
    "evaluate_field",
    "homogeneity_audit",
    "convexity_audit",
    "support_exclusion_audit",
    "hessian_psd_audit",
    "minimum_outside_audit",
    "derivative_bounds_audit",
    "hessian_domination",
    "export_field_csv",
]

logger = logging.getLogger(__name__)

TIE_TOL = 1e-12
_CHEB_DEGREE = 160


def _mollifier(x):
    out = np.zeros_like(x)
    inside = np.abs(x) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - x[inside] ** 2))
    return out


def _mollifier_series():
    """Chebyshev series of the mollifier and its normalized cumulative."""
    nodes = np.cos(np.pi * np.arange(_CHEB_DEGREE + 1) / _CHEB_DEGREE)
    vals = _mollifier(nodes)
    series = cheb.chebfit(nodes, vals, _CHEB_DEGREE)
    cumulative = cheb.chebint(series)
    lo = cheb.chebval(-1.0, cumulative)
    hi = cheb.chebval(1.0, cumulative)
    return series, cumulative, lo, hi - lo


_M_SERIES, _M_CUM, _M_CUM_LO, _M_MASS = _mollifier_series()
_M_DER = cheb.chebder(_M_SERIES)
_M_XCUM = cheb.chebint(cheb.chebmulx(_M_SERIES))
_M_XCUM_LO = cheb.chebval(-1.0, _M_XCUM)


@dataclass(frozen=True)
class BumpProfile:
    """Unit-mass C-infinity bump on (lo, hi) with exact cumulative calculus.

    The cumulative, density and density derivative all come from one
    Chebyshev series of the mollifier, so cumulative' == density to
    machine precision (finite-difference tests rely on this).
    """

    lo: float
    hi: float

    def _x(self, v):
        return (2.0 * np.asarray(v, dtype=float) - self.lo - self.hi) / (self.hi - self.lo)

    def cumulative(self, v):
        x = np.clip(self._x(v), -1.0, 1.0)
        return (cheb.chebval(x, _M_CUM) - _M_CUM_LO) / _M_MASS

    def density(self, v):
        x = self._x(v)
        out = np.zeros_like(x)
        inside = np.abs(x) < 1.0
        out[inside] = cheb.chebval(x[inside], _M_SERIES)
        return out / _M_MASS * (2.0 / (self.hi - self.lo))

    def density_prime(self, v):
        x = self._x(v)
        out = np.zeros_like(x)
        inside = np.abs(x) < 1.0
        out[inside] = cheb.chebval(x[inside], _M_DER)
        return out / _M_MASS * (2.0 / (self.hi - self.lo)) ** 2

    def rule(self, q: int):
        """Gauss-Legendre nodes on (lo, hi), weights carrying the density."""
        x, w = np.polynomial.legendre.leggauss(q)
        nodes = 0.5 * (self.hi - self.lo) * x + 0.5 * (self.hi + self.lo)
        weights = w * 0.5 * (self.hi - self.lo) * self.density(nodes)
        return nodes, weights

    def first_moment(self, v):
        """integral of e' density(e') de' from lo to v, analytic."""
        x = np.clip(self._x(v), -1.0, 1.0)
        mid = 0.5 * (self.lo + self.hi)
        hw = 0.5 * (self.hi - self.lo)
        x1 = (cheb.chebval(x, _M_XCUM) - _M_XCUM_LO) / _M_MASS
        return mid * self.cumulative(v) + hw * x1


@dataclass(frozen=True)
class YafaevConfig:
    """Parameter windows, bump profiles and quadrature for the partition."""

    eps: float = 0.1
    delta: float = 0.6
    q: int = 80
    bumps: tuple = field(default=None, repr=False)
    rules: tuple = field(default=None, repr=False)
    mu1: float = field(default=None)
    mu2: float = field(default=None)
    eps0_mean: float = field(default=None)
    R2: float = field(default=None)

    def __post_init__(self):
        if self.q < 4:
            raise ValueError("quadrature order below 4 is rejected (underflow of the bump mass)")
        if not (0.0 < self.eps < 0.2):
            raise ValueError("eps must lie in (0, 0.2) for the cone lemmas to hold")
        if not (1.0 / 3.0 < self.delta < 1.0):
            raise ValueError("scaling exponent delta must lie in (1/3, 1)")
        e = self.eps
        bumps = (
            BumpProfile(2.0, 3.0),
            BumpProfile(2.0 * e, 3.0 * e),
            BumpProfile(2.0 * e, 3.0 * e),
            BumpProfile(2.0 * e * e, 3.0 * e * e),
        )
        rules = tuple(b.rule(self.q) for b in bumps)
        object.__setattr__(self, "bumps", bumps)
        object.__setattr__(self, "rules", rules)
        n1, w1 = rules[1]
        n2, w2 = rules[2]
        n0, w0 = rules[0]
        object.__setattr__(self, "mu1", float(w1 @ (1.0 + n1)))
        object.__setattr__(self, "mu2", float(w2 @ (1.0 + n2)))
        object.__setattr__(self, "eps0_mean", float(w0 @ n0))
        object.__setattr__(self, "R2", self._solve_r2())

    def _solve_r2(self) -> float:
        lo, hi = 0.5, 4.0
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            val = cylinder_fields(np.array([mid]), 1, self, order=0)["g"][0]
            if val >= 1.0:
                hi = mid
            else:
                lo = mid
        return hi

    def saturation_radius(self) -> float:
        """Smallest coordinate beyond which the e0 gate is fully open."""
        node_min = self.rules[1][0].min()
        return 3.0 / (1.0 + node_min)


# ---------------------------------------------------------------------
# raw (fixed parameter tuple) evaluator


def cone_membership(region: str, u1, u2, i: int, eps: float) -> bool:
    """Membership of X_i(eps): the full cylinder i plus the quadrant cone."""
    if i not in (1, 2):
        raise ValueError("cone index must be 1 or 2")
    if region == "cyl1":
        return i == 1
    if region == "cyl2":
        return i == 2
    if region == "x0":
        return False
    u = np.hypot(u1, u2)
    ui = u1 if i == 1 else u2
    return bool(ui > (1.0 - eps) * u)


def _nudge(value: float) -> float:
    return float(np.nextafter(value, np.inf))


def g_raw(region: str, coords, eps_tuple, piece: int | None = None):
    """Max-selector pieces at one point for a fixed parameter tuple.

    Returns the array [g0, g1, g2, g3] (or one entry when ``piece`` is
    given).  Ties between candidates within 1e-12 relative are resolved
    by nudging the coordinates one ulp upward (logged).
    """
    e0, e1, e2, e3 = eps_tuple
    out = np.zeros(4)
    if region == "x0":
        return out if piece is None else out[piece]
    if region in ("cyl1", "cyl2"):
        k = 1 if region == "cyl1" else 2
        u = float(coords[0])
        ck = (1.0 + (e1 if k == 1 else e2)) * u
        if abs(ck - e0) <= TIE_TOL * max(abs(ck), abs(e0)):
            logger.info("tie nudge on %s at u=%r", region, u)
            u = _nudge(u)
            ck = (1.0 + (e1 if k == 1 else e2)) * u
        if ck >= e0:
            out[k] = ck
        return out if piece is None else out[piece]
    u1, u2 = float(coords[0]), float(coords[1])
    for _ in range(3):
        rho = np.hypot(u1, u2)
        cand = np.array([e0, (1.0 + e1) * u1, (1.0 + e2) * u2, (1.0 + e3) * rho])
        order = np.argsort(cand)
        if cand[order[-1]] - cand[order[-2]] > TIE_TOL * max(cand[order[-1]], 1.0):
            break
        logger.info("tie nudge on quadrant at (%r, %r)", u1, u2)
        u1, u2 = _nudge(u1), _nudge(u2)
    winner = int(np.argmax(cand))
    out[winner] = cand[winner]
    return out if piece is None else out[piece]


# ---------------------------------------------------------------------
# regularized pieces: cumulative-product forms with analytic derivatives


def _product_chain(pref, pref_g, pref_h, factors, order):
    """Value/gradient/Hessian of pref * prod_j Phi(a_j) for three factors.

    ``factors`` rows are (Phi, phi, phi', a_grad, a_hess); all scalars have
    shape S, gradients S + (2,), Hessians S + (2, 2).
    """
    P0, p0, pp0, a0g, a0h = factors[0]
    P1, p1, pp1, a1g, a1h = factors[1]
    P2, p2, pp2, a2g, a2h = factors[2]
    P01, P02, P12 = P0 * P1, P0 * P2, P1 * P2
    P = P0 * P12
    val = pref * P
    if order == 0:
        return val, None, None

    def g1(x):
        return x[..., None]

    def g2(x):
        return x[..., None, None]

    S = g1(p0 * P12) * a0g + g1(p1 * P02) * a1g + g1(p2 * P01) * a2g
    grad = pref_g * g1(P) + g1(pref) * S
    if order == 1:
        return val, grad, None

    def outer(x, y):
        return x[..., :, None] * y[..., None, :]

    hess = pref_h * g2(P) + outer(pref_g, S) + outer(S, pref_g)
    core = (
        g2(P12) * (g2(pp0) * outer(a0g, a0g) + g2(p0) * a0h)
        + g2(P02) * (g2(pp1) * outer(a1g, a1g) + g2(p1) * a1h)
        + g2(P01) * (g2(pp2) * outer(a2g, a2g) + g2(p2) * a2h)
        + g2(p0 * p1 * P2) * (outer(a0g, a1g) + outer(a1g, a0g))
        + g2(p0 * p2 * P1) * (outer(a0g, a2g) + outer(a2g, a0g))
        + g2(p1 * p2 * P0) * (outer(a1g, a2g) + outer(a2g, a1g))
    )
    hess = hess + g2(pref) * core
    return val, grad, hess


def _bump_eval(bump, arg, order):
    Phi = bump.cumulative(arg)
    phi = bump.density(arg) if order >= 1 else 0.0
    phip = bump.density_prime(arg) if order >= 2 else 0.0
    return Phi, phi, phip


_GL_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _gl(q: int):
    if q not in _GL_CACHE:
        _GL_CACHE[q] = np.polynomial.legendre.leggauss(q)
    return _GL_CACHE[q]


def _segment_bounds(lo, hi, cuts):
    """Per-site sorted segment bounds [lo, clipped cuts..., hi]."""
    S = cuts[0].shape
    bounds = np.empty(S + (len(cuts) + 2,))
    bounds[..., 0] = lo
    bounds[..., -1] = hi
    for i, c in enumerate(cuts):
        bounds[..., i + 1] = np.clip(c, lo, hi)
    bounds.sort(axis=-1)
    return bounds


def _piece_integral(own_bump, cuts, pref_base, factors, q, order):
    """Integrate m(e) * B(u) * prod Phi(m(e) C_j(u) + shift_j) de segmentwise.

    m(e) is the affine node weight (1 + e, or e for the shifted piece 0
    encoded by passing pref shift); every argument is linear in e, so
    gradients and Hessians reuse the base-coefficient derivatives.
    ``factors`` rows: (bump, C, C_grad, C_hess, shift).
    ``pref_base``: (B, B_grad, B_hess, m_kind) with m_kind 'e' or '1+e'.
    Integration segments cut at the per-site window preimages ``cuts``.
    """
    B, Bg, Bh, m_kind = pref_base
    S = B.shape
    bounds = _segment_bounds(own_bump.lo, own_bump.hi, cuts)
    xg, wg = _gl(q)
    val = np.zeros(S)
    grad = np.zeros(S + (2,)) if order >= 1 else None
    hess = np.zeros(S + (2, 2)) if order >= 2 else None
    for s in range(bounds.shape[-1] - 1):
        lo_s = bounds[..., s]
        hi_s = bounds[..., s + 1]
        half = 0.5 * (hi_s - lo_s)
        live = half > 1e-300
        if not live.any():
            continue
        # classify each gate on the segment; arguments are increasing in e,
        # so the endpoint values decide zero / saturated / active exactly.
        m_lo = lo_s if m_kind == "e" else 1.0 + lo_s
        m_hi = hi_s if m_kind == "e" else 1.0 + hi_s
        gated = np.zeros(S, dtype=bool)  # some factor vanishes on the segment
        transitional = np.zeros(S, dtype=bool)  # some factor is mid-window
        for bump, C, _, _, shift in factors:
            a_lo = m_lo * C + shift
            a_hi = m_hi * C + shift
            gated |= a_hi <= bump.lo
            transitional |= (a_hi > bump.lo) & (a_lo < bump.hi)
        saturated = live & ~gated & ~transitional
        if saturated.any():
            # all gates open: integrate m(e) * density analytically
            fm = own_bump.first_moment(hi_s[saturated]) - own_bump.first_moment(lo_s[saturated])
            if m_kind == "1+e":
                fm = fm + own_bump.cumulative(hi_s[saturated]) - own_bump.cumulative(lo_s[saturated])
            val[saturated] += fm * B[saturated]
            if order >= 1:
                grad[saturated] += fm[:, None] * Bg[saturated]
            if order >= 2:
                hess[saturated] += fm[:, None, None] * Bh[saturated]
        active = np.nonzero(live & transitional & ~gated)[0]
        if active.size == 0:
            continue
        lo_a, half_a = lo_s[active], half[active]
        e = lo_a[:, None] + half_a[:, None] * (xg[None, :] + 1.0)  # (A, q)
        w = half_a[:, None] * wg[None, :] * own_bump.density(e)
        m = e if m_kind == "e" else 1.0 + e
        Ba = B[active][:, None]
        pref = m * Ba
        if order >= 1:
            pref_g = m[..., None] * Bg[active][:, None, :]
        if order >= 2:
            pref_h = m[..., None, None] * Bh[active][:, None, :, :]
        facs = []
        for bump, C, Cg, Ch, shift in factors:
            arg = m * C[active][:, None] + shift
            Phi, phi, phip = _bump_eval(bump, arg, order)
            ag = m[..., None] * Cg[active][:, None, :] if order >= 1 else None
            ah = m[..., None, None] * Ch[active][:, None, :, :] if order >= 2 else None
            facs.append((Phi, phi, phip, ag, ah))
        v, g, hmat = _product_chain(
            pref,
            pref_g if order >= 1 else None,
            pref_h if order >= 2 else None,
            facs,
            order,
        )
        val[active] += (w * v).sum(axis=1)
        if order >= 1:
            grad[active] += (w[..., None] * g).sum(axis=1)
        if order >= 2:
            hess[active] += (w[..., None, None] * hmat).sum(axis=1)
    return val, grad, hess


def quadrant_fields(u1, u2, cfg: YafaevConfig, order: int = 2) -> dict:
    """Per-piece value/gradient/Hessian fields on quadrant points.

    Returns arrays keyed 'g0'..'g3', 'g' (+ 'grad0'.., 'grad', 'hess0'..,
    'hess' as requested); gradient axis order is (u1, u2).  Each piece is
    one quadrature whose segments are cut at the preimages of the other
    candidates' windows, which keeps the integrands feature-free and the
    evaluation accurate to ~1e-12 everywhere.
    """
    u1 = np.atleast_1d(np.asarray(u1, dtype=float))
    u2 = np.atleast_1d(np.asarray(u2, dtype=float))
    S = u1.shape
    rho = np.hypot(u1, u2)
    inv1, inv2, invr = 1.0 / u1, 1.0 / u2, 1.0 / rho
    zeros = np.zeros(S)
    zeros_g = np.zeros(S + (2,))
    zeros_h = np.zeros(S + (2, 2))
    ones = np.ones(S)

    def axis_vec(values, axis):
        g = np.zeros(S + (2,))
        g[..., axis] = values
        return g

    def inv_grad(inv, axis):
        return axis_vec(-(inv**2), axis)

    def inv_hess(inv, axis):
        h = np.zeros(S + (2, 2))
        h[..., axis, axis] = 2.0 * inv**3
        return h

    rho_g = np.stack([u1 * invr, u2 * invr], axis=-1)
    rho_h = np.empty(S + (2, 2))
    rho_h[..., 0, 0] = u2**2 * invr**3
    rho_h[..., 1, 1] = u1**2 * invr**3
    rho_h[..., 0, 1] = rho_h[..., 1, 0] = -u1 * u2 * invr**3
    invr_g = -(invr[..., None] ** 2) * rho_g
    invr_h = 2.0 * invr[..., None, None] ** 3 * (
        rho_g[..., :, None] * rho_g[..., None, :]
    ) - invr[..., None, None] ** 2 * rho_h

    ratio12 = u1 * inv2  # u1/u2 and friends, with derivatives
    ratio12_g = axis_vec(inv2, 0) + u1[..., None] * inv_grad(inv2, 1)
    cross = axis_vec(ones, 0)[..., :, None] * inv_grad(inv2, 1)[..., None, :]
    ratio12_h = u1[..., None, None] * inv_hess(inv2, 1) + cross + np.swapaxes(cross, -1, -2)
    ratio21 = u2 * inv1
    ratio21_g = axis_vec(inv1, 1) + u2[..., None] * inv_grad(inv1, 0)
    cross = axis_vec(ones, 1)[..., :, None] * inv_grad(inv1, 0)[..., None, :]
    ratio21_h = u2[..., None, None] * inv_hess(inv1, 0) + cross + np.swapaxes(cross, -1, -2)
    ratior1 = rho * inv1
    ratior1_g = rho_g * inv1[..., None] + rho[..., None] * inv_grad(inv1, 0)
    cross = rho_g[..., :, None] * inv_grad(inv1, 0)[..., None, :]
    ratior1_h = (
        rho_h * inv1[..., None, None]
        + rho[..., None, None] * inv_hess(inv1, 0)
        + cross
        + np.swapaxes(cross, -1, -2)
    )
    ratior2 = rho * inv2
    ratior2_g = rho_g * inv2[..., None] + rho[..., None] * inv_grad(inv2, 1)
    cross = rho_g[..., :, None] * inv_grad(inv2, 1)[..., None, :]
    ratior2_h = (
        rho_h * inv2[..., None, None]
        + rho[..., None, None] * inv_hess(inv2, 1)
        + cross
        + np.swapaxes(cross, -1, -2)
    )
    ratio1r = u1 * invr
    ratio1r_g = axis_vec(invr, 0) + u1[..., None] * invr_g
    cross = axis_vec(ones, 0)[..., :, None] * invr_g[..., None, :]
    ratio1r_h = u1[..., None, None] * invr_h + cross + np.swapaxes(cross, -1, -2)
    ratio2r = u2 * invr
    ratio2r_g = axis_vec(invr, 1) + u2[..., None] * invr_g
    cross = axis_vec(ones, 1)[..., :, None] * invr_g[..., None, :]
    ratio2r_h = u2[..., None, None] * invr_h + cross + np.swapaxes(cross, -1, -2)

    b0, b1, b2, b3 = cfg.bumps
    out = {}

    # window preimages: m(e) * C crosses (wlo, whi) + shift bookkeeping
    def span_1pe(C, wlo, whi, shift):
        return ((wlo - shift) / C - 1.0, (whi - shift) / C - 1.0)

    # piece 0: pref = e0 * 1, factors Phi_j(e0 / u_j - 1), Phi_3(e0 / rho - 1)
    cuts = []
    for C, bump in ((inv1, b1), (inv2, b2), (invr, b3)):
        lo_c = (bump.lo + 1.0) / C
        hi_c = (bump.hi + 1.0) / C
        cuts += [lo_c, hi_c]
    val, grad, hess = _piece_integral(
        b0,
        cuts,
        (ones, zeros_g, zeros_h, "e"),
        [
            (b1, inv1, inv_grad(inv1, 0), inv_hess(inv1, 0), -1.0),
            (b2, inv2, inv_grad(inv2, 1), inv_hess(inv2, 1), -1.0),
            (b3, invr, invr_g, invr_h, -1.0),
        ],
        cfg.q,
        order,
    )
    out["g0"], out["grad0"], out["hess0"] = val, grad, hess

    # piece 1: pref = (1+e) u1, factors Phi0((1+e)u1), Phi2((1+e)u1/u2 - 1),
    # Phi3((1+e)u1/rho - 1)
    cuts = []
    for C, bump, shift in ((u1, b0, 0.0), (ratio12, b2, -1.0), (ratio1r, b3, -1.0)):
        lo_c, hi_c = span_1pe(C, bump.lo, bump.hi, shift)
        cuts += [lo_c, hi_c]
    val, grad, hess = _piece_integral(
        b1,
        cuts,
        (u1, axis_vec(ones, 0), zeros_h, "1+e"),
        [
            (b0, u1, axis_vec(ones, 0), zeros_h, 0.0),
            (b2, ratio12, ratio12_g, ratio12_h, -1.0),
            (b3, ratio1r, ratio1r_g, ratio1r_h, -1.0),
        ],
        cfg.q,
        order,
    )
    out["g1"], out["grad1"], out["hess1"] = val, grad, hess

    # piece 2: mirror
    cuts = []
    for C, bump, shift in ((u2, b0, 0.0), (ratio21, b1, -1.0), (ratio2r, b3, -1.0)):
        lo_c, hi_c = span_1pe(C, bump.lo, bump.hi, shift)
        cuts += [lo_c, hi_c]
    val, grad, hess = _piece_integral(
        b2,
        cuts,
        (u2, axis_vec(ones, 1), zeros_h, "1+e"),
        [
            (b0, u2, axis_vec(ones, 1), zeros_h, 0.0),
            (b1, ratio21, ratio21_g, ratio21_h, -1.0),
            (b3, ratio2r, ratio2r_g, ratio2r_h, -1.0),
        ],
        cfg.q,
        order,
    )
    out["g2"], out["grad2"], out["hess2"] = val, grad, hess

    # piece 3: pref = (1+e) rho, factors Phi0((1+e)rho), Phi1((1+e)rho/u1 - 1),
    # Phi2((1+e)rho/u2 - 1)
    cuts = []
    for C, bump, shift in ((rho, b0, 0.0), (ratior1, b1, -1.0), (ratior2, b2, -1.0)):
        lo_c, hi_c = span_1pe(C, bump.lo, bump.hi, shift)
        cuts += [lo_c, hi_c]
    val, grad, hess = _piece_integral(
        b3,
        cuts,
        (rho, rho_g, rho_h, "1+e"),
        [
            (b0, rho, rho_g, rho_h, 0.0),
            (b1, ratior1, ratior1_g, ratior1_h, -1.0),
            (b2, ratior2, ratior2_g, ratior2_h, -1.0),
        ],
        cfg.q,
        order,
    )
    out["g3"], out["grad3"], out["hess3"] = val, grad, hess

    out["g"] = out["g0"] + out["g1"] + out["g2"] + out["g3"]
    if order >= 1:
        out["grad"] = out["grad0"] + out["grad1"] + out["grad2"] + out["grad3"]
    else:
        for i in range(4):
            del out[f"grad{i}"]
    if order >= 2:
        out["hess"] = out["hess0"] + out["hess1"] + out["hess2"] + out["hess3"]
    else:
        for i in range(4):
            out.pop(f"hess{i}", None)
    return out


def cylinder_fields(u, k: int, cfg: YafaevConfig, order: int = 2) -> dict:
    """Piece-k fields on cylinder-k points: value, d/du, d2/du2.

    Only piece k is nonzero; the e0 candidate gates it from below but
    collects no value off the quadrant.
    """
    u = np.asarray(u, dtype=float)
    nodes, weights = cfg.rules[k]
    b0 = cfg.bumps[0]
    val = np.zeros_like(u)
    der = np.zeros_like(u) if order >= 1 else None
    der2 = np.zeros_like(u) if order >= 2 else None
    for e, w in zip(nodes, weights):
        s = 1.0 + e
        W = s * u
        Phi = b0.cumulative(W)
        val += w * W * Phi
        if order >= 1:
            phi = b0.density(W)
            der += w * s * (Phi + W * phi)
        if order >= 2:
            phip = b0.density_prime(W)
            der2 += w * s * s * (2.0 * phi + W * phip)
    out = {"g": val, f"g{k}": val}
    if order >= 1:
        out["dg"] = der
    if order >= 2:
        out["d2g"] = der2
    return out


# ---------------------------------------------------------------------
# time scaling


def scaled_quadrant_fields(u1, u2, t: float, cfg: YafaevConfig, order: int = 2) -> dict:
    """Fields of g_t = t^delta g(t^-delta u) on quadrant points.

    Spatial gradient equals grad g at the shrunk point, the Hessian picks
    up t^-delta, and dt/d2t come from the Euler combination
    delta t^{delta-1} (g - grad . u~).
    """
    if t < 1.0:
        raise ValueError("scaled fields are defined for t >= 1")
    d = cfg.delta
    s = t**d
    v1 = np.asarray(u1, dtype=float) / s
    v2 = np.asarray(u2, dtype=float) / s
    f = quadrant_fields(v1, v2, cfg, order=max(order, 1))
    out = {"g_t": s * f["g"], "grad": f["grad"]}
    radial = f["grad"][..., 0] * v1 + f["grad"][..., 1] * v2
    out["dt"] = d * t ** (d - 1.0) * (f["g"] - radial)
    for i in range(4):
        out[f"g{i}_t"] = s * f[f"g{i}"]
        rad_i = f[f"grad{i}"][..., 0] * v1 + f[f"grad{i}"][..., 1] * v2
        out[f"dt{i}"] = d * t ** (d - 1.0) * (f[f"g{i}"] - rad_i)
    if order >= 2:
        out["hess"] = f["hess"] / s
        uhu = np.einsum("...i,...ij,...j->...", np.stack([v1, v2], -1), f["hess"], np.stack([v1, v2], -1))
        out["d2t"] = d * (d - 1.0) * t ** (d - 2.0) * (f["g"] - radial) + d * d * t ** (d - 2.0) * uhu
        for i in range(4):
            out[f"hess{i}"] = f[f"hess{i}"] / s
    return out


def scaled_cylinder_fields(u, k: int, t: float, cfg: YafaevConfig, order: int = 2) -> dict:
    if t < 1.0:
        raise ValueError("scaled fields are defined for t >= 1")
    d = cfg.delta
    s = t**d
    v = np.asarray(u, dtype=float) / s
    f = cylinder_fields(v, k, cfg, order=max(order, 1))
    out = {"g_t": s * f["g"], "dg": f["dg"]}
    out["dt"] = d * t ** (d - 1.0) * (f["g"] - f["dg"] * v)
    if order >= 2:
        out["d2g"] = f["d2g"] / s
        out["d2t"] = d * (d - 1.0) * t ** (d - 2.0) * (f["g"] - f["dg"] * v) + d * d * t ** (
            d - 2.0
        ) * v * f["d2g"] * v
    return out


# ---------------------------------------------------------------------
# whole-model field


@dataclass
class YafaevField:
    """Per-site partition fields on a corner model.

    ``pieces`` has shape (4, N); ``grad`` is (N, 2) with the cylinder
    derivative stored on its own axis; ``hess`` is (N, 3) packed as
    (h11, h12, h22), nonzero only on quadrant sites.  ``dt`` is present
    for scaled fields (t is not None).
    """

    t: float | None
    delta: float | None
    pieces: np.ndarray
    total: np.ndarray
    grad: np.ndarray
    hess: np.ndarray
    dt: np.ndarray | None
    piece_dt: np.ndarray | None

    def partition_defect(self) -> float:
        return float(np.abs(self.total - self.pieces.sum(axis=0)).max())

    def hessian_matrices(self, sites) -> np.ndarray:
        h = self.hess[sites]
        out = np.empty((len(h), 2, 2))
        out[:, 0, 0] = h[:, 0]
        out[:, 0, 1] = out[:, 1, 0] = h[:, 1]
        out[:, 1, 1] = h[:, 2]
        return out


def evaluate_field(
    model: CornerModel, cfg: YafaevConfig, t: float | None = None, order: int = 2
) -> YafaevField:
    """Evaluate all partition fields (optionally time-scaled) on a model.

    ``order`` < 2 skips the Hessian (cheaper; enough for the Heisenberg
    derivative, which only needs values and the time derivative).
    """
    N = model.n_sites
    pieces = np.zeros((4, N))
    total = np.zeros(N)
    grad = np.zeros((N, 2))
    hess = np.zeros((N, 3))
    dt = np.zeros(N) if t is not None else None
    piece_dt = np.zeros((4, N)) if t is not None else None

    qmask = model.region_code == REGION_QUADRANT
    y = model.y_dim
    # fields are fiber-independent: evaluate one fiber, tile the rest
    u1 = model.h * (model.iu1[qmask][::y] + 1.0)
    u2 = model.h * (model.iu2[qmask][::y] + 1.0)

    def tile(a):
        return np.repeat(a, y, axis=0)

    if t is None:
        f = quadrant_fields(u1, u2, cfg, order=max(order, 1))
        for i in range(4):
            pieces[i, qmask] = tile(f[f"g{i}"])
        total[qmask] = tile(f["g"])
        grad[qmask] = tile(f["grad"])
        hmat = f.get("hess")
    else:
        f = scaled_quadrant_fields(u1, u2, t, cfg, order=max(order, 1))
        for i in range(4):
            pieces[i, qmask] = tile(f[f"g{i}_t"])
            piece_dt[i, qmask] = tile(f[f"dt{i}"])
        total[qmask] = tile(f["g_t"])
        grad[qmask] = tile(f["grad"])
        dt[qmask] = tile(f["dt"])
        hmat = f.get("hess")
    if hmat is not None:
        hess[qmask, 0] = tile(hmat[..., 0, 0])
        hess[qmask, 1] = tile(hmat[..., 0, 1])
        hess[qmask, 2] = tile(hmat[..., 1, 1])

    for region, k in ((REGION_CYL1, 1), (REGION_CYL2, 2)):
        mask = model.region_code == region
        iu = model.iu1 if k == 1 else model.iu2
        u = model.h * (iu[mask] + 1.0)
        axis = 0 if k == 1 else 1
        if t is None:
            f = cylinder_fields(u, k, cfg, order=1)
            pieces[k, mask] = f["g"]
            total[mask] = f["g"]
            grad[mask, axis] = f["dg"]
        else:
            f = scaled_cylinder_fields(u, k, t, cfg, order=1)
            pieces[k, mask] = f["g_t"]
            total[mask] = f["g_t"]
            grad[mask, axis] = f["dg"]
            dt[mask] = f["dt"]
            piece_dt[k, mask] = f["dt"]

    return YafaevField(
        t=t,
        delta=cfg.delta if t is not None else None,
        pieces=pieces,
        total=total,
        grad=grad,
        hess=hess,
        dt=dt,
        piece_dt=piece_dt,
    )


# ---------------------------------------------------------------------
# audits


def _sample_quadrant(rng, n, lo=0.5, hi=40.0):
    return rng.uniform(lo, hi, size=(n, 2))


def homogeneity_audit(cfg: YafaevConfig, scales=(1.0, 2.0, 5.0), n=200, seed=11, u_min=None):
    """Worst relative error of g(t x) = t g(x) on the saturated domain.

    Degree-1 homogeneity is exact once the e0 gate saturates; the audit
    samples coordinates above max(R2, saturation radius) as the scaling
    lemma prescribes, and scales upward only.
    """
    rng = np.random.default_rng(seed)
    if u_min is None:
        u_min = max(cfg.R2, cfg.saturation_radius())
    pts = rng.uniform(u_min, u_min + 30.0, size=(n, 2))
    base = quadrant_fields(pts[:, 0], pts[:, 1], cfg, order=0)["g"]
    worst = 0.0
    for s in scales:
        val = quadrant_fields(s * pts[:, 0], s * pts[:, 1], cfg, order=0)["g"]
        worst = max(worst, float(np.abs(val - s * base).max() / np.abs(s * base).max()))
    ucyl = rng.uniform(u_min, u_min + 30.0, size=n)
    base = cylinder_fields(ucyl, 1, cfg, order=0)["g"]
    for s in scales:
        val = cylinder_fields(s * ucyl, 1, cfg, order=0)["g"]
        worst = max(worst, float(np.abs(val - s * base).max() / np.abs(s * base).max()))
    return worst


def convexity_audit(cfg: YafaevConfig, n_pairs=1000, seed=12, hi=40.0):
    """Worst violation of segment convexity on random quadrant pairs."""
    rng = np.random.default_rng(seed)
    x = _sample_quadrant(rng, n_pairs, lo=0.2, hi=hi)
    y = _sample_quadrant(rng, n_pairs, lo=0.2, hi=hi)
    r = rng.uniform(0.0, 1.0, size=n_pairs)
    mid = r[:, None] * x + (1.0 - r[:, None]) * y
    gx = quadrant_fields(x[:, 0], x[:, 1], cfg, order=0)["g"]
    gy = quadrant_fields(y[:, 0], y[:, 1], cfg, order=0)["g"]
    gm = quadrant_fields(mid[:, 0], mid[:, 1], cfg, order=0)["g"]
    return float((gm - r * gx - (1.0 - r) * gy).max())


def support_exclusion_audit(cfg: YafaevConfig, n=10000, seed=13):
    """Exactness of piece-j vanishing on the cone X_i, and its locality.

    Samples quadrant points inside X_1(eps) and X_2(eps); checks the
    regularized cross piece and cross derivative vanish identically and
    that raw pieces vanish for random admissible parameter tuples.
    """
    rng = np.random.default_rng(seed)
    worst_val = 0.0
    worst_grad = 0.0
    worst_raw = 0.0
    per_cone = n // 2
    for i in (1, 2):
        j = 2 if i == 1 else 1
        ui = rng.uniform(1.0, 50.0, size=per_cone)
        # stay strictly inside the cone: u_j < f * u_i with margin
        limit = np.sqrt(1.0 / (1.0 - cfg.eps) ** 2 - 1.0)
        uj = ui * limit * rng.uniform(0.0, 0.999, size=per_cone)
        u1, u2 = (ui, uj) if i == 1 else (uj, ui)
        f = quadrant_fields(u1, u2, cfg, order=1)
        worst_val = max(worst_val, float(np.abs(f[f"g{j}"]).max()))
        # locality: the total must not depend on u_j on X_i
        worst_grad = max(worst_grad, float(np.abs(f["grad"][:, j - 1]).max()))
        eps_draws = np.stack(
            [rng.uniform(b.lo, b.hi, size=per_cone) for b in cfg.bumps], axis=1
        )
        for row in range(0, per_cone, max(per_cone // 64, 1)):
            raw = g_raw("quadrant", (u1[row], u2[row]), eps_draws[row])
            worst_raw = max(worst_raw, abs(float(raw[j])))
    return {"piece_value": worst_val, "cross_derivative": worst_grad, "raw_piece": worst_raw}


def hessian_psd_audit(cfg: YafaevConfig, n=2000, seed=14, hi=40.0):
    """Most negative eigenvalue of the total Hessian over random samples."""
    rng = np.random.default_rng(seed)
    pts = _sample_quadrant(rng, n, lo=0.2, hi=hi)
    f = quadrant_fields(pts[:, 0], pts[:, 1], cfg, order=2)
    h = f["hess"]
    tr = h[..., 0, 0] + h[..., 1, 1]
    det = h[..., 0, 0] * h[..., 1, 1] - h[..., 0, 1] ** 2
    lam_min = 0.5 * (tr - np.sqrt(np.maximum(tr**2 - 4.0 * det, 0.0)))
    return float(lam_min.min())


def minimum_outside_audit(cfg: YafaevConfig, n=4000, seed=15, span=40.0):
    """Sampled minimum of g over points with some coordinate beyond R2."""
    rng = np.random.default_rng(seed)
    r2 = cfg.R2
    u1 = rng.uniform(r2, r2 + span, size=n)
    u2 = rng.uniform(1e-3, r2 + span, size=n)
    swap = rng.random(n) < 0.5
    uu1 = np.where(swap, u2, u1)
    uu2 = np.where(swap, u1, u2)
    vals = [quadrant_fields(uu1, uu2, cfg, order=0)["g"].min()]
    vals.append(cylinder_fields(rng.uniform(r2, r2 + span, size=n), 1, cfg, order=0)["g"].min())
    vals.append(cylinder_fields(rng.uniform(r2, r2 + span, size=n), 2, cfg, order=0)["g"].min())
    return float(min(vals))


def derivative_bounds_audit(cfg: YafaevConfig, t_grid=None, n_side=160):
    """Log-log fit of sup |kappa1 kappa2 d^k g_t| and sup |d_t g_t| vs t.

    The sup is taken over an adaptive coordinate window [2, 4 t^delta]^2
    (where both cutoffs are active), sampled log-uniformly; the lemma-level
    exponents are delta (1 - |k|) for spatial multi-indices and delta - 1
    for the first time derivative.
    """
    if t_grid is None:
        t_grid = np.geomspace(1.0, 1e3, 10)
    sup = {key: [] for key in ("10", "01", "20", "11", "02", "t")}
    for t in t_grid:
        top = max(4.0 * t**cfg.delta, 8.0)
        u = np.geomspace(2.0001, top, n_side)
        U1, U2 = np.meshgrid(u, u, indexing="ij")
        f = scaled_quadrant_fields(U1.ravel(), U2.ravel(), t, cfg, order=2)
        w = (kappa(U1) * kappa(U2)).ravel()
        sup["10"].append(np.abs(w * f["grad"][:, 0]).max())
        sup["01"].append(np.abs(w * f["grad"][:, 1]).max())
        sup["20"].append(np.abs(w * f["hess"][:, 0, 0]).max())
        sup["11"].append(np.abs(w * f["hess"][:, 0, 1]).max())
        sup["02"].append(np.abs(w * f["hess"][:, 1, 1]).max())
        sup["t"].append(np.abs(w * f["dt"]).max())
    fits = {}
    logt = np.log(np.asarray(t_grid))
    theory = {"10": 0.0, "01": 0.0, "20": -cfg.delta, "11": -cfg.delta, "02": -cfg.delta,
              "t": cfg.delta - 1.0}
    for key, series in sup.items():
        series = np.asarray(series)
        slope = np.polyfit(logt, np.log(series), 1)[0]
        fits[key] = {"fitted": float(slope), "expected": theory[key], "sup": series}
    return fits


def hessian_domination(cfg: YafaevConfig, n=400, seed=16, hi=40.0, c_cap=1e6):
    """Per-piece minimal c with (c g)'' >= (g^i)'' at all samples.

    Uses the 2x2 pencil directly; samples where the total Hessian is
    numerically zero require the piece Hessian to be <= 0 there, else the
    sample reports an infinite requirement.
    """
    rng = np.random.default_rng(seed)
    pts = _sample_quadrant(rng, n, lo=0.3, hi=hi)
    f = quadrant_fields(pts[:, 0], pts[:, 1], cfg, order=2)
    out = {}
    G = f["hess"]
    for i in (1, 2, 3):
        Hi = f[f"hess{i}"]
        c_needed = 0.0
        for s in range(n):
            g = G[s]
            h = Hi[s]
            scale = max(np.abs(h).max(), 1e-14)
            evals_g, vecs = np.linalg.eigh(g)
            # work in the eigenbasis of g; null directions need h <= 0
            hb = vecs.T @ h @ vecs
            null = evals_g < 1e-12 * max(np.abs(evals_g).max(), 1.0)
            if null.all():
                if np.linalg.eigvalsh(h).max() > 1e-10 * scale:
                    c_needed = c_cap
                continue
            if null.any():
                k = int(np.nonzero(null)[0][0])
                if hb[k, k] > 1e-10 * scale:
                    c_needed = c_cap
                    continue
                j = 1 - k
                c_needed = max(c_needed, hb[j, j] / evals_g[j])
            else:
                w = np.linalg.eigvalsh(np.linalg.solve(g, h))
                c_needed = max(c_needed, float(w.max()))
        out[i] = max(c_needed, 0.0)
    return out


def export_field_csv(model: CornerModel, fieldv: YafaevField, path) -> None:
    """CSV dump (site, region, u1, u2, g0..g3, g, h11, h12, h22)."""
    import csv as _csv

    names = ("x0", "cyl1", "cyl2", "quadrant")
    u1 = model.u1_values()
    u2 = model.u2_values()
    with open(path, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["site", "region", "u1", "u2", "g0", "g1", "g2", "g3", "g", "h11", "h12", "h22"])
        for s in range(model.n_sites):
            writer.writerow(
                [s, names[model.region_code[s]]]
                + [format(x, ".17e") for x in (u1[s], u2[s])]
                + [format(fieldv.pieces[i, s], ".17e") for i in range(4)]
                + [format(fieldv.total[s], ".17e")]
                + [format(x, ".17e") for x in fieldv.hess[s]]
            )
