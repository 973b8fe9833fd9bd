"""Closed-form evaluators for relative and differential invariants.

Everything here works in the derivative convention u_{x^i y^j} and is
computed with jet arithmetic, so each invariant comes back as a jet and can
be differentiated again.  The moving-frame solver in ``frame`` is the
independent oracle these formulas are validated against; nothing in this
module calls it except the syzygy and commutator residuals, which need
invariant fields with no closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .branches import BranchLabel
from .errors import FormulaDomainError, NormalizationError, UsageError
from .group import PointedSurfaceJet
from .jets import Jet2, ln_jet, partial, recenter, sqrt_jet


def _jet_of(s) -> Jet2:
    """Accept a bare jet or a pointed jet."""
    return s.jet if hasattr(s, "jet") else s


def d(s, i: int, j: int) -> Jet2:
    """Jet of the derivative u_{x^i y^j} (order drops by i + j)."""
    a = _jet_of(s)
    if i + j > a.order:
        raise UsageError(f"derivative ({i},{j}) needs order >= {i + j}, got {a.order}")
    for _ in range(i):
        a = partial(a, "x")
    for _ in range(j):
        a = partial(a, "y")
    return a


@dataclass(frozen=True)
class RelativeInvariants:
    h: Jet2
    P: Jet2
    C1: Jet2
    C2: Jet2


@dataclass(frozen=True)
class ParabolicRatios:
    R: Jet2
    S: Jet2
    L: Jet2
    T: Jet2


@dataclass(frozen=True)
class FrameFunctions:
    K: float
    I: float
    J: float
    L_frame: float


@dataclass(frozen=True)
class StructureCoefficients:
    """Coefficients in dw^x = c_x w^x ^ w^y, dw^y = c_y w^x ^ w^y."""

    branch: BranchLabel
    c_x: float
    c_y: float


def hessian(s) -> Jet2:
    uxx, uxy, uyy = d(s, 2, 0), d(s, 1, 1), d(s, 0, 2)
    return uxx * uyy - uxy * uxy


def pick(s) -> Jet2:
    """Jet of the equi-affine Pick invariant.

    Thirteen-term cubic bracket over 16 h^3; undefined at parabolic points.
    The bracket is symmetric under swapping x and y, which pins down the
    u_xx u_yy^2 u_xxx u_xyy term (it is the swap image of the
    u_xx^2 u_yy u_xxy u_yyy one).
    """
    uxx, uxy, uyy = d(s, 2, 0), d(s, 1, 1), d(s, 0, 2)
    u30, u21, u12, u03 = d(s, 3, 0), d(s, 2, 1), d(s, 1, 2), d(s, 0, 3)
    br = (
        6.0 * uxx * uxy * uyy * u30 * u03
        - 6.0 * uxx * uyy * uyy * u30 * u12
        - 18.0 * uxx * uxy * uyy * u21 * u12
        + 12.0 * uxx * uxy * uxy * u21 * u03
        - 6.0 * uxx * uxx * uyy * u21 * u03
        + 9.0 * uxx * uyy * uyy * u21 * u21
        - 6.0 * uxx * uxx * uxy * u12 * u03
        + 9.0 * uxx * uxx * uyy * u12 * u12
        + uxx * uxx * uxx * u03 * u03
        - 6.0 * uxy * uyy * uyy * u30 * u21
        + 12.0 * uxy * uxy * uyy * u30 * u12
        - 8.0 * uxy * uxy * uxy * u30 * u03
        + uyy * uyy * uyy * u30 * u30
    )
    h = hessian(s)
    return br / (16.0 * h * h * h)


def c1_c2(s) -> tuple[Jet2, Jet2]:
    """Jets of the two cubic combinations splitting the nondegenerate cases."""
    uxx, uxy, uyy = d(s, 2, 0), d(s, 1, 1), d(s, 0, 2)
    u30, u21, u12, u03 = d(s, 3, 0), d(s, 2, 1), d(s, 1, 2), d(s, 0, 3)
    c1 = (
        6.0 * uxx * uxy * uxy * u21
        - 4.0 * uxy * uxy * uxy * u30
        - 3.0 * uxx * uxx * uxy * u12
        - 3.0 * uxx * uxx * uyy * u21
        + 3.0 * uxx * uxy * uyy * u30
        + uxx * uxx * uxx * u03
    )
    c2 = (
        -6.0 * uxx * uxy * u21
        + 4.0 * uxy * uxy * u30
        + 3.0 * uxx * uxx * u12
        - uxx * uyy * u30
    )
    return c1, c2


def relative_invariants(s) -> RelativeInvariants:
    c1, c2 = c1_c2(s)
    return RelativeInvariants(hessian(s), pick(s), c1, c2)


def _cubic_roots(b: float, c: float, e: float) -> list[float]:
    """Real roots of m^3 + b m^2 + c m + e (Cardano, discriminant-cased)."""
    p = c - b * b / 3.0
    q = 2.0 * b**3 / 27.0 - b * c / 3.0 + e
    shift = -b / 3.0
    disc = (q / 2.0) ** 2 + (p / 3.0) ** 3
    if disc > 0.0:
        t = math.sqrt(disc)
        return [float(np.cbrt(-q / 2.0 + t) + np.cbrt(-q / 2.0 - t)) + shift]
    if p == 0.0:
        return [shift]
    # three real roots counted with multiplicity: trigonometric form
    r = math.sqrt(-(p**3) / 27.0)
    phi = math.acos(min(1.0, max(-1.0, -q / (2.0 * r))))
    amp = 2.0 * math.sqrt(-p / 3.0)
    return [amp * math.cos((phi + 2.0 * math.pi * k) / 3.0) + shift for k in range(3)]


def _sextic_m(m: float, q: float, rho: float, eps: int) -> float:
    return 16.0 * eps * m**3 - 24.0 * q * m * m + 9.0 * eps * q * q * m - q**3 * rho


def solve_sextic(P: float, u_xx: float, C1: float, C2: float, h: float, eps: int) -> float:
    """Nonnegative root K of the degree-six frame equation.

    The equation is cubic in m = K^2.  Among real roots with m >= 0 and
    P*u_xx - eps*m > 0 the smallest is returned: that is the root
    continuously connected to the zero root of the reduced equation.
    """
    q = P * u_xx
    w = C1 * C1 + h * C2 * C2
    if q == 0.0 or w == 0.0:
        raise FormulaDomainError("sextic needs P*u_xx != 0 and C1^2 + h*C2^2 != 0")
    rho = C1 * C1 / w
    # monic form m^3 + b m^2 + c m + e after dividing by 16 eps
    b = -24.0 * q * eps / 16.0
    c = 9.0 * q * q / 16.0
    e = -(q**3) * rho * eps / 16.0
    admissible = []
    for m in _cubic_roots(b, c, e):
        for _ in range(3):
            fm = _sextic_m(m, q, rho, eps)
            dfm = 48.0 * eps * m * m - 48.0 * q * m + 9.0 * eps * q * q
            if dfm == 0.0 or fm == 0.0:
                break
            m -= fm / dfm
        if m < -1e-12 * max(1.0, abs(q)):
            continue
        m = max(m, 0.0)
        if q - eps * m <= 0.0:
            continue
        admissible.append(m)
    if not admissible:
        raise FormulaDomainError("no admissible sextic root")
    m = min(admissible)
    K = math.sqrt(m)
    if abs(_sextic_m(m, q, rho, eps)) > 1e-10 * max(abs(q) ** 3, 1e-300):
        raise FormulaDomainError("sextic root failed the residual bound")
    return K


def _third_order_residual(j, I, J, K, L, P, sh, eps) -> float:
    """Residual of the cubic cross-section conditions for a candidate frame.

    The plane part of the frame sends the coordinate directions to
    v_X = (L, -K)/(P*sqrt|h|) and v_Y = (-J, I)/(P*sqrt|h|); the shear
    column and the vertical scale then have to push the cubic coefficients
    onto (1, 0, -eps, 0) in derivative terms.  Two of those four conditions
    fix the shear, the other two vanish only for the genuine square-root
    signs of K and I; wrong signs leave residuals of order one.
    """
    uxx, uxy, uyy = j.deriv(2, 0), j.deriv(1, 1), j.deriv(0, 2)
    den = P * sh
    vx = (L / den, -K / den)
    vy = (-J / den, I / den)
    c30, c21 = j.coeff(3, 0), j.coeff(2, 1)
    c12, c03 = j.coeff(1, 2), j.coeff(0, 3)

    def cubic(p):
        x, y = p
        return ((c30 * x + c21 * y) * x + c12 * y * y) * x + c03 * y**3

    def quad(a, b):
        return uxx * a[0] * b[0] + uxy * (a[0] * b[1] + a[1] * b[0]) + uyy * a[1] * b[1]

    n30 = cubic(vx)
    n03 = cubic(vy)
    s1 = cubic((vx[0] + vy[0], vx[1] + vy[1]))
    s2 = cubic((vx[0] - vy[0], vx[1] - vy[1]))
    n21 = 0.5 * (s1 - s2) - n03
    n12 = 0.5 * (s1 + s2) - n30
    q20 = 0.5 * quad(vx, vx)
    q02 = 0.5 * quad(vy, vy)
    if q20 == 0.0:
        return math.inf
    a33 = 0.5 / q20
    alpha = (n30 - (1.0 / 6.0) / a33) / q20
    beta = n21 / q20
    r12 = a33 * (n12 - q02 * alpha) + eps / 2.0
    r03 = a33 * (n03 - q02 * beta)
    return max(abs(r12), abs(r03))


def _select_frame_signs(j, eps: int, K0: float) -> tuple[int, int]:
    """Square-root signs (sign of I, sign of K) of the genuine frame at the
    chosen sextic root.  Exactly one of the four combinations satisfies the
    remaining cubic normalization conditions; the others are rejected with a
    residual of order one."""
    uxx, uxy = j.deriv(2, 0), j.deriv(1, 1)
    h = hessian(j).value()
    sh = math.sqrt(abs(h))
    P = pick(j).value()
    rad = P * uxx - eps * K0 * K0
    if rad <= 0.0:
        raise FormulaDomainError("negative radicand in frame functions")
    best = None
    for sk in (1, -1):
        for si in (1, -1):
            K = sk * K0
            I = si * math.sqrt(rad)
            J = (uxy * I - eps * sh * K) / uxx
            L = (uxy * K + sh * I) / uxx
            r = _third_order_residual(j, I, J, K, L, P, sh, eps)
            if best is None or r < best[0]:
                best = (r, si, sk)
    if best[0] > 1e-6:
        raise FormulaDomainError("no square-root sign combination is a frame here")
    return best[1], best[2]


def frame_functions(s, eps: int) -> FrameFunctions:
    j = _jet_of(s)
    uxx = j.deriv(2, 0)
    uxy = j.deriv(1, 1)
    h = hessian(j).value()
    if eps * h <= 0.0 or uxx == 0.0:
        raise FormulaDomainError("frame functions need eps = sign(h) and u_xx != 0")
    P = pick(j).value()
    c1, c2 = c1_c2(j)
    K0 = solve_sextic(P, uxx, c1.value(), c2.value(), h, eps)
    si, sk = _select_frame_signs(j, eps, K0)
    K = sk * K0
    I = si * math.sqrt(P * uxx - eps * K0 * K0)
    sh = math.sqrt(abs(h))
    return FrameFunctions(
        K=K,
        I=I,
        J=(uxy * I - eps * sh * K) / uxx,
        L_frame=(uxy * K + sh * I) / uxx,
    )


def _k_jet(s, eps: int) -> Jet2:
    """Promote the sextic root to a jet by lifting the cubic in K^2.

    Degree-by-degree Newton on the cubic; needs the root simple and K > 0
    at the base (at K = 0 the root is not a smooth function of the jet and
    callers must fall back to frame-oracle differencing).
    """
    j = _jet_of(s)
    P = pick(j)
    uxx = d(j, 2, 0)
    q = P * uxx
    c1, c2 = c1_c2(j)
    h = hessian(j)
    w = c1 * c1 + h * c2 * c2
    rho = (c1 * c1) / w
    q0 = q.value()
    K0 = solve_sextic(P.value(), uxx.value(), c1.value(), c2.value(), h.value(), eps)
    m0 = K0 * K0
    dG0 = 48.0 * eps * m0 * m0 - 48.0 * q0 * m0 + 9.0 * eps * q0 * q0
    # |d(sextic)/dK| = |2 K G'(m)| at the root, relative to the q^2 scale
    if abs(2.0 * K0 * dG0) <= 1e-8 * max(1.0, abs(q0)) ** 2:
        raise FormulaDomainError("sextic root not smoothly liftable here")
    m = Jet2.constant(m0, q.order, base=j.base)
    for _ in range(q.order + 1):
        G = 16.0 * eps * m**3 - 24.0 * q * m * m + 9.0 * eps * q * q * m - q**3 * rho
        dG = 48.0 * eps * m * m - 48.0 * q * m + 9.0 * eps * q * q
        m = m - G / dG
    return sqrt_jet(m)


def _eps_of(s) -> int:
    hv = hessian(_jet_of(s)).value()
    if hv == 0.0:
        raise FormulaDomainError("parabolic point: no elliptic/hyperbolic sign")
    return 1 if hv > 0.0 else -1


def _coeff_jets(s, eps: int):
    """Shared jets (I, J, K, L, P*sqrt|h|) behind the invariant derivations."""
    j = _jet_of(s)
    h = hessian(j)
    if eps * h.value() <= 0.0:
        raise FormulaDomainError("eps must match the Hessian sign")
    P = pick(j)
    uxx, uxy = d(j, 2, 0), d(j, 1, 1)
    K = _k_jet(j, eps)
    si, sk = _select_frame_signs(j, eps, K.value())
    K = float(sk) * K
    sh = sqrt_jet(float(eps) * h)
    rad = P * uxx - float(eps) * K * K
    if rad.value() <= 0.0:
        raise FormulaDomainError("negative radicand in frame functions")
    I = float(si) * sqrt_jet(rad)
    J = (uxy * I - float(eps) * sh * K) / uxx
    L = (uxy * K + sh * I) / uxx
    return I, J, K, L, P * sh


def invariant_derivative_EH1(s, f: Jet2, axis) -> Jet2:
    """Invariant total derivative of the jet f along the moving coframe."""
    I, J, K, L, den = _coeff_jets(s, _eps_of(s))
    if axis in ("x", 0):
        return (L * partial(f, "x") - K * partial(f, "y")) / den
    if axis in ("y", 1):
        return (I * partial(f, "y") - J * partial(f, "x")) / den
    raise UsageError(f"axis must be 'x' or 'y', got {axis!r}")


def gen_EH1_jet(s, eps: int) -> Jet2:
    """The fourth-order generating invariant of the nondegenerate branch,
    as a jet (order drops by four)."""
    j = _jet_of(s)
    I, J, K, L, den = _coeff_jets(j, eps)
    P = pick(j)
    h = hessian(j)
    sh = sqrt_jet(float(eps) * h)
    lnh = ln_jet(float(eps) * h)

    def Dx(f):
        return (L * partial(f, "x") - K * partial(f, "y")) / den

    def Dy(f):
        return (I * partial(f, "y") - J * partial(f, "x")) / den

    dylnh = Dy(lnh)
    dxlnh = Dx(lnh)
    dyK, dyL = Dy(K), Dy(L)
    # eps placement on the second and fourth terms pinned numerically against
    # the moving-frame solver (unique sign vector at 1e-13 over random jets,
    # both Hessian signs); see docs/formula_map.md
    return (
        3.0
        + 3.0 * ((L * dyK - K * dyL) / (P * sh))
        + (3.0 * eps / 4.0) * (Dy(P * dylnh) / P)
        + (3.0 * eps / 16.0) * (dylnh * dylnh)
        + (3.0 * eps / 4.0) * ((dylnh * (J * dyK - I * dyL)) / (P * sh))
        + (3.0 / 4.0) * ((dxlnh * (K * dyL - L * dyK)) / (P * sh))
    )


def gen_EH1(s, eps: int) -> float:
    return gen_EH1_jet(s, eps).value()


def a_invariants(s, a33: float) -> tuple[float, float, float]:
    """The three fourth-order quantities of the degenerate hyperbolic branch
    before the vertical scale is fixed; A_k carries weight a33^(-k/3)."""
    j = _jet_of(s)
    h = hessian(j)
    hv = h.value()
    if hv >= 0.0:
        raise FormulaDomainError("a_invariants need a hyperbolic point (h < 0)")
    _, c2 = c1_c2(j)
    c2v = c2.value()
    if c2v == 0.0:
        raise FormulaDomainError("a_invariants need C2 != 0")
    uxx, uxy = j.deriv(2, 0), j.deriv(1, 1)
    if uxx == 0.0:
        raise FormulaDomainError("a_invariants need u_xx != 0")
    hx, hy = partial(h, "x").value(), partial(h, "y").value()
    hxx = partial(partial(h, "x"), "x").value()
    c2x, c2y = partial(c2, "x").value(), partial(c2, "y").value()
    ah = abs(hv)
    sh = math.sqrt(ah)
    cbrt2 = float(np.cbrt(2.0))
    a1 = (
        2.0 * sh * (2.0 * c2v * hx - hv * c2x)
        + uxy * (c2v * hx - 2.0 * hv * c2x)
        + uxx * (2.0 * hv * c2y - c2v * hy)
    ) / (cbrt2 * ah ** (7.0 / 6.0) * float(np.cbrt(c2v)) ** 4 * float(np.cbrt(a33)))
    a2 = (
        cbrt2
        * (uxx * (hv * c2y - 2.0 * c2v * hy) + (hv * c2x - 2.0 * c2v * hx) * (sh - uxy))
    ) / (uxx * ah ** (11.0 / 6.0) * float(np.cbrt(c2v * a33)) ** 2)
    a3 = _a3_scaled(uxx, uxy, hv, hx, hy, hxx, c2v, c2x, c2y) / a33
    return float(a1), float(a2), float(a3)


def _a3_scaled(uxx, uxy, hv, hx, hy, hxx, c2, c2x, c2y) -> float:
    """A3 * a33: the part of the third invariant independent of the scale."""
    sh = math.sqrt(abs(hv))
    return (
        sh * uxx * (3.0 * c2 * hy - 2.0 * hv * c2y)
        + sh * uxy * (2.0 * hv * c2x - 3.0 * c2 * hx)
        + hv * (2.0 * hv * c2x - 3.0 * c2 * hx)
        + 4.0 * hv * hv * hxx * uxx
        - hy * hy * uxx**3
        + 2.0 * hx * hy * uxx * uxx * uxy
        - hx * hx * uxx * uxy * uxy
        - 6.0 * hv * hx * hx * uxx
    ) / (8.0 * hv**3 * uxx * uxx)


def a33_H31(s) -> float:
    """Vertical scale that normalizes the third invariant to one."""
    j = _jet_of(s)
    h = hessian(j)
    hv = h.value()
    if hv >= 0.0:
        raise FormulaDomainError("a33 normalization needs a hyperbolic point")
    _, c2 = c1_c2(j)
    if c2.value() == 0.0:
        raise FormulaDomainError("a33 normalization needs C2 != 0")
    uxx, uxy = j.deriv(2, 0), j.deriv(1, 1)
    if uxx == 0.0:
        raise FormulaDomainError("a33 normalization needs u_xx != 0")
    hx, hy = partial(h, "x").value(), partial(h, "y").value()
    hxx = partial(partial(h, "x"), "x").value()
    c2x, c2y = partial(c2, "x").value(), partial(c2, "y").value()
    val = _a3_scaled(uxx, uxy, hv, hx, hy, hxx, c2.value(), c2x, c2y)
    if val == 0.0:
        raise FormulaDomainError("normalization value vanishes: branch H.3.2")
    return float(val)


def u_x2y2_EH2(s, a33: float) -> float:
    """Fourth-order invariant splitting the totally cubic-degenerate case."""
    j = _jet_of(s)
    uxx, uxy, uyy = j.deriv(2, 0), j.deriv(1, 1), j.deriv(0, 2)
    u30, u21 = j.deriv(3, 0), j.deriv(2, 1)
    u40 = j.deriv(4, 0)
    hv = uxx * uyy - uxy * uxy
    if hv == 0.0 or uxx == 0.0:
        raise FormulaDomainError("needs h != 0 and u_xx != 0")
    num = (
        18.0 * uxx * uxy * u30 * u21
        - 9.0 * uxx * uxx * u21 * u21
        - (4.0 * uxy * uxy + 5.0 * uxx * uyy) * u30 * u30
        + 3.0 * uxx * hv * u40
    )
    return float(num / (9.0 * a33 * uxx**3 * hv))


def parabolic_ratios(s) -> ParabolicRatios:
    j = _jet_of(s)
    uxx = d(j, 2, 0)
    if uxx.value() == 0.0:
        raise FormulaDomainError("parabolic ratios need u_xx != 0")
    R = d(j, 1, 1) / uxx
    S = (3.0 * uxx * d(j, 4, 0) - 5.0 * d(j, 3, 0) * d(j, 3, 0)) / (3.0 * uxx * uxx)
    L = d(j, 3, 0) / uxx
    T = 2.0 * L * S - 3.0 * partial(S, "x")
    return ParabolicRatios(R=R, S=S, L=L, T=T)


PARABOLIC_KEYS = ("U_X2Y", "U_X3Y", "U_X5_P111", "U_X5_P112", "U_X7", "U_X5_P121")


def parabolic_invariants(
    s, a33: float, which=None, Yx: float = 0.0, Yy: float = 1.0, Xx: float = 1.0
) -> dict:
    """Closed forms along the parabolic chain.

    Returns a record keyed by invariant name.  Each entry is either the
    value at the basepoint or, where that refinement's nondegeneracy
    condition fails, the domain error naming the condition: a single
    parabolic jet legitimately supports some of these and not others.
    Yx, Yy, Xx are residual plane-map entries of the normalizing element;
    the forms odd in the x-direction carry sign(Xx).
    """
    keys = tuple(which) if which is not None else PARABOLIC_KEYS
    bad = set(keys) - set(PARABOLIC_KEYS)
    if bad:
        raise UsageError(f"unknown parabolic invariants {sorted(bad)}")
    j = _jet_of(s)
    rat = parabolic_ratios(j)
    uxxv = j.deriv(2, 0)
    out: dict[str, float | FormulaDomainError] = {}
    for key in keys:
        try:
            out[key] = _PARABOLIC_EVAL[key](rat, uxxv, a33, Yx, Yy, Xx)
        except FormulaDomainError as err:
            out[key] = err
    return out


def _p_u_x2y(rat, uxxv, a33, Yx, Yy, Xx) -> float:
    den = Yy - rat.R.value() * Yx
    if den == 0.0:
        raise FormulaDomainError("U_X2Y: Y_y - R*Y_x vanishes")
    return float(partial(rat.R, "x").value() / den)


def _p_u_x3y(rat, uxxv, a33, Yx, Yy, Xx) -> float:
    Rx = partial(rat.R, "x")
    if Rx.value() == 0.0:
        raise FormulaDomainError("U_X3Y: needs R_x != 0")
    v = partial(Rx, "x").value() / (Rx.value() * math.sqrt(abs(a33 * uxxv)))
    return float(math.copysign(1.0, Xx) * v)


def _p_u_x5_long(rat, uxxv, a33, Yx, Yy, Xx) -> float:
    Rx = partial(rat.R, "x")
    Rxx = partial(Rx, "x")
    rx, rxx, rxxx = Rx.value(), Rxx.value(), partial(Rxx, "x").value()
    if rxx == 0.0:
        raise FormulaDomainError("U_X5 (generic parabolic form): needs R_xx != 0")
    lv, sv, sx = rat.L.value(), rat.S.value(), partial(rat.S, "x").value()
    br = (
        30.0 * lv * rx * rxx * rxxx
        - 24.0 * lv * sv * rx * rx * rxx
        - 5.0 * lv * lv * rx * rxx * rxx
        - 60.0 * sv * rx * rxx * rxx
        - 40.0 * lv * rxx**3
        + 120.0 * rxx * rxx * rxxx
        - 45.0 * rx * rxxx * rxxx
        + 36.0 * rx * rx * rxx * sx
    )
    return float(rx * br / (36.0 * rxx**4))


def _p_u_x5_flat(rat, uxxv, a33, Yx, Yy, Xx) -> float:
    # leading minus fixed against the frame oracle: the branch normal form
    # itself evaluates to -1 under the unsigned reading (see docs/formula_map.md)
    v = rat.T.value() / (3.0 * math.sqrt(abs(a33 * uxxv)) ** 3)
    return float(-math.copysign(1.0, Xx) * v)


def _p_u_x7(rat, uxxv, a33, Yx, Yy, Xx) -> float:
    tv = rat.T.value()
    if tv == 0.0:
        raise FormulaDomainError("U_X7: needs T != 0")
    tx = partial(rat.T, "x").value()
    txx = partial(partial(rat.T, "x"), "x").value()
    lv, sv = rat.L.value(), rat.S.value()
    ct = float(np.cbrt(tv))
    # no constant term: the displayed -1/6 leaves every sample exactly 1/6
    # below the frame oracle, so it is dropped (see docs/formula_map.md)
    return float(
        -(3.0 ** (2.0 / 3.0)) * lv * lv / (2.0 * ct**2)
        - 3.0 ** (5.0 / 3.0) * sv / (2.0 * ct**2)
        - 7.0 * tx * tx / (2.0 * 3.0 ** (1.0 / 3.0) * ct**8)
        + 3.0 ** (2.0 / 3.0) * txx / ct**5
    )


def _p_u_x5_quartic(rat, uxxv, a33, Yx, Yy, Xx) -> float:
    sv = rat.S.value()
    if sv <= 0.0:
        raise FormulaDomainError("U_X5 (quartic parabolic form): needs S > 0")
    # T/(3 S^{3/2}), not the displayed 3T/S^{3/2}: the frame oracle sits at
    # exactly one ninth of the display on every sample; orientation and the
    # leading minus as for the flat-branch quintic form
    return float(-math.copysign(1.0, Xx) * rat.T.value() / (3.0 * sv**1.5))


_PARABOLIC_EVAL = {
    "U_X2Y": _p_u_x2y,
    "U_X3Y": _p_u_x3y,
    "U_X5_P111": _p_u_x5_long,
    "U_X5_P112": _p_u_x5_flat,
    "U_X7": _p_u_x7,
    "U_X5_P121": _p_u_x5_quartic,
}


def structure_coefficients(n) -> StructureCoefficients:
    """Coframe structure coefficients for the fully normalized branches.

    The convention is dw^x = c_x w^x ^ w^y (and likewise c_y), equivalent
    to [D_x, D_y] = -c_x D_x - c_y D_y for the dual invariant derivations.
    """
    br = n.branch
    j = n.jet

    if br == BranchLabel.EH1:
        eps = n.eps
        return StructureCoefficients(
            br,
            c_x=(2.0 * eps / 3.0) * j.deriv(1, 3),
            c_y=(3.0 * j.deriv(4, 0) - 6.0 * eps * j.deriv(2, 2) - j.deriv(0, 4)) / 12.0,
        )
    if br == BranchLabel.H3_1:
        i5 = j.deriv(5, 0) + 2.0 * j.deriv(4, 1) + j.deriv(3, 2)
        a1 = j.deriv(4, 0) + 2.0 * j.deriv(3, 1) + 3.0 * j.deriv(2, 2)
        a2 = j.deriv(4, 0) + 4.0 * j.deriv(3, 1) + 3.0 * j.deriv(2, 2)
        return StructureCoefficients(
            br,
            c_x=(8.0 * i5 - 2.0 * a1 + a2) / 12.0,
            c_y=(8.0 * i5 - 2.0 * a1 - a2) / 12.0,
        )
    if br == BranchLabel.P1_1_1:
        return StructureCoefficients(br, -1.0, -1.0 / 3.0)
    if br == BranchLabel.P1_1_2_1:
        return StructureCoefficients(br, 0.0, -5.0 / 3.0)
    raise UsageError(f"no fully normalized coframe for branch {br}")


# --------------------------------------------------------------------------
# differential syzygies of the nondegenerate branch

_SECTION_READS = ((4, 0), (3, 1), (2, 2), (1, 3), (0, 4))

_FD_STEP = 2.5e-3
_FD_GATE = 5e-5

# Quintic identity tying W = U_{X^2Y^2} to I_1..I_4 and their invariant
# derivatives.  Rows are (coefficient, eps power, exponents over
# (I1, I2, I3, I4, W, DxI2, DyI2, DyI3, DxI4, DyI4)).  Candidate readings of
# this identity disagreed, so the row set was re-derived from the oracle's
# differential recurrences and certified to vanish at stencil accuracy on
# random jets of both Hessian signs; docs/formula_map.md records the
# adjudication.
_QUINTIC_TERMS = (
    (81, 0, (0, 0, 0, 0, 5, 0, 0, 0, 0, 0)), (324, 0, (0, 0, 0, 0, 4, 0, 0, 0, 0, 0)),
    (27, 1, (1, 0, 0, 0, 4, 0, 0, 0, 0, 0)), (405, 0, (0, 0, 0, 0, 3, 0, 0, 0, 0, 0)),
    (108, 0, (0, 0, 0, 0, 3, 0, 1, 0, 0, 0)), (-27, 0, (0, 0, 0, 1, 3, 0, 0, 0, 0, 0)),
    (-189, 1, (0, 2, 0, 0, 3, 0, 0, 0, 0, 0)), (108, 1, (1, 0, 0, 0, 3, 0, 0, 0, 0, 0)),
    (162, 0, (0, 0, 0, 0, 2, 0, 0, 0, 0, 0)), (324, 0, (0, 0, 0, 0, 2, 0, 1, 0, 0, 0)),
    (-54, 0, (0, 0, 0, 1, 2, 0, 0, 0, 0, 0)), (-180, 0, (0, 1, 0, 0, 2, 1, 0, 0, 0, 0)),
    (324, 0, (0, 2, 0, 0, 2, 0, 0, 0, 0, 0)), (-270, 1, (0, 2, 0, 0, 2, 0, 0, 0, 0, 0)),
    (-99, 0, (0, 2, 1, 0, 2, 0, 0, 0, 0, 0)), (135, 1, (1, 0, 0, 0, 2, 0, 0, 0, 0, 0)),
    (-9, 1, (1, 0, 0, 1, 2, 0, 0, 0, 0, 0)), (18, 0, (1, 2, 0, 0, 2, 0, 0, 0, 0, 0)),
    (216, 0, (0, 0, 0, 0, 1, 0, 1, 0, 0, 0)), (-27, 0, (0, 0, 0, 1, 1, 0, 0, 0, 0, 0)),
    (-36, 0, (0, 0, 0, 1, 1, 0, 1, 0, 0, 0)), (36, 0, (0, 1, 0, 0, 1, 0, 0, 0, 0, 1)),
    (-360, 0, (0, 1, 0, 0, 1, 1, 0, 0, 0, 0)), (540, 0, (0, 2, 0, 0, 1, 0, 0, 0, 0, 0)),
    (-90, 1, (0, 2, 0, 0, 1, 0, 0, 0, 0, 0)), (-33, 1, (0, 2, 0, 1, 1, 0, 0, 0, 0, 0)),
    (-216, 0, (0, 2, 1, 0, 1, 0, 0, 0, 0, 0)), (-2, 0, (0, 4, 0, 0, 1, 0, 0, 0, 0, 0)),
    (54, 1, (1, 0, 0, 0, 1, 0, 0, 0, 0, 0)), (-18, 1, (1, 0, 0, 1, 1, 0, 0, 0, 0, 0)),
    (42, 0, (1, 2, 0, 0, 1, 0, 0, 0, 0, 0)), (36, 1, (1, 2, 0, 0, 1, 0, 0, 0, 0, 0)),
    (6, 1, (1, 2, 1, 0, 1, 0, 0, 0, 0, 0)), (-36, 0, (0, 0, 0, 1, 0, 0, 1, 0, 0, 0)),
    (36, 0, (0, 1, 0, 0, 0, 0, 0, 0, 0, 1)), (-216, 0, (0, 1, 0, 0, 0, 1, 0, 0, 0, 0)),
    (-12, 0, (0, 1, 0, 1, 0, 1, 0, 0, 0, 0)), (216, 0, (0, 2, 0, 0, 0, 0, 0, 0, 0, 0)),
    (12, 0, (0, 2, 0, 0, 0, 0, 0, 0, 1, 0)), (-30, 1, (0, 2, 0, 1, 0, 0, 0, 0, 0, 0)),
    (-108, 0, (0, 2, 1, 0, 0, 0, 0, 0, 0, 0)), (3, 0, (0, 2, 1, 1, 0, 0, 0, 0, 0, 0)),
    (24, 0, (0, 3, 0, 0, 0, 0, 0, 1, 0, 0)), (48, 1, (0, 3, 0, 0, 0, 1, 0, 0, 0, 0)),
    (12, 0, (0, 4, 0, 0, 0, 0, 0, 0, 0, 0)), (24, 1, (0, 4, 0, 0, 0, 0, 0, 0, 0, 0)),
    (-10, 1, (0, 4, 1, 0, 0, 0, 0, 0, 0, 0)), (-9, 1, (1, 0, 0, 1, 0, 0, 0, 0, 0, 0)),
    (18, 0, (1, 2, 0, 0, 0, 0, 0, 0, 0, 0)), (36, 1, (1, 2, 0, 0, 0, 0, 0, 0, 0, 0)),
    (-2, 0, (1, 2, 0, 1, 0, 0, 0, 0, 0, 0)), (6, 1, (1, 2, 1, 0, 0, 0, 0, 0, 0, 0)),
    (-4, 1, (1, 4, 0, 0, 0, 0, 0, 0, 0, 0)),
)


def _tracked_reads(n, dx: float, dy: float) -> np.ndarray:
    """Fourth-order section reads after sliding the basepoint by (dx, dy),
    tracked to the orbit member nearest the base normalization."""
    from .frame import nearest_orbit_jet, normalize

    moved = recenter(n.jet, dx, dy)
    nn = normalize(PointedSurfaceJet.from_jet(moved), n.branch, canonical=False)
    cand = nearest_orbit_jet(nn, n.jet)
    return np.array([cand.deriv(i, j) for i, j in _SECTION_READS])


def _fd_section_derivatives(n, step: float = _FD_STEP):
    """Invariant derivatives of the five section reads at the basepoint.

    Fourth-order central differences at two resolutions, Richardson
    extrapolated; the two resolutions double as an error estimate and a jet
    whose stencil does not converge raises NormalizationError instead of
    returning a wrong derivative.
    """
    g = {}
    for k in (-4, -2, -1, 1, 2, 4):
        h = 0.5 * step * k
        g[("x", k)] = _tracked_reads(n, h, 0.0)
        g[("y", k)] = _tracked_reads(n, 0.0, h)
    out = []
    for ax in ("x", "y"):
        coarse = (-g[(ax, 4)] + 8.0 * g[(ax, 2)] - 8.0 * g[(ax, -2)] + g[(ax, -4)]) / (
            12.0 * step
        )
        fine = (-g[(ax, 2)] + 8.0 * g[(ax, 1)] - 8.0 * g[(ax, -1)] + g[(ax, -2)]) / (
            6.0 * step
        )
        err = np.max(np.abs(fine - coarse) / np.maximum(np.abs(fine), 1.0))
        if err > _FD_GATE:
            raise NormalizationError(
                f"invariant-derivative stencil did not converge (estimate {err:.1e})"
            )
        out.append((16.0 * fine - coarse) / 15.0)
    return out


def _r1_terms(i1, i2, i3, w, u31u13, eps, dx_i1, dy_i2) -> tuple:
    """Summands of the fourth-order syzygy, LHS minus RHS."""
    return (
        dx_i1,
        -dy_i2,
        -1.5 * i3,
        (7.0 * eps / 6.0) * i2 * i2,
        -i1 * i1 / 12.0,
        0.5 * i1 * i3,
        -0.75 * w * w,
        -1.5 * eps * w,
        0.5 * u31u13,
    )


def syzygy_residual_EH1(s) -> tuple[float, float]:
    """Residuals of the two differential identities obeyed by the
    nondegenerate-branch invariants.

    r1 is the fourth-order syzygy relating D_xI_1 - D_yI_2 to I_1..I_3 and
    the combination behind I_4; r2 is the quintic in U_{X^2Y^2}.  Both are
    normalized by their largest term magnitude.  All invariants come from
    the frame oracle, derivatives by Richardson-controlled central
    differences, so there is no shared closed form to cancel against.
    """
    from .frame import normalize

    n = normalize(s, BranchLabel.EH1)
    eps = float(n.eps)
    u40, u31, w, u13, u04 = (n.jet.deriv(i, j) for i, j in _SECTION_READS)
    gx, gy = _fd_section_derivatives(n)

    i1, i2, i3 = u04, u13, u40 - 2.0 * eps * w
    i4 = 3.0 * w * w + 6.0 * w - 2.0 * u31 * u13
    t1 = _r1_terms(i1, i2, i3, w, u31 * u13, eps, gx[4], gy[3])
    r1 = abs(math.fsum(t1)) / max(abs(t) for t in t1)

    vals = (
        i1,
        i2,
        i3,
        i4,
        w,
        gx[3],
        gy[3],
        gy[0] - 2.0 * eps * gy[2],
        (6.0 * w + 6.0) * gx[2] - 2.0 * u13 * gx[1] - 2.0 * u31 * gx[3],
        (6.0 * w + 6.0) * gy[2] - 2.0 * u13 * gy[1] - 2.0 * u31 * gy[3],
    )
    terms = []
    for coef, epow, exps in _QUINTIC_TERMS:
        t = float(coef) * (eps if epow else 1.0)
        for v, p in zip(vals, exps):
            if p:
                t *= v**p
        terms.append(t)
    r2 = abs(math.fsum(terms)) / max(abs(t) for t in terms)
    return float(r1), float(r2)


def commutator_residual_EH1(s) -> float:
    """Residual of [D_x, D_y]F + c_x D_xF + c_y D_yF at the basepoint, for F
    the fourth-order generating invariant.

    The bracket side is pure closed form; c_x and c_y are read off the frame
    oracle.  The closed-form square roots fix their own discrete gauge, so
    the residual is minimized over the admissible gauge orbit of the
    normalized jet.
    """
    from .frame import _orbit_jets, normalize

    eps = _eps_of(s)
    f = gen_EH1_jet(s, eps)
    dxf = invariant_derivative_EH1(s, f, "x")
    dyf = invariant_derivative_EH1(s, f, "y")
    comm = (
        invariant_derivative_EH1(s, dyf, "x") - invariant_derivative_EH1(s, dxf, "y")
    ).value()

    n = normalize(s, BranchLabel.EH1)
    best = math.inf
    for cand in _orbit_jets(n):
        sc = structure_coefficients(replace(n, jet=cand))
        terms = (comm, sc.c_x * dxf.value(), sc.c_y * dyf.value())
        r = abs(math.fsum(terms)) / max(abs(t) for t in terms)
        best = min(best, r)
    return float(best)
