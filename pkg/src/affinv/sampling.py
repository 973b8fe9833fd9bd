"""Random surface jets lying on a branch's defining subbundle.

Membership in the refinement tree is a set of differential identities
holding along the surface, not numbers vanishing at one point.  A random
jet is pushed onto those identities order by order: the new order's
coefficients enter the identity jets affinely, so a probe-built
least-squares step lands on the subbundle to round-off while projecting a
random draw keeps the unconstrained directions random.
"""

from __future__ import annotations

import math

import numpy as np

from .branches import BranchLabel as B
from .errors import UsageError
from .group import PointedSurfaceJet, prolong, random_element
from .invariants import c1_c2, hessian
from .jets import DEFAULT_ORDER, Jet2, partial, sqrt_jet


def random_jet(rng, order: int = DEFAULT_ORDER, scale: float = 0.7) -> Jet2:
    """Generic jet with zero value/gradient and Gaussian higher coefficients."""
    n = (order + 1) * (order + 2) // 2
    coeffs = rng.normal(size=n) * scale
    coeffs[:3] = 0.0
    return Jet2(order, (0.0, 0.0), coeffs)


def _set_order(j: Jet2, k: int, vals: np.ndarray) -> Jet2:
    c = np.array(j.coeffs, dtype=float)
    base = k * (k + 1) // 2
    c[base : base + k + 1] = vals
    return j.with_coeffs(c)


def _get_order(j: Jet2, k: int) -> np.ndarray:
    base = k * (k + 1) // 2
    return np.array(j.coeffs[base : base + k + 1], dtype=float)


def _top_rows(j: Jet2, k: int, identities) -> np.ndarray:
    """Top-degree coefficients of each identity jet of the order-k truncation.

    Lower degrees vanish by induction over k; the top degree is the affine
    image of the order-k coefficients."""
    t = j.truncate(k)
    rows = []
    for g in identities:
        gj = g(t)
        rows.extend(_get_order(gj, gj.order))
    return np.array(rows, dtype=float)


def _project_order(j: Jet2, k: int, identities) -> Jet2:
    r0 = _top_rows(j, k, identities)
    if not len(r0):
        return j
    # the map is affine in the new order, but rows of wildly different scale
    # and jet-arithmetic roundoff make one equilibrated extra pass worthwhile
    for _ in range(2):
        c0 = _get_order(j, k)
        A = np.empty((len(r0), k + 1))
        for m in range(k + 1):
            e = c0.copy()
            e[m] += 1.0
            A[:, m] = _top_rows(_set_order(j, k, e), k, identities) - r0
        rn = np.maximum(np.max(np.abs(A), axis=1), 1e-30)
        delta, *_ = np.linalg.lstsq(A / rn[:, None], -r0 / rn, rcond=None)
        j = _set_order(j, k, c0 + delta)
        r0 = _top_rows(j, k, identities)
        if float(np.max(np.abs(r0))) < 1e-13:
            break
    return j


def _project(j: Jet2, identities, start: int = 3) -> Jet2:
    for k in range(start, j.order + 1):
        j = _project_order(j, k, identities)
    return j


# identity jets defining each subbundle; all assume u_xx != 0 at the base
# where a quotient appears

def _hess(j):
    return hessian(j)


def _R(j):
    uxx = partial(partial(j, "x"), "x")
    uxy = partial(partial(j, "x"), "y")
    return uxy / uxx


def _Rx(j):
    return partial(_R(j), "x")


def _Rxx(j):
    return partial(_Rx(j), "x")


def _S(j):
    uxx = partial(partial(j, "x"), "x")
    uxxx = partial(uxx, "x")
    uxxxx = partial(uxxx, "x")
    return (3.0 * uxx * uxxxx - 5.0 * uxxx * uxxx) / (3.0 * uxx * uxx)


def _T(j):
    uxx = partial(partial(j, "x"), "x")
    L = partial(uxx, "x") / uxx
    S = _S(j)
    return 2.0 * L * S - 3.0 * partial(S, "x")


def _h3_relation(j):
    c1, c2 = c1_c2(j)
    return c1 + c2 * sqrt_jet(-hessian(j))


_IDENTITIES = {
    B.P1: (_hess,),
    B.P1_1: (_hess,),
    B.P1_1_1: (_hess,),
    B.P1_1_2: (_hess, _Rxx),
    B.P1_1_2_1: (_hess, _Rxx),
    B.P1_2: (_hess, _Rx),
    B.P1_2_1: (_hess, _Rx),
    B.H3: (_h3_relation,),
    B.H3_1: (_h3_relation,),
}

# terminal leaves realized by named model surfaces; sampled as exact orbit
# images instead of identity projection
_MODEL_ORBITS = frozenset({B.EH2_1, B.EH2_2, B.H3_2, B.P1_1_2_2, B.P1_2_2})


def _margins_ok(branch, j: Jet2, margin: float) -> bool:
    if branch in (B.P1_1, B.P1_1_1, B.P1_1_2, B.P1_1_2_1, B.P1_1_2_2):
        if abs(_Rx(j).value()) < margin:
            return False
    if branch == B.P1_1_1:
        if abs(_Rxx(j).value()) < margin:
            return False
    if branch == B.P1_1_2_1:
        if abs(_T(j).value()) < margin:
            return False
    if branch == B.P1_2_1:
        # the closed form uses S^{3/2}: stay in the S > 0 sign class
        if _S(j).value() < margin:
            return False
    if branch in (B.H3, B.H3_1):
        _, c2 = c1_c2(j)
        if abs(c2.value()) < margin:
            return False
    if branch == B.H3_1:
        a40, a31, a22 = j.deriv(4, 0), j.deriv(3, 1), j.deriv(2, 2)
        if abs(a40 + 2.0 * a31 + a22) < margin:  # A3-type combination
            return False
    return True


def _quadric_jet(branch, eps: int, rng, order: int) -> Jet2:
    if branch == B.EH2_2:
        return Jet2.from_derivatives({(2, 0): 1.0, (0, 2): float(eps)}, order)
    # central quadric patches: ellipsoid for eps=+1, one-sheet hyperboloid else
    x, y = Jet2.coords(order)
    if eps == 1:
        x0, y0 = rng.uniform(-0.4, 0.4, size=2)
        arg = 1.0 - (x0 + x) * (x0 + x) - (y0 + y) * (y0 + y)
        return 1.0 - sqrt_jet(arg)
    x0 = rng.uniform(1.2, 1.8)
    y0 = rng.uniform(-0.3, 0.3)
    arg = (x0 + x) * (x0 + x) + (y0 + y) * (y0 + y) - 1.0
    return sqrt_jet(arg)


_CAYLEY = {(1, 1): 1.0, (3, 0): -2.0}


def cayley_jet(order: int = DEFAULT_ORDER, at: tuple[float, float] = (0.0, 0.0)) -> Jet2:
    """Jet of u = xy - x^3/3 recentered to the given point."""
    from .jets import recenter

    j = Jet2.from_derivatives(_CAYLEY, order)
    if at == (0.0, 0.0):
        return j
    return recenter(j, at[0], at[1])


def random_in_branch(
    branch,
    rng,
    order: int = DEFAULT_ORDER,
    eps: int = 1,
    scale: float = 0.6,
    margin: float = 0.15,
    transform: bool = False,
    max_tries: int = 200,
) -> PointedSurfaceJet:
    """Random jet on the branch's subbundle, inside the closed-form domain.

    `eps` picks the Hessian sign where the branch has both.  With
    `transform` the jet is pushed through a random group element, leaving
    the branch but exercising equivariance."""
    branch = B(branch)
    for _ in range(max_tries):
        j = _draw(branch, rng, order, eps, scale)
        if j is None or not _margins_ok(branch, j, margin):
            continue
        s = PointedSurfaceJet.from_jet(j)
        if transform or branch in _MODEL_ORBITS:
            s = prolong(random_element(rng), s)
        return s
    raise UsageError(f"could not sample a {branch.value} jet in {max_tries} tries")


def _draw(branch, rng, order, eps, scale):
    if branch == B.EH1:
        j = random_jet(rng, order, scale)
        c = np.array(j.coeffs)
        uxy = rng.normal() * 0.3
        c[3], c[4], c[5] = 0.5, uxy, 0.5 * (float(eps) * (1.0 + abs(rng.normal() * 0.4)) + uxy * uxy)
        return j.with_coeffs(c)
    if branch in (B.EH2_1, B.EH2_2):
        return _quadric_jet(branch, eps, rng, order)
    if branch == B.H3_2:
        return cayley_jet(order, tuple(rng.uniform(-0.5, 0.5, size=2)))
    if branch == B.P1_2_2:
        return Jet2.from_derivatives({(2, 0): 1.0}, order)
    if branch == B.P1_1_2_2:
        x, y = Jet2.coords(order)
        x0 = rng.uniform(-0.6, 0.6)
        y0 = rng.uniform(0.8, 1.6) * (1 if rng.random() < 0.5 else -1)
        return ((x0 + x) * (x0 + x)) / (y0 + y)
    if branch == B.P2:
        j = random_jet(rng, order, scale)
        return _set_order(j, 2, np.zeros(3))
    ids = _IDENTITIES.get(branch)
    if ids is None:
        raise UsageError(f"no sampler for branch {branch!r}")
    j = random_jet(rng, order, scale)
    c = np.array(j.coeffs)
    c[3], c[4], c[5] = 0.5, 0.0, 0.0  # u_xx = 1, u_xy = u_yy = 0
    if branch in (B.H3, B.H3_1):
        c[5] = -0.5  # h = -1 at the base
    j = j.with_coeffs(c)
    try:
        return _project(j, ids)
    except Exception:
        return None
