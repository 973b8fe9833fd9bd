"""Pointwise branch classification of surface jets.

The decision tree tests, in order: the sign of the Hessian determinant,
the two cubic combinations C1 and C2, and then the branch-specific
higher-order quantities.  Every decision is recorded as a signed margin,
made dimensionless under (x, y, u) -> (lx, ly, mu) by dividing the raw
test value by powers of |u_xx| (weight m/l^2) and of the jet's largest
coefficient magnitude over the decision-relevant orders 2..5 (weight m),
so that one tolerance works across surface scales.

Scaled margins alone cannot tell a structural zero from roundoff on a
badly conditioned chart, so each test value is paired with a noise floor:
the same quantity recomputed from a jet whose coefficients are perturbed
by one part in 1e13.  A value below its floor is treated as zero no
matter what the margin says; a value within a decade of either threshold
flags the result near-boundary.

Jets too short for a deeper test stop at the ancestor label and are
flagged ``truncated``; closed forms that hit their domain boundary stop
with ``formula-domain-fallback``.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .branches import BranchLabel
from .errors import FormulaDomainError, UsageError
from .group import PointedSurfaceJet, linear, prolong
from .invariants import a_invariants, c1_c2, d, hessian, u_x2y2_EH2
from .jets import Jet2, partial, size_of

DEFAULT_TOL = 1e-8

NEAR_BOUNDARY = "near-boundary"
DOMAIN_FALLBACK = "formula-domain-fallback"
TRUNCATED = "truncated"

# a margin within one decade of a threshold still decides the branch,
# but the decision is fragile and the result is flagged
_BAND = 10.0
_PROBE_ETA = 1e-13

_SWAP = linear(np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]))
# pullback (x, y) -> (x, x + y): restores u_xx != 0 whenever any
# second-order derivative survives, at the price of a skewed chart
_SHEAR = linear(np.array([[1.0, 0.0, 0.0], [-1.0, 1.0, 0.0], [0.0, 0.0, 1.0]]))
_YFLIP = linear(np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0]]))


def default_tol() -> float:
    """Zero-test tolerance: AFFINV_TOL from the environment, else 1e-8."""
    raw = os.environ.get("AFFINV_TOL")
    if raw is None:
        return DEFAULT_TOL
    try:
        v = float(raw)
    except ValueError:
        raise UsageError(f"AFFINV_TOL is not a number: {raw!r}") from None
    if not (math.isfinite(v) and v > 0.0):
        raise UsageError(f"AFFINV_TOL must be finite and positive, got {raw!r}")
    return v


@dataclass(frozen=True)
class Classification:
    """Branch label plus the scaled test values that produced it."""

    label: BranchLabel
    eps: int | None
    margins: dict[str, float]
    tol: float
    flags: frozenset[str]

    @property
    def truncated(self) -> bool:
        return TRUNCATED in self.flags


def coefficient_growth(j: Jet2) -> float:
    """Spread between the jet's low-order and full coefficient scales.

    Transforming a jet through a strong affine element inflates the high
    orders geometrically; once the spread exhausts double precision, zero
    tests lose meaning.  Harnesses exercising label invariance reject
    charts whose growth exceeds their Jacobian-margin budget.
    """
    c = np.abs(j.coeffs[3:])
    if c.size == 0 or not np.any(c):
        return 1.0
    low = float(np.max(c[: size_of(3) - 3]))
    if low == 0.0:
        return math.inf
    return float(np.max(c)) / low


@dataclass
class _Walk:
    """Decision state: margins in path order plus accumulated flags."""

    tol: float
    margins: dict[str, float] = field(default_factory=dict)
    flags: set[str] = field(default_factory=set)

    def nonzero(self, name: str, value: float, unit: float, floor: float) -> bool:
        margin = value / unit
        self.margins[name] = float(margin)
        if self.tol / _BAND <= abs(margin) <= self.tol * _BAND:
            self.flags.add(NEAR_BOUNDARY)
        if floor > 0.0 and floor / _BAND <= abs(value) <= floor * _BAND:
            self.flags.add(NEAR_BOUNDARY)
        return abs(margin) > self.tol and abs(value) > floor

    def finish(self, label: BranchLabel, eps: int | None, *extra: str) -> Classification:
        return Classification(
            label=label,
            eps=None if eps is None else int(eps),
            margins=dict(self.margins),
            tol=float(self.tol),
            flags=frozenset(self.flags | set(extra)),
        )


def _perturbed(j: Jet2) -> Jet2:
    signs = np.where(_probe_bits(j.coeffs.size), 1.0, -1.0)
    return j.with_coeffs(j.coeffs * (1.0 + _PROBE_ETA * signs))


def _probe_bits(n: int) -> np.ndarray:
    return np.random.default_rng(1618).integers(0, 2, size=n).astype(bool)


def _pair(fn, j: Jet2, jp: Jet2) -> tuple[float, float]:
    """Value of fn at the jet and its distance to the perturbed value."""
    v = float(fn(j))
    try:
        w = float(fn(jp))
    except FormulaDomainError:
        return v, 0.0
    return v, abs(v - w)


def classify(s, tol: float | None = None) -> Classification:
    """Deepest branch the jet's order and the formula domains can resolve.

    Accepts a PointedSurfaceJet or a bare Jet2; the label is invariant
    under the group action, the margins are chart quantities.  When
    |u_yy| > |u_xx| the jet is classified in the swapped chart (x <-> y),
    and when the whole second-order diagonal vanishes a fixed shear is
    applied first, honoring the u_xx != 0 working assumption of the
    closed forms.
    """
    tol = default_tol() if tol is None else float(tol)
    if not (math.isfinite(tol) and tol > 0.0):
        raise UsageError(f"tol must be finite and positive, got {tol}")
    sp = s if isinstance(s, PointedSurfaceJet) else PointedSurfaceJet.from_jet(s)
    n = sp.order
    if n < 2:
        raise UsageError(f"classification needs jet order >= 2, got {n}")

    w = _Walk(tol)
    if abs(sp.jet.deriv(0, 2)) > abs(sp.jet.deriv(2, 0)):
        sp = prolong(_SWAP, sp)
    anchor, m2, m = _chart_scales(sp.jet)
    if m2 > 0.0 and anchor < tol * m2:
        sp = prolong(_SHEAR, sp)
        w.flags.add(DOMAIN_FALLBACK)
        anchor, m2, m = _chart_scales(sp.jet)
        if anchor < tol * m2:
            anchor = m2
    if m2 == 0.0:
        # the full second-order form vanishes identically in every chart
        w.margins["h"] = 0.0
        w.margins["U_X2"] = 0.0
        return w.finish(BranchLabel.P2, None)

    j = sp.jet
    jp = _perturbed(j)
    hv, floor_h = _pair(lambda t: hessian(t).value(), j, jp)
    if w.nonzero("h", hv, anchor**2, floor_h):
        return _nondegenerate(w, sp, jp, n, m, anchor, 1 if hv > 0.0 else -1)
    return _parabolic(w, sp, jp, n, m, m2, anchor)


def _chart_scales(j: Jet2) -> tuple[float, float, float]:
    """(|u_xx|, max second-order derivative, max coeff at orders 2..5)."""
    m2 = max(abs(j.deriv(2, 0)), abs(j.deriv(1, 1)), abs(j.deriv(0, 2)))
    hi = min(5, j.order)
    m = float(np.max(np.abs(j.coeffs[3 : size_of(hi)])))
    return abs(j.deriv(2, 0)), m2, m


def _factors(jet: Jet2) -> tuple[float, float, float, bool]:
    """|C1 -+ C2 sqrt|h|| in magnitude order, the sign of their product,
    and whether the minus combination is the small one.

    For h < 0 these are the two factors of C1^2 + h C2^2; both vanish
    exactly on the totally degenerate branch, exactly one on H.3.
    """
    hv = hessian(jet).value()
    c1j, c2j = c1_c2(jet)
    c1, c2 = c1j.value(), c2j.value()
    sh = math.sqrt(abs(hv))
    f1, f2 = c1 - sh * c2, c1 + sh * c2
    q = c1 * c1 + hv * c2 * c2
    return min(abs(f1), abs(f2)), max(abs(f1), abs(f2)), math.copysign(1.0, q), abs(f1) < abs(f2)


def _nondegenerate(w, sp, jp, n, m, anchor, eps) -> Classification:
    label = BranchLabel.ELLIPTIC if eps > 0 else BranchLabel.HYPERBOLIC
    if n < 3:
        return w.finish(label, eps, TRUNCATED)
    j = sp.jet
    (fmin, fmax, sign_q, minus_small), (pmin, pmax, _, _) = _factors(j), _factors(jp)
    unit = anchor**4.5 / math.sqrt(m)

    # P-test: for h > 0 the pair (C1, C2) vanishes together, so the larger
    # combination carries the test; for h < 0 the smaller one does, since
    # EH.1 needs both factors of C1^2 + h C2^2 away from zero
    pv = fmax if eps > 0 else fmin
    if w.nonzero("P", math.copysign(pv, sign_q), unit, abs(pv - (pmax if eps > 0 else pmin))):
        return w.finish(BranchLabel.EH1, eps)

    if not w.nonzero("C", fmax, unit, abs(fmax - pmax)):
        label = BranchLabel.EH2
        if n < 4:
            return w.finish(label, eps, TRUNCATED)
        try:
            v, floor = _pair(lambda t: u_x2y2_EH2(t, 1.0 / m), j, jp)
        except FormulaDomainError:
            return w.finish(label, eps, DOMAIN_FALLBACK)
        if w.nonzero("U_X2Y2", v, 1.0, floor):
            return w.finish(BranchLabel.EH2_1, eps)
        return w.finish(BranchLabel.EH2_2, eps)

    label = BranchLabel.H3
    if n < 4:
        return w.finish(label, eps, TRUNCATED)
    if minus_small:
        # the fourth-order forms live on the sign class where C1 + C2 sqrt|h|
        # is the vanishing combination; a y-flip moves the jet there
        j = prolong(_YFLIP, sp).jet
        jp = _perturbed(j)
    try:
        v, floor = _pair(lambda t: max(abs(a) for a in a_invariants(t, 1.0 / m)), j, jp)
    except FormulaDomainError:
        return w.finish(label, eps, DOMAIN_FALLBACK)
    if w.nonzero("A", v, 1.0, floor):
        return w.finish(BranchLabel.H3_1, eps)
    return w.finish(BranchLabel.H3_2, eps)


def _parabolic(w, sp, jp, n, m, m2, anchor) -> Classification:
    if not w.nonzero("U_X2", m2, m, 0.0):
        return w.finish(BranchLabel.P2, None)
    label = BranchLabel.P1
    if n < 3:
        return w.finish(label, None, TRUNCATED)
    j = sp.jet
    lam = math.sqrt(m / anchor)  # the only length scale the chart provides
    try:
        v, floor = _pair(lambda t: _rx(t).value(), j, jp)
        if w.nonzero("U_X2Y", v, 1.0 / lam, floor):
            label = BranchLabel.P1_1
            if n < 4:
                return w.finish(label, None, TRUNCATED)
            v, floor = _pair(lambda t: partial(_rx(t), "x").value(), j, jp)
            if w.nonzero("U_X3Y", v, 1.0 / lam**2, floor):
                return w.finish(BranchLabel.P1_1_1, None)
            label = BranchLabel.P1_1_2
            if n < 5:
                return w.finish(label, None, TRUNCATED)
            v, floor = _pair(lambda t: _t_jet(t).value(), j, jp)
            if w.nonzero("U_X5", v, 1.0 / lam**3, floor):
                return w.finish(BranchLabel.P1_1_2_1, None)
            return w.finish(BranchLabel.P1_1_2_2, None)
        label = BranchLabel.P1_2
        if n < 4:
            return w.finish(label, None, TRUNCATED)
        v, floor = _pair(lambda t: _s_jet(t).value(), j, jp)
        if w.nonzero("U_X4", v, 1.0 / lam**2, floor):
            return w.finish(BranchLabel.P1_2_1, None)
        return w.finish(BranchLabel.P1_2_2, None)
    except FormulaDomainError:
        return w.finish(label, None, DOMAIN_FALLBACK)


def _rx(j: Jet2) -> Jet2:
    return partial(d(j, 1, 1) / d(j, 2, 0), "x")


def _s_jet(j: Jet2) -> Jet2:
    uxx, u30 = d(j, 2, 0), d(j, 3, 0)
    return (3.0 * uxx * d(j, 4, 0) - 5.0 * u30 * u30) / (3.0 * uxx * uxx)


def _t_jet(j: Jet2) -> Jet2:
    S = _s_jet(j)
    L = d(j, 3, 0) / d(j, 2, 0)
    return 2.0 * L * S - 3.0 * partial(S, "x")


def margins_report(c: Classification) -> str:
    """One-line JSON record; classification_from_report inverts it."""
    return json.dumps(
        {
            "label": c.label.value,
            "eps": c.eps,
            "tol": c.tol,
            "flags": sorted(c.flags),
            "margins": c.margins,
        }
    )


def classification_from_report(text: str) -> Classification:
    rec = json.loads(text)
    return Classification(
        label=BranchLabel(rec["label"]),
        eps=rec["eps"],
        margins={k: float(v) for k, v in rec["margins"].items()},
        tol=float(rec["tol"]),
        flags=frozenset(rec["flags"]),
    )
