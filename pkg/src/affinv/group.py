"""Affine transformations of 3-space and their action on surface jets.

An element (A, b) acts on points by z -> A z + b.  Acting on a surface
graph u(x, y) means transforming its graph as a set and re-expressing
the image as a graph over the new (x, y) plane; ``prolong`` does this at
the jet level by composing the image height with the inverse of the
image plane map, which is exact at the stored truncation order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import FormulaDomainError, UsageError
from .jets import TOL_DET, Jet2, compose_pair, invert_map

_MIN_DET = 1e-9


@dataclass(frozen=True, eq=False)
class AffineElement:
    """Invertible affine map z -> A z + b of R^3."""

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        b = np.asarray(self.b, dtype=float)
        if A.shape != (3, 3) or b.shape != (3,):
            raise UsageError("AffineElement needs a 3x3 matrix and a 3-vector")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise UsageError("non-finite entries in an affine element")
        if abs(float(np.linalg.det(A))) <= _MIN_DET:
            raise UsageError("matrix part is (near-)singular")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    def __matmul__(self, other: "AffineElement") -> "AffineElement":
        return compose(self, other)


def identity() -> AffineElement:
    return AffineElement(np.eye(3), np.zeros(3))


def compose(g: AffineElement, h: AffineElement) -> AffineElement:
    """Element acting as z -> g(h(z))."""
    return AffineElement(g.A @ h.A, g.A @ h.b + g.b)


def inverse(g: AffineElement) -> AffineElement:
    Ai = np.linalg.inv(g.A)
    return AffineElement(Ai, -Ai @ g.b)


def act_point(g: AffineElement, z) -> np.ndarray:
    return g.A @ np.asarray(z, dtype=float) + g.b


def translation(dz) -> AffineElement:
    return AffineElement(np.eye(3), np.asarray(dz, dtype=float))


def linear(A) -> AffineElement:
    return AffineElement(A, np.zeros(3))


@dataclass(frozen=True, eq=False)
class PointedSurfaceJet:
    """A surface jet together with the 3-space point it expands around."""

    jet: Jet2
    point: np.ndarray
    near_vertical: bool = field(default=False, compare=False)

    def __post_init__(self):
        p = np.asarray(self.point, dtype=float)
        if p.shape != (3,):
            raise UsageError("point must be a 3-vector")
        bx, by = self.jet.base
        if p[0] != bx or p[1] != by or p[2] != self.jet.coeffs[0]:
            raise UsageError("point must match the jet's basepoint and value")
        object.__setattr__(self, "point", p)

    @staticmethod
    def from_jet(jet: Jet2, near_vertical: bool = False) -> "PointedSurfaceJet":
        p = np.array([jet.base[0], jet.base[1], jet.coeffs[0]])
        return PointedSurfaceJet(jet, p, near_vertical)

    @property
    def order(self) -> int:
        return self.jet.order

    def truncate(self, order: int) -> "PointedSurfaceJet":
        return PointedSurfaceJet(self.jet.truncate(order), self.point, self.near_vertical)


def prolong(g: AffineElement, s: PointedSurfaceJet) -> PointedSurfaceJet:
    """Transform a pointed surface jet by a group element.

    Raises FormulaDomainError when the image fails to be a graph over
    the horizontal plane near the image point.  Dets within a factor 10
    of the cutoff are accepted but flagged ``near_vertical``.
    """
    n = s.jet.order
    xj, yj = Jet2.coords(n, s.jet.base)
    uj = s.jet
    rows = []
    for r in range(3):
        rows.append(g.A[r, 0] * xj + g.A[r, 1] * yj + g.A[r, 2] * uj + g.b[r])
    X, Y, U = rows
    Xc = X - X.coeffs[0]
    Yc = Y - Y.coeffs[0]

    M = np.array(
        [
            [Xc.coeff(1, 0), Xc.coeff(0, 1)],
            [Yc.coeff(1, 0), Yc.coeff(0, 1)],
        ]
    )
    det = abs(M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0])
    ref = max(float(np.sum(M * M)), 1e-300)
    if det <= TOL_DET * ref:
        raise FormulaDomainError(
            "transformed surface is not a graph direction at the image point"
        )
    flagged = s.near_vertical or det <= 10.0 * TOL_DET * ref

    hx, hy = invert_map(Xc, Yc)
    out = compose_pair(U, hx, hy)
    out = Jet2(n, (X.coeffs[0], Y.coeffs[0]), out.coeffs)
    return PointedSurfaceJet.from_jet(out, near_vertical=flagged)


def random_element(seed, conditioning: float = 10.0) -> AffineElement:
    """Deterministic random element with cond(A) <= conditioning and
    |det A| >= 1/conditioning."""
    if conditioning < 1.0:
        raise UsageError("conditioning must be >= 1")
    rng = np.random.default_rng(seed)
    q1 = _random_rotation(rng)
    q2 = _random_rotation(rng)
    half = np.log(conditioning) / 3.0
    sv = np.exp(rng.uniform(-half, half, size=3))
    A = q1 @ np.diag(sv) @ q2
    b = rng.normal(0.0, 1.0, size=3)
    return AffineElement(A, b)


def _random_rotation(rng) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q @ np.diag(np.sign(np.diag(r)))
    if np.linalg.det(q) < 0:
        q[:, 2] = -q[:, 2]
    return q
