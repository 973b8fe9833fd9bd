"""Truncated bivariate Taylor expansions ("jets") with exact ring arithmetic.

A jet of order N stores the coefficients c_ij of

    u(x0 + dx, y0 + dy) = sum_{i+j <= N} c_ij dx^i dy^j

in a dense array ordered by total degree, then by y-exponent within a
degree (graded lexicographic).  The coefficient convention is monomial:
c_ij = u_{x^i y^j}(x0, y0) / (i! j!).  ``coeff_as_derivative`` converts
back to derivative values.

Division, square root and logarithm are computed degree by degree with
the standard convolution recurrences, which are exact up to round-off
and deterministic.  Composition and map inversion only ever gain one
order of accuracy per step, so ``invert_map`` runs a fixed-point pass
per order.

Binary operators on Jet2 accept mixed orders and truncate to the smaller
operand (derivatives lower the order, so mixed orders are routine when
assembling formulas).  The module-level ``add``/``mul``/``div`` are
strict: mismatched order or basepoint raises UsageError.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import FormulaDomainError, UsageError

DEFAULT_ORDER = 9

# Zero tests are absolute after scaling by the jet's largest coefficient.
TOL_DIV = 1e-9
TOL_DET = 1e-9


def size_of(order: int) -> int:
    return (order + 1) * (order + 2) // 2


def index_of(i: int, j: int) -> int:
    """Position of the dx^i dy^j coefficient in graded-lex storage."""
    d = i + j
    return d * (d + 1) // 2 + j


@lru_cache(maxsize=None)
def exponents(order: int):
    """Arrays (I, J) with the x/y exponents of every storage slot."""
    m = size_of(order)
    I = np.empty(m, dtype=np.int64)
    J = np.empty(m, dtype=np.int64)
    for d in range(order + 1):
        for j in range(d + 1):
            t = d * (d + 1) // 2 + j
            I[t] = d - j
            J[t] = j
    return I, J


@lru_cache(maxsize=None)
def _mul_table(order: int):
    I, J = exponents(order)
    m = size_of(order)
    ia, ib, ic = [], [], []
    for a in range(m):
        for b in range(m):
            i, j = I[a] + I[b], J[a] + J[b]
            if i + j <= order:
                ia.append(a)
                ib.append(b)
                ic.append(index_of(i, j))
    return np.asarray(ia), np.asarray(ib), np.asarray(ic)


@lru_cache(maxsize=None)
def _conv_pairs(order: int, skip_units: bool):
    """Per-slot convolution pairs (P_t, Q_t) with p + q = t.

    skip_units=False drops only q = (0,0) (division recurrence);
    skip_units=True drops both endpoints (sqrt recurrence).
    """
    I, J = exponents(order)
    m = size_of(order)
    out = []
    for t in range(m):
        ps, qs = [], []
        for q in range(m):
            qi, qj = I[q], J[q]
            pi, pj = I[t] - qi, J[t] - qj
            if pi < 0 or pj < 0:
                continue
            if qi == 0 and qj == 0:
                continue
            if skip_units and pi == 0 and pj == 0:
                continue
            ps.append(index_of(pi, pj))
            qs.append(q)
        out.append((np.asarray(ps, dtype=np.int64), np.asarray(qs, dtype=np.int64)))
    return out


@dataclass(frozen=True, eq=False)
class Jet2:
    """Order-N truncated Taylor expansion of a function of two variables."""

    order: int
    base: tuple[float, float]
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        if self.order < 0:
            raise UsageError("jet order must be nonnegative")
        if c.shape != (size_of(self.order),):
            raise UsageError(
                f"coefficient array has shape {c.shape}, "
                f"expected ({size_of(self.order)},) for order {self.order}"
            )
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "base", (float(self.base[0]), float(self.base[1])))

    # -- constructors -------------------------------------------------

    @staticmethod
    def zero(order: int, base=(0.0, 0.0)) -> "Jet2":
        return Jet2(order, base, np.zeros(size_of(order)))

    @staticmethod
    def constant(value: float, order: int, base=(0.0, 0.0)) -> "Jet2":
        c = np.zeros(size_of(order))
        c[0] = value
        return Jet2(order, base, c)

    @staticmethod
    def coords(order: int, base=(0.0, 0.0)):
        """Jets of the two coordinate functions around ``base``."""
        cx = np.zeros(size_of(order))
        cy = np.zeros(size_of(order))
        cx[0], cy[0] = base
        cx[index_of(1, 0)] = 1.0
        cy[index_of(0, 1)] = 1.0
        return Jet2(order, base, cx), Jet2(order, base, cy)

    @staticmethod
    def from_derivatives(values, order: int, base=(0.0, 0.0)) -> "Jet2":
        """Build a jet from a {(i, j): u_{x^i y^j}} mapping of derivative values."""
        c = np.zeros(size_of(order))
        for (i, j), v in dict(values).items():
            if i + j > order:
                raise UsageError(f"derivative ({i},{j}) exceeds order {order}")
            c[index_of(i, j)] = v / (math.factorial(i) * math.factorial(j))
        return Jet2(order, base, c)

    # -- basic access --------------------------------------------------

    def coeff(self, i: int, j: int) -> float:
        if i < 0 or j < 0 or i + j > self.order:
            raise UsageError(f"coefficient ({i},{j}) out of range for order {self.order}")
        return float(self.coeffs[index_of(i, j)])

    def value(self) -> float:
        """Value at the basepoint (the constant coefficient)."""
        return float(self.coeffs[0])

    def deriv(self, i: int, j: int) -> float:
        return coeff_as_derivative(self, i, j)

    def with_coeffs(self, coeffs) -> "Jet2":
        return Jet2(self.order, self.base, coeffs)

    def with_base(self, base) -> "Jet2":
        return Jet2(self.order, base, self.coeffs.copy())

    def scale(self) -> float:
        """Largest coefficient magnitude, the reference for zero tests."""
        return float(np.max(np.abs(self.coeffs)))

    def truncate(self, order: int) -> "Jet2":
        if order > self.order:
            raise UsageError("cannot raise jet order by truncation")
        return Jet2(order, self.base, self.coeffs[: size_of(order)].copy())

    def __repr__(self):
        parts = []
        I, J = exponents(self.order)
        for t, v in enumerate(self.coeffs):
            if v != 0.0:
                parts.append(f"{v:.6g}*dx^{I[t]}dy^{J[t]}")
            if len(parts) > 6:
                parts.append("...")
                break
        body = " + ".join(parts) if parts else "0"
        return f"Jet2(order={self.order}, base={self.base}: {body})"

    # -- operators (auto-truncating) ------------------------------------

    def _align(self, other: "Jet2"):
        if not _same_base(self.base, other.base):
            raise UsageError(f"basepoint mismatch: {self.base} vs {other.base}")
        n = min(self.order, other.order)
        return self.truncate(n) if self.order > n else self, (
            other.truncate(n) if other.order > n else other
        )

    def __add__(self, other):
        if isinstance(other, Jet2):
            a, b = self._align(other)
            return Jet2(a.order, a.base, a.coeffs + b.coeffs)
        c = self.coeffs.copy()
        c[0] += other
        return Jet2(self.order, self.base, c)

    __radd__ = __add__

    def __neg__(self):
        return Jet2(self.order, self.base, -self.coeffs)

    def __sub__(self, other):
        return self.__add__(-other if isinstance(other, Jet2) else -float(other))

    def __rsub__(self, other):
        return (-self).__add__(other)

    def __mul__(self, other):
        if isinstance(other, Jet2):
            a, b = self._align(other)
            ia, ib, ic = _mul_table(a.order)
            c = np.bincount(ic, weights=a.coeffs[ia] * b.coeffs[ib], minlength=a.coeffs.size)
            return Jet2(a.order, a.base, c)
        return Jet2(self.order, self.base, self.coeffs * float(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Jet2):
            a, b = self._align(other)
            return _div_aligned(a, b)
        return Jet2(self.order, self.base, self.coeffs / float(other))

    def __rtruediv__(self, other):
        return Jet2.constant(float(other), self.order, self.base).__truediv__(self)

    def __pow__(self, k: int):
        if not isinstance(k, int) or k < 0:
            raise UsageError("jet powers must be nonnegative integers")
        out = Jet2.constant(1.0, self.order, self.base)
        for _ in range(k):
            out = out * self
        return out


# -- spec'd operations ------------------------------------------------


def add(a: Jet2, b: Jet2) -> Jet2:
    _check_same(a, b)
    return a + b


def mul(a: Jet2, b: Jet2) -> Jet2:
    _check_same(a, b)
    return a * b


def div(a: Jet2, b: Jet2) -> Jet2:
    _check_same(a, b)
    return _div_aligned(a, b)


def _same_base(p, q) -> bool:
    # bases produced by round-tripped group actions differ by round-off
    ref = 1.0 + max(abs(p[0]), abs(p[1]), abs(q[0]), abs(q[1]))
    return abs(p[0] - q[0]) <= 1e-12 * ref and abs(p[1] - q[1]) <= 1e-12 * ref


def _check_same(a: Jet2, b: Jet2):
    if a.order != b.order:
        raise UsageError(f"order mismatch: {a.order} vs {b.order}")
    if not _same_base(a.base, b.base):
        raise UsageError(f"basepoint mismatch: {a.base} vs {b.base}")


def _div_aligned(a: Jet2, b: Jet2) -> Jet2:
    b0 = b.coeffs[0]
    if abs(b0) <= TOL_DIV * max(b.scale(), 1e-300):
        raise FormulaDomainError("division by a jet with (near-)zero constant term")
    pairs = _conv_pairs(a.order, skip_units=False)
    c = np.empty_like(a.coeffs)
    c[0] = a.coeffs[0] / b0
    for t in range(1, c.size):
        ps, qs = pairs[t]
        acc = a.coeffs[t] - float(c[ps] @ b.coeffs[qs])
        c[t] = acc / b0
    return Jet2(a.order, a.base, c)


def sqrt_jet(a: Jet2) -> Jet2:
    """Jet s with s*s = a; requires a positive constant term."""
    a0 = a.coeffs[0]
    if a0 <= TOL_DIV * max(a.scale(), 1e-300):
        raise FormulaDomainError("sqrt of a jet with non-positive constant term")
    pairs = _conv_pairs(a.order, skip_units=True)
    s = np.empty_like(a.coeffs)
    s[0] = math.sqrt(a0)
    for t in range(1, s.size):
        ps, qs = pairs[t]
        acc = a.coeffs[t] - (float(s[ps] @ s[qs]) if ps.size else 0.0)
        s[t] = acc / (2.0 * s[0])
    return Jet2(a.order, a.base, s)


def ln_jet(a: Jet2) -> Jet2:
    """Jet of ln|a|; requires a nonzero constant term."""
    a0 = a.coeffs[0]
    if abs(a0) <= TOL_DIV * max(a.scale(), 1e-300):
        raise FormulaDomainError("log of a jet with (near-)zero constant term")
    w = a * (1.0 / a0) - 1.0  # zero constant term
    n = a.order
    if n == 0:
        return Jet2.constant(math.log(abs(a0)), 0, a.base)
    acc = Jet2.constant((-1.0) ** (n + 1) / n, n, a.base)
    for k in range(n - 1, 0, -1):
        acc = acc * w + (-1.0) ** (k + 1) / k
    return acc * w + math.log(abs(a0))


def partial(a: Jet2, axis) -> Jet2:
    """Partial derivative jet; drops one order (order 0 stays order 0, zeroed)."""
    ax = {"x": 0, 0: 0, "y": 1, 1: 1}.get(axis)
    if ax is None:
        raise UsageError(f"axis must be 'x' or 'y', got {axis!r}")
    if a.order == 0:
        return Jet2.zero(0, a.base)
    n = a.order - 1
    I, J = exponents(n)
    c = np.empty(size_of(n))
    for t in range(c.size):
        i, j = int(I[t]), int(J[t])
        if ax == 0:
            c[t] = (i + 1) * a.coeffs[index_of(i + 1, j)]
        else:
            c[t] = (j + 1) * a.coeffs[index_of(i, j + 1)]
    return Jet2(n, a.base, c)


def coeff_as_derivative(a: Jet2, i: int, j: int) -> float:
    if i < 0 or j < 0 or i + j > a.order:
        raise UsageError(f"derivative index ({i},{j}) out of range for order {a.order}")
    return float(a.coeffs[index_of(i, j)]) * math.factorial(i) * math.factorial(j)


def compose_pair(f: Jet2, gx: Jet2, gy: Jet2) -> Jet2:
    """Jet of f(gx(s,t), gy(s,t)).

    gx, gy must share order and base and have zero constant term; the
    result lives at their basepoint.
    """
    _check_same(gx, gy)
    for g in (gx, gy):
        if abs(g.coeffs[0]) > TOL_DIV * max(g.scale(), 1e-300):
            raise UsageError("inner jets of a composition must have zero constant term")
    n = min(f.order, gx.order)
    fx = f.truncate(n) if f.order > n else f
    hx = gx.truncate(n) if gx.order > n else gx
    hy = gy.truncate(n) if gy.order > n else gy
    if abs(hx.coeffs[0]) != 0.0:
        hx = hx.with_coeffs(np.concatenate(([0.0], hx.coeffs[1:])))
    if abs(hy.coeffs[0]) != 0.0:
        hy = hy.with_coeffs(np.concatenate(([0.0], hy.coeffs[1:])))

    xpow = [Jet2.constant(1.0, n, hx.base)]
    for _ in range(n):
        xpow.append(xpow[-1] * hx)
    total = Jet2.zero(n, hx.base)
    for i in range(n + 1):
        jmax = n - i
        acc = Jet2.constant(fx.coeff(i, jmax), n, hx.base)
        for j in range(jmax - 1, -1, -1):
            acc = acc * hy + fx.coeff(i, j)
        total = total + acc * xpow[i]
    return total


def invert_map(gx: Jet2, gy: Jet2):
    """Inverse of the plane map (s,t) -> (gx, gy) as a pair of jets.

    Both components must have zero constant term and a linear part with
    determinant bounded away from zero.
    """
    _check_same(gx, gy)
    n = gx.order
    if n < 1:
        raise UsageError("invert_map needs jets of order >= 1")
    for g in (gx, gy):
        if abs(g.coeffs[0]) > TOL_DIV * max(g.scale(), 1e-300):
            raise UsageError("invert_map requires zero constant terms")
    L = np.array(
        [
            [gx.coeff(1, 0), gx.coeff(0, 1)],
            [gy.coeff(1, 0), gy.coeff(0, 1)],
        ]
    )
    det = L[0, 0] * L[1, 1] - L[0, 1] * L[1, 0]
    ref = max(float(np.sum(L * L)), 1e-300)
    if abs(det) <= TOL_DET * ref:
        raise FormulaDomainError("linear part of the map is (near-)singular")
    Linv = np.array([[L[1, 1], -L[0, 1]], [-L[1, 0], L[0, 0]]]) / det

    ids, idt = Jet2.coords(n, gx.base)
    ids = ids - ids.coeffs[0]
    idt = idt - idt.coeffs[0]
    # split off the nonlinear tails
    gxt = gx - (L[0, 0] * ids + L[0, 1] * idt)
    gyt = gy - (L[1, 0] * ids + L[1, 1] * idt)
    hx = Linv[0, 0] * ids + Linv[0, 1] * idt
    hy = Linv[1, 0] * ids + Linv[1, 1] * idt
    for _ in range(max(n - 1, 1)):
        rx = ids - compose_pair(gxt, hx, hy)
        ry = idt - compose_pair(gyt, hx, hy)
        nhx = Linv[0, 0] * rx + Linv[0, 1] * ry
        nhy = Linv[1, 0] * rx + Linv[1, 1] * ry
        delta = max(
            float(np.max(np.abs(nhx.coeffs - hx.coeffs))),
            float(np.max(np.abs(nhy.coeffs - hy.coeffs))),
        )
        hx, hy = nhx, nhy
        if delta == 0.0:
            break
    return hx, hy


# -- evaluation helpers ------------------------------------------------


def evaluate(a: Jet2, dx: float, dy: float) -> float:
    """Value of the truncated expansion at offset (dx, dy) from the base."""
    I, J = exponents(a.order)
    return float(np.sum(a.coeffs * np.power(dx, I) * np.power(dy, J)))


def recenter(a: Jet2, dx: float, dy: float) -> Jet2:
    """Retaylor the jet polynomial around base + (dx, dy).

    Exact for the stored polynomial; the tail the jet already dropped
    stays dropped, so treat the result as an approximation of the
    underlying function unless the jet was exact.
    """
    n = a.order
    I, J = exponents(n)
    c = np.zeros_like(a.coeffs)
    for t in range(a.coeffs.size):
        v = a.coeffs[t]
        if v == 0.0:
            continue
        i, j = int(I[t]), int(J[t])
        for k in range(i + 1):
            bx = math.comb(i, k) * dx ** (i - k)
            for l in range(j + 1):
                c[index_of(k, l)] += v * bx * math.comb(j, l) * dy ** (j - l)
    return Jet2(n, (a.base[0] + dx, a.base[1] + dy), c)
