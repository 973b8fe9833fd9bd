"""Labels for the affine classification tree of surface points.

The tree splits on the sign of the Hessian determinant h, then refines
by which combinations of third and higher derivatives vanish.  Interior
labels (EH.2, H.3, P.1, ...) are returned when a jet's order cannot
support the deeper tests; leaves are the terminal classes.
"""

from __future__ import annotations

from enum import Enum


class BranchLabel(str, Enum):
    ELLIPTIC = "elliptic"
    HYPERBOLIC = "hyperbolic"
    PARABOLIC = "parabolic"
    EH1 = "EH.1"
    EH2 = "EH.2"
    EH2_1 = "EH.2.1"
    EH2_2 = "EH.2.2"
    H3 = "H.3"
    H3_1 = "H.3.1"
    H3_2 = "H.3.2"
    P1 = "P.1"
    P1_1 = "P.1.1"
    P1_1_1 = "P.1.1.1"
    P1_1_2 = "P.1.1.2"
    P1_1_2_1 = "P.1.1.2.1"
    P1_1_2_2 = "P.1.1.2.2"
    P1_2 = "P.1.2"
    P1_2_1 = "P.1.2.1"
    P1_2_2 = "P.1.2.2"
    P2 = "P.2"

    def __str__(self) -> str:
        return self.value


B = BranchLabel

LEAVES = frozenset(
    {
        B.EH1,
        B.EH2_1,
        B.EH2_2,
        B.H3_1,
        B.H3_2,
        B.P1_1_1,
        B.P1_1_2_1,
        B.P1_1_2_2,
        B.P1_2_1,
        B.P1_2_2,
        B.P2,
    }
)

COARSE = frozenset({B.ELLIPTIC, B.HYPERBOLIC, B.PARABOLIC})

# parent links inside one coarse class; EH.1/EH.2 hang off elliptic or
# hyperbolic depending on eps, H.* is always hyperbolic
_PARENT = {
    B.EH2_1: B.EH2,
    B.EH2_2: B.EH2,
    B.H3_1: B.H3,
    B.H3_2: B.H3,
    B.H3: B.HYPERBOLIC,
    B.P1_1_1: B.P1_1,
    B.P1_1_2_1: B.P1_1_2,
    B.P1_1_2_2: B.P1_1_2,
    B.P1_1_2: B.P1_1,
    B.P1_1: B.P1,
    B.P1_2_1: B.P1_2,
    B.P1_2_2: B.P1_2,
    B.P1_2: B.P1,
    B.P1: B.PARABOLIC,
    B.P2: B.PARABOLIC,
}


def parent(label: BranchLabel, eps: int | None = None):
    """Parent node in the tree; EH nodes need eps to pick their coarse class."""
    label = BranchLabel(label)
    if label in (B.EH1, B.EH2):
        if eps is None:
            return None
        return B.ELLIPTIC if eps > 0 else B.HYPERBOLIC
    return _PARENT.get(label)


def ancestors(label: BranchLabel, eps: int | None = None):
    """Chain of ancestors from the label's parent up to the coarse class."""
    out = []
    cur = parent(label, eps)
    while cur is not None:
        out.append(cur)
        cur = parent(cur, eps)
    return out


def is_refinement(deep: BranchLabel, shallow: BranchLabel, eps: int | None = None) -> bool:
    deep, shallow = BranchLabel(deep), BranchLabel(shallow)
    return deep == shallow or shallow in ancestors(deep, eps)
