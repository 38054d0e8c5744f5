"""The locally observable neighborhood of an anchor weight state.

The neighborhood collects every weight state whose pre-activations under a
fixed persistently exciting input keep the anchor's signs.  All members
share the anchor's activation pattern, hence one common output-sequence
Jacobian, and the set is convex.  Membership is phrased through the ratio
matrix K = (pre' - pre0) / pre0, whose entries must stay above -1; a small
relative margin closes the set so optimizer outputs remain checkable in
floating point.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numlin import as_matrix
from .pe_design import verify_pe
from .relu_net import WeightState, pre_activations

__all__ = ["ObservableNeighborhood", "k_matrix", "membership", "retract"]


@dataclass(frozen=True)
class ObservableNeighborhood:
    """Anchor state, exciting input, and the frozen activation pattern."""

    anchor: WeightState
    U: np.ndarray = field(repr=False)
    ref_pre: np.ndarray = field(repr=False)
    ref_signs: np.ndarray = field(repr=False)
    margin: float

    @classmethod
    def build(cls, anchor: WeightState, U, margin: float = 1e-9) -> "ObservableNeighborhood":
        if anchor.arch.has_output_weights:
            raise ValueError(
                "observable neighborhoods need the rank certificate, which the "
                "general architecture can never satisfy"
            )
        U = as_matrix(U)
        pre = pre_activations(anchor, U)
        if np.abs(pre).min() == 0.0:
            raise ValueError("anchor pre-activations must be nonzero under U")
        if not verify_pe(U, anchor).pe:
            raise ValueError("U is not persistently exciting for the anchor state")
        return cls(
            anchor=anchor,
            U=U,
            ref_pre=pre,
            ref_signs=np.sign(pre),
            margin=float(margin),
        )

    def state_of(self, other) -> WeightState:
        """Coerce a weight matrix (stacked, for the bias case) to a WeightState."""
        if isinstance(other, WeightState):
            if other.arch != self.anchor.arch:
                raise ValueError("architecture mismatch")
            return other
        M = as_matrix(other)
        arch = self.anchor.arch
        if arch.has_bias:
            if M.shape != (arch.m + 1, arch.n):
                raise ValueError(f"expected stacked shape {(arch.m + 1, arch.n)}, got {M.shape}")
            return WeightState.from_parts(arch, M[:-1], b=M[-1])
        return WeightState.from_parts(arch, M)


def k_matrix(neigh: ObservableNeighborhood, W_prime) -> np.ndarray:
    """Entrywise ratio of the pre-activation shift to the anchor pre-activations."""
    other = neigh.state_of(W_prime)
    pre = pre_activations(other, neigh.U)
    return (pre - neigh.ref_pre) / neigh.ref_pre


def membership(neigh: ObservableNeighborhood, W_prime) -> bool:
    """Whether ``W_prime`` keeps the anchor's activation pattern with margin."""
    return bool(np.all(k_matrix(neigh, W_prime) > -1.0 + neigh.margin))


def retract(neigh: ObservableNeighborhood, frm: WeightState, to: WeightState) -> WeightState:
    """Farthest member on the segment from ``frm`` toward ``to``.

    ``frm`` must be a member; by convexity the feasible part of the segment
    is a prefix, so 40 bisection steps pin the boundary and the last feasible
    point is returned.  A ``to`` that is already a member is returned as is.
    """
    if not membership(neigh, frm):
        raise ValueError("retraction start point is not a member")
    if membership(neigh, to):
        return to
    lo, hi = 0.0, 1.0
    direction = to.w - frm.w
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        if membership(neigh, frm.replace_w(frm.w + mid * direction)):
            lo = mid
        else:
            hi = mid
    return frm.replace_w(frm.w + lo * direction)
