"""ReLU feedforward networks viewed as static weight-state systems.

Three single-output, two-layer architectures are supported:

* fixed-output: hidden-to-output weights pinned to 1, no bias;
* bias: same, plus a trainable bias on every hidden node;
* general: trainable first-layer weights, biases, and output weights.

The network weights are flattened into one state vector ``w`` (columns of
the first-layer matrix stacked, then biases, then output weights).  The
module evaluates the network, stacks outputs over an input sequence, and
assembles the Jacobian of that stacked map with respect to ``w``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .numlin import as_matrix, as_vector, numeric_rank

__all__ = [
    "Variant",
    "Architecture",
    "WeightState",
    "BoundaryActivation",
    "relu",
    "chi",
    "forward",
    "pre_activations",
    "observability_map",
    "observability_jacobian",
    "ObservabilityJacobian",
    "DeficiencyCertificate",
    "multilayer_rank_deficiency",
]


class Variant(enum.Enum):
    """Which weights are trainable state."""

    FIXED_OUTPUT_TWO_LAYER = "fixed-output"
    BIAS_TWO_LAYER = "bias"
    GENERAL_TWO_LAYER = "general"


class BoundaryActivation(ValueError):
    """A pre-activation sits on (or too close to) the ReLU kink."""


@dataclass(frozen=True)
class Architecture:
    variant: Variant
    m: int  # input nodes
    n: int  # hidden nodes

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise ValueError(f"need m >= 1 and n >= 1, got m={self.m}, n={self.n}")

    @classmethod
    def fixed_output(cls, m: int, n: int) -> "Architecture":
        return cls(Variant.FIXED_OUTPUT_TWO_LAYER, m, n)

    @classmethod
    def bias(cls, m: int, n: int) -> "Architecture":
        return cls(Variant.BIAS_TWO_LAYER, m, n)

    @classmethod
    def general(cls, m: int, n: int) -> "Architecture":
        return cls(Variant.GENERAL_TWO_LAYER, m, n)

    @property
    def state_dim(self) -> int:
        if self.variant is Variant.FIXED_OUTPUT_TWO_LAYER:
            return self.m * self.n
        if self.variant is Variant.BIAS_TWO_LAYER:
            return (self.m + 1) * self.n
        return (self.m + 2) * self.n

    @property
    def has_bias(self) -> bool:
        return self.variant is not Variant.FIXED_OUTPUT_TWO_LAYER

    @property
    def has_output_weights(self) -> bool:
        return self.variant is Variant.GENERAL_TWO_LAYER


@dataclass(frozen=True)
class WeightState:
    """Flattened weight vector plus its architecture tag.

    Layout of ``w``: the n columns of the first-layer matrix W (each of
    length m), then the n biases when present, then the n output weights
    when present.
    """

    w: np.ndarray = field(repr=False)
    arch: Architecture

    def __post_init__(self):
        v = as_vector(self.w)
        if v.size != self.arch.state_dim:
            raise ValueError(
                f"state vector has length {v.size}, architecture needs {self.arch.state_dim}"
            )
        object.__setattr__(self, "w", v)

    @classmethod
    def from_parts(cls, arch: Architecture, W, b=None, w2=None) -> "WeightState":
        """Assemble a state from the first-layer matrix and optional parts."""
        W = as_matrix(W)
        if W.shape != (arch.m, arch.n):
            raise ValueError(f"W has shape {W.shape}, expected {(arch.m, arch.n)}")
        parts = [W.T.ravel()]
        if arch.has_bias:
            if b is None:
                raise ValueError("architecture has biases but b was not given")
            b = as_vector(b)
            if b.size != arch.n:
                raise ValueError(f"b has length {b.size}, expected {arch.n}")
            parts.append(b)
        elif b is not None:
            raise ValueError("architecture has no biases")
        if arch.has_output_weights:
            if w2 is None:
                raise ValueError("architecture has output weights but w2 was not given")
            w2 = as_vector(w2)
            if w2.size != arch.n:
                raise ValueError(f"w2 has length {w2.size}, expected {arch.n}")
            parts.append(w2)
        elif w2 is not None:
            raise ValueError("architecture has no trainable output weights")
        return cls(np.concatenate(parts), arch)

    @property
    def W(self) -> np.ndarray:
        """First-layer weight matrix, column j feeding hidden node j."""
        m, n = self.arch.m, self.arch.n
        return self.w[: m * n].reshape(n, m).T

    @property
    def b(self) -> np.ndarray:
        if not self.arch.has_bias:
            raise AttributeError("architecture has no biases")
        m, n = self.arch.m, self.arch.n
        return self.w[m * n : (m + 1) * n]

    @property
    def w2(self) -> np.ndarray:
        if not self.arch.has_output_weights:
            raise AttributeError("architecture has no trainable output weights")
        m, n = self.arch.m, self.arch.n
        return self.w[(m + 1) * n : (m + 2) * n]

    def replace_w(self, new_w) -> "WeightState":
        return WeightState(np.asarray(new_w, dtype=float), self.arch)

    @property
    def stacked(self) -> np.ndarray:
        """W with the bias row appended when present (the (m+1) x n matrix)."""
        if self.arch.has_bias:
            return np.vstack([self.W, self.b])
        return self.W


def relu(a):
    """Elementwise max(0, a)."""
    return np.maximum(0.0, np.asarray(a, dtype=float))


def chi(a):
    """Elementwise activation indicator: 1 where a > 0, else 0 (0 at the kink)."""
    return (np.asarray(a, dtype=float) > 0.0).astype(float)


def pre_activations(weights: WeightState, U) -> np.ndarray:
    """Hidden-layer pre-activations for every input row of ``U`` (N x n)."""
    U = as_matrix(U)
    if U.shape[1] != weights.arch.m:
        raise ValueError(f"inputs have {U.shape[1]} columns, architecture has m={weights.arch.m}")
    pre = U @ weights.W
    if weights.arch.has_bias:
        pre = pre + weights.b
    return pre


def observability_map(weights: WeightState, U) -> np.ndarray:
    """Stacked network outputs over the rows of ``U`` (length N)."""
    act = relu(pre_activations(weights, U))
    if weights.arch.has_output_weights:
        return act @ weights.w2
    return act.sum(axis=1)


def forward(weights: WeightState, u) -> float:
    """Network output for a single input vector."""
    u = as_vector(u)
    return float(observability_map(weights, u.reshape(1, -1))[0])


@dataclass(frozen=True)
class ObservabilityJacobian:
    """Jacobian of the stacked output map with respect to the weight state."""

    DH: np.ndarray
    T_chi: np.ndarray
    U: np.ndarray

    def t_u(self) -> np.ndarray:
        """Dense block-diagonal input matrix (N x N*m), row i holding u_i^T."""
        N, m = self.U.shape
        T = np.zeros((N, N * m))
        for i in range(N):
            T[i, i * m : (i + 1) * m] = self.U[i]
        return T


def observability_jacobian(
    weights: WeightState, U, *, boundary_tol: float | None = 1e-12
) -> ObservabilityJacobian:
    """Assemble the output-sequence Jacobian for any of the three architectures.

    Raises :class:`BoundaryActivation` when a pre-activation lies within
    ``boundary_tol`` of zero, where the ReLU derivative is undefined.  Pass
    ``boundary_tol=None`` to skip the check and use the subgradient 0 at the
    kink (the convention used by the gradient-descent baselines).
    """
    U = as_matrix(U)
    pre = pre_activations(weights, U)
    if boundary_tol is not None and np.abs(pre).min(initial=np.inf) <= boundary_tol:
        i, j = np.unravel_index(np.argmin(np.abs(pre)), pre.shape)
        raise BoundaryActivation(
            f"pre-activation ({i},{j}) = {pre[i, j]:.3e} is within {boundary_tol:.0e} of zero"
        )
    T_chi = chi(pre)
    N = U.shape[0]
    m, n = weights.arch.m, weights.arch.n

    if weights.arch.has_output_weights:
        w_block = np.einsum("ij,j,ik->ijk", T_chi, weights.w2, U).reshape(N, n * m)
        blocks = [w_block, T_chi * weights.w2, pre * T_chi]
    else:
        w_block = np.einsum("ij,ik->ijk", T_chi, U).reshape(N, n * m)
        blocks = [w_block]
        if weights.arch.has_bias:
            blocks.append(T_chi)
    DH = np.hstack(blocks) if len(blocks) > 1 else blocks[0]
    return ObservabilityJacobian(DH=DH, T_chi=T_chi, U=U)


@dataclass(frozen=True)
class DeficiencyCertificate:
    """Witnessed rank deficiency of a general two-layer Jacobian.

    For every hidden node j with nonzero output weight, ``null_vectors[j]``
    combines that node's first-layer columns (weighted by its incoming
    weights over the output weight), its bias column (bias over output
    weight), and its output-weight column (coefficient -1) into an exact
    null vector of the Jacobian.  Nodes with zero output weight instead
    contribute zero first-layer columns.
    """

    rank: int
    state_dim: int
    null_vectors: dict[int, np.ndarray] = field(repr=False)
    residuals: dict[int, float]
    zero_weight_nodes: tuple[int, ...]

    @property
    def rank_deficient(self) -> bool:
        return self.rank < self.state_dim


def multilayer_rank_deficiency(weights: WeightState, U) -> DeficiencyCertificate:
    """Certify that the general two-layer Jacobian can never have full column rank."""
    if not weights.arch.has_output_weights:
        raise ValueError("rank-deficiency certificate applies to the general architecture only")
    jac = observability_jacobian(weights, U, boundary_tol=None)
    m, n = weights.arch.m, weights.arch.n
    dim = weights.arch.state_dim
    W, b, w2 = weights.W, weights.b, weights.w2

    null_vectors: dict[int, np.ndarray] = {}
    residuals: dict[int, float] = {}
    zero_nodes: list[int] = []
    scale = max(np.abs(jac.DH).max(initial=0.0), 1.0)
    for j in range(n):
        if w2[j] == 0.0:
            zero_nodes.append(j)
            continue
        v = np.zeros(dim)
        v[j * m : (j + 1) * m] = W[:, j] / w2[j]
        v[m * n + j] = b[j] / w2[j]
        v[(m + 1) * n + j] = -1.0
        null_vectors[j] = v
        residuals[j] = float(np.linalg.norm(jac.DH @ v) / (scale * max(np.linalg.norm(v), 1.0)))
    rank = numeric_rank(jac.DH).rank
    return DeficiencyCertificate(
        rank=rank,
        state_dim=dim,
        null_vectors=null_vectors,
        residuals=residuals,
        zero_weight_nodes=tuple(zero_nodes),
    )
