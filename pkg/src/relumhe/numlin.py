"""Dense linear-algebra kernel.

SVD-backed pseudoinverse, Greville's recursive pseudoinverse update,
numeric rank decisions, and orthogonal projectors onto the row space /
null space of a matrix.  Everything here operates on plain float64
``numpy`` arrays; inputs are validated to be finite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "RankDecision",
    "as_matrix",
    "pinv",
    "greville_append",
    "greville_pinv",
    "numeric_rank",
    "default_rank_rtol",
    "subspace_projectors",
]


def as_matrix(a, *, allow_empty: bool = False) -> np.ndarray:
    """Coerce ``a`` to a 2-D float64 array, rejecting NaN/Inf entries."""
    m = np.asarray(a, dtype=float)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D array, got ndim={m.ndim}")
    if not allow_empty and m.size == 0:
        raise ValueError("empty matrix")
    if m.size and not np.isfinite(m).all():
        raise ValueError("matrix entries must be finite")
    return m


def as_vector(a) -> np.ndarray:
    """Coerce ``a`` to a 1-D float64 array, rejecting NaN/Inf entries."""
    v = np.asarray(a, dtype=float).ravel()
    if v.size and not np.isfinite(v).all():
        raise ValueError("vector entries must be finite")
    return v


def default_rank_rtol(shape: tuple[int, int]) -> float:
    """Default relative rank tolerance: 1e-10 scaled by the larger dimension."""
    return 1e-10 * max(shape)


@dataclass(frozen=True)
class RankDecision:
    """Outcome of a numeric rank computation.

    ``rank`` counts the singular values strictly above ``tolerance_used``
    (an absolute threshold derived from the relative tolerance).
    """

    rank: int
    singular_values: np.ndarray = field(repr=False)
    tolerance_used: float


def numeric_rank(A, rel_tol: float | None = None) -> RankDecision:
    """Numeric rank of ``A``: number of singular values above rel_tol * sigma_max."""
    M = as_matrix(A)
    if rel_tol is None:
        rel_tol = default_rank_rtol(M.shape)
    if not 0.0 < rel_tol < 1.0:
        raise ValueError(f"rel_tol must lie in (0, 1), got {rel_tol}")
    s = np.linalg.svd(M, compute_uv=False)
    smax = s[0] if s.size else 0.0
    tol = rel_tol * smax if smax > 0 else rel_tol
    rank = int(np.count_nonzero(s > tol))
    return RankDecision(rank=rank, singular_values=s, tolerance_used=tol)


def pinv(A) -> np.ndarray:
    """Moore-Penrose pseudoinverse via SVD with the default rank tolerance."""
    M = as_matrix(A)
    u, s, vt = np.linalg.svd(M, full_matrices=False)
    smax = s[0] if s.size else 0.0
    tol = default_rank_rtol(M.shape) * smax
    inv = np.where(s > tol, np.divide(1.0, s, out=np.zeros_like(s), where=s > 0), 0.0)
    return vt.T @ (inv[:, None] * u.T)


def greville_append(pinv_prev, A_prev, a_k, *, zero_tol: float = 1e-12) -> np.ndarray:
    """Pseudoinverse of ``A_prev`` with row ``a_k`` appended, by Greville's update.

    ``pinv_prev`` must be the pseudoinverse of ``A_prev``.  ``A_prev`` may be
    empty (zero rows), in which case the result is the pseudoinverse of the
    single row ``a_k``.  The rank-deficient branch is taken when the rejection
    of ``a_k`` from the row space of ``A_prev`` has norm at most
    ``zero_tol * (1 + ||a_k||)``.
    """
    a = as_vector(a_k)
    n = a.size
    A_prev = as_matrix(A_prev, allow_empty=True) if A_prev is not None else np.zeros((0, n))
    pinv_prev = (
        as_matrix(pinv_prev, allow_empty=True) if pinv_prev is not None else np.zeros((n, 0))
    )
    if A_prev.size == 0:
        A_prev = A_prev.reshape(0, n)
    if pinv_prev.size == 0:
        pinv_prev = pinv_prev.reshape(n, 0)
    if A_prev.shape[1] != n or pinv_prev.shape != (n, A_prev.shape[0]):
        raise ValueError(
            f"shape mismatch: A_prev {A_prev.shape}, pinv_prev {pinv_prev.shape}, row of size {n}"
        )

    if A_prev.shape[0] == 0:
        nrm2 = float(a @ a)
        b = a / nrm2 if nrm2 > 0 else np.zeros(n)
        return b.reshape(n, 1)

    d = a @ pinv_prev  # coordinates of a_k in the previous rows
    c = a - d @ A_prev  # rejection from the previous row space
    cnorm = np.linalg.norm(c)
    if cnorm > zero_tol * (1.0 + np.linalg.norm(a)):
        b = c / float(c @ c)
    else:
        b = (pinv_prev @ d) / (1.0 + float(d @ d))
    return np.hstack([pinv_prev - np.outer(b, d), b.reshape(n, 1)])


def greville_pinv(A) -> np.ndarray:
    """Pseudoinverse built by applying the Greville row update to every row."""
    M = as_matrix(A)
    n = M.shape[1]
    out = np.zeros((n, 0))
    for k in range(M.shape[0]):
        out = greville_append(out, M[:k], M[k])
    return out


def subspace_projectors(H) -> tuple[np.ndarray, np.ndarray]:
    """Orthogonal projectors onto the row space and null space of ``H``.

    Returns ``(P_row, P_null)`` with ``P_row + P_null = I``; both are
    symmetric and idempotent.
    """
    M = as_matrix(H)
    d = M.shape[1]
    _, s, vt = np.linalg.svd(M, full_matrices=False)
    smax = s[0] if s.size else 0.0
    tol = default_rank_rtol(M.shape) * smax
    r = int(np.count_nonzero(s > tol))
    V = vt[:r]
    P_row = V.T @ V
    P_null = np.eye(d) - P_row
    return P_row, P_null
