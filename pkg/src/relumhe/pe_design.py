"""Constructive design of persistently exciting input sequences.

Given a certified weight matrix, the designer picks n intersected orthants
whose activation indicators are linearly independent, takes a full-rank set
of vectors inside each orthant cone, and maps those target pre-activations
back through the pseudoinverse of the weight matrix.  The resulting input
sequence makes the output-sequence Jacobian full column rank, which is
re-verified numerically before a plan is returned.

The bias-architecture variant runs the same construction on the affine
subspace shifted by the bias vector and compensates the shift in the input
formula.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numlin import as_matrix, as_vector, numeric_rank, pinv
from .orthant_geo import (
    INTERIOR_MARGIN,
    SignMatrix,
    _affine_topes,
    _cone_point,
    _cone_rows,
    _dehomogenize,
    _improve_margin,
    _row_basis,
    observability_certificate,
)
from .relu_net import Architecture, WeightState, observability_jacobian

__all__ = [
    "CertificateFailed",
    "ConstructionFailed",
    "ExcitationPlan",
    "PEVerification",
    "design_pe_input",
    "design_pe_input_bias",
    "verify_pe",
]


class CertificateFailed(ValueError):
    """The weight matrix does not satisfy the observability certificate."""


class ConstructionFailed(RuntimeError):
    """Internal assertion: a designed plan failed its verification checks."""


@dataclass(frozen=True)
class ExcitationPlan:
    """A designed input sequence together with its construction data.

    ``U`` stacks the input blocks; ``C`` holds the matching target cone
    vectors (the pre-activations the inputs produce), ``T`` the nonsingular
    binary matrix of chosen orthant indicators.  ``certified`` is set only
    after the Jacobian rank at the design weights has been re-verified.
    """

    U: np.ndarray = field(repr=False)
    blocks: tuple[np.ndarray, ...] = field(repr=False)
    C: np.ndarray = field(repr=False)
    T: np.ndarray = field(repr=False)
    certified: bool
    sigma_min: float


@dataclass(frozen=True)
class PEVerification:
    pe: bool
    rank: int
    sigma_min: float


def verify_pe(U, weights: WeightState) -> PEVerification:
    """Check the rank condition of the output-sequence Jacobian under ``U``."""
    jac = observability_jacobian(weights, U)
    rd = numeric_rank(jac.DH)
    sigma = float(rd.singular_values[rd.rank - 1]) if rd.rank else 0.0
    return PEVerification(pe=rd.rank == weights.arch.state_dim, rank=rd.rank, sigma_min=sigma)


def _interior_witnesses(S: SignMatrix, directions: np.ndarray):
    """Margin-improved interior witness per sign-matrix row, computed once."""
    P = directions.T @ directions
    return [
        _improve_margin(P, S.witnesses[i], S.rows[i].astype(float)) for i in range(len(S))
    ]


def _select_indicator_rows(
    S: SignMatrix, n: int, priority: np.ndarray | None = None
) -> list[int]:
    """Greedily pick n sign rows with linearly independent activation indicators.

    With a ``priority`` (the interior margins of the orthant cones) rows are
    scanned fattest-cone-first, which keeps the designed target vectors away
    from sliver cones whose rows would be nearly dependent; ties, and the
    default order, are lexicographic (the row order of ``S``).
    """
    order = range(len(S)) if priority is None else np.argsort(-np.asarray(priority), kind="stable")
    chosen: list[int] = []
    stack = np.zeros((0, n))
    for i in order:
        cand = np.vstack([stack, (S.rows[i] > 0).astype(float)])
        if numeric_rank(cand).rank == len(chosen) + 1:
            chosen.append(int(i))
            stack = cand
            if len(chosen) == n:
                return chosen
    raise ConstructionFailed(
        f"only {len(chosen)} independent indicator rows found, need {n}"
    )


def _relative_margins(witnesses, signs) -> np.ndarray:
    return np.array(
        [
            float((np.asarray(s, dtype=float) * v).min() / np.abs(v).max())
            for s, v in zip(signs, witnesses)
        ]
    )


def _check_plan(U, C, blocks, weights, state_dim, block_size) -> float:
    scale = np.abs(C).max()
    pre = (
        U @ weights.W + weights.b if weights.arch.has_bias else U @ weights.W
    )
    if np.abs(pre - C).max() > 1e-9 * max(scale, 1.0):
        raise ConstructionFailed("designed inputs do not reproduce the target cone vectors")
    row_max = np.abs(pre).max(axis=1)
    if np.any(np.abs(pre).min(axis=1) < 0.5 * INTERIOR_MARGIN * row_max):
        raise ConstructionFailed("designed pre-activations are too close to an activation boundary")
    for blk in blocks:
        if numeric_rank(blk).rank < block_size:
            raise ConstructionFailed("an input block is singular")
    check = verify_pe(U, weights)
    if not check.pe:
        raise ConstructionFailed(
            f"Jacobian rank {check.rank} < state dimension {state_dim}"
        )
    return check.sigma_min


def _balance_rows(
    U: np.ndarray,
    weights: WeightState,
    *,
    target_ratio: float = 0.25,
    max_boost: float = 1e4,
    iters: int = 3000,
) -> np.ndarray:
    """Row scalings that leave no weight direction weakly excited.

    Scaling an input row keeps its pre-activations inside the same open
    orthant (cones are closed under positive scaling), so certification is
    unaffected.  The loop repeatedly boosts the row that responds most to the
    currently weakest right-singular direction of the Jacobian, which lifts
    the smallest singular value without inflating the rest of the plan.
    """
    DH = observability_jacobian(weights, U).DH
    alpha = np.ones(U.shape[0])
    target = target_ratio * np.median(np.linalg.norm(DH, axis=1))
    for _ in range(iters):
        _, s, vt = np.linalg.svd(alpha[:, None] * DH, full_matrices=False)
        if s[-1] >= target:
            break
        response = np.abs(DH @ vt[-1])
        order = np.argsort(-response * alpha)
        for j in order:
            if alpha[j] < max_boost and response[j] > 1e-12:
                alpha[j] = min(alpha[j] * 1.6, max_boost)
                break
        else:
            break  # every useful row is capped
    return alpha


def design_pe_input(
    W,
    *,
    n_samples: int | None = None,
    rng: np.random.Generator | None = None,
    balance: bool = False,
) -> ExcitationPlan:
    """Design a persistently exciting input sequence for fixed-output weights.

    The minimal plan has m*n rows built from n orthant cones with linearly
    independent activation indicators.  Longer plans (``n_samples > m*n``)
    append further blocks drawn round-robin from every certified orthant,
    which keeps the rank certificate (rows are only added) while spreading
    the excitation.  With ``balance=True`` rows are rescaled afterwards so
    that no weight direction is left weakly excited.
    """
    M = as_matrix(W)
    m, n = M.shape
    if m > n:
        raise ValueError(
            f"m={m} > n={n}: wide weight matrices carry redundant inputs; "
            "reduce to an equivalent network with m <= n first"
        )
    N_min = m * n
    N = N_min if n_samples is None else int(n_samples)
    if N < N_min:
        raise ValueError(f"n_samples={N} is below the minimal plan length {N_min}")

    cert = observability_certificate(M)
    if not cert.observable:
        raise CertificateFailed(
            f"indicator rank {cert.rank} < n={n}: no persistently exciting "
            "input exists under this certificate"
        )
    S = cert.sign_matrix
    directions = _row_basis(M)
    interior = _interior_witnesses(S, directions)
    selected = _select_indicator_rows(S, n, _relative_margins(interior, S.rows))
    T = (S.rows[selected] > 0).astype(float)
    Wp = pinv(M)

    if N > N_min and rng is None:
        rng = np.random.default_rng(0)
    weights = WeightState.from_parts(Architecture.fixed_output(m, n), M)
    # A numerically thin cone draw can fail verification; there are
    # infinitely many admissible target sets, so redraw rather than give up.
    last_error: Exception | None = None
    for attempt in range(8):
        draw = rng if rng is not None else (None if attempt == 0 else np.random.default_rng(attempt))
        blocks: list[np.ndarray] = []
        cones: list[np.ndarray] = []
        i = 0
        while sum(b.shape[0] for b in blocks) < N:
            idx = selected[i] if i < n else int(draw.integers(len(S)))
            C_k = _cone_rows(
                directions,
                interior[idx],
                S.rows[idx],
                rng=None if i < n and draw is None else draw,
                witness_ready=True,
            )
            cones.append(C_k)
            blocks.append(C_k @ Wp)
            i += 1
        U = np.vstack(blocks)[:N]
        C = np.vstack(cones)[:N]
        if balance:
            alpha = _balance_rows(U, weights)
            U = alpha[:, None] * U
            C = alpha[:, None] * C
        kept = [U[j * m : (j + 1) * m] for j in range(N // m)]
        try:
            sigma = _check_plan(U, C, kept, weights, N_min, m)
        except ConstructionFailed as exc:
            last_error = exc
            continue
        return ExcitationPlan(U=U, blocks=tuple(kept), C=C, T=T, certified=True, sigma_min=sigma)
    raise last_error


def _schedule_contraction(U: np.ndarray, weights: WeightState, k: int) -> float:
    """Spectral radius of the product of per-batch null-space projectors."""
    from .numlin import subspace_projectors  # local import avoids a cycle at module load

    N = U.shape[0]
    dim = weights.arch.state_dim
    Q = np.eye(dim)
    bounds = [round(i * N / k) for i in range(k + 1)]
    for b in range(k):
        H = observability_jacobian(weights, U[bounds[b] : bounds[b + 1]]).DH
        _, P_null = subspace_projectors(H)
        Q = P_null @ Q
    return float(np.max(np.abs(np.linalg.eigvals(Q))))


def design_pe_batches(
    W,
    k: int,
    batch_size: int,
    rng: np.random.Generator,
    *,
    rho_max: float | None = None,
    attempts: int = 60,
) -> tuple[np.ndarray, PEVerification]:
    """Input sequence of k well-conditioned mini-batches, jointly exciting.

    Each batch visits distinct orthants in a fresh random permutation order,
    one interior cone point per visit, so no batch concentrates near-parallel
    rows.  With ``rho_max`` the draw is retried until the product of the
    per-batch null-space projectors has a small enough spectral radius (the
    radius is invariant under later row rescaling, so balancing rows
    afterwards cannot spoil it); the best draw is returned if the target is
    never met.  Joint excitation (stacked Jacobian of full column rank) is
    always verified.
    """
    M = as_matrix(W)
    m, n = M.shape
    cert = observability_certificate(M)
    if not cert.observable:
        raise CertificateFailed(
            f"indicator rank {cert.rank} < n={n}: no persistently exciting "
            "input exists under this certificate"
        )
    if k * batch_size < m * n:
        raise ValueError(
            f"{k} batches of {batch_size} rows cannot excite {m * n} weight directions"
        )
    S = cert.sign_matrix
    directions = _row_basis(M)
    interior = _interior_witnesses(S, directions)
    Wp = pinv(M)
    weights = WeightState.from_parts(Architecture.fixed_output(m, n), M)

    best: tuple[float, np.ndarray, PEVerification] | None = None
    for _ in range(attempts):
        rows = []
        for _ in range(k):
            order: list[int] = []
            while len(order) < batch_size:
                order.extend(rng.permutation(len(S)).tolist())
            rows.extend(
                _cone_point(directions, interior[idx], S.rows[idx], rng, witness_ready=True) @ Wp
                for idx in order[:batch_size]
            )
        U = np.array(rows)
        check = verify_pe(U, weights)
        if not check.pe:
            continue
        if rho_max is None:
            return U, check
        rho = _schedule_contraction(U, weights, k)
        if best is None or rho < best[0]:
            best = (rho, U, check)
        if rho <= rho_max:
            return U, check
    if best is not None:
        return best[1], best[2]
    raise ConstructionFailed("could not assemble a jointly exciting batch sequence")


def design_pe_input_bias(
    W1, b, *, n_samples: int | None = None, rng: np.random.Generator | None = None
) -> ExcitationPlan:
    """Design a persistently exciting input sequence for the bias architecture.

    Targets are drawn from the affine subspace rowspace(W1) + b, whose
    certified orthant cones each contain m+1 independent vectors; the input
    compensates the bias shift so the realized pre-activations equal the
    targets exactly.
    """
    M1 = as_matrix(W1)
    bv = as_vector(b)
    m, n = M1.shape
    if bv.size != n:
        raise ValueError(f"bias has length {bv.size}, expected {n}")
    N_min = (m + 1) * n
    N = N_min if n_samples is None else int(n_samples)
    if N < N_min:
        raise ValueError(f"n_samples={N} is below the minimal plan length {N_min}")

    cert = observability_certificate(M1, bv)  # raises RankDeficientW unless m+1 <= n holds
    if not cert.observable:
        raise CertificateFailed(
            f"indicator rank {cert.rank} < n={n}: no persistently exciting "
            "input exists under this certificate"
        )
    Bh, topes_h = _affine_topes(M1, bv)
    S = SignMatrix(
        np.array([sh[:-1] for sh, _ in topes_h], dtype=np.int8),
        np.array([wh[:-1] / wh[-1] for _, wh in topes_h]),
    )
    Ph = Bh.T @ Bh
    interior_h = [
        _improve_margin(Ph, wh, sh.astype(float)) for sh, wh in topes_h
    ]
    signs_h = [sh for sh, _ in topes_h]
    selected = _select_indicator_rows(S, n, _relative_margins(interior_h, signs_h))
    T = (S.rows[selected] > 0).astype(float)
    W1p = pinv(M1)
    shift = bv @ W1p

    if N > N_min and rng is None:
        rng = np.random.default_rng(0)
    weights = WeightState.from_parts(Architecture.bias(m, n), M1, b=bv)
    stacked = np.vstack([M1, bv])
    alpha = pinv((bv - bv @ W1p @ M1).reshape(1, -1))

    last_error: Exception | None = None
    for attempt in range(8):
        draw = rng if rng is not None else (None if attempt == 0 else np.random.default_rng(attempt))
        blocks: list[np.ndarray] = []
        cones: list[np.ndarray] = []
        i = 0
        while sum(blk.shape[0] for blk in blocks) < N:
            idx = selected[i] if i < n else int(draw.integers(len(S)))
            C_k = _dehomogenize(
                _cone_rows(
                    Bh,
                    interior_h[idx],
                    signs_h[idx],
                    rng=None if i < n and draw is None else draw,
                    witness_ready=True,
                )
            )
            cones.append(C_k)
            blocks.append(C_k @ W1p - shift)
            i += 1
        U = np.vstack(blocks)[:N]
        C = np.vstack(cones)[:N]
        kept = [blk for j, blk in enumerate(blocks) if (j + 1) * (m + 1) <= N]
        try:
            sigma = _check_plan(U, C, [], weights, N_min, m + 1)
            # Augmented blocks [U_k, 1] must be nonsingular and hit the targets.
            for blk, C_k in zip(kept, cones):
                aug = np.hstack([blk, np.ones((m + 1, 1))])
                if numeric_rank(aug).rank < m + 1:
                    raise ConstructionFailed("augmented input block is singular")
                if np.abs(aug @ stacked - C_k).max() > 1e-9 * max(np.abs(C_k).max(), 1.0):
                    raise ConstructionFailed("augmented block does not reproduce the cone targets")
                if np.abs(C_k @ alpha - 1.0).max() > 1e-9:
                    raise ConstructionFailed("cone vectors violate the affine-membership identity")
        except ConstructionFailed as exc:
            last_error = exc
            continue
        return ExcitationPlan(U=U, blocks=tuple(kept), C=C, T=T, certified=True, sigma_min=sigma)
    raise last_error
