"""Independent oracles shared by the test modules.

These deliberately avoid the library's own code paths: supports are
enumerated exhaustively, sign matrices of planes come from sweeping the
unit circle, and Jacobians come from central finite differences.
"""

import itertools

import numpy as np


def brute_force_elementary_vectors(V: np.ndarray, rtol: float = 1e-9) -> dict[tuple, np.ndarray]:
    """Elementary vectors by exhaustive support-subset search.

    For each candidate support, solve for a subspace direction vanishing off
    the support; keep supports that are minimal with respect to inclusion.
    Returns a map from support tuple to a representative vector (first
    nonzero entry scaled to +1).  Feasible for n <= 10.
    """
    _, s, vt = np.linalg.svd(V)
    r = int(np.count_nonzero(s > rtol * s[0]))
    B = vt[:r]
    n = V.shape[1]
    found: dict[tuple, np.ndarray] = {}
    for size in range(1, n + 1):
        for supp in itertools.combinations(range(n), size):
            off = [i for i in range(n) if i not in supp]
            A = B[:, off].T  # x^T B must vanish off the support
            if off:
                _, sv, vtv = np.linalg.svd(A, full_matrices=True)
                null_dim = B.shape[0] - int(np.count_nonzero(sv > rtol * max(sv[0], 1e-300))) if sv.size else B.shape[0]
                if null_dim == 0:
                    continue
                x = vtv[-1]
            else:
                x = np.eye(B.shape[0])[0]
            v = x @ B
            v[np.abs(v) <= 1e-9 * np.abs(v).max()] = 0.0
            actual = tuple(np.flatnonzero(v))
            if actual != supp or not actual:
                continue
            if any(set(t) < set(supp) for t in found):
                continue
            found[supp] = v / v[actual[0]] + 0.0
    # drop non-minimal supports discovered before their subsets
    minimal = {
        s_: v
        for s_, v in found.items()
        if not any(set(t) < set(s_) for t in found if t != s_)
    }
    return minimal


def circle_sign_matrix(B: np.ndarray) -> set[tuple]:
    """All open-orthant sign vectors met by a 2-dimensional row space.

    Walks the unit circle in the coefficient plane: the sign pattern changes
    exactly at the angles where some coordinate vanishes, so the midpoints
    of consecutive boundary angles enumerate every sector.
    """
    assert B.shape[0] == 2
    b1, b2 = B
    # coordinate i vanishes at angles theta with cos(theta) b1_i + sin(theta) b2_i = 0
    angles = []
    for i in range(B.shape[1]):
        theta = np.arctan2(-b1[i], b2[i])  # root of cos*b1 + sin*b2
        angles.extend([theta % np.pi, (theta % np.pi) + np.pi])
    angles = np.sort(np.unique(np.array(angles) % (2 * np.pi)))
    signs = set()
    for lo, hi in zip(angles, np.roll(angles, -1)):
        if hi <= lo:
            hi += 2 * np.pi
        mid = 0.5 * (lo + hi)
        v = np.cos(mid) * b1 + np.sin(mid) * b2
        if np.all(np.abs(v) > 1e-9 * np.abs(v).max()):
            signs.add(tuple(np.sign(v).astype(int)))
    return signs


def fd_jacobian(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central finite-difference Jacobian of a vector-valued function."""
    y0 = np.asarray(f(x))
    J = np.zeros((y0.size, x.size))
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        J[:, j] = (np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * h)
    return J


def random_rank_matrix(rng, rows: int, cols: int, rank: int) -> np.ndarray:
    """Random matrix with exact rank via a thin factorization."""
    return rng.standard_normal((rows, rank)) @ rng.standard_normal((rank, cols))
