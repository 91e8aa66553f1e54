"""Classical essential-matrix estimation.

Constraint-matrix assembly, nullspace solve with Hartley renormalization,
projection onto the essential manifold, four-way decomposition with
cheirality disambiguation, and the confidence-seeded initial estimate E0
used for graph pruning.

Estimated matrices are canonicalized: unit Frobenius norm, sign fixed so
the largest-magnitude entry is positive.
"""

from __future__ import annotations

import numpy as np

from .errors import (
    AmbiguousCheiralityError,
    DegenerateGeometryError,
    InsufficientCorrespondencesError,
    InvalidEssentialError,
    InvalidInputError,
)
from .geom import Pose, rot_to_quat, sampson_distances

_W = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])


def _as_point_arrays(pairs):
    """Pairs of normalized points -> two (N, 3) arrays."""
    if isinstance(pairs, tuple) and len(pairs) == 2:
        X1, X2 = pairs
        return np.asarray(X1, dtype=float), np.asarray(X2, dtype=float)
    X1 = np.asarray([p[0] for p in pairs], dtype=float)
    X2 = np.asarray([p[1] for p in pairs], dtype=float)
    return X1.reshape(-1, 3), X2.reshape(-1, 3)


def canonicalize_essential(E) -> np.ndarray:
    """Frobenius-normalize and sign-fix (largest-|entry| positive)."""
    E = np.asarray(E, dtype=float)
    n = np.linalg.norm(E)
    if n < 1e-15:
        raise InvalidInputError("cannot canonicalize the zero matrix")
    E = E / n
    flat = E.ravel()
    if flat[np.argmax(np.abs(flat))] < 0:
        E = -E
    return E


def build_constraint_matrix(pairs) -> np.ndarray:
    """N x 9 matrix A with A @ vec(E) = [x2_i^T E x1_i]_i (row-major vec)."""
    X1, X2 = _as_point_arrays(pairs)
    n = len(X1)
    if n < 8:
        raise InsufficientCorrespondencesError(f"need >= 8 correspondences, got {n}")
    return np.einsum("ni,nj->nij", X2, X1).reshape(n, 9)


def _hartley_transform(X):
    """Isotropic conditioning transform for homogeneous points (N, 3)."""
    c = X[:, :2].mean(axis=0)
    d = np.sqrt(((X[:, :2] - c) ** 2).sum(axis=1)).mean()
    if d < 1e-12:
        raise DegenerateGeometryError("all points coincide; cannot condition")
    s = np.sqrt(2.0) / d
    T = np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1.0]])
    return X @ T.T, T


def project_to_essential(M) -> np.ndarray:
    """Nearest (Frobenius) matrix with singular values (s, s, 0)."""
    M = np.asarray(M, dtype=float)
    if np.linalg.norm(M) < 1e-15:
        raise InvalidInputError("cannot project the zero matrix")
    U, S, Vt = np.linalg.svd(M)
    s = 0.5 * (S[0] + S[1])
    return U @ np.diag([s, s, 0.0]) @ Vt


def solve_eight_point(pairs) -> np.ndarray:
    """Normalized eight-point solve on intrinsics-normalized pairs.

    Hartley isotropic renormalization is applied internally as a
    conditioning safeguard.  The result is projected to the essential
    manifold and canonicalized (unit Frobenius norm, fixed sign).
    """
    X1, X2 = _as_point_arrays(pairs)
    if len(X1) < 8:
        raise InsufficientCorrespondencesError(f"need >= 8 correspondences, got {len(X1)}")
    X1c, T1 = _hartley_transform(X1)
    X2c, T2 = _hartley_transform(X2)
    A = np.einsum("ni,nj->nij", X2c, X1c).reshape(-1, 9)
    _, S, Vt = np.linalg.svd(A, full_matrices=True)
    # rank(A) must be >= 8 so the nullspace direction is well determined
    if S[7] < 1e-10 * S[0]:
        raise DegenerateGeometryError("constraint matrix is rank-deficient (rank < 8)")
    E = Vt[-1].reshape(3, 3)
    E = T2.T @ E @ T1
    return canonicalize_essential(project_to_essential(E))


def _validate_essential(E, tol=1e-6):
    E = np.asarray(E, dtype=float)
    if E.shape != (3, 3):
        raise InvalidEssentialError(f"expected 3x3 matrix, got {E.shape}")
    S = np.linalg.svd(E, compute_uv=False)
    if S[0] < 1e-15:
        raise InvalidEssentialError("zero matrix is not essential")
    if S[2] / S[0] > tol or abs(S[0] - S[1]) / S[0] > tol:
        raise InvalidEssentialError(
            f"singular values {S} violate the essential structure")
    return E


def decompose_essential(E) -> list[Pose]:
    """Four (R, unit-t) candidates of an essential matrix."""
    E = _validate_essential(E)
    U, _, Vt = np.linalg.svd(E)
    if np.linalg.det(U) < 0:
        U = U.copy()
        U[:, -1] *= -1
    if np.linalg.det(Vt) < 0:
        Vt = Vt.copy()
        Vt[-1, :] *= -1
    R1 = U @ _W @ Vt
    R2 = U @ _W.T @ Vt
    u3 = U[:, 2]
    return [
        Pose(rot_to_quat(R1), u3),
        Pose(rot_to_quat(R1), -u3),
        Pose(rot_to_quat(R2), u3),
        Pose(rot_to_quat(R2), -u3),
    ]


def triangulate_dlt(x1, x2, R, t) -> np.ndarray:
    """Linear two-view triangulation; returns the 3-D point in view-1 coords."""
    P1 = np.hstack([np.eye(3), np.zeros((3, 1))])
    P2 = np.hstack([R, np.asarray(t, dtype=float).reshape(3, 1)])
    A = np.array([
        x1[0] * P1[2] - P1[0],
        x1[1] * P1[2] - P1[1],
        x2[0] * P2[2] - P2[0],
        x2[1] * P2[2] - P2[1],
    ])
    _, _, Vt = np.linalg.svd(A)
    X = Vt[-1]
    if abs(X[3]) < 1e-15:
        return np.full(3, np.inf)
    return X[:3] / X[3]


def cheirality_select(candidates, pairs) -> Pose:
    """Pick the candidate with the most triangulated points in front of
    both cameras.  Ties raise AmbiguousCheiralityError carrying the tied
    candidates."""
    X1, X2 = _as_point_arrays(pairs)
    if len(X1) < 1:
        raise InsufficientCorrespondencesError("need at least one correspondence")
    counts = []
    for cand in candidates:
        R = cand.rotation()
        t = cand.t
        good = 0
        for x1, x2 in zip(X1, X2):
            X = triangulate_dlt(x1, x2, R, t)
            if not np.all(np.isfinite(X)):
                continue
            z1 = X[2]
            z2 = (R @ X + t)[2]
            if z1 > 0 and z2 > 0:
                good += 1
        counts.append(good)
    best = max(counts)
    winners = [c for c, n in zip(candidates, counts) if n == best]
    if len(winners) > 1:
        raise AmbiguousCheiralityError(
            f"cheirality tie at {best} positive-depth points", winners)
    return winners[0]


def recover_pose(pairs) -> Pose:
    """Full classical pipeline: eight-point -> decompose -> cheirality."""
    E = solve_eight_point(pairs)
    return cheirality_select(decompose_essential(E), pairs)


def estimate_E0(corr, tau: float = 1e-4, m: int = 16, iters: int = 32,
                seed: int = 0) -> np.ndarray:
    """Initial essential estimate from a minimal high-confidence subset.

    Seeds with the m most confident correspondences, then runs a bounded
    resample loop (``iters`` random m-subsets); every candidate solve is
    scored by its Sampson inlier count at threshold tau over the whole
    set and the best is returned.  Deterministic given the seed.
    """
    X1, X2 = corr.normalized_points()
    n = len(X1)
    if n < 8:
        raise InsufficientCorrespondencesError(f"need >= 8 correspondences, got {n}")
    m = min(m, n)
    conf = np.asarray(corr.confidences(), dtype=float)
    # stable top-m by confidence, ties by original index
    order = np.lexsort((np.arange(n), -conf))
    subsets = [order[:m]]
    rng = np.random.default_rng(seed)
    for _ in range(iters):
        subsets.append(rng.choice(n, size=m, replace=False))

    best = None
    for idx in subsets:
        try:
            E = solve_eight_point((X1[idx], X2[idx]))
        except (DegenerateGeometryError, InsufficientCorrespondencesError):
            continue
        count = int((sampson_distances(X1, X2, E) < tau).sum())
        # strict > keeps the confidence-seeded candidate on ties
        if best is None or count > best[0]:
            best = (count, E)
    if best is None:
        raise DegenerateGeometryError("no candidate subset yielded a solvable system")
    return best[1]
