"""Rigid alignment: closed-form landmark Procrustes and point-to-point ICP."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from colontrack.errors import DegenerateRegistrationError, InvalidInputError
from colontrack.geometry import RigidTransform, as_points, nearest_indices


@dataclass(frozen=True)
class IcpParams:
    max_iterations: int = 100
    convergence_tol: float = 1e-6
    trim_fraction: float = 0.0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise InvalidInputError("max_iterations must be >= 1")
        if not self.convergence_tol > 0:
            raise InvalidInputError("convergence_tol must be > 0")
        if not 0.0 <= self.trim_fraction < 1.0:
            raise InvalidInputError("trim_fraction must lie in [0, 1)")


@dataclass(frozen=True)
class IcpResult:
    transform: RigidTransform
    mean_residual: float
    iterations_used: int
    converged: bool
    # residual before any update, then after each iteration
    history: tuple = field(default_factory=tuple)


def procrustes(src, dst):
    """Least-squares rigid transform mapping ``src[i]`` onto ``dst[i]``.

    Cross-covariance SVD with the reflection case folded back into a proper
    rotation, so ``det(R) = +1`` always.
    """
    a = as_points(src, "src")
    b = as_points(dst, "dst")
    if a.shape != b.shape:
        raise InvalidInputError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    if a.shape[0] < 3:
        raise InvalidInputError("procrustes needs at least 3 point pairs")
    ca = a.mean(axis=0)
    cb = b.mean(axis=0)
    a0 = a - ca
    b0 = b - cb
    scale = max(np.abs(a0).max(), np.abs(b0).max(), 1.0)
    # rank < 2 on either side leaves the rotation about the line undetermined
    for centered in (a0, b0):
        sv = np.linalg.svd(centered / scale, compute_uv=False)
        if sv[1] <= 1e-9 * max(sv[0], 1e-300):
            raise InvalidInputError("rank-deficient (collinear) point configuration")
    h = a0.T @ b0
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    if d == 0:
        d = 1.0
    rot = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return RigidTransform(rot, cb - rot @ ca)


def _pair_residuals(moved, target_pts):
    idx, dist = nearest_indices(moved, target_pts)
    return idx, dist


def _kept(dist, trim_fraction):
    keep = max(1, int(np.ceil(len(dist) * (1.0 - trim_fraction))))
    if keep >= len(dist):
        return np.arange(len(dist))
    # stable sort keeps the selection deterministic under ties
    return np.sort(np.argsort(dist, kind="stable")[:keep])


def _rms(values):
    return float(np.sqrt(np.mean(values ** 2)))


def icp(src, target, params=None, initial=None):
    """Point-to-point ICP (optionally trimmed) aligning ``src`` to ``target``.

    The residual reported is the root-mean-square distance of the kept pairs;
    it is non-increasing from one iteration to the next.
    """
    params = params or IcpParams()
    initial = initial or RigidTransform.identity()
    a = as_points(src, "src", min_count=1)
    b = as_points(target, "target", min_count=3)

    current = initial
    moved = current.apply_points(a)
    idx, dist = _pair_residuals(moved, b)
    keep = _kept(dist, params.trim_fraction)
    residual = _rms(dist[keep])
    history = [residual]
    converged = False
    iterations = 0

    for _ in range(params.max_iterations):
        matched = b[idx[keep]]
        if len(np.unique(idx[keep])) < 3:
            raise DegenerateRegistrationError(
                "ICP correspondences collapsed onto fewer than 3 target points"
            )
        try:
            step = procrustes(moved[keep], matched)
        except InvalidInputError as exc:
            raise DegenerateRegistrationError(f"ICP update failed: {exc}") from exc
        candidate = step.compose(current)
        iterations += 1
        cand_moved = candidate.apply_points(a)
        cand_idx, cand_dist = _pair_residuals(cand_moved, b)
        cand_keep = _kept(cand_dist, params.trim_fraction)
        new_residual = _rms(cand_dist[cand_keep])
        if new_residual > residual:
            # exact ICP never increases the residual; this is rounding at the
            # optimum, so keep the previous transform and stop
            history.append(residual)
            converged = True
            break
        current, moved, idx, keep = candidate, cand_moved, cand_idx, cand_keep
        history.append(new_residual)
        change = residual - new_residual
        residual = new_residual
        if change < params.convergence_tol:
            converged = True
            break

    return IcpResult(
        transform=current,
        mean_residual=residual,
        iterations_used=iterations,
        converged=converged,
        history=tuple(history),
    )
