"""Pose from 2D-3D correspondences: EPnP, reprojection errors, RANSAC.

The solver follows the control-point formulation: world points are
expressed barycentrically in four control points (three when the data is
planar), the camera-frame control coordinates are recovered from the
null space of the projection constraints, and the candidate combination
weights are refined by Gauss-Newton on the inter-control-point
distances. A short reprojection polish on the rigid pose finishes each
estimate.
"""

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import (
    DegenerateGeometryError,
    InputError,
    InsufficientDataError,
    NoConsensusError,
)
from .geometry import (
    MIN_DEPTH,
    ExtrinsicCalibration,
    orthonormalized,
    project_points,
    skew,
    so3_exp,
)

_COLLINEAR_TOL = 1e-8
_PLANAR_TOL = 1e-3


@dataclass(frozen=True)
class Correspondence:
    """One 2D-3D pair: anchored world point, pixel location, timestamp."""

    world: np.ndarray
    pixel: np.ndarray
    timestamp: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "world", np.asarray(self.world, dtype=float))
        object.__setattr__(self, "pixel", np.asarray(self.pixel, dtype=float))
        if not (np.all(np.isfinite(self.world)) and np.all(np.isfinite(self.pixel))):
            raise InputError("correspondence contains non-finite values")


@dataclass(frozen=True)
class RansacParams:
    max_iterations: int = 500
    inlier_threshold_px: float = 8.0
    min_inlier_ratio: float = 0.5
    rng_seed: int = 0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise InputError("max_iterations must be >= 1")
        if self.inlier_threshold_px <= 0:
            raise InputError("inlier_threshold_px must be positive")


def _control_points(world):
    """Centroid plus principal directions scaled to the data spread."""
    centroid = world.mean(axis=0)
    centered = world - centroid
    _, svals, vt = np.linalg.svd(centered, full_matrices=False)
    if svals[1] < max(svals[0], 1e-12) * _COLLINEAR_TOL:
        raise DegenerateGeometryError("world points are collinear")
    planar = svals[2] < svals[0] * _PLANAR_TOL
    n_dirs = 2 if planar else 3
    scale = svals[:n_dirs] / math.sqrt(len(world))
    ctrl = np.vstack([centroid, centroid + scale[:, None] * vt[:n_dirs]])
    return ctrl, planar


def _barycentric(world, ctrl):
    basis = (ctrl[1:] - ctrl[0]).T  # 3 x (m-1)
    coeffs, *_ = np.linalg.lstsq(basis, (world - ctrl[0]).T, rcond=None)
    alphas = np.empty((len(world), len(ctrl)))
    alphas[:, 1:] = coeffs.T
    alphas[:, 0] = 1.0 - coeffs.sum(axis=0)
    return alphas


def _constraint_matrix(alphas, pixels, intr):
    n, m = alphas.shape
    M = np.zeros((2 * n, 3 * m))
    u = pixels[:, 0]
    v = pixels[:, 1]
    for j in range(m):
        a = alphas[:, j]
        M[0::2, 3 * j] = a * intr.fx
        M[0::2, 3 * j + 2] = a * (intr.cx - u)
        M[1::2, 3 * j + 1] = a * intr.fy
        M[1::2, 3 * j + 2] = a * (intr.cy - v)
    return M


def _beta_initializations(dv, dist_sq, n_kernel):
    """Closed-form least-squares seeds for the combination weights."""
    inits = []

    # single kernel vector, scale from distance ratio
    norms = np.linalg.norm(dv[0], axis=1)
    denom = float(norms @ norms)
    if denom > 0:
        b = np.zeros(n_kernel)
        b[0] = float(norms @ np.sqrt(dist_sq)) / denom
        inits.append(b)

    if n_kernel >= 2:
        # unknowns (b00, b01, b11)
        L = np.column_stack(
            [
                np.einsum("ij,ij->i", dv[0], dv[0]),
                2.0 * np.einsum("ij,ij->i", dv[0], dv[1]),
                np.einsum("ij,ij->i", dv[1], dv[1]),
            ]
        )
        sol, *_ = np.linalg.lstsq(L, dist_sq, rcond=None)
        b = np.zeros(n_kernel)
        b[0] = math.sqrt(abs(sol[0]))
        b[1] = math.copysign(math.sqrt(abs(sol[2])), sol[1])
        inits.append(b)

    if n_kernel >= 3 and len(dist_sq) >= 5:
        # unknowns (b00, b01, b11, b02, b12)
        L = np.column_stack(
            [
                np.einsum("ij,ij->i", dv[0], dv[0]),
                2.0 * np.einsum("ij,ij->i", dv[0], dv[1]),
                np.einsum("ij,ij->i", dv[1], dv[1]),
                2.0 * np.einsum("ij,ij->i", dv[0], dv[2]),
                2.0 * np.einsum("ij,ij->i", dv[1], dv[2]),
            ]
        )
        sol, *_ = np.linalg.lstsq(L, dist_sq, rcond=None)
        b = np.zeros(n_kernel)
        b[0] = math.sqrt(abs(sol[0]))
        b[1] = math.copysign(math.sqrt(abs(sol[2])), sol[1])
        if b[0] > 1e-12:
            b[2] = sol[3] / b[0]
        inits.append(b)

    return inits


def _refine_betas(betas, dv, dist_sq, iterations=15):
    """Gauss-Newton on the control-distance residuals."""
    betas = betas.copy()
    for _ in range(iterations):
        s = np.einsum("k,kpj->pj", betas, dv)
        residual = np.einsum("pj,pj->p", s, s) - dist_sq
        J = 2.0 * np.einsum("pj,kpj->pk", s, dv)
        try:
            step, *_ = np.linalg.lstsq(J, -residual, rcond=None)
        except np.linalg.LinAlgError:
            break
        betas += step
        if np.linalg.norm(step) < 1e-12:
            break
    return betas


def _kabsch(src, dst):
    """Rotation and translation with R @ src + t ~= dst."""
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    H = (src - mu_s).T @ (dst - mu_d)
    u, _, vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    R = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return R, mu_d - R @ mu_s


def _reprojection_sq_sum(R, t, world, pixels, intr):
    cam = world @ R.T + t
    z = cam[:, 2]
    if np.any(z <= MIN_DEPTH):
        return np.inf
    u = intr.fx * cam[:, 0] / z + intr.cx
    v = intr.fy * cam[:, 1] / z + intr.cy
    return float(np.sum((u - pixels[:, 0]) ** 2 + (v - pixels[:, 1]) ** 2))


def _polish_pose(R, t, world, pixels, intr, iterations=15):
    """Damped Gauss-Newton on the reprojection residuals over SE(3)."""
    cost = _reprojection_sq_sum(R, t, world, pixels, intr)
    if not np.isfinite(cost):
        return R, t
    lam = 1e-8
    for _ in range(iterations):
        cam = world @ R.T + t
        z = cam[:, 2]
        u = intr.fx * cam[:, 0] / z + intr.cx
        v = intr.fy * cam[:, 1] / z + intr.cy
        r = np.concatenate([u - pixels[:, 0], v - pixels[:, 1]])

        n = len(world)
        d_cam = np.zeros((2 * n, 3))
        d_cam[:n, 0] = intr.fx / z
        d_cam[:n, 2] = -intr.fx * cam[:, 0] / z**2
        d_cam[n:, 1] = intr.fy / z
        d_cam[n:, 2] = -intr.fy * cam[:, 1] / z**2
        rp = cam - t  # rotated world points
        J = np.empty((2 * n, 6))
        for i in range(n):
            lever = np.hstack([-skew(rp[i]), np.eye(3)])
            J[i] = d_cam[i] @ lever
            J[n + i] = d_cam[n + i] @ lever
        g = J.T @ r
        JtJ = J.T @ J
        stepped = False
        for _ in range(8):
            try:
                delta = np.linalg.solve(JtJ + lam * np.eye(6), -g)
            except np.linalg.LinAlgError:
                break
            R_new = so3_exp(delta[:3]) @ R
            t_new = t + delta[3:]
            new_cost = _reprojection_sq_sum(R_new, t_new, world, pixels, intr)
            if new_cost < cost:
                R, t, cost = R_new, t_new, new_cost
                lam = max(lam * 0.1, 1e-12)
                stepped = True
                break
            lam *= 10.0
        if not stepped or cost < 1e-20:
            break
    return orthonormalized(R), t


def epnp(corrs, intr, anchor=None):
    """Camera pose from >= 4 correspondences via the control-point solver.

    Planar point sets are handled with a reduced control-point basis and
    accepted (vehicle paths are nearly planar by nature); collinear sets
    raise a degeneracy error.
    """
    if len(corrs) < 4:
        raise InsufficientDataError(
            f"pose estimation needs at least 4 correspondences, got {len(corrs)}"
        )
    world = np.array([c.world for c in corrs], dtype=float)
    pixels = np.array([c.pixel for c in corrs], dtype=float)

    ctrl_w, planar = _control_points(world)
    alphas = _barycentric(world, ctrl_w)
    M = _constraint_matrix(alphas, pixels, intr)
    _, vecs = np.linalg.eigh(M.T @ M)
    n_kernel = 3 if planar else 4
    kernel = vecs[:, :n_kernel].T.reshape(n_kernel, -1, 3)  # (k, m, 3)

    pairs = list(combinations(range(len(ctrl_w)), 2))
    dv = np.stack([[k[a] - k[b] for a, b in pairs] for k in kernel])  # (k, p, 3)
    dist_sq = np.array([np.sum((ctrl_w[a] - ctrl_w[b]) ** 2) for a, b in pairs])

    best = None
    for beta0 in _beta_initializations(dv, dist_sq, n_kernel):
        betas = _refine_betas(beta0, dv, dist_sq)
        ctrl_c = np.einsum("k,kmj->mj", betas, kernel)
        pts_c = alphas @ ctrl_c
        if pts_c[:, 2].mean() < 0:
            pts_c = -pts_c
        R, t = _kabsch(world, pts_c)
        cost = _reprojection_sq_sum(R, t, world, pixels, intr)
        if best is None or cost < best[0]:
            best = (cost, R, t)

    if best is None or not np.isfinite(best[0]):
        raise DegenerateGeometryError("no valid pose candidate found")
    R, t = _polish_pose(best[1], best[2], world, pixels, intr)
    if anchor is None:
        anchor = np.zeros(3)
    return ExtrinsicCalibration(R, t, anchor)


def reprojection_errors(extr, intr, corrs):
    """Per-correspondence pixel distances; +inf for points behind the camera."""
    world = np.array([c.world for c in corrs], dtype=float)
    pixels = np.array([c.pixel for c in corrs], dtype=float)
    proj, depth = project_points(intr, extr, world)
    errors = np.linalg.norm(proj - pixels, axis=-1)
    return np.where(depth > MIN_DEPTH, errors, np.inf)


def ransac_pnp(corrs, intr, params=RansacParams(), anchor=None):
    """Outlier-robust pose estimation from minimal 4-point samples.

    Returns ``(calibration, inlier_mask, median_inlier_error_px)``. The
    best-consensus minimal model is refit on its full inlier set; the
    refit is kept only if it does not worsen the median inlier error, so
    the returned model never loses to the raw sample model.
    """
    n = len(corrs)
    if n < 4:
        raise InsufficientDataError(
            f"robust estimation needs at least 4 correspondences, got {n}"
        )
    rng = np.random.default_rng(params.rng_seed)
    min_inliers = max(4, math.ceil(params.min_inlier_ratio * n))

    best_model = None
    best_count = -1
    best_errors = None
    for _ in range(params.max_iterations):
        idx = rng.choice(n, size=4, replace=False)
        try:
            model = epnp([corrs[i] for i in idx], intr, anchor)
        except (DegenerateGeometryError, np.linalg.LinAlgError):
            continue
        errors = reprojection_errors(model, intr, corrs)
        count = int(np.sum(errors < params.inlier_threshold_px))
        if count > best_count:
            best_model, best_count, best_errors = model, count, errors
            if count == n:
                break

    if best_model is None or best_count < min_inliers:
        raise NoConsensusError(
            f"no sample reached {min_inliers} inliers out of {n} correspondences"
        )

    mask = best_errors < params.inlier_threshold_px
    inliers = [c for c, keep in zip(corrs, mask) if keep]
    final = best_model
    try:
        refit = epnp(inliers, intr, anchor)
        refit_errors = reprojection_errors(refit, intr, corrs)
        if np.median(refit_errors[mask]) <= np.median(best_errors[mask]):
            final = refit
    except (DegenerateGeometryError, np.linalg.LinAlgError):
        pass

    final_errors = reprojection_errors(final, intr, corrs)
    final_mask = final_errors < params.inlier_threshold_px
    if final_mask.sum() < 4:
        final_mask = mask
    median_error = float(np.median(final_errors[final_mask]))
    return final, final_mask, median_error
