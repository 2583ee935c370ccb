"""Calibration refinement on the ground plane.

The initial estimates treat the bounding-box center and the vehicle
center as one correspondence, which is systematically off. Refinement
replaces it: the box's bottom edge is cast onto the PCA ground plane,
the nearest footprint corner of the (known-size) vehicle becomes the 3D
reference point, and its image projection snapped onto the bottom edge
becomes the 2D reference. The snapped point's ground intersection then
measures the localization error delta_p of a calibration, and a damped
Gauss-Newton registration minimizes it over the rigid pose.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    DegenerateGeometryError,
    InputError,
    InsufficientDataError,
    InsufficientTraversalsError,
    NoRefinablePairsError,
)
from .geometry import (
    MIN_DEPTH,
    ExtrinsicCalibration,
    GroundPlane,
    backproject_points_to_plane,
    camera_center,
    orthonormalized,
    project_points,
    so3_exp,
)

# Residual assigned to pairs whose geometry fails during optimization;
# large enough to repel the solver from such configurations.
_FAILED_RESIDUAL = 1.0e3


@dataclass(frozen=True)
class VehicleDims:
    """Vehicle box size; the reference point is the ground-level center."""

    length: float
    width: float
    height: float

    def __post_init__(self):
        if min(self.length, self.width, self.height) <= 0:
            raise InputError("vehicle dimensions must be positive")


@dataclass(frozen=True)
class RefinedPair:
    """A footprint corner matched to a point on a box bottom edge."""

    world_corner: np.ndarray
    pixel_anchor: np.ndarray
    bottom_edge: np.ndarray  # (2, 2): left and right endpoint

    def __post_init__(self):
        object.__setattr__(
            self, "world_corner", np.asarray(self.world_corner, dtype=float)
        )
        object.__setattr__(
            self, "pixel_anchor", np.asarray(self.pixel_anchor, dtype=float)
        )
        object.__setattr__(
            self, "bottom_edge", np.asarray(self.bottom_edge, dtype=float)
        )


@dataclass(frozen=True)
class RegistrationParams:
    max_iterations: int = 200
    gradient_tol: float = 1e-8
    step_tol: float = 1e-10
    # Keep the stored 2D anchors instead of re-snapping them onto the
    # bottom edge as the pose moves.
    freeze_anchors: bool = False
    # Correspondence derivations per refinement: corner picks made under
    # a biased initial pose are re-derived with the improved pose until
    # they stabilize.
    max_rederivations: int = 4


@dataclass
class RegistrationResult:
    calib: ExtrinsicCalibration
    pairs: list
    initial_mean_delta_p: float
    final_mean_delta_p: float
    iterations: int
    improved: bool


@dataclass
class EvaluationMetrics:
    e_mean_pct: float
    e_max_pct: float
    delta_p_mean: float
    delta_p_max: float
    pair_count: int
    excluded_pairs: int


@dataclass
class CalibrationResult:
    calib: ExtrinsicCalibration
    delta_p_mean: float
    delta_p_max: float
    e_mean_pct: float
    e_max_pct: float
    pair_count: int
    excluded_pairs: int
    group_index: int
    member_track_ids: list
    source: str  # "merged" or "track_<id>"
    candidates: list = field(default_factory=list)  # (name, mean_delta_p)
    pairs: list = field(default_factory=list, repr=False)
    plane: GroundPlane = None


def fit_ground_plane(samples, anchor):
    """PCA plane through the anchored localization positions.

    The normal is the smallest-variance principal direction, flipped
    into the +z hemisphere. Straight-line tracks are rejected.
    """
    positions = np.array([s.position for s in samples], dtype=float)
    if len(positions) < 3:
        raise InsufficientDataError("plane fit needs at least 3 samples")
    positions = positions - np.asarray(anchor, dtype=float)
    centroid = positions.mean(axis=0)
    _, svals, vt = np.linalg.svd(positions - centroid, full_matrices=False)
    if svals[1] < 1e-6 * max(svals[0], 1e-12):
        raise DegenerateGeometryError("localization track has no lateral spread")
    normal = vt[2]
    if normal[2] < 0:
        normal = -normal
    return GroundPlane(centroid, normal / np.linalg.norm(normal))


def vehicle_footprint(pose, dims, anchor):
    """Ground corners FL, FR, RR, RL of the yaw-oriented vehicle box."""
    center = pose.position - np.asarray(anchor, dtype=float)
    c, s = math.cos(pose.yaw), math.sin(pose.yaw)
    half_l, half_w = dims.length / 2.0, dims.width / 2.0
    local = np.array(
        [[half_l, half_w], [half_l, -half_w], [-half_l, -half_w], [-half_l, half_w]]
    )
    rot = np.array([[c, -s], [s, c]])
    corners = np.empty((4, 3))
    corners[:, :2] = center[:2] + local @ rot.T
    corners[:, 2] = center[2]
    return corners


def _segment_closest_points(points, seg_a, seg_b):
    """Closest points on segment [seg_a, seg_b] for each query point."""
    seg = seg_b - seg_a
    denom = float(seg @ seg)
    if denom <= 0:
        return np.broadcast_to(seg_a, points.shape).copy()
    s = np.clip((points - seg_a) @ seg / denom, 0.0, 1.0)
    return seg_a + s[:, None] * seg


def _clamp_to_edges(pixels, edges_a, edges_b):
    seg = edges_b - edges_a
    denom = np.einsum("ij,ij->i", seg, seg)
    s = np.clip(
        np.einsum("ij,ij->i", pixels - edges_a, seg)
        / np.where(denom > 0, denom, 1.0),
        0.0,
        1.0,
    )
    return edges_a + s[:, None] * seg


def refine_correspondences(h, calib, dims, plane, intr):
    """Derive footprint-corner / bottom-edge pairs for one hypothesis.

    Per detection: the bottom edge is cast onto the ground plane, the
    nearest footprint corner is selected (ties go to the corner closer
    to the camera), and its projection is snapped onto the bottom edge.
    Detections whose geometry fails under ``calib`` are skipped.
    """
    cam = camera_center(calib)
    out = []
    for sample, box in h.pairs:
        edge = box.bottom_edge
        ground, valid = backproject_points_to_plane(intr, calib, edge, plane)
        if not np.all(valid):
            continue
        corners = vehicle_footprint(sample, dims, calib.anchor)
        closest = _segment_closest_points(corners, ground[0], ground[1])
        dists = np.linalg.norm(corners - closest, axis=1)
        near = np.flatnonzero(dists <= dists.min() + 1e-9)
        if len(near) > 1:
            cam_d = np.linalg.norm(corners[near] - cam, axis=1)
            best = int(near[np.argmin(cam_d)])
        else:
            best = int(near[0])
        corner = corners[best]
        px, depth = project_points(intr, calib, corner)
        if depth <= MIN_DEPTH:
            continue
        anchor_px = _clamp_to_edges(px[None, :], edge[None, 0], edge[None, 1])[0]
        out.append(RefinedPair(corner, anchor_px, edge))
    if not out:
        raise NoRefinablePairsError(
            f"no detection of track {h.track_id} could be cast onto the ground plane"
        )
    return out


def reanchored_pairs(pairs, calib, intr):
    """Re-snap the 2D anchors onto the bottom edges under ``calib``.

    Pairs whose corner falls behind the camera keep their stored anchor.
    """
    corners = np.array([p.world_corner for p in pairs])
    edges_a = np.array([p.bottom_edge[0] for p in pairs])
    edges_b = np.array([p.bottom_edge[1] for p in pairs])
    px, depth = project_points(intr, calib, corners)
    anchors = _clamp_to_edges(px, edges_a, edges_b)
    out = []
    for k, pair in enumerate(pairs):
        if depth[k] > MIN_DEPTH:
            out.append(replace(pair, pixel_anchor=anchors[k]))
        else:
            out.append(pair)
    return out


def delta_p(calib, pair, plane, intr):
    """Ground distance between the anchor's plane intersection and the corner.

    Returns NaN when the anchor ray misses the plane or intersects it
    behind the camera; callers drop such pairs from aggregates.
    """
    pts, valid = backproject_points_to_plane(
        intr, calib, pair.pixel_anchor[None, :], plane
    )
    if not valid[0]:
        return float("nan")
    return float(np.linalg.norm(pts[0] - pair.world_corner))


def delta_p_values(calib, pairs, plane, intr, rederive=False):
    """Per-pair delta_p array; NaN marks excluded pairs."""
    if rederive:
        pairs = reanchored_pairs(pairs, calib, intr)
    return np.array([delta_p(calib, p, plane, intr) for p in pairs])


def _residuals(R, t, anchor, corners, edges_a, edges_b, stored_anchors, plane, intr,
               freeze_anchors):
    # R stays orthonormal to ~1e-14 over the run; polar correction is
    # applied once on the final result.
    calib = ExtrinsicCalibration(R, t, anchor)
    if freeze_anchors:
        anchors = stored_anchors
        depth_ok = np.ones(len(corners), dtype=bool)
    else:
        px, depth = project_points(intr, calib, corners)
        anchors = _clamp_to_edges(px, edges_a, edges_b)
        depth_ok = depth > MIN_DEPTH
    pts, valid = backproject_points_to_plane(intr, calib, anchors, plane)
    valid = valid & depth_ok
    res = np.where(valid[:, None], pts - corners, _FAILED_RESIDUAL)
    return res.ravel(), valid


def register(pairs, init, intr, plane, params=RegistrationParams()):
    """Minimize the summed squared delta_p over the rigid camera pose.

    Damped Gauss-Newton with a numeric Jacobian; the 2D anchors are
    re-snapped onto their bottom edges at every evaluation unless
    ``freeze_anchors`` is set. Only improving steps are accepted, so the
    returned pose never scores worse than ``init``; if no step improves,
    ``init`` is returned with ``improved`` False.
    """
    if len(pairs) < 4:
        raise InsufficientDataError(
            f"registration needs at least 4 pairs, got {len(pairs)}"
        )
    corners = np.array([p.world_corner for p in pairs])
    edges_a = np.array([p.bottom_edge[0] for p in pairs])
    edges_b = np.array([p.bottom_edge[1] for p in pairs])
    stored = np.array([p.pixel_anchor for p in pairs])

    def res_fn(R, t):
        return _residuals(
            R, t, init.anchor, corners, edges_a, edges_b, stored, plane, intr,
            params.freeze_anchors,
        )

    def mean_dp(residuals, valid):
        per_pair = np.linalg.norm(residuals.reshape(-1, 3), axis=1)
        return float(np.mean(per_pair[valid])) if np.any(valid) else math.inf

    R, t = init.rotation.copy(), init.translation.copy()
    r, valid = res_fn(R, t)
    cost = float(r @ r)
    initial_cost = cost
    initial_mean = mean_dp(r, valid)

    lam = 1e-6
    improved = False
    iterations = 0
    eps = 1e-6
    for iterations in range(1, params.max_iterations + 1):
        J = np.empty((len(r), 6))
        for k in range(6):
            d = np.zeros(6)
            d[k] = eps
            r_plus, _ = res_fn(so3_exp(d[:3]) @ R, t + d[3:])
            r_minus, _ = res_fn(so3_exp(-d[:3]) @ R, t - d[3:])
            J[:, k] = (r_plus - r_minus) / (2.0 * eps)
        g = J.T @ r
        if np.linalg.norm(g) < params.gradient_tol:
            break
        JtJ = J.T @ J
        accepted = False
        delta = np.zeros(6)
        for _ in range(12):
            try:
                delta = np.linalg.solve(JtJ + lam * np.eye(6), -g)
            except np.linalg.LinAlgError:
                break
            R_new = so3_exp(delta[:3]) @ R
            t_new = t + delta[3:]
            r_new, valid_new = res_fn(R_new, t_new)
            cost_new = float(r_new @ r_new)
            if cost_new < cost:
                R, t, r, valid, cost = R_new, t_new, r_new, valid_new, cost_new
                lam = max(lam * 0.3, 1e-12)
                accepted = True
                improved = True
                break
            lam *= 10.0
        if not accepted:
            break
        if np.linalg.norm(delta) < params.step_tol:
            break

    if not improved or cost > initial_cost:
        final = init
        final_pairs = list(pairs)
        final_mean = initial_mean
        improved = False
    else:
        final = ExtrinsicCalibration(orthonormalized(R), t, init.anchor)
        final_pairs = (
            list(pairs) if params.freeze_anchors else reanchored_pairs(pairs, final, intr)
        )
        r_final, valid_final = res_fn(final.rotation, final.translation)
        final_mean = mean_dp(r_final, valid_final)

    return RegistrationResult(
        calib=final,
        pairs=final_pairs,
        initial_mean_delta_p=initial_mean,
        final_mean_delta_p=final_mean,
        iterations=iterations,
        improved=improved,
    )


def evaluate(calib, pairs, plane, intr):
    """Absolute and camera-distance-relative error statistics over pairs."""
    values = delta_p_values(calib, pairs, plane, intr)
    usable = ~np.isnan(values)
    if not np.any(usable):
        raise NoRefinablePairsError("no pair is evaluable under this calibration")
    dp = values[usable]
    cam = camera_center(calib)
    ranges = np.array(
        [np.linalg.norm(p.world_corner - cam) for p, u in zip(pairs, usable) if u]
    )
    rel = dp / ranges * 100.0
    return EvaluationMetrics(
        e_mean_pct=float(rel.mean()),
        e_max_pct=float(rel.max()),
        delta_p_mean=float(dp.mean()),
        delta_p_max=float(dp.max()),
        pair_count=int(usable.sum()),
        excluded_pairs=int((~usable).sum()),
    )


def _register_with_rederivation(derive_pairs, init, intr, plane, params):
    """Alternate correspondence derivation and registration to a fixed point.

    ``derive_pairs(calib)`` supplies the pairs for the current pose. A
    wrong footprint corner picked under the initial pose blocks
    convergence, so the selection is repeated with each improved pose
    until the picks stop changing.
    """
    calib = init
    prev_key = None
    result = None
    for _ in range(max(params.max_rederivations, 1)):
        try:
            pairs = derive_pairs(calib)
            key = tuple(np.round(p.world_corner, 6).tobytes() for p in pairs)
            result = register(pairs, calib, intr, plane, params)
        except (NoRefinablePairsError, InsufficientDataError):
            if result is None:
                raise
            break
        calib = result.calib
        if key == prev_key:
            break
        prev_key = key
    return result


def merge_and_select(groups, dims, intr, anchor, reg_params=RegistrationParams()):
    """Refine each group, merge its tracks, and pick the best calibration.

    Per group every member is refined on its own pairs, then all pairs
    (re-derived with the group's best initial calibration) are pooled
    and refined once more. All candidates are scored by mean delta_p on
    the pooled pairs; the merged result is kept unless a single track
    beats it. Across groups the smallest mean delta_p wins.
    """
    if not groups:
        raise InsufficientTraversalsError(
            "no hypothesis group survived; record more calibration-vehicle traversals"
        )
    anchor = np.asarray(anchor, dtype=float)

    best = None
    errors = []
    for g_idx, group in enumerate(groups):
        try:
            samples = [s for h in group.members for s, _ in h.pairs]
            plane = fit_ground_plane(samples, anchor)

            member_results = []
            for h in group.members:
                res = _register_with_rederivation(
                    lambda calib, h=h: refine_correspondences(h, calib, dims, plane, intr),
                    h.calib, intr, plane, reg_params,
                )
                member_results.append((h, res))

            def derive_merged(calib):
                pooled = []
                for h in group.members:
                    pooled.extend(refine_correspondences(h, calib, dims, plane, intr))
                return pooled

            seed = min(group.members, key=lambda h: h.median_reproj_px).calib
            merged_result = _register_with_rederivation(
                derive_merged, seed, intr, plane, reg_params
            )
            merged_pairs = merged_result.pairs

            candidates = [("merged", merged_result.calib)]
            candidates += [
                (f"track_{h.track_id}", res.calib) for h, res in member_results
            ]
            scores = []
            for _, calib in candidates:
                values = delta_p_values(calib, merged_pairs, plane, intr, rederive=True)
                scores.append(
                    float(np.nanmean(values)) if not np.all(np.isnan(values)) else math.inf
                )
            pick = 0
            for k in range(1, len(candidates)):
                if scores[k] < scores[pick]:
                    pick = k
        except (
            DegenerateGeometryError,
            InsufficientDataError,
            NoRefinablePairsError,
        ) as exc:
            errors.append(exc)
            continue

        entry = {
            "score": scores[pick],
            "calib": candidates[pick][1],
            "source": candidates[pick][0],
            "group_index": g_idx,
            "members": [h.track_id for h in group.members],
            "candidates": list(zip([c[0] for c in candidates], scores)),
            "pairs": merged_pairs,
            "plane": plane,
        }
        if best is None or entry["score"] < best["score"]:
            best = entry

    if best is None:
        raise errors[0] if errors else NoRefinablePairsError("no group could be refined")

    final_pairs = reanchored_pairs(best["pairs"], best["calib"], intr)
    metrics = evaluate(best["calib"], final_pairs, best["plane"], intr)
    return CalibrationResult(
        calib=best["calib"],
        delta_p_mean=metrics.delta_p_mean,
        delta_p_max=metrics.delta_p_max,
        e_mean_pct=metrics.e_mean_pct,
        e_max_pct=metrics.e_max_pct,
        pair_count=metrics.pair_count,
        excluded_pairs=metrics.excluded_pairs,
        group_index=best["group_index"],
        member_track_ids=best["members"],
        source=best["source"],
        candidates=best["candidates"],
        pairs=final_pairs,
        plane=best["plane"],
    )
