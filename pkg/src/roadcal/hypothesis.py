"""Pairing of image tracks with the vehicle localization log.

Each image-space object track might be the calibration vehicle. A
hypothesis couples the track with time-interpolated localization poses,
estimates a calibration from the box-center / vehicle-position
correspondences, and runs a cascade of plausibility filters. Tracks of
uninvolved traffic mostly fail the robust fit or land in implausible
camera poses.
"""

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, NoConsensusError, NoOverlapError
from .geometry import camera_center
from .pnp import Correspondence, RansacParams, ransac_pnp


@dataclass(frozen=True)
class LocalizationSample:
    """One GNSS/RTK+IMU record: raw UTM position and attitude angles."""

    timestamp: float
    position: np.ndarray  # raw UTM meters
    roll: float
    pitch: float
    yaw: float

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        if self.position.shape != (3,):
            raise InputError("position must be a 3-vector")


@dataclass(frozen=True)
class PrefilterParams:
    min_pairs: int = 4
    min_extent_2d_px: float = 50.0
    min_extent_3d_m: float = 5.0
    max_median_reproj_px: float = 20.0
    d_thr_m: float = 30.0
    sync_tolerance_s: float = 0.1

    def __post_init__(self):
        for name in (
            "min_pairs",
            "min_extent_2d_px",
            "min_extent_3d_m",
            "max_median_reproj_px",
            "d_thr_m",
            "sync_tolerance_s",
        ):
            if getattr(self, name) <= 0:
                raise InputError(f"{name} must be positive")


class RejectionReason(enum.Enum):
    TOO_FEW_PAIRS = "too_few_pairs"
    TRACK_TOO_SHORT_2D = "track_too_short_2d"
    TRACK_TOO_SHORT_3D = "track_too_short_3d"
    REPROJECTION_TOO_HIGH = "reprojection_too_high"
    CAMERA_TOO_FAR = "camera_too_far"
    CAMERA_BELOW_GROUND = "camera_below_ground"
    NO_CONSENSUS = "no_consensus"


@dataclass
class Hypothesis:
    """An object track paired with localization data and its fitted pose."""

    track_id: int
    pairs: list  # (LocalizationSample, BoundingBox), time-ordered
    calib: object = None
    median_reproj_px: float = math.inf
    inlier_mask: np.ndarray = field(default=None, repr=False)

    def positions(self, anchor=None):
        """Nx3 vehicle positions, anchored when an offset is given."""
        pos = np.array([s.position for s, _ in self.pairs])
        if anchor is None:
            anchor = self.calib.anchor if self.calib is not None else np.zeros(3)
        return pos - np.asarray(anchor, dtype=float)

    def box_centers(self):
        return np.array([[b.u, b.v] for _, b in self.pairs])

    def boxes(self):
        return [b for _, b in self.pairs]


def _interp_angle(a, b, s):
    """Shortest-arc interpolation between two angles in radians."""
    delta = math.remainder(b - a, 2.0 * math.pi)
    return math.remainder(a + s * delta, 2.0 * math.pi)


def synchronize(track, log, tol):
    """Interpolate the localization log at each real detection timestamp.

    Detections outside the log's span, or whose bracketing samples are
    both farther than ``tol`` away, are dropped. Raises when nothing
    overlaps.
    """
    times = np.array([s.timestamp for s in log])
    if len(times) == 0 or np.any(np.diff(times) <= 0):
        raise InputError("localization timestamps must strictly increase")

    pairs = []
    for det in track.detections:
        if det.extrapolated:
            continue
        t = det.timestamp
        if t < times[0] or t > times[-1]:
            continue
        hi = int(np.searchsorted(times, t, side="left"))
        if times[hi] == t:
            pairs.append((log[hi], det.box))
            continue
        lo = hi - 1
        if min(t - times[lo], times[hi] - t) > tol:
            continue
        s = (t - times[lo]) / (times[hi] - times[lo])
        a, b = log[lo], log[hi]
        sample = LocalizationSample(
            timestamp=t,
            position=(1.0 - s) * a.position + s * b.position,
            roll=_interp_angle(a.roll, b.roll, s),
            pitch=_interp_angle(a.pitch, b.pitch, s),
            yaw=_interp_angle(a.yaw, b.yaw, s),
        )
        pairs.append((sample, det.box))

    if not pairs:
        raise NoOverlapError(
            f"track {track.id} shares no usable time span with the localization log"
        )
    return pairs


def _point_to_segment_distances(point, starts, ends):
    seg = ends - starts
    rel = point - starts
    seg_len_sq = np.einsum("ij,ij->i", seg, seg)
    s = np.clip(
        np.einsum("ij,ij->i", rel, seg) / np.where(seg_len_sq > 0, seg_len_sq, 1.0),
        0.0,
        1.0,
    )
    closest = starts + s[:, None] * seg
    return np.linalg.norm(point - closest, axis=1)


def prefilter_camera_pose(calib, pairs, pf):
    """Plausibility gate on the estimated camera pose.

    Passes when the camera center is within ``d_thr_m`` of the driven
    path polyline and above the ground level of the nearest track point.
    """
    positions = np.array([s.position for s, _ in pairs]) - calib.anchor
    center = camera_center(calib)
    if len(positions) == 1:
        dist = float(np.linalg.norm(center - positions[0]))
    else:
        dist = float(
            np.min(_point_to_segment_distances(center, positions[:-1], positions[1:]))
        )
    if dist > pf.d_thr_m:
        return RejectionReason.CAMERA_TOO_FAR
    nearest = positions[np.argmin(np.linalg.norm(positions - center, axis=1))]
    if center[2] <= nearest[2]:
        return RejectionReason.CAMERA_BELOW_GROUND
    return None


def build_hypothesis(track, log, intr, anchor, ransac=None, pf=None):
    """Turn one object track into a calibration hypothesis or a rejection.

    The filter cascade runs in a fixed order (pair count, 2D extent, 3D
    extent, robust fit, median reprojection, camera distance, camera
    height) so that every rejection carries exactly one primary reason.
    """
    if ransac is None:
        ransac = RansacParams()
    if pf is None:
        pf = PrefilterParams()
    anchor = np.asarray(anchor, dtype=float)

    try:
        pairs = synchronize(track, log, pf.sync_tolerance_s)
    except NoOverlapError:
        return RejectionReason.TOO_FEW_PAIRS
    if len(pairs) < max(pf.min_pairs, 4):
        return RejectionReason.TOO_FEW_PAIRS

    centers = np.array([[b.u, b.v] for _, b in pairs])
    if np.linalg.norm(centers.max(axis=0) - centers.min(axis=0)) < pf.min_extent_2d_px:
        return RejectionReason.TRACK_TOO_SHORT_2D

    positions = np.array([s.position for s, _ in pairs]) - anchor
    if np.linalg.norm(positions.max(axis=0) - positions.min(axis=0)) < pf.min_extent_3d_m:
        return RejectionReason.TRACK_TOO_SHORT_3D

    corrs = [
        Correspondence(world=pos, pixel=center, timestamp=sample.timestamp)
        for pos, center, (sample, _) in zip(positions, centers, pairs)
    ]
    try:
        calib, mask, median_err = ransac_pnp(corrs, intr, ransac, anchor=anchor)
    except (NoConsensusError, np.linalg.LinAlgError):
        return RejectionReason.NO_CONSENSUS

    if median_err > pf.max_median_reproj_px:
        return RejectionReason.REPROJECTION_TOO_HIGH

    pose_reason = prefilter_camera_pose(calib, pairs, pf)
    if pose_reason is not None:
        return pose_reason

    return Hypothesis(
        track_id=track.id,
        pairs=pairs,
        calib=calib,
        median_reproj_px=median_err,
        inlier_mask=mask,
    )
