"""Pinhole camera model, rigid transforms and plane geometry.

Conventions used throughout the toolkit:

World frame (right-handed, anchored UTM):
  - x: east, y: north, z: up (meters)
  - "anchored" means a constant UTM offset has been subtracted from all
    raw coordinates so that values stay small enough for stable linear
    algebra; the offset is kept alongside the calibration.

Camera frame (right-handed, standard computer vision):
  - x: right, y: down, z: forward along the optical axis
  - a point is visible only at depth z > 0

Image frame:
  - u right, v down, origin at the top-left corner, units are pixels

A calibration maps anchored world points into the camera frame via
``x_cam = R @ x_world + t`` and then through the intrinsic matrix.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BehindCameraError, InputError, NoIntersectionError

# Depth below this value counts as "behind the camera".
MIN_DEPTH = 1e-9

_ORTHO_TOL = 1e-9


def _as_readonly(a, shape):
    arr = np.array(a, dtype=float)
    if arr.shape != shape:
        raise InputError(f"expected array of shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InputError("array contains non-finite values")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics: focal lengths, principal point, image size."""

    fx: float
    fy: float
    cx: float
    cy: float
    image_width: float
    image_height: float

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise InputError("focal lengths must be positive")
        if not (0 < self.cx < self.image_width):
            raise InputError("principal point cx outside image")
        if not (0 < self.cy < self.image_height):
            raise InputError("principal point cy outside image")

    @property
    def matrix(self):
        """3x3 intrinsic matrix K."""
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


@dataclass(frozen=True)
class ExtrinsicCalibration:
    """Rigid world-to-camera transform plus the UTM anchor offset.

    ``rotation`` and ``translation`` are expressed in the anchored world
    frame; ``anchor`` is the raw UTM offset that was subtracted from all
    world coordinates, making the calibration geo-referenced.
    """

    rotation: np.ndarray
    translation: np.ndarray
    anchor: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation", _as_readonly(self.rotation, (3, 3)))
        object.__setattr__(self, "translation", _as_readonly(self.translation, (3,)))
        object.__setattr__(self, "anchor", _as_readonly(self.anchor, (3,)))
        R = self.rotation
        if np.linalg.norm(R.T @ R - np.eye(3)) > _ORTHO_TOL:
            raise InputError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > _ORTHO_TOL:
            raise InputError("rotation must have determinant +1")

    def with_anchor(self, new_anchor):
        """Re-express the calibration relative to a different UTM anchor."""
        new_anchor = np.asarray(new_anchor, dtype=float)
        t = self.translation + self.rotation @ (new_anchor - self.anchor)
        return ExtrinsicCalibration(self.rotation, t, new_anchor)


@dataclass(frozen=True)
class GroundPlane:
    """Plane given by a point on it and a unit normal tilted towards +z."""

    point: np.ndarray
    normal: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "point", _as_readonly(self.point, (3,)))
        object.__setattr__(self, "normal", _as_readonly(self.normal, (3,)))
        if abs(np.linalg.norm(self.normal) - 1.0) > _ORTHO_TOL:
            raise InputError("plane normal must be a unit vector")
        if self.normal[2] <= 0:
            raise InputError("plane normal must point into the +z hemisphere")

    def height_of(self, points):
        """Signed distance of points from the plane, positive above."""
        points = np.asarray(points, dtype=float)
        return (points - self.point) @ self.normal


@dataclass(frozen=True)
class MeanAnchor:
    """Anchor at the mean of the raw coordinates."""


@dataclass(frozen=True)
class FixedAnchor:
    """Anchor at an externally defined reference offset."""

    offset: tuple[float, float, float]


def apply_anchor(points, mode=MeanAnchor()):
    """Subtract a UTM anchor from raw world points.

    Returns ``(anchored_points, anchor)`` so the offset can be re-applied
    when exporting geo-referenced results.
    """
    points = np.asarray(points, dtype=float)
    if points.size == 0:
        raise InputError("cannot anchor an empty point set")
    points = points.reshape(-1, 3)
    if isinstance(mode, FixedAnchor):
        anchor = np.asarray(mode.offset, dtype=float)
    elif isinstance(mode, MeanAnchor):
        anchor = points.mean(axis=0)
    else:
        raise InputError(f"unknown anchor mode: {mode!r}")
    return points - anchor, anchor


def project_points(intr, extr, points):
    """Project world points without visibility checks.

    Returns ``(pixels, depths)`` where ``pixels`` has shape (..., 2) and
    ``depths`` the matching leading shape. Pixels at non-positive depth
    are still computed from the homogeneous ratio and must be masked by
    the caller via ``depths``.
    """
    points = np.asarray(points, dtype=float)
    cam = points @ extr.rotation.T + extr.translation
    depths = cam[..., 2]
    safe = np.where(np.abs(depths) < MIN_DEPTH, MIN_DEPTH, depths)
    u = intr.fx * cam[..., 0] / safe + intr.cx
    v = intr.fy * cam[..., 1] / safe + intr.cy
    return np.stack([u, v], axis=-1), depths


def project(intr, extr, point):
    """Project world points, raising if any lies behind the camera."""
    pixels, depths = project_points(intr, extr, point)
    if np.any(depths <= MIN_DEPTH):
        raise BehindCameraError(f"point at depth {np.min(depths):.3g} is not visible")
    return pixels


def camera_center(extr):
    """Camera position in the anchored world frame, -R^T t."""
    return -extr.rotation.T @ extr.translation


def pixel_rays(intr, extr, pixels):
    """World-frame ray directions through the given pixels (not unit length)."""
    pixels = np.asarray(pixels, dtype=float)
    d_cam = np.stack(
        [
            (pixels[..., 0] - intr.cx) / intr.fx,
            (pixels[..., 1] - intr.cy) / intr.fy,
            np.ones(pixels.shape[:-1]),
        ],
        axis=-1,
    )
    return d_cam @ extr.rotation


def backproject_points_to_plane(intr, extr, pixels, plane):
    """Intersect pixel viewing rays with a plane, without raising.

    Returns ``(points, valid)``; invalid entries (parallel ray or an
    intersection at or behind the camera) hold NaN.
    """
    pixels = np.asarray(pixels, dtype=float)
    origin = camera_center(extr)
    d = pixel_rays(intr, extr, pixels)
    denom = d @ plane.normal
    numer = (plane.point - origin) @ plane.normal
    scale = np.linalg.norm(d, axis=-1)
    parallel = np.abs(denom) <= MIN_DEPTH * scale
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(parallel, np.nan, numer / np.where(parallel, 1.0, denom))
    valid = ~parallel & (s > MIN_DEPTH)
    pts = origin + s[..., None] * d
    pts = np.where(valid[..., None], pts, np.nan)
    return pts, valid


def backproject_to_plane(intr, extr, pixel, plane):
    """Intersect one pixel's viewing ray with a plane, raising on failure."""
    pixel = np.asarray(pixel, dtype=float)
    d = pixel_rays(intr, extr, pixel)
    denom = float(d @ plane.normal)
    if abs(denom) <= MIN_DEPTH * np.linalg.norm(d):
        raise NoIntersectionError("viewing ray is parallel to the plane")
    origin = camera_center(extr)
    s = float((plane.point - origin) @ plane.normal) / denom
    if s <= MIN_DEPTH:
        raise BehindCameraError("plane intersection lies behind the camera")
    return origin + s * d


def in_frustum(intr, extr, points):
    """True where a point has positive depth and projects inside the image."""
    pixels, depths = project_points(intr, extr, points)
    u, v = pixels[..., 0], pixels[..., 1]
    return (
        (depths > MIN_DEPTH)
        & (u >= 0)
        & (u <= intr.image_width)
        & (v >= 0)
        & (v <= intr.image_height)
    )


# --- rotation helpers -------------------------------------------------------


def orthonormalized(matrix):
    """Nearest rotation matrix (polar decomposition via SVD)."""
    u, _, vt = np.linalg.svd(np.asarray(matrix, dtype=float))
    R = u @ vt
    if np.linalg.det(R) < 0:
        u = u.copy()
        u[:, -1] = -u[:, -1]
        R = u @ vt
    return R


def rotation_from_euler(roll, pitch, yaw):
    """Body attitude from intrinsic z-y'-x'' (yaw, pitch, roll) angles.

    Returns the matrix whose columns are the body axes in world
    coordinates, i.e. Rz(yaw) @ Ry(pitch) @ Rx(roll).
    """
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    return rz @ ry @ rx


def so3_exp(omega):
    """Rotation matrix for an axis-angle vector (Rodrigues formula)."""
    omega = np.asarray(omega, dtype=float)
    theta = np.linalg.norm(omega)
    if theta < 1e-12:
        K = skew(omega)
        return np.eye(3) + K + 0.5 * K @ K
    K = skew(omega / theta)
    return np.eye(3) + math.sin(theta) * K + (1.0 - math.cos(theta)) * K @ K


def skew(v):
    """Cross-product matrix of a 3-vector."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rotation_angle_deg(r1, r2):
    """Geodesic angle between two rotations, in degrees."""
    cos_ang = (np.trace(np.asarray(r1).T @ np.asarray(r2)) - 1.0) / 2.0
    return math.degrees(math.acos(min(1.0, max(-1.0, cos_ang))))


def quaternion_from_rotation(R):
    """Unit quaternion (w, x, y, z) for a rotation matrix, w >= 0."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s,
             (R[1, 0] - R[0, 1]) / s]
        )
    else:
        i = int(np.argmax(np.diag(R)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = math.sqrt(max(R[i, i] - R[j, j] - R[k, k] + 1.0, 0.0)) * 2.0
        q = np.empty(4)
        q[0] = (R[k, j] - R[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (R[j, i] + R[i, j]) / s
        q[1 + k] = (R[k, i] + R[i, k]) / s
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


def rotation_from_quaternion(q):
    """Rotation matrix for a (w, x, y, z) quaternion, normalized first."""
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def look_at_extrinsic(position, target, anchor=(0.0, 0.0, 0.0), up=(0.0, 0.0, 1.0)):
    """Build a calibration for a camera at ``position`` aimed at ``target``.

    Positions are in the anchored world frame. The camera x axis is
    chosen horizontal (perpendicular to world up), so the image has zero
    roll.
    """
    position = np.asarray(position, dtype=float)
    forward = np.asarray(target, dtype=float) - position
    norm = np.linalg.norm(forward)
    if norm < 1e-12:
        raise InputError("look-at target coincides with the camera position")
    forward = forward / norm
    right = np.cross(forward, np.asarray(up, dtype=float))
    norm = np.linalg.norm(right)
    if norm < 1e-12:
        raise InputError("viewing direction is parallel to the up vector")
    right = right / norm
    down = np.cross(forward, right)
    R = np.stack([right, down, forward], axis=0)
    t = -R @ position
    return ExtrinsicCalibration(orthonormalized(R), t, np.asarray(anchor, dtype=float))
