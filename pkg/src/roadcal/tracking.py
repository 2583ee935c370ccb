"""Model-less multi-object tracking in image space.

Boxes are associated frame to frame with a Hungarian assignment on a
distance-IoU cost; gaps are bridged by linear extrapolation in box
coordinates because no metric motion model is available before the
camera is calibrated.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import InputError

# Association cost assigned to non-overlapping boxes; such pairs are
# never linked even if the assignment would otherwise include them.
FORBIDDEN_COST = 2.0


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box given by center (u, v) and size (w, h) in pixels."""

    u: float
    v: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise InputError(f"box size must be positive, got {self.w}x{self.h}")

    @property
    def corners(self):
        """(u_min, v_min, u_max, v_max)."""
        return (
            self.u - self.w / 2,
            self.v - self.h / 2,
            self.u + self.w / 2,
            self.v + self.h / 2,
        )

    @property
    def bottom_edge(self):
        """Endpoints of the bottom edge, left to right, as a (2, 2) array."""
        v_bot = self.v + self.h / 2
        return np.array([[self.u - self.w / 2, v_bot], [self.u + self.w / 2, v_bot]])


@dataclass(frozen=True)
class Detection:
    timestamp: float
    box: BoundingBox
    extrapolated: bool = False


@dataclass
class ObjectTrack:
    """Time-ordered detections sharing one object identity."""

    id: int
    detections: list[Detection] = field(default_factory=list)

    @property
    def timestamps(self):
        return np.array([d.timestamp for d in self.detections])

    def real_detections(self):
        return [d for d in self.detections if not d.extrapolated]


@dataclass(frozen=True)
class TrackerParams:
    max_extrapolation_frames: int = 10
    min_track_detections: int = 4
    cost_forbidden: float = FORBIDDEN_COST

    def __post_init__(self):
        if self.max_extrapolation_frames < 0:
            raise InputError("max_extrapolation_frames must be >= 0")


def iou(b1, b2):
    """Intersection over union of two boxes, in [0, 1]."""
    ax1, ay1, ax2, ay2 = b1.corners
    bx1, by1, bx2, by2 = b2.corners
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    # areas from the same corner arithmetic keep the ratio within [0, 1]
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    return inter / union


def diou(b1, b2):
    """Distance-IoU: IoU penalized by normalized center distance, in [-1, 1]."""
    ax1, ay1, ax2, ay2 = b1.corners
    bx1, by1, bx2, by2 = b2.corners
    enclosing_sq = (max(ax2, bx2) - min(ax1, bx1)) ** 2 + (
        max(ay2, by2) - min(ay1, by1)
    ) ** 2
    center_sq = (b1.u - b2.u) ** 2 + (b1.v - b2.v) ** 2
    return iou(b1, b2) - center_sq / enclosing_sq


def association_cost(b1, b2):
    """1 - DIoU for overlapping boxes, else the forbidden cost 2."""
    if iou(b1, b2) > 0:
        return 1.0 - diou(b1, b2)
    return FORBIDDEN_COST


def assign(cost_matrix):
    """Minimum-cost one-to-one assignment of a rectangular cost matrix.

    Returns a set of (row, col) pairs; pairs whose cost reaches the
    forbidden value are stripped from the solution.
    """
    cost_matrix = np.atleast_2d(np.asarray(cost_matrix, dtype=float))
    if cost_matrix.size == 0:
        return set()
    if not np.all(np.isfinite(cost_matrix)):
        raise InputError("assignment costs must be finite")
    rows, cols = linear_sum_assignment(cost_matrix)
    return {
        (int(r), int(c))
        for r, c in zip(rows, cols)
        if cost_matrix[r, c] < FORBIDDEN_COST - 1e-12
    }


class _ActiveTrack:
    __slots__ = ("id", "detections", "misses")

    def __init__(self, track_id, detection):
        self.id = track_id
        self.detections = [detection]
        self.misses = 0

    def last_box(self):
        return self.detections[-1].box

    def extrapolate(self, timestamp):
        """Constant-velocity prediction from the last two real detections."""
        real = [d for d in self.detections if not d.extrapolated]
        last = real[-1]
        if len(real) < 2 or timestamp == last.timestamp:
            box = last.box
        else:
            prev = real[-2]
            dt = last.timestamp - prev.timestamp
            s = (timestamp - last.timestamp) / dt
            box = BoundingBox(
                u=last.box.u + s * (last.box.u - prev.box.u),
                v=last.box.v + s * (last.box.v - prev.box.v),
                w=max(last.box.w + s * (last.box.w - prev.box.w), 1e-6),
                h=max(last.box.h + s * (last.box.h - prev.box.h), 1e-6),
            )
        return Detection(timestamp, box, extrapolated=True)


def run_tracker(frames, params=TrackerParams()):
    """Track boxes over time-ordered frames of (timestamp, boxes).

    Each input box ends up in exactly one track. Tracks missing from a
    frame are carried forward by extrapolated placeholder boxes, which
    keep them associable; after ``max_extrapolation_frames`` consecutive
    misses a track is finalized. Finalized tracks are stripped of
    extrapolated entries and kept only when at least
    ``min_track_detections`` real detections remain.
    """
    last_t = None
    for t, _ in frames:
        if last_t is not None and t <= last_t:
            raise InputError(f"frame timestamps must strictly increase at t={t}")
        last_t = t

    active: list[_ActiveTrack] = []
    finalized: list[ObjectTrack] = []
    next_id = 0

    def finalize(track):
        real = [d for d in track.detections if not d.extrapolated]
        if len(real) >= params.min_track_detections:
            finalized.append(ObjectTrack(track.id, real))

    for timestamp, boxes in frames:
        boxes = list(boxes)
        matched_tracks = set()
        matched_boxes = set()
        if active and boxes:
            cost = np.array(
                [[association_cost(tr.last_box(), b) for b in boxes] for tr in active]
            )
            for r, c in assign(cost):
                active[r].detections.append(Detection(timestamp, boxes[c]))
                active[r].misses = 0
                matched_tracks.add(r)
                matched_boxes.add(c)

        survivors = []
        for idx, tr in enumerate(active):
            if idx in matched_tracks:
                survivors.append(tr)
                continue
            tr.misses += 1
            if tr.misses > params.max_extrapolation_frames:
                finalize(tr)
            else:
                tr.detections.append(tr.extrapolate(timestamp))
                survivors.append(tr)
        active = survivors

        for c, box in enumerate(boxes):
            if c not in matched_boxes:
                active.append(_ActiveTrack(next_id, Detection(timestamp, box)))
                next_id += 1

    for tr in active:
        finalize(tr)
    finalized.sort(key=lambda t: t.id)
    return finalized
