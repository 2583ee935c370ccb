"""End-to-end orchestration, file formats, configuration and reporting.

File formats (all plain text):
  detections   CSV lines ``timestamp_s,u_px,v_px,w_px,h_px[,track_id]``,
               ``#`` comments allowed; rows sharing a timestamp form one
               frame; frame times must strictly increase.
  localization CSV lines ``timestamp_s,x_utm_m,y_utm_m,z_utm_m,
               roll_rad,pitch_rad,yaw_rad`` with strictly increasing
               timestamps.
  intrinsics   JSON object with fx, fy, cx, cy, image_width, image_height.
  calibration  JSON document with the rotation matrix (row-major, full
               double precision), a unit quaternion, the translation,
               the UTM anchor, an intrinsics echo, metrics and the
               config hash; reading it back reproduces the matrix
               bit-exactly.
  config       JSON object of parameter sections; unknown keys are
               rejected. Values can be overridden per run from the
               environment (``ROADCAL_<SECTION>__<FIELD>``) and from the
               command line, with precedence CLI > env > file > default.
"""

import dataclasses
import hashlib
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, InsufficientTraversalsError
from .geometry import (
    ExtrinsicCalibration,
    FixedAnchor,
    Intrinsics,
    MeanAnchor,
    apply_anchor,
    camera_center,
    quaternion_from_rotation,
    rotation_from_euler,
)
from .grouping import GroupingParams, cluster_groups, similarity_graph
from .hypothesis import (
    Hypothesis,
    LocalizationSample,
    PrefilterParams,
    RejectionReason,
    build_hypothesis,
)
from .pnp import RansacParams
from .refinement import (
    RegistrationParams,
    VehicleDims,
    delta_p_values,
    merge_and_select,
)
from .tracking import ObjectTrack, TrackerParams, BoundingBox, Detection, run_tracker

TOOL_VERSION = "0.1.0"
ENV_PREFIX = "ROADCAL_"
DISTANCE_BIN_M = 0.5

_SECTIONS = {
    "tracker": TrackerParams,
    "ransac": RansacParams,
    "prefilter": PrefilterParams,
    "grouping": GroupingParams,
    "registration": RegistrationParams,
    "vehicle": VehicleDims,
}


@dataclass(frozen=True)
class PipelineConfig:
    tracker: TrackerParams = TrackerParams()
    ransac: RansacParams = RansacParams()
    prefilter: PrefilterParams = PrefilterParams()
    grouping: GroupingParams = GroupingParams()
    registration: RegistrationParams = RegistrationParams()
    vehicle: VehicleDims = VehicleDims(4.4, 1.8, 1.5)
    anchor_mode: str = "mean"
    anchor_offset: tuple = (0.0, 0.0, 0.0)
    lever_arm: tuple = (0.0, 0.0, 0.0)
    pretracked: bool = False

    def anchor_spec(self):
        if self.anchor_mode == "mean":
            return MeanAnchor()
        if self.anchor_mode == "fixed":
            return FixedAnchor(tuple(self.anchor_offset))
        raise InputError(f"unknown anchor mode {self.anchor_mode!r}")

    def to_dict(self):
        out = {}
        for name, cls in _SECTIONS.items():
            out[name] = dataclasses.asdict(getattr(self, name))
        out["anchor"] = {"mode": self.anchor_mode, "offset": list(self.anchor_offset)}
        out["lever_arm"] = list(self.lever_arm)
        out["pretracked"] = self.pretracked
        return out

    def config_hash(self):
        canonical = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canonical.encode()).hexdigest()


def _coerce(value, target):
    if isinstance(target, bool):
        if isinstance(value, bool):
            return value
        if isinstance(value, str):
            if value.lower() in ("true", "1", "yes"):
                return True
            if value.lower() in ("false", "0", "no"):
                return False
        raise InputError(f"expected a boolean, got {value!r}")
    if isinstance(target, int) and not isinstance(target, bool):
        return int(value)
    if isinstance(target, float):
        return float(value)
    return value


def _build_section(cls, values, section, defaults):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise InputError(f"unknown config key(s) in [{section}]: {sorted(unknown)}")
    kwargs = {
        k: _coerce(v, getattr(defaults, k)) for k, v in values.items()
    }
    return dataclasses.replace(defaults, **kwargs)


def build_config(file_dict=None, env=None, overrides=()):
    """Assemble the pipeline configuration.

    ``file_dict`` comes from the config file, ``env`` from the process
    environment (``ROADCAL_SECTION__FIELD``), ``overrides`` from the
    command line as ``section.field=value`` strings. Later sources win.
    """
    sections = {name: {} for name in _SECTIONS}
    sections["anchor"] = {}
    top = {"lever_arm": None, "pretracked": None}

    def absorb(section, key, value, source):
        if section in _SECTIONS or section == "anchor":
            sections[section][key] = value
        else:
            raise InputError(f"unknown config section {section!r} ({source})")

    file_dict = dict(file_dict or {})
    for section, content in file_dict.items():
        if section in ("lever_arm", "pretracked"):
            top[section] = content
            continue
        if section not in sections:
            raise InputError(f"unknown config section {section!r} (config file)")
        if not isinstance(content, dict):
            raise InputError(f"config section {section!r} must be an object")
        for key, value in content.items():
            absorb(section, key, value, "config file")

    env = env if env is not None else os.environ
    for name, raw in sorted(env.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        body = name[len(ENV_PREFIX):].lower()
        if "__" not in body:
            if body in top:
                top[body] = json.loads(raw)
                continue
            raise InputError(f"malformed override variable {name}")
        section, key = body.split("__", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        absorb(section, key, value, f"environment ({name})")

    for item in overrides:
        if "=" not in item:
            raise InputError(f"override {item!r} is not of the form section.field=value")
        path, raw = item.split("=", 1)
        if "." not in path:
            if path in top:
                top[path] = json.loads(raw)
                continue
            raise InputError(f"override {item!r} is not of the form section.field=value")
        section, key = path.split(".", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        absorb(section, key, value, "command line")

    base = PipelineConfig()
    kwargs = {
        name: _build_section(cls, sections[name], name, getattr(base, name))
        for name, cls in _SECTIONS.items()
    }
    anchor = sections["anchor"]
    unknown = set(anchor) - {"mode", "offset"}
    if unknown:
        raise InputError(f"unknown config key(s) in [anchor]: {sorted(unknown)}")
    mode = anchor.get("mode", "mean")
    if mode not in ("mean", "fixed"):
        raise InputError(f"anchor mode must be 'mean' or 'fixed', got {mode!r}")
    offset = tuple(float(v) for v in anchor.get("offset", (0.0, 0.0, 0.0)))
    if len(offset) != 3:
        raise InputError("anchor offset must have 3 components")
    lever = tuple(float(v) for v in (top["lever_arm"] or (0.0, 0.0, 0.0)))
    if len(lever) != 3:
        raise InputError("lever_arm must have 3 components")
    return PipelineConfig(
        anchor_mode=mode,
        anchor_offset=offset,
        lever_arm=lever,
        pretracked=bool(top["pretracked"]) if top["pretracked"] is not None else False,
        **kwargs,
    )


def load_config(path, env=None, overrides=()):
    with open(path) as fh:
        try:
            file_dict = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: invalid JSON: {exc}") from exc
    return build_config(file_dict, env=env, overrides=overrides)


# --- detection and localization files ---------------------------------------


@dataclass
class DetectionFrame:
    timestamp: float
    boxes: list
    track_ids: list = None


def ingest_detections(path):
    """Read detection frames; rows with a sixth column carry track IDs."""
    frames = []
    have_ids = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) not in (5, 6):
                raise InputError(
                    f"{path}:{lineno}: expected 5 or 6 fields, got {len(parts)}"
                )
            try:
                t, u, v, w, h = (float(p) for p in parts[:5])
                track_id = int(parts[5]) if len(parts) == 6 else None
            except ValueError as exc:
                raise InputError(f"{path}:{lineno}: {exc}") from exc
            row_has_id = track_id is not None
            if have_ids is None:
                have_ids = row_has_id
            elif have_ids != row_has_id:
                raise InputError(
                    f"{path}:{lineno}: mixed rows with and without track IDs"
                )
            if w <= 0 or h <= 0:
                raise InputError(f"{path}:{lineno}: box size must be positive")
            if not frames or frames[-1].timestamp != t:
                if frames and t < frames[-1].timestamp:
                    raise InputError(
                        f"{path}:{lineno}: timestamps must be non-decreasing"
                    )
                frames.append(
                    DetectionFrame(t, [], [] if row_has_id else None)
                )
            frames[-1].boxes.append(BoundingBox(u, v, w, h))
            if row_has_id:
                frames[-1].track_ids.append(track_id)
    return frames


def write_detections(path, frames, truth=None, id_gap_s=2.0):
    """Write frames; ``truth`` identities (if given) become track IDs.

    A vehicle that reappears after more than ``id_gap_s`` gets a fresh
    ID, as an upstream tracker without re-identification would assign.
    """
    ids = {}
    next_id = 0
    with open(path, "w") as fh:
        fh.write("# timestamp_s,u_px,v_px,w_px,h_px\n")
        for timestamp, boxes in frames:
            for box in boxes:
                row = (
                    f"{float(timestamp)!r},{float(box.u)!r},{float(box.v)!r},"
                    f"{float(box.w)!r},{float(box.h)!r}"
                )
                if truth is not None:
                    name = truth.identities.get((timestamp, box))
                    known = ids.get(name)
                    if known is None or timestamp - known[1] > id_gap_s:
                        ids[name] = [next_id, timestamp]
                        next_id += 1
                    else:
                        known[1] = timestamp
                    row += f",{ids[name][0]}"
                fh.write(row + "\n")


def ingest_localization(path, lever_arm=(0.0, 0.0, 0.0)):
    """Read the pose log; a configured antenna lever arm (vehicle frame,
    meters) is rotated by the sample attitude and added to each position."""
    lever = np.asarray(lever_arm, dtype=float)
    apply_lever = np.any(lever != 0)
    samples = []
    last_t = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 7:
                raise InputError(f"{path}:{lineno}: expected 7 fields, got {len(parts)}")
            try:
                t, x, y, z, roll, pitch, yaw = (float(p) for p in parts)
            except ValueError as exc:
                raise InputError(f"{path}:{lineno}: {exc}") from exc
            if last_t is not None and t <= last_t:
                raise InputError(
                    f"{path}:{lineno}: timestamps must strictly increase"
                )
            last_t = t
            for name, angle in (("roll", roll), ("pitch", pitch), ("yaw", yaw)):
                if abs(angle) > 2 * math.pi:
                    raise InputError(
                        f"{path}:{lineno}: |{name}| > 2*pi; angles must be in radians"
                    )
            position = np.array([x, y, z])
            if apply_lever:
                position = position + rotation_from_euler(roll, pitch, yaw) @ lever
            samples.append(LocalizationSample(t, position, roll, pitch, yaw))
    return samples


def write_localization(path, log):
    with open(path, "w") as fh:
        fh.write("# timestamp_s,x_utm_m,y_utm_m,z_utm_m,roll_rad,pitch_rad,yaw_rad\n")
        for s in log:
            fh.write(
                f"{float(s.timestamp)!r},{float(s.position[0])!r},"
                f"{float(s.position[1])!r},{float(s.position[2])!r},"
                f"{float(s.roll)!r},{float(s.pitch)!r},{float(s.yaw)!r}\n"
            )


def load_intrinsics(path):
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: invalid JSON: {exc}") from exc
    required = {"fx", "fy", "cx", "cy", "image_width", "image_height"}
    unknown = set(doc) - required
    if unknown:
        raise InputError(f"{path}: unknown intrinsics key(s): {sorted(unknown)}")
    missing = required - set(doc)
    if missing:
        raise InputError(f"{path}: missing intrinsics key(s): {sorted(missing)}")
    return Intrinsics(**{k: float(doc[k]) for k in required})


def save_intrinsics(path, intr):
    with open(path, "w") as fh:
        json.dump(dataclasses.asdict(intr), fh, indent=2)
        fh.write("\n")


# --- calibration documents ---------------------------------------------------


def emit_calibration(calib, path, intr=None, metrics=None, config_hash=None):
    """Write a geo-referenced calibration document.

    Floats are serialized at full double precision, so reading the file
    back reproduces the rotation bit-exactly.
    """
    doc = {
        "format": "roadcal-calibration",
        "tool_version": TOOL_VERSION,
        "rotation": [[float(v) for v in row] for row in calib.rotation],
        "quaternion_wxyz": [float(v) for v in quaternion_from_rotation(calib.rotation)],
        "translation_m": [float(v) for v in calib.translation],
        "anchor_utm_m": [float(v) for v in calib.anchor],
        "camera_position_utm_m": [
            float(v) for v in camera_center(calib) + calib.anchor
        ],
        "intrinsics": dataclasses.asdict(intr) if intr is not None else None,
        "metrics": metrics,
        "config_hash": config_hash,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    return doc


def load_calibration(path):
    """Read a calibration document back as ``(ExtrinsicCalibration, doc)``."""
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: invalid JSON: {exc}") from exc
    if doc.get("format") != "roadcal-calibration":
        raise InputError(f"{path}: not a calibration document")
    calib = ExtrinsicCalibration(
        np.array(doc["rotation"], dtype=float),
        np.array(doc["translation_m"], dtype=float),
        np.array(doc["anchor_utm_m"], dtype=float),
    )
    return calib, doc


# --- report ------------------------------------------------------------------


@dataclass
class RunReport:
    config: dict
    config_hash: str
    counts: dict
    selection: dict
    metrics: dict
    distance_bins: list
    calibration: dict
    tool_version: str = TOOL_VERSION

    def to_dict(self):
        return dataclasses.asdict(self)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")


def distance_binned_errors(result, intr, bin_width=DISTANCE_BIN_M):
    """Mean delta_p per camera-distance bin: (bin_center, mean, count)."""
    values = delta_p_values(result.calib, result.pairs, result.plane, intr)
    cam = camera_center(result.calib)
    rows = {}
    for pair, value in zip(result.pairs, values):
        if math.isnan(value):
            continue
        distance = float(np.linalg.norm(pair.world_corner - cam))
        center = (math.floor(distance / bin_width) + 0.5) * bin_width
        rows.setdefault(center, []).append(value)
    return [
        (center, float(np.mean(vals)), len(vals))
        for center, vals in sorted(rows.items())
    ]


def emit_plot_data(report, path):
    """Write the distance-binned errors as CSV for external plotting."""
    bins = report.distance_bins if isinstance(report, RunReport) else report
    with open(path, "w") as fh:
        fh.write("# distance_bin_center_m,mean_delta_p_m,count\n")
        for center, mean, count in bins:
            fh.write(f"{center!r},{mean!r},{count}\n")


# --- orchestration -----------------------------------------------------------


def tracks_from_pretracked(frames):
    """Group externally tracked detections by their stable IDs."""
    by_id = {}
    for frame in frames:
        if frame.track_ids is None:
            raise InputError("pretracked mode needs a track ID on every row")
        for box, track_id in zip(frame.boxes, frame.track_ids):
            by_id.setdefault(track_id, []).append(Detection(frame.timestamp, box))
    return [ObjectTrack(tid, dets) for tid, dets in sorted(by_id.items())]


def run_calibration(config, frames, log, intr):
    """Execute the full chain and return a ``RunReport``.

    ``frames`` is a list of ``DetectionFrame`` (or ``(timestamp, boxes)``
    tuples); ``log`` the localization samples. Raises
    ``InsufficientTraversalsError`` when no hypothesis group survives.
    """
    norm_frames = []
    for f in frames:
        if isinstance(f, DetectionFrame):
            norm_frames.append(f)
        else:
            t, boxes = f
            norm_frames.append(DetectionFrame(t, list(boxes)))
    if not log:
        raise InputError("the localization log is empty")

    positions = np.array([s.position for s in log])
    _, anchor = apply_anchor(positions, config.anchor_spec())

    if config.pretracked:
        tracks = tracks_from_pretracked(norm_frames)
    else:
        tracks = run_tracker(
            [(f.timestamp, f.boxes) for f in norm_frames], config.tracker
        )

    hypotheses = []
    rejections = {reason.value: 0 for reason in RejectionReason}
    for track in tracks:
        outcome = build_hypothesis(
            track, log, intr, anchor, config.ransac, config.prefilter
        )
        if isinstance(outcome, Hypothesis):
            hypotheses.append(outcome)
        else:
            rejections[outcome.value] += 1

    if hypotheses:
        graph = similarity_graph(hypotheses, intr, config.grouping)
        groups = cluster_groups(graph, hypotheses, config.grouping)
        edge_count = sum(len(adj) for adj in graph.values()) // 2
    else:
        groups = []
        edge_count = 0

    counts = {
        "frames": len(norm_frames),
        "detections": sum(len(f.boxes) for f in norm_frames),
        "localization_samples": len(log),
        "tracks": len(tracks),
        "hypotheses_accepted": len(hypotheses),
        "rejections": {k: v for k, v in rejections.items() if v},
        "graph_edges": edge_count,
        "groups": len(groups),
        "group_sizes": [len(g.members) for g in groups],
    }

    if not groups:
        raise InsufficientTraversalsError(
            "no hypothesis group survived filtering "
            f"(tracks={counts['tracks']}, accepted={counts['hypotheses_accepted']}, "
            f"rejections={counts['rejections']}); record at least two traversals"
        )

    result = merge_and_select(
        groups, config.vehicle, intr, anchor, config.registration
    )

    metrics = {
        "delta_p_mean_m": result.delta_p_mean,
        "delta_p_max_m": result.delta_p_max,
        "e_mean_pct": result.e_mean_pct,
        "e_max_pct": result.e_max_pct,
        "pair_count": result.pair_count,
        "excluded_pairs": result.excluded_pairs,
    }
    selection = {
        "group_index": result.group_index,
        "source": result.source,
        "member_track_ids": result.member_track_ids,
        "candidates": [
            {"name": name, "mean_delta_p_m": score}
            for name, score in result.candidates
        ],
    }
    calibration_doc = {
        "rotation": [[float(v) for v in row] for row in result.calib.rotation],
        "quaternion_wxyz": [
            float(v) for v in quaternion_from_rotation(result.calib.rotation)
        ],
        "translation_m": [float(v) for v in result.calib.translation],
        "anchor_utm_m": [float(v) for v in result.calib.anchor],
        "camera_position_utm_m": [
            float(v) for v in camera_center(result.calib) + result.calib.anchor
        ],
    }
    return RunReport(
        config=config.to_dict(),
        config_hash=config.config_hash(),
        counts=counts,
        selection=selection,
        metrics=metrics,
        distance_bins=[list(row) for row in distance_binned_errors(result, intr)],
        calibration=calibration_doc,
    )


def calibration_from_report(report):
    doc = report.calibration if isinstance(report, RunReport) else report
    return ExtrinsicCalibration(
        np.array(doc["rotation"], dtype=float),
        np.array(doc["translation_m"], dtype=float),
        np.array(doc["anchor_utm_m"], dtype=float),
    )
