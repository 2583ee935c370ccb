"""Command line interface.

Subcommands:
  calibrate  estimate a geo-referenced calibration from recorded data
  simulate   generate a synthetic scenario into pipeline-ready files
  evaluate   score an existing calibration against recorded data
  inspect    summarize any toolkit file

Exit codes: 0 success, 2 insufficient traversals, 3 input or parse
error, 4 no consensus, 1 any other failure.
"""

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from .errors import CalibrationError, InputError, NoConsensusError
from .geometry import camera_center
from .hypothesis import Hypothesis, synchronize
from .pipeline import (
    TOOL_VERSION,
    build_config,
    calibration_from_report,
    distance_binned_errors,
    emit_calibration,
    emit_plot_data,
    ingest_detections,
    ingest_localization,
    load_calibration,
    load_config,
    load_intrinsics,
    run_calibration,
    save_intrinsics,
    tracks_from_pretracked,
    write_detections,
    write_localization,
)
from .pnp import Correspondence, reprojection_errors
from .refinement import (
    CalibrationResult,
    evaluate as evaluate_pairs,
    fit_ground_plane,
    refine_correspondences,
)
from .synthgen import NoiseConfig, curved_road_scenario, generate
from .tracking import run_tracker


def _load_config(args):
    overrides = args.set or []
    if args.config:
        return load_config(args.config, overrides=overrides)
    return build_config(overrides=overrides)


def cmd_calibrate(args):
    config = _load_config(args)
    if args.pretracked:
        config = dataclasses.replace(config, pretracked=True)
    intr = load_intrinsics(args.intrinsics)
    frames = ingest_detections(args.detections)
    log = ingest_localization(args.localization, lever_arm=config.lever_arm)

    report = run_calibration(config, frames, log, intr)
    calib = calibration_from_report(report)
    emit_calibration(
        calib, args.out, intr, metrics=report.metrics, config_hash=report.config_hash
    )
    if args.report:
        report.save(args.report)
    if args.plot_data:
        emit_plot_data(report, args.plot_data)

    m = report.metrics
    print(f"calibration written to {args.out}")
    print(
        f"  tracks={report.counts['tracks']} accepted={report.counts['hypotheses_accepted']} "
        f"groups={report.counts['groups']} source={report.selection['source']}"
    )
    print(
        f"  delta_p mean={m['delta_p_mean_m']:.3f} m  max={m['delta_p_max_m']:.3f} m  "
        f"e mean={m['e_mean_pct']:.2f} %  max={m['e_max_pct']:.2f} %  "
        f"pairs={m['pair_count']}"
    )
    return 0


_SCENARIO_KEYS = {
    "preset", "seed", "sigma_pos", "sigma_box", "traversal_count",
    "n_distractors", "frame_rate", "localization_rate",
}


def cmd_simulate(args):
    with open(args.scenario) as fh:
        try:
            options = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InputError(f"{args.scenario}: invalid JSON: {exc}") from exc
    unknown = set(options) - _SCENARIO_KEYS
    if unknown:
        raise InputError(f"{args.scenario}: unknown scenario key(s): {sorted(unknown)}")
    preset = options.pop("preset", "curved_road")
    if preset != "curved_road":
        raise InputError(f"unknown scenario preset {preset!r}")
    config = curved_road_scenario(
        seed=int(options.get("seed", 0)),
        sigma_pos=float(options.get("sigma_pos", 0.0)),
        sigma_box=float(options.get("sigma_box", 0.0)),
        traversal_count=int(options.get("traversal_count", 2)),
        n_distractors=int(options.get("n_distractors", 5)),
        frame_rate=float(options.get("frame_rate", 10.0)),
        localization_rate=float(options.get("localization_rate", 50.0)),
    )
    frames, log, truth = generate(config)

    os.makedirs(args.out_dir, exist_ok=True)
    det_path = os.path.join(args.out_dir, "detections.csv")
    loc_path = os.path.join(args.out_dir, "localization.csv")
    intr_path = os.path.join(args.out_dir, "intrinsics.json")
    truth_path = os.path.join(args.out_dir, "truth.json")
    write_detections(det_path, frames, truth=truth if args.with_ids else None)
    write_localization(loc_path, log)
    save_intrinsics(intr_path, config.intrinsics)
    emit_calibration(truth.calibration(), truth_path, config.intrinsics)

    n_target = sum(
        1 for t, boxes in frames for b in boxes
        if truth.identities[(t, b)] == "target"
    )
    print(f"scenario written to {args.out_dir}")
    print(
        f"  frames={len(frames)} detections={sum(len(b) for _, b in frames)} "
        f"target_detections={n_target} localization_samples={len(log)}"
    )
    print(f"  ground-truth calibration: {truth_path}")
    return 0


def cmd_evaluate(args):
    config = _load_config(args)
    calib, doc = load_calibration(args.calibration)
    intr = load_intrinsics(args.intrinsics)
    frames = ingest_detections(args.detections)
    log = ingest_localization(args.localization, lever_arm=config.lever_arm)

    if config.pretracked or args.pretracked:
        tracks = tracks_from_pretracked(frames)
    else:
        tracks = run_tracker([(f.timestamp, f.boxes) for f in frames], config.tracker)

    anchor = calib.anchor
    # the box center sits between the ground center and the roof center,
    # so a correct calibration is matched against both reference heights
    lift = np.array([0.0, 0.0, config.vehicle.height / 2.0])
    matched = []
    for track in tracks:
        try:
            pairs = synchronize(track, log, config.prefilter.sync_tolerance_s)
        except CalibrationError:
            continue
        medians = []
        for offset in (np.zeros(3), lift):
            corrs = [
                Correspondence(
                    s.position - anchor + offset, np.array([b.u, b.v]), s.timestamp
                )
                for s, b in pairs
            ]
            medians.append(float(np.median(reprojection_errors(calib, intr, corrs))))
        if min(medians) <= config.prefilter.max_median_reproj_px:
            matched.append((track, pairs, min(medians)))

    if not matched:
        raise NoConsensusError(
            "no track matches the calibration within "
            f"{config.prefilter.max_median_reproj_px} px median reprojection"
        )

    plane = fit_ground_plane(log, anchor)
    all_pairs = []
    for track, pairs, _ in matched:
        h = Hypothesis(track.id, pairs, calib, 0.0)
        all_pairs.extend(refine_correspondences(h, calib, config.vehicle, plane, intr))
    metrics = evaluate_pairs(calib, all_pairs, plane, intr)

    print(f"evaluated {len(matched)} matching track(s), {metrics.pair_count} pairs")
    print(
        f"  delta_p mean={metrics.delta_p_mean:.3f} m  max={metrics.delta_p_max:.3f} m"
    )
    print(
        f"  e mean={metrics.e_mean_pct:.2f} %  max={metrics.e_max_pct:.2f} %  "
        f"excluded={metrics.excluded_pairs}"
    )
    if args.plot_data:
        result = CalibrationResult(
            calib=calib,
            delta_p_mean=metrics.delta_p_mean,
            delta_p_max=metrics.delta_p_max,
            e_mean_pct=metrics.e_mean_pct,
            e_max_pct=metrics.e_max_pct,
            pair_count=metrics.pair_count,
            excluded_pairs=metrics.excluded_pairs,
            group_index=-1,
            member_track_ids=[t.id for t, _, _ in matched],
            source="evaluation",
            pairs=all_pairs,
            plane=plane,
        )
        emit_plot_data(distance_binned_errors(result, intr), args.plot_data)
    return 0


def cmd_inspect(args):
    path = args.path
    if path.endswith(".json"):
        with open(path) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise InputError(f"{path}: invalid JSON: {exc}") from exc
        if doc.get("format") == "roadcal-calibration":
            calib, _ = load_calibration(path)
            pos = camera_center(calib) + calib.anchor
            print(f"{path}: calibration document (tool {doc.get('tool_version')})")
            print(f"  camera position (UTM): {pos.tolist()}")
            print(f"  anchor (UTM): {calib.anchor.tolist()}")
            if doc.get("metrics"):
                print(f"  metrics: {doc['metrics']}")
        elif {"counts", "metrics", "selection"} <= set(doc):
            print(f"{path}: run report (tool {doc.get('tool_version')})")
            print(f"  counts: {doc['counts']}")
            print(f"  metrics: {doc['metrics']}")
            print(f"  selection: {doc['selection']['source']}")
        elif {"fx", "fy", "cx", "cy"} <= set(doc):
            intr = load_intrinsics(path)
            print(f"{path}: intrinsics {intr.image_width:.0f}x{intr.image_height:.0f}")
            print(f"  fx={intr.fx} fy={intr.fy} cx={intr.cx} cy={intr.cy}")
        else:
            raise InputError(f"{path}: unrecognized JSON document")
        return 0

    # CSV: try detections, then localization
    try:
        frames = ingest_detections(path)
        n_boxes = sum(len(f.boxes) for f in frames)
        ids = frames[0].track_ids is not None if frames else False
        print(f"{path}: detections, {len(frames)} frames, {n_boxes} boxes"
              f"{', pretracked IDs' if ids else ''}")
        if frames:
            print(f"  time span: [{frames[0].timestamp}, {frames[-1].timestamp}] s")
        return 0
    except InputError:
        pass
    log = ingest_localization(path)
    print(f"{path}: localization log, {len(log)} samples")
    if log:
        pos = np.array([s.position for s in log])
        print(f"  time span: [{log[0].timestamp}, {log[-1].timestamp}] s")
        print(f"  position range: {np.ptp(pos, axis=0).round(2).tolist()} m")
    return 0


def make_parser():
    parser = argparse.ArgumentParser(
        prog="roadcal",
        description="Geo-referenced extrinsic calibration of static roadside cameras",
    )
    parser.add_argument("--version", action="version", version=TOOL_VERSION)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="estimate a calibration from recordings")
    p.add_argument("--detections", required=True)
    p.add_argument("--localization", required=True)
    p.add_argument("--intrinsics", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.add_argument("--plot-data")
    p.add_argument("--pretracked", action="store_true",
                   help="detection rows carry stable track IDs; skip the tracker")
    p.add_argument("--set", action="append", metavar="SECTION.FIELD=VALUE",
                   help="override a config value (repeatable)")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("simulate", help="generate a synthetic scenario")
    p.add_argument("--scenario", required=True, help="scenario JSON (preset + options)")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--with-ids", action="store_true",
                   help="write ground-truth track IDs into the detections")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("evaluate", help="score an existing calibration")
    p.add_argument("--calibration", required=True)
    p.add_argument("--detections", required=True)
    p.add_argument("--localization", required=True)
    p.add_argument("--intrinsics", required=True)
    p.add_argument("--config")
    p.add_argument("--plot-data")
    p.add_argument("--pretracked", action="store_true")
    p.add_argument("--set", action="append", metavar="SECTION.FIELD=VALUE")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("inspect", help="summarize a toolkit file")
    p.add_argument("path")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None):
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except CalibrationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
