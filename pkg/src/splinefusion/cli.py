"""Command-line entry points tying the pipeline together.

Subcommands: ``simulate`` (write a synthetic dataset), ``fit`` (spline fit
to a pose CSV), ``estimate-ct`` / ``estimate-dt`` (batch estimation),
``evaluate`` (ATE metrics), ``compare`` (both modes across an injected
camera-offset grid).

Exit codes: 0 success, 1 usage error, 2 data error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time

import numpy as np

from . import estimators as est
from . import metrics as met
from .config import RunConfig, load_config, save_config
from .dataset import _HEADERS, _read_csv, read_dataset, write_dataset
from .errors import DataError, NumericalFailureError, SplineFusionError
from .initialization import fit_spline_to_poses
from .rotations import quat_to_rotation, rotation_to_quat
from .simulate import ProfileParams, default_rig, make_ground_truth, synthesize
from .bsplines import save_spline_pair


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------------------
# shared helpers


def _simulate_dataset(cfg: RunConfig):
    sim = cfg.simulate
    params = ProfileParams(
        kind=sim.profile, radius=sim.radius, rate=sim.rate, height=sim.height,
        height_rate=sim.height_rate, wobble_roll=sim.wobble_roll,
        wobble_pitch=sim.wobble_pitch, wobble_rate=sim.wobble_rate,
        static_prefix=sim.static_prefix,
    )
    gt = make_ground_truth(params, duration=sim.duration)
    rig = default_rig(t_cam_imu=sim.t_cam_imu_ms * 1e-3,
                      t_gps_imu=sim.t_gps_imu_ms * 1e-3)
    noise = dataclasses.replace(cfg.noise, seed=cfg.seed)
    result = synthesize(gt, rig, noise, num_landmarks=sim.num_landmarks,
                        landmark_spread=sim.landmark_spread)
    return gt, rig, noise, result


def _check_imu_gaps(meas):
    t = meas.imu_t_ns * 1e-9
    if t.size < 2:
        raise DataError("IMU stream has fewer than two samples")
    d = np.diff(t)
    med = float(np.median(d))
    worst = int(np.argmax(d))
    if d[worst] > 10.0 * med:
        raise DataError(
            f"IMU gap of {d[worst]:.4f} s between t={t[worst]:.4f} s and "
            f"t={t[worst + 1]:.4f} s (median spacing {med:.4f} s)"
        )


def _write_estimate_csv(path, result):
    quat = rotation_to_quat(result.rotations)
    with open(path, "w") as f:
        f.write("t_ns,x,y,z,qw,qx,qy,qz\n")
        for t, p, q in zip(result.t_ns, result.positions, quat):
            vals = [f"{v:.17g}" for v in np.concatenate([p, q])]
            f.write(",".join([str(int(t))] + vals) + "\n")


def _read_pose_csv(path):
    rows = _read_csv(path, 8)
    if rows.size == 0:
        raise DataError(f"{path}: no pose rows")
    return rows[:, 0].astype(np.int64), rows[:, 1:4], quat_to_rotation(rows[:, 4:8])


def _pairs_against_gt(result, gt, align="none"):
    pairs = met.make_pairs(result.t_ns, result.positions, result.rotations,
                           gt[0], gt[1], gt[2])
    if len(pairs) == 0:
        raise DataError("no estimate/ground-truth timestamp pairs within 1 ms")
    return met.align_pairs(pairs, align)


def _report(result, wall_s, pairs=None):
    return {
        "mode": result.mode,
        "ate_p_m": met.ate_p(pairs) if pairs is not None else None,
        "ate_r_deg": met.ate_r(pairs) if pairs is not None else None,
        "t_cam_imu_ms": result.t_cam_imu * 1e3,
        "t_gps_imu_ms": result.t_gps_imu * 1e3,
        "iterations": result.report.iterations,
        "converged": bool(result.report.converged),
        "wall_ms": wall_s * 1e3,
    }


def _write_json(path, data):
    with open(path, "w") as f:
        json.dump(data, f, indent=2)
        f.write("\n")


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(args):
    cfg = load_config(args.config)
    if args.profile:
        cfg = RunConfig.from_dict({
            **cfg.to_dict(),
            "simulate": {**cfg.to_dict()["simulate"], "profile": args.profile},
        })
    if args.seed is not None:
        cfg = RunConfig.from_dict({**cfg.to_dict(), "seed": args.seed})
    gt, rig, noise, result = _simulate_dataset(cfg)
    os.makedirs(args.out, exist_ok=True)
    write_dataset(
        args.out, result.measurements, rig, noise,
        gt=(result.gt_t_ns, result.gt_positions, result.gt_rotations),
        extra_meta={"profile": dataclasses.asdict(cfg.simulate)},
    )
    save_config(os.path.join(args.out, "config.yaml"), cfg)
    print(f"wrote dataset to {args.out}: "
          f"{len(result.measurements.frames)} frames, "
          f"{result.measurements.imu_t_ns.size} IMU samples, "
          f"{result.measurements.gps_t_ns.size} GPS fixes")
    return 0


def cmd_fit(args):
    t_ns, pos, rot = _read_pose_csv(args.poses)
    times = t_ns * 1e-9
    fit = fit_spline_to_poses(times, pos, rot, args.order, args.node_hz)
    os.makedirs(args.out, exist_ok=True)
    save_spline_pair(os.path.join(args.out, "spline.json"),
                     fit.position, fit.rotation)
    _write_json(os.path.join(args.out, "fit_report.json"), {
        "iterations": fit.report.iterations,
        "converged": bool(fit.report.converged),
        "rms_position_m": fit.rms_position,
        "rms_rotation_rad": fit.rms_rotation,
    })
    print(f"fit converged in {fit.report.iterations} iterations; "
          f"rms position {fit.rms_position:.3e} m")
    return 0


def _cmd_estimate(args, mode):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = RunConfig.from_dict({**cfg.to_dict(), "seed": args.seed})
    meas, rig, noise, gt = read_dataset(
        args.data, require_gps=cfg.sensors.gps
    )
    if cfg.sensors.imu:
        _check_imu_gaps(meas)
    ecfg = cfg.estimator_config(mode)
    t0 = time.perf_counter()
    result = est.run(meas, rig, noise, ecfg, mode=mode, seed=cfg.seed)
    wall = time.perf_counter() - t0
    os.makedirs(args.out, exist_ok=True)
    _write_estimate_csv(os.path.join(args.out, "estimate.csv"), result)
    pairs = _pairs_against_gt(result, gt, cfg.align) if gt is not None else None
    report = _report(result, wall, pairs)
    report["factor_counts"] = result.factor_counts
    _write_json(os.path.join(args.out, "report.json"), report)
    ate_txt = (f" ate_p={report['ate_p_m']:.4f} m" if pairs is not None else "")
    print(f"{mode}: {result.report.iterations} iterations, "
          f"converged={report['converged']},"
          f"{ate_txt} t_cam={report['t_cam_imu_ms']:.2f} ms "
          f"t_gps={report['t_gps_imu_ms']:.2f} ms ({wall:.1f} s)")
    return 0


def cmd_evaluate(args):
    et, ep, er = _read_pose_csv(args.est)
    gt_t, gt_p, gt_r = _read_pose_csv(args.gt)
    pairs = met.make_pairs(et, ep, er, gt_t, gt_p, gt_r)
    if len(pairs) == 0:
        raise DataError("no estimate/ground-truth timestamp pairs within 1 ms")
    pairs = met.align_pairs(pairs, args.align)
    os.makedirs(args.out, exist_ok=True)
    met.write_metrics_json(os.path.join(args.out, "metrics.json"), pairs)
    met.write_traj_xy_csv(os.path.join(args.out, "traj_xy.csv"), pairs)
    m = met.metrics_dict(pairs)
    print(f"ate_p={m['ate_p_m']:.4f} m ate_r={m['ate_r_deg']:.4f} deg "
          f"({m['n_pairs']} pairs)")
    return 0


def cmd_compare(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = RunConfig.from_dict({**cfg.to_dict(), "seed": args.seed})
    try:
        offsets_ms = [float(x) for x in args.offsets.split(",") if x.strip()]
    except ValueError as e:
        raise UsageError(f"bad --offsets value: {args.offsets!r}") from e
    if not offsets_ms:
        raise UsageError("--offsets must list at least one value")
    os.makedirs(args.out, exist_ok=True)
    rows = []
    for off in offsets_ms:
        run_cfg = RunConfig.from_dict({
            **cfg.to_dict(),
            "simulate": {**cfg.to_dict()["simulate"], "t_cam_imu_ms": off},
        })
        gt, rig, noise, sim_result = _simulate_dataset(run_cfg)
        meas = sim_result.measurements
        gt_tuple = (sim_result.gt_t_ns, sim_result.gt_positions,
                    sim_result.gt_rotations)
        for mode in ("ct", "dt"):
            ecfg = run_cfg.estimator_config(mode)
            result = est.run(meas, rig, noise, ecfg, mode=mode,
                             seed=run_cfg.seed)
            pairs = _pairs_against_gt(result, gt_tuple, run_cfg.align)
            rows.append({
                "offset_true_ms": off,
                "mode": mode,
                "ate_p_m": met.ate_p(pairs),
                "ate_r_deg": met.ate_r(pairs),
                "offset_est_ms": result.t_cam_imu * 1e3,
            })
            print(f"offset {off:g} ms {mode}: ate_p={rows[-1]['ate_p_m']:.4f} m "
                  f"offset_est={rows[-1]['offset_est_ms']:.3f} ms")
    out_csv = os.path.join(args.out, "compare.csv")
    with open(out_csv, "w") as f:
        f.write("offset_true_ms,mode,ate_p_m,ate_r_deg,offset_est_ms\n")
        for r in rows:
            f.write(f"{r['offset_true_ms']:g},{r['mode']},"
                    f"{r['ate_p_m']:.9f},{r['ate_r_deg']:.9f},"
                    f"{r['offset_est_ms']:.6f}\n")
    print(f"wrote {out_csv}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def build_parser():
    p = _Parser(prog="splinefusion",
                description="Continuous-time vs discrete-time batch "
                            "trajectory estimation toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    def add_common(sp, config=True, seed=True, out=True):
        if config:
            sp.add_argument("--config", default=None, help="YAML config file")
        if seed:
            sp.add_argument("--seed", type=int, default=None)
        if out:
            sp.add_argument("--out", required=True, help="output directory")

    sp = sub.add_parser("simulate", help="write a synthetic dataset")
    add_common(sp)
    sp.add_argument("--profile", default=None,
                    choices=("line", "circle", "lemniscate"))
    sp.set_defaults(fn=cmd_simulate)

    sp = sub.add_parser("fit", help="fit a spline pair to a pose CSV")
    sp.add_argument("--poses", required=True,
                    help="CSV with t_ns,x,y,z,qw,qx,qy,qz rows")
    sp.add_argument("--order", type=int, default=6)
    sp.add_argument("--node-hz", type=float, default=10.0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_fit)

    for name, mode in (("estimate-ct", "ct"), ("estimate-dt", "dt")):
        sp = sub.add_parser(name, help=f"run the {mode.upper()} estimator")
        add_common(sp)
        sp.add_argument("--data", required=True, help="dataset directory")
        sp.set_defaults(fn=_cmd_estimate, mode=mode)

    sp = sub.add_parser("evaluate", help="ATE metrics for an estimate CSV")
    sp.add_argument("--est", required=True, help="estimate.csv path")
    sp.add_argument("--gt", required=True, help="ground-truth CSV path")
    sp.add_argument("--align", default="none", choices=("none", "se3", "sim3"))
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_evaluate)

    sp = sub.add_parser("compare",
                        help="run CT and DT across an injected-offset grid")
    add_common(sp)
    sp.add_argument("--offsets", default="0,10,20",
                    help="comma-separated injected camera offsets in ms")
    sp.set_defaults(fn=cmd_compare)

    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.fn is _cmd_estimate:
            return _cmd_estimate(args, args.mode)
        return args.fn(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except (NumericalFailureError, np.linalg.LinAlgError) as e:
        print(f"solver failure: {e}", file=sys.stderr)
        return 3
    except SplineFusionError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
