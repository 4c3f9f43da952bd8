"""Command line: ``simulate``, ``run``, ``evaluate`` and ``sweep``.

Log verbosity comes from ``GPSFUSE_LOG_LEVEL`` (default ``WARNING``).
Options given on the command line are overridden by the ``--config`` file.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import csvio
from .evaluation import ScenarioConfig, compute_ate, generate_data, run_scenario, sweep
from .geodetic import EnuOrigin, GeodeticPoint, from_enu
from .geom import Rot3, exp_so3
from .graph import SolverSettings
from .imu import ImuNoise, NavState
from .pipeline import EstimatorConfig, run_estimator

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

logger = logging.getLogger("gpsfuse")

LOG_ENV = "GPSFUSE_LOG_LEVEL"


def _setup_logging() -> None:
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _load_toml(path) -> dict:
    if path is None:
        return {}
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


# --- scenario flags ----------------------------------------------------------------

def _add_scenario_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("scenario (overridden by --config)")
    g.add_argument("--shape", choices=["loop", "figure-eight", "straight"])
    g.add_argument("--duration", type=float, help="seconds")
    g.add_argument("--speed", type=float, help="m/s")
    g.add_argument("--imu-rate", type=float, help="Hz")
    g.add_argument("--gps-rate", type=float, help="Hz")
    g.add_argument("--sigma-n", type=float, help="GPS noise, m")
    g.add_argument("--dropout", help="none | once | twice | always")
    g.add_argument("--drift", type=float, help="odometry translation drift (fraction of distance)")
    g.add_argument("--yaw-drift", type=float, help="odometry yaw drift, rad/m")
    g.add_argument("--alignment", choices=["full", "svd_once", "none"])
    g.add_argument("--sigma-theta-deg", type=float)
    g.add_argument("--repetitions", type=int)
    g.add_argument("--seeds", type=int, nargs="+")
    g.add_argument("--window-size", type=int)
    g.add_argument("--gps-free-baseline", action="store_true", default=None)


def _scenario_from_args(args) -> ScenarioConfig:
    d: dict = {}
    traj = {k: v for k, v in (("shape", args.shape), ("duration", args.duration),
                              ("speed", args.speed), ("imu_rate", args.imu_rate),
                              ("gps_rate", args.gps_rate)) if v is not None}
    if traj:
        d["trajectory"] = traj
    if args.sigma_n is not None:
        d["sigma_n"] = args.sigma_n
    if args.dropout is not None:
        d["dropout"] = args.dropout
    if args.drift is not None or args.yaw_drift is not None:
        base = ScenarioConfig().odometry_drift
        d["odometry_drift"] = [args.drift if args.drift is not None else base[0],
                               args.yaw_drift if args.yaw_drift is not None else base[1]]
    for key in ("alignment", "sigma_theta_deg", "gps_free_baseline"):
        if getattr(args, key) is not None:
            d[key] = getattr(args, key)
    if args.seeds is not None:
        d["seeds"] = args.seeds
        d["repetitions"] = len(args.seeds)
    if args.repetitions is not None:
        d["repetitions"] = args.repetitions
        if args.seeds is None:
            d["seeds"] = list(range(args.repetitions))
    if args.window_size is not None:
        d["solver"] = {"window_size": args.window_size}
    d = _merge(d, _load_toml(args.config))
    return ScenarioConfig.from_mapping(d)


def _dump(obj, path) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True)
    if path is None or str(path) == "-":
        print(text)
    else:
        Path(path).write_text(text + "\n")


# --- commands ------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = _scenario_from_args(args)
    seed = args.seed if args.seed is not None else cfg.seeds[0]
    data = generate_data(cfg, seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    csvio.write_imu_csv(out / "imu.csv", data.imu)
    if args.geodetic:
        origin = EnuOrigin.from_point(GeodeticPoint(*args.origin))
        csvio.write_gps_geodetic_csv(out / "gps.csv", (
            (g.t, from_enu(g.z, origin), np.diag(g.cov)) for g in data.gps))
    else:
        csvio.write_gps_csv(out / "gps.csv", data.gps)
    csvio.write_odometry_csv(out / "odom.csv", data.odometry)
    tr = data.truth
    csvio.write_truth_csv(out / "truth.csv", tr.t, tr.p, tr.q)
    meta = {"seed": seed, "ext_true": {"yaw": data.ext_true.yaw, "p_GW": data.ext_true.p_GW.tolist()},
            "config": cfg.to_dict()}
    _dump(meta, out / "scenario.json")
    print(f"wrote {len(data.imu)} IMU samples, {len(data.gps)} GPS fixes, "
          f"{len(data.odometry)} odometry links to {out}")
    return 0


def _initial_state(imu, odometry, truth) -> NavState:
    t0 = odometry[0].t_i
    if truth is not None:
        t, p, q = truth
        k = int(np.argmin(np.abs(t - t0)))
        k1 = min(k + 1, len(t) - 1)
        k0 = k1 - 1
        v = (p[k1] - p[k0]) / (t[k1] - t[k0])
        return NavState(p[k], Rot3(q[k]), v, t=t0)
    # level from the mean specific force, yaw zero
    acc = np.mean([s.accel for s in imu if s.t <= t0 + 0.1], axis=0)
    up = acc / np.linalg.norm(acc)
    axis = np.cross(up, [0.0, 0.0, 1.0])
    s = np.linalg.norm(axis)
    angle = np.arctan2(s, up[2])
    C = exp_so3(axis / s * angle) if s > 1e-12 else Rot3()
    f = odometry[0]
    v = C.rotate(f.T_ij.translation) / (f.t_j - f.t_i)
    return NavState(np.zeros(3), C, v, t=t0)


def _estimator_config(d: dict) -> EstimatorConfig:
    kw = {}
    if "solver" in d:
        kw["solver"] = SolverSettings.from_mapping(d["solver"])
    if "imu_noise" in d:
        kw["imu_noise"] = ImuNoise(**d["imu_noise"])
    if "p_SA" in d:
        kw["p_SA"] = tuple(d["p_SA"])
    if "sigma_theta_deg" in d:
        kw["sigma_theta"] = float(np.radians(d["sigma_theta_deg"]))
    for key in ("alignment", "reinit_timeout"):
        if key in d:
            kw[key] = d[key]
    if "bias_prior_sigma" in d:
        kw["bias_prior_sigma"] = tuple(d["bias_prior_sigma"])
    return EstimatorConfig(**kw)


def cmd_run(args) -> int:
    if args.imu is None:
        cfg = _scenario_from_args(args)
        log = open(args.events, "w") if args.events else None
        try:
            report = run_scenario(cfg, plot_dir=args.plot_dir, event_log=log)
        finally:
            if log is not None:
                log.close()
        _dump(report, args.out)
        _summary(report)
        return 0 if report["status"] == "ok" else 1

    if args.gps is None or args.odom is None:
        raise SystemExit("run: --imu needs --gps and --odom")
    d = {}
    if args.alignment is not None:
        d["alignment"] = args.alignment
    if args.sigma_theta_deg is not None:
        d["sigma_theta_deg"] = args.sigma_theta_deg
    if args.window_size is not None:
        d["solver"] = {"window_size": args.window_size}
    d = _merge(d, _load_toml(args.config))
    ecfg = _estimator_config(d)
    imu = csvio.read_imu_csv(args.imu)
    origin = GeodeticPoint(*args.origin) if args.origin else None
    gps = csvio.read_gps_csv(args.gps, origin)
    odo = csvio.read_odometry_csv(args.odom)
    truth = csvio.read_truth_csv(args.truth) if args.truth else None
    log = open(args.events, "w") if args.events else None
    try:
        res = run_estimator(_initial_state(imu, odo, truth), imu, odo, gps, ecfg, event_log=log)
    finally:
        if log is not None:
            log.close()
    t, p = res.trajectory()
    q = np.array([res.problem.states[i].q.q for i in res.problem.state_ids()])
    ext = res.ext
    report = {"status": "ok", "num_states": len(t), "num_gps_factors": len(res.problem.gps_factors),
              "rejected_gps": res.rejected_gps, "events": res.events,
              "final_cost": res.final_report.final_cost, "solver_reason": res.final_report.reason,
              "ext_estimate": None if ext is None else {"yaw": ext.yaw, "p_GW": ext.p_GW.tolist(),
                                                        "fixed": ext.fixed}}
    if args.trajectory_out:
        pg = ext.to_global(p) if ext is not None else p
        qg = q if ext is None else np.array([(ext.rotation @ Rot3(qi)).q for qi in q])
        csvio.write_truth_csv(args.trajectory_out, t, pg, qg)
    if args.states_out:
        res.problem.dump_csv(args.states_out)
    if truth is not None:
        tt, tp, _ = truth
        # the initial state came from the truth, so both live in the same W
        mode = "raw-global" if ext is not None else "aligned-4dof"
        ate = compute_ate((t, p), (tt, tp), mode)
        report["ate"] = ate.to_dict()
    _dump(report, args.out)
    return 0


def _summary(report: dict) -> None:
    for rep in report["repetitions"]:
        if rep["status"] != "ok":
            print(f"seed {rep['seed']}: FAILED {rep.get('error', '')}", file=sys.stderr)
            continue
        line = f"seed {rep['seed']}: ATE rmse {rep['ate']['rmse']:.4f} m ({rep['ate']['mode']})"
        if "gps_free_ate" in rep:
            line += f", GPS-free {rep['gps_free_ate']['rmse']:.4f} m"
        print(line, file=sys.stderr)
    if report["median_ate"] is not None:
        print(f"median ATE {report['median_ate']:.4f} m", file=sys.stderr)


def cmd_evaluate(args) -> int:
    te, pe, _ = csvio.read_truth_csv(args.estimate)
    tg, pg, _ = csvio.read_truth_csv(args.truth)
    ate = compute_ate((te, pe), (tg, pg), args.mode)
    _dump(ate.to_dict(), args.out)
    return 0


def cmd_sweep(args) -> int:
    cfg = _scenario_from_args(args)
    res = sweep(cfg, patterns=args.patterns, modes=args.modes)
    _dump(res, args.out)
    print("mode       " + " ".join(f"{p:>8}" for p in res["patterns"]), file=sys.stderr)
    for m in res["modes"]:
        cells = [res["median_ate"][m].get(p) for p in res["patterns"]]
        print(f"{m:<10} " + " ".join("     n/a" if c is None else f"{c:8.3f}" for c in cells),
              file=sys.stderr)
    ok = all(r["report"]["status"] == "ok" for r in res["runs"])
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gpsfuse", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a synthetic dataset as CSV files")
    _add_scenario_flags(p)
    p.add_argument("--config", help="TOML scenario file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--geodetic", action="store_true", help="write GPS as lat/lon/alt")
    p.add_argument("--origin", type=float, nargs=3, default=[47.3769, 8.5417, 408.0],
                   metavar=("LAT", "LON", "ALT"), help="ENU origin for --geodetic")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("run", help="run the estimator on CSV data or a synthetic scenario")
    _add_scenario_flags(p)
    p.add_argument("--imu")
    p.add_argument("--gps")
    p.add_argument("--odom")
    p.add_argument("--truth", help="ground-truth CSV: initial state and ATE")
    p.add_argument("--origin", type=float, nargs=3, metavar=("LAT", "LON", "ALT"),
                   help="ENU origin for geodetic GPS input (default: first fix)")
    p.add_argument("--config", help="TOML file")
    p.add_argument("--out", default="-", help="JSON report (default stdout)")
    p.add_argument("--events", help="JSON-lines alignment event log")
    p.add_argument("--plot-dir", help="gnuplot-ready CSVs (scenario mode)")
    p.add_argument("--trajectory-out", help="final trajectory CSV in G")
    p.add_argument("--states-out", help="full state dump CSV")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("evaluate", help="ATE of a trajectory CSV against ground truth")
    p.add_argument("--estimate", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--mode", choices=["raw-global", "aligned-4dof"], default="aligned-4dof")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="median ATE over dropout patterns and alignment modes")
    _add_scenario_flags(p)
    p.add_argument("--config", help="TOML scenario file")
    p.add_argument("--patterns", nargs="+", default=["none", "once", "twice", "always"])
    p.add_argument("--modes", nargs="+", default=["full", "svd_once"])
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError) as exc:
        print(f"gpsfuse: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
