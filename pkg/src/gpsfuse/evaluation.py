"""Trajectory error, synthetic scenarios and dropout sweeps."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .align import svd_init
from .csvio import write_plot_csv
from .factors import ExtrinsicsGW
from .graph import SolverSettings
from .imu import ImuNoise
from .pipeline import EstimatorConfig, EstimatorResult, run_estimator
from .simkit import (DropoutPattern, TrajectorySpec, make_gps, make_odometry, sample_extrinsics,
                     synthesize)

logger = logging.getLogger(__name__)

ASSOCIATION_TOLERANCE = 0.01  # s
REPORT_VERSION = 1


@dataclass
class AteResult:
    rmse: float
    median: float
    errors: np.ndarray
    mode: str  # "raw-global" | "aligned-4dof"

    def to_dict(self) -> dict:
        return {"rmse": self.rmse, "median": self.median, "max": float(np.max(self.errors)),
                "n": int(len(self.errors)), "mode": self.mode}


def associate(t_est, t_gt, tol: float = ASSOCIATION_TOLERANCE) -> tuple[np.ndarray, np.ndarray]:
    """Index pairs of nearest timestamps within ``tol``."""
    t_est = np.asarray(t_est, dtype=float)
    t_gt = np.asarray(t_gt, dtype=float)
    order = np.argsort(t_gt)
    ts = t_gt[order]
    k = np.clip(np.searchsorted(ts, t_est), 1, len(ts) - 1) if len(ts) > 1 else np.zeros(len(t_est), int)
    if len(ts) > 1:
        left = np.abs(t_est - ts[k - 1])
        right = np.abs(t_est - ts[k])
        k = np.where(left <= right, k - 1, k)
    ok = np.abs(t_est - ts[k]) <= tol
    return np.flatnonzero(ok), order[k[ok]]


def compute_ate(estimate, ground_truth, mode: str = "raw-global") -> AteResult:
    """Average trajectory error of ``estimate = (t, p)`` against ``ground_truth = (t, p)``.

    ``raw-global`` compares positions as given (both already in G).
    ``aligned-4dof`` first fits yaw + translation of the estimate onto the
    ground truth.
    """
    if mode not in ("raw-global", "aligned-4dof"):
        raise ValueError(f"unknown ATE mode {mode!r}")
    t_e, p_e = (np.asarray(x, dtype=float) for x in estimate)
    t_g, p_g = (np.asarray(x, dtype=float) for x in ground_truth)
    ie, ig = associate(t_e, t_g)
    if len(ie) < 2:
        raise ValueError("fewer than two associated pose pairs")
    pe, pg = p_e[ie], p_g[ig]
    if mode == "aligned-4dof":
        pe = svd_init(list(zip(pe, pg))).to_global(pe)
    err = np.linalg.norm(pe - pg, axis=1)
    return AteResult(float(np.sqrt(np.mean(err * err))), float(np.median(err)), err, mode)


# --- scenarios -------------------------------------------------------------------

_PATTERNS = {
    "none": DropoutPattern.none,
    "once": DropoutPattern.once,
    "twice": DropoutPattern.twice,
    "always": DropoutPattern.always,
}


def make_pattern(spec) -> DropoutPattern:
    """A named pattern (``"once"``), an interval list, or a pattern object."""
    if isinstance(spec, DropoutPattern):
        return spec
    if isinstance(spec, str):
        if spec not in _PATTERNS:
            raise ValueError(f"unknown dropout pattern {spec!r}; expected {sorted(_PATTERNS)}")
        return _PATTERNS[spec]()
    return DropoutPattern(tuple(tuple(iv) for iv in spec))


@dataclass
class ScenarioConfig:
    trajectory: TrajectorySpec = field(default_factory=TrajectorySpec)
    dropout: DropoutPattern = field(default_factory=DropoutPattern)
    sigma_n: float = 0.2  # m
    odometry_rate: float = 2.0  # Hz, keyframe rate
    odometry_drift: tuple = (0.01, 0.0)  # (translation fraction, yaw rad/m)
    odometry_noise: tuple = (0.01, 0.001)  # (m, rad) per step
    imu_noise: ImuNoise = field(default_factory=ImuNoise)
    p_SA: tuple = (0.0, 0.0, 0.0)
    sigma_theta_deg: float = 1.0
    alignment: str = "full"  # "full" | "svd_once" | "none"
    solver: SolverSettings = field(default_factory=SolverSettings)
    repetitions: int = 3
    seeds: list | None = None
    ext_max_offset: float = 50.0  # m, range of the hidden W->G translation
    gps_free_baseline: bool = False  # also run without GPS on the same data
    simulate_imu_noise: bool = True  # corrupt synthetic IMU samples with ``imu_noise``

    def __post_init__(self):
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if self.seeds is None:
            self.seeds = list(range(self.repetitions))
        self.seeds = [int(s) for s in self.seeds]
        if len(self.seeds) != self.repetitions:
            raise ValueError("seed list length must equal repetitions")
        if self.alignment not in ("full", "svd_once", "none"):
            raise ValueError(f"unknown alignment mode {self.alignment!r}")

    @classmethod
    def from_mapping(cls, data: dict) -> ScenarioConfig:
        data = dict(data)
        kw = {}
        if "trajectory" in data:
            traj = dict(data.pop("trajectory"))
            if "imu_noise" in traj and traj["imu_noise"] is not None:
                traj["imu_noise"] = ImuNoise(**traj["imu_noise"])
            for key in ("gyro_bias", "accel_bias"):
                if key in traj:
                    traj[key] = tuple(traj[key])
            kw["trajectory"] = TrajectorySpec(**traj)
        if "dropout" in data:
            kw["dropout"] = make_pattern(data.pop("dropout"))
        if "imu_noise" in data:
            kw["imu_noise"] = ImuNoise(**data.pop("imu_noise"))
        if "solver" in data:
            kw["solver"] = SolverSettings.from_mapping(data.pop("solver"))
        for key in ("odometry_drift", "odometry_noise", "p_SA"):
            if key in data:
                kw[key] = tuple(float(x) for x in data.pop(key))
        kw.update(data)
        return cls(**kw)

    def to_dict(self) -> dict:
        traj = asdict(self.trajectory)
        return {
            "trajectory": traj,
            "dropout": [list(iv) for iv in self.dropout.intervals],
            "sigma_n": self.sigma_n,
            "odometry_rate": self.odometry_rate,
            "odometry_drift": list(self.odometry_drift),
            "odometry_noise": list(self.odometry_noise),
            "imu_noise": asdict(self.imu_noise),
            "p_SA": list(self.p_SA),
            "sigma_theta_deg": self.sigma_theta_deg,
            "alignment": self.alignment,
            "solver": self.solver.to_dict(),
            "repetitions": self.repetitions,
            "seeds": list(self.seeds),
            "ext_max_offset": self.ext_max_offset,
            "gps_free_baseline": self.gps_free_baseline,
            "simulate_imu_noise": self.simulate_imu_noise,
        }

    def estimator_config(self, alignment: str | None = None) -> EstimatorConfig:
        return EstimatorConfig(solver=self.solver, imu_noise=self.imu_noise, p_SA=self.p_SA,
                               sigma_theta=np.radians(self.sigma_theta_deg),
                               alignment=alignment or self.alignment)


@dataclass
class ScenarioData:
    truth: object
    imu: list
    gps: list
    odometry: list
    ext_true: ExtrinsicsGW


def _child_seeds(seed: int) -> list[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(4)]


def generate_data(config: ScenarioConfig, seed: int) -> ScenarioData:
    s_traj, s_ext, s_gps, s_odo = _child_seeds(seed)
    noise = config.trajectory.imu_noise
    if noise is None and config.simulate_imu_noise:
        noise = config.imu_noise
    spec = TrajectorySpec(**{**asdict(config.trajectory), "seed": s_traj, "imu_noise": noise})
    truth, imu = synthesize(spec, config.solver.gravity)
    ext_true = sample_extrinsics(s_ext, config.ext_max_offset)
    gps = make_gps(truth, ext_true, np.asarray(config.p_SA, dtype=float), config.sigma_n,
                   config.dropout, s_gps, spec.gps_rate)
    odo = make_odometry(truth, config.odometry_drift, config.odometry_noise, s_odo,
                        config.odometry_rate)
    return ScenarioData(truth, imu, gps, odo, ext_true)


def evaluate_result(result: EstimatorResult, data: ScenarioData, gps_used: bool) -> AteResult:
    t, p = result.trajectory()
    truth_p = np.array([data.truth.at(x).p for x in t])
    if gps_used and result.ext is not None:
        return compute_ate((t, result.ext.to_global(p)), (t, data.ext_true.to_global(truth_p)),
                           "raw-global")
    return compute_ate((t, p), (t, truth_p), "aligned-4dof")


def write_plots(directory, tag: str, result: EstimatorResult, data: ScenarioData) -> None:
    """Truth, live estimate, final estimate and GPS points, all in G."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    ext_true = data.ext_true
    ext = result.ext
    tt = data.truth.t[::20]
    write_plot_csv(d / f"{tag}_truth.csv", ["t", "x", "y", "z"],
                   ([t, *ext_true.to_global(data.truth.p[k])] for t, k in
                    zip(tt, range(0, len(data.truth.t), 20))))
    write_plot_csv(d / f"{tag}_live.csv", ["t", "x", "y", "z"],
                   ([e.t, *e.p_G] for e in result.live if e.p_G is not None))
    if ext is not None:
        t, p = result.trajectory()
        write_plot_csv(d / f"{tag}_final.csv", ["t", "x", "y", "z"],
                       ([ti, *ext.to_global(pi)] for ti, pi in zip(t, p)))
    write_plot_csv(d / f"{tag}_gps.csv", ["t", "x", "y", "z"], ([g.t, *g.z] for g in data.gps))


def run_scenario(config: ScenarioConfig, plot_dir=None, event_log=None) -> dict:
    """Run every repetition and return the JSON-serialisable report.

    Estimator failures are recorded per repetition and make the report's
    ``status`` ``"failed"``.
    """
    reps = []
    ok_ate, free_ate = [], []
    status = "ok"
    gps_used = config.alignment != "none" and config.dropout.off_fraction < 1.0
    for seed in config.seeds:
        data = generate_data(config, seed)
        rep = {"seed": seed, "status": "ok",
               "ext_true": {"yaw": data.ext_true.yaw, "p_GW": data.ext_true.p_GW.tolist()}}
        try:
            res = run_estimator(data.truth.at(data.truth.t[0]), data.imu, data.odometry, data.gps,
                                config.estimator_config(config.alignment if gps_used else "none"),
                                event_log=event_log)
            ate = evaluate_result(res, data, gps_used)
        except (FloatingPointError, np.linalg.LinAlgError, ValueError) as exc:
            logger.error("seed %d failed: %s", seed, exc)
            rep.update(status="failed", error=f"{type(exc).__name__}: {exc}")
            status = "failed"
            reps.append(rep)
            continue
        rep["ate"] = ate.to_dict()
        rep["events"] = res.events
        rep["num_states"] = len(res.problem.states)
        rep["num_gps_factors"] = len(res.problem.gps_factors)
        rep["rejected_gps"] = res.rejected_gps
        rep["final_cost"] = res.final_report.final_cost
        rep["solver_reason"] = res.final_report.reason
        rep["ext_estimate"] = (None if res.ext is None else
                               {"yaw": res.ext.yaw, "p_GW": res.ext.p_GW.tolist(),
                                "fixed": res.ext.fixed})
        ok_ate.append(ate.rmse)
        if plot_dir is not None:
            write_plots(plot_dir, f"seed{seed}", res, data)
        if config.gps_free_baseline and gps_used:
            free = run_estimator(data.truth.at(data.truth.t[0]), data.imu, data.odometry, None,
                                 config.estimator_config("none"))
            fa = evaluate_result(free, data, False)
            rep["gps_free_ate"] = fa.to_dict()
            free_ate.append(fa.rmse)
        reps.append(rep)
    return {
        "version": REPORT_VERSION,
        "status": status,
        "config": config.to_dict(),
        "repetitions": reps,
        "median_ate": float(np.median(ok_ate)) if ok_ate else None,
        "median_gps_free_ate": float(np.median(free_ate)) if free_ate else None,
    }


SWEEP_PATTERNS = ("none", "once", "twice", "always")
SWEEP_MODES = ("full", "svd_once")


def sweep(config: ScenarioConfig, patterns=SWEEP_PATTERNS, modes=SWEEP_MODES) -> dict:
    """Median ATE per (alignment mode, dropout pattern), like a results table.

    The ``always`` pattern (no GPS at all) is evaluated once, without GPS,
    and reported for every mode.
    """
    table: dict = {m: {} for m in modes}
    reports = []
    for name in patterns:
        pattern = make_pattern(name)
        run_modes = ["none"] if pattern.off_fraction >= 1.0 else list(modes)
        for mode in run_modes:
            cfg = ScenarioConfig(**{**config.__dict__, "dropout": pattern, "alignment": mode,
                                    "gps_free_baseline": False})
            rep = run_scenario(cfg)
            reports.append({"pattern": name, "mode": mode, "report": rep})
            for m in (modes if mode == "none" else [mode]):
                table[m][name] = rep["median_ate"]
    return {"version": REPORT_VERSION, "patterns": list(patterns), "modes": list(modes),
            "median_ate": table, "runs": reports}


REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "gpsfuse scenario report",
    "type": "object",
    "required": ["version", "status", "config", "repetitions", "median_ate"],
    "properties": {
        "version": {"type": "integer"},
        "status": {"enum": ["ok", "failed"]},
        "config": {"type": "object"},
        "median_ate": {"type": ["number", "null"], "minimum": 0},
        "median_gps_free_ate": {"type": ["number", "null"], "minimum": 0},
        "repetitions": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["seed", "status"],
                "properties": {
                    "seed": {"type": "integer"},
                    "status": {"enum": ["ok", "failed"]},
                    "error": {"type": "string"},
                    "ate": {"$ref": "#/$defs/ate"},
                    "gps_free_ate": {"$ref": "#/$defs/ate"},
                    "events": {"type": "array", "items": {
                        "type": "object", "required": ["t", "event", "stage"]}},
                    "num_states": {"type": "integer", "minimum": 1},
                    "num_gps_factors": {"type": "integer", "minimum": 0},
                    "rejected_gps": {"type": "integer", "minimum": 0},
                    "final_cost": {"type": "number", "minimum": 0},
                    "solver_reason": {"type": "string"},
                },
            },
        },
    },
    "$defs": {
        "ate": {
            "type": "object",
            "required": ["rmse", "median", "max", "n", "mode"],
            "properties": {
                "rmse": {"type": "number", "minimum": 0},
                "median": {"type": "number", "minimum": 0},
                "max": {"type": "number", "minimum": 0},
                "n": {"type": "integer", "minimum": 2},
                "mode": {"enum": ["raw-global", "aligned-4dof"]},
            },
        },
    },
}
