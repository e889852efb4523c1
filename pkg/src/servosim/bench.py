"""Trial orchestration, trajectory metrics, and benchmark aggregation.

A trial runs the full pipeline: optional rotation compensation, then the
matched-feature servo loop until the velocity settles or the iteration
budget runs out. Trials are independent and deterministic per (seed,
trial id), so any parallelism degree yields bit-identical results.
"""

from __future__ import annotations

import csv
import json
import math
import multiprocessing
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .control import (ControllerConfig, MatcherConfig, ServoController,
                      compensate_rotation, pbvs_reference)
from .descriptors import ProviderConfig
from .errors import (DegenerateBaseline, DegenerateTrajectory,
                     InsufficientMatches, NoEligibleCells)
from .geometry import (CameraIntrinsics, Pose, Twist, integrate_twist,
                       pose_error, rotation_about_z, so3_exp, so3_log)
from .perturb import PerturbationConfig, perturb
from .simenv import (DEFAULT_BACKGROUND, PlanarTarget, PoseSampleConfig,
                     desired_pose, render, sample_initial_poses)

MAX_INSUFFICIENT_STREAK = 25


@dataclass(frozen=True)
class SceneConfig:
    """Everything needed to render the world: target, camera, sampler."""

    target: PlanarTarget
    intrinsics: CameraIntrinsics
    sampler: PoseSampleConfig
    background: tuple[int, int, int] = DEFAULT_BACKGROUND


@dataclass
class TrialRecord:
    """Per-iteration trajectory and outcome of one benchmark trial.

    Row 0 of the log is the sampled initial state; each following row is
    the state after applying that iteration's smoothed twist. The final
    pose always equals the last log row.
    """

    trial_id: int
    seed: int
    initial_pose: Pose
    desired_pose: Pose
    final_pose: Pose
    converged: bool
    velocity_settled: bool
    error_reduced: bool
    iterations: int
    compensation_deg: int | None
    aborted_insufficient: bool
    init_trans_err: float          # meters
    init_rot_err: float            # degrees
    final_trans_err: float
    final_rot_err: float
    ape_trans_cm: float
    ape_rot_deg: float
    length_ratio: float
    translations: np.ndarray       # (n+1, 3)
    quaternions: np.ndarray        # (n+1, 4) wxyz
    raw_twists: np.ndarray         # (n+1, 6)
    smoothed_twists: np.ndarray    # (n+1, 6)
    error_norms: np.ndarray        # (n+1,)
    mean_cosines: np.ndarray       # (n+1,)
    k_used: np.ndarray             # (n+1,)

    def log_poses(self) -> list[Pose]:
        return [Pose.from_quaternion(q, t)
                for q, t in zip(self.quaternions, self.translations)]


def apply_roll(pose: Pose, angle: float) -> Pose:
    """Instantaneous roll about the camera's optical axis."""
    return Pose(pose.rotation @ rotation_about_z(angle), pose.translation)


def _resample_by_arclength(translations: np.ndarray, rotations: list[np.ndarray],
                           m: int) -> tuple[np.ndarray, list[np.ndarray]]:
    """Resample a pose path to m points uniform in translational arc length."""
    seg = np.linalg.norm(np.diff(translations, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    if total < 1e-12:
        # stationary path: every sample is the first pose
        return (np.repeat(translations[:1], m, axis=0),
                [rotations[0]] * m)
    targets = np.linspace(0.0, total, m)
    idx = np.searchsorted(cum, targets, side="right") - 1
    idx = np.clip(idx, 0, len(seg) - 1)
    out_t = np.empty((m, 3))
    out_r = []
    for j, (i, s) in enumerate(zip(idx, targets)):
        w = 0.0 if seg[i] < 1e-15 else (s - cum[i]) / seg[i]
        out_t[j] = (1.0 - w) * translations[i] + w * translations[i + 1]
        rel = so3_log(rotations[i].T @ rotations[i + 1])
        out_r.append(rotations[i] @ so3_exp(w * rel))
    return out_t, out_r


def compute_ape(executed: list[Pose], reference: list[Pose],
                samples: int = 100) -> tuple[float, float]:
    """Mean pose discrepancy after arc-length resampling of both paths.

    Both trajectories are resampled to `samples` points by normalized
    translational arc length; returns (mean translation distance in cm,
    mean geodesic angle in degrees). This is the resampled-APE
    interpretation; reports label it "APE (resampled, M=100)".
    """
    if len(executed) < 2 or len(reference) < 2:
        raise ValueError("both trajectories need at least 2 poses")
    exec_t = np.array([p.translation for p in executed])
    ref_t = np.array([p.translation for p in reference])
    exec_len = np.linalg.norm(np.diff(exec_t, axis=0), axis=1).sum()
    ref_len = np.linalg.norm(np.diff(ref_t, axis=0), axis=1).sum()
    if exec_len < 1e-12 and ref_len > 1e-12:
        raise DegenerateTrajectory("executed path has zero length")
    et, er = _resample_by_arclength(exec_t, [p.rotation for p in executed], samples)
    rt, rr = _resample_by_arclength(ref_t, [p.rotation for p in reference], samples)
    trans = float(np.linalg.norm(et - rt, axis=1).mean())
    angles = []
    for a, b in zip(er, rr):
        cos_theta = max(-1.0, min(1.0, (float(np.trace(b.T @ a)) - 1.0) / 2.0))
        angles.append(math.acos(cos_theta))
    return trans * 100.0, math.degrees(float(np.mean(angles)))


def compute_length_ratio(executed: list[Pose], initial: Pose, desired: Pose) -> float:
    """Executed translational path length over the straight-line distance."""
    baseline = float(np.linalg.norm(initial.translation - desired.translation))
    if baseline <= 1e-6:
        raise DegenerateBaseline("initial and desired positions coincide")
    t = np.array([p.translation for p in executed])
    path = float(np.linalg.norm(np.diff(t, axis=0), axis=1).sum())
    return path / baseline


def run_trial(scene: SceneConfig, provider: ProviderConfig, matcher: MatcherConfig,
              controller_cfg: ControllerConfig, perturbation: PerturbationConfig,
              trial_id: int, seed: int, initial_pose: Pose,
              mask: np.ndarray | None = None, mask_both: bool = False,
              client=None) -> TrialRecord:
    """Run one complete servo trial; deterministic given (seed, trial_id)."""
    ss = np.random.SeedSequence([seed, trial_id])
    sel_seed, perturb_seed, comp_seed = [int(c.generate_state(1)[0])
                                         for c in ss.spawn(3)]
    selection_rng = np.random.Generator(np.random.PCG64(sel_seed))

    desired = desired_pose(scene.sampler)
    desired_view = render(scene.target, scene.intrinsics, desired,
                          background=scene.background)
    controller = ServoController(desired_view.rgb, scene.intrinsics, provider,
                                 matcher, controller_cfg, selection_rng,
                                 mask=mask, mask_both=mask_both, client=client)

    def perturbed(rgb: np.ndarray, iteration: int) -> np.ndarray:
        if not perturbation.enabled:
            return rgb
        if perturbation.per_iteration:
            stream = np.random.Generator(
                np.random.PCG64(np.random.SeedSequence([perturb_seed, iteration])))
        else:
            stream = np.random.Generator(np.random.PCG64(perturb_seed))
        return perturb(rgb, perturbation, stream)

    pose = initial_pose
    init_trans, init_rot = pose_error(pose, desired)

    compensation_deg: int | None = None
    if controller_cfg.rotation_compensation:
        view = render(scene.target, scene.intrinsics, pose, background=scene.background)
        try:
            theta, _ = compensate_rotation(
                desired_view.rgb, perturbed(view.rgb, 0), provider, matcher,
                seed=comp_seed, mask=mask, client=client)
        except (InsufficientMatches, NoEligibleCells):
            theta = 0
        compensation_deg = theta
        if theta != 0:
            pose = apply_roll(pose, math.radians(theta))

    n_max = controller_cfg.max_iterations
    translations = np.zeros((n_max + 1, 3))
    quaternions = np.zeros((n_max + 1, 4))
    raw_twists = np.zeros((n_max + 1, 6))
    smoothed_twists = np.zeros((n_max + 1, 6))
    error_norms = np.full(n_max + 1, np.nan)
    mean_cosines = np.full(n_max + 1, np.nan)
    k_used = np.zeros(n_max + 1, dtype=np.int64)
    translations[0] = initial_pose.translation
    quaternions[0] = initial_pose.quaternion()

    settle = 0
    streak = 0
    aborted = False
    n_done = 0
    for it in range(1, n_max + 1):
        view = render(scene.target, scene.intrinsics, pose, background=scene.background)
        rgb = perturbed(view.rgb, it)
        try:
            twist, diag = controller.step(rgb, view.depth)
            streak = 0
            raw_twists[it] = diag.raw_twist.as_vector()
            error_norms[it] = diag.error_norm
            mean_cosines[it] = diag.mean_cosine
            k_used[it] = diag.k_used
        except (InsufficientMatches, NoEligibleCells):
            streak += 1
            twist = Twist.zero()
        smoothed_twists[it] = twist.as_vector()
        pose = integrate_twist(pose, twist, controller_cfg.dt)
        translations[it] = pose.translation
        quaternions[it] = pose.quaternion()
        n_done = it
        if streak > MAX_INSUFFICIENT_STREAK:
            aborted = True
            break
        lin = float(np.linalg.norm(twist.linear))
        ang = float(np.linalg.norm(twist.angular))
        if lin < controller_cfg.linear_threshold and ang < controller_cfg.angular_threshold:
            settle += 1
            if settle >= controller_cfg.settle_iterations:
                break
        else:
            settle = 0

    final_trans, final_rot = pose_error(pose, desired)
    velocity_settled = settle >= controller_cfg.settle_iterations and not aborted
    error_reduced = (final_trans <= 0.1 * init_trans + 1e-12
                     and final_rot <= 0.1 * init_rot + 1e-12)
    converged = velocity_settled and error_reduced

    n = n_done
    executed = [initial_pose] + [
        Pose.from_quaternion(quaternions[i], translations[i]) for i in range(1, n + 1)]
    reference = pbvs_reference(initial_pose, desired, steps=max(2, len(executed)))
    try:
        ape_trans_cm, ape_rot_deg = compute_ape(executed, reference)
    except (DegenerateTrajectory, ValueError):
        ape_trans_cm, ape_rot_deg = math.nan, math.nan
    try:
        length_ratio = compute_length_ratio(executed, initial_pose, desired)
    except DegenerateBaseline:
        length_ratio = math.nan

    return TrialRecord(
        trial_id=trial_id, seed=seed,
        initial_pose=initial_pose, desired_pose=desired, final_pose=pose,
        converged=converged, velocity_settled=velocity_settled,
        error_reduced=error_reduced, iterations=n,
        compensation_deg=compensation_deg, aborted_insufficient=aborted,
        init_trans_err=init_trans, init_rot_err=init_rot,
        final_trans_err=final_trans, final_rot_err=final_rot,
        ape_trans_cm=ape_trans_cm, ape_rot_deg=ape_rot_deg,
        length_ratio=length_ratio,
        translations=translations[:n + 1].copy(),
        quaternions=quaternions[:n + 1].copy(),
        raw_twists=raw_twists[:n + 1].copy(),
        smoothed_twists=smoothed_twists[:n + 1].copy(),
        error_norms=error_norms[:n + 1].copy(),
        mean_cosines=mean_cosines[:n + 1].copy(),
        k_used=k_used[:n + 1].copy(),
    )


def _mean_std(values: list[float]) -> tuple[float, float]:
    arr = np.asarray([v for v in values if math.isfinite(v)])
    if arr.size == 0:
        return math.nan, math.nan
    return float(arr.mean()), float(arr.std())


@dataclass
class BenchmarkReport:
    """Aggregate metrics over one benchmark run (paper-style units)."""

    n_trials: int
    seed: int
    convergence_rate_pct: float
    velocity_settled_pct: float
    error_reduced_pct: float
    end_error_trans_mm: tuple[float, float]   # mean, std over converged
    end_error_rot_deg: tuple[float, float]
    ape_trans_cm: tuple[float, float]
    ape_rot_deg: tuple[float, float]
    length_ratio: tuple[float, float]
    mean_iterations: float
    config_snapshot: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "n_trials": self.n_trials,
            "seed": self.seed,
            "convergence_rate_pct": self.convergence_rate_pct,
            "velocity_settled_pct": self.velocity_settled_pct,
            "error_reduced_pct": self.error_reduced_pct,
            "end_error_trans_mm": {"mean": self.end_error_trans_mm[0],
                                   "std": self.end_error_trans_mm[1]},
            "end_error_rot_deg": {"mean": self.end_error_rot_deg[0],
                                  "std": self.end_error_rot_deg[1]},
            "ape_trans_cm": {"mean": self.ape_trans_cm[0], "std": self.ape_trans_cm[1]},
            "ape_rot_deg": {"mean": self.ape_rot_deg[0], "std": self.ape_rot_deg[1]},
            "ape_definition": "resampled, M=100",
            "length_ratio": {"mean": self.length_ratio[0], "std": self.length_ratio[1]},
            "mean_iterations": self.mean_iterations,
            "config": self.config_snapshot,
        }


def aggregate(records: list[TrialRecord], seed: int,
              config_snapshot: dict | None = None) -> BenchmarkReport:
    """Fold trial records into the Table-1-style report.

    End error, APE, and length ratio are aggregated over converged trials
    only, matching the reporting convention of the comparison table.
    """
    n = len(records)
    conv = [r for r in records if r.converged]
    rate = 100.0 * len(conv) / n if n else math.nan
    return BenchmarkReport(
        n_trials=n,
        seed=seed,
        convergence_rate_pct=rate,
        velocity_settled_pct=100.0 * sum(r.velocity_settled for r in records) / n if n else math.nan,
        error_reduced_pct=100.0 * sum(r.error_reduced for r in records) / n if n else math.nan,
        end_error_trans_mm=_mean_std([r.final_trans_err * 1000.0 for r in conv]),
        end_error_rot_deg=_mean_std([r.final_rot_err for r in conv]),
        ape_trans_cm=_mean_std([r.ape_trans_cm for r in conv]),
        ape_rot_deg=_mean_std([r.ape_rot_deg for r in conv]),
        length_ratio=_mean_std([r.length_ratio for r in conv]),
        mean_iterations=float(np.mean([r.iterations for r in records])) if n else math.nan,
        config_snapshot=config_snapshot or {},
    )


TRIAL_CSV_FIELDS = [
    "trial_id", "converged", "velocity_settled", "error_reduced", "iterations",
    "compensation_rad", "init_trans_err_m", "init_rot_err_rad",
    "final_trans_err_m", "final_rot_err_rad", "ape_trans_m", "ape_rot_rad",
    "length_ratio",
]


def write_trials_csv(records: list[TrialRecord], path: Path) -> None:
    """Per-trial summary in SI base units (meters, radians)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRIAL_CSV_FIELDS)
        for r in records:
            comp = math.nan if r.compensation_deg is None else math.radians(r.compensation_deg)
            writer.writerow([
                r.trial_id, int(r.converged), int(r.velocity_settled),
                int(r.error_reduced), r.iterations,
                repr(float(comp)),
                repr(float(r.init_trans_err)), repr(math.radians(r.init_rot_err)),
                repr(float(r.final_trans_err)), repr(math.radians(r.final_rot_err)),
                repr(float(r.ape_trans_cm) / 100.0),
                repr(math.radians(r.ape_rot_deg)),
                repr(float(r.length_ratio)),
            ])


def write_trajectory_csv(record: TrialRecord, path: Path) -> None:
    """Per-iteration pose and velocity log for one trial (SI units)."""
    header = (["iteration", "tx", "ty", "tz", "qw", "qx", "qy", "qz"]
              + [f"raw_{a}" for a in ("vx", "vy", "vz", "wx", "wy", "wz")]
              + [f"cmd_{a}" for a in ("vx", "vy", "vz", "wx", "wy", "wz")]
              + ["error_norm", "mean_cosine", "k_used"])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(record.translations.shape[0]):
            row = ([i] + [repr(float(v)) for v in record.translations[i]]
                   + [repr(float(v)) for v in record.quaternions[i]]
                   + [repr(float(v)) for v in record.raw_twists[i]]
                   + [repr(float(v)) for v in record.smoothed_twists[i]]
                   + [repr(float(record.error_norms[i])),
                      repr(float(record.mean_cosines[i])),
                      int(record.k_used[i])])
            writer.writerow(row)


_WORKER: dict = {}


def _worker_init(payload: dict) -> None:
    _WORKER.update(payload)


def _worker_run(args: tuple) -> TrialRecord:
    trial_id, rotation, translation = args
    pose = Pose(np.asarray(rotation), np.asarray(translation))
    return run_trial(_WORKER["scene"], _WORKER["provider"], _WORKER["matcher"],
                     _WORKER["controller"], _WORKER["perturbation"],
                     trial_id, _WORKER["seed"], pose,
                     mask=_WORKER["mask"], mask_both=_WORKER["mask_both"])


def run_trials(scene: SceneConfig, provider: ProviderConfig, matcher: MatcherConfig,
               controller_cfg: ControllerConfig, perturbation: PerturbationConfig,
               n_trials: int, seed: int, workers: int = 1,
               mask: np.ndarray | None = None, mask_both: bool = False,
               client=None) -> list[TrialRecord]:
    """Sample initial poses and run all trials, optionally in parallel.

    Results are keyed by trial id, so the output is identical at any
    parallelism degree.
    """
    sampler = replace(scene.sampler, seed=seed)
    poses = sample_initial_poses(sampler, n_trials)
    scene = replace(scene, sampler=sampler)
    if workers <= 1:
        return [run_trial(scene, provider, matcher, controller_cfg, perturbation,
                          i, seed, poses[i], mask=mask, mask_both=mask_both,
                          client=client)
                for i in range(n_trials)]
    payload = {"scene": scene, "provider": provider, "matcher": matcher,
               "controller": controller_cfg, "perturbation": perturbation,
               "seed": seed, "mask": mask, "mask_both": mask_both}
    tasks = [(i, poses[i].rotation, poses[i].translation) for i in range(n_trials)]
    ctx = multiprocessing.get_context("spawn")
    with ctx.Pool(processes=workers, initializer=_worker_init,
                  initargs=(payload,)) as pool:
        records = pool.map(_worker_run, tasks)
    return sorted(records, key=lambda r: r.trial_id)


def run_benchmark(cfg, out_dir: str | Path,
                  client=None) -> tuple[BenchmarkReport, list[TrialRecord]]:
    """Run a configured benchmark and write its artifacts.

    Writes report.json, trials.csv, per-trial trajectory CSVs, and (unless
    disabled) SVG figures under out_dir. `cfg` is a BenchmarkConfig from
    the config module.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = run_trials(cfg.scene, cfg.provider, cfg.matcher, cfg.controller,
                         cfg.perturbation, cfg.trials, cfg.seed, cfg.workers,
                         mask=cfg.mask, mask_both=cfg.mask_both, client=client)
    report = aggregate(records, cfg.seed, cfg.snapshot)

    with open(out / "report.json", "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_trials_csv(records, out / "trials.csv")
    traj_dir = out / "trajectories"
    traj_dir.mkdir(exist_ok=True)
    for record in records:
        write_trajectory_csv(record, traj_dir / f"trial_{record.trial_id:04d}.csv")

    if cfg.plots:
        from . import plots

        fig_dir = out / "figures"
        fig_dir.mkdir(exist_ok=True)
        plots.save_trajectory_plot(records, records[0].desired_pose,
                                   fig_dir / "trajectories.svg")
        plots.save_trial_detail_plot(records[0], cfg.controller.dt,
                                     fig_dir / "trial_detail.svg")
    return report, records


SWEEP_CSV_FIELDS = ["alpha", "convergence_rate_pct", "length_ratio_mean",
                    "length_ratio_std", "end_error_trans_mm_mean",
                    "end_error_trans_mm_std", "end_error_rot_deg_mean",
                    "end_error_rot_deg_std"]


def alpha_sweep(cfg, alphas: list[float], out_dir: str | Path) -> list[dict]:
    """Re-run the benchmark for each smoothing alpha with matched seeds.

    Every alpha sees the same initial poses and per-trial streams, so
    differences are attributable to the velocity filter alone. Writes
    sweep.csv, per-alpha reports, and the sweep figure.
    """
    from dataclasses import replace as dc_replace

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows: list[dict] = []
    for alpha in alphas:
        sub_dir = out / f"alpha_{alpha:g}"
        sub_cfg = dc_replace(cfg, controller=dc_replace(cfg.controller, alpha=alpha),
                             plots=False)
        report, _ = run_benchmark(sub_cfg, sub_dir)
        rows.append({
            "alpha": alpha,
            "convergence_rate_pct": report.convergence_rate_pct,
            "length_ratio_mean": report.length_ratio[0],
            "length_ratio_std": report.length_ratio[1],
            "end_error_trans_mm_mean": report.end_error_trans_mm[0],
            "end_error_trans_mm_std": report.end_error_trans_mm[1],
            "end_error_rot_deg_mean": report.end_error_rot_deg[0],
            "end_error_rot_deg_std": report.end_error_rot_deg[1],
        })

    with open(out / "sweep.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SWEEP_CSV_FIELDS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(float(v)) if isinstance(v, float) else v
                             for k, v in row.items()})

    if cfg.plots:
        from . import plots

        plots.save_alpha_sweep_plot(rows, out / "alpha_sweep.svg")
    return rows
