"""Command-line entry point: `servo run | bench | sweep-alpha | match`."""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import cv2
import numpy as np

from . import bench as bench_mod
from .config import load_benchmark_config
from .control import MatcherConfig
from .descriptors import ProviderConfig, bin_features, extract, grid_pixel_map
from .errors import ServoError
from .matching import cyclical_distance_map, select_correspondences
from .simenv import sample_initial_poses


def _cmd_run(args) -> int:
    cfg = load_benchmark_config(args.config)
    from dataclasses import replace
    sampler = replace(cfg.scene.sampler, seed=cfg.seed)
    poses = sample_initial_poses(sampler, max(cfg.trials, args.trial + 1))
    record = bench_mod.run_trial(
        bench_mod.SceneConfig(cfg.scene.target, cfg.scene.intrinsics, sampler,
                              cfg.scene.background),
        cfg.provider, cfg.matcher, cfg.controller, cfg.perturbation,
        args.trial, cfg.seed, poses[args.trial],
        mask=cfg.mask, mask_both=cfg.mask_both)

    dt = cfg.controller.dt
    print(f"trial {record.trial_id}: initial error "
          f"{record.init_trans_err * 100:.2f} cm / {record.init_rot_err:.2f} deg")
    if record.compensation_deg is not None:
        print(f"rotation compensation: {record.compensation_deg} deg")
    for i in range(1, record.translations.shape[0]):
        lin = np.linalg.norm(record.smoothed_twists[i, :3])
        ang = np.linalg.norm(record.smoothed_twists[i, 3:])
        print(f"  it {i:4d}  t={i * dt:7.2f}s  |v|={lin:.5f} m/s  |w|={ang:.5f} rad/s"
              f"  err={record.error_norms[i]:.5f}  k={record.k_used[i]}")
    print(f"result: converged={record.converged} "
          f"(settled={record.velocity_settled}, reduced={record.error_reduced}) "
          f"after {record.iterations} iterations")
    print(f"final error {record.final_trans_err * 1000:.2f} mm / "
          f"{record.final_rot_err:.3f} deg; length ratio {record.length_ratio:.3f}; "
          f"APE {record.ape_trans_cm:.2f} cm / {record.ape_rot_deg:.2f} deg")

    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        bench_mod.write_trajectory_csv(record, out / f"trial_{record.trial_id:04d}.csv")
        if cfg.plots:
            from . import plots
            plots.save_trial_detail_plot(record, dt,
                                         out / f"trial_{record.trial_id:04d}.svg")
    return 0


def _cmd_bench(args) -> int:
    cfg = load_benchmark_config(args.config)
    from dataclasses import replace
    if args.trials is not None:
        cfg = replace(cfg, trials=args.trials)
    if args.workers is not None:
        cfg = replace(cfg, workers=args.workers)
    if args.no_plots:
        cfg = replace(cfg, plots=False)
    report, _ = bench_mod.run_benchmark(cfg, args.out)
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True,
                     default=lambda o: None))
    return 0


def _cmd_sweep(args) -> int:
    cfg = load_benchmark_config(args.config)
    from dataclasses import replace
    if args.trials is not None:
        cfg = replace(cfg, trials=args.trials)
    alphas = [float(a) for a in args.alphas.split(",") if a.strip()]
    if not alphas:
        raise ServoError("no alpha values given")
    rows = bench_mod.alpha_sweep(cfg, alphas, args.out)
    for row in rows:
        print(f"alpha={row['alpha']:.2f}  converged={row['convergence_rate_pct']:.1f}%  "
              f"length ratio={row['length_ratio_mean']:.3f}"
              f"+-{row['length_ratio_std']:.3f}  "
              f"end error={row['end_error_trans_mm_mean']:.2f} mm")
    return 0


def _load_rgb(path: str) -> np.ndarray:
    img = cv2.imread(path, cv2.IMREAD_COLOR)
    if img is None:
        raise ServoError(f"cannot read image '{path}'")
    return np.ascontiguousarray(img[..., ::-1])


def _cmd_match(args) -> int:
    desired = _load_rgb(args.desired)
    current = _load_rgb(args.current)
    provider = ProviderConfig(kind=args.provider, input_resolution=args.resolution,
                              binning=args.binning,
                              bridge_host=args.bridge_host, bridge_port=args.bridge_port)
    matcher = MatcherConfig(k=args.k, threshold=args.threshold)
    grid_d = bin_features(extract(provider, desired), provider.binning)
    grid_c = bin_features(extract(provider, current), provider.binning)
    result = cyclical_distance_map(grid_d, grid_c)
    sel = select_correspondences(result, matcher.k, matcher.threshold, args.seed)

    px_d = grid_pixel_map(grid_d, (desired.shape[1], desired.shape[0]))
    px_c = grid_pixel_map(grid_c, (current.shape[1], current.shape[0]))
    pairs = []
    pairs_px = []
    for p in sel.pairs:
        d_px = px_d[p.desired_cell]
        c_px = px_c[p.current_cell]
        pairs.append({
            "desired_cell": list(p.desired_cell),
            "current_cell": list(p.current_cell),
            "desired_pixel": [float(d_px[0]), float(d_px[1])],
            "current_pixel": [float(c_px[0]), float(c_px[1])],
            "cosine": p.cosine,
            "cyclical_distance": p.cyclical_distance,
        })
        pairs_px.append(((d_px[0], d_px[1]), (c_px[0], c_px[1])))

    out_prefix = Path(args.out)
    out_prefix.parent.mkdir(parents=True, exist_ok=True)
    payload = {"k": matcher.k, "threshold": matcher.threshold, "seed": args.seed,
               "grid": [grid_d.height, grid_d.width], "pairs": pairs}
    with open(out_prefix.with_suffix(".json"), "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    from . import plots
    plots.save_match_image(desired, current, pairs_px, out_prefix.with_suffix(".png"))
    print(f"{len(pairs)} correspondences -> {out_prefix.with_suffix('.json')}, "
          f"{out_prefix.with_suffix('.png')}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="servo",
        description="Dense-feature visual servoing simulator and benchmark")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a single trial with a verbose log")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--trial", type=int, default=0)
    p_run.add_argument("--out", default=None, help="directory for trajectory/plots")
    p_run.set_defaults(func=_cmd_run)

    p_bench = sub.add_parser("bench", help="run the full benchmark")
    p_bench.add_argument("--config", required=True)
    p_bench.add_argument("--out", required=True)
    p_bench.add_argument("--trials", type=int, default=None)
    p_bench.add_argument("--workers", type=int, default=None)
    p_bench.add_argument("--no-plots", action="store_true")
    p_bench.set_defaults(func=_cmd_bench)

    p_sweep = sub.add_parser("sweep-alpha", help="benchmark across filter alphas")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--alphas", default="0.5,0.6,0.7,0.8,0.9")
    p_sweep.add_argument("--out", required=True)
    p_sweep.add_argument("--trials", type=int, default=None)
    p_sweep.set_defaults(func=_cmd_sweep)

    p_match = sub.add_parser("match", help="dump correspondences between two images")
    p_match.add_argument("--desired", required=True)
    p_match.add_argument("--current", required=True)
    p_match.add_argument("--out", default="matches")
    p_match.add_argument("--provider", default="photometric",
                         choices=["photometric", "bridge"])
    p_match.add_argument("--resolution", type=int, default=308)
    p_match.add_argument("--binning", type=int, default=1)
    p_match.add_argument("--k", type=int, default=24)
    p_match.add_argument("--threshold", type=float, default=1.0)
    p_match.add_argument("--seed", type=int, default=0)
    p_match.add_argument("--bridge-host", default="127.0.0.1")
    p_match.add_argument("--bridge-port", type=int, default=5917)
    p_match.set_defaults(func=_cmd_match)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ServoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
