"""YAML benchmark configuration: schema, defaults, and loading.

One file describes a full benchmark: scene and camera, descriptor
provider, matcher, controller, perturbation, sampler, and run settings.
The loaded raw mapping is kept as a snapshot for report provenance.
See README.md for the documented schema.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import cv2
import math
import numpy as np
import yaml

from .bench import SceneConfig
from .control import ControllerConfig, MatcherConfig
from .descriptors import ProviderConfig
from .errors import ConfigError
from .geometry import CameraIntrinsics
from .perturb import PerturbationConfig
from .simenv import DEFAULT_BACKGROUND, PlanarTarget, PoseSampleConfig, make_poster_texture


@dataclass
class BenchmarkConfig:
    """Fully-resolved benchmark settings plus the raw YAML snapshot."""

    seed: int
    trials: int
    workers: int
    plots: bool
    scene: SceneConfig
    provider: ProviderConfig
    matcher: MatcherConfig
    controller: ControllerConfig
    perturbation: PerturbationConfig
    mask: np.ndarray | None
    mask_both: bool
    snapshot: dict


def _section(raw: dict, name: str) -> dict:
    value = raw.get(name, {})
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError(f"section '{name}' must be a mapping")
    return dict(value)


def _load_texture(spec, base: Path) -> np.ndarray:
    if isinstance(spec, str):
        path = (base / spec).resolve() if not Path(spec).is_absolute() else Path(spec)
        img = cv2.imread(str(path), cv2.IMREAD_COLOR)
        if img is None:
            raise ConfigError(f"cannot read texture image '{path}'")
        return np.ascontiguousarray(img[..., ::-1])  # BGR -> RGB
    if isinstance(spec, dict):
        return make_poster_texture(int(spec.get("seed", 0)),
                                   int(spec.get("width", 480)),
                                   int(spec.get("height", 640)))
    raise ConfigError("scene.texture must be a file path or a {seed,width,height} mapping")


def _load_mask(path_value, base: Path) -> np.ndarray:
    path = (base / path_value).resolve() if not Path(path_value).is_absolute() \
        else Path(path_value)
    img = cv2.imread(str(path), cv2.IMREAD_GRAYSCALE)
    if img is None:
        raise ConfigError(f"cannot read mask image '{path}'")
    return img > 127


def load_benchmark_config(path: str | Path) -> BenchmarkConfig:
    """Parse and validate a YAML benchmark configuration file."""
    path = Path(path)
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{path}:{mark.line + 1}:{mark.column + 1}" if mark else str(path)
        raise ConfigError(f"{where}: invalid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return build_benchmark_config(raw, base=path.parent)


def build_benchmark_config(raw: dict, base: Path | None = None) -> BenchmarkConfig:
    """Turn a raw mapping (parsed YAML) into resolved config objects."""
    base = base or Path.cwd()
    try:
        scene_raw = _section(raw, "scene")
        target = PlanarTarget(
            texture=_load_texture(scene_raw.get("texture", {"seed": 0}), base),
            width_m=float(scene_raw.get("width_m", 0.6)),
            height_m=float(scene_raw.get("height_m", 0.8)),
        )
        background = tuple(int(c) for c in scene_raw.get("background", DEFAULT_BACKGROUND))

        intr_raw = _section(raw, "intrinsics")
        intrinsics = CameraIntrinsics(
            fx=float(intr_raw.get("fx", 605.0)),
            fy=float(intr_raw.get("fy", 605.0)),
            cx=float(intr_raw.get("cx", 319.5)),
            cy=float(intr_raw.get("cy", 239.5)),
            width=int(intr_raw.get("width", 640)),
            height=int(intr_raw.get("height", 480)),
        )

        samp_raw = _section(raw, "sampler")
        sampler = PoseSampleConfig(
            cuboid=tuple(float(v) for v in samp_raw.get("cuboid", (1.2, 1.2, 0.3))),
            lookat_radii=tuple(float(v) for v in
                               samp_raw.get("lookat_radii", (0.08, 0.16, 0.24, 0.32))),
            roll_limit=math.radians(float(samp_raw.get("roll_deg", 120.0))),
            elevation=float(samp_raw.get("elevation", 0.6)),
            seed=int(raw.get("seed", 0)),
        )

        prov_raw = _section(raw, "provider")
        provider = ProviderConfig(
            kind=str(prov_raw.get("kind", "photometric")),
            input_resolution=int(prov_raw.get("input_resolution", 308)),
            binning=int(prov_raw.get("binning", 1)),
            smoothing=float(prov_raw.get("smoothing", 7.0)),
            degenerate_norm=float(prov_raw.get("degenerate_norm", 8.0)),
            layer=int(prov_raw.get("layer", 11)),
            bridge_host=str(prov_raw.get("bridge_host", "127.0.0.1")),
            bridge_port=int(prov_raw.get("bridge_port", 5917)),
        )
        mask = None
        if prov_raw.get("mask"):
            mask = _load_mask(prov_raw["mask"], base)
        mask_both = bool(prov_raw.get("mask_both", False))

        match_raw = _section(raw, "matcher")
        top_pool_raw = match_raw.get("top_pool", 48)
        matcher = MatcherConfig(
            k=int(match_raw.get("k", 24)),
            threshold=float(match_raw.get("threshold", 1.0)),
            top_pool=None if top_pool_raw in (None, "none") else int(top_pool_raw),
            resample_each_iteration=bool(match_raw.get("resample_each_iteration", True)),
        )

        ctrl_raw = _section(raw, "controller")
        max_lin = ctrl_raw.get("max_linear_velocity", 0.25)
        max_ang = ctrl_raw.get("max_angular_velocity", 0.8)
        controller = ControllerConfig(
            gain=float(ctrl_raw.get("gain", 0.5)),
            alpha=float(ctrl_raw.get("alpha", 0.8)),
            dt=float(ctrl_raw.get("dt", 0.05)),
            linear_threshold=float(ctrl_raw.get("linear_threshold", 1e-4)),
            angular_threshold=float(ctrl_raw.get("angular_threshold", 1e-3)),
            settle_iterations=int(ctrl_raw.get("settle_iterations", 10)),
            max_iterations=int(ctrl_raw.get("max_iterations", 1500)),
            rotation_compensation=bool(ctrl_raw.get("rotation_compensation", True)),
            max_linear_velocity=None if max_lin in (None, "none") else float(max_lin),
            max_angular_velocity=None if max_ang in (None, "none") else float(max_ang),
        )

        pert_raw = _section(raw, "perturbation")
        perturbation = PerturbationConfig(
            brightness=float(pert_raw.get("brightness", 0.6)),
            contrast=float(pert_raw.get("contrast", 0.4)),
            erase_prob=float(pert_raw.get("erase_prob", 0.5)),
            erase_scale=tuple(float(v) for v in pert_raw.get("erase_scale", (0.02, 0.33))),
            erase_ratio=tuple(float(v) for v in pert_raw.get("erase_ratio", (0.3, 3.3))),
            noise_sigma=float(pert_raw.get("noise_sigma", 0.05)),
            enabled=bool(pert_raw.get("enabled", False)),
            per_iteration=bool(pert_raw.get("per_iteration", True)),
            blur_sigma_px=(float(pert_raw["blur_sigma_px"])
                           if pert_raw.get("blur_sigma_px") else None),
        )

        return BenchmarkConfig(
            seed=int(raw.get("seed", 0)),
            trials=int(raw.get("trials", 50)),
            workers=int(raw.get("workers", 1)),
            plots=bool(raw.get("plots", True)),
            scene=SceneConfig(target=target, intrinsics=intrinsics,
                              sampler=sampler, background=background),
            provider=provider,
            matcher=matcher,
            controller=controller,
            perturbation=perturbation,
            mask=mask,
            mask_both=mask_both,
            snapshot=raw,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad benchmark config: {exc}") from exc
