"""Planar-target camera simulator and benchmark pose sampling.

The target is a textured rectangle in the z=0 plane of the world frame,
centered on the origin. Rendering casts one ray per pixel and samples
the texture bilinearly; depth is exact per pixel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import cv2
import numpy as np

from .errors import CameraInPlane
from .geometry import CameraIntrinsics, Pose, look_at

DEFAULT_BACKGROUND = (128, 128, 128)


@dataclass(frozen=True)
class PlanarTarget:
    """Textured rectangle of physical size width_m x height_m at z=0."""

    texture: np.ndarray  # (H, W, 3) uint8
    width_m: float
    height_m: float

    def __post_init__(self):
        if self.width_m <= 0 or self.height_m <= 0:
            raise ValueError("target extents must be positive")
        tex = np.ascontiguousarray(self.texture, dtype=np.uint8)
        if tex.ndim != 3 or tex.shape[2] != 3 or tex.size == 0:
            raise ValueError("texture must be a non-empty (H, W, 3) raster")
        tex.flags.writeable = False
        object.__setattr__(self, "texture", tex)


@dataclass(frozen=True)
class RenderedView:
    """One simulated camera frame: RGB, per-pixel depth, validity mask."""

    rgb: np.ndarray         # (H, W, 3) uint8
    depth: np.ndarray       # (H, W) float64, inf where invalid
    valid_mask: np.ndarray  # (H, W) bool


@dataclass(frozen=True)
class PoseSampleConfig:
    """Distribution of initial camera poses around the desired pose.

    Positions are uniform in a cuboid centered on the desired camera
    position; orientations look at a point drawn from concentric circles
    on the target plane, with an extra roll about the focal axis.
    """

    cuboid: tuple[float, float, float] = (1.2, 1.2, 0.3)
    lookat_radii: tuple[float, ...] = (0.08, 0.16, 0.24, 0.32)
    roll_limit: float = math.radians(120.0)
    elevation: float = 0.6
    seed: int = 0

    def __post_init__(self):
        if any(e <= 0 for e in self.cuboid):
            raise ValueError("cuboid extents must be positive")
        if self.roll_limit < 0:
            raise ValueError("roll limit must be non-negative")


def desired_pose(cfg: PoseSampleConfig) -> Pose:
    """Fronto-parallel pose at the configured elevation over the target center."""
    return look_at(np.array([0.0, 0.0, cfg.elevation]), np.zeros(3), roll=0.0)


def sample_initial_poses(cfg: PoseSampleConfig, n: int) -> list[Pose]:
    """Draw n initial poses; deterministic for a given config seed."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    center = np.array([0.0, 0.0, cfg.elevation])
    half = np.asarray(cfg.cuboid) / 2.0
    poses = []
    for _ in range(n):
        eye = center + rng.uniform(-half, half)
        radius = cfg.lookat_radii[rng.integers(len(cfg.lookat_radii))]
        angle = rng.uniform(0.0, 2.0 * math.pi)
        target = np.array([radius * math.cos(angle), radius * math.sin(angle), 0.0])
        roll = rng.uniform(-cfg.roll_limit, cfg.roll_limit)
        poses.append(look_at(eye, target, roll))
    return poses


def _pixel_rays(intrinsics: CameraIntrinsics) -> np.ndarray:
    """Camera-frame ray directions per pixel center, z-component 1. (H, W, 3)."""
    u = (np.arange(intrinsics.width) - intrinsics.cx) / intrinsics.fx
    v = (np.arange(intrinsics.height) - intrinsics.cy) / intrinsics.fy
    xx, yy = np.meshgrid(u, v)
    return np.stack([xx, yy, np.ones_like(xx)], axis=-1)


_RAY_CACHE: dict[tuple, np.ndarray] = {}


def _cached_rays(intrinsics: CameraIntrinsics) -> np.ndarray:
    key = (intrinsics.fx, intrinsics.fy, intrinsics.cx, intrinsics.cy,
           intrinsics.width, intrinsics.height)
    rays = _RAY_CACHE.get(key)
    if rays is None:
        rays = _pixel_rays(intrinsics)
        _RAY_CACHE[key] = rays
        if len(_RAY_CACHE) > 8:
            _RAY_CACHE.pop(next(iter(_RAY_CACHE)))
    return rays


def _bilinear_sample(texture: np.ndarray, px: np.ndarray, py: np.ndarray) -> np.ndarray:
    """Bilinear texture lookup at fractional pixel coordinates (1D arrays)."""
    h, w = texture.shape[:2]
    x0 = np.floor(px).astype(np.intp)
    y0 = np.floor(py).astype(np.intp)
    fx = (px - x0)[:, None]
    fy = (py - y0)[:, None]
    x0 = np.clip(x0, 0, w - 1)
    y0 = np.clip(y0, 0, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    c00 = texture[y0, x0].astype(np.float64)
    c10 = texture[y0, x1].astype(np.float64)
    c01 = texture[y1, x0].astype(np.float64)
    c11 = texture[y1, x1].astype(np.float64)
    top = c00 * (1.0 - fx) + c10 * fx
    bot = c01 * (1.0 - fx) + c11 * fx
    return top * (1.0 - fy) + bot * fy


def render(target: PlanarTarget, intrinsics: CameraIntrinsics, pose: Pose,
           background: tuple[int, int, int] = DEFAULT_BACKGROUND) -> RenderedView:
    """Render the planar target from a camera pose.

    Each pixel ray is intersected with the target plane; hits inside the
    physical extents sample the texture bilinearly and record the exact
    camera-frame depth. Misses get the background fill and infinite depth.
    """
    origin = pose.translation
    principal = pose.rotation[:, 2]
    if abs(principal[2]) < 1e-12 and abs(origin[2]) < 1e-12:
        raise CameraInPlane("camera lies in the target plane looking along it")

    rays_cam = _cached_rays(intrinsics)
    rays_world = rays_cam @ pose.rotation.T
    denom = rays_world[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        t_hit = -origin[2] / denom
    hit = np.isfinite(t_hit) & (t_hit > 1e-9)

    px_world = origin[0] + t_hit * rays_world[..., 0]
    py_world = origin[1] + t_hit * rays_world[..., 1]
    half_w, half_h = target.width_m / 2.0, target.height_m / 2.0
    inside = hit & (np.abs(px_world) <= half_w) & (np.abs(py_world) <= half_h)

    tex_h, tex_w = target.texture.shape[:2]
    rgb = np.empty((intrinsics.height, intrinsics.width, 3), dtype=np.uint8)
    rgb[:] = np.asarray(background, dtype=np.uint8)
    if inside.any():
        tx = (px_world[inside] + half_w) / target.width_m * (tex_w - 1)
        ty = (py_world[inside] + half_h) / target.height_m * (tex_h - 1)
        samples = _bilinear_sample(target.texture, tx, ty)
        rgb[inside] = np.clip(np.rint(samples), 0, 255).astype(np.uint8)

    depth = np.where(inside, t_hit, np.inf)
    return RenderedView(rgb=rgb, depth=depth, valid_mask=inside)


def make_poster_texture(seed: int, width: int = 540, height: int = 720) -> np.ndarray:
    """Generate a poster-like texture (uint8 RGB) with no binary asset.

    Global color ramps make regions unique at large scale (so wrong
    matches stay local) while dense mid-size circles provide local
    contrast at roughly the descriptor patch scale.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    xx /= width
    yy /= height
    img = np.empty((height, width, 3), dtype=np.float64)
    for c in range(3):
        a, b = rng.uniform(-1.0, 1.0, 2)
        cx0, cy0 = rng.uniform(0.2, 0.8, 2)
        img[..., c] = (128.0 + 90.0 * (a * (xx - 0.5) + b * (yy - 0.5))
                       + rng.uniform(-80.0, 80.0) * np.hypot(xx - cx0, yy - cy0))
    n_shapes = max(60, (width * height) // 1600)
    for _ in range(n_shapes):
        base = img[int(rng.integers(0, height)), int(rng.integers(0, width))]
        color = np.clip(rng.uniform(-1.0, 1.0, 3) * 70.0 + base, 0, 255)
        x = int(rng.integers(0, width))
        y = int(rng.integers(0, height))
        cv2.circle(img, (x, y), int(rng.integers(12, 50)), color, -1)
    img = cv2.GaussianBlur(img, (0, 0), sigmaX=1.0)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)
