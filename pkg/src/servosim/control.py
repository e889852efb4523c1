"""Servo control: feature-error velocity law, EMA stabilization, and the
pre-loop in-plane rotation compensation.

The velocity law is the classical image-based one: stack per-feature
2x6 interaction-matrix blocks built from normalized coordinates and
depth, then command v = -gain * pinv(L) @ e.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .descriptors import (DescriptorGrid, ProviderConfig, bin_features, extract,
                          grid_pixel_map)
from .errors import InsufficientMatches, NoEligibleCells, NonPositiveDepth
from .geometry import CameraIntrinsics, Pose, Twist, pixel_to_normalized, so3_exp, so3_log
from .matching import (CorrespondenceSet, cyclical_distance_map,
                       select_correspondences, MIN_CORRESPONDENCES)

log = logging.getLogger(__name__)

COMPENSATION_ANGLES = (0, 90, 180, -90)  # degrees, also the tie-break order


@dataclass(frozen=True)
class FeatureObservation:
    """One matched feature: current normalized coords + depth, desired coords."""

    x: float
    y: float
    Z: float
    desired_x: float
    desired_y: float

    def __post_init__(self):
        if not (self.Z > 0.0 and math.isfinite(self.Z)):
            raise NonPositiveDepth(f"feature depth {self.Z} must be positive and finite")


@dataclass(frozen=True)
class MatcherConfig:
    """Correspondence-selection settings used by the controller.

    `top_pool` caps eligibility to the highest-cosine candidates before
    the random draw (selection from the top-ranked matches); None draws
    from every cell passing the cyclical threshold.
    """

    k: int = 24
    threshold: float = 1.0
    top_pool: int | None = 48
    resample_each_iteration: bool = True


@dataclass(frozen=True)
class ControllerConfig:
    """Gains, filter, timing, and convergence rules for the servo loop.

    The velocity limits model actuation saturation: commands are scaled
    down (direction preserved) before the EMA filter, the way a robot
    driver would cap them. None disables a limit.
    """

    gain: float = 0.5               # 1/s
    alpha: float = 0.8              # EMA blend toward the new command
    dt: float = 0.05                # control period, seconds
    linear_threshold: float = 1e-4  # m/s, sustained-velocity convergence
    angular_threshold: float = 1e-3  # rad/s
    settle_iterations: int = 10
    max_iterations: int = 1500
    rotation_compensation: bool = True
    max_linear_velocity: float | None = 0.25    # m/s
    max_angular_velocity: float | None = 0.8    # rad/s

    def __post_init__(self):
        if self.gain <= 0:
            raise ValueError("gain must be positive")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")
        if self.dt <= 0:
            raise ValueError("dt must be positive")


def saturate_twist(twist: Twist, max_linear: float | None,
                   max_angular: float | None) -> Twist:
    """Scale each velocity part down to its limit, keeping direction."""
    lin, ang = twist.linear, twist.angular
    ln = float(np.linalg.norm(lin))
    if max_linear is not None and ln > max_linear:
        lin = lin * (max_linear / ln)
    an = float(np.linalg.norm(ang))
    if max_angular is not None and an > max_angular:
        ang = ang * (max_angular / an)
    return Twist(lin, ang)


def feature_error(observations: list[FeatureObservation]) -> np.ndarray:
    """Stacked (x - x*, y - y*) per observation; length 2n."""
    if not observations:
        raise ValueError("need at least one observation")
    err = np.empty(2 * len(observations))
    for i, ob in enumerate(observations):
        err[2 * i] = ob.x - ob.desired_x
        err[2 * i + 1] = ob.y - ob.desired_y
    return err


def interaction_matrix(observations: list[FeatureObservation]) -> np.ndarray:
    """Stacked 2x6 feature Jacobian blocks relating camera twist to
    normalized feature velocity."""
    L = np.empty((2 * len(observations), 6))
    for i, ob in enumerate(observations):
        x, y, z = ob.x, ob.y, ob.Z
        L[2 * i] = (-1.0 / z, 0.0, x / z, x * y, -(1.0 + x * x), y)
        L[2 * i + 1] = (0.0, -1.0 / z, y / z, 1.0 + y * y, -x * y, -x)
    return L


def velocity_command(error: np.ndarray, L: np.ndarray, gain: float) -> Twist:
    """v = -gain * pinv(L) @ e, with SVD truncation at 1e-8 of sigma_max.

    A rank-deficient L (fewer than 6 usable singular values) logs a
    warning; the truncated pseudoinverse still yields a command.
    """
    u, s, vt = np.linalg.svd(L, full_matrices=False)
    tol = 1e-8 * s[0] if s.size else 0.0
    keep = s > tol
    if int(keep.sum()) < 6:
        log.warning("interaction matrix rank %d < 6; command from truncated "
                    "pseudoinverse", int(keep.sum()))
    inv_s = np.zeros_like(s)
    inv_s[keep] = 1.0 / s[keep]
    v = -gain * (vt.T @ (inv_s * (u.T @ error)))
    return Twist.from_vector(v)


def ema_filter(state: Twist | None, new: Twist, alpha: float) -> Twist:
    """Exponential moving average of velocity commands.

    With no previous state the new command passes through unchanged
    (the filter is seeded with the first raw command).
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    if state is None:
        return new
    blended = alpha * new.as_vector() + (1.0 - alpha) * state.as_vector()
    return Twist.from_vector(blended)


def rotate_image(image: np.ndarray, theta_deg: int) -> np.ndarray:
    """Exact in-plane rotation for multiples of 90 degrees.

    Positive angles follow the camera-roll convention: rolling the camera
    by +90 degrees about its optical axis produces rotate_image(img, 90).
    """
    if theta_deg % 90 != 0:
        raise ValueError("only multiples of 90 degrees are supported")
    return np.rot90(image, k=(theta_deg // 90) % 4)


def compensate_rotation(desired_image: np.ndarray, current_image: np.ndarray,
                        provider: ProviderConfig, matcher: MatcherConfig,
                        seed: int = 0, mask: np.ndarray | None = None,
                        client=None) -> tuple[int, dict[int, float]]:
    """Pick the in-plane rotation of the current image that best matches.

    Scores each candidate angle by the mean cosine similarity over all
    matched pairs that pass the cyclical threshold (more robust than the
    K-subset, which only subsamples them); ties prefer 0, then 90, 180,
    -90. Returns (best angle in degrees, score per angle).
    """
    desired_grid = bin_features(
        extract(provider, desired_image, mask=mask, client=client), provider.binning)
    scores: dict[int, float] = {}
    best_angle, best_score = 0, -np.inf
    for theta in COMPENSATION_ANGLES:
        rotated = rotate_image(current_image, theta)
        grid = bin_features(extract(provider, rotated, client=client), provider.binning)
        try:
            result = cyclical_distance_map(desired_grid, grid)
            passing = result.eligible_mask & (result.distance_map >= -matcher.threshold)
            if passing.sum() >= MIN_CORRESPONDENCES:
                score = float(result.forward_cosine[passing].mean())
            else:
                sel = select_correspondences(result, matcher.k, matcher.threshold,
                                             seed, top_pool=matcher.top_pool)
                score = float(np.mean([p.cosine for p in sel.pairs]))
        except (InsufficientMatches, NoEligibleCells):
            score = -np.inf
        scores[theta] = score
        if score > best_score:
            best_angle, best_score = theta, score
    return best_angle, scores


@dataclass
class StepDiagnostics:
    k_used: int
    mean_cosine: float
    error_norm: float
    raw_twist: Twist
    dropped_pairs: int


class ServoController:
    """One trial's servo brain: matches against a fixed desired view and
    emits smoothed velocity commands.

    Holds the EMA state and the per-trial selection RNG stream; one
    instance per trial, single-threaded.
    """

    def __init__(self, desired_image: np.ndarray, intrinsics: CameraIntrinsics,
                 provider: ProviderConfig, matcher: MatcherConfig,
                 config: ControllerConfig, rng: np.random.Generator,
                 mask: np.ndarray | None = None, mask_both: bool = False,
                 client=None):
        self.intrinsics = intrinsics
        self.provider = provider
        self.matcher = matcher
        self.config = config
        self.rng = rng
        self._client = client
        self._current_mask = mask if mask_both else None
        self.desired_grid = bin_features(
            extract(provider, desired_image, mask=mask, client=client),
            provider.binning)
        cam_res = (intrinsics.width, intrinsics.height)
        pixels = grid_pixel_map(self.desired_grid, cam_res)
        self._pixel_map = pixels
        self._norm_map = np.stack([
            (pixels[..., 0] - intrinsics.cx) / intrinsics.fx,
            (pixels[..., 1] - intrinsics.cy) / intrinsics.fy,
        ], axis=-1)
        self._ema_state: Twist | None = None
        self._fixed_cells: np.ndarray | None = None

    def reset(self) -> None:
        self._ema_state = None
        self._fixed_cells = None

    def observations_from_pairs(self, pairs: CorrespondenceSet,
                                depth: np.ndarray) -> tuple[list[FeatureObservation], int]:
        """Turn matched cells into feature observations with depths.

        Pairs whose current pixel has no valid depth are dropped; fewer
        than the IBVS minimum remaining raises InsufficientMatches.
        """
        obs: list[FeatureObservation] = []
        dropped = 0
        h, w = depth.shape
        for pair in pairs.pairs:
            des_x, des_y = self._norm_map[pair.desired_cell]
            px, py = self._pixel_map[pair.current_cell]
            ui = min(max(int(round(px)), 0), w - 1)
            vi = min(max(int(round(py)), 0), h - 1)
            z = depth[vi, ui]
            if not np.isfinite(z) or z <= 0.0:
                dropped += 1
                continue
            cur_x, cur_y = pixel_to_normalized(self.intrinsics, (px, py))
            obs.append(FeatureObservation(x=cur_x, y=cur_y, Z=float(z),
                                          desired_x=des_x, desired_y=des_y))
        if len(obs) < MIN_CORRESPONDENCES:
            raise InsufficientMatches(
                f"{len(obs)} observations with valid depth (< {MIN_CORRESPONDENCES})")
        return obs, dropped

    def step(self, current_rgb: np.ndarray, current_depth: np.ndarray) -> tuple[Twist, StepDiagnostics]:
        """One control iteration: match, build the law, smooth the command."""
        grid = bin_features(
            extract(self.provider, current_rgb, mask=self._current_mask,
                    client=self._client),
            self.provider.binning)
        result = cyclical_distance_map(self.desired_grid, grid)
        sel = select_correspondences(result, self.matcher.k, self.matcher.threshold,
                                     self.rng, top_pool=self.matcher.top_pool,
                                     restrict_cells=self._fixed_cells)
        if not self.matcher.resample_each_iteration and self._fixed_cells is None:
            w = self.desired_grid.width
            self._fixed_cells = np.array(
                [p.desired_cell[0] * w + p.desired_cell[1] for p in sel.pairs])
        obs, dropped = self.observations_from_pairs(sel, current_depth)
        err = feature_error(obs)
        L = interaction_matrix(obs)
        raw = velocity_command(err, L, self.config.gain)
        limited = saturate_twist(raw, self.config.max_linear_velocity,
                                 self.config.max_angular_velocity)
        smoothed = ema_filter(self._ema_state, limited, self.config.alpha)
        self._ema_state = smoothed
        diag = StepDiagnostics(
            k_used=len(obs),
            mean_cosine=float(np.mean([p.cosine for p in sel.pairs])),
            error_norm=float(np.linalg.norm(err)),
            raw_twist=raw,
            dropped_pairs=dropped,
        )
        return smoothed, diag


def pbvs_reference(initial: Pose, desired: Pose, steps: int) -> list[Pose]:
    """Ideal straight-line / geodesic trajectory from initial to desired."""
    if steps < 2:
        raise ValueError("steps must be >= 2")
    rel_rotvec = so3_log(initial.rotation.T @ desired.rotation)
    poses = []
    for i in range(steps):
        t = i / (steps - 1)
        trans = (1.0 - t) * initial.translation + t * desired.translation
        rot = initial.rotation @ so3_exp(t * rel_rotvec)
        poses.append(Pose(rot, trans))
    return poses
