"""Image perturbations for the robustness protocol: color jitter,
random erasing, and additive Gaussian noise.

The stated blur parameters (mean 0, sigma 0.05) describe an intensity
noise process, not a spatial kernel, so the default implementation adds
zero-mean Gaussian noise with sigma 0.05 of the intensity range. A true
spatial blur is available behind `blur_sigma_px`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import cv2
import numpy as np


@dataclass(frozen=True)
class PerturbationConfig:
    brightness: float = 0.6
    contrast: float = 0.4
    erase_prob: float = 0.5
    erase_scale: tuple[float, float] = (0.02, 0.33)
    erase_ratio: tuple[float, float] = (0.3, 3.3)
    noise_sigma: float = 0.05          # fraction of the full intensity range
    seed: int = 0
    enabled: bool = True
    per_iteration: bool = True         # fresh draw every control iteration
    blur_sigma_px: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.erase_prob <= 1.0:
            raise ValueError("erase probability must lie in [0, 1]")
        for name, rng in (("erase_scale", self.erase_scale),
                          ("erase_ratio", self.erase_ratio)):
            if rng[0] > rng[1] or rng[0] <= 0:
                raise ValueError(f"{name} range must be well-ordered and positive")


def perturb(image: np.ndarray, cfg: PerturbationConfig,
            rng: np.random.Generator) -> np.ndarray:
    """Apply the perturbation stack to a uint8 RGB image.

    Order: brightness scale, contrast blend toward the mean gray, one
    random-noise rectangle erase (with probability erase_prob), additive
    Gaussian noise. Deterministic for a given RNG stream state.
    """
    if not cfg.enabled:
        return image
    out = image.astype(np.float64)
    h, w = out.shape[:2]

    factor = rng.uniform(max(0.0, 1.0 - cfg.brightness), 1.0 + cfg.brightness)
    out *= factor

    factor = rng.uniform(max(0.0, 1.0 - cfg.contrast), 1.0 + cfg.contrast)
    mean_gray = float((out @ np.array([0.299, 0.587, 0.114])).mean())
    out = mean_gray + (out - mean_gray) * factor

    if cfg.erase_prob > 0.0 and rng.uniform() < cfg.erase_prob:
        for _ in range(10):  # retry until the rectangle fits, as usual
            area = h * w * rng.uniform(*cfg.erase_scale)
            log_ratio = rng.uniform(math.log(cfg.erase_ratio[0]),
                                    math.log(cfg.erase_ratio[1]))
            ratio = math.exp(log_ratio)
            eh = int(round(math.sqrt(area * ratio)))
            ew = int(round(math.sqrt(area / ratio)))
            if 0 < eh <= h and 0 < ew <= w:
                top = int(rng.integers(0, h - eh + 1))
                left = int(rng.integers(0, w - ew + 1))
                out[top:top + eh, left:left + ew] = rng.uniform(
                    0.0, 255.0, size=(eh, ew, out.shape[2]))
                break

    if cfg.blur_sigma_px is not None and cfg.blur_sigma_px > 0:
        out = cv2.GaussianBlur(out, (0, 0), sigmaX=cfg.blur_sigma_px)

    if cfg.noise_sigma > 0.0:
        out += rng.normal(0.0, cfg.noise_sigma * 255.0, size=out.shape)

    return np.clip(np.rint(out), 0, 255).astype(np.uint8)
