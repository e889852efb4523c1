"""Dense descriptor grids from images, with pluggable providers.

Two providers share one contract: the built-in photometric provider
(mean-subtracted, L2-normalized grayscale patches; no ML dependency)
and a client for an external feature bridge speaking the length-prefixed
wire protocol. Hierarchical ring binning enriches either grid.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import cv2
import numpy as np

from .bridge_client import BridgeClient, get_shared_client
from .errors import CellOutOfBounds, DimensionMismatch, EmptyImage

PATCH_SIZE = 14
MIN_INPUT_RESOLUTION = 224
MAX_INPUT_RESOLUTION = 518
DEFAULT_DEGENERATE_NORM = 8.0  # patch contrast floor, intensity units


@dataclass(frozen=True)
class DescriptorGrid:
    """H' x W' field of D-dimensional patch descriptors.

    `eligible` marks cells usable for matching; degenerate (zero-norm)
    and masked-out cells are excluded from both matching directions.
    """

    data: np.ndarray             # (H', W', D) float array
    patch_size: int
    stride: int
    source_resolution: tuple[int, int]  # (height, width) of the resized input
    eligible: np.ndarray         # (H', W') bool

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ValueError("descriptor data must be (H', W', D)")
        if self.eligible.shape != self.data.shape[:2]:
            raise ValueError("eligibility mask must match grid shape")
        expect_h = (self.source_resolution[0] - self.patch_size) // self.stride + 1
        expect_w = (self.source_resolution[1] - self.patch_size) // self.stride + 1
        if self.data.shape[:2] != (expect_h, expect_w):
            raise ValueError(
                f"grid {self.data.shape[:2]} inconsistent with source resolution "
                f"{self.source_resolution} (expected {(expect_h, expect_w)})")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def dim(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class ProviderConfig:
    """How to turn an image into a descriptor grid."""

    kind: str = "photometric"        # "photometric" | "bridge"
    input_resolution: int = 308      # square operating resolution
    binning: int = 1                 # ring-binning hierarchy depth
    smoothing: float = 7.0           # photometric pre-blur sigma, input pixels
    degenerate_norm: float = DEFAULT_DEGENERATE_NORM  # photometric contrast floor
    layer: int = 11                  # bridge backbone layer
    bridge_host: str = "127.0.0.1"
    bridge_port: int = 5917

    def __post_init__(self):
        if self.kind not in ("photometric", "bridge"):
            raise ValueError(f"unknown provider kind {self.kind!r}")
        if not MIN_INPUT_RESOLUTION <= self.input_resolution <= MAX_INPUT_RESOLUTION:
            raise ValueError("input resolution must lie in [224, 518]")
        if self.binning < 0:
            raise ValueError("binning depth must be >= 0")
        if self.smoothing < 0:
            raise ValueError("smoothing sigma must be >= 0")
        if self.degenerate_norm < 0:
            raise ValueError("degenerate-norm floor must be >= 0")


def _resize_square(image: np.ndarray, res: int) -> np.ndarray:
    if image.shape[0] == res and image.shape[1] == res:
        return image
    return cv2.resize(image, (res, res), interpolation=cv2.INTER_AREA)


def _photometric_grid(image: np.ndarray, res: int, smoothing: float,
                      degenerate_norm: float) -> DescriptorGrid:
    img = _resize_square(image, res)
    gray = (img.astype(np.float32) @ np.array([0.299, 0.587, 0.114], dtype=np.float32))
    if smoothing > 0:
        # low-pass at the patch scale: keeps descriptors stable under
        # sub-patch misalignment, which raw pixel vectors are not
        gray = cv2.GaussianBlur(gray, (0, 0), sigmaX=smoothing)
    windows = np.lib.stride_tricks.sliding_window_view(gray, (PATCH_SIZE, PATCH_SIZE))
    windows = windows[::PATCH_SIZE, ::PATCH_SIZE]
    gh, gw = windows.shape[:2]
    vecs = windows.reshape(gh, gw, PATCH_SIZE * PATCH_SIZE).copy()
    vecs -= vecs.mean(axis=2, keepdims=True)
    norms = np.linalg.norm(vecs, axis=2)
    # cells below the contrast floor are dominated by quantization noise
    # and would otherwise outrank informative cells on cosine similarity
    eligible = norms > max(degenerate_norm, 1e-12)
    safe = np.where(eligible, norms, 1.0)
    vecs /= safe[..., None]
    vecs[~eligible] = 0.0
    return DescriptorGrid(data=vecs, patch_size=PATCH_SIZE, stride=PATCH_SIZE,
                          source_resolution=(res, res), eligible=eligible)


def _apply_mask(grid: DescriptorGrid, mask: np.ndarray) -> DescriptorGrid:
    """Mark cells whose patch is mostly outside the foreground mask ineligible."""
    res_h, res_w = grid.source_resolution
    m = cv2.resize(mask.astype(np.uint8), (res_w, res_h),
                   interpolation=cv2.INTER_NEAREST).astype(bool)
    windows = np.lib.stride_tricks.sliding_window_view(m, (grid.patch_size, grid.patch_size))
    windows = windows[::grid.stride, ::grid.stride]
    coverage = windows.mean(axis=(2, 3))
    eligible = grid.eligible & (coverage > 0.5)
    return replace(grid, eligible=eligible)


def extract(provider: ProviderConfig, image: np.ndarray,
            mask: np.ndarray | None = None,
            client: BridgeClient | None = None) -> DescriptorGrid:
    """Extract a dense descriptor grid from an RGB image.

    The image is resized (without preserving aspect) to the provider's
    square operating resolution. An optional boolean mask, given in the
    original image's pixel space, makes background cells ineligible.
    """
    image = np.asarray(image)
    if image.size == 0:
        raise EmptyImage("cannot extract descriptors from an empty image")
    if image.ndim == 2:
        image = np.repeat(image[..., None], 3, axis=2)

    if provider.kind == "photometric":
        grid = _photometric_grid(image, provider.input_resolution,
                                 provider.smoothing, provider.degenerate_norm)
    else:
        if client is None:
            client = get_shared_client(provider.bridge_host, provider.bridge_port)
        grid = client.extract(image, provider.input_resolution, provider.layer)

    if mask is not None:
        grid = _apply_mask(grid, np.asarray(mask))
    return grid


def bin_features(grid: DescriptorGrid, beta: int) -> DescriptorGrid:
    """Concatenate each cell with average-pooled rings of its neighbors.

    Ring r holds the cells at Chebyshev distance exactly r; edge cells
    average over whatever neighbors are in bounds. Output dimension is
    (beta + 1) * D; grid shape and eligibility are unchanged.
    """
    if beta < 0:
        raise ValueError("binning depth must be >= 0")
    if beta == 0:
        return grid
    h, w, d = grid.data.shape
    parts = [grid.data]
    for r in range(1, beta + 1):
        acc = np.zeros((h, w, d), dtype=grid.data.dtype)
        cnt = np.zeros((h, w, 1), dtype=grid.data.dtype)
        for di in range(-r, r + 1):
            for dj in range(-r, r + 1):
                if max(abs(di), abs(dj)) != r:
                    continue
                src_i0, src_i1 = max(0, di), min(h, h + di)
                src_j0, src_j1 = max(0, dj), min(w, w + dj)
                dst_i0, dst_i1 = max(0, -di), min(h, h - di)
                dst_j0, dst_j1 = max(0, -dj), min(w, w - dj)
                acc[dst_i0:dst_i1, dst_j0:dst_j1] += grid.data[src_i0:src_i1, src_j0:src_j1]
                cnt[dst_i0:dst_i1, dst_j0:dst_j1] += 1.0
        parts.append(acc / np.maximum(cnt, 1.0))
    return replace(grid, data=np.concatenate(parts, axis=2))


def grid_cell_to_pixel(grid: DescriptorGrid, cell: tuple[int, int],
                       camera_resolution: tuple[int, int]) -> np.ndarray:
    """Map a grid cell to its patch-center pixel in camera resolution.

    camera_resolution is (width, height); returns pixel (x, y).
    """
    row, col = cell
    if not (0 <= row < grid.height and 0 <= col < grid.width):
        raise CellOutOfBounds(f"cell {cell} outside {grid.height}x{grid.width} grid")
    cam_w, cam_h = camera_resolution
    src_h, src_w = grid.source_resolution
    x = (col * grid.stride + grid.patch_size / 2.0) * (cam_w / src_w)
    y = (row * grid.stride + grid.patch_size / 2.0) * (cam_h / src_h)
    return np.array([x, y])


def grid_pixel_map(grid: DescriptorGrid, camera_resolution: tuple[int, int]) -> np.ndarray:
    """Patch-center pixels for every cell at once. (H', W', 2) as (x, y)."""
    cam_w, cam_h = camera_resolution
    src_h, src_w = grid.source_resolution
    cols = (np.arange(grid.width) * grid.stride + grid.patch_size / 2.0) * (cam_w / src_w)
    rows = (np.arange(grid.height) * grid.stride + grid.patch_size / 2.0) * (cam_h / src_h)
    xx, yy = np.meshgrid(cols, rows)
    return np.stack([xx, yy], axis=-1)


def check_compatible(a: DescriptorGrid, b: DescriptorGrid) -> None:
    if a.dim != b.dim:
        raise DimensionMismatch(f"descriptor dims differ: {a.dim} vs {b.dim}")
