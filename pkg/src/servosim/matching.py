"""Mutual nearest-neighbor correspondence with cyclical-distance verification.

A forward match goes from every desired-grid cell to its best current-grid
cell by cosine similarity; the backward match returns to the desired grid.
The (non-positive) cyclical distance is minus the round-trip displacement
in patch units; zero means a best-buddy pair.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .descriptors import DescriptorGrid, check_compatible
from .errors import InsufficientMatches, NoEligibleCells

MIN_CORRESPONDENCES = 4  # IBVS needs >= 4 point pairs for a usable system

_SCATTER_CACHE: dict[int, np.ndarray] = {}


def _tie_scatter(n: int) -> np.ndarray:
    """Fixed pseudo-random permutation of cell indices, for tie-breaking."""
    perm = _SCATTER_CACHE.get(n)
    if perm is None:
        perm = np.random.Generator(np.random.PCG64(0x5EED)).permutation(n)
        _SCATTER_CACHE[n] = perm
    return perm


def _normalized_flat(grid: DescriptorGrid) -> np.ndarray:
    flat = grid.data.reshape(-1, grid.dim)
    norms = np.linalg.norm(flat, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0  # degenerate rows stay all-zero, not NaN
    return flat / norms


def nearest_neighbor(query: np.ndarray, grid: DescriptorGrid) -> tuple[tuple[int, int], float]:
    """Most cosine-similar eligible cell; ties break row-major first."""
    eligible = grid.eligible.ravel()
    if not eligible.any():
        raise NoEligibleCells("grid has no eligible cells")
    query = np.asarray(query)
    qn = np.linalg.norm(query)
    if qn <= 1e-12:
        raise NoEligibleCells("query descriptor is degenerate")
    sims = _normalized_flat(grid) @ (query / qn)
    sims[~eligible] = -np.inf
    idx = int(np.argmax(sims))
    return (idx // grid.width, idx % grid.width), float(sims[idx])


@dataclass(frozen=True)
class CyclicalMatchResult:
    """Per-desired-cell match data from one forward/backward pass.

    distance_map is the cyclical distance (<= 0, NaN for ineligible cells);
    forward_cell / roundtrip_cell hold flat indices into the current and
    desired grids, -1 where ineligible.
    """

    distance_map: np.ndarray    # (H', W') float64
    forward_cell: np.ndarray    # (H', W') int, flat index into current grid
    roundtrip_cell: np.ndarray  # (H', W') int, flat index into desired grid
    forward_cosine: np.ndarray  # (H', W') float64
    grid_shape: tuple[int, int]
    current_shape: tuple[int, int]

    @property
    def eligible_mask(self) -> np.ndarray:
        return self.forward_cell >= 0


def cyclical_distance_map(desired: DescriptorGrid, current: DescriptorGrid) -> CyclicalMatchResult:
    """Forward/backward nearest-neighbor pass between two grids.

    For each eligible desired cell u: v = argmax cosine in the current
    grid, u' = argmax cosine of v back in the desired grid, and the map
    value is -||u - u'|| in patch-index units.
    """
    check_compatible(desired, current)
    d_flat = _normalized_flat(desired)
    c_flat = _normalized_flat(current)
    d_ok = desired.eligible.ravel()
    c_ok = current.eligible.ravel()
    if not d_ok.any() or not c_ok.any():
        raise NoEligibleCells("one of the grids has no eligible cells")

    sims = d_flat @ c_flat.T  # (Nd, Nc)
    sims[~d_ok, :] = -np.inf
    sims[:, ~c_ok] = -np.inf

    forward = np.argmax(sims, axis=1)               # best current cell per desired
    forward_cos = sims[np.arange(sims.shape[0]), forward]
    backward = np.argmax(sims, axis=0)              # best desired cell per current
    roundtrip = backward[forward]

    h, w = desired.height, desired.width
    rows = np.arange(h * w) // w
    cols = np.arange(h * w) % w
    rt_rows = roundtrip // w
    rt_cols = roundtrip % w
    dist = -np.hypot(rows - rt_rows, cols - rt_cols)

    dist[~d_ok] = np.nan
    forward = np.where(d_ok, forward, -1)
    roundtrip = np.where(d_ok, roundtrip, -1)
    forward_cos = np.where(d_ok, forward_cos, np.nan)
    return CyclicalMatchResult(
        distance_map=dist.reshape(h, w),
        forward_cell=forward.reshape(h, w),
        roundtrip_cell=roundtrip.reshape(h, w),
        forward_cosine=forward_cos.reshape(h, w),
        grid_shape=(h, w),
        current_shape=(current.height, current.width),
    )


@dataclass(frozen=True)
class Correspondence:
    desired_cell: tuple[int, int]
    current_cell: tuple[int, int]
    cosine: float
    cyclical_distance: float  # <= 0; 0 means the round trip returned home


@dataclass(frozen=True)
class CorrespondenceSet:
    pairs: tuple[Correspondence, ...]
    k: int
    rng_seed: int | None


def select_correspondences(result: CyclicalMatchResult, k: int, threshold: float,
                           seed: int | np.random.Generator,
                           top_pool: int | None = None,
                           restrict_cells: np.ndarray | None = None) -> CorrespondenceSet:
    """Randomly pick k verified correspondences.

    Eligible cells are those whose round-trip displacement is <= threshold
    (inclusive). With `top_pool` set, eligibility is further capped to the
    pool of that many highest-cosine matches (the top-ranked candidates the
    selection draws from); the pick is then uniform without replacement.
    When fewer than k cells pass the threshold, the k best cells by
    cyclical distance are used instead (ties broken row-major).
    `restrict_cells` limits selection to a fixed set of desired cells
    (flat indices), for pinned-subset runs.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    h, w = result.grid_shape
    dist = result.distance_map.ravel()
    cosine = result.forward_cosine.ravel()
    valid = result.forward_cell.ravel() >= 0
    if restrict_cells is not None:
        keep = np.zeros(h * w, dtype=bool)
        keep[np.asarray(restrict_cells, dtype=int)] = True
        valid = valid & keep
    n_valid = int(valid.sum())
    if n_valid < MIN_CORRESPONDENCES:
        raise InsufficientMatches(
            f"only {n_valid} matchable cells (< {MIN_CORRESPONDENCES})")

    passing = valid & (dist >= -threshold)
    flat_idx = np.flatnonzero(passing)
    if top_pool is not None and len(flat_idx) > top_pool:
        # scatter exact-cosine ties spatially (fixed permutation keeps the
        # pool deterministic); row-major ties would cluster features
        scatter = _tie_scatter(h * w)
        order = np.lexsort((scatter[flat_idx], -cosine[flat_idx]))
        flat_idx = np.sort(flat_idx[order[:top_pool]])
    if len(flat_idx) >= k:
        rng = seed if isinstance(seed, np.random.Generator) else \
            np.random.Generator(np.random.PCG64(seed))
        chosen = flat_idx[rng.choice(len(flat_idx), size=k, replace=False)]
        chosen = np.sort(chosen)
    else:
        candidates = np.flatnonzero(valid)
        # best cyclical distance first, row-major to break ties
        order = np.lexsort((candidates, -dist[candidates]))
        chosen = candidates[order[:k]]
        chosen = np.sort(chosen)

    fwd = result.forward_cell.ravel()
    cos = result.forward_cosine.ravel()
    cw = result.current_shape[1]
    pairs = tuple(
        Correspondence(
            desired_cell=(int(i // w), int(i % w)),
            current_cell=(int(fwd[i] // cw), int(fwd[i] % cw)),
            cosine=float(cos[i]),
            cyclical_distance=float(dist[i]),
        )
        for i in chosen
    )
    rng_seed = seed if isinstance(seed, int) else None
    return CorrespondenceSet(pairs=pairs, k=k, rng_seed=rng_seed)
