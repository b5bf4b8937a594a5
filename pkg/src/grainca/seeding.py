"""Initial microstructures: Voronoi polycrystals and random particle disks.

Both constructors are pure functions of (config, seed), so sweeps can farm
many seedings in parallel without shared state.
"""

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .lattice import PARTICLE, Lattice
from .rng import randbelow, seed_state


class PlacementError(RuntimeError):
    """Particle placement could not reach the target volume fraction."""

    def __init__(self, message, achieved_fraction):
        super().__init__(message)
        self.achieved_fraction = achieved_fraction


@dataclass
class SeedConfig:
    """Geometry plus grain count and seed for the initial polycrystal.

    n_grains defaults to one grain per cell (saturated start: every cell
    begins as its own orientation), the high-energy fine structure the
    growth dynamics need; pass a smaller count for a coarse start.
    """

    width: int = 300
    height: int = 300
    cell_size_um: float = 0.4
    n_grains: int | None = None
    rng_seed: int = 1

    def __post_init__(self):
        if self.width < 3 or self.height < 3:
            raise ValueError("grid must be at least 3x3")
        if self.cell_size_um <= 0:
            raise ValueError("cell_size_um must be positive")
        if self.n_grains is None:
            self.n_grains = self.width * self.height
        if not 1 <= self.n_grains <= self.width * self.height:
            raise ValueError("n_grains must be in 1..width*height")


@dataclass
class ParticleSpec:
    """Second-phase particle population: one radius, one target fraction."""

    radius_um: float
    volume_fraction: float

    def __post_init__(self):
        if self.radius_um <= 0:
            raise ValueError("radius_um must be positive")
        if not 0.0 <= self.volume_fraction < 1.0:
            raise ValueError("volume_fraction must be in [0, 1)")

    def radius_cells(self, cell_size_um):
        """Disk radius in cells: round-half-up of radius_um/cell_size, min 1."""
        return max(1, int(math.floor(self.radius_um / cell_size_um + 0.5)))


def disk_offsets(radius_cells):
    """(dr, dc) offsets of all cells whose center lies within the radius."""
    r = int(radius_cells)
    offs = []
    for dr in range(-r, r + 1):
        for dc in range(-r, r + 1):
            if dr * dr + dc * dc <= r * r:
                offs.append((dr, dc))
    return np.array(offs, dtype=np.int64)


@njit(cache=True)
def _sample_distinct(n_cells, n_pick, state):
    # partial Fisher-Yates: first n_pick entries are a uniform sample
    # of distinct cell indices
    arr = np.arange(n_cells, dtype=np.int64)
    for i in range(n_pick):
        j = i + randbelow(state, n_cells - i)
        tmp = arr[i]
        arr[i] = arr[j]
        arr[j] = tmp
    return arr[:n_pick]


@njit(cache=True)
def _voronoi_assign(height, width, seed_rows, seed_cols):
    n = seed_rows.size
    grid = np.empty((height, width), np.int32)
    for r in range(height):
        for c in range(width):
            best = np.int64(1) << 62
            best_i = 0
            for s in range(n):
                dr = abs(r - seed_rows[s])
                if dr > height - dr:
                    dr = height - dr
                dc = abs(c - seed_cols[s])
                if dc > width - dc:
                    dc = width - dc
                d2 = dr * dr + dc * dc
                if d2 < best:  # strict: ties keep the lowest seed index
                    best = d2
                    best_i = s
            grid[r, c] = best_i + 1
    return grid


def voronoi_init(cfg):
    """Space-filling polycrystal: nearest-seed partition on the torus.

    Seed points are distinct uniformly random cells; every cell takes the
    orientation (1..n_grains) of its closest seed under periodic Euclidean
    distance, ties broken by the lowest seed index.
    """
    state = seed_state(cfg.rng_seed)
    n_cells = cfg.width * cfg.height
    picks = _sample_distinct(n_cells, cfg.n_grains, state)
    if cfg.n_grains == n_cells:
        # saturated grid: every cell is its own seed at distance 0, so the
        # distance scan is skipped; result matches the general path
        grid = np.empty(n_cells, np.int32)
        grid[picks] = np.arange(1, n_cells + 1, dtype=np.int32)
        grid = grid.reshape(cfg.height, cfg.width)
    else:
        rows = (picks // cfg.width).astype(np.int64)
        cols = (picks % cfg.width).astype(np.int64)
        grid = _voronoi_assign(cfg.height, cfg.width, rows, cols)
    return Lattice(grid, cfg.cell_size_um)


def place_particles(lat, spec, rng_seed):
    """Overwrite grain cells with non-overlapping particle disks.

    Disk centers are drawn uniformly; candidates overlapping an existing
    particle cell are rejected. Placement stops at the achievable cell
    count closest to the target fraction; the attempt budget is 100x the
    expected disk count. Raises PlacementError if the budget runs out or
    the achieved fraction misses the target by more than 10% relative.
    """
    if spec.volume_fraction == 0.0:
        return lat.copy()

    n_cells = lat.n_cells
    offs = disk_offsets(spec.radius_cells(lat.cell_size_um))
    disk = len(offs)
    target = spec.volume_fraction * n_cells
    if target < disk:
        raise ValueError(
            "target fraction %g yields %.1f cells, below one %d-cell disk"
            % (spec.volume_fraction, target, disk))

    grid = lat.grid.copy()
    state = seed_state(rng_seed)
    expected = math.ceil(target / disk)
    budget = 100 * expected
    attempts = 0
    achieved = 0
    drs, dcs = offs[:, 0], offs[:, 1]
    while achieved + 0.5 * disk <= target:
        if attempts >= budget:
            raise PlacementError(
                "particle placement exhausted %d attempts at fraction %.5f "
                "(target %.5f)" % (budget, achieved / n_cells, spec.volume_fraction),
                achieved / n_cells)
        attempts += 1
        center = randbelow(state, n_cells)
        rows = (center // lat.width + drs) % lat.height
        cols = (center % lat.width + dcs) % lat.width
        if (grid[rows, cols] == PARTICLE).any():
            continue
        grid[rows, cols] = PARTICLE
        achieved += disk

    frac = achieved / n_cells
    if abs(frac - spec.volume_fraction) > 0.1 * spec.volume_fraction:
        raise PlacementError(
            "achieved fraction %.5f misses target %.5f by more than 10%% relative"
            % (frac, spec.volume_fraction),
            frac)
    return Lattice(grid, lat.cell_size_um)
