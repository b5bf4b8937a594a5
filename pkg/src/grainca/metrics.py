"""Grain identification and the statistics reported per snapshot:
equivalent-circle diameters, mean grain size, size histograms, and
kinetics time series.

Grains are 8-connected components of equal orientation with periodic
wraparound, matching the Moore neighborhood the dynamics use; a grain
spanning the torus seam is counted once.
"""

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .lattice import PARTICLE, neighbor_table, to_microns

DEFAULT_BIN_WIDTH_UM = 1.5


@dataclass
class GrainRecord:
    label: int
    orientation: int
    area_cells: int


@dataclass
class GrainLabeling:
    """Per-cell labels (particles get -1) plus one record per grain."""

    labels: np.ndarray
    grains: list

    @property
    def n_grains(self):
        return len(self.grains)


@dataclass
class GrainStats:
    """Equivalent-circle diameters in microns and their histogram.

    mean_diameter_um is NaN when the lattice holds no grains; histogram
    rows are (bin_low_um, bin_high_um, fraction) with fractions by grain
    count summing to 1.
    """

    diameters_um: np.ndarray
    mean_diameter_um: float
    histogram: list
    grain_count: int


@dataclass
class KineticsPoint:
    cas: int
    mean_diameter_um: float
    grain_count: int


@dataclass
class KineticsSeries:
    points: list

    def __post_init__(self):
        cas = [p.cas for p in self.points]
        if any(b <= a for a, b in zip(cas, cas[1:])):
            raise ValueError("kinetics series must have strictly increasing cas")

    def __len__(self):
        return len(self.points)

    def cas(self):
        return np.array([p.cas for p in self.points], dtype=np.int64)

    def mean_diameters(self):
        return np.array([p.mean_diameter_um for p in self.points])

    def grain_counts(self):
        return np.array([p.grain_count for p in self.points], dtype=np.int64)


@njit(cache=True)
def _label_kernel(flat, nbrs):
    n = flat.size
    labels = np.full(n, -1, np.int32)
    stack = np.empty(n, np.int32)
    next_label = 0
    for i in range(n):
        if flat[i] == PARTICLE or labels[i] >= 0:
            continue
        orient = flat[i]
        labels[i] = next_label
        stack[0] = i
        top = 1
        while top > 0:
            top -= 1
            cur = stack[top]
            for k in range(8):
                m = nbrs[cur, k]
                if labels[m] < 0 and flat[m] == orient:
                    labels[m] = next_label
                    stack[top] = m
                    top += 1
        next_label += 1
    return labels, next_label


def label_grains(lat):
    """Connected-component labeling of grain cells (8-connected, periodic)."""
    flat = lat.grid.reshape(-1)
    nbrs = neighbor_table(lat.height, lat.width)
    labels, count = _label_kernel(flat, nbrs)
    grains = []
    if count:
        areas = np.bincount(labels[labels >= 0], minlength=count)
        # first cell of each component fixes its orientation
        first = np.full(count, -1, np.int64)
        seen = np.flatnonzero(labels >= 0)
        # reversed so the earliest cell wins
        first[labels[seen[::-1]]] = seen[::-1]
        grains = [GrainRecord(lbl, int(flat[first[lbl]]), int(areas[lbl]))
                  for lbl in range(count)]
    return GrainLabeling(labels.reshape(lat.grid.shape), grains)


def equivalent_diameter_um(area_um2):
    """Diameter of the circle with the given area: d = 2*sqrt(A/pi)."""
    return 2.0 * math.sqrt(area_um2 / math.pi)


def grain_stats(labeling, lat, bin_width_um=DEFAULT_BIN_WIDTH_UM):
    """Per-grain equivalent-circle diameters, unweighted mean, histogram."""
    if bin_width_um <= 0:
        raise ValueError("bin_width_um must be positive")
    n = labeling.n_grains
    if n == 0:
        return GrainStats(np.empty(0), float("nan"), [], 0)
    diam = np.array([equivalent_diameter_um(to_microns(lat, g.area_cells))
                     for g in labeling.grains])
    mean = float(diam.mean())
    n_bins = int(math.floor(diam.max() / bin_width_um)) + 1
    counts = np.bincount(np.minimum((diam / bin_width_um).astype(np.int64),
                                    n_bins - 1), minlength=n_bins)
    hist = [(i * bin_width_um, (i + 1) * bin_width_um, counts[i] / n)
            for i in range(n_bins)]
    return GrainStats(diam, mean, hist, n)


def record_kinetics(trajectory, bin_width_um=DEFAULT_BIN_WIDTH_UM):
    """Labeling + stats at each recorded CAS of an engine trajectory."""
    points = []
    for cas, snap in trajectory:
        st = grain_stats(label_grains(snap), snap, bin_width_um)
        points.append(KineticsPoint(int(cas), st.mean_diameter_um, st.grain_count))
    return KineticsSeries(points)


def kinetics_csv(series):
    """Kinetics CSV with the fixed header cas,mean_diameter_um,grain_count."""
    lines = ["cas,mean_diameter_um,grain_count"]
    for p in series.points:
        lines.append("%d,%s,%d" % (p.cas, repr(float(p.mean_diameter_um)), p.grain_count))
    return "\n".join(lines) + "\n"


def histogram_csv(stats):
    """Histogram CSV with the fixed header bin_low_um,bin_high_um,fraction."""
    lines = ["bin_low_um,bin_high_um,fraction"]
    for lo, hi, frac in stats.histogram:
        lines.append("%s,%s,%s" % (repr(float(lo)), repr(float(hi)), repr(float(frac))))
    return "\n".join(lines) + "\n"
