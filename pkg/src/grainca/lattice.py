"""2D periodic grid of grain orientations and pinning-particle cells.

Cell states are plain integers: positive values are grain orientation IDs,
``PARTICLE`` (-1) marks an immobile second-phase particle cell, and 0 is
reserved and never stored. The grid wraps as a torus; minimum size is 3x3
so the Moore neighborhood stays well defined.
"""

import numpy as np

#: Sentinel cell state for second-phase particle cells. Never a valid
#: grain orientation; written as 0 in the text serialization.
PARTICLE = -1

#: Moore offsets in the fixed neighbor order: row-major scan of the 3x3
#: block around the core, center excluded. The engine draws "a random
#: neighbor" by index into this order, so it is part of the replay contract.
MOORE_OFFSETS = (
    (-1, -1), (-1, 0), (-1, 1),
    (0, -1), (0, 1),
    (1, -1), (1, 0), (1, 1),
)

_TABLE_CACHE = {}


class Lattice:
    """Periodic grid of cell states with a physical cell size in microns.

    The grid array is owned by the instance; engine code mutates private
    working copies only, so published Lattice objects can be treated as
    immutable snapshots.
    """

    def __init__(self, grid, cell_size_um):
        grid = np.asarray(grid)
        if grid.ndim != 2:
            raise ValueError("lattice grid must be 2D")
        if grid.shape[0] < 3 or grid.shape[1] < 3:
            raise ValueError("lattice must be at least 3x3, got %dx%d" % grid.shape)
        if not float(cell_size_um) > 0.0:
            raise ValueError("cell_size_um must be positive")
        bad = (grid < PARTICLE) | (grid == 0)
        if bad.any():
            raise ValueError("cell states must be PARTICLE or positive orientation IDs")
        self.grid = grid.astype(np.int32, copy=True)
        self.cell_size_um = float(cell_size_um)

    @property
    def height(self):
        return self.grid.shape[0]

    @property
    def width(self):
        return self.grid.shape[1]

    @property
    def n_cells(self):
        return self.grid.size

    @property
    def cells(self):
        """Row-major flat view of the cell states (read-only)."""
        flat = self.grid.reshape(-1)
        flat.flags.writeable = False
        return flat

    def copy(self):
        return Lattice(self.grid, self.cell_size_um)

    def particle_count(self):
        return int(np.count_nonzero(self.grid == PARTICLE))

    def orientations(self):
        """Sorted array of distinct grain orientation IDs present."""
        vals = np.unique(self.grid)
        return vals[vals > 0]

    def __eq__(self, other):
        if not isinstance(other, Lattice):
            return NotImplemented
        return (
            self.cell_size_um == other.cell_size_um
            and self.grid.shape == other.grid.shape
            and bool(np.array_equal(self.grid, other.grid))
        )

    def __repr__(self):
        return "Lattice(%dx%d, %.6g um/cell, %d particles)" % (
            self.width, self.height, self.cell_size_um, self.particle_count(),
        )


def neighbor_table(height, width):
    """Flat-index Moore neighbor table, shape (height*width, 8), int32.

    Column k holds the neighbor at MOORE_OFFSETS[k] with periodic wrap.
    Tables are cached per shape; they are read-only shared state.
    """
    key = (height, width)
    tbl = _TABLE_CACHE.get(key)
    if tbl is None:
        idx = np.arange(height * width, dtype=np.int32).reshape(height, width)
        tbl = np.empty((height * width, 8), dtype=np.int32)
        for k, (dr, dc) in enumerate(MOORE_OFFSETS):
            tbl[:, k] = np.roll(np.roll(idx, -dr, axis=0), -dc, axis=1).reshape(-1)
        tbl.flags.writeable = False
        _TABLE_CACHE[key] = tbl
    return tbl


def neighbors(lat, idx):
    """The 8 Moore neighbors of flat index ``idx``, in the fixed order."""
    if not 0 <= idx < lat.n_cells:
        raise IndexError("cell index %d out of range for %dx%d lattice"
                         % (idx, lat.width, lat.height))
    return neighbor_table(lat.height, lat.width)[idx]


def is_boundary_cell(lat, idx):
    """True iff the grain cell at ``idx`` touches a differently oriented grain.

    Particle neighbors alone do not make a cell a boundary cell.
    """
    flat = lat.grid.reshape(-1)
    own = flat[idx]
    if own == PARTICLE:
        raise ValueError("is_boundary_cell called on a particle cell (index %d)" % idx)
    for m in neighbors(lat, idx):
        v = flat[m]
        if v != PARTICLE and v != own:
            return True
    return False


def to_microns(lat, area_cells):
    """Convert a cell-count area to square microns."""
    return float(area_cells) * lat.cell_size_um ** 2


def to_text(lat):
    """Serialize to the plain-text grid format.

    Header line "width height cell_size_um", then ``height`` rows of
    ``width`` space-separated integers; particles are written as 0.
    The float is written with repr so the round trip is bit-exact.
    """
    out = ["%d %d %s" % (lat.width, lat.height, repr(lat.cell_size_um))]
    ext = np.where(lat.grid == PARTICLE, 0, lat.grid)
    for row in ext:
        out.append(" ".join(str(int(v)) for v in row))
    return "\n".join(out) + "\n"


def from_text(text):
    """Parse the text grid format back into a Lattice."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty lattice file")
    head = lines[0].split()
    if len(head) != 3:
        raise ValueError("bad lattice header %r (want: width height cell_size_um)" % lines[0])
    width, height = int(head[0]), int(head[1])
    cell_size = float(head[2])
    if len(lines) - 1 != height:
        raise ValueError("expected %d grid rows, found %d" % (height, len(lines) - 1))
    grid = np.empty((height, width), dtype=np.int32)
    for r, ln in enumerate(lines[1:]):
        vals = ln.split()
        if len(vals) != width:
            raise ValueError("row %d has %d values, expected %d" % (r, len(vals), width))
        grid[r] = [int(v) for v in vals]
    if (grid < 0).any():
        raise ValueError("negative cell state in lattice file")
    grid = np.where(grid == 0, PARTICLE, grid)
    return Lattice(grid, cell_size)


def save_text(lat, path):
    with open(path, "w") as fh:
        fh.write(to_text(lat))


def load_text(path):
    with open(path) as fh:
        return from_text(fh.read())
