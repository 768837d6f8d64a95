"""Rectangular observation windows, regular count grids, and cell counts.

A window is an axis-aligned rectangle minus a set of rectangular holes
(unobserved sub-regions).  A grid tessellates the window's bounding
rectangle into equal square cells; cells are half-open,
``[a, a + s) x [b, b + s)``, so the tiling is a true partition and a point
on a shared edge belongs to exactly one cell (the one whose interval
starts there).  Cells that do not fit entirely inside the outer rectangle
are dropped rather than clipped, so every retained cell has the same area.
A cell whose interior meets a hole is classified as a prediction target;
all other retained cells are observed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidMeshError, InvalidWindowError


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle ``[xmin, xmax] x [ymin, ymax]``."""

    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        if not (self.xmax > self.xmin and self.ymax > self.ymin):
            raise InvalidWindowError(
                f"degenerate rectangle: ({self.xmin}, {self.ymin}, "
                f"{self.xmax}, {self.ymax})"
            )

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    @property
    def area(self) -> float:
        return self.width * self.height

    def contains(self, points) -> np.ndarray:
        """Boolean mask of points inside the closed rectangle."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return (
            (pts[:, 0] >= self.xmin)
            & (pts[:, 0] <= self.xmax)
            & (pts[:, 1] >= self.ymin)
            & (pts[:, 1] <= self.ymax)
        )

    def contains_open(self, points) -> np.ndarray:
        """Boolean mask of points strictly inside the rectangle."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return (
            (pts[:, 0] > self.xmin)
            & (pts[:, 0] < self.xmax)
            & (pts[:, 1] > self.ymin)
            & (pts[:, 1] < self.ymax)
        )

    def covers(self, other: "Rect") -> bool:
        return (
            other.xmin >= self.xmin
            and other.xmax <= self.xmax
            and other.ymin >= self.ymin
            and other.ymax <= self.ymax
        )

    def interiors_overlap(self, other: "Rect") -> bool:
        """True when the open interiors intersect (touching edges do not count)."""
        return not (
            other.xmax <= self.xmin
            or other.xmin >= self.xmax
            or other.ymax <= self.ymin
            or other.ymin >= self.ymax
        )

    def translated(self, dx: float, dy: float) -> "Rect":
        return Rect(self.xmin + dx, self.ymin + dy, self.xmax + dx, self.ymax + dy)

    def dilated(self, margin: float) -> "Rect":
        return Rect(
            self.xmin - margin, self.ymin - margin,
            self.xmax + margin, self.ymax + margin,
        )


@dataclass(frozen=True)
class Window:
    """Observation region: an outer rectangle minus rectangular holes.

    Holes must be pairwise disjoint (interiors) and contained in the outer
    rectangle.  Points on a hole boundary count as inside the window.
    """

    outer: Rect
    holes: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "holes", tuple(self.holes))
        for h in self.holes:
            if not self.outer.covers(h):
                raise InvalidWindowError(f"hole {h} is not contained in {self.outer}")
        for i, a in enumerate(self.holes):
            for b in self.holes[i + 1:]:
                if a.interiors_overlap(b):
                    raise InvalidWindowError(f"holes {a} and {b} overlap")
        if not self.area > 0:
            raise InvalidWindowError("window has zero observable area")

    @property
    def area(self) -> float:
        return self.outer.area - sum(h.area for h in self.holes)

    @property
    def min_side(self) -> float:
        return min(self.outer.width, self.outer.height)

    def contains(self, points) -> np.ndarray:
        """Mask of points inside the outer rectangle and no hole interior."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        mask = self.outer.contains(pts)
        for h in self.holes:
            mask &= ~h.contains_open(pts)
        return mask

    def translated(self, dx: float, dy: float) -> "Window":
        return Window(
            self.outer.translated(dx, dy),
            tuple(h.translated(dx, dy) for h in self.holes),
        )


@dataclass(frozen=True)
class PointPattern:
    """Planar event locations observed inside a window."""

    points: np.ndarray
    window: Window

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 2).copy()
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)
        if len(pts) and not self.window.contains(pts).all():
            raise InvalidWindowError("pattern contains points outside the window")

    def __len__(self) -> int:
        return len(self.points)

    def translated(self, dx: float, dy: float) -> "PointPattern":
        return PointPattern(self.points + [dx, dy], self.window.translated(dx, dy))


@dataclass(frozen=True)
class RegularGrid:
    """Half-open square cells tiling the window's bounding rectangle.

    Cells are stored row-major: flat index ``iy * nx + ix``.  The masks
    partition the retained cells into observed cells (entirely inside the
    window minus holes) and prediction targets (interior meets a hole).
    """

    window: Window
    origin: tuple
    cell_side: float
    nx: int
    ny: int
    observed_mask: np.ndarray = field(repr=False)
    target_mask: np.ndarray = field(repr=False)

    def __post_init__(self):
        for name in ("observed_mask", "target_mask"):
            arr = np.asarray(getattr(self, name), dtype=bool).copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def cell_area(self) -> float:
        return self.cell_side ** 2

    @property
    def domain_area(self) -> float:
        """Total area covered by the retained cells."""
        return self.n_cells * self.cell_area

    @property
    def observed_area(self) -> float:
        return int(self.observed_mask.sum()) * self.cell_area

    @property
    def observed_indices(self) -> np.ndarray:
        return np.flatnonzero(self.observed_mask)

    @property
    def target_indices(self) -> np.ndarray:
        return np.flatnonzero(self.target_mask)

    @property
    def cell_ix(self) -> np.ndarray:
        return np.tile(np.arange(self.nx), self.ny)

    @property
    def cell_iy(self) -> np.ndarray:
        return np.repeat(np.arange(self.ny), self.nx)

    @property
    def cell_centers(self) -> np.ndarray:
        ox, oy = self.origin
        s = self.cell_side
        cx = ox + (self.cell_ix + 0.5) * s
        cy = oy + (self.cell_iy + 0.5) * s
        return np.column_stack([cx, cy])

    def cell_rect(self, index: int) -> Rect:
        ox, oy = self.origin
        s = self.cell_side
        ix = index % self.nx
        iy = index // self.nx
        return Rect(ox + ix * s, oy + iy * s, ox + (ix + 1) * s, oy + (iy + 1) * s)

    def locate(self, points) -> np.ndarray:
        """Flat cell index per point, or -1 for points on no retained cell."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        ox, oy = self.origin
        s = self.cell_side
        ix = np.floor((pts[:, 0] - ox) / s).astype(int)
        iy = np.floor((pts[:, 1] - oy) / s).astype(int)
        valid = (ix >= 0) & (ix < self.nx) & (iy >= 0) & (iy < self.ny)
        flat = np.where(valid, iy * self.nx + ix, -1)
        return flat

    def translated(self, dx: float, dy: float) -> "RegularGrid":
        return RegularGrid(
            self.window.translated(dx, dy),
            (self.origin[0] + dx, self.origin[1] + dy),
            self.cell_side, self.nx, self.ny,
            self.observed_mask, self.target_mask,
        )


@dataclass(frozen=True)
class CountField:
    """Cell counts of a pattern over a grid.

    Counts are kept only for observed cells (targets and border strips get
    zero), so the total equals the number of pattern points falling in
    observed cells.
    """

    grid: RegularGrid
    counts: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.asarray(self.counts, dtype=np.int64).copy()
        if arr.shape != (self.grid.n_cells,):
            raise ValueError("counts length must equal the number of grid cells")
        if (arr < 0).any():
            raise ValueError("counts must be nonnegative")
        arr.flags.writeable = False
        object.__setattr__(self, "counts", arr)

    @property
    def observed_counts(self) -> np.ndarray:
        return self.counts[self.grid.observed_indices]

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def build_grid(window: Window, cell_side: float) -> RegularGrid:
    """Tile the window's outer rectangle with half-open square cells.

    Cells straddling the outer boundary are dropped.  A retained cell is a
    prediction target when its interior overlaps a hole, observed
    otherwise.

    Raises
    ------
    InvalidMeshError
        If ``cell_side`` is nonpositive or no cell fits inside the outer
        rectangle.
    """
    if not cell_side > 0:
        raise InvalidMeshError(f"cell_side must be positive, got {cell_side}")
    outer = window.outer
    # Relative slack so an exact fit (e.g. 1.0 / 0.25) is not lost to rounding.
    nx = int(np.floor(outer.width / cell_side * (1 + 1e-12) + 1e-12))
    ny = int(np.floor(outer.height / cell_side * (1 + 1e-12) + 1e-12))
    if nx < 1 or ny < 1:
        raise InvalidMeshError(
            f"cell_side {cell_side} exceeds the window dimensions "
            f"{outer.width} x {outer.height}"
        )
    ox, oy = outer.xmin, outer.ymin
    n = nx * ny
    target = np.zeros(n, dtype=bool)
    if window.holes:
        ix = np.tile(np.arange(nx), ny)
        iy = np.repeat(np.arange(ny), nx)
        x0 = ox + ix * cell_side
        y0 = oy + iy * cell_side
        # Overlaps thinner than ~1e-9 cell sides are representation noise
        # (e.g. a hole edge at 0.3 against cells of side 0.1), not geometry.
        eps = 1e-9 * cell_side
        for h in window.holes:
            overlap = (
                (x0 + cell_side > h.xmin + eps) & (x0 + eps < h.xmax)
                & (y0 + cell_side > h.ymin + eps) & (y0 + eps < h.ymax)
            )
            target |= overlap
    observed = ~target
    return RegularGrid(window, (ox, oy), float(cell_side), nx, ny, observed, target)


def cell_counts(pattern: PointPattern, grid: RegularGrid) -> CountField:
    """Count pattern points per observed cell (half-open assignment).

    Points falling in target cells or outside the retained cells are not
    counted; their counts would be unusable for prediction anyway.
    """
    if pattern.window != grid.window:
        raise ValueError("pattern and grid must share the same window")
    counts = np.zeros(grid.n_cells, dtype=np.int64)
    if len(pattern):
        flat = grid.locate(pattern.points)
        flat = flat[flat >= 0]
        flat = flat[grid.observed_mask[flat]]
        np.add.at(counts, flat, 1)
    return CountField(grid, counts)
