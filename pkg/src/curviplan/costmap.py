"""2D occupancy grid with exponential obstacle inflation.

Collision checking happens in Euclidean space: curvilinear edges are
discretized, mapped through the frame's unique map, and the mapped points
queried against the grid.  A built Costmap is an immutable snapshot; map
updates swap in a whole new one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

DEFAULT_RESOLUTION = 0.05      # m / cell
DEFAULT_INFLATION = 0.30       # m, buffer around raw obstacles
DEFAULT_THRESHOLD = 0.5        # occupancy decision level
DEFAULT_EDGE_STEP = 0.10       # m, edge discretization for collision checks


class EmptyGrid(ValueError):
    """Grid with zero width or height."""


# ----------------------------------------------------------------------
# obstacle shapes
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class Circle:
    center: tuple
    radius: float
    reveal_radius: float = None

    def contains(self, x, y):
        return (x - self.center[0]) ** 2 + (y - self.center[1]) ** 2 <= self.radius ** 2

    def reference_point(self):
        return np.asarray(self.center, dtype=float)

    def extent(self):
        return self.radius


@dataclass(frozen=True)
class Rectangle:
    """Axis-aligned box given by center and full side lengths."""

    center: tuple
    size: tuple
    reveal_radius: float = None

    def contains(self, x, y):
        hx, hy = self.size[0] / 2.0, self.size[1] / 2.0
        return (np.abs(x - self.center[0]) <= hx) & (np.abs(y - self.center[1]) <= hy)

    def reference_point(self):
        return np.asarray(self.center, dtype=float)

    def extent(self):
        return 0.5 * float(np.hypot(*self.size))


@dataclass(frozen=True)
class Polygon:
    """Convex polygon, vertices in counter-clockwise order."""

    vertices: tuple
    reveal_radius: float = None

    def contains(self, x, y):
        v = np.asarray(self.vertices, dtype=float)
        inside = np.ones(np.broadcast(x, y).shape, dtype=bool)
        for i in range(len(v)):
            a, b = v[i], v[(i + 1) % len(v)]
            inside &= (b[0] - a[0]) * (y - a[1]) - (b[1] - a[1]) * (x - a[0]) >= 0
        return inside

    def reference_point(self):
        return np.mean(np.asarray(self.vertices, dtype=float), axis=0)

    def extent(self):
        c = self.reference_point()
        return float(np.max(np.linalg.norm(np.asarray(self.vertices) - c, axis=1)))


# ----------------------------------------------------------------------
# the grid
# ----------------------------------------------------------------------

@dataclass
class Costmap:
    origin: tuple              # (x, y) of the lower-left cell corner
    resolution: float          # m per cell
    width: int                 # cells in x
    height: int                # cells in y
    occupancy: np.ndarray      # (height, width) cost in [0, 1], row-major
    inflation_radius: float = DEFAULT_INFLATION
    occupied_threshold: float = DEFAULT_THRESHOLD
    version: int = 0           # bumped by snapshot swaps; planners cache per version

    def cell_of(self, x, y):
        ix = np.floor((np.asarray(x) - self.origin[0]) / self.resolution).astype(int)
        iy = np.floor((np.asarray(y) - self.origin[1]) / self.resolution).astype(int)
        return ix, iy

    def cost_at(self, x, y):
        """Cell cost at point(s); 0 outside the grid."""
        ix, iy = self.cell_of(x, y)
        inside = (ix >= 0) & (ix < self.width) & (iy >= 0) & (iy < self.height)
        out = np.zeros(np.shape(ix), dtype=float)
        if np.ndim(ix) == 0:
            return float(self.occupancy[iy, ix]) if inside else 0.0
        out[inside] = self.occupancy[iy[inside], ix[inside]]
        return out

    def is_occupied(self, x, y):
        """Occupancy decision; points outside the grid are free."""
        return self.cost_at(x, y) >= self.occupied_threshold

    def to_pgm(self) -> str:
        """ASCII PGM dump (P2 grayscale, row-major, top row first)."""
        img = np.flipud((255 * (1.0 - self.occupancy)).astype(int))
        lines = [f"P2", f"{self.width} {self.height}", "255"]
        lines += [" ".join(str(v) for v in row) for row in img]
        return "\n".join(lines) + "\n"


def empty_costmap(origin, width_m, height_m, resolution=DEFAULT_RESOLUTION,
                  inflation_radius=DEFAULT_INFLATION,
                  occupied_threshold=DEFAULT_THRESHOLD) -> Costmap:
    w = int(round(width_m / resolution))
    h = int(round(height_m / resolution))
    if w <= 0 or h <= 0:
        raise EmptyGrid("costmap must have nonzero extent")
    return Costmap(tuple(origin), resolution, w, h, np.zeros((h, w)),
                   inflation_radius, occupied_threshold)


def rasterize_obstacles(obstacles, origin, width_m, height_m,
                        resolution=DEFAULT_RESOLUTION,
                        inflation_radius=DEFAULT_INFLATION,
                        occupied_threshold=DEFAULT_THRESHOLD,
                        version=0) -> Costmap:
    """Rasterize shapes into an inflated costmap.

    Raw cells get cost 1; cells within the inflation radius get
    exp(-k costd) with k chosen so the cost reaches the occupancy threshold
    exactly at the inflation radius (and is truncated to 0 from there out).
    """
    grid = empty_costmap(origin, width_m, height_m, resolution,
                         inflation_radius, occupied_threshold)
    if not obstacles:
        return grid
    xs = grid.origin[0] + (np.arange(grid.width) + 0.5) * resolution
    ys = grid.origin[1] + (np.arange(grid.height) + 0.5) * resolution
    gx, gy = np.meshgrid(xs, ys)
    raw = np.zeros_like(gx, dtype=bool)
    for obs in obstacles:
        raw |= obs.contains(gx, gy)
    if raw.any():
        dist = ndimage.distance_transform_edt(~raw, sampling=resolution)
        k = -np.log(occupied_threshold) / inflation_radius
        cost = np.exp(-k * dist)
        cost[dist >= inflation_radius] = 0.0
        cost[raw] = 1.0
        grid.occupancy = cost
    grid.version = version
    return grid


def collision_check_edge(grid: Costmap, frame, a, b,
                         step: float = DEFAULT_EDGE_STEP) -> bool:
    """True when the straight curvilinear edge a-b is collision free.

    The edge is discretized every `step` (endpoints included), each sample
    mapped to Euclidean space and tested against the grid.  Wormhole edges
    must not be passed here; they are checked at their shared endpoint only.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n = max(1, int(np.ceil(np.linalg.norm(b - a) / step)))
    t = np.linspace(0.0, 1.0, n + 1)
    ps = a[0] + t * (b[0] - a[0])
    qs = a[1] + t * (b[1] - a[1])
    pts = frame.curv_to_euclid(ps, qs)
    return not bool(np.any(grid.is_occupied(pts[:, 0], pts[:, 1])))
