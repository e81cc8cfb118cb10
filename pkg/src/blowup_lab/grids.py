"""Uniform-grid domains: intervals, rectangles, and graph windows.

A graph domain discretizes a boundary window: inside a rectangular frame of
lateral half-extent rho and vertical half-extent height (anchored so the graph
passes through the origin), the domain is the open sublevel set
{ y < graph_fn(x) }.  Node classes:

    INTERIOR       all stencil neighbors inside the domain
    TRUE_BOUNDARY  the discrete frontier at the graph (zero boundary distance);
                   for intervals/rectangles, the whole boundary
    WALL           artificial frame boundary (lateral sides and bottom)
    EXTERIOR       above the graph

Ties (a node exactly on the graph) classify as TRUE_BOUNDARY.  Fields live on
the full lattice with NaN on exterior/undefined nodes; the frame axis used by
lattice shifts points toward the graph (last axis, increasing coordinate).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "DomainSpec",
    "Grid",
    "GridField",
    "NodeClass",
    "GridError",
    "build_grid",
    "boundary_distance",
    "laplacian_apply",
    "shift_field",
    "inner_domains",
    "outer_domains",
    "dirichlet_data",
    "ball_window",
]


class GridError(ValueError):
    pass


class NodeClass(IntEnum):
    INTERIOR = 0
    TRUE_BOUNDARY = 1   # zero-distance (graph/domain) boundary
    WALL = 2            # artificial lateral-or-bottom frame boundary
    EXTERIOR = 3


@dataclass(frozen=True)
class DomainSpec:
    """Geometry declaration for a grid domain.

    interval:     bounds = (a, b)
    rectangle:    bounds = ((x0, x1), (y0, y1))
    graph_domain: graph_fn F with F(0) = 0, frame extents rho (lateral
                  half-width) and height (vertical half-extent)
    """

    kind: str
    bounds: tuple = None
    graph_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None
    rho: float = None
    height: float = None
    anchored: bool = True  # require graph_fn(0) = 0 (internal retractions opt out)

    def __post_init__(self):
        if self.kind == "interval":
            a, b = self.bounds
            if not b > a:
                raise GridError("interval bounds must be ordered")
        elif self.kind == "rectangle":
            (x0, x1), (y0, y1) = self.bounds
            if not (x1 > x0 and y1 > y0):
                raise GridError("rectangle bounds must be ordered")
        elif self.kind == "graph_domain":
            if self.graph_fn is None or self.rho is None or self.height is None:
                raise GridError("graph_domain needs graph_fn, rho, height")
            if self.anchored and abs(float(self.graph_fn(0.0))) > 1e-9:
                raise GridError("graph function must vanish at the window anchor")
        else:
            raise GridError(f"unknown domain kind {self.kind!r}")


@dataclass(frozen=True)
class Grid:
    spacing: float
    axes: tuple  # one or two coordinate arrays
    node_class: np.ndarray
    distance: np.ndarray  # distance to the true (zero-data) boundary
    domain: DomainSpec

    @property
    def ndim(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple:
        return self.node_class.shape

    def mask(self, *classes: NodeClass) -> np.ndarray:
        out = np.zeros(self.shape, dtype=bool)
        for c in classes:
            out |= self.node_class == c
        return out

    @property
    def interior(self) -> np.ndarray:
        return self.node_class == NodeClass.INTERIOR

    @property
    def boundary(self) -> np.ndarray:
        return self.mask(NodeClass.TRUE_BOUNDARY, NodeClass.WALL)

    @property
    def exterior(self) -> np.ndarray:
        return self.node_class == NodeClass.EXTERIOR

    def coords(self) -> tuple:
        if self.ndim == 1:
            return (self.axes[0],)
        return tuple(np.meshgrid(*self.axes, indexing="ij"))


@dataclass
class GridField:
    """Nodal values on a grid; NaN marks exterior or undefined nodes."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise GridError("field shape does not match grid")

    def copy(self) -> "GridField":
        return GridField(self.grid, self.values.copy())

    @property
    def defined(self) -> np.ndarray:
        return np.isfinite(self.values)


def _axis(lo: float, hi: float, h: float, what: str) -> np.ndarray:
    n = (hi - lo) / h
    n_round = round(n)
    if n_round < 1 or abs(n - n_round) > 1e-9 * max(1.0, abs(n)):
        raise GridError(f"spacing {h} does not divide the {what} extent [{lo}, {hi}]")
    return lo + h * np.arange(n_round + 1)


def build_grid(spec: DomainSpec, spacing: float) -> Grid:
    """Discretize a domain on a uniform lattice and classify every node."""
    if spacing <= 0:
        raise GridError("spacing must be positive")
    h = float(spacing)

    if spec.kind == "interval":
        a, b = spec.bounds
        xs = _axis(a, b, h, "interval")
        cls = np.full(xs.shape, NodeClass.INTERIOR, dtype=np.int8)
        cls[0] = cls[-1] = NodeClass.TRUE_BOUNDARY
        dist = np.minimum(xs - a, b - xs)
        return Grid(h, (xs,), cls, dist, spec)

    if spec.kind == "rectangle":
        (x0, x1), (y0, y1) = spec.bounds
        xs = _axis(x0, x1, h, "x")
        ys = _axis(y0, y1, h, "y")
        cls = np.full((xs.size, ys.size), NodeClass.INTERIOR, dtype=np.int8)
        cls[0, :] = cls[-1, :] = NodeClass.TRUE_BOUNDARY
        cls[:, 0] = cls[:, -1] = NodeClass.TRUE_BOUNDARY
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        dist = np.minimum.reduce([X - x0, x1 - X, Y - y0, y1 - Y])
        return Grid(h, (xs, ys), cls, dist, spec)

    # graph window: frame [-rho, rho] x [-height, height], domain below the graph
    rho, height = float(spec.rho), float(spec.height)
    xs = _axis(-rho, rho, h, "lateral")
    ys = _axis(-height, height, h, "vertical")
    F = np.asarray(spec.graph_fn(xs), dtype=float)
    if np.any(F > height - 2 * h) or np.any(F < -height + 2 * h):
        raise GridError("graph must stay 2h away from the frame top and bottom")

    Y = ys[None, :]
    tie_tol = 1e-9 * h
    below = Y < F[:, None] - tie_tol
    on_graph = np.abs(Y - F[:, None]) <= tie_tol
    inside = below | on_graph

    cls = np.full((xs.size, ys.size), NodeClass.EXTERIOR, dtype=np.int8)
    cls[below] = NodeClass.INTERIOR
    # artificial frame pieces inside the domain: lateral columns and bottom row
    cls[0, :][below[0, :]] = NodeClass.WALL
    cls[-1, :][below[-1, :]] = NodeClass.WALL
    cls[:, 0][below[:, 0]] = NodeClass.WALL
    # discrete frontier at the graph: interior nodes with a non-inside neighbor
    frontier = np.zeros_like(below)
    pad = np.zeros((xs.size, 1), dtype=bool)
    up_outside = ~np.concatenate([inside[:, 1:], pad], axis=1)
    left_outside = ~np.concatenate([inside[:1, :] * False, inside[:-1, :]], axis=0)
    right_outside = ~np.concatenate([inside[1:, :], inside[-1:, :] * False], axis=0)
    frontier = below & up_outside
    frontier |= below & (left_outside | right_outside)
    cls[(cls == NodeClass.INTERIOR) & frontier] = NodeClass.TRUE_BOUNDARY
    cls[on_graph] = NodeClass.TRUE_BOUNDARY

    dist = _graph_distance(xs, ys, spec.graph_fn, h)
    dist[cls == NodeClass.EXTERIOR] = np.nan
    return Grid(h, (xs, ys), cls, dist, spec)


def _graph_distance(xs, ys, graph_fn, h) -> np.ndarray:
    """Distance to the sampled graph polyline, O(h)-accurate."""
    fine = np.linspace(xs[0], xs[-1], 4 * (xs.size - 1) + 1)
    gy = np.asarray(graph_fn(fine), dtype=float)
    ax, ay = fine[:-1], gy[:-1]
    bx, by = fine[1:], gy[1:]
    ex, ey = bx - ax, by - ay
    seg2 = ex * ex + ey * ey

    X, Y = np.meshgrid(xs, ys, indexing="ij")
    P = np.stack([X.ravel(), Y.ravel()], axis=1)
    out = np.full(P.shape[0], np.inf)
    # chunk over nodes to bound the broadcast
    step = max(1, 2_000_000 // max(ax.size, 1))
    for i0 in range(0, P.shape[0], step):
        px = P[i0:i0 + step, 0][:, None]
        py = P[i0:i0 + step, 1][:, None]
        t = ((px - ax) * ex + (py - ay) * ey) / seg2
        t = np.clip(t, 0.0, 1.0)
        dx = px - (ax + t * ex)
        dy = py - (ay + t * ey)
        out[i0:i0 + step] = np.sqrt(dx * dx + dy * dy).min(axis=1)
    return out.reshape(X.shape)


def boundary_distance(grid: Grid) -> GridField:
    """Distance to the true domain boundary as a field (NaN on exterior)."""
    vals = np.array(grid.distance, dtype=float, copy=True)
    vals[grid.exterior] = np.nan
    return GridField(grid, vals)


def laplacian_apply(fld: GridField) -> GridField:
    """Second-order discrete Laplacian on interior nodes (3/5-point stencil);
    boundary nodes pass through untouched, exterior stays NaN."""
    g = fld.grid
    u = fld.values
    h2 = g.spacing * g.spacing
    out = np.array(u, copy=True)
    if g.ndim == 1:
        lap = (u[:-2] - 2.0 * u[1:-1] + u[2:]) / h2
        core = g.interior[1:-1]
        out[1:-1][core] = lap[core]
    else:
        lap = (
            u[:-2, 1:-1] + u[2:, 1:-1] + u[1:-1, :-2] + u[1:-1, 2:]
            - 4.0 * u[1:-1, 1:-1]
        ) / h2
        core = g.interior[1:-1, 1:-1]
        out[1:-1, 1:-1][core] = lap[core]
    out[g.exterior] = np.nan
    return GridField(g, out)


def shift_field(fld: GridField, steps: int) -> GridField:
    """Sample the field at nodes shifted by steps*h along the frame axis
    (toward the graph / upper end).  Output nodes whose source leaves the
    lattice or lands on an undefined node carry NaN."""
    if steps < 0 or int(steps) != steps:
        raise GridError("steps must be a nonnegative integer")
    steps = int(steps)
    g = fld.grid
    u = fld.values
    n_axis = u.shape[-1]
    if steps >= n_axis:
        first = (0,) * (u.ndim - 1) + (0,)
        raise GridError(
            f"shift of {steps} steps escapes the lattice at node index {first}"
        )
    out = np.full_like(u, np.nan)
    if u.ndim == 1:
        out[: n_axis - steps] = u[steps:]
    else:
        out[:, : n_axis - steps] = u[:, steps:]
    return GridField(g, out)


def inner_domains(
    spec: DomainSpec,
    count: int,
    margin0: float = None,
    decay: float = 0.5,
    spacing: float = None,
) -> list:
    """Domains inset from the boundary by geometrically decaying margins,
    each compactly contained in the next.  With a spacing, margins snap to
    lattice multiples and unresolvable ones (below 2h) are dropped."""
    return _margin_domains(spec, count, margin0, decay, spacing, sign=-1)


def outer_domains(
    spec: DomainSpec,
    count: int,
    margin0: float = None,
    decay: float = 0.5,
    spacing: float = None,
) -> list:
    """Domains outset from the boundary by geometrically decaying margins,
    each containing the closure of the next."""
    return _margin_domains(spec, count, margin0, decay, spacing, sign=+1)


def _margin_domains(spec, count, margin0, decay, spacing, sign):
    if count < 1:
        raise GridError("count must be >= 1")
    if spec.kind == "graph_domain":
        raise GridError("domain sequences are defined for interval/rectangle domains")
    if margin0 is None:
        margin0 = 0.2 * _min_extent(spec)
    margins = [margin0 * decay ** k for k in range(count)]
    if spacing is not None:
        snapped = []
        for m in margins:
            m_s = round(m / spacing) * spacing
            if m_s < 2 * spacing - 1e-12:
                continue  # unresolvable at this spacing
            if snapped and m_s >= snapped[-1] - 1e-12:
                continue  # would break strict nesting after snapping
            snapped.append(m_s)
        margins = snapped
    out = []
    for m in margins:
        if sign < 0 and 2 * m >= _min_extent(spec):
            continue  # inset would collapse the domain
        out.append(_offset_domain(spec, sign * m))
    return out


def _min_extent(spec: DomainSpec) -> float:
    if spec.kind == "interval":
        a, b = spec.bounds
        return b - a
    (x0, x1), (y0, y1) = spec.bounds
    return min(x1 - x0, y1 - y0)


def _offset_domain(spec: DomainSpec, delta: float) -> DomainSpec:
    """Offset the boundary outward by delta (inward when delta < 0)."""
    if spec.kind == "interval":
        a, b = spec.bounds
        return replace(spec, bounds=(a - delta, b + delta))
    (x0, x1), (y0, y1) = spec.bounds
    return replace(spec, bounds=((x0 - delta, x1 + delta), (y0 - delta, y1 + delta)))


def dirichlet_data(grid: Grid, true_boundary=0.0, wall=0.0) -> GridField:
    """Boundary-data field: values on TRUE_BOUNDARY and WALL nodes, NaN elsewhere.
    Scalars broadcast; callables receive node coordinates."""
    vals = np.full(grid.shape, np.nan)
    for value, cls in ((true_boundary, NodeClass.TRUE_BOUNDARY), (wall, NodeClass.WALL)):
        m = grid.node_class == cls
        if callable(value):
            coords = grid.coords()
            vals[m] = value(*(c[m] for c in coords))
        else:
            vals[m] = value
    return GridField(grid, vals)


def ball_window(grid: Grid, z_lateral: float, radius: float) -> Grid:
    """Restrict a graph-domain grid to the ball of given radius around the
    boundary point (z, F(z)): nodes outside become exterior, the discrete
    sphere crossing becomes WALL (artificial data carrier), and the graph
    frontier inside the ball keeps zero-distance class."""
    if grid.domain.kind != "graph_domain":
        raise GridError("ball windows are defined on graph domains")
    h = grid.spacing
    zx = float(z_lateral)
    zy = float(grid.domain.graph_fn(zx))
    xs, ys = grid.axes
    if radius < 8 * h:
        raise GridError("ball must span at least 8 nodes across")
    if abs(zx) + radius > grid.domain.rho - 2 * h or radius > grid.domain.height - 2 * h:
        raise GridError("ball does not fit inside the grid frame")

    X, Y = np.meshgrid(xs, ys, indexing="ij")
    in_ball = (X - zx) ** 2 + (Y - zy) ** 2 < radius ** 2
    inside = in_ball & ~grid.exterior

    cls = np.full(grid.shape, NodeClass.EXTERIOR, dtype=np.int8)
    cls[inside] = NodeClass.INTERIOR
    # sphere crossing: inside nodes with a 4-neighbor outside the window
    nb_out = np.zeros_like(inside)
    nb_out[1:, :] |= ~inside[:-1, :]
    nb_out[:-1, :] |= ~inside[1:, :]
    nb_out[:, 1:] |= ~inside[:, :-1]
    nb_out[:, :-1] |= ~inside[:, 1:]
    sphere = inside & nb_out
    # graph frontier keeps its zero-distance class inside the ball
    graph_part = inside & (grid.node_class == NodeClass.TRUE_BOUNDARY)
    cls[sphere] = NodeClass.WALL
    cls[graph_part] = NodeClass.TRUE_BOUNDARY

    dist = np.array(grid.distance, copy=True)
    dist[cls == NodeClass.EXTERIOR] = np.nan
    return Grid(h, grid.axes, cls, dist, grid.domain)
