"""Discrete semilinear Dirichlet solves: -lap(u) + f(x,u) = 0, u = b on the boundary.

For f nondecreasing in u the discrete problem is the Euler-Lagrange system of a
strictly convex energy

    E(u) = 1/2 u.A u - u.b_lift + sum_i G(x_i, u_i),   G(x, t) = int_0^t f(x, s) ds,

so a damped Newton iteration with an energy-decrease line search converges to
the unique solution from any start.  The linearization uses secant slopes of
r -> f(x, r) over the last step (f may be non-differentiable, e.g. staircase
profiles) with a positive slope floor as proximal regularization.  Boundary
data enters by node elimination, and the initial iterate is the discrete
harmonic extension of the data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grids import Grid, GridField, NodeClass, GridError
from .nonlinearity import NonlinearitySpec, GTransform, eval_f

__all__ = [
    "SolveConfig",
    "SolveReport",
    "SolveError",
    "solve_dirichlet",
    "residual",
    "is_supersolution",
    "is_subsolution",
    "monotone_iterate",
]

Nonlinearity = Union[NonlinearitySpec, GTransform]

_EPS = np.finfo(float).eps
_GL_XI, _GL_WI = np.polynomial.legendre.leggauss(32)


class SolveError(RuntimeError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


@dataclass
class SolveConfig:
    newton_tol: float = 1e-10
    newton_max_iter: int = 200
    damping: float = 0.5          # backtracking factor
    max_backtracks: int = 40
    fallback: bool = True         # monotone iteration when Newton stalls
    slope_floor: float = 1e-8     # proximal floor on the linearized diagonal

    def __post_init__(self):
        if self.newton_tol <= 0 or self.newton_max_iter < 1:
            raise ValueError("newton_tol and newton_max_iter must be positive")
        if not 0 < self.damping < 1:
            raise ValueError("damping factor must lie in (0,1)")


@dataclass
class SolveReport:
    field: GridField
    residual_sup: float
    iterations: int
    energy: float
    bracket_verified: tuple          # (is_subsolution, is_supersolution) of the result
    converged: bool = True
    residual_floor: float = 0.0      # round-off scale of the residual evaluation
    method: str = "newton"
    details: dict = field(default_factory=dict)


def _nl_eval(nl: Nonlinearity, d, r):
    if isinstance(nl, GTransform):
        return nl.eval(d, r)
    return eval_f(nl, d, r)


def _check_monotone(nl: Nonlinearity, r_max: float = None):
    """Precondition: f nondecreasing in r (declared metadata plus a sampled scan)."""
    if isinstance(nl, GTransform):
        if np.any(np.diff(nl.values) < -1e-12 * max(1.0, float(nl.values.max(initial=0.0)))):
            raise SolveError("transform table decreasing in r; convex energy unavailable")
        return
    if not nl.monotone_in_r:
        raise SolveError("nonlinearity declared decreasing in r; convex energy unavailable")
    if r_max is not None and r_max > 0:
        rs = np.linspace(0.0, 1.05 * r_max, 257)
        vals = np.asarray(nl.profile(rs), dtype=float)
        if np.any(np.diff(vals) < -1e-10 * max(1.0, float(np.abs(vals).max()))):
            raise SolveError("nonlinearity decreasing in r on the sampled range")


class _Discretization:
    """Eliminated-boundary operator A (the negative Laplacian) plus data lift."""

    def __init__(self, grid: Grid, boundary: GridField, weight_distance=None):
        self.grid = grid
        h2 = grid.spacing ** 2
        interior = grid.interior
        self.int_idx = np.flatnonzero(interior.ravel())
        self.n = self.int_idx.size
        if self.n == 0:
            raise GridError("no interior nodes at this spacing")
        lut = -np.ones(interior.size, dtype=np.int64)
        lut[self.int_idx] = np.arange(self.n)

        shape = grid.shape
        strides = (1,) if grid.ndim == 1 else (shape[1], 1)
        bvals = boundary.values.ravel()
        cls = grid.node_class.ravel()

        rows, cols, data = [], [], []
        lift = np.zeros(self.n)
        diag = np.full(self.n, 2.0 * grid.ndim / h2)
        multi = np.unravel_index(self.int_idx, shape)
        for ax, stride in enumerate(strides):
            for sgn in (-1, +1):
                nb = self.int_idx + sgn * stride
                # interior nodes always have in-lattice stencil neighbors
                edge_ok = np.ones(self.n, dtype=bool)
                pos = multi[ax] + sgn
                edge_ok &= (pos >= 0) & (pos < shape[ax])
                if not edge_ok.all():
                    raise GridError("interior node with stencil neighbor off the lattice")
                nb_cls = cls[nb]
                if np.any(nb_cls == NodeClass.EXTERIOR):
                    raise GridError("interior node with exterior stencil neighbor")
                is_int = nb_cls == NodeClass.INTERIOR
                rows.append(np.flatnonzero(is_int))
                cols.append(lut[nb[is_int]])
                data.append(np.full(is_int.sum(), -1.0 / h2))
                is_bd = ~is_int
                bd_vals = bvals[nb[is_bd]]
                if np.any(~np.isfinite(bd_vals)):
                    raise GridError("boundary node adjacent to the interior lacks data")
                lift_idx = np.flatnonzero(is_bd)
                np.add.at(lift, lift_idx, bd_vals / h2)

        rows.append(np.arange(self.n))
        cols.append(np.arange(self.n))
        data.append(diag)
        self.A = sp.csc_matrix(
            (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.n, self.n),
        )
        self.abs_A = sp.csr_matrix(abs(self.A))
        self.lift = lift
        self.h2 = h2
        if weight_distance is not None:
            self.d_int = np.asarray(weight_distance, dtype=float).ravel()[self.int_idx]
        else:
            self.d_int = grid.distance.ravel()[self.int_idx]
        self.bvals = bvals

    def full_field(self, u_int: np.ndarray) -> np.ndarray:
        out = np.array(self.bvals, copy=True)
        out[self.grid.exterior.ravel()] = np.nan
        out[self.int_idx] = u_int
        return out.reshape(self.grid.shape)

    def harmonic(self) -> np.ndarray:
        return spla.spsolve(self.A, self.lift)

    def residual_floors(self, u_int: np.ndarray, f_vals: np.ndarray) -> np.ndarray:
        """Nodewise round-off scale of the residual evaluation: near a huge data
        node the achievable residual is bounded by cancellation in the stencil,
        while deep-interior nodes resolve to machine precision."""
        mag = self.abs_A @ np.abs(u_int) + np.abs(self.lift) + np.abs(f_vals)
        return 4.0 * _EPS * mag


def _cumulative_G(nl: Nonlinearity, d: np.ndarray, u: np.ndarray) -> np.ndarray:
    """G(x_i, u_i) by 32-point Gauss-Legendre on [0, u_i], vectorized over nodes."""
    t = 0.5 * (u[:, None]) * (_GL_XI[None, :] + 1.0)
    vals = _nl_eval(nl, d[:, None], np.maximum(t, 0.0))
    return 0.5 * u * (vals @ _GL_WI)


def solve_dirichlet(
    nl: Nonlinearity,
    grid: Grid,
    boundary: GridField,
    cfg: SolveConfig = None,
    initial: GridField = None,
    weight_distance: np.ndarray = None,
) -> SolveReport:
    """Solve the discrete Dirichlet problem by damped Newton on the convex energy.

    The iteration stops when the interior residual sup-norm falls below
    max(newton_tol, round-off floor of the residual evaluation).  On a Newton
    stall the monotone-iteration fallback runs when enabled and the data is
    nonnegative; otherwise the best iterate is attached to the raised error.
    """
    cfg = cfg or SolveConfig()
    b_finite = boundary.values[np.isfinite(boundary.values)]
    _check_monotone(nl, float(np.abs(b_finite).max(initial=0.0)))
    disc = _Discretization(grid, boundary, weight_distance)
    d = disc.d_int
    A, lift = disc.A, disc.lift

    if initial is not None:
        u = initial.values.ravel()[disc.int_idx].astype(float).copy()
        if np.any(~np.isfinite(u)):
            raise SolveError("initial iterate undefined on interior nodes")
    else:
        u = disc.harmonic()

    def energy(v, fv=None):
        G = _cumulative_G(nl, d, v)
        return 0.5 * float(v @ (A @ v)) - float(v @ lift) + float(G.sum())

    def res_of(v):
        fv = np.asarray(_nl_eval(nl, d, np.maximum(v, 0.0)), dtype=float)
        return A @ v - lift + fv, fv

    u_prev = u + np.maximum(1.0, np.abs(u)) * 1e-6
    E = energy(u)
    res, f_vals = res_of(u)
    floors = disc.residual_floors(u, f_vals)

    def done(r, fl):
        return bool(np.all(np.abs(r) <= np.maximum(cfg.newton_tol, fl)))

    iters = 0
    energies = [E]
    stalled = False

    while not done(res, floors) and iters < cfg.newton_max_iter:
        iters += 1
        du = u - u_prev
        safe = np.abs(du) > 1e-14 * np.maximum(1.0, np.abs(u))
        f_prev = np.asarray(_nl_eval(nl, d, np.maximum(u_prev, 0.0)), dtype=float)
        slopes = np.where(safe, (f_vals - f_prev) / np.where(safe, du, 1.0), 0.0)
        slopes = np.maximum(slopes, cfg.slope_floor)

        J = A + sp.diags(slopes)
        delta = spla.spsolve(sp.csc_matrix(J), -res)
        t = 1.0
        accepted = False
        for _ in range(cfg.max_backtracks):
            u_try = u + t * delta
            E_try = energy(u_try)
            if E_try <= E + 1e-12 * (1.0 + abs(E)):
                accepted = True
                break
            t *= cfg.damping
        if not accepted:
            stalled = True
            break
        u_prev = u
        u = u_try
        E = E_try
        energies.append(E)
        res, f_vals = res_of(u)
        floors = disc.residual_floors(u, f_vals)

    res_sup = float(np.abs(res).max())
    floor_max = float(floors.max(initial=0.0))
    if not done(res, floors):
        fld = GridField(grid, disc.full_field(u))
        best = SolveReport(fld, res_sup, iters, E, (False, False), converged=False,
                           residual_floor=floor_max, details={"stalled": stalled})
        finite_b = disc.bvals[np.isfinite(disc.bvals)]
        if cfg.fallback and finite_b.size and np.all(finite_b >= 0):
            return _fallback_monotone(nl, grid, boundary, cfg, disc)
        raise SolveError(
            "Newton stalled" if stalled else "Newton iteration cap reached", best
        )

    fld = GridField(grid, disc.full_field(u))
    check_tol = 2.0 * max(cfg.newton_tol, floor_max)
    sub_ok, _ = is_subsolution(nl, grid, fld, check_tol, weight_distance)
    sup_ok, _ = is_supersolution(nl, grid, fld, check_tol, weight_distance)
    return SolveReport(
        field=fld,
        residual_sup=res_sup,
        iterations=iters,
        energy=E,
        bracket_verified=(sub_ok, sup_ok),
        converged=True,
        residual_floor=floor_max,
        details={"energy_trace": energies},
    )


def _fallback_monotone(nl, grid, boundary, cfg, disc):
    M = float(np.nanmax(boundary.values))
    sub = GridField(grid, np.where(grid.exterior, np.nan, 0.0))
    sup_vals = np.where(grid.exterior, np.nan, M)
    bmask = grid.boundary
    sup_vals[bmask] = boundary.values[bmask]
    sub.values[bmask] = boundary.values[bmask]
    sup = GridField(grid, sup_vals)
    rep = monotone_iterate(nl, grid, boundary, sub, sup, cfg)
    rep.details["fallback"] = True
    return rep


def residual(
    nl: Nonlinearity,
    grid: Grid,
    fld: GridField,
    weight_distance: np.ndarray = None,
) -> GridField:
    """-lap(u) + f(x,u) on interior nodes; NaN where the stencil is undefined."""
    u = fld.values
    h2 = grid.spacing ** 2
    out = np.full(grid.shape, np.nan)
    dmat = grid.distance if weight_distance is None else np.asarray(weight_distance)
    if grid.ndim == 1:
        neg_lap = (2.0 * u[1:-1] - u[:-2] - u[2:]) / h2
        core = grid.interior[1:-1]
        f_core = _nl_eval(nl, dmat[1:-1][core], np.maximum(u[1:-1][core], 0.0))
        vals = np.full(u.size - 2, np.nan)
        vals[core] = neg_lap[core] + f_core
        out[1:-1] = vals
    else:
        neg_lap = (
            4.0 * u[1:-1, 1:-1]
            - u[:-2, 1:-1] - u[2:, 1:-1] - u[1:-1, :-2] - u[1:-1, 2:]
        ) / h2
        core = grid.interior[1:-1, 1:-1]
        f_core = _nl_eval(nl, dmat[1:-1, 1:-1][core], np.maximum(u[1:-1, 1:-1][core], 0.0))
        vals = np.full(neg_lap.shape, np.nan)
        vals[core] = neg_lap[core] + f_core
        out[1:-1, 1:-1] = vals
    return GridField(grid, out)


@dataclass
class WorstNode:
    index: tuple
    coords: tuple
    value: float


def _worst(grid: Grid, res_vals: np.ndarray, mode: str) -> Optional[WorstNode]:
    finite = np.isfinite(res_vals)
    if not finite.any():
        return None
    masked = np.where(finite, res_vals, np.nan)
    flat = np.nanargmin(masked) if mode == "min" else np.nanargmax(masked)
    idx = np.unravel_index(flat, res_vals.shape)
    coords = tuple(float(grid.axes[ax][idx[ax]]) for ax in range(grid.ndim))
    return WorstNode(tuple(int(i) for i in idx), coords, float(res_vals[idx]))


def is_supersolution(
    nl: Nonlinearity,
    grid: Grid,
    fld: GridField,
    tol: float,
    weight_distance: np.ndarray = None,
    where: np.ndarray = None,
):
    """True iff -lap(u) + f(x,u) >= -tol on checked interior nodes.
    Returns (ok, worst-node report); NaN residuals (undefined stencil) are skipped."""
    res = residual(nl, grid, fld, weight_distance).values
    if where is not None:
        res = np.where(where, res, np.nan)
    worst = _worst(grid, res, "min")
    if worst is None:
        return True, None
    return worst.value >= -tol, worst


def is_subsolution(
    nl: Nonlinearity,
    grid: Grid,
    fld: GridField,
    tol: float,
    weight_distance: np.ndarray = None,
    where: np.ndarray = None,
):
    """Mirror check: -lap(u) + f(x,u) <= tol on checked interior nodes."""
    res = residual(nl, grid, fld, weight_distance).values
    if where is not None:
        res = np.where(where, res, np.nan)
    worst = _worst(grid, res, "max")
    if worst is None:
        return True, None
    return worst.value <= tol, worst


def monotone_iterate(
    nl: Nonlinearity,
    grid: Grid,
    boundary: GridField,
    sub: GridField,
    super_: GridField,
    cfg: SolveConfig = None,
    start: str = "super",
    weight_distance: np.ndarray = None,
    max_sweeps: int = 5000,
) -> SolveReport:
    """Monotone iteration between a verified sub/supersolution bracket.

    Each sweep solves (A + lam) u_next = lam u - f(x,u) + lift, with lam at
    least the secant slope bound of f over the bracket range, so the iterates
    move monotonically from the chosen end and stay inside the bracket.
    """
    cfg = cfg or SolveConfig()
    _check_monotone(nl)
    disc = _Discretization(grid, boundary, weight_distance)
    d = disc.d_int
    lo = sub.values.ravel()[disc.int_idx]
    hi = super_.values.ravel()[disc.int_idx]
    slack = 10.0 * cfg.newton_tol
    if np.any(lo > hi + slack * np.maximum(1.0, np.abs(hi))):
        raise SolveError("bracket violated: sub exceeds super")
    ok_sub, w = is_subsolution(nl, grid, sub, slack * _scale(lo), weight_distance)
    if not ok_sub:
        raise SolveError(f"sub iterate is not a subsolution (worst node {w})")
    ok_sup, w = is_supersolution(nl, grid, super_, slack * _scale(hi), weight_distance)
    if not ok_sup:
        raise SolveError(f"super iterate is not a supersolution (worst node {w})")

    # secant slope bound of f over the bracket, per node
    r_lo, r_hi = float(np.min(lo)), float(np.max(hi))
    rs = np.linspace(max(r_lo, 0.0), max(r_hi, 1e-9), 64)
    fr = np.asarray(_nl_eval(nl, d[:, None], rs[None, :]), dtype=float)
    lam = float(np.max(np.diff(fr, axis=1) / np.diff(rs)[None, :], initial=0.0))
    lam = max(lam, cfg.slope_floor)

    M = sp.csc_matrix(disc.A + lam * sp.identity(disc.n, format="csc"))
    solve_M = spla.factorized(M)
    u = (hi if start == "super" else lo).astype(float).copy()
    bracket_eps = 100.0 * cfg.newton_tol

    res_sup = math.inf
    sweeps = 0
    floor_max = 0.0
    for sweeps in range(1, max_sweeps + 1):
        f_u = np.asarray(_nl_eval(nl, d, np.maximum(u, 0.0)), dtype=float)
        res = disc.A @ u - disc.lift + f_u
        res_sup = float(np.abs(res).max())
        floors = disc.residual_floors(u, f_u)
        floor_max = float(floors.max(initial=0.0))
        if np.all(np.abs(res) <= np.maximum(cfg.newton_tol, floors)):
            break
        u_next = solve_M(lam * u - f_u + disc.lift)
        viol_hi = u_next > hi + bracket_eps * np.maximum(1.0, np.abs(hi))
        viol_lo = u_next < lo - bracket_eps * np.maximum(1.0, np.abs(hi))
        if np.any(viol_hi | viol_lo):
            bad = int(np.flatnonzero(viol_hi | viol_lo)[0])
            raise SolveError(f"monotone iterate left the bracket at interior node {bad}")
        u = u_next

    fld = GridField(grid, disc.full_field(u))
    E = 0.5 * float(u @ (disc.A @ u)) - float(u @ disc.lift) + float(
        _cumulative_G(nl, d, u).sum()
    )
    thr = max(cfg.newton_tol, floor_max)
    sub_ok, _ = is_subsolution(nl, grid, fld, 2.0 * thr, weight_distance)
    sup_ok, _ = is_supersolution(nl, grid, fld, 2.0 * thr, weight_distance)
    return SolveReport(
        field=fld,
        residual_sup=res_sup,
        iterations=sweeps,
        energy=E,
        bracket_verified=(sub_ok, sup_ok),
        converged=res_sup <= thr,
        residual_floor=floor_max,
        method="monotone",
    )


def _scale(v: np.ndarray) -> float:
    return max(1.0, float(np.abs(v).max(initial=0.0)))
