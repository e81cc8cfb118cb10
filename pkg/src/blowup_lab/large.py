"""Large-solution pipelines: boundary ramps to infinity and the uniqueness machinery.

"+infinity boundary data" is realized by a geometric ramp of finite Dirichlet
data with warm-started solves; the monotone limit is certified by a recorded
trace and a stagnation criterion on an interior probe set.  On top of the ramp
sit the maximal/minimal solution constructions over inset/outset domain
sequences, the mixed zero/ramp problem on graph windows, the shifted
supersolution comparison, the concave-gauge boundary-gap trace, and barrier
probes on boundary balls.

Every pipeline asserts the monotonicity the comparison principle guarantees:
ramp iterates nodewise nondecreasing, inset-domain solutions nonincreasing and
outset-domain solutions nondecreasing in the sequence index.  A violation
beyond 2 * newton_tol is a hard failure: it indicates a solver bug, not a
property of the problem.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .grids import (
    DomainSpec,
    Grid,
    GridField,
    NodeClass,
    GridError,
    build_grid,
    dirichlet_data,
    shift_field,
    inner_domains,
    outer_domains,
    ball_window,
)
from .solver import (
    SolveConfig,
    SolveReport,
    SolveError,
    solve_dirichlet,
    is_supersolution,
)
from .nonlinearity import NonlinearitySpec, GTransform, eval_f

__all__ = [
    "RampSchedule",
    "RampResult",
    "UniquenessReport",
    "BarrierProbeReport",
    "ShiftTestReport",
    "MonotonicityError",
    "large_solution_ramp",
    "u_max_via_inner",
    "u_min_via_outer",
    "mixed_problem_ell",
    "shifted_supersolution_test",
    "uniqueness_gap",
    "phi_gap_test",
    "barrier_probe",
]


class MonotonicityError(RuntimeError):
    """A comparison-principle monotonicity assertion failed beyond tolerance."""


@dataclass
class RampSchedule:
    """Increasing boundary-data levels n_k = n0 * factor**k with two stops.

    Stagnation: the probe-set sup-change falls below stagnation_tol (relative).
    Saturation: the data level exceeds saturation_cap_rel times the interior
    field sup while the probe change is already below saturation_probe_tol;
    past that point the data only feeds the sub-lattice boundary layer, which
    the stencil cannot resolve, so ramping further degrades the approximation
    near the boundary without moving the interior.
    """

    n0: float = 8.0
    factor: float = 2.0
    cap: int = 24
    stagnation_tol: float = 1e-6
    saturation_cap_rel: float = 3.0
    saturation_probe_tol: float = 0.1
    values: Optional[Sequence[float]] = None

    def levels(self) -> np.ndarray:
        if self.values is not None:
            v = np.asarray(self.values, dtype=float)
        else:
            v = self.n0 * self.factor ** np.arange(self.cap)
        if v.size < 2 or np.any(np.diff(v) <= 0):
            raise ValueError("ramp levels must be strictly increasing, cap >= 2")
        return v


@dataclass
class RampResult:
    report: SolveReport                  # last accepted solve
    trace: list                          # rows (index, level, probe_value, residual_sup)
    stop_reason: str                     # stagnated | saturated | cap
    diverged: bool
    probe_mask: np.ndarray
    monotone_violation_max: float = 0.0  # worst negative nodewise increment observed
    details: dict = field(default_factory=dict)

    @property
    def stagnated(self) -> bool:
        return self.stop_reason in ("stagnated", "saturated")

    @property
    def field(self) -> GridField:
        return self.report.field


def _frame_depth(grid: Grid) -> np.ndarray:
    """Distance to the nearest non-interior node: depth inside the computational
    domain, counting artificial walls as boundary (unlike grid.distance)."""
    from scipy.ndimage import distance_transform_edt

    return distance_transform_edt(grid.interior) * grid.spacing


def _default_probe_mask(grid: Grid, probe_band=None) -> np.ndarray:
    """Interior nodes used for stagnation detection: a deep band of the
    computational domain, away from every data-carrying boundary piece."""
    depth = _frame_depth(grid)
    if probe_band is not None:
        lo, hi = probe_band
        mask = grid.interior & (depth >= lo) & (depth <= hi)
    else:
        dmax = float(depth.max())
        mask = grid.interior & (depth >= 0.25 * dmax)
    if not mask.any():
        mask = grid.interior
    return mask


def _assert_monotone_step(prev: GridField, new: GridField, tol: float, what: str) -> float:
    both = prev.defined & new.defined
    if not both.any():
        return 0.0
    drop = float(np.max(prev.values[both] - new.values[both]))
    if drop > tol:
        raise MonotonicityError(
            f"{what}: nodewise decrease {drop:.3e} exceeds tolerance {tol:.3e}"
        )
    return max(drop, 0.0)


def large_solution_ramp(
    nl,
    grid: Grid,
    ramp: RampSchedule = None,
    cfg: SolveConfig = None,
    probe_band=None,
    probe_mask: np.ndarray = None,
    divergence_factor: float = 1e3,
    weight_distance: np.ndarray = None,
    boundary_selector: Callable[[Grid, float], GridField] = None,
    extra_probe_masks: dict = None,
) -> RampResult:
    """Ramp the boundary data to approximate the large solution on the grid.

    Solves the Dirichlet problem with data level n_k on all boundary nodes
    (or per boundary_selector), warm-starting each solve from the previous
    field.  Stops at probe stagnation or the cap; reports divergence when the
    probe exceeds divergence_factor times its first value without stagnating.
    Extra probe masks record side traces (e.g. a boundary-adjacent watch).
    """
    ramp = ramp or RampSchedule()
    cfg = cfg or SolveConfig()
    levels = ramp.levels()
    probe = probe_mask if probe_mask is not None else _default_probe_mask(grid, probe_band)
    if not probe.any():
        raise GridError("empty probe set")
    tol_mono = 2.0 * cfg.newton_tol
    extra = {name: [] for name in (extra_probe_masks or {})}

    trace = []
    prev_field = None
    report = None
    stop_reason = "cap"
    worst_drop = 0.0

    for k, n in enumerate(levels):
        if boundary_selector is not None:
            bdata = boundary_selector(grid, float(n))
        else:
            bdata = dirichlet_data(grid, true_boundary=float(n), wall=float(n))
        report = solve_dirichlet(
            nl, grid, bdata, cfg,
            initial=prev_field,
            weight_distance=weight_distance,
        )
        fld = report.field
        probe_val = float(np.max(fld.values[probe]))
        trace.append((k, float(n), probe_val, report.residual_sup))
        for name, m in (extra_probe_masks or {}).items():
            extra[name].append(float(np.max(fld.values[m])) if m.any() else math.nan)

        if prev_field is not None:
            worst_drop = max(
                worst_drop,
                _assert_monotone_step(prev_field, fld, tol_mono, "ramp monotonicity"),
            )
            change = float(np.max(np.abs(fld.values[probe] - prev_field.values[probe])))
            rel_change = change / max(1.0, float(np.max(np.abs(fld.values[probe]))))
            interior_sup = float(np.max(fld.values[grid.interior]))
            if rel_change <= ramp.stagnation_tol:
                stop_reason = "stagnated"
            elif (
                rel_change <= ramp.saturation_probe_tol
                and n >= ramp.saturation_cap_rel * max(interior_sup, 1e-30)
            ):
                stop_reason = "saturated"
            if stop_reason != "cap":
                prev_field = fld
                break
        prev_field = fld

    first_probe = trace[0][2]
    last_probe = trace[-1][2]
    diverged = (stop_reason == "cap") and last_probe > divergence_factor * max(
        first_probe, 1e-30
    )
    details = {"levels_used": len(trace)}
    if extra:
        details["extra_traces"] = extra
    return RampResult(
        report=report,
        trace=trace,
        stop_reason=stop_reason,
        diverged=diverged,
        probe_mask=probe,
        monotone_violation_max=worst_drop,
        details=details,
    )


# ---------------------------------------------------------------------------
# domain-sequence constructions
# ---------------------------------------------------------------------------

@dataclass
class SequenceHalf:
    """One half of the uniqueness construction: ramps over a domain sequence,
    restricted to the lattice of the innermost (first) domain."""

    domains: list
    margins: list
    grids: list
    ramps: list
    restricted: list          # per-index values on the comparison lattice
    lattice_coords: tuple     # axis arrays of the comparison lattice
    lattice_distance: np.ndarray  # distance to the original boundary
    monotone_violation_max: float


def _restrict_to(grid_small: Grid, grid_big: Grid, fld: GridField) -> np.ndarray:
    """Values of fld (on grid_big) at the interior nodes of grid_small.
    Lattices must be aligned (margins snap to spacing multiples)."""
    h = grid_small.spacing
    out_idx = []
    for ax in range(grid_small.ndim):
        offs = (grid_small.axes[ax][0] - grid_big.axes[ax][0]) / h
        k = round(offs)
        if abs(offs - k) > 1e-9:
            raise GridError("domain lattices are not aligned")
        out_idx.append(k + np.arange(grid_small.axes[ax].size))
    vals = fld.values
    if grid_small.ndim == 1:
        sub = vals[out_idx[0]]
    else:
        sub = vals[np.ix_(out_idx[0], out_idx[1])]
    return sub[grid_small.interior]


def _sequence_half(
    nl, spec, count, ramp, cfg, margin0, decay, spacing,
    direction, probe_band, weight_mode,
):
    """Build the domain sequence, run one ramp per domain, return the pieces.

    Weights always evaluate at the distance to the original boundary; on outset
    domains that distance is clamped at zero outside the original closure
    (weight_mode 'clamp_zero') or replaced by each domain's own boundary
    distance ('own_distance')."""
    builder = inner_domains if direction == "inner" else outer_domains
    domains = builder(spec, count, margin0=margin0, decay=decay, spacing=spacing)
    if not domains:
        raise GridError("no resolvable domains at this spacing")
    margins = [_margin_of(spec, d) for d in domains]
    grids = [build_grid(d, spacing) for d in domains]

    ramps = []
    worst = 0.0
    for g in grids:
        if direction == "inner":
            wd = _original_distance(spec, g, clamp=False)
        elif weight_mode == "own_distance":
            wd = None  # the outset grid's own boundary distance
        else:
            wd = _original_distance(spec, g, clamp=True)
        rr = large_solution_ramp(nl, g, ramp, cfg, probe_band=probe_band,
                                 weight_distance=wd)
        ramps.append(rr)
        worst = max(worst, rr.monotone_violation_max)
    return domains, margins, grids, ramps, worst


def _margin_of(spec: DomainSpec, inset: DomainSpec) -> float:
    if spec.kind == "interval":
        return abs(inset.bounds[0] - spec.bounds[0])
    return abs(inset.bounds[0][0] - spec.bounds[0][0])


def _original_distance(spec: DomainSpec, grid: Grid, clamp: bool) -> np.ndarray:
    """Distance to the original domain boundary on another grid's lattice,
    optionally clamped at zero outside the original closure."""
    if spec.kind == "interval":
        (a, b) = spec.bounds
        x = grid.axes[0]
        d = np.minimum(x - a, b - x)
    else:
        (x0, x1), (y0, y1) = spec.bounds
        X, Y = np.meshgrid(grid.axes[0], grid.axes[1], indexing="ij")
        d = np.minimum.reduce([X - x0, x1 - X, Y - y0, y1 - Y])
    return np.maximum(d, 0.0) if clamp else d


def u_max_via_inner(
    nl,
    spec: DomainSpec,
    count: int,
    ramp: RampSchedule = None,
    cfg: SolveConfig = None,
    spacing: float = 1 / 64,
    margin0: float = None,
    decay: float = 0.5,
    probe_band=None,
) -> SequenceHalf:
    """Maximal-solution half: large solutions on an increasing inset sequence,
    restricted to the innermost lattice, asserted nonincreasing in the index."""
    cfg = cfg or SolveConfig()
    if margin0 is None:
        margin0 = 16 * spacing
    domains, margins, grids, ramps, worst = _sequence_half(
        nl, spec, count, ramp, cfg, margin0, decay, spacing, "inner",
        probe_band, "clamp_zero",
    )
    base = grids[0]
    restricted = [_restrict_to(base, g, rr.field) for g, rr in zip(grids, ramps)]
    tol = 2.0 * cfg.newton_tol
    for i in range(1, len(restricted)):
        rise = float(np.max(restricted[i] - restricted[i - 1]))
        if rise > tol:
            raise MonotonicityError(
                f"inner-domain sequence not nonincreasing at index {i}: rise {rise:.3e}"
            )
    dist = _original_distance(spec, base, clamp=False)[base.interior]
    return SequenceHalf(domains, margins, grids, ramps, restricted,
                        tuple(base.axes), dist, worst)


def u_min_via_outer(
    nl,
    spec: DomainSpec,
    count: int,
    ramp: RampSchedule = None,
    cfg: SolveConfig = None,
    spacing: float = 1 / 64,
    margin0: float = None,
    decay: float = 0.5,
    probe_band=None,
    weight_mode: str = "clamp_zero",
    comparison_grid: Grid = None,
) -> SequenceHalf:
    """Minimal-solution half: large solutions on a decreasing outset sequence,
    restricted to a comparison lattice inside the original domain, asserted
    nondecreasing in the index.  Separable weights evaluate at the distance to
    the original boundary clamped at zero outside (weight_mode='clamp_zero')
    or at each outset domain's own distance ('own_distance')."""
    cfg = cfg or SolveConfig()
    if margin0 is None:
        margin0 = 16 * spacing
    domains, margins, grids, ramps, worst = _sequence_half(
        nl, spec, count, ramp, cfg, margin0, decay, spacing, "outer",
        probe_band, weight_mode,
    )
    base = comparison_grid if comparison_grid is not None else build_grid(spec, spacing)
    restricted = [_restrict_to(base, g, rr.field) for g, rr in zip(grids, ramps)]
    tol = 2.0 * cfg.newton_tol
    for i in range(1, len(restricted)):
        drop = float(np.max(restricted[i - 1] - restricted[i]))
        if drop > tol:
            raise MonotonicityError(
                f"outer-domain sequence not nondecreasing at index {i}: drop {drop:.3e}"
            )
    dist = _original_distance(spec, base, clamp=False)[base.interior]
    return SequenceHalf(domains, margins, grids, ramps, restricted,
                        tuple(base.axes), dist, worst)


@dataclass
class UniquenessReport:
    u_max_seq: list
    u_min_seq: list
    gap_profile: np.ndarray
    boundary_gap: np.ndarray
    verdict: str                       # gap_vanishing | gap_persistent | unresolved
    interior_scale: float
    gap_tol: float
    lattice_distance: np.ndarray
    margins: list
    details: dict = field(default_factory=dict)


def uniqueness_gap(
    nl,
    spec: DomainSpec,
    count: int,
    ramp: RampSchedule = None,
    cfg: SolveConfig = None,
    spacing: float = 1 / 64,
    margin0: float = None,
    decay: float = 0.5,
    probe_band=None,
    gap_rel_tol: float = 1e-3,
    weight_mode: str = "clamp_zero",
) -> UniquenessReport:
    """Assemble both domain-sequence halves on a shared comparison lattice and
    measure the maximal-minus-minimal gap per sequence index.

    The comparison lattice is the interior of the innermost inset domain (the
    coarsest common sublattice of every domain in play).  gap_profile takes the
    sup over a deep-interior probe band, boundary_gap over the thinnest
    resolved band near the original boundary.  Verdict gap_vanishing requires
    both gap sequences nonincreasing and the final interior gap below
    gap_rel_tol times the interior field scale (the sup of the final maximal
    field over the comparison lattice).
    """
    cfg = cfg or SolveConfig()
    try:
        inner = u_max_via_inner(nl, spec, count, ramp, cfg, spacing, margin0,
                                decay, probe_band)
        outer = u_min_via_outer(nl, spec, count, ramp, cfg, spacing, margin0,
                                decay, probe_band, weight_mode,
                                comparison_grid=inner.grids[0])
    except SolveError as err:
        return UniquenessReport([], [], np.array([]), np.array([]),
                                "unresolved", 0.0, 0.0, np.array([]), [],
                                {"error": str(err)})
    n_pairs = min(len(inner.restricted), len(outer.restricted))
    dist = inner.lattice_distance
    if any(r.diverged or not r.stagnated for r in inner.ramps + outer.ramps):
        return UniquenessReport(
            inner.restricted[:n_pairs], outer.restricted[:n_pairs],
            np.array([]), np.array([]), "unresolved", 0.0, 0.0, dist,
            inner.margins,
            {"diverged": True,
             "ramp_flags": [(r.stagnated, r.diverged) for r in inner.ramps + outer.ramps]},
        )

    tol_order = 2.0 * cfg.newton_tol
    gaps_int, gaps_bnd = [], []
    m1 = max(inner.margins)
    h = spacing
    if probe_band is None:
        # deep-interior half by distance, clear of every domain's data layer
        dmax = float(dist.max())
        band_int = dist >= 0.5 * dmax
    else:
        band_int = (dist >= probe_band[0]) & (dist <= probe_band[1])
    band_bnd = dist <= m1 + 2.5 * h
    if not band_bnd.any():
        band_bnd = dist <= float(np.min(dist)) + 2.5 * h

    for k in range(n_pairs):
        gap = inner.restricted[k] - outer.restricted[k]
        worst_order = float(np.min(gap))
        if worst_order < -tol_order:
            raise MonotonicityError(
                f"ordering violated at index {k}: minimal exceeds maximal by "
                f"{-worst_order:.3e}"
            )
        gaps_int.append(float(np.max(np.where(band_int, gap, -np.inf))))
        gaps_bnd.append(float(np.max(np.where(band_bnd, gap, -np.inf))))

    gaps_int = np.asarray(gaps_int)
    gaps_bnd = np.asarray(gaps_bnd)
    # scale of the computed blow-up approximation: the sup of the final maximal
    # field over the interior of its own computational domain
    final_inner = inner.ramps[n_pairs - 1]
    final_grid = inner.grids[n_pairs - 1]
    interior_scale = float(np.max(final_inner.field.values[final_grid.interior]))
    gap_tol = gap_rel_tol * interior_scale
    slack = 10.0 * tol_order
    decreasing = bool(
        np.all(np.diff(gaps_int) <= slack) and np.all(np.diff(gaps_bnd) <= slack)
    )
    if decreasing and gaps_int[-1] < gap_tol:
        verdict = "gap_vanishing"
    else:
        verdict = "gap_persistent"
    return UniquenessReport(
        u_max_seq=inner.restricted[:n_pairs],
        u_min_seq=outer.restricted[:n_pairs],
        gap_profile=gaps_int,
        boundary_gap=gaps_bnd,
        verdict=verdict,
        interior_scale=interior_scale,
        gap_tol=gap_tol,
        lattice_distance=dist,
        margins=inner.margins,
        details={
            "monotone_violation_max": max(inner.monotone_violation_max,
                                          outer.monotone_violation_max),
            "outer_margins": outer.margins,
        },
    )


# ---------------------------------------------------------------------------
# mixed zero/ramp problem on a graph window
# ---------------------------------------------------------------------------

def mixed_problem_ell(
    nl_g,
    grid: Grid,
    ramp: RampSchedule = None,
    cfg: SolveConfig = None,
    divergence_factor: float = 1e3,
    sigma_steps: Sequence[int] = None,
    retraction_levels: int = 3,
) -> RampResult:
    """Solve the mixed problem on a graph window: data 0 on the graph frontier,
    ramped data on the artificial walls.

    The stagnation probe set sits away from the walls but reaches the graph
    (the limit must stay bounded on window compacts including the frontier).
    Divergence of the graph-adjacent probe is recorded as barrier-failure
    evidence.  With sigma_steps, a retraction study solves the same problem on
    sublevel windows shifted down by sigma = s*h and asserts the solutions are
    nondecreasing as the level n grows and the retraction shrinks.
    """
    if grid.domain.kind != "graph_domain":
        raise GridError("the mixed problem needs a graph-domain grid")
    ramp = ramp or RampSchedule()
    cfg = cfg or SolveConfig()
    rho = grid.domain.rho

    # compacts of the window avoid the artificial walls but reach the graph:
    # the probe covers the inner half of the frame including frontier-adjacent rows
    X, Y = np.meshgrid(grid.axes[0], grid.axes[1], indexing="ij")
    away_from_walls = (np.abs(X) <= 0.5 * rho) & (Y >= -0.5 * grid.domain.height)
    probe = grid.interior & away_from_walls
    if not probe.any():
        probe = grid.interior
    near_graph = probe & (grid.distance <= 2.5 * grid.spacing)

    def selector(g, n):
        return dirichlet_data(g, true_boundary=0.0, wall=n)

    rr = large_solution_ramp(
        nl_g, grid, ramp, cfg,
        probe_mask=probe,
        divergence_factor=divergence_factor,
        boundary_selector=selector,
        extra_probe_masks={"graph_adjacent": near_graph},
    )
    g_trace = rr.details.get("extra_traces", {}).get("graph_adjacent", [])
    g_diverged = bool(
        len(g_trace) >= 2
        and not rr.stagnated
        and g_trace[-1] > divergence_factor * max(g_trace[0], 1e-30)
    )
    rr.details["gamma0_probe_trace"] = g_trace
    rr.details["gamma0_probe_diverged"] = g_diverged

    if sigma_steps:
        rr.details["retraction"] = _retraction_study(
            nl_g, grid, ramp, cfg, sigma_steps, retraction_levels
        )
    return rr


def _retraction_study(nl_g, grid, ramp, cfg, sigma_steps, n_levels):
    """Mixed solves on windows retracted by sigma = s*h; checks the two-parameter
    monotonicity: more data and less retraction never decrease the solution."""
    h = grid.spacing
    dom = grid.domain
    levels = ramp.levels()[:n_levels]
    sigmas = sorted(int(s) for s in sigma_steps)
    results = {}
    for s in sigmas:
        sigma = s * h
        retracted = DomainSpec(
            "graph_domain",
            graph_fn=_shifted_graph(dom.graph_fn, sigma),
            rho=dom.rho,
            height=dom.height,
            anchored=False,
        )
        g = build_grid(retracted, h)
        prev = None
        for n in levels:
            bdata = dirichlet_data(g, true_boundary=0.0, wall=float(n))
            rep = solve_dirichlet(nl_g, g, bdata, cfg, initial=prev)
            results[(s, float(n))] = (g, rep.field)
            prev = rep.field

    tol = 2.0 * cfg.newton_tol
    checks = []
    for (s1, n1), (g1, f1) in results.items():
        for (s2, n2), (g2, f2) in results.items():
            if n2 > n1 and s2 <= s1:
                both = f1.defined & f2.defined & g1.interior
                drop = float(np.max(np.where(both, f1.values - f2.values, -np.inf)))
                checks.append(((s1, n1), (s2, n2), drop))
                if drop > tol:
                    raise MonotonicityError(
                        f"retraction monotonicity violated: ({s1},{n1}) vs ({s2},{n2})"
                        f" drop {drop:.3e}"
                    )
    return {"pairs_checked": len(checks),
            "worst_drop": max((c[2] for c in checks), default=0.0)}


def _shifted_graph(fn, sigma):
    def shifted(x):
        return np.asarray(fn(x), dtype=float) - sigma

    return shifted


# ---------------------------------------------------------------------------
# shifted supersolution comparison
# ---------------------------------------------------------------------------

@dataclass
class ShiftTestReport:
    steps: int
    supersolution_ok: bool
    domination_ok: bool
    worst_residual: float       # most negative residual of the shifted sum
    worst_domination: float     # most negative (shifted sum - maximal field)
    checked_nodes: int
    tolerances: tuple
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.supersolution_ok and self.domination_ok


def shifted_supersolution_test(
    u_min: GridField,
    ell: GridField,
    nl,
    grid: Grid,
    steps: int,
    cfg: SolveConfig = None,
    u_max: GridField = None,
    tol_rel: float = 1e-6,
    bottom_exclusion_rows: int = None,
) -> ShiftTestReport:
    """Form the shifted comparison field u_min(.+eps) + ell(.+eps), eps = steps*h,
    and check (a) it is a discrete supersolution on the shifted window's interior
    and (b) it dominates the maximal field there.

    Both checks hold exactly for the continuum objects whenever the complete
    decay and increment-floor inequalities hold; discretely they hold up to the
    solver residuals, so the tolerances scale with the field magnitudes.  On
    graph windows the shifted domain protrudes below the frame and the lattice
    truncates it there, so check (b) skips the bottom_exclusion_rows rows
    nearest the artificial bottom (default steps + 2).
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    cfg = cfg or SolveConfig()
    shifted_u = shift_field(u_min, steps)
    shifted_l = shift_field(ell, steps)
    bar = GridField(grid, shifted_u.values + shifted_l.values)

    scale = max(1.0, float(np.nanmax(np.abs(bar.values))))
    h2 = grid.spacing ** 2
    tol_a = tol_rel * scale / h2
    ok_a, worst_a = is_supersolution(nl, grid, bar, tol_a)

    ok_b, worst_b_val, checked = True, math.inf, 0
    tol_b = tol_rel * scale
    if u_max is not None:
        both = bar.defined & u_max.defined & grid.interior
        if grid.ndim == 2 and grid.domain.kind == "graph_domain":
            skip = steps + 2 if bottom_exclusion_rows is None else bottom_exclusion_rows
            if skip > 0:
                both[:, :skip] = False
        checked = int(both.sum())
        if checked:
            diff = bar.values[both] - u_max.values[both]
            worst_b_val = float(diff.min())
            ok_b = worst_b_val >= -tol_b
    return ShiftTestReport(
        steps=steps,
        supersolution_ok=bool(ok_a),
        domination_ok=bool(ok_b),
        worst_residual=worst_a.value if worst_a else math.inf,
        worst_domination=worst_b_val,
        checked_nodes=checked,
        tolerances=(tol_a, tol_b),
    )


# ---------------------------------------------------------------------------
# concave-gauge gap trace
# ---------------------------------------------------------------------------

def phi_gap_test(
    u1,
    u2,
    phi: Callable[[np.ndarray], np.ndarray],
    bands: Sequence[tuple],
    distance: np.ndarray = None,
    nl=None,
    grid: Grid = None,
    eps_check: float = None,
    cfg: SolveConfig = None,
    tol_rel: float = 1e-6,
):
    """Trace of sup |u2 - u1| / phi(u1) over a sequence of boundary-distance bands.

    u1, u2 may be GridFields on a shared grid or plain arrays with an explicit
    distance array.  Nodes with phi(u1) = 0 or u1 <= 0 are excluded and counted.
    With eps_check set (and nl, grid), additionally verifies that
    u1 + eps * phi(u1) is a discrete supersolution (the concave-gauge growth
    inequality makes it one exactly; discretely up to solver residuals).
    """
    if isinstance(u1, GridField):
        v1, v2 = u1.values, u2.values
        dist = u1.grid.distance
        ok = u1.grid.interior & np.isfinite(v1) & np.isfinite(v2)
    else:
        v1 = np.asarray(u1, dtype=float)
        v2 = np.asarray(u2, dtype=float)
        if distance is None:
            raise ValueError("plain-array inputs need a distance array")
        dist = np.asarray(distance, dtype=float)
        ok = np.isfinite(v1) & np.isfinite(v2)

    trace = []
    excluded = 0
    for lo, hi in bands:
        m = ok & (dist >= lo) & (dist < hi)
        if not m.any():
            trace.append(math.nan)
            continue
        base = v1[m]
        pos = base > 0
        phiv = np.zeros_like(base)
        phiv[pos] = np.asarray(phi(base[pos]), dtype=float)
        good = pos & (phiv > 0)
        excluded += int((~good).sum())
        if not good.any():
            trace.append(math.nan)
            continue
        trace.append(float(np.max(np.abs(v2[m][good] - v1[m][good]) / phiv[good])))

    result = {"trace": trace, "excluded_nodes": excluded, "bands": list(bands)}
    if eps_check is not None:
        if nl is None or grid is None or not isinstance(u1, GridField):
            raise ValueError("the supersolution check needs nl, grid and GridField u1")
        gauge = np.where(u1.values > 0, phi(np.maximum(u1.values, 0.0)), 0.0)
        v = GridField(grid, u1.values + eps_check * gauge)
        scale = max(1.0, float(np.nanmax(np.abs(v.values))))
        tol = tol_rel * scale / grid.spacing ** 2
        ok_v, worst = is_supersolution(nl, grid, v, tol)
        result["supersolution_ok"] = bool(ok_v)
        result["supersolution_worst"] = worst.value if worst else math.inf
        result["eps"] = eps_check
    return result


# ---------------------------------------------------------------------------
# barrier probe on a boundary ball
# ---------------------------------------------------------------------------

@dataclass
class BarrierProbeReport:
    z: tuple
    radius: float
    probe_point: tuple
    trace: list                    # rows (index, level, probe_value, residual_sup)
    verdict: str                   # barrier_indicated | no_barrier_indicated | unresolved
    details: dict = field(default_factory=dict)


def barrier_probe(
    nl,
    spec: DomainSpec,
    z_lateral: float,
    radius: float,
    ramp: RampSchedule = None,
    cfg: SolveConfig = None,
    spacing: float = 1 / 32,
    divergence_factor: float = 1e3,
    probe_depth_steps: int = 4,
) -> BarrierProbeReport:
    """Ramp lateral data on the sphere piece of a boundary ball with zero data on
    the graph piece, and trace the value at a probe near the boundary point.

    A bounded trace (successive increments under the stagnation tolerance)
    indicates a barrier; a trace exceeding divergence_factor times its first
    value indicates there is none.  The probe sits probe_depth_steps*h below
    the boundary point: barriers keep the limit bounded up to the graph, while
    their absence lets the zero-data frontier value grow with the ramp.
    """
    ramp = ramp or RampSchedule()
    cfg = cfg or SolveConfig()
    parent = build_grid(spec, spacing)
    ball = ball_window(parent, z_lateral, radius)

    zx = float(z_lateral)
    zy = float(spec.graph_fn(zx))
    px, py = zx, zy - probe_depth_steps * spacing
    xs, ys = ball.axes
    ix = int(np.argmin(np.abs(xs - px)))
    iy = int(np.argmin(np.abs(ys - py)))
    if ball.node_class[ix, iy] != NodeClass.INTERIOR:
        raise GridError("probe point is not an interior node of the ball window")
    sphere_dist = radius - math.hypot(xs[ix] - zx, ys[iy] - zy)
    if sphere_dist < 2 * spacing:
        raise GridError("probe point too close to the sphere (within 2h)")

    def selector(g, n):
        return dirichlet_data(g, true_boundary=0.0, wall=n)

    levels = ramp.levels()
    tol_mono = 2.0 * cfg.newton_tol
    trace = []
    prev = None
    stop_reason = "cap"
    for k, n in enumerate(levels):
        rep = solve_dirichlet(nl, ball, selector(ball, float(n)), cfg, initial=prev)
        val = float(rep.field.values[ix, iy])
        trace.append((k, float(n), val, rep.residual_sup))
        if prev is not None:
            _assert_monotone_step(prev, rep.field, tol_mono, "barrier probe monotonicity")
            rel_incr = (val - trace[-2][2]) / max(1.0, abs(val))
            interior_sup = float(np.max(rep.field.values[ball.interior]))
            if rel_incr <= ramp.stagnation_tol:
                stop_reason = "stagnated"
            elif (
                rel_incr <= ramp.saturation_probe_tol
                and n >= ramp.saturation_cap_rel * max(interior_sup, 1e-30)
            ):
                stop_reason = "saturated"
            if stop_reason != "cap":
                prev = rep.field
                break
        prev = rep.field

    first, last = trace[0][2], trace[-1][2]
    if last > divergence_factor * max(first, 1e-30):
        verdict = "no_barrier_indicated"
    elif stop_reason != "cap":
        verdict = "barrier_indicated"
    else:
        verdict = "unresolved"
    return BarrierProbeReport(
        z=(zx, zy),
        radius=radius,
        probe_point=(float(xs[ix]), float(ys[iy])),
        trace=trace,
        verdict=verdict,
        details={"stop_reason": stop_reason, "levels_used": len(trace),
                 "first": first, "last": last},
    )
