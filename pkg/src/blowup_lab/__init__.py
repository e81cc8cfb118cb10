"""Numerical laboratory for boundary blow-up ("large") solutions of
-lap(u) + f(x,u) = 0 on 1-D and 2-D grid domains.

Subpackages:
    nonlinearity  -- nonlinearity families, increment-floor (g) transform,
                     Keller-Osserman integral tests, structural hypothesis checks
    grids         -- uniform-grid domains, node classification, boundary distance,
                     discrete Laplacian, lattice shifts, domain sequences
    solver        -- semilinear Dirichlet solves (damped Newton on the convex
                     energy, monotone iteration fallback)
    large         -- boundary ramps to infinity, maximal/minimal solution
                     pipelines, shifted-supersolution and barrier probes
    runner / cli  -- reproducible batch experiment runner
"""

__version__ = "0.1.0"

from .nonlinearity import (
    NonlinearitySpec,
    GTransform,
    KoVerdict,
    HypothesisReport,
    eval_f,
    g_transform,
    ko_integral,
    ko_loc_minorant,
    check_complete_decay,
    check_superadditivity,
    check_phi_condition,
    check_ratio_monotone,
    staircase_counterexample,
    make_family,
)
from .grids import (
    DomainSpec,
    Grid,
    GridField,
    NodeClass,
    build_grid,
    boundary_distance,
    laplacian_apply,
    shift_field,
    inner_domains,
    outer_domains,
)
from .solver import (
    SolveConfig,
    SolveReport,
    solve_dirichlet,
    residual,
    is_supersolution,
    is_subsolution,
    monotone_iterate,
)
from .large import (
    RampSchedule,
    RampResult,
    UniquenessReport,
    BarrierProbeReport,
    large_solution_ramp,
    u_max_via_inner,
    u_min_via_outer,
    mixed_problem_ell,
    shifted_supersolution_test,
    uniqueness_gap,
    phi_gap_test,
    barrier_probe,
)
