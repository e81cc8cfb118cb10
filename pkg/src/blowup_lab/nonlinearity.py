"""Nonlinearities f(x,r) and the structural tests the uniqueness machinery needs.

A nonlinearity is either separable, f(x,r) = a(d(x)) * profile(r) with a weight
expressed in the boundary distance d, or a general bivariate function of (d, r).
This module computes the uniform increment floor

    g(x, ell) = inf_{u >= 0} [ f(x, ell + u) - f(x, u) ],

runs Keller-Osserman integral tests on scalar profiles, builds the largest
nondecreasing minorant over a distance band, and checks every structural
hypothesis (complete decay along the inward frame axis, superadditivity up to a
constant, the concave-gauge growth inequality, monotonicity of f(r)/r) as
sample-based falsifiers: "holds" always means "no counterexample on the
declared grid".
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "NonlinearitySpec",
    "GTransform",
    "KoVerdict",
    "HypothesisReport",
    "Minorant",
    "eval_f",
    "g_transform",
    "ko_integral",
    "ko_loc_minorant",
    "check_complete_decay",
    "check_superadditivity",
    "check_phi_condition",
    "check_ratio_monotone",
    "staircase_counterexample",
    "make_family",
    "FAMILIES",
]


class RangeError(ValueError):
    """Evaluation requested outside the declared range of an axis."""


# ---------------------------------------------------------------------------
# specs and evaluation
# ---------------------------------------------------------------------------

@dataclass
class NonlinearitySpec:
    """A nonlinearity f(x,r) with monotonicity metadata.

    kind 'separable' means f(x,r) = weight(d(x)) * profile(r); 'staircase' and
    plain profiles are x-independent; 'general' may carry a bivariate(d, r)
    callable.  All callables must be numpy-vectorized.
    """

    kind: str  # separable | general | staircase
    profile: Callable[[np.ndarray], np.ndarray]
    weight: Optional[Callable[[np.ndarray], np.ndarray]] = None
    bivariate: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    monotone_in_r: bool = True
    vanishes_at_zero: bool = True
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("separable", "general", "staircase"):
            raise ValueError(f"unknown nonlinearity kind {self.kind!r}")
        if self.kind == "general" and self.bivariate is None and self.profile is None:
            raise ValueError("general kind needs a bivariate or a profile")

    def validate(self, r_max: float = 100.0, d_max: float = 10.0, n: int = 257) -> None:
        """Spot-check the declared invariants on sample grids."""
        r = np.linspace(0.0, r_max, n)
        vals = np.asarray(self.profile(r), dtype=float)
        if not np.all(np.isfinite(vals)):
            raise RangeError("profile not finite on [0, r_max] (axis r)")
        if self.vanishes_at_zero and abs(float(self.profile(np.array(0.0)))) > 1e-12:
            raise ValueError("vanishes_at_zero set but profile(0) != 0")
        if self.monotone_in_r and np.any(np.diff(vals) < -1e-12 * max(1.0, vals.max())):
            raise ValueError("monotone_in_r set but profile decreases on sample grid")
        if self.weight is not None:
            d = np.linspace(0.0, d_max, n)
            w = np.asarray(self.weight(d), dtype=float)
            if np.any(w < -1e-15):
                raise ValueError("weight negative on sampled range")


def eval_f(spec: NonlinearitySpec, d, r):
    """Evaluate f at boundary distance d and value r (both array-like, >= 0)."""
    d = np.asarray(d, dtype=float)
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise RangeError("negative value on axis r")
    if np.any(d < 0):
        raise RangeError("negative value on axis d")
    if spec.kind == "separable" and spec.weight is not None:
        out = spec.weight(d) * spec.profile(r)
    elif spec.kind == "general" and spec.bivariate is not None:
        out = spec.bivariate(d, r)
    else:
        out = spec.profile(r) * np.ones_like(d)
    return out if out.shape else float(out)


# ---------------------------------------------------------------------------
# increment floor (g) transform
# ---------------------------------------------------------------------------

@dataclass
class GTransform:
    """Sampled table of the uniform increment floor g of a nonlinearity.

    For separable specs the table holds the floor of the scalar profile; the
    weight multiplies on evaluation.  ``certified_exact`` is set when convexity
    of the profile was verified on the sample grid, in which case the floor
    coincides with f itself and evaluation short-circuits to eval_f.
    """

    source: NonlinearitySpec
    ell_grid: np.ndarray
    values: np.ndarray
    u_search_max: float
    certified_exact: bool
    argmin_u: np.ndarray = None
    tail_drop: float = 0.0  # max decrease of the running min over the last half of the log-u range
    warnings: list = field(default_factory=list)

    def eval(self, d, r):
        """Evaluate g at boundary distance d and level r."""
        d = np.asarray(d, dtype=float)
        r = np.asarray(r, dtype=float)
        if self.certified_exact:
            return eval_f(self.source, d, r)
        base = np.interp(r, self.ell_grid, self.values)  # holds last value beyond the table
        if self.source.kind == "separable" and self.source.weight is not None:
            base = self.source.weight(d) * base
        out = base * np.ones_like(d)
        return out if out.shape else float(out)


def _convex_on_grid(xs: np.ndarray, fvals: np.ndarray, tol: float) -> bool:
    """Convexity via nondecreasing divided differences (grid may be non-uniform)."""
    dx = np.diff(xs)
    keep = dx > 0
    slopes = np.diff(fvals)[keep] / dx[keep]
    if slopes.size < 2:
        return False
    scale = max(1.0, float(np.abs(slopes).max()))
    return bool(np.all(np.diff(slopes) >= -tol * scale))


def g_transform(
    spec: NonlinearitySpec,
    ell_grid: Sequence[float],
    u_search_max: float,
    u_samples: int = 400,
) -> GTransform:
    """Tabulate g(ell) = inf_{u>=0} [profile(ell+u) - profile(u)], clamped at 0.

    The infimum is searched over u = 0 plus a log-spaced sample of
    (0, u_search_max]; flat stretches of staircase profiles demand large u and
    log spacing reaches them cheaply.  Convex profiles are certified: the
    minimum sits at u = 0 and the floor equals the profile exactly.
    """
    ell = np.asarray(ell_grid, dtype=float)
    if ell.ndim != 1 or np.any(np.diff(ell) < 0) or np.any(ell < 0):
        raise ValueError("ell_grid must be ascending and nonnegative")
    if u_search_max <= 0 or u_samples < 2:
        raise ValueError("need u_search_max > 0 and u_samples >= 2")

    u_lo = min(1e-3, u_search_max / 1e6)
    us = np.concatenate([[0.0], np.geomspace(u_lo, u_search_max, u_samples)])

    prof = spec.profile
    f_u = np.asarray(prof(us), dtype=float)
    warnings = []
    if np.any(np.diff(f_u) < -1e-12 * max(1.0, float(np.abs(f_u).max()))):
        warnings.append("profile not nondecreasing on the u-sample grid")

    # increments f(ell+u) - f(u) on the (ell, u) product
    inc = np.asarray(prof(ell[:, None] + us[None, :]), dtype=float) - f_u[None, :]
    raw_min = inc.min(axis=1)
    argmin = us[inc.argmin(axis=1)]
    values = np.maximum(raw_min, 0.0)

    # running-minimum tail diagnostic: how much the min still dropped over the
    # last half of the log-u range (nonzero = infimum not yet settled)
    half = 1 + u_samples // 2
    runmin_half = inc[:, :half].min(axis=1)
    tail_drop = float(np.max(runmin_half - raw_min))

    # certify convexity on a merged sample grid
    probe = np.unique(np.concatenate([us, ell, ell + u_search_max]))
    certified = spec.kind != "staircase" and _convex_on_grid(
        probe, np.asarray(prof(probe), dtype=float), 1e-10
    )

    return GTransform(
        source=spec,
        ell_grid=ell,
        values=values,
        u_search_max=float(u_search_max),
        certified_exact=bool(certified),
        argmin_u=argmin,
        tail_drop=tail_drop,
        warnings=warnings,
    )


# ---------------------------------------------------------------------------
# Keller-Osserman integral test
# ---------------------------------------------------------------------------

@dataclass
class KoVerdict:
    verdict: str  # converges | diverges | inconclusive
    a: float
    integral_estimate: Optional[float]
    tail_exponent: float
    diagnostics: dict = field(default_factory=dict)


class _CumulativeIntegral:
    """F(s) - F(a) by cumulative fixed-order quadrature along ascending queries."""

    _XI, _WI = np.polynomial.legendre.leggauss(16)

    def __init__(self, fn, a: float):
        self.fn = fn
        self.s_last = float(a)
        self.acc = 0.0

    def diff(self, s_vals: np.ndarray) -> np.ndarray:
        out = np.empty_like(s_vals)
        for i, s in enumerate(s_vals):
            if s < self.s_last - 1e-15 * max(1.0, abs(s)):
                raise ValueError("queries must be ascending")
            if s > self.s_last:
                mid = 0.5 * (s + self.s_last)
                half = 0.5 * (s - self.s_last)
                nodes = mid + half * self._XI
                self.acc += half * float(np.dot(self._WI, self.fn(nodes)))
                self.s_last = s
            out[i] = self.acc
        return out


_T_XI, _T_WI = np.polynomial.legendre.leggauss(64)


def ko_integral(
    profile: Callable[[np.ndarray], np.ndarray],
    a: float,
    tail_bound: float = None,
    tol: float = 1e-4,
    max_doublings: int = 48,
) -> KoVerdict:
    """Test convergence of int_a^inf ds / sqrt(F(s) - F(a)), F' = profile.

    The inverse-square-root endpoint is regularized by s = a + t*t; the upper
    truncation doubles geometrically while the integrand tail decay on [T/2, T]
    is fitted in log-log.  A fitted exponent beta > 1 lets the tail be
    extrapolated; the verdict is accepted once two consecutive doublings agree
    within tol.  If the profile vanishes on a stretch above a, the endpoint is
    shifted past the flat region (recorded in diagnostics).
    """
    if a <= 0:
        raise ValueError("need a > 0")
    a = float(a)
    diagnostics = {}

    # endpoint shift past any flat-zero region: the integrand is undefined there
    probe = np.linspace(a, a + max(4.0 * a, 8.0), 513)
    pvals = np.asarray(profile(probe), dtype=float)
    tiny = 1e-300
    if pvals[0] <= tiny:
        pos = np.nonzero(pvals > tiny)[0]
        scale = 4.0
        while pos.size == 0 and scale <= 64.0:
            probe = np.linspace(a, a + scale * max(4.0 * a, 8.0), 2049)
            pvals = np.asarray(profile(probe), dtype=float)
            pos = np.nonzero(pvals > tiny)[0]
            scale *= 4.0
        if pos.size == 0:
            diagnostics["degenerate"] = True
            return KoVerdict("diverges", a, None, 0.0, diagnostics)
        a_new = float(probe[pos[0]])
        diagnostics["a_shift"] = a_new - a
        a = a_new

    T = float(tail_bound) if tail_bound else 2.0 * a
    if T <= a:
        T = 2.0 * a

    F = _CumulativeIntegral(profile, a)
    acc = 0.0
    t_lo = 0.0
    prev_estimate = None
    prev_state = None
    beta = 0.0
    verdict = "inconclusive"
    estimate = None

    for k in range(max_doublings):
        t_hi = math.sqrt(T - a)
        mid = 0.5 * (t_hi + t_lo)
        half = 0.5 * (t_hi - t_lo)
        t_nodes = mid + half * _T_XI
        s_nodes = a + t_nodes * t_nodes
        s_fit = np.geomspace(max(T / 2.0, a * 1.0000001), T, 9)

        # one ascending cumulative-quadrature pass over segment and fit nodes
        all_s = np.concatenate([s_nodes, s_fit])
        order = np.argsort(all_s, kind="stable")
        all_F = np.empty_like(all_s)
        all_F[order] = F.diff(all_s[order])
        Fd, Ffit = all_F[: s_nodes.size], all_F[s_nodes.size:]

        if np.any(Fd <= 0):
            # antiderivative still flat at the sampled resolution: grow T and retry
            diagnostics["flat_segment"] = True
            t_lo, T = t_hi, 2.0 * T
            continue
        seg = half * float(np.dot(_T_WI, 2.0 * t_nodes / np.sqrt(Fd)))
        acc += seg
        good = Ffit > 0
        if good.sum() >= 4:
            x = np.log(s_fit[good])
            y = -0.5 * np.log(Ffit[good])
            beta = -float(np.polyfit(x, y, 1)[0])
        else:
            beta = 0.0

        I_T = 1.0 / math.sqrt(Ffit[-1]) if Ffit[-1] > 0 else math.inf
        if beta > 1.05:
            tail = I_T * T / (beta - 1.0)
            est = acc + tail
            state = "converges"
            stable = (
                prev_state == "converges"
                and prev_estimate is not None
                and abs(est - prev_estimate) <= tol * abs(est)
                and tail <= 10.0 * tol * est
            )
            if stable:
                verdict, estimate = "converges", est
                break
            prev_estimate, prev_state = est, state
        elif beta <= 1.02:
            state = "diverges"
            if prev_state == "diverges" and k >= 2:
                verdict = "diverges"
                break
            prev_estimate, prev_state = None, state
        else:
            prev_estimate, prev_state = None, "borderline"

        t_lo, T = t_hi, 2.0 * T

    diagnostics.update(doublings=k + 1, final_T=T, accumulated=acc)
    return KoVerdict(verdict, a, estimate, beta, diagnostics)


# ---------------------------------------------------------------------------
# local minorant over a distance band
# ---------------------------------------------------------------------------

@dataclass
class Minorant:
    """Largest nondecreasing-in-construction minorant h of f over a distance band.

    Callable: h(r) = min over sampled d in [d_min, d_max] of f(d, r).
    """

    spec: NonlinearitySpec
    d_samples: np.ndarray
    r_grid: np.ndarray
    values: np.ndarray
    vacuous: bool  # identically zero on the tabulation grid

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        scalar = r.ndim == 0
        r2 = np.atleast_1d(r)
        out = eval_f(self.spec, self.d_samples[:, None], r2[None, :]).min(axis=0)
        return float(out[0]) if scalar else out


def ko_loc_minorant(
    spec: NonlinearitySpec,
    d_min: float,
    d_max: float,
    r_grid: Sequence[float],
    d_samples: int = 65,
) -> Minorant:
    """Pointwise minimum of f over the distance band {d_min <= d <= d_max}."""
    if not (0 < d_min <= d_max):
        raise ValueError("need 0 < d_min <= d_max")
    r = np.asarray(r_grid, dtype=float)
    ds = np.linspace(d_min, d_max, d_samples)
    vals = eval_f(spec, ds[:, None], r[None, :]).min(axis=0)
    return Minorant(spec, ds, r, vals, vacuous=bool(np.all(vals <= 0)))


# ---------------------------------------------------------------------------
# hypothesis checks (sample-based falsifiers)
# ---------------------------------------------------------------------------

@dataclass
class HypothesisReport:
    hypothesis: str
    holds: bool
    witness: Optional[dict]
    sample_counts: dict
    worst_margin: float = math.inf
    skipped: int = 0
    details: dict = field(default_factory=dict)


_REL_TOL = 1e-12


def check_complete_decay(
    spec: NonlinearitySpec,
    d_grid: Sequence[float],
    eps_grid: Sequence[float],
    r_grid: Sequence[float],
    ell_grid: Sequence[float],
    toward_boundary: bool = True,
) -> HypothesisReport:
    """Check that increments of f do not grow along the frame axis shift.

    The shift direction follows the graph frame: moving a point by +eps along
    the axis reduces its boundary distance (toward_boundary=True evaluates the
    shifted factor at d - eps; samples with d - eps < 0 are skipped).  For
    separable specs this reduces to weight decay, 0 <= a(d - eps) <= a(d).
    """
    d = np.asarray(d_grid, dtype=float)
    eps = np.asarray(eps_grid, dtype=float)
    sgn = -1.0 if toward_boundary else 1.0
    counts = {"d": d.size, "eps": eps.size}

    D, E = np.meshgrid(d, eps, indexing="ij")
    Ds = D + sgn * E
    ok_dom = Ds >= 0
    skipped = int((~ok_dom).sum())
    Dsc = np.where(ok_dom, Ds, 0.0)

    if spec.kind == "separable" and spec.weight is not None:
        wa = spec.weight(D)
        wb = spec.weight(Dsc)
        scale = np.maximum(1.0, np.abs(wa))
        viol_neg = (wb < -_REL_TOL * scale) & ok_dom
        viol_dec = (wb > wa + _REL_TOL * scale) & ok_dom
        margin = np.where(ok_dom, np.minimum(wa - wb, wb), np.inf)
        bad = viol_neg | viol_dec
        if bad.any():
            i, j = np.argwhere(bad)[0]
            witness = {"d": float(d[i]), "eps": float(eps[j]),
                       "weight_at_d": float(wa[i, j]), "weight_shifted": float(wb[i, j])}
            return HypothesisReport("complete_decay", False, witness, counts,
                                    float(margin[bad].min()), skipped,
                                    {"reduced_to_weight_decay": True})
        return HypothesisReport("complete_decay", True, None, counts,
                                float(margin[ok_dom].min()) if ok_dom.any() else math.inf,
                                skipped, {"reduced_to_weight_decay": True})

    r = np.asarray(r_grid, dtype=float)
    ell = np.asarray(ell_grid, dtype=float)
    counts.update(r=r.size, ell=ell.size)
    worst = math.inf
    witness = None
    for i, dv in enumerate(d):
        for j, ev in enumerate(eps):
            dvs = dv + sgn * ev
            if dvs < 0:
                continue
            L, R = np.meshgrid(ell, r, indexing="ij")
            lhs = eval_f(spec, dv, L + R) - eval_f(spec, dvs, L + R)
            rhs = eval_f(spec, dv, L) - eval_f(spec, dvs, L)
            scale = np.maximum(1.0, np.abs(eval_f(spec, dv, L + R)))
            m = np.minimum(lhs - rhs, rhs)
            worst = min(worst, float(m.min()))
            bad = (lhs < rhs - _REL_TOL * scale) | (rhs < -_REL_TOL * scale)
            if bad.any() and witness is None:
                k, l = np.argwhere(bad)[0]
                witness = {"d": float(dv), "eps": float(ev),
                           "ell": float(ell[k]), "r": float(r[l]),
                           "lhs": float(lhs[k, l]), "rhs": float(rhs[k, l])}
    return HypothesisReport("complete_decay", witness is None, witness, counts, worst, skipped)


def check_superadditivity(
    spec: NonlinearitySpec,
    C: float,
    u_grid: Sequence[float],
    ell_grid: Sequence[float],
    d_grid: Sequence[float] = (1.0,),
) -> HypothesisReport:
    """Check f(d, u+ell) >= f(d, u) + f(d, ell) - C on the sample product."""
    u = np.asarray(u_grid, dtype=float)
    ell = np.asarray(ell_grid, dtype=float)
    d = np.asarray(d_grid, dtype=float)
    counts = {"u": u.size, "ell": ell.size, "d": d.size}
    worst = math.inf
    witness = None
    for dv in d:
        U, L = np.meshgrid(u, ell, indexing="ij")
        lhs = eval_f(spec, dv, U + L)
        rhs = eval_f(spec, dv, U) + eval_f(spec, dv, L) - C
        margin = lhs - rhs
        worst = min(worst, float(margin.min()))
        scale = np.maximum(1.0, np.abs(lhs))
        bad = margin < -_REL_TOL * scale
        if bad.any() and witness is None:
            i, j = np.argwhere(bad)[0]
            witness = {"d": float(dv), "u": float(u[i]), "ell": float(ell[j]),
                       "lhs": float(lhs[i, j]), "rhs": float(rhs[i, j])}
    return HypothesisReport("superadditivity", witness is None, witness, counts, worst,
                            details={"C": C})


def check_phi_condition(
    spec: NonlinearitySpec,
    phi: Callable[[np.ndarray], np.ndarray],
    eps: float,
    r_grid: Sequence[float],
    d_grid: Sequence[float] = (1.0,),
    phi_prime: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> HypothesisReport:
    """Check f(d, r + eps*phi(r)) >= f(d, r) * (1 + eps*phi'(r)) where f > 0.

    phi' is taken analytically when supplied, else by centered differences with
    step = min grid gap / 8 (safe one-sided because phi'' <= 0).
    """
    if eps <= 0:
        raise ValueError("need eps > 0")
    r = np.asarray(r_grid, dtype=float)
    d = np.asarray(d_grid, dtype=float)
    counts = {"r": r.size, "d": d.size}
    if phi_prime is None:
        step = float(np.min(np.diff(np.unique(r)))) / 8.0 if r.size > 1 else 1e-6
        phi_prime = lambda t, s=step, p=phi: (p(t + s) - p(np.maximum(t - s, 0.0))) / (
            t + s - np.maximum(t - s, 0.0)
        )

    worst = math.inf
    witness = None
    skipped = 0
    for dv in d:
        fr = eval_f(spec, dv, r)
        active = fr > 0
        skipped += int((~active).sum())
        if not active.any():
            continue
        ra = r[active]
        lhs = eval_f(spec, dv, ra + eps * np.asarray(phi(ra), dtype=float))
        rhs = fr[active] * (1.0 + eps * np.asarray(phi_prime(ra), dtype=float))
        margin = lhs - rhs
        worst = min(worst, float(margin.min()))
        bad = margin < -_REL_TOL * np.maximum(1.0, np.abs(rhs))
        if bad.any() and witness is None:
            i = np.argwhere(bad)[0][0]
            witness = {"d": float(dv), "r": float(ra[i]), "eps": eps,
                       "lhs": float(lhs[i]), "rhs": float(rhs[i])}
    inconclusive = skipped == r.size * d.size
    return HypothesisReport("phi_condition", witness is None and not inconclusive,
                            witness, counts, worst, skipped,
                            {"inconclusive": inconclusive, "eps": eps})


def check_ratio_monotone(
    spec: NonlinearitySpec,
    r_grid: Sequence[float],
    d_grid: Sequence[float] = (1.0,),
) -> HypothesisReport:
    """Check that r -> f(d, r)/r is nondecreasing along r_grid for each d."""
    r = np.asarray(r_grid, dtype=float)
    if np.any(r <= 0) or np.any(np.diff(r) <= 0):
        raise ValueError("r_grid must be strictly positive ascending")
    d = np.asarray(d_grid, dtype=float)
    counts = {"r": r.size, "d": d.size}
    worst = math.inf
    witness = None
    for dv in d:
        ratio = eval_f(spec, dv, r) / r
        drop = np.diff(ratio)
        worst = min(worst, float(drop.min()) if drop.size else math.inf)
        bad = drop < -_REL_TOL * np.maximum(1.0, np.abs(ratio[:-1]))
        if bad.any() and witness is None:
            i = int(np.argwhere(bad)[0][0])
            witness = {"d": float(dv), "r": float(r[i]), "r_next": float(r[i + 1]),
                       "ratio": float(ratio[i]), "ratio_next": float(ratio[i + 1])}
    return HypothesisReport("ratio_monotone", witness is None, witness, counts, worst)


# ---------------------------------------------------------------------------
# staircase counterexample
# ---------------------------------------------------------------------------

def _staircase_profile(flats: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
    """Continuous nondecreasing profile squeezed between r^2 and r^3 for r >= 1,
    constant on each flat [s_n, e_n] with value e_n^2, r^2 elsewhere below 1 and
    in the gaps (clamped connectors keep it inside the squeeze)."""
    if flats.size == 0:
        return lambda r: np.square(np.asarray(r, dtype=float))
    starts = flats[:, 0]
    ends = flats[:, 1]
    vals = ends ** 2
    # connector anchors: (left abscissa, left value) of the ramp into flat n
    left_x = np.concatenate([[1.0], ends[:-1]])
    left_v = np.concatenate([[1.0], vals[:-1]])

    def profile(r):
        r = np.asarray(r, dtype=float)
        scalar = r.ndim == 0
        r2 = np.atleast_1d(r).astype(float)
        out = np.square(r2)  # below 1, in gaps past a settled flat, and past the last flat
        idx = np.searchsorted(starts, r2, side="right") - 1
        on_flat = (idx >= 0) & (r2 <= ends[np.clip(idx, 0, len(ends) - 1)])
        out = np.where(on_flat, vals[np.clip(idx, 0, len(vals) - 1)], out)
        # connector region: between the previous flat end (or 1) and the next start
        nxt = np.searchsorted(starts, r2, side="right")
        in_gap = (~on_flat) & (r2 >= 1.0) & (nxt < len(starts))
        if in_gap.any():
            j = nxt[in_gap]
            x0, v0 = left_x[j], left_v[j]
            x1, v1 = starts[j], vals[j]
            t = np.clip((r2[in_gap] - x0) / np.maximum(x1 - x0, 1e-300), 0.0, 1.0)
            lin = v0 + t * (v1 - v0)
            gap_val = np.minimum(r2[in_gap] ** 3, np.maximum(r2[in_gap] ** 2, lin))
            out[in_gap] = gap_val
        return float(out[0]) if scalar else out

    return profile


def staircase_counterexample(n_intervals: int, seed: int = 0) -> NonlinearitySpec:
    """Nondecreasing profile with flat intervals whose lengths grow without bound,
    squeezed between r^2 and r^3 off the flats.

    The constant on each flat [s, e] is e^2, which stays inside the squeeze as
    long as e^2 <= s^3; infeasible placements are retried at larger abscissae
    (always possible since the squeeze gap grows without bound).  Interval
    placement is deterministic given the seed.
    """
    if n_intervals < 0:
        raise ValueError("n_intervals must be >= 0")
    rng = np.random.default_rng(seed)
    flats = []
    s = 0.0
    prev_end = 4.0
    for n in range(1, n_intervals + 1):
        length = 6.0 * n * (1.0 + 0.2 * rng.random())
        gap = 1.0 + rng.random()
        s = prev_end + gap
        # feasibility: (s + length)^2 <= s^3, retry at larger abscissae
        while (s + length) ** 2 > s ** 3:
            s *= 1.5
        e = s + length
        flats.append((s, e))
        prev_end = e
    flats = np.asarray(flats, dtype=float).reshape(-1, 2)
    return NonlinearitySpec(
        kind="staircase",
        profile=_staircase_profile(flats),
        monotone_in_r=True,
        vanishes_at_zero=True,
        name="staircase",
        params={"n_intervals": n_intervals, "seed": seed,
                "flats": [tuple(map(float, f)) for f in flats]},
    )


# ---------------------------------------------------------------------------
# named families (experiment-config surface)
# ---------------------------------------------------------------------------

def _power(p):
    return lambda r: np.power(np.asarray(r, dtype=float), p)


def _weight_distance_power(alpha):
    return lambda d: np.power(np.asarray(d, dtype=float), alpha)


def _weight_exp_decay(kappa):
    def w(d):
        d = np.asarray(d, dtype=float)
        with np.errstate(divide="ignore", over="ignore"):
            out = np.where(d > 0, np.exp(-kappa / np.maximum(d, 1e-300)), 0.0)
        return out
    return w


def _weight_exp_alpha_decay(alpha):
    def w(d):
        d = np.asarray(d, dtype=float)
        with np.errstate(divide="ignore", over="ignore"):
            out = np.where(d > 0, np.exp(-1.0 / np.maximum(d, 1e-300) ** alpha), 0.0)
        return out
    return w


def make_family(family: str, params: dict = None) -> NonlinearitySpec:
    """Construct a named nonlinearity family.

    Families: power (r^p), weighted_power (d^alpha * r^p), exp_decay
    (e^{-kappa/d} * r^p), exp_alpha_decay (e^{-1/d^alpha} * r^p), staircase,
    custom_table ((r, f) pairs, linearly interpolated).
    """
    params = dict(params or {})
    if family == "power":
        p = float(params.get("p", 2.0))
        return NonlinearitySpec("separable", _power(p), None, name=f"power(p={p:g})",
                                params={"p": p})
    if family == "weighted_power":
        p = float(params.get("p", 2.0))
        alpha = float(params.get("alpha", 1.0))
        return NonlinearitySpec("separable", _power(p), _weight_distance_power(alpha),
                                name=f"weighted_power(p={p:g},alpha={alpha:g})",
                                params={"p": p, "alpha": alpha})
    if family == "exp_decay":
        p = float(params.get("p", 2.0))
        kappa = float(params.get("kappa", 1.0))
        return NonlinearitySpec("separable", _power(p), _weight_exp_decay(kappa),
                                name=f"exp_decay(p={p:g},kappa={kappa:g})",
                                params={"p": p, "kappa": kappa})
    if family == "exp_alpha_decay":
        p = float(params.get("p", 2.0))
        alpha = float(params.get("alpha", 0.5))
        return NonlinearitySpec("separable", _power(p), _weight_exp_alpha_decay(alpha),
                                name=f"exp_alpha_decay(p={p:g},alpha={alpha:g})",
                                params={"p": p, "alpha": alpha})
    if family == "staircase":
        return staircase_counterexample(int(params.get("n_intervals", 5)),
                                        int(params.get("seed", 0)))
    if family == "custom_table":
        pts = np.asarray(params["table"], dtype=float)
        r_t, f_t = pts[:, 0], pts[:, 1]
        if np.any(np.diff(r_t) <= 0):
            raise ValueError("custom_table abscissae must be strictly increasing")
        mono = bool(np.all(np.diff(f_t) >= 0))
        slope_end = (f_t[-1] - f_t[-2]) / (r_t[-1] - r_t[-2]) if len(r_t) > 1 else 0.0

        def profile(r, r_t=r_t, f_t=f_t, slope=slope_end):
            r = np.asarray(r, dtype=float)
            base = np.interp(r, r_t, f_t)
            return np.where(r > r_t[-1], f_t[-1] + slope * (r - r_t[-1]), base)

        return NonlinearitySpec("general", profile, monotone_in_r=mono,
                                vanishes_at_zero=bool(abs(f_t[0]) < 1e-15 and r_t[0] == 0),
                                name="custom_table", params={"n_points": len(r_t)})
    raise ValueError(f"unknown nonlinearity family {family!r}")


FAMILIES = ("power", "weighted_power", "exp_decay", "exp_alpha_decay",
            "staircase", "custom_table")
