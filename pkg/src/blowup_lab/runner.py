"""Reproducible batch experiment runner.

A single YAML config declares the nonlinearity, the domain, solver and ramp
settings, and the list of pipelines to execute (ko, g_transform, hypotheses,
ramp, uniqueness, barrier, counterexample).  Artifacts are CSV traces and JSON
verdict files with deterministic formatting (17 significant digits, sorted
keys, no timestamps), so identical configs produce byte-identical artifacts
regardless of the worker count; the manifest indexes every emitted file with
its checksum.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict, is_dataclass
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .nonlinearity import (
    make_family,
    g_transform,
    ko_integral,
    check_complete_decay,
    check_superadditivity,
    check_phi_condition,
    check_ratio_monotone,
    FAMILIES,
)
from .grids import DomainSpec, build_grid
from .solver import SolveConfig
from .large import (
    RampSchedule,
    large_solution_ramp,
    uniqueness_gap,
    barrier_probe,
    mixed_problem_ell,
)

__all__ = ["ExperimentConfig", "RunManifest", "ConfigError", "run", "compare"]

PIPELINES = ("ko", "g_transform", "hypotheses", "ramp", "uniqueness",
             "barrier", "counterexample")

TRACE_HEADER = "index,n,probe_value,residual_sup"


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# config
# ---------------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    pipelines: list
    nonlinearity: dict
    domain: dict = None
    solver: dict = field(default_factory=dict)
    ramp: dict = field(default_factory=dict)
    domains: dict = field(default_factory=dict)
    ko: dict = field(default_factory=dict)
    g: dict = field(default_factory=dict)
    hypotheses: dict = field(default_factory=dict)
    barrier: dict = field(default_factory=dict)
    gap_rel_tol: float = 1e-3
    divergence_factor: float = 1e3
    probe_band: list = None
    seed: int = 0
    tasks: int = 1
    out: str = None

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            raw = Path(path).read_text()
        except OSError as err:
            raise ConfigError(f"cannot read config: {err}") from err
        try:
            tree = yaml.safe_load(raw)
        except yaml.YAMLError as err:
            raise ConfigError(f"config does not parse: {err}") from err
        if not isinstance(tree, dict):
            raise ConfigError("config root must be a mapping")
        cfg = cls._from_tree(tree)
        cfg.raw_bytes = raw.encode()
        return cfg

    @classmethod
    def _from_tree(cls, tree: dict) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(tree) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "pipelines" not in tree:
            raise ConfigError("missing key: pipelines")
        pipes = tree["pipelines"]
        if isinstance(pipes, str):
            pipes = [pipes]
        bad = [p for p in pipes if p not in PIPELINES]
        if bad:
            raise ConfigError(f"unknown pipelines {bad}; choose from {PIPELINES}")
        if "nonlinearity" not in tree or "family" not in tree["nonlinearity"]:
            raise ConfigError("missing key: nonlinearity.family")
        fam = tree["nonlinearity"]["family"]
        if fam not in FAMILIES:
            raise ConfigError(f"unknown nonlinearity family {fam!r} (see list-families)")
        need_domain = {"ramp", "uniqueness", "barrier"} & set(pipes)
        if need_domain and not tree.get("domain"):
            raise ConfigError(f"pipelines {sorted(need_domain)} need a domain block")
        kwargs = {k: v for k, v in tree.items() if k in known}
        kwargs["pipelines"] = pipes
        return cls(**kwargs)

    def spec(self):
        return make_family(self.nonlinearity["family"],
                           self.nonlinearity.get("params", {}))

    def solve_config(self) -> SolveConfig:
        return SolveConfig(**self.solver)

    def ramp_schedule(self) -> RampSchedule:
        return RampSchedule(**self.ramp)

    def domain_spec(self) -> DomainSpec:
        d = dict(self.domain or {})
        kind = d.get("kind")
        if kind == "interval":
            return DomainSpec("interval", tuple(d["bounds"]))
        if kind == "rectangle":
            (x0, x1), (y0, y1) = d["bounds"]
            return DomainSpec("rectangle", ((x0, x1), (y0, y1)))
        if kind == "graph_domain":
            gconf = d.get("graph", {})
            fn = _graph_fn(gconf.get("fn", "zero"))
            return DomainSpec("graph_domain", graph_fn=fn,
                              rho=float(gconf["rho"]), height=float(gconf["height"]))
        raise ConfigError(f"unknown domain kind {kind!r}")

    def spacing(self) -> float:
        if not self.domain or "spacing" not in self.domain:
            raise ConfigError("domain.spacing required for grid pipelines")
        return float(self.domain["spacing"])


def _graph_fn(decl):
    if decl == "zero":
        return lambda x: np.zeros_like(np.asarray(x, dtype=float))
    if decl == "lipschitz_saw":
        return lambda x: -0.25 * np.abs(np.asarray(x, dtype=float))
    if isinstance(decl, (list, tuple)):
        pts = np.asarray(decl, dtype=float)
        return lambda x: np.interp(np.asarray(x, dtype=float), pts[:, 0], pts[:, 1])
    raise ConfigError(f"unknown graph function {decl!r}")


# ---------------------------------------------------------------------------
# serialization helpers (deterministic formatting)
# ---------------------------------------------------------------------------

def _fmt(x) -> str:
    return format(float(x), ".17g")


def _jsonable(obj):
    if is_dataclass(obj) and not isinstance(obj, type):
        return _jsonable(asdict(obj))
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        return float(_fmt(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(_jsonable(payload), indent=1, sort_keys=True) + "\n")


def _write_trace_csv(path: Path, rows) -> None:
    lines = [TRACE_HEADER]
    for (k, n, probe, res) in rows:
        lines.append(f"{k},{_fmt(n)},{_fmt(probe)},{_fmt(res)}")
    path.write_text("\n".join(lines) + "\n")


def _write_table_csv(path: Path, header: str, columns) -> None:
    lines = [header]
    for row in zip(*columns):
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# pipelines
# ---------------------------------------------------------------------------

def _pipe_ko(cfg: ExperimentConfig, outdir: Path):
    spec = cfg.spec()
    a = float(cfg.ko.get("a", 1.0))
    verdict = ko_integral(spec.profile, a,
                          tail_bound=cfg.ko.get("tail_bound"),
                          tol=float(cfg.ko.get("tol", 1e-4)))
    _write_json(outdir / "ko_verdict.json", {
        "family": spec.name,
        "verdict": verdict.verdict,
        "a": verdict.a,
        "integral_estimate": verdict.integral_estimate,
        "tail_exponent": verdict.tail_exponent,
        "diagnostics": verdict.diagnostics,
    })
    return {"verdict": verdict.verdict}, ["ko_verdict.json"]


def _pipe_g_transform(cfg: ExperimentConfig, outdir: Path):
    spec = cfg.spec()
    gconf = cfg.g
    ell_max = float(gconf.get("ell_max", 10.0))
    n_ell = int(gconf.get("n_ell", 50))
    u_max = float(gconf.get("u_search_max", 100.0))
    n_u = int(gconf.get("u_samples", 400))
    ell = np.linspace(0.0, ell_max, n_ell)
    gt = g_transform(spec, ell, u_max, n_u)
    f_ell = spec.profile(ell)
    _write_table_csv(outdir / "g_table.csv", "ell,g,profile",
                     (ell, gt.values, f_ell))
    _write_json(outdir / "g_report.json", {
        "family": spec.name,
        "certified_exact": gt.certified_exact,
        "u_search_max": gt.u_search_max,
        "tail_drop": gt.tail_drop,
        "warnings": gt.warnings,
        "max_g_minus_f": float(np.max(gt.values - f_ell)),
    })
    return {"certified_exact": gt.certified_exact}, ["g_table.csv", "g_report.json"]


def _pipe_hypotheses(cfg: ExperimentConfig, outdir: Path):
    spec = cfg.spec()
    h = cfg.hypotheses
    d_grid = np.asarray(h.get("d_grid", np.linspace(0.05, 1.0, 12).tolist()))
    eps_grid = np.asarray(h.get("eps_grid", np.linspace(0.01, 0.2, 6).tolist()))
    r_grid = np.asarray(h.get("r_grid", np.linspace(0.1, 20.0, 64).tolist()))
    ell_grid = np.asarray(h.get("ell_grid", np.linspace(0.0, 10.0, 32).tolist()))
    eps_phi = float(h.get("eps_phi", 0.1))
    C = float(h.get("C", 0.0))
    reports = {
        "complete_decay": check_complete_decay(spec, d_grid, eps_grid, r_grid, ell_grid),
        "superadditivity": check_superadditivity(spec, C, r_grid, ell_grid, d_grid),
        "phi_condition": check_phi_condition(
            spec, np.log1p, eps_phi, r_grid, d_grid,
            phi_prime=lambda r: 1.0 / (1.0 + r)),
        "ratio_monotone": check_ratio_monotone(spec, r_grid, d_grid),
    }
    payload = {name: {
        "holds": rep.holds,
        "witness": rep.witness,
        "worst_margin": rep.worst_margin,
        "sample_counts": rep.sample_counts,
        "skipped": rep.skipped,
    } for name, rep in reports.items()}
    _write_json(outdir / "hypotheses.json", payload)
    return {name: rep.holds for name, rep in reports.items()}, ["hypotheses.json"]


def _pipe_ramp(cfg: ExperimentConfig, outdir: Path):
    spec = cfg.spec()
    grid = build_grid(cfg.domain_spec(), cfg.spacing())
    if cfg.domain_spec().kind == "graph_domain" and cfg.ramp.get("mixed", False):
        rr = mixed_problem_ell(spec, grid, cfg.ramp_schedule(), cfg.solve_config(),
                               divergence_factor=cfg.divergence_factor)
    else:
        rr = large_solution_ramp(
            spec, grid, cfg.ramp_schedule(), cfg.solve_config(),
            probe_band=tuple(cfg.probe_band) if cfg.probe_band else None,
            divergence_factor=cfg.divergence_factor,
        )
    _write_trace_csv(outdir / "ramp_trace.csv", rr.trace)
    _write_json(outdir / "ramp_report.json", {
        "stop_reason": rr.stop_reason,
        "stagnated": rr.stagnated,
        "diverged": rr.diverged,
        "levels_used": rr.details.get("levels_used"),
        "monotone_violation_max": rr.monotone_violation_max,
        "final_residual_sup": rr.report.residual_sup,
    })
    ok = rr.monotone_violation_max <= 2.0 * cfg.solve_config().newton_tol
    return {"stop_reason": rr.stop_reason, "diverged": rr.diverged,
            "monotone_ok": ok}, ["ramp_trace.csv", "ramp_report.json"]


def _pipe_uniqueness(cfg: ExperimentConfig, outdir: Path):
    spec = cfg.spec()
    dd = cfg.domains
    rep = uniqueness_gap(
        spec, cfg.domain_spec(),
        count=int(dd.get("inner_count", 4)),
        ramp=cfg.ramp_schedule(),
        cfg=cfg.solve_config(),
        spacing=cfg.spacing(),
        margin0=dd.get("margin0"),
        decay=float(dd.get("margin_decay", 0.5)),
        probe_band=tuple(cfg.probe_band) if cfg.probe_band else None,
        gap_rel_tol=cfg.gap_rel_tol,
        weight_mode=dd.get("extend_weight", "clamp_zero"),
    )
    idx = np.arange(len(rep.gap_profile), dtype=float)
    _write_table_csv(outdir / "gap_profile.csv", "index,gap_interior,gap_boundary",
                     (idx, rep.gap_profile, rep.boundary_gap))
    _write_json(outdir / "uniqueness.json", {
        "verdict": rep.verdict,
        "interior_scale": rep.interior_scale,
        "gap_tol": rep.gap_tol,
        "margins": rep.margins,
        "details": {k: v for k, v in rep.details.items() if k != "ramp_flags"},
    })
    return {"verdict": rep.verdict}, ["gap_profile.csv", "uniqueness.json"]


def _pipe_barrier(cfg: ExperimentConfig, outdir: Path):
    spec = cfg.spec()
    b = cfg.barrier
    rep = barrier_probe(
        spec, cfg.domain_spec(),
        z_lateral=float(b.get("z", 0.0)),
        radius=float(b.get("radius", 0.5)),
        ramp=cfg.ramp_schedule(),
        cfg=cfg.solve_config(),
        spacing=cfg.spacing(),
        divergence_factor=cfg.divergence_factor,
        probe_depth_steps=int(b.get("probe_depth_steps", 4)),
    )
    _write_trace_csv(outdir / "barrier_trace.csv", rep.trace)
    _write_json(outdir / "barrier.json", {
        "verdict": rep.verdict,
        "z": list(rep.z),
        "radius": rep.radius,
        "probe_point": list(rep.probe_point),
        "details": rep.details,
    })
    return {"verdict": rep.verdict}, ["barrier_trace.csv", "barrier.json"]


def _pipe_counterexample(cfg: ExperimentConfig, outdir: Path):
    params = cfg.nonlinearity.get("params", {})
    n_int = int(params.get("n_intervals", 5))
    seed = int(params.get("seed", cfg.seed))
    spec = make_family("staircase", {"n_intervals": n_int, "seed": seed})
    flats = spec.params["flats"]
    top = flats[-1][1] + 2.0 if flats else 20.0

    ko = ko_integral(spec.profile, a=1.0)
    ell_grid = np.array([1.0, 5.0, 10.0])
    gt = g_transform(spec, ell_grid, u_search_max=top, u_samples=2000)
    r_grid = np.linspace(0.5, top, 800)
    ratio = check_ratio_monotone(spec, r_grid)
    supa = check_superadditivity(spec, 0.0, np.linspace(0.0, top, 160),
                                 np.linspace(0.0, 20.0, 80))
    rs = np.linspace(0.0, top, 600)
    _write_table_csv(outdir / "staircase_profile.csv", "r,f", (rs, spec.profile(rs)))
    verdicts = {
        "ko_converges": ko.verdict == "converges",
        "g_vanishes": bool(np.all(gt.values <= 1e-12)),
        "ratio_monotone_fails": not ratio.holds,
        "superadditivity_fails": not supa.holds,
    }
    _write_json(outdir / "counterexample.json", {
        "verdicts": verdicts,
        "flats": flats,
        "ko": {"verdict": ko.verdict, "integral_estimate": ko.integral_estimate},
        "g_values": gt.values,
        "ratio_witness": ratio.witness,
        "superadditivity_witness": supa.witness,
    })
    return verdicts, ["staircase_profile.csv", "counterexample.json"]


_PIPE_FN = {
    "ko": _pipe_ko,
    "g_transform": _pipe_g_transform,
    "hypotheses": _pipe_hypotheses,
    "ramp": _pipe_ramp,
    "uniqueness": _pipe_uniqueness,
    "barrier": _pipe_barrier,
    "counterexample": _pipe_counterexample,
}


# ---------------------------------------------------------------------------
# run + manifest
# ---------------------------------------------------------------------------

@dataclass
class RunManifest:
    config_hash: str
    tool_version: str
    started_at: str
    finished_at: str
    pipeline_status: dict
    files: dict  # relative path -> sha256

    @classmethod
    def read(cls, path) -> "RunManifest":
        tree = json.loads(Path(path).read_text())
        return cls(**{k: tree[k] for k in cls.__dataclass_fields__})


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run(config_path, out_dir=None, tasks: int = None) -> RunManifest:
    """Execute the pipelines a config selects and write artifacts plus manifest.

    Independent pipelines run in a bounded thread pool; all files are written
    by the coordinating thread in sorted order so artifacts are byte-identical
    across task counts.  Raises on config errors before touching the disk.
    """
    cfg = ExperimentConfig.load(config_path)
    started = time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime())
    root = Path(out_dir or cfg.out or os.environ.get("BLOWUP_LAB_OUT", "runs"))
    root.mkdir(parents=True, exist_ok=True)
    n_tasks = max(1, int(tasks if tasks is not None else cfg.tasks))

    status = {}
    emitted = {}

    def exec_pipe(name):
        outdir = root / name
        outdir.mkdir(parents=True, exist_ok=True)
        return _PIPE_FN[name](cfg, outdir)

    ordered = [p for p in PIPELINES if p in cfg.pipelines]
    with ThreadPoolExecutor(max_workers=n_tasks) as pool:
        futures = {name: pool.submit(exec_pipe, name) for name in ordered}
        for name in ordered:
            try:
                summary, files = futures[name].result()
                status[name] = {"ok": True, "summary": summary}
                for f in files:
                    emitted[f"{name}/{f}"] = _sha256(root / name / f)
            except Exception as err:  # pipeline failure is a result, not a crash
                status[name] = {"ok": False, "error": f"{type(err).__name__}: {err}"}

    finished = time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime())
    manifest = RunManifest(
        config_hash=hashlib.sha256(cfg.raw_bytes).hexdigest(),
        tool_version=__version__,
        started_at=started,
        finished_at=finished,
        pipeline_status=_jsonable(status),
        files=emitted,
    )
    _write_json(root / "manifest.json", asdict(manifest))
    _write_summary(root / "summary.txt", manifest)
    return manifest


def _write_summary(path: Path, manifest: RunManifest) -> None:
    lines = [f"blowup-lab {manifest.tool_version}",
             f"config {manifest.config_hash[:12]}"]
    for name, st in manifest.pipeline_status.items():
        if st["ok"]:
            parts = ", ".join(f"{k}={v}" for k, v in st["summary"].items())
            lines.append(f"  {name}: ok ({parts})")
        else:
            lines.append(f"  {name}: FAILED ({st['error']})")
    lines.append(f"{len(manifest.files)} artifact(s)")
    path.write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# compare
# ---------------------------------------------------------------------------

def compare(manifest_a, manifest_b, tol: float = 0.0) -> dict:
    """Field-by-field numeric diff of matching artifacts of two runs.

    Returns a report with per-file maximal absolute differences; files present
    in only one run or with mismatched shapes are listed as warnings rather
    than failures (partial diff).
    """
    ma = RunManifest.read(manifest_a)
    mb = RunManifest.read(manifest_b)
    root_a = Path(manifest_a).parent
    root_b = Path(manifest_b).parent
    names_a, names_b = set(ma.files), set(mb.files)

    report = {"identical": [], "differing": {}, "warnings": []}
    for name in sorted(names_a ^ names_b):
        side = "first" if name in names_a else "second"
        report["warnings"].append(f"{name} present only in {side} run")
    for name in sorted(names_a & names_b):
        if ma.files[name] == mb.files[name]:
            report["identical"].append(name)
            continue
        pa, pb = root_a / name, root_b / name
        try:
            diff = _numeric_diff(pa, pb, tol)
        except ValueError as err:
            report["warnings"].append(f"{name}: {err}")
            continue
        if diff is None:
            report["identical"].append(name)
        else:
            report["differing"][name] = diff
    report["empty"] = not report["differing"] and not report["warnings"]
    return report


def _numeric_diff(pa: Path, pb: Path, tol: float):
    if pa.suffix == ".json":
        va = json.loads(pa.read_text())
        vb = json.loads(pb.read_text())
        diffs = {}
        _diff_tree(va, vb, "", diffs, tol)
        return diffs or None
    if pa.suffix == ".csv":
        ta = _read_csv(pa)
        tb = _read_csv(pb)
        if ta[0] != tb[0]:
            raise ValueError("csv headers differ")
        if ta[1].shape != tb[1].shape:
            raise ValueError(f"csv shapes differ: {ta[1].shape} vs {tb[1].shape}")
        delta = np.abs(ta[1] - tb[1])
        worst = float(delta.max(initial=0.0))
        return {"max_abs_diff": worst} if worst > tol else None
    raise ValueError("not a comparable artifact type")


def _read_csv(path: Path):
    lines = path.read_text().strip().splitlines()
    header = lines[0]
    data = np.array([[float(x) for x in ln.split(",")] for ln in lines[1:]])
    return header, data


def _diff_tree(a, b, where, out, tol):
    if isinstance(a, dict) and isinstance(b, dict):
        for k in sorted(set(a) | set(b)):
            if k not in a or k not in b:
                out[f"{where}/{k}"] = "missing on one side"
                continue
            _diff_tree(a[k], b[k], f"{where}/{k}", out, tol)
    elif isinstance(a, list) and isinstance(b, list):
        if len(a) != len(b):
            out[where] = f"length {len(a)} vs {len(b)}"
            return
        for i, (x, y) in enumerate(zip(a, b)):
            _diff_tree(x, y, f"{where}[{i}]", out, tol)
    elif isinstance(a, (int, float)) and isinstance(b, (int, float)) \
            and not isinstance(a, bool) and not isinstance(b, bool):
        if abs(float(a) - float(b)) > tol:
            out[where] = {"a": a, "b": b}
    elif a != b:
        out[where] = {"a": a, "b": b}
