"""
Command-line runner for the caloric lab.

Every subcommand validates its parameters, runs one module-level experiment and
writes a CSV of tabular results, an audit.json with the audit records, version,
seed and derived constants, and a metadata.json holding everything that may
differ between identical runs (timestamps, thread count).
"""

import argparse
import csv
import json
import logging
import math
import os
import subprocess
import sys
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Any, Callable, Dict, List, Optional

import numpy as np
from pydantic import ValidationError

from caloric_mc import (
    WalkConfig,
    check_ball_estimate,
    check_cylinder_estimate,
    check_cylinder_projection,
    check_interval_survival,
    domain_from_spec,
    estimate_caloric,
    nested_rectangle_bound,
    point_from_spec,
    rectangle_from_spec,
    spatial_set_from_spec,
    strong_markov_residual,
    target_from_spec,
)
from config import settings
from content_measures import (
    GridSet,
    comparison_bounds,
    cover_cost,
    cube_set,
    full_set,
    net_content,
    percolation_set,
    product_set,
    random_rectangle_cover,
    slab_set,
)
from dimension_tree import (
    VolumeOracle,
    alpha_ledger,
    bourgain_alternative_audit,
    build_dimension_tree,
    coarse_k_regression,
    select_grid_constants,
)
from exceptions import AuditFailure, ConfigError, LabError, NotApplicable, ParameterError
from frostman import build_frostman, frostman_diam_bound_check
from heat_kernel import C_n, kernel_portrait, normalization_check, numeric_phi_argmax_t, phi_argmax_t
from parabolic_geometry import ParabolicCube, ParabolicRectangle, standard_triple
from schemas import (
    AuditRecord,
    BourgainParams,
    CaloricParams,
    ConstantsParams,
    ContentParams,
    DimTreeParams,
    DomainSpec,
    ExperimentConfig,
    GridSetSpec,
    PointSpec,
    PortraitParams,
)

logging.basicConfig(level=settings.log_level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
logger = logging.getLogger("caloric_lab")

SUITES = ("fast", "full")
SWEEP_SAMPLES = 20_000


@dataclass
class RunResult:
    tables: Dict[str, List[Dict[str, Any]]] = field(default_factory=dict)
    audits: List[AuditRecord] = field(default_factory=list)
    constants: Dict[str, Any] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(a.passed for a in self.audits)

    def merge(self, other: "RunResult", prefix: str) -> None:
        for name, rows in other.tables.items():
            self.tables[f"{prefix}_{name}"] = rows
        self.audits.extend(other.audits)
        self.constants[prefix] = other.constants


def lab_version() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--tags", "--always", "--dirty"], capture_output=True, text=True, timeout=10, check=True
        )
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def gridset_from_spec(spec: GridSetSpec) -> GridSet:
    if spec.kind == "file":
        return GridSet.load(spec.path)
    root = ParabolicCube.from_literal(spec.root)
    if spec.kind == "full":
        return full_set(root, spec.K)
    if spec.kind == "empty":
        return GridSet(root, spec.K)
    if spec.kind == "slab":
        return slab_set(root, spec.K, spec.time_row)
    if spec.kind == "product":
        return product_set(root, spec.K, spec.axes)
    if spec.kind == "percolation":
        return percolation_set(root, spec.K, spec.p, spec.seed)
    return cube_set(root, spec.K, [ParabolicCube.from_literal(text) for text in spec.cubes])


def _need(value, name: str, audit: str):
    if value is None:
        raise ParameterError(f"caloric audit {audit!r} needs {name}")
    return value


# Subcommand handlers
def _kernel_portrait(params: dict, seed: int, threads: Optional[int]) -> RunResult:
    p = PortraitParams.model_validate(params)
    ns = range(1, p.n_max + 1)
    portrait = kernel_portrait(ns, p.r_values, p.samples)
    worst_argmax = max(abs(numeric_phi_argmax_t(r, n) / phi_argmax_t(r, n) - 1.0) for n in ns for r in p.r_values)
    worst_mass = max(abs(normalization_check(n, 1.0, order=40 if n <= 3 else 12) - 1.0) for n in range(1, min(p.n_max, 4) + 1))
    audits = [
        AuditRecord(name="phi-argmax", estimate=worst_argmax, bound=1e-9, passed=worst_argmax <= 1e-9),
        AuditRecord(name="kernel-mass", estimate=worst_mass, bound=1e-6, passed=worst_mass <= 1e-6),
    ]
    if p.n_max >= 8:
        values = [C_n(n) for n in range(1, 9)]
        ordered = 0.25 > values[0] and all(a > b for a, b in zip(values[:6], values[1:6])) and values[5] > 0.04
        ordered = ordered and values[5] < values[6] < values[7]
        audits.append(AuditRecord(name="C_n-ordering", passed=ordered, details={"C_n": values}))
    return RunResult(
        tables={"results": portrait["constants"], "horizontal": portrait["horizontal"], "vertical": portrait["vertical"]},
        audits=audits,
        constants={"C_n": {str(n): C_n(n) for n in ns}},
    )


def _constants(params: dict, seed: int, threads: Optional[int]) -> RunResult:
    p = ConstantsParams.model_validate(params)
    ledger = alpha_ledger(p.n)
    report = select_grid_constants(p.n, p.alpha)
    ok = report.d == p.n + 3 and report.delta_frac < 0.5 and report.lam > 0 and report.beta > 0 and report.rho_slack > 0
    if report.m is not None:
        ok = ok and report.k % report.m ** (p.n + 2) == 0 and report.k <= report.M
    audits = [AuditRecord(name="grid-constants", estimate=float(report.beta), passed=ok, details=report.model_dump(mode="json"))]
    constants = {"alpha_ledger": ledger.model_dump(), "grid": report.model_dump(mode="json")}
    if p.regression:
        regression = coarse_k_regression()
        audits.append(AuditRecord(name="coarse-k-regression", estimate=regression.original_min, bound=-regression.original_n, passed=regression.passed, details=regression.model_dump()))
        constants["regression"] = regression.model_dump()
    return RunResult(tables={"results": [report.model_dump(mode="json")]}, audits=audits, constants=constants)


def _net_content(params: dict, seed: int, threads: Optional[int]) -> RunResult:
    p = ContentParams.model_validate(params)
    E = gridset_from_spec(p.gridset)
    value = net_content(E, p.rho, p.delta if p.delta is not None else math.inf)
    _, upper = comparison_bounds(E.n, E.m, p.rho)
    rng = np.random.default_rng(p.seed)
    costs = [cover_cost(random_rectangle_cover(E, rng, p.delta), p.rho) for _ in range(p.rectangles)] if not E.is_empty() else []
    worst = min(costs) if costs else None
    passed = worst is None or value.value <= upper * worst * (1 + 1e-12)
    rows = [{"cube": Q.literal, "side": Q.side, "cost": Q.side**p.rho} for Q in value.witness]
    return RunResult(
        tables={"results": rows},
        audits=[AuditRecord(name="net-content", estimate=value.value, bound=None if worst is None else upper * worst, passed=passed, details={"delta": value.delta, "covers": len(costs)})],
        constants={"net_content": value.value, "rho": p.rho, "delta": value.delta, "comparison_upper": upper},
    )


def _random_rectangles(root: ParabolicCube, count: int, rng: np.random.Generator) -> List[ParabolicRectangle]:
    box = root.box()
    rects = []
    for _ in range(count):
        side = rng.uniform(0.01, 1.0) * root.side
        lower = [rng.uniform(a - side, b) for a, b in zip(box.lo, box.hi)]
        t0 = rng.uniform(box.t_lo - side * side, box.t_hi)
        rects.append(ParabolicRectangle(lower, [side] * root.n, t0, side))
    return rects


def _frostman(params: dict, seed: int, threads: Optional[int]) -> RunResult:
    p = ContentParams.model_validate(params)
    E = gridset_from_spec(p.gridset)
    mu = build_frostman(E, p.rho)
    mu.check()
    content = net_content(E, p.rho).value
    rects = _random_rectangles(E.root, p.rectangles, np.random.default_rng(p.seed))
    failures = sum(1 for A in rects if not frostman_diam_bound_check(mu, A))
    idx, mass = mu.leaf_arrays()
    rows = [{"leaf": ",".join(str(int(i)) for i in row), "mass": float(w)} for row, w in zip(idx, mass)]
    return RunResult(
        tables={"results": rows},
        audits=[
            AuditRecord(name="frostman-total", estimate=mu.total, bound=content, passed=math.isclose(mu.total, content, rel_tol=1e-12)),
            AuditRecord(name="frostman-rectangles", estimate=failures, bound=0, passed=failures == 0, details={"rectangles": len(rects)}),
        ],
        constants={"total": mu.total, "rho": p.rho},
    )


def _dim_tree(params: dict, seed: int, threads: Optional[int]) -> RunResult:
    p = DimTreeParams.model_validate(params)
    E = gridset_from_spec(p.gridset)
    if p.measure == "volume":
        mu = VolumeOracle(E.root)
    else:
        mu = build_frostman(E, p.measure_rho if p.measure_rho is not None else float(E.n))
    delta = float(E.m) ** (-p.delta_generation)
    try:
        report = build_dimension_tree(E, mu, p.rho, p.lam, p.eps, delta)
    except NotApplicable as e:
        logger.warning("dimension tree not applicable: %s", e.detail)
        return RunResult(audits=[AuditRecord(name="dimension-tree", passed=False, details={"not_applicable": e.detail, "offenders": e.offenders})])
    summary = report.summary()
    rows = [{"level": i, **counts} for i, counts in enumerate(summary["levels"])]
    return RunResult(
        tables={"results": rows},
        audits=[AuditRecord(name="dimension-tree", estimate=report.eta, passed=report.passed, details=summary)],
        constants={"eta": report.eta, "eps": report.eps, "delta": report.delta, "s": report.s, "provenance": mu.provenance},
    )


def _bourgain(params: dict, seed: int, threads: Optional[int]) -> RunResult:
    p = BourgainParams.model_validate(params)
    E = gridset_from_spec(p.gridset)
    cfg = WalkConfig.from_spec(p.walk, seed, threads)
    audit = bourgain_alternative_audit(E, standard_triple(E.root), p.eta, p.rho, p.N or settings.samples, cfg, p.pole_grid)
    return RunResult(audits=[audit], constants={"alpha_ledger": alpha_ledger(E.n).model_dump(), "eta": audit.bound})


def _caloric(params: dict, seed: int, threads: Optional[int]) -> RunResult:
    p = CaloricParams.model_validate(params)
    cfg = WalkConfig.from_spec(p.walk, seed, threads)
    N = p.N or settings.samples
    if p.audit == "survival":
        return RunResult(audits=[check_interval_survival(N, cfg, p.half_width, p.duration)])
    domain = domain_from_spec(_need(p.domain, "a domain", p.audit))
    pole = point_from_spec(_need(p.pole, "a pole", p.audit))
    if p.audit == "estimate":
        target = target_from_spec(_need(p.target, "a target", p.audit), domain)
        est = estimate_caloric(domain, pole, target, N, cfg)
        audit = AuditRecord(name="caloric-estimate", estimate=est.mean, stderr=est.stderr, passed=True, details={"N": N, "seed": seed})
    elif p.audit == "cylinder":
        center = point_from_spec(_need(p.center, "a center", p.audit))
        audit = check_cylinder_estimate(domain, pole, center, _need(p.r, "r", p.audit), p.s or p.r**2, N, cfg)
    elif p.audit == "ball":
        center = point_from_spec(_need(p.center, "a center", p.audit))
        audit = check_ball_estimate(domain, pole, center, _need(p.r, "r", p.audit), N, cfg)
    elif p.audit == "strong-markov":
        inner = domain_from_spec(_need(p.inner_domain, "an inner domain", p.audit))
        target = target_from_spec(_need(p.target, "a target", p.audit), domain)
        audit = strong_markov_residual(inner, domain, pole, target, N, cfg)
    elif p.audit == "nested":
        rects = [rectangle_from_spec(r) for r in _need(p.rectangles, "rectangles", p.audit)]
        audit = nested_rectangle_bound(domain, rects, pole, N, cfg, p.grid_per_axis)
    else:
        A = spatial_set_from_spec(_need(p.target, "a cross-section target", p.audit))
        audit = check_cylinder_projection(domain.container, pole.X, A, N, cfg, t=pole.t, exact=p.exact)
    return RunResult(audits=[audit])


def _suite(params: dict, seed: int, threads: Optional[int]) -> RunResult:
    return suite(params.get("name", "fast"), seed=seed, threads=threads)


HANDLERS: Dict[str, Callable[[dict, int, Optional[int]], RunResult]] = {
    "kernel-portrait": _kernel_portrait,
    "constants": _constants,
    "net-content": _net_content,
    "frostman": _frostman,
    "dim-tree": _dim_tree,
    "bourgain-alt": _bourgain,
    "caloric": _caloric,
    "suite": _suite,
}


def _fast_configs() -> List[ExperimentConfig]:
    percolation = {"kind": "percolation", "root": "3:0:0,0", "K": 2, "p": 0.5, "seed": 1}
    return [
        ExperimentConfig(id="kernel-portrait", subcommand="kernel-portrait", params={"n_max": 8}),
        ExperimentConfig(id="constants-n1", subcommand="constants", params={"n": 1}),
        ExperimentConfig(id="net-content", subcommand="net-content", params={"gridset": percolation, "rho": 2.0, "rectangles": 20}),
        ExperimentConfig(id="frostman", subcommand="frostman", params={"gridset": percolation, "rho": 2.0, "rectangles": 200}),
        ExperimentConfig(
            id="dim-tree-slab",
            subcommand="dim-tree",
            params={"gridset": {"kind": "slab", "root": "3:0:0,0", "K": 3}, "measure_rho": 1.0, "rho": 1.0, "lam": 1.0, "delta_generation": 2},
        ),
    ]


def _box(lower: List[float], upper: List[float], t_lo: Optional[float] = None, t_hi: Optional[float] = None) -> Dict[str, Any]:
    return {"kind": "box", "lower": lower, "upper": upper, "t_lo": t_lo, "t_hi": t_hi}


def _strong_markov_configs(seed: int) -> List[ExperimentConfig]:
    shelf = {"lower": [-1.5], "sides": [3.0], "t0": 0.5, "time_side": 0.25}
    fixtures = {
        "interval": (
            {"container": _box([-1.0], [1.0], 0.0, 1.0)},
            {"container": _box([-0.5], [0.5], 0.0, 1.0)},
            {"X": [0.0], "t": 0.9},
            {"kind": "bottom"},
        ),
        "shelf": (
            {"container": _box([-1.0], [1.0], 0.0, 2.0), "obstacles": [shelf]},
            {"container": _box([-0.6], [0.6], 0.0, 2.0), "obstacles": [shelf]},
            {"X": [0.0], "t": 1.5},
            {"kind": "obstacles"},
        ),
        "square": (
            {"container": _box([-1.0, -1.0], [1.0, 1.0], 0.0, 1.0)},
            {"container": _box([-0.5, -0.5], [0.5, 0.5], 0.0, 1.0)},
            {"X": [0.0, 0.0], "t": 0.9},
            {"kind": "bottom"},
        ),
    }
    return [
        ExperimentConfig(
            id=f"strong-markov-{name}",
            subcommand="caloric",
            seed=seed,
            params={"audit": "strong-markov", "domain": outer, "inner_domain": inner, "pole": pole, "target": target, "N": SWEEP_SAMPLES},
        )
        for name, (outer, inner, pole, target) in fixtures.items()
    ]


NESTED_RECTANGLES = [
    {"lower": [1.0], "sides": [2.0], "t0": 0.5, "time_side": 1.0},
    {"lower": [1.5], "sides": [1.0], "t0": 0.75, "time_side": 0.25},
    {"lower": [1.75], "sides": [0.5], "t0": 0.8, "time_side": 0.15},
]


def _nested_configs(seed: int) -> List[ExperimentConfig]:
    domain = {"container": _box([-2.0], [2.0], 0.0, 4.0)}
    return [
        ExperimentConfig(
            id=f"nested-k{k}",
            subcommand="caloric",
            seed=seed,
            params={
                "audit": "nested",
                "domain": domain,
                "rectangles": NESTED_RECTANGLES[:k],
                "pole": {"X": [0.0], "t": 2.0},
                "grid_per_axis": 2,
                "N": SWEEP_SAMPLES,
            },
        )
        for k in (1, 2, 3)
    ]


def _estimate_sweep(seed: int) -> List[ExperimentConfig]:
    """Ball and cylinder bounds for n in {1, 2}, two poles and r/dist in {0.1, 0.3, 1}."""
    configs = []
    for n in (1, 2):
        domain = {"container": _box([-1.0] * n, [1.0] * n, 0.0, 1.0)}
        center = {"X": [1.0] + [0.0] * (n - 1), "t": 0.5}
        poles = {"top": {"X": [0.0] * n, "t": 0.99}, "side": {"X": [0.5] + [0.0] * (n - 1), "t": 0.75}}
        for label, pole in poles.items():
            dist = domain_from_spec(DomainSpec(**domain)).essential_distance(point_from_spec(PointSpec(**pole)))
            common = {"domain": domain, "pole": pole, "center": center, "N": SWEEP_SAMPLES}
            for ratio in (0.1, 0.3, 1.0):
                params = {"audit": "ball", "r": ratio * dist, **common}
                configs.append(ExperimentConfig(id=f"ball-n{n}-{label}-{ratio}", subcommand="caloric", seed=seed, params=params))
            for ratio in (0.3, 1.0):
                r = ratio * dist
                params = {"audit": "cylinder", "r": r, "s": r * r, **common}
                configs.append(ExperimentConfig(id=f"cylinder-n{n}-{label}-{ratio}", subcommand="caloric", seed=seed, params=params))
    return configs


def _projection_configs(seed: int) -> List[ExperimentConfig]:
    interval = {"container": _box([0.0], [1.0])}
    right_end = {"kind": "cross-section", "axis": 0, "value": 1.0, "side": "above"}
    disk = {"container": {"kind": "ball", "center": [0.0, 0.0], "radius": 1.0}}
    quarter = {"kind": "cross-section", "arc": [0.0, math.pi / 2]}
    cases = [
        ("interval-0.3", interval, {"X": [0.3], "t": 0.0}, right_end, 0.3),
        ("interval-0.7", interval, {"X": [0.7], "t": 0.0}, right_end, 0.7),
        ("disk-quarter", disk, {"X": [0.0, 0.0], "t": 0.0}, quarter, 0.25),
    ]
    return [
        ExperimentConfig(
            id=f"projection-{name}",
            subcommand="caloric",
            seed=seed,
            params={"audit": "projection", "domain": domain, "pole": pole, "target": target, "exact": exact, "N": SWEEP_SAMPLES},
        )
        for name, domain, pole, target, exact in cases
    ]


def _full_configs(seed: int) -> List[ExperimentConfig]:
    triple_root = "7:0:0,0"
    return [
        ExperimentConfig(id="interval-survival", subcommand="caloric", seed=seed, params={"audit": "survival"}),
        *_strong_markov_configs(seed),
        *_nested_configs(seed),
        *_estimate_sweep(seed),
        *_projection_configs(seed),
        ExperimentConfig(
            id="bourgain-alt-full",
            subcommand="bourgain-alt",
            seed=seed,
            params={"gridset": {"kind": "cubes", "root": triple_root, "K": 2, "cubes": ["7:1:3,46"]}, "rho": 2.0, "N": 2000},
        ),
        ExperimentConfig(
            id="bourgain-alt-empty",
            subcommand="bourgain-alt",
            seed=seed,
            params={"gridset": {"kind": "empty", "root": triple_root, "K": 2}, "rho": 2.0, "N": 2000},
        ),
    ]


def execute(config: ExperimentConfig, threads: Optional[int] = None) -> RunResult:
    seed = settings.seed if config.seed is None else config.seed
    print(f"🔍 Running {config.subcommand} ({config.id})")
    result = HANDLERS[config.subcommand](config.params, seed, threads)
    for audit in result.audits:
        print(f"{'✅' if audit.passed else '❌'} {config.id}: {audit.name}")
    return result


def suite(name: str, seed: Optional[int] = None, threads: Optional[int] = None) -> RunResult:
    """Deterministic audits ("fast"), or those plus the Monte Carlo audits ("full")."""
    if name not in SUITES:
        raise ParameterError(f"Unknown suite {name!r}; choose one of {', '.join(SUITES)}")
    seed = settings.seed if seed is None else seed
    configs = _fast_configs() + (_full_configs(seed) if name == "full" else [])
    result = RunResult()
    for config in configs:
        result.merge(execute(config, threads), config.id)
    print(f"📋 Suite {name}: {sum(a.passed for a in result.audits)}/{len(result.audits)} audits passed")
    return result


def write_outputs(config: ExperimentConfig, result: RunResult, out_dir: str, started: float, threads: Optional[int]) -> None:
    os.makedirs(out_dir, exist_ok=True)
    tables = dict(result.tables)
    main_rows = tables.pop("results", None) or [a.csv_row(config.id) for a in result.audits]
    stem, ext = os.path.splitext(config.outputs.csv)
    for name, rows in [(config.outputs.csv, main_rows), *((f"{stem}_{key}{ext}", rows) for key, rows in tables.items())]:
        fieldnames = list(dict.fromkeys(key for row in rows for key in row))
        with open(os.path.join(out_dir, name), "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=fieldnames)
            writer.writeheader()
            writer.writerows(rows)
    audit = {
        "id": config.id,
        "subcommand": config.subcommand,
        "version": lab_version(),
        "seed": settings.seed if config.seed is None else config.seed,
        "params": config.params,
        "constants": result.constants,
        "audits": [a.model_dump() for a in result.audits],
        "passed": result.passed,
    }
    with open(os.path.join(out_dir, config.outputs.audit), "w") as f:
        json.dump(audit, f, indent=2, sort_keys=True, default=str)
    metadata = {
        "started": datetime.fromtimestamp(started, timezone.utc).isoformat(),
        "finished": datetime.now(timezone.utc).isoformat(),
        "elapsed_seconds": time.time() - started,
        "threads": threads or settings.threads,
    }
    with open(os.path.join(out_dir, config.outputs.metadata), "w") as f:
        json.dump(metadata, f, indent=2)


def run(config: ExperimentConfig, out_dir: Optional[str] = None, threads: Optional[int] = None) -> int:
    """Run one experiment and write its artifacts. Returns 0; raises AuditFailure when any audit failed."""
    started = time.time()
    result = execute(config, threads)
    out_dir = out_dir or config.outputs.dir or settings.out_dir
    write_outputs(config, result, out_dir, started, threads)
    print(f"📋 {config.id}: {'passed' if result.passed else 'FAILED'}, artifacts in {out_dir}")
    if not result.passed:
        failed = [a.name for a in result.audits if not a.passed]
        raise AuditFailure(f"{len(failed)} of {len(result.audits)} audits failed: {', '.join(failed)}", failed)
    return 0


def _load_json(path: Optional[str]) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as f:
            return json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"Cannot read config {path}: {e}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="caloric-lab", description="Caloric measure computational lab")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file: module parameters (full ExperimentConfig for 'run')")
    common.add_argument("--seed", type=int, help="unsigned 64-bit seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int, help="walker threads")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("run", parents=[common], help="run a full ExperimentConfig")
    portrait = sub.add_parser("kernel-portrait", parents=[common], help="heat kernel traces and C_n table")
    portrait.add_argument("--n-max", type=int)
    portrait.add_argument("--samples", type=int)
    constants = sub.add_parser("constants", parents=[common], help="grid constant search and alpha ledger")
    constants.add_argument("--n", type=int)
    constants.add_argument("--alpha", type=float)
    constants.add_argument("--no-regression", action="store_true")
    for name, text in (
        ("net-content", "net content of a GridSet"),
        ("frostman", "Frostman measure of a GridSet"),
        ("dim-tree", "type-1/type-2 dimension tree"),
        ("bourgain-alt", "alternative audit on a cube triple"),
        ("caloric", "Monte Carlo caloric measure audits"),
    ):
        sub.add_parser(name, parents=[common], help=text)
    suite_parser = sub.add_parser("suite", parents=[common], help="fast or full audit suite")
    suite_parser.add_argument("name", choices=SUITES)
    return parser


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    raw = _load_json(args.config)
    if args.command == "run":
        if not raw:
            raise ConfigError("'run' needs --config with an ExperimentConfig")
        if args.seed is not None:
            raw = {**raw, "seed": args.seed}
        return ExperimentConfig.model_validate(raw)
    params = dict(raw)
    if args.command == "kernel-portrait":
        params.update({k: v for k, v in (("n_max", args.n_max), ("samples", args.samples)) if v is not None})
    elif args.command == "constants":
        params.update({k: v for k, v in (("n", args.n), ("alpha", args.alpha)) if v is not None})
        if args.no_regression:
            params["regression"] = False
    elif args.command == "suite":
        params["name"] = args.name
    return ExperimentConfig(subcommand=args.command, params=params, seed=args.seed, id=args.command)


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = config_from_args(args)
        return run(config, args.out, args.threads)
    except ValidationError as e:
        print(f"❌ Invalid configuration: {e}")
        return 2
    except LabError as e:
        print(f"❌ {type(e).__name__}: {e.detail}")
        return e.exit_code
    except Exception:
        logger.exception("Unexpected failure")
        return 1


if __name__ == "__main__":
    sys.exit(main())
