"""
Dimension bounds for measures through m-adic stopping-time trees.

A cube is type 1 when the (n+2-rho)-content of E inside it, measured with
strict descendants, beats side^(n+2-rho), and type 2 when its children's
sqrt(mu(R) vol R) sum is smaller than m^-lambda sqrt(mu(Q) vol Q). The tree
grows type-1 cubes through an optimal content cover and type-2 cubes through
their children, stops at side <= delta, and sorts the terminal cubes by how many
type-2 ancestors they have. The same module holds the potential-theoretic
alternative audit on a cube triple, its explicit constant ledger, and the
search for grid constants (m, rho, lambda) together with the coarse-k
regression.
"""

import logging
import math
from dataclasses import dataclass
from decimal import MAX_EMAX, MIN_EMIN, ROUND_CEILING, Context, Decimal, localcontext
from enum import Enum
from typing import ClassVar, Dict, List, Optional, Protocol, Tuple

import numpy as np

from caloric_mc import BoxContainer, ExitBatch, ObstacleTarget, SpaceTimeDomain, WalkConfig, estimate_caloric
from content_measures import ContentTable, GridSet, Index, net_content, parent_index
from exceptions import GeometryError, LabError, NotApplicable, ParameterError, ResolutionError, SearchExhausted
from frostman import TreeMeasure, build_frostman
from heat_kernel import C_n, W
from parabolic_geometry import Box, CubeTriple, ParabolicCube, SpaceTimePoint, ancestor, min_triple_base
from schemas import AlphaLedger, AuditRecord, ConstantsReport, RegressionReport

logger = logging.getLogger(__name__)

CONTENT_ALPHAS = (0.0, 0.1, 0.5)
RHO_LOG_WIDTH = 1e-9
STABILITY_RTOL = 0.05
BOUNDARY_TIME_POINTS = 16
_DECIMAL = Context(prec=60, Emin=MIN_EMIN, Emax=MAX_EMAX)


# Measure oracles
class MeasureOracle(Protocol):
    provenance: str

    @property
    def total(self) -> float: ...

    def mass(self, Q: ParabolicCube) -> float: ...


@dataclass(frozen=True)
class VolumeOracle:
    """Normalized Lebesgue measure on a root cube."""

    root: ParabolicCube
    provenance: ClassVar[str] = "analytic"

    @property
    def total(self) -> float:
        return 1.0

    def mass(self, Q: ParabolicCube) -> float:
        if self.root.contains_cube(Q):
            return float(Q.m) ** (-(Q.n + 2) * (Q.k - self.root.k))
        return 1.0 if Q.contains_cube(self.root) else 0.0


@dataclass(frozen=True)
class DiracOracle:
    point: SpaceTimePoint
    weight: float = 1.0
    provenance: ClassVar[str] = "analytic"

    @property
    def total(self) -> float:
        return self.weight

    def mass(self, Q: ParabolicCube) -> float:
        return self.weight if Q.contains_point(self.point) else 0.0


@dataclass(frozen=True, eq=False)
class EmpiricalOracle:
    """Exit points of a walk batch binned into half-open cubes, each worth 1/N."""

    Y: np.ndarray
    s: np.ndarray
    N: int
    provenance: ClassVar[str] = "empirical-MC"

    @classmethod
    def from_exits(cls, batch: ExitBatch, mask: Optional[np.ndarray] = None) -> "EmpiricalOracle":
        keep = np.ones(batch.N, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        return cls(batch.Y[keep], batch.s[keep], batch.N)

    @property
    def total(self) -> float:
        return self.s.shape[0] / self.N

    def mass(self, Q: ParabolicCube) -> float:
        box = Q.box()
        inside = np.all((self.Y >= np.array(box.lo)) & (self.Y < np.array(box.hi)), axis=1)
        inside &= (self.s >= box.t_lo) & (self.s < box.t_hi)
        return int(np.count_nonzero(inside)) / self.N


@dataclass(frozen=True)
class ScaledOracle:
    base: MeasureOracle
    factor: float

    @property
    def provenance(self) -> str:
        return self.base.provenance

    @property
    def total(self) -> float:
        return self.factor * self.base.total

    def mass(self, Q: ParabolicCube) -> float:
        return self.factor * self.base.mass(Q)


# Cube classification
class CubeType(str, Enum):
    TYPE1 = "type1"
    TYPE2 = "type2"
    NEITHER = "neither"


def _content_table(E: GridSet, rho: float) -> ContentTable:
    if not 0 < rho < E.n + 2:
        raise ParameterError(f"rho must lie in (0, n+2) = (0, {E.n + 2}), got {rho}")
    return ContentTable(E, E.n + 2 - rho)


def classify_cube(
    Q: ParabolicCube, E: GridSet, mu: MeasureOracle, rho: float, lam: float, table: Optional[ContentTable] = None
) -> CubeType:
    if lam <= 0:
        raise ParameterError(f"lambda must be positive, got {lam}")
    if Q.k < 0:
        raise ParameterError(f"classify_cube needs side(Q) <= 1, got side {Q.side}")
    depth = E.depth_of(Q)
    if depth < 0 or ancestor(Q, depth) != E.root:
        raise GeometryError(f"{Q} is not a descendant of {E.root}")
    if depth >= E.K:
        raise ResolutionError(f"{Q} is at or below the grid resolution; its children are not resolved")
    table = table or _content_table(E, rho)
    exponent = E.n + 2 - rho
    if table.children_value(Q) < Q.side**exponent:
        return CubeType.TYPE1
    spread = math.fsum(math.sqrt(mu.mass(R) * R.vol) for R in Q.iter_children())
    if spread <= float(Q.m) ** (-lam) * math.sqrt(mu.mass(Q) * Q.vol) * (1 + 1e-12):
        return CubeType.TYPE2
    return CubeType.NEITHER


# Tree construction
@dataclass(frozen=True)
class TreeNode:
    cube: ParabolicCube
    kind: str
    type2_above: int
    anchor: Optional[ParabolicCube] = None


@dataclass(frozen=True)
class ContentCheck:
    alpha: float
    value: float
    bound: float

    @property
    def passed(self) -> bool:
        return self.value <= self.bound * (1 + 1e-12)


@dataclass(frozen=True, eq=False)
class TreeReport:
    rho: float
    lam: float
    eps: float
    delta: float
    s: int
    eta: float
    levels: Tuple[Tuple[TreeNode, ...], ...]
    terminal: Tuple[ParabolicCube, ...]
    efficient: Tuple[ParabolicCube, ...]
    F: Tuple[ParabolicCube, ...]
    G: Tuple[ParabolicCube, ...]
    F_delta: GridSet
    content_checks: Tuple[ContentCheck, ...]
    mu_missing: float
    mu_bound: float

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.content_checks) and self.mu_missing <= self.mu_bound * (1 + 1e-9)

    def summary(self) -> dict:
        counts = [{kind: sum(1 for node in level if node.kind == kind) for kind in ("type1", "type2", "terminal")} for level in self.levels]
        return {
            "rho": self.rho,
            "lam": self.lam,
            "eps": self.eps,
            "delta": self.delta,
            "s": self.s,
            "eta": self.eta,
            "levels": counts,
            "terminal": len(self.terminal),
            "efficient": len(self.efficient),
            "F": [Q.literal for Q in self.F],
            "G": [Q.literal for Q in self.G],
            "F_delta_leaves": len(self.F_delta.occupied),
            "content_checks": [{"alpha": c.alpha, "value": c.value, "bound": c.bound, "passed": c.passed} for c in self.content_checks],
            "mu_missing": self.mu_missing,
            "mu_bound": self.mu_bound,
            "passed": self.passed,
        }


def _ancestor_keys(E: GridSet, idx: Index) -> List[Tuple[int, Index]]:
    keys = [(E.leaf_generation, idx)]
    for depth in range(E.K, 0, -1):
        idx = parent_index(idx, E.m)
        keys.append((E.root.k + depth - 1, idx))
    return keys


def build_dimension_tree(
    E: GridSet,
    mu: MeasureOracle,
    rho: float,
    lam: float,
    eps: Optional[float] = None,
    delta: Optional[float] = None,
    m: Optional[int] = None,
) -> TreeReport:
    """
    Grow the type-1/type-2 tree of E down to side delta and certify the
    covering set F_delta.

    delta defaults to the grid resolution and is rounded down to a power of
    1/m; eps defaults to rho / (lam + rho).
    """
    if m is not None and m != E.m:
        raise ParameterError(f"m={m} does not match the GridSet base m={E.m}")
    if E.root.k != 0:
        raise ParameterError(f"build_dimension_tree needs a root of side 1, got {E.root}")
    if lam <= 0:
        raise ParameterError(f"lambda must be positive, got {lam}")
    table = _content_table(E, rho)
    eps = rho / (lam + rho) if eps is None else eps
    if not 0 < eps < 1:
        raise ParameterError(f"eps must lie in (0, 1), got {eps}")
    m, n = E.m, E.n
    j = E.leaf_generation if delta is None else ContentTable(E, 1.0, delta).j_delta
    if not isinstance(j, int) or j < 1:
        raise ParameterError(f"delta={delta} must be below the root side 1")
    if eps * j < 1 - 1e-12:
        raise ParameterError(f"eps * log_m(1/delta) = {eps * j} must be at least 1")
    delta = float(m) ** (-j)
    s = math.ceil(eps * j - 1e-12)
    eta = max(n + 2 - rho * (1 - eps), n + 2 - lam * eps)

    levels: List[Tuple[TreeNode, ...]] = []
    terminal: List[TreeNode] = []
    current = [TreeNode(E.root, "", 0)] if not E.is_empty() else []
    while current:
        level, upcoming, offenders = [], [], []
        for node in current:
            Q = node.cube
            if Q.k >= j:
                level.append(TreeNode(Q, "terminal", node.type2_above, node.anchor))
                terminal.append(level[-1])
                continue
            kind = classify_cube(Q, E, mu, rho, lam, table)
            if kind is CubeType.NEITHER:
                offenders.append(Q.literal)
                continue
            level.append(TreeNode(Q, kind.value, node.type2_above, node.anchor))
            if kind is CubeType.TYPE1:
                upcoming.extend(TreeNode(R, "", node.type2_above, node.anchor) for R in table.children_witness(Q))
            else:
                above = node.type2_above + 1
                anchor = node.anchor or (Q if above == s else None)
                upcoming.extend(TreeNode(R, "", above, anchor) for R in E.occupied_children(Q))
        if offenders:
            raise NotApplicable(
                f"{len(offenders)} cube(s) at tree level {len(levels)} are neither type 1 nor type 2", offenders=offenders
            )
        logger.info(
            "tree level %d: %d type1, %d type2, %d terminal",
            len(levels),
            sum(1 for x in level if x.kind == "type1"),
            sum(1 for x in level if x.kind == "type2"),
            sum(1 for x in level if x.kind == "terminal"),
        )
        levels.append(tuple(level))
        current = upcoming

    efficient = sorted({node.cube for node in terminal if node.type2_above < s})
    F = sorted({node.anchor for node in terminal if node.type2_above >= s})
    G = [P for P in F if P.side ** (n + 2 - lam * eps) <= mu.mass(P)]

    cap = m * delta**eps
    for Q in efficient:
        if Q.side > delta * (1 + 1e-12):
            raise LabError(f"Efficient cube {Q} is larger than delta={delta}")
    for P in F:
        if not delta < P.side <= cap * (1 + 1e-12):
            raise LabError(f"Stopping cube {P} has side outside (delta, m delta^eps]")
    if set(efficient) & set(F):
        raise LabError("Efficient and stopping collections overlap")

    cover = {(Q.k, Q.j) for Q in efficient} | {(P.k, P.j) for P in F}
    kept = {(Q.k, Q.j) for Q in efficient} | {(P.k, P.j) for P in G}
    occupied_F = set()
    for idx in E.occupied:
        keys = _ancestor_keys(E, idx)
        if not any(key in cover for key in keys):
            raise LabError(f"Leaf {idx} is not covered by the efficient and stopping cubes")
        if any(key in kept for key in keys):
            occupied_F.add(idx)
    F_delta = GridSet(E.root, E.K, frozenset(occupied_F))

    checks = []
    for alpha in CONTENT_ALPHAS:
        value = 0.0 if F_delta.is_empty() else ContentTable(F_delta, eta + alpha, cap).value(E.root)
        checks.append(ContentCheck(alpha, value, 2.0 * float(m) ** alpha * delta ** (eps * alpha)))
    mu_missing = max(0.0, mu.total - math.fsum(mu.mass(Q) for Q in [*efficient, *G]))
    mu_bound = float(m) ** lam * delta ** (lam * eps / 2.0)

    report = TreeReport(
        rho=rho,
        lam=lam,
        eps=eps,
        delta=delta,
        s=s,
        eta=eta,
        levels=tuple(levels),
        terminal=tuple(sorted(node.cube for node in terminal)),
        efficient=tuple(efficient),
        F=tuple(F),
        G=tuple(G),
        F_delta=F_delta,
        content_checks=tuple(checks),
        mu_missing=mu_missing,
        mu_bound=mu_bound,
    )
    logger.info("dimension tree: eta=%.6g, |E|=%d, |F|=%d, |G|=%d, passed=%s", eta, len(efficient), len(F), len(G), report.passed)
    return report


# Constant ledger
def alpha_ledger(n: int) -> AlphaLedger:
    """
    Explicit alpha_n assembled from the potential estimates: the off-support
    bound 3^(n+1) max(2^n C_n, (2 pi)^(-n/2)), the Frostman constant 2^-(n+1)
    and the gap between the lower bound on F and the upper bound on the normal
    boundary.
    """
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    c1 = max(2**n * C_n(n), (2.0 * math.pi) ** (-n / 2.0))
    e1 = 3 ** (n + 1) * c1
    frostman_c = 2.0 ** (-(n + 1))
    scale = (12.0 * math.pi) ** (-n / 2.0)
    e2, e3 = scale * math.exp(-n / 12.0), scale * math.exp(-n / 2.0)
    gap = e2 - e3
    return AlphaLedger(n=n, c1=c1, e1_constant=e1, frostman_c=frostman_c, e2_constant=e2, e3_constant=e3, gap=gap, alpha=2.0 * e1 / (frostman_c * gap))


# Alternative audit on a cube triple
def heat_potential(X: np.ndarray, t: np.ndarray, centers: np.ndarray, times: np.ndarray, masses: np.ndarray, chunk: int = 16) -> np.ndarray:
    """u(X, t) = sum_i masses_i W(X - centers_i, t - times_i)."""
    out = np.empty(t.shape[0])
    for start in range(0, t.shape[0], chunk):
        stop = start + chunk
        kernel = W(X[start:stop, None, :] - centers[None, :, :], t[start:stop, None] - times[None, :])
        out[start:stop] = kernel @ masses
    return out


def _box_grid(box: Box, per_axis: int, times: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
    fractions = (np.arange(per_axis) + 0.5) / per_axis
    axes = [np.array([a]) if a == b else a + fractions * (b - a) for a, b in zip(box.lo, box.hi)]
    if times is None:
        times = np.array([box.t_lo]) if box.t_lo == box.t_hi else box.t_lo + fractions * (box.t_hi - box.t_lo)
    axes.append(times)
    grid = np.array(np.meshgrid(*axes, indexing="ij")).reshape(len(axes), -1).T
    return grid[:, :-1], grid[:, -1]


def _normal_boundary_grid(triple: CubeTriple, per_axis: int, time_points: int = BOUNDARY_TIME_POINTS) -> Tuple[np.ndarray, np.ndarray]:
    """
    Grid on the bottom and lateral faces of Q. Lateral faces are sampled at
    times in (t_lo(Q*), t1(Q)], top endpoint included.
    """
    start, top = triple.Qstar.box().t_lo, triple.Q.box().t_hi
    times = start + (np.arange(1, time_points + 1) / time_points) * (top - start)
    bottom, *lateral = triple.normal_boundary()
    grids = [_box_grid(bottom, per_axis)] + [_box_grid(face, per_axis, times) for face in lateral]
    return np.concatenate([g[0] for g in grids]), np.concatenate([g[1] for g in grids])


def _refine(E: GridSet) -> GridSet:
    """The same set resolved one generation deeper."""
    m, n = E.m, E.n
    if E.is_empty():
        return GridSet(E.root, E.K + 1)
    leaves = np.array(sorted(E.occupied), dtype=np.int64)
    offsets = np.array(np.meshgrid(*([np.arange(m)] * n + [np.arange(m * m)]), indexing="ij")).reshape(n + 1, -1).T
    scale = np.array([m] * n + [m * m], dtype=np.int64)
    kids = (leaves[:, None, :] * scale + offsets[None, :, :]).reshape(-1, n + 1)
    return GridSet(E.root, E.K + 1, frozenset(map(tuple, kids.tolist())))


def _leaf_support(mu: TreeMeasure) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    idx, mass = mu.leaf_arrays()
    side = mu.E.leaf_side
    return (idx[:, :-1] + 0.5) * side, (idx[:, -1] + 0.5) * side * side, mass


def _dist_infty_to_leaves(X: np.ndarray, t: np.ndarray, E: GridSet) -> np.ndarray:
    idx = np.array(sorted(E.occupied), dtype=float).reshape(-1, E.n + 1)
    side = E.leaf_side
    lo, hi = idx[:, :-1] * side, (idx[:, :-1] + 1) * side
    t0, t1 = idx[:, -1] * side * side, (idx[:, -1] + 1) * side * side
    dx = np.maximum(np.maximum(lo[None] - X[:, None, :], X[:, None, :] - hi[None]), 0.0).max(axis=2)
    dt = np.maximum(np.maximum(t0[None] - t[:, None], t[:, None] - t1[None]), 0.0)
    return np.maximum(2.0 * dx, np.sqrt(2.0 * dt)).min(axis=1)


def _potential_margins(mu: TreeMeasure, triple: CubeTriple, rho: float, ledger: AlphaLedger, samples, per_axis: int) -> Dict[str, float]:
    """Ratios of the potential to the three displayed bounds: e1, e3 should be <= 1 and e2 >= 1."""
    n, m = triple.n, triple.Q.m
    er = triple.eps * triple.r
    centers, times, masses = _leaf_support(mu)
    total = mu.total
    X1, t1 = samples
    e1_bound = ledger.e1_constant * float(m) ** rho / (1 - float(m) ** (n - rho)) * er ** (rho - n)
    XF, tF = _box_grid(triple.F.box(), per_axis)
    XB, tB = _normal_boundary_grid(triple, per_axis)
    return {
        "e1": float(np.max(heat_potential(X1, t1, centers, times, masses))) / e1_bound if len(t1) else 0.0,
        "e2": float(np.min(heat_potential(XF, tF, centers, times, masses))) / (ledger.e2_constant * er ** (-n) * total),
        "e3": float(np.max(heat_potential(XB, tB, centers, times, masses))) / (ledger.e3_constant * er ** (-n) * total),
    }


def _relative_change(coarse: float, fine: float) -> float:
    if coarse == 0.0:
        return 0.0 if fine == 0.0 else math.inf
    return abs(fine / coarse - 1.0)


def bourgain_alternative_audit(
    E: GridSet,
    triple: CubeTriple,
    eta: Optional[float] = None,
    rho: float = 2.0,
    N: int = 2000,
    cfg: Optional[WalkConfig] = None,
    pole_grid: int = 3,
    check_points: int = 500,
    refine: bool = True,
) -> AuditRecord:
    """
    Check that E has caloric measure at least eta from every pole on a grid in
    F, or that the rho-content of E inside Q* is below the explicit bound.

    The potential of the Frostman measure on E inside Q* is evaluated at leaf
    centers and checked against the off-support, F-side and boundary-side
    estimates; the F-side and boundary-side margins must agree to 5% after one
    refinement of E.
    """
    cfg = cfg or WalkConfig()
    triple.check_invariants()
    n, m = triple.n, triple.Q.m
    if not n < rho <= n + 2:
        raise ParameterError(f"rho must lie in (n, n+2] = ({n}, {n + 2}], got {rho}")
    if E.root != triple.Q:
        raise ParameterError(f"E must be rooted at the triple's cube {triple.Q}, got {E.root}")
    ledger = alpha_ledger(n)
    eta = float(m) ** (-(n + 2)) / (2.0 * ledger.alpha) if eta is None else eta
    if not 0 < eta < 1:
        raise ParameterError(f"eta must lie in (0, 1), got {eta}")
    er = triple.eps * triple.r
    ratio_check = ledger.e2_constant / ledger.e3_constant
    details: dict = {
        "rho": rho,
        "eta": eta,
        "alpha": ledger.alpha,
        "e2_over_e3": ratio_check,
        "e2_over_e3_expected": math.exp(5 * n / 12.0),
        "pole_spacing": [er / pole_grid, er * er / pole_grid],
        "N": N,
        "seed": cfg.seed,
    }
    checks_ok = math.isclose(ratio_check, math.exp(5 * n / 12.0), rel_tol=1e-12)

    K_set = E.restrict(triple.Qstar) if not E.is_empty() else GridSet(triple.Qstar, max(E.K - 1, 0))
    content = net_content(K_set, rho).value
    alt2_bound = ledger.e1_constant / (ledger.frostman_c * ledger.gap) * float(m) ** rho / (1 - float(m) ** (n - rho)) * eta * er**rho
    alt2 = content <= alt2_bound
    details.update({"content": content, "alternative2_bound": alt2_bound, "alternative2": alt2})

    if not K_set.is_empty():
        mu = build_frostman(K_set, rho)
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(4,)))
        box = triple.Qstar.box()
        X1 = rng.uniform(np.array(box.lo) - 2 * er, np.array(box.hi) + 2 * er, size=(check_points, n))
        t1 = rng.uniform(box.t_lo - 2 * er * er, box.t_hi + 4 * er * er, size=check_points)
        far = _dist_infty_to_leaves(X1, t1, K_set) > K_set.leaf_side
        samples = (X1[far], t1[far])
        margins = _potential_margins(mu, triple, rho, ledger, samples, pole_grid)
        details["margins"] = margins
        checks_ok &= margins["e1"] <= 1.0 and margins["e2"] >= 1.0 and margins["e3"] <= 1.0
        if refine:
            fine = build_frostman(_refine(K_set), rho)
            refined = _potential_margins(fine, triple, rho, ledger, samples, pole_grid)
            stable = all(_relative_change(margins[key], refined[key]) <= STABILITY_RTOL for key in ("e2", "e3"))
            details.update({"refined_margins": refined, "stable": stable})
            checks_ok &= stable

    min_estimate, min_stderr, alt1 = None, None, True
    if not E.is_empty():
        domain = SpaceTimeDomain(BoxContainer.from_cube(triple.Q), tuple(Q.rectangle() for Q in E.maximal_cubes()))
        target = ObstacleTarget(domain.obstacles)
        XF, tF = _box_grid(triple.F.box(), pole_grid)
        poles = [SpaceTimePoint(tuple(X), t) for X, t in zip(XF, tF)]
        poles = [p for p in poles if domain.contains(p)]
        estimates = [estimate_caloric(domain, p, target, N, cfg) for p in poles]
        if estimates:
            worst = min(estimates, key=lambda e: e.mean - 3.0 * e.stderr)
            min_estimate, min_stderr = worst.mean, worst.stderr
            alt1 = worst.mean - 3.0 * worst.stderr >= eta
        details["poles"] = len(poles)
        logger.info("alternative audit: %d poles, min estimate %s", len(poles), min_estimate)
    details["alternative1"] = alt1

    return AuditRecord(
        name="bourgain-alternative",
        estimate=min_estimate,
        stderr=min_stderr,
        bound=eta,
        passed=bool(checks_ok and (alt1 or alt2)),
        details=details,
    )


# Grid constants
def _dec_expm1(u: Decimal) -> Decimal:
    if abs(u) >= Decimal("1e-4"):
        return u.exp() - 1
    term, total, i = u, u, 1
    limit = abs(u) * Decimal(10) ** (-(_DECIMAL.prec + 2))
    while abs(term) > limit:
        i += 1
        term = term * u / i
        total += term
    return total


def rho_stip_lhs(rho, log_m: float, n: int, d: Optional[int] = None) -> Decimal:
    """(m^(n+2) - 1) sum_{i=1}^{d+1} m^(-i(n+2-rho)) + m^(-(n+2)) m^(-d(n+2-rho)) / 2, summed term by term."""
    d = n + 3 if d is None else d
    with localcontext(_DECIMAL):
        L = Decimal(repr(log_m))
        b = ((n + 2) * L).exp()
        a = (Decimal(rho) * L - (n + 2) * L).exp()
        return (b - 1) * sum(a**i for i in range(1, d + 2)) + a**d / (2 * b)


def rho_stip_slack(rho, log_m: float, n: int, d: Optional[int] = None) -> Decimal:
    """1 - rho_stip_lhs, rewritten so nothing cancels when rho is tiny."""
    d = n + 3 if d is None else d
    with localcontext(_DECIMAL):
        L = Decimal(repr(log_m))
        u = Decimal(rho) * L
        b = ((n + 2) * L).exp()
        eu = u.exp()
        a = eu / b
        return (-b * _dec_expm1(u) + (b - 1) * eu * a ** (d + 1)) / (b - eu) - a**d / (2 * b)


def _solve_rho(n: int, d: int, log_m: float) -> Tuple[Decimal, Decimal]:
    """Largest rho in (0, 1) with positive slack, to relative width 1e-9, rounded down."""

    def slack(log_rho: float) -> Decimal:
        with localcontext(_DECIMAL):
            return rho_stip_slack(Decimal(log_rho).exp(), log_m, n, d)

    hi = 0.0
    if slack(hi) > 0:
        raise SearchExhausted(f"rho = 1 already satisfies the content condition for log m = {log_m}; widen the search")
    lo = -1.0
    while slack(lo) <= 0:
        lo *= 2.0
        if lo < -1e18:
            raise SearchExhausted("No rho > 1e-(1e18) satisfies the content condition")
    while hi - lo > RHO_LOG_WIDTH:
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if slack(mid) > 0:
            lo = mid
        else:
            hi = mid
    with localcontext(_DECIMAL):
        return Decimal(lo).exp(), slack(lo)


def _acceptance(n: int, L, alpha: float):
    """Vectorized (log delta_frac, log S) at ln m = L for k = ceil((ln m)^2) m^(n+2)."""
    L = np.asarray(L, dtype=float)
    q = np.ceil(L * L)
    log_x = np.log(2.0 * q) - L
    # 2q >= m leaves no admissible delta; those rows get delta_frac = 1
    valid = log_x < 0.0
    x = np.exp(np.where(valid, log_x, -1.0))
    with np.errstate(divide="ignore"):
        exact = np.log(-np.expm1(n * np.log1p(-x) + np.log1p(-x * np.exp(-(n + 3) * L))))
    log_delta = np.where(valid, np.where(log_x > -20.0, exact, math.log(n) + log_x), 0.0)
    log_eta = -(n + 2) * L - math.log(2.0 * alpha)
    eta = np.exp(log_eta)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(eta > 1e-8, np.log1p(-eta) / np.where(eta > 1e-8, eta, 1.0), -1.0 - eta / 2.0)
    tail = -0.5 * log_eta + 0.5 * (q / (2.0 * alpha)) * ratio
    log_S = np.logaddexp(0.5 * log_delta, tail)
    return q, log_delta, log_eta, log_S


def _accepted(n: int, L, alpha: float) -> np.ndarray:
    q, log_delta, _, log_S = _acceptance(n, L, alpha)
    with np.errstate(invalid="ignore"):
        return (np.log(2.0 * q) <= L + np.log1p(-np.exp(-L))) & (log_delta < math.log(0.5)) & (log_S < 0.0)


def _log_search(accept, L_start: float, what: str) -> float:
    """Smallest L >= L_start (to relative 1e-12) at which a monotone acceptance test first holds."""
    lo, hi = L_start, 2.0 * L_start
    while not accept(hi):
        lo, hi = hi, 2.0 * hi
        if hi > 1e15:
            raise SearchExhausted(f"{what}: no acceptance below ln m = 1e15")
    while hi - lo > 1e-12 * hi:
        mid = 0.5 * (lo + hi)
        if accept(mid):
            hi = mid
        else:
            lo = mid
    return hi


def select_grid_constants(n: int, alpha: Optional[float] = None, m_max: int = 10**6) -> ConstantsReport:
    """
    Deterministic search for the grid base m, the content exponent rho and the
    decay exponent lambda.

    Odd m are scanned up to m_max; when none qualifies the acceptance threshold
    is located in ln m instead and reported as log_m with m left unset.
    """
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    alpha = alpha_ledger(n).alpha if alpha is None else float(alpha)
    if alpha < 1:
        raise ParameterError(f"alpha must be >= 1, got {alpha}")
    d = n + 3
    m0 = max(7, min_triple_base(n))
    ms = np.arange(m0, m_max + 1, 2, dtype=np.int64)
    Ls = np.log(ms.astype(float))
    q_all = np.ceil(Ls * Ls)
    ok = (2 * q_all <= ms - 1) & _accepted(n, Ls, alpha)
    if ok.any():
        m = int(ms[int(np.argmax(ok))])
        L = math.log(m)
        phase = "scan"
        logger.info("grid constants n=%d: scan accepted m=%d", n, m)
    else:
        logger.info("grid constants n=%d: no odd m <= %d qualifies, searching in ln m", n, m_max)
        L = _log_search(lambda x: bool(_accepted(n, x, alpha)), math.log(m_max), "grid constants")
        m, phase = None, "log"
    q, log_delta, log_eta, log_S = (float(v) for v in _acceptance(n, L, alpha))
    q = int(q)
    k = c = M = None
    if m is not None:
        b = m ** (n + 2)
        k = q * b
        with localcontext(_DECIMAL):
            raw = (Decimal(b) * Decimal(m).ln() ** 2).to_integral_value(rounding=ROUND_CEILING)
        c = k - int(raw)
        M = (m ** (n + 3) - 1) // 2
    lam = -log_S / L
    rho, slack = _solve_rho(n, d, L)
    with localcontext(_DECIMAL):
        lam_dec = Decimal(repr(lam))
        beta = lam_dec * rho / (lam_dec + rho)
    return ConstantsReport(
        n=n,
        phase=phase,
        m=m,
        log_m=L,
        d=d,
        q=q,
        k=k,
        c=c,
        M=M,
        alpha=alpha,
        eta=math.exp(log_eta),
        log_eta=log_eta,
        delta_frac=math.exp(log_delta),
        log_delta_frac=log_delta,
        lam=lam,
        rho=rho,
        rho_slack=slack,
        beta=beta,
    )


def _coarse_lhs(L, n: int, alpha: float):
    """C / ln m - (m^-n / C') (m / ln m) with C = ln(8 alpha), C' = 2 alpha."""
    return math.log(8 * alpha) / L - np.exp((1 - n) * L) / (2 * alpha * L)


def _corrected_lhs(L, alpha: float):
    L = np.asarray(L, dtype=float)
    return math.log(8 * alpha) / L - np.ceil(L * L) / (2 * alpha * L)


def _decimal_coarse(m: int, n: int, alpha: float) -> Decimal:
    with localcontext(_DECIMAL):
        L = Decimal(m).ln()
        a = Decimal(repr(alpha))
        return (8 * a).ln() / L - Decimal(m) ** (1 - n) / (2 * a * L)


def _decimal_corrected(m: int, alpha: float) -> Decimal:
    with localcontext(_DECIMAL):
        L = Decimal(m).ln()
        a = Decimal(repr(alpha))
        q = (L * L).to_integral_value(rounding=ROUND_CEILING)
        return (8 * a).ln() / L - q / (2 * a * L)


def coarse_k_regression(
    n: int = 3, alpha: Optional[float] = None, corrected_n: int = 1, corrected_alpha: Optional[float] = None, m_max: int = 10**6
) -> RegressionReport:
    """
    The k ~ m grid choice never reaches -n; the k ~ m^(n+2) (ln m)^2 choice
    eventually drops below -(n+2).
    """
    alpha = alpha_ledger(n).alpha if alpha is None else float(alpha)
    corrected_alpha = alpha_ledger(corrected_n).alpha if corrected_alpha is None else float(corrected_alpha)
    ms = np.arange(7, m_max + 1, 2, dtype=np.int64)
    Ls = np.log(ms.astype(float))
    coarse = _coarse_lhs(Ls, n, alpha)
    i_min = int(np.argmin(coarse))
    never = bool(coarse[i_min] >= -n)

    corrected = _corrected_lhs(Ls, corrected_alpha) < -(corrected_n + 2)
    if corrected.any():
        m_c = int(ms[int(np.argmax(corrected))])
        phase, L_c = "scan", math.log(m_c)
    else:
        L_c = _log_search(lambda x: bool(_corrected_lhs(x, corrected_alpha) < -(corrected_n + 2)), math.log(m_max), "coarse-k regression")
        m_c, phase = None, "log"

    samples = sorted({7, 101, 10_001, int(ms[i_min]), int(ms[-1])} | ({m_c} if m_c else set()))
    gaps = []
    for m in samples:
        L = math.log(m)
        exact = float(_decimal_coarse(m, n, alpha))
        gaps.append(abs(float(_coarse_lhs(L, n, alpha)) - exact) / max(abs(exact), 1e-300))
        exact = float(_decimal_corrected(m, corrected_alpha))
        gaps.append(abs(float(_corrected_lhs(L, corrected_alpha)) - exact) / max(abs(exact), 1e-300))
    precision_gap = max(gaps)
    logger.info("coarse-k regression: min %.6g at m=%d, corrected %s phase at ln m=%.6g", coarse[i_min], ms[i_min], phase, L_c)
    return RegressionReport(
        original_n=n,
        original_alpha=alpha,
        original_min=float(coarse[i_min]),
        original_argmin=int(ms[i_min]),
        original_never_verified=never,
        corrected_n=corrected_n,
        corrected_alpha=corrected_alpha,
        corrected_phase=phase,
        corrected_m=m_c,
        corrected_log_m=L_c,
        precision_gap=precision_gap,
        passed=never and precision_gap < 1e-9,
    )
