"""
Discretized closed sets and their m-adic parabolic net contents.

A GridSet is a union of occupied cubes of one resolution generation below a
root cube. Net contents M^rho_delta are exact minima over antichain covers by
descendant cubes, computed bottom-up with the recursion

    value(Q) = sum(value(children))                    if side(Q) > delta
    value(Q) = min(side(Q)^rho, sum(value(children)))  otherwise

with leaves paying side^rho. Sums use math.fsum so results do not depend on
iteration order.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from exceptions import GeometryError, ParameterError, ResolutionError
from parabolic_geometry import ParabolicCube, ParabolicRectangle, ancestor

logger = logging.getLogger(__name__)

Index = Tuple[int, ...]


def parent_index(idx: Index, m: int) -> Index:
    return tuple(i // m for i in idx[:-1]) + (idx[-1] // (m * m),)


@dataclass(frozen=True)
class GridSet:
    root: ParabolicCube
    K: int
    occupied: FrozenSet[Index] = field(default_factory=frozenset)

    def __post_init__(self):
        if self.K < 0:
            raise ResolutionError(f"Resolution depth K must be >= 0, got {self.K}")
        occupied = frozenset(tuple(int(v) for v in idx) for idx in self.occupied)
        object.__setattr__(self, "occupied", occupied)
        for idx in occupied:
            if len(idx) != self.n + 1:
                raise GeometryError(f"Occupied index {idx} has wrong length for n={self.n}")
            if ancestor(self._cube(idx), self.K) != self.root:
                raise GeometryError(f"Occupied cube {idx} is not a descendant of {self.root}")

    @property
    def m(self) -> int:
        return self.root.m

    @property
    def n(self) -> int:
        return self.root.n

    @property
    def leaf_generation(self) -> int:
        return self.root.k + self.K

    @property
    def leaf_side(self) -> float:
        return float(self.m) ** (-self.leaf_generation)

    def _cube(self, idx: Index, depth: Optional[int] = None) -> ParabolicCube:
        depth = self.K if depth is None else depth
        return ParabolicCube(self.m, self.root.k + depth, idx)

    def is_empty(self) -> bool:
        return not self.occupied

    def leaves(self) -> List[ParabolicCube]:
        return [self._cube(idx) for idx in sorted(self.occupied)]

    @cached_property
    def levels(self) -> Tuple[FrozenSet[Index], ...]:
        """Occupied index sets at each depth 0..K (a cube meets E iff it appears)."""
        levels = [self.occupied]
        for _ in range(self.K):
            levels.append(frozenset(parent_index(idx, self.m) for idx in levels[-1]))
        return tuple(reversed(levels))

    @cached_property
    def full_levels(self) -> Tuple[FrozenSet[Index], ...]:
        """Indices at each depth whose whole subtree is occupied."""
        m, n = self.m, self.n
        per_parent = m ** (n + 2)
        full = [self.occupied]
        for _ in range(self.K):
            counts: Dict[Index, int] = {}
            for idx in full[-1]:
                up = parent_index(idx, m)
                counts[up] = counts.get(up, 0) + 1
            full.append(frozenset(idx for idx, c in counts.items() if c == per_parent))
        return tuple(reversed(full))

    def depth_of(self, Q: ParabolicCube) -> int:
        if Q.m != self.m or Q.n != self.n:
            raise GeometryError(f"Cube {Q} does not live in the tree of {self.root}")
        return Q.k - self.root.k

    def meets(self, Q: ParabolicCube) -> bool:
        depth = self.depth_of(Q)
        if depth < 0:
            return Q.contains_cube(self.root) and not self.is_empty()
        if depth > self.K:
            return ancestor(Q, depth - self.K).j in self.occupied and ancestor(Q, depth) == self.root
        return Q.j in self.levels[depth]

    def occupied_children(self, Q: ParabolicCube) -> List[ParabolicCube]:
        depth = self.depth_of(Q)
        if depth >= self.K:
            return []
        level = self.levels[depth + 1]
        return [c for c in Q.iter_children() if c.j in level]

    def count(self, Q: ParabolicCube) -> int:
        """Number of occupied leaves inside Q."""
        depth = self.depth_of(Q)
        if depth > self.K or not self.meets(Q):
            return 0
        return sum(1 for idx in self.occupied if ancestor(self._cube(idx), self.K - depth) == Q)

    def restrict(self, Q: ParabolicCube) -> "GridSet":
        """E intersected with a descendant cube Q, re-rooted at Q."""
        depth = self.depth_of(Q)
        if depth < 0 or depth > self.K or ancestor(Q, depth) != self.root:
            raise ResolutionError(f"{Q} is not a resolvable descendant of {self.root}")
        remaining = self.K - depth
        kept = frozenset(idx for idx in self.occupied if ancestor(self._cube(idx), remaining) == Q)
        return GridSet(Q, remaining, kept)

    def union(self, other: "GridSet") -> "GridSet":
        if other.root != self.root or other.K != self.K:
            raise GeometryError("Union needs GridSets on the same root and resolution")
        return GridSet(self.root, self.K, self.occupied | other.occupied)

    def dilate(self) -> "GridSet":
        """Parabolic dilation by 1/m: every cube keeps its index and moves one generation down."""
        root = ParabolicCube(self.m, self.root.k + 1, self.root.j)
        return GridSet(root, self.K, self.occupied)

    def maximal_cubes(self) -> List[ParabolicCube]:
        """Fully occupied cubes not contained in a larger fully occupied cube."""
        full = self.full_levels
        cubes = []
        for depth, level in enumerate(full):
            for idx in sorted(level):
                Q = self._cube(idx, depth)
                if depth == 0 or ancestor(Q, 1).j not in full[depth - 1]:
                    cubes.append(Q)
        return cubes

    def leaf_centers(self) -> Tuple[np.ndarray, np.ndarray]:
        """Spatial centers (L, n) and time centers (L,) of occupied leaves in sorted order."""
        idx = np.array(sorted(self.occupied), dtype=float).reshape(-1, self.n + 1)
        side = self.leaf_side
        return (idx[:, :-1] + 0.5) * side, (idx[:, -1] + 0.5) * side * side

    def save(self, path: str) -> None:
        with open(path, "w") as f:
            f.write(f"n={self.n} m={self.m} root={self.root.literal} K={self.K}\n")
            for idx in sorted(self.occupied):
                f.write(",".join(str(i) for i in idx) + "\n")

    @classmethod
    def load(cls, path: str) -> "GridSet":
        with open(path) as f:
            lines = [line.strip() for line in f if line.strip() and not line.startswith("#")]
        if not lines:
            raise GeometryError(f"GridSet file {path} is empty")
        try:
            header = dict(part.split("=", 1) for part in lines[0].split())
            root = ParabolicCube.from_literal(header["root"])
            K = int(header["K"])
            if int(header["n"]) != root.n or int(header["m"]) != root.m:
                raise GeometryError(f"GridSet header of {path} disagrees with its root literal")
            occupied = [tuple(int(v) for v in line.split(",")) for line in lines[1:]]
        except (KeyError, ValueError) as e:
            raise GeometryError(f"Malformed GridSet file {path}: {e}")
        return cls(root, K, frozenset(occupied))


def full_set(root: ParabolicCube, K: int) -> GridSet:
    return cube_set(root, K, [root])


def cube_set(root: ParabolicCube, K: int, cubes: Iterable[ParabolicCube]) -> GridSet:
    """Union of the given descendant cubes of root, expanded to resolution K."""
    occupied = set()
    m = root.m
    for Q in cubes:
        depth = Q.k - root.k
        if depth < 0 or depth > K or ancestor(Q, depth) != root:
            raise ResolutionError(f"{Q} is not a resolvable descendant of {root}")
        scale = m ** (K - depth)
        spatial = [range(i * scale, (i + 1) * scale) for i in Q.j[:-1]]
        temporal = range(Q.j[-1] * scale * scale, (Q.j[-1] + 1) * scale * scale)
        occupied.update(itertools.product(*spatial, temporal))
    return GridSet(root, K, frozenset(occupied))


def slab_set(root: ParabolicCube, K: int, time_row: int = 0) -> GridSet:
    """All leaves in one time row of root (a discretized R^n x {t} slab)."""
    m = root.m
    scale = m**K
    if not 0 <= time_row < scale * scale:
        raise ParameterError(f"time_row must lie in [0, {scale * scale})")
    spatial = [range(i * scale, (i + 1) * scale) for i in root.j[:-1]]
    t = root.j[-1] * scale * scale + time_row
    return GridSet(root, K, frozenset(idx + (t,) for idx in itertools.product(*spatial)))


def product_set(root: ParabolicCube, K: int, axes: Sequence[Sequence[int]]) -> GridSet:
    """Product of per-axis offset lists (n spatial axes then time) relative to root."""
    if len(axes) != root.n + 1:
        raise ParameterError(f"product_set needs {root.n + 1} axis offset lists")
    scale = root.m**K
    bases = [i * scale for i in root.j[:-1]] + [root.j[-1] * scale * scale]
    limits = [scale] * root.n + [scale * scale]
    for offsets, limit in zip(axes, limits):
        if any(not 0 <= o < limit for o in offsets):
            raise ParameterError(f"product_set offsets out of range [0, {limit})")
    occupied = frozenset(tuple(b + o for b, o in zip(bases, combo)) for combo in itertools.product(*axes))
    return GridSet(root, K, occupied)


def percolation_set(root: ParabolicCube, K: int, p: float, seed: int) -> GridSet:
    """Fractal percolation: each child of a retained cube survives independently with probability p."""
    if not 0.0 <= p <= 1.0:
        raise ParameterError(f"Percolation probability must lie in [0, 1], got {p}")
    rng = np.random.default_rng(seed)
    alive = [root]
    for _ in range(K):
        kids = [c for Q in alive for c in Q.iter_children()]
        keep = rng.random(len(kids)) < p
        alive = [c for c, k in zip(kids, keep) if k]
    return GridSet(root, K, frozenset(Q.j for Q in alive))


def _delta_generation(m: int, delta: float) -> float:
    """Smallest generation j with m^-j <= delta (so side <= delta iff k >= j)."""
    if delta is None or math.isinf(delta):
        return -math.inf
    if delta <= 0:
        raise ParameterError(f"Scale cap delta must be positive, got {delta}")
    j = math.ceil(-math.log(delta) / math.log(m) - 1e-9)
    while float(m) ** (-j) > delta * (1 + 1e-12):
        j += 1
    while float(m) ** (-(j - 1)) <= delta * (1 + 1e-12):
        j -= 1
    return j


@dataclass(frozen=True)
class NetContentValue:
    value: float
    rho: float
    delta: float
    witness: Tuple[ParabolicCube, ...]


class ContentTable:
    """Optimal cover values and choices for every cube of a GridSet's tree."""

    def __init__(self, E: GridSet, rho: float, delta: float = math.inf):
        if not 0 < rho:
            raise ParameterError(f"Content exponent rho must be positive, got {rho}")
        self.E = E
        self.rho = rho
        self.j_delta = _delta_generation(E.m, delta)
        if self.j_delta > E.leaf_generation:
            raise ResolutionError(f"delta={delta} is below the grid resolution side {E.leaf_side}")
        self.delta = math.inf if math.isinf(self.j_delta) else float(E.m) ** (-self.j_delta)
        self.values: List[Dict[Index, float]] = [dict() for _ in range(E.K + 1)]
        self.takes_self: List[Dict[Index, bool]] = [dict() for _ in range(E.K + 1)]
        self._sweep()

    def _sweep(self) -> None:
        E, m = self.E, self.E.m
        leaf_cost = E.leaf_side**self.rho
        self.values[E.K] = {idx: leaf_cost for idx in E.occupied}
        self.takes_self[E.K] = {idx: True for idx in E.occupied}
        for depth in range(E.K - 1, -1, -1):
            groups: Dict[Index, List[float]] = {}
            for idx, value in self.values[depth + 1].items():
                up = parent_index(idx, m)
                groups.setdefault(up, []).append(value)
            generation = E.root.k + depth
            cost = float(m) ** (-generation * self.rho)
            for idx, kids in groups.items():
                total = math.fsum(kids)
                if generation >= self.j_delta and cost <= total:
                    self.values[depth][idx], self.takes_self[depth][idx] = cost, True
                else:
                    self.values[depth][idx], self.takes_self[depth][idx] = total, False
            logger.debug("content sweep depth %d: %d cubes", depth, len(groups))

    def value(self, Q: ParabolicCube) -> float:
        depth = self.E.depth_of(Q)
        return self.values[depth].get(Q.j, 0.0)

    def witness(self, Q: ParabolicCube) -> List[ParabolicCube]:
        depth = self.E.depth_of(Q)
        if Q.j not in self.values[depth]:
            return []
        if self.takes_self[depth][Q.j]:
            return [Q]
        return [W for c in self.E.occupied_children(Q) for W in self.witness(c)]

    def children_value(self, Q: ParabolicCube) -> float:
        """Optimal cover of E inside Q by cubes strictly below Q."""
        return math.fsum(self.value(c) for c in self.E.occupied_children(Q))

    def children_witness(self, Q: ParabolicCube) -> List[ParabolicCube]:
        return [W for c in self.E.occupied_children(Q) for W in self.witness(c)]


def net_content(E: GridSet, rho: float, delta: float = math.inf) -> NetContentValue:
    """M^rho_delta(E) over covers by descendants of E.root; delta is rounded down to a power of 1/m."""
    if not 0 < rho <= E.n + 2:
        raise ParameterError(f"rho must lie in (0, n+2] = (0, {E.n + 2}], got {rho}")
    table = ContentTable(E, rho, delta)
    if E.is_empty():
        return NetContentValue(0.0, rho, table.delta, ())
    return NetContentValue(table.value(E.root), rho, table.delta, tuple(table.witness(E.root)))


def comparison_bounds(n: int, m: int, rho: float) -> Tuple[float, float]:
    """
    Factors of the two-sided comparison between net contents and Hausdorff contents.

    Returns (sqrt(n)^rho, 3^(n+1) m^rho): H_{sqrt(n) delta} <= lower * M_delta and
    M_delta <= upper * H_delta.
    """
    return math.sqrt(n) ** rho, 3 ** (n + 1) * float(m) ** rho


def random_rectangle_cover(E: GridSet, rng: np.random.Generator, max_diam: Optional[float] = None) -> List[ParabolicRectangle]:
    """
    A random cover of E by closed parabolic rectangles of diameter at least one leaf side.

    Each round picks an uncovered leaf, draws a rectangle around it with random
    spatial sides and time side in [leaf, scale], and marks every leaf it fully contains.
    """
    leaf = E.leaf_side
    scale = min(E.root.side * 1.5, max_diam) if max_diam is not None else E.root.side * 1.5
    if scale < leaf:
        raise ResolutionError(f"max_diam={max_diam} is below the leaf side {leaf}")
    remaining = set(E.occupied)
    cover = []
    while remaining:
        idx = min(remaining)
        cube = E._cube(idx)
        # diam = max(|sides|, time_side) <= scale
        spatial = rng.uniform(leaf, max(leaf, scale / math.sqrt(E.n)), size=E.n)
        time_side = rng.uniform(leaf, scale)
        lower = [a - rng.uniform(0, s - leaf) for a, s in zip(cube.lower, spatial)]
        t0 = cube.t0 - rng.uniform(0, time_side**2 - leaf**2)
        rect = ParabolicRectangle(lower, spatial, t0, time_side)
        hit = {i for i in remaining if _box_inside(E._cube(i), rect)}
        hit.add(idx)
        remaining -= hit
        cover.append(rect)
    return cover


def _box_inside(Q: ParabolicCube, rect: ParabolicRectangle, tol: float = 1e-12) -> bool:
    b = Q.box()
    return (
        all(lo >= a - tol and hi <= c + tol for lo, hi, a, c in zip(b.lo, b.hi, rect.lower, rect.upper))
        and b.t_lo >= rect.t0 - tol
        and b.t_hi <= rect.t1 + tol
    )


def cover_cost(cover: Iterable[ParabolicRectangle], rho: float) -> float:
    return math.fsum(rect.diam**rho for rect in cover)
