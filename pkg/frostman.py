"""
Frostman measures on GridSets.

The construction sweeps the cube tree bottom-up: every occupied leaf starts
with side^rho, and a cube whose child sum exceeds side(Q)^rho caps it, which
rescales everything below Q by the same factor. The capped values are exactly
the net content recursion with delta = infinity, so the total mass equals
M^rho_infinity(E) computed in the tree.
"""

import json
import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np

from content_measures import GridSet, Index, parent_index
from exceptions import GeometryError, MeasureError, ParameterError
from parabolic_geometry import ParabolicCube, ParabolicRectangle, ancestor

logger = logging.getLogger(__name__)

ADDITIVITY_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class TreeMeasure:
    """
    Finitely additive masses on the cubes of a GridSet's tree.

    ``masses[d]`` maps the index of an occupied depth-d cube to its mass.
    Cubes below the resolution get a volume share of their leaf's mass.
    """

    E: GridSet
    rho: float
    masses: Tuple[Dict[Index, float], ...]
    provenance: str = "frostman"

    @property
    def root(self) -> ParabolicCube:
        return self.E.root

    @property
    def n(self) -> int:
        return self.E.n

    @property
    def total(self) -> float:
        return self.masses[0].get(self.root.j, 0.0)

    def mass(self, Q: ParabolicCube) -> float:
        depth = self.E.depth_of(Q)
        if depth < 0:
            return self.total if Q.contains_cube(self.root) else 0.0
        if depth > self.E.K:
            leaf = ancestor(Q, depth - self.E.K)
            if ancestor(leaf, self.E.K) != self.root:
                return 0.0
            return self.masses[self.E.K].get(leaf.j, 0.0) * float(Q.m) ** (-(self.n + 2) * (depth - self.E.K))
        if ancestor(Q, depth) != self.root:
            return 0.0
        return self.masses[depth].get(Q.j, 0.0)

    def leaf_arrays(self) -> Tuple[np.ndarray, np.ndarray]:
        """Occupied leaf indices (L, n+1) and masses (L,) in sorted order."""
        keys = sorted(self.masses[self.E.K])
        idx = np.array(keys, dtype=np.int64).reshape(-1, self.n + 1)
        return idx, np.array([self.masses[self.E.K][k] for k in keys], dtype=float)

    def measure_rectangle(self, A: ParabolicRectangle) -> float:
        """Exact mass of a closed rectangle, spreading each leaf's mass uniformly by volume."""
        if A.n != self.n:
            raise GeometryError(f"Dimension mismatch: rectangle n={A.n}, measure n={self.n}")
        idx, mass = self.leaf_arrays()
        if not len(mass):
            return 0.0
        side = self.E.leaf_side
        lo = idx[:, :-1] * side
        overlap = np.clip(np.minimum(lo + side, np.array(A.upper)) - np.maximum(lo, np.array(A.lower)), 0.0, None) / side
        t_lo = idx[:, -1] * side * side
        t_overlap = np.clip(np.minimum(t_lo + side * side, A.t1) - np.maximum(t_lo, A.t0), 0.0, None) / (side * side)
        return math.fsum(mass * np.prod(overlap, axis=1) * t_overlap)

    def iter_cubes(self):
        for depth, level in enumerate(self.masses):
            for idx, value in level.items():
                yield ParabolicCube(self.E.m, self.root.k + depth, idx), value

    def check(self) -> None:
        """Assert nonnegativity, the growth bound and additivity on every cube."""
        m = self.E.m
        for depth in range(self.E.K + 1):
            side = float(m) ** (-(self.root.k + depth))
            cap = side**self.rho * (1 + ADDITIVITY_RTOL)
            for idx, value in self.masses[depth].items():
                if value < 0 or value > cap:
                    raise MeasureError(f"Cube {m}:{self.root.k + depth}:{idx} has mass {value} outside [0, side^rho={cap}]")
        for depth in range(self.E.K):
            sums: Dict[Index, List[float]] = {}
            for idx, value in self.masses[depth + 1].items():
                sums.setdefault(parent_index(idx, m), []).append(value)
            for idx, value in self.masses[depth].items():
                total = math.fsum(sums.get(idx, []))
                if not math.isclose(total, value, rel_tol=ADDITIVITY_RTOL, abs_tol=1e-300):
                    raise MeasureError(f"Additivity fails at depth {depth}, index {idx}: {value} vs children {total}")

    def to_dict(self) -> dict:
        idx, mass = self.leaf_arrays()
        return {
            "root": self.root.literal,
            "K": self.E.K,
            "rho": self.rho,
            "leaves": [[",".join(str(int(i)) for i in row), float(w)] for row, w in zip(idx, mass)],
        }

    def save(self, path: str) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)

    @classmethod
    def from_dict(cls, data: dict) -> "TreeMeasure":
        root = ParabolicCube.from_literal(data["root"])
        leaves = {tuple(int(v) for v in key.split(",")): float(w) for key, w in data["leaves"]}
        E = GridSet(root, int(data["K"]), frozenset(k for k, w in leaves.items() if w > 0))
        measure = cls(E, float(data["rho"]), _sum_up(E, {k: w for k, w in leaves.items() if w > 0}))
        measure.check()
        return measure

    @classmethod
    def load(cls, path: str) -> "TreeMeasure":
        with open(path) as f:
            return cls.from_dict(json.load(f))


def _sum_up(E: GridSet, leaf_masses: Dict[Index, float]) -> Tuple[Dict[Index, float], ...]:
    levels = [dict(leaf_masses)]
    for _ in range(E.K):
        groups: Dict[Index, List[float]] = {}
        for idx, value in levels[-1].items():
            groups.setdefault(parent_index(idx, E.m), []).append(value)
        levels.append({idx: math.fsum(v) for idx, v in groups.items()})
    return tuple(reversed(levels))


def build_frostman(E: GridSet, rho: float) -> TreeMeasure:
    if not 0 < rho <= E.n + 2:
        raise ParameterError(f"rho must lie in (0, n+2] = (0, {E.n + 2}], got {rho}")
    if E.is_empty():
        raise MeasureError("Cannot build a Frostman measure on an empty set")
    m, K = E.m, E.K
    raw: List[Dict[Index, float]] = [dict() for _ in range(K + 1)]
    child_sums: List[Dict[Index, float]] = [dict() for _ in range(K + 1)]
    raw[K] = {idx: E.leaf_side**rho for idx in E.occupied}
    for depth in range(K - 1, -1, -1):
        cap = float(m) ** (-(E.root.k + depth) * rho)
        groups: Dict[Index, List[float]] = {}
        for idx, value in raw[depth + 1].items():
            groups.setdefault(parent_index(idx, m), []).append(value)
        capped = 0
        for idx, kids in groups.items():
            total = math.fsum(kids)
            child_sums[depth][idx] = total
            raw[depth][idx] = min(cap, total)
            capped += cap < total
        logger.debug("frostman sweep depth %d: %d of %d cubes capped", depth, capped, len(groups))

    masses: List[Dict[Index, float]] = [dict() for _ in range(K + 1)]
    masses[0] = dict(raw[0])
    for depth in range(1, K + 1):
        for idx, value in raw[depth].items():
            up = parent_index(idx, m)
            masses[depth][idx] = value * (masses[depth - 1][up] / child_sums[depth - 1][up])
    measure = TreeMeasure(E, rho, tuple(masses))
    logger.info("Frostman measure on %d leaves, rho=%g: total mass %.6g", len(E.occupied), rho, measure.total)
    return measure


def frostman_a_constant(n: int, m: int, rho: float) -> float:
    return 3 ** (n + 1) * float(m) ** rho


def frostman_diam_bound_check(mu: TreeMeasure, A: ParabolicRectangle) -> bool:
    """mu(A) <= 3^(n+1) m^rho diam(A)^rho."""
    bound = frostman_a_constant(mu.n, mu.E.m, mu.rho) * A.diam**mu.rho
    return mu.measure_rectangle(A) <= bound * (1 + ADDITIVITY_RTOL)
