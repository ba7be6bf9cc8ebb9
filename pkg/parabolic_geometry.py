"""
Parabolic geometry on R^{n+1} = R^n x R.

Points, the parabolic metric, m-adic parabolic cubes with exact integer
indexing, closed parabolic rectangles and the (Q, F, Q*) triple used by the
alternative audit.
"""

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Iterator, List, Sequence, Tuple, Union

import numpy as np

from exceptions import GeometryError

OPEN = "open"
HALF_OPEN = "half-open"
CLOSED = "closed"


@dataclass(frozen=True)
class SpaceTimePoint:
    X: Tuple[float, ...]
    t: float

    def __post_init__(self):
        X = tuple(float(x) for x in np.atleast_1d(self.X))
        if len(X) < 1:
            raise GeometryError("A space-time point needs n >= 1 spatial coordinates")
        if not all(math.isfinite(x) for x in X) or not math.isfinite(float(self.t)):
            raise GeometryError(f"Non-finite coordinates in point {X}, {self.t}")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "t", float(self.t))

    @property
    def n(self) -> int:
        return len(self.X)

    def space(self) -> np.ndarray:
        return np.asarray(self.X, dtype=float)


def _check_same_n(a: SpaceTimePoint, b: SpaceTimePoint) -> None:
    if a.n != b.n:
        raise GeometryError(f"Dimension mismatch: n={a.n} vs n={b.n}")


def p_dist(a: SpaceTimePoint, b: SpaceTimePoint) -> float:
    """Parabolic distance max(|X - Y|, |t - s|^(1/2))."""
    _check_same_n(a, b)
    space = math.hypot(*(x - y for x, y in zip(a.X, b.X)))
    return max(space, math.sqrt(abs(a.t - b.t)))


def dist_infty(a: SpaceTimePoint, b: SpaceTimePoint) -> float:
    """max(2 |X - Y|_inf, sqrt(2 |t - s|)); closed balls are closed cubes of side lambda."""
    _check_same_n(a, b)
    sup = max(abs(x - y) for x, y in zip(a.X, b.X))
    return max(2.0 * sup, math.sqrt(2.0) * math.sqrt(abs(a.t - b.t)))


@dataclass(frozen=True)
class Box:
    """Axis-parallel bounds in space-time; degenerate (zero-width) boxes are allowed."""

    lo: Tuple[float, ...]
    hi: Tuple[float, ...]
    t_lo: float
    t_hi: float

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != len(hi) or not lo:
            raise GeometryError("Box bounds must have matching nonzero length")
        if any(b < a for a, b in zip(lo, hi)) or self.t_hi < self.t_lo:
            raise GeometryError(f"Inverted box bounds {lo}, {hi}, [{self.t_lo}, {self.t_hi}]")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "t_lo", float(self.t_lo))
        object.__setattr__(self, "t_hi", float(self.t_hi))

    @property
    def n(self) -> int:
        return len(self.lo)

    def box(self) -> "Box":
        return self


@dataclass(frozen=True)
class ParabolicRectangle:
    """Closed parabolic rectangle: prod [lower_i, lower_i + s_i] x [t0, t0 + s_{n+1}^2]."""

    lower: Tuple[float, ...]
    sides: Tuple[float, ...]
    t0: float
    time_side: float

    def __post_init__(self):
        lower = tuple(float(v) for v in self.lower)
        sides = tuple(float(v) for v in self.sides)
        if len(lower) != len(sides) or not lower:
            raise GeometryError("Rectangle corner and sides must have matching nonzero length")
        if any(s <= 0 for s in sides) or self.time_side <= 0:
            raise GeometryError(f"Rectangle side lengths must be positive: {sides}, {self.time_side}")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "sides", sides)
        object.__setattr__(self, "t0", float(self.t0))
        object.__setattr__(self, "time_side", float(self.time_side))

    @property
    def n(self) -> int:
        return len(self.lower)

    @property
    def upper(self) -> Tuple[float, ...]:
        return tuple(a + s for a, s in zip(self.lower, self.sides))

    @property
    def t1(self) -> float:
        return self.t0 + self.time_side**2

    @property
    def diam(self) -> float:
        return max(math.hypot(*self.sides), self.time_side)

    def box(self) -> Box:
        return Box(self.lower, self.upper, self.t0, self.t1)

    def contains_point(self, p: SpaceTimePoint) -> bool:
        return all(a <= x <= b for a, x, b in zip(self.lower, p.X, self.upper)) and self.t0 <= p.t <= self.t1

    def interior_contains(self, other: "ParabolicRectangle") -> bool:
        return (
            all(a < c for a, c in zip(self.lower, other.lower))
            and all(d < b for b, d in zip(self.upper, other.upper))
            and self.t0 < other.t0
            and other.t1 < self.t1
        )

    @classmethod
    def from_box(cls, box: Box) -> "ParabolicRectangle":
        return cls(box.lo, tuple(b - a for a, b in zip(box.lo, box.hi)), box.t_lo, math.sqrt(box.t_hi - box.t_lo))


@dataclass(frozen=True, order=True)
class ParabolicCube:
    """
    m-adic parabolic cube of generation k.

    Index j = (j_1, ..., j_n, j_time) gives the half-open cube
    prod [j_i m^-k, (j_i + 1) m^-k) x [j_time m^-2k, (j_time + 1) m^-2k).
    """

    m: int
    k: int
    j: Tuple[int, ...]

    def __post_init__(self):
        if int(self.m) < 2:
            raise GeometryError(f"Cube base m must be >= 2, got {self.m}")
        j = tuple(int(v) for v in self.j)
        if len(j) < 2:
            raise GeometryError("Cube index needs n + 1 >= 2 entries")
        object.__setattr__(self, "m", int(self.m))
        object.__setattr__(self, "k", int(self.k))
        object.__setattr__(self, "j", j)

    @property
    def n(self) -> int:
        return len(self.j) - 1

    @property
    def side(self) -> float:
        return float(self.m) ** (-self.k)

    @property
    def time_extent(self) -> float:
        return self.side**2

    @property
    def vol(self) -> float:
        return self.side ** (self.n + 2)

    @property
    def diam(self) -> float:
        return math.sqrt(self.n) * self.side

    @property
    def lower(self) -> Tuple[float, ...]:
        return tuple(i * self.side for i in self.j[:-1])

    @property
    def t0(self) -> float:
        return self.j[-1] * self.time_extent

    @property
    def t1(self) -> float:
        return (self.j[-1] + 1) * self.time_extent

    def center(self) -> SpaceTimePoint:
        s = self.side
        return SpaceTimePoint(tuple((i + 0.5) * s for i in self.j[:-1]), (self.j[-1] + 0.5) * self.time_extent)

    def box(self) -> Box:
        s = self.side
        return Box(self.lower, tuple((i + 1) * s for i in self.j[:-1]), self.t0, self.t1)

    def rectangle(self) -> ParabolicRectangle:
        return ParabolicRectangle(self.lower, (self.side,) * self.n, self.t0, self.side)

    def iter_children(self) -> Iterator["ParabolicCube"]:
        m = self.m
        spatial = [range(i * m, i * m + m) for i in self.j[:-1]]
        temporal = range(self.j[-1] * m * m, self.j[-1] * m * m + m * m)
        for idx in itertools.product(*spatial, temporal):
            yield ParabolicCube(m, self.k + 1, idx)

    def child(self, offsets: Sequence[int]) -> "ParabolicCube":
        """Child at per-axis offsets (spatial offsets < m, time offset < m^2)."""
        m = self.m
        if len(offsets) != self.n + 1:
            raise GeometryError("Child offsets need n + 1 entries")
        if any(not 0 <= o < m for o in offsets[:-1]) or not 0 <= offsets[-1] < m * m:
            raise GeometryError(f"Child offsets out of range: {offsets}")
        idx = tuple(i * m + o for i, o in zip(self.j[:-1], offsets[:-1])) + (self.j[-1] * m * m + offsets[-1],)
        return ParabolicCube(m, self.k + 1, idx)

    def offsets_in_parent(self) -> Tuple[int, ...]:
        m = self.m
        return tuple(i % m for i in self.j[:-1]) + (self.j[-1] % (m * m),)

    def contains_cube(self, other: "ParabolicCube") -> bool:
        if other.m != self.m or other.n != self.n or other.k < self.k:
            return False
        return ancestor(other, other.k - self.k) == self

    def contains_point(self, p: SpaceTimePoint, convention: str = HALF_OPEN) -> bool:
        """Membership under the open, half-open (m-adic) or closed convention."""
        s = self.side
        lo = self.lower
        hi = tuple((i + 1) * s for i in self.j[:-1])
        t0, t1 = self.t0, self.t1
        if convention == HALF_OPEN:
            return all(a <= x < b for a, x, b in zip(lo, p.X, hi)) and t0 <= p.t < t1
        if convention == OPEN:
            return all(a < x < b for a, x, b in zip(lo, p.X, hi)) and t0 < p.t < t1
        if convention == CLOSED:
            return all(a <= x <= b for a, x, b in zip(lo, p.X, hi)) and t0 <= p.t <= t1
        raise GeometryError(f"Unknown membership convention {convention!r}")

    @property
    def literal(self) -> str:
        return f"{self.m}:{self.k}:{','.join(str(i) for i in self.j)}"

    @classmethod
    def from_literal(cls, text: str) -> "ParabolicCube":
        try:
            m, k, j = text.strip().split(":")
            return cls(int(m), int(k), tuple(int(v) for v in j.split(",")))
        except (ValueError, TypeError):
            raise GeometryError(f"Malformed cube literal {text!r}; expected 'm:k:j1,...,j{{n+1}}'")

    @classmethod
    def unit(cls, m: int, n: int) -> "ParabolicCube":
        return cls(m, 0, (0,) * (n + 1))

    def __str__(self) -> str:
        return self.literal


def children(Q: ParabolicCube) -> List[ParabolicCube]:
    return list(Q.iter_children())


def parent(Q: ParabolicCube) -> ParabolicCube:
    m = Q.m
    return ParabolicCube(m, Q.k - 1, tuple(i // m for i in Q.j[:-1]) + (Q.j[-1] // (m * m),))


def ancestor(Q: ParabolicCube, steps: int) -> ParabolicCube:
    if steps < 0:
        raise GeometryError("Ancestor steps must be >= 0")
    if steps == 0:
        return Q
    scale = Q.m**steps
    return ParabolicCube(Q.m, Q.k - steps, tuple(i // scale for i in Q.j[:-1]) + (Q.j[-1] // (scale * scale),))


BoxLike = Union[Box, ParabolicRectangle, ParabolicCube, SpaceTimePoint]


def _as_box(item: BoxLike) -> Box:
    if isinstance(item, SpaceTimePoint):
        return Box(item.X, item.X, item.t, item.t)
    return item.box()


def _box_gap(a: Box, b: Box) -> float:
    if a.n != b.n:
        raise GeometryError(f"Dimension mismatch: n={a.n} vs n={b.n}")
    space = [max(0.0, a1 - b2, b1 - a2) for a1, a2, b1, b2 in zip(a.lo, a.hi, b.lo, b.hi)]
    time = max(0.0, a.t_lo - b.t_hi, b.t_lo - a.t_hi)
    return max(math.hypot(*space), math.sqrt(time))


def gap(A: Union[BoxLike, Iterable[BoxLike]], B: Union[BoxLike, Iterable[BoxLike]]) -> float:
    """Infimum of p_dist between two finite unions of boxes, in closed form per pair."""
    A = [A] if isinstance(A, (Box, ParabolicRectangle, ParabolicCube, SpaceTimePoint)) else list(A)
    B = [B] if isinstance(B, (Box, ParabolicRectangle, ParabolicCube, SpaceTimePoint)) else list(B)
    if not A or not B:
        raise GeometryError("gap() needs two nonempty sets")
    return min(_box_gap(_as_box(a), _as_box(b)) for a in A for b in B)


@dataclass(frozen=True)
class CubeTriple:
    """
    Open cube Q = z_Q + (-r/2, r/2)^n x (-r^2, 0), its pole cube F and target cube Q*.

    F = z_Q + S x [-eps^2 r^2, 0) and Q* = z_Q + S x [-3 eps^2 r^2, -2 eps^2 r^2],
    with S the centered spatial cube of side eps r.
    """

    Q: ParabolicCube
    F: ParabolicCube
    Qstar: ParabolicCube
    eps: float
    delta: float

    @property
    def n(self) -> int:
        return self.Q.n

    @property
    def r(self) -> float:
        return self.Q.side

    @property
    def z(self) -> SpaceTimePoint:
        c = self.Q.center()
        return SpaceTimePoint(c.X, self.Q.t1)

    def normal_boundary(self) -> List[Box]:
        """Bottom face and lateral faces of Q (its top face is excluded)."""
        box = self.Q.box()
        faces = [Box(box.lo, box.hi, box.t_lo, box.t_lo)]
        for axis in range(self.n):
            for value in (box.lo[axis], box.hi[axis]):
                lo = list(box.lo)
                hi = list(box.hi)
                lo[axis] = hi[axis] = value
                faces.append(Box(lo, hi, box.t_lo, box.t_hi))
        return faces

    def check_invariants(self, rtol: float = 1e-12) -> None:
        r, eps = self.r, self.eps
        F, S = self.F.box(), self.Qstar.box()
        top = self.Q.t1
        for cube in (F, S):
            for a, b, c in zip(cube.lo, cube.hi, self.z.X):
                if not math.isclose(b - a, eps * r, rel_tol=rtol) or not math.isclose(a + b, 2 * c, rel_tol=rtol, abs_tol=rtol * r):
                    raise GeometryError("Triple footprint is not the centered cube S")
        e2 = (eps * r) ** 2
        if not (math.isclose(F.t_lo, top - e2, rel_tol=rtol, abs_tol=rtol * e2) and math.isclose(F.t_hi, top, rel_tol=rtol)):
            raise GeometryError("F is not the top time layer of Q")
        if not (math.isclose(S.t_lo, top - 3 * e2, rel_tol=rtol, abs_tol=rtol * e2) and math.isclose(S.t_hi, top - 2 * e2, rel_tol=rtol, abs_tol=rtol * e2)):
            raise GeometryError("Q* is not two layers below F")
        separation = gap(self.Qstar, self.normal_boundary())
        if not math.isclose(separation, self.delta * r, rel_tol=1e-9):
            raise GeometryError(f"gap(Q*, normal boundary) = {separation}, expected {self.delta * r}")
        if eps / self.delta > 1.0 / math.sqrt(6 * self.n) * (1 + 1e-12):
            raise GeometryError(f"eps/delta = {eps / self.delta} exceeds 1/sqrt(6n)")


def min_triple_base(n: int) -> int:
    """Smallest odd m with m >= 1 + 2 sqrt(6n)."""
    m = math.ceil(1 + 2 * math.sqrt(6 * n))
    return m if m % 2 == 1 else m + 1


def standard_triple(Q: ParabolicCube) -> CubeTriple:
    m, n = Q.m, Q.n
    if m % 2 == 0:
        raise GeometryError(f"standard_triple needs odd m, got m={m}")
    if m < 1 + 2 * math.sqrt(6 * n):
        raise GeometryError(f"standard_triple needs m >= 1 + 2 sqrt(6n) = {1 + 2 * math.sqrt(6 * n):.3f} for n={n}, got m={m}")
    middle = (m - 1) // 2
    F = Q.child((middle,) * n + (m * m - 1,))
    Qstar = Q.child((middle,) * n + (m * m - 3,))
    triple = CubeTriple(Q=Q, F=F, Qstar=Qstar, eps=1.0 / m, delta=(m - 1) / (2.0 * m))
    triple.check_invariants()
    return triple
