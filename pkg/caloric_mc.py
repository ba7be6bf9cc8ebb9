"""
Monte Carlo caloric measure.

The caloric measure of a set E on the boundary of Omega, seen from a pole
(X, t), is the probability that Brownian motion started at X and run
backwards in time from t first leaves Omega through E. Walks take Euler steps
X -> X + sqrt(variance_rate dt) xi, t -> t - dt. The first segment that
leaves the container is refined by bisection; obstacle entry along a segment
is found exactly by slab clipping; optional Brownian-bridge kills account for
excursions across flat faces between two interior endpoints.

Randomness is organised in batches: batch b of stream s draws from
SeedSequence(seed, spawn_key=(s, b)), and every lane draws its increments
whether or not it is still alive. Estimates are therefore bit-identical for a
given (seed, N, dt, batch_size) whatever the thread count.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from config import settings
from exceptions import GeometryError, LabError, ParameterError, WalkBudgetExceeded
from heat_kernel import ball_constant, cylinder_bound
from parabolic_geometry import Box, ParabolicCube, ParabolicRectangle, SpaceTimePoint, gap
from schemas import AuditRecord, ContainerSpec, DomainSpec, PointSpec, RectangleSpec, TargetSpec, WalkSpec

logger = logging.getLogger(__name__)

BOTTOM = -1
LATERAL = -2
STOPPED = -3


def tag_name(tag: int) -> str:
    if tag >= 0:
        return f"obstacle:{tag}"
    return {BOTTOM: "bottom", LATERAL: "lateral", STOPPED: "stopped"}[tag]


# Containers
@dataclass(frozen=True)
class BoxContainer:
    """Open spatial box times the open time interval (t_lo, t_hi); either end may be infinite."""

    lo: Tuple[float, ...]
    hi: Tuple[float, ...]
    t_lo: float = -math.inf
    t_hi: float = math.inf

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != len(hi) or not lo or any(b <= a for a, b in zip(lo, hi)) or not self.t_lo < self.t_hi:
            raise GeometryError(f"Empty box container {lo}, {hi}, ({self.t_lo}, {self.t_hi})")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "t_lo", float(self.t_lo))
        object.__setattr__(self, "t_hi", float(self.t_hi))

    @classmethod
    def from_cube(cls, Q: ParabolicCube) -> "BoxContainer":
        box = Q.box()
        return cls(box.lo, box.hi, box.t_lo, box.t_hi)

    @property
    def n(self) -> int:
        return len(self.lo)

    def spatial_inside(self, X: np.ndarray) -> np.ndarray:
        return np.all((X > np.array(self.lo)) & (X < np.array(self.hi)), axis=1)

    def inside(self, X: np.ndarray, t: np.ndarray) -> np.ndarray:
        return self.spatial_inside(X) & (t > self.t_lo) & (t < self.t_hi)

    def closed_contains(self, p: SpaceTimePoint, tol: float = 0.0) -> bool:
        return all(a - tol <= x <= b + tol for a, x, b in zip(self.lo, p.X, self.hi)) and self.t_lo - tol <= p.t <= self.t_hi + tol

    def face_distances(self, X: np.ndarray) -> np.ndarray:
        """Signed distances to the 2n lateral faces, ordered (axis 0 low, axis 0 high, axis 1 low, ...)."""
        d = np.empty((X.shape[0], 2 * self.n))
        d[:, 0::2] = X - np.array(self.lo)
        d[:, 1::2] = np.array(self.hi) - X
        return d

    def lateral_face(self, X: np.ndarray) -> np.ndarray:
        return np.argmin(self.face_distances(X), axis=1)

    def project(self, X: np.ndarray, face: np.ndarray) -> np.ndarray:
        Y = X.copy()
        rows = np.arange(X.shape[0])
        axis = face // 2
        Y[rows, axis] = np.where(face % 2 == 0, np.array(self.lo)[axis], np.array(self.hi)[axis])
        return Y

    def spatial_distance(self, X: np.ndarray) -> np.ndarray:
        return np.min(self.face_distances(X), axis=1)

    def nearest_boundary(self, X: np.ndarray) -> np.ndarray:
        return self.project(X, self.lateral_face(X))

    def features(self) -> List[float]:
        widths = [b - a for a, b in zip(self.lo, self.hi)]
        if math.isfinite(self.t_lo) and math.isfinite(self.t_hi):
            widths.append(math.sqrt(self.t_hi - self.t_lo))
        return widths

    def within(self, other) -> bool:
        return (
            isinstance(other, BoxContainer)
            and all(a >= c for a, c in zip(self.lo, other.lo))
            and all(b <= d for b, d in zip(self.hi, other.hi))
            and self.t_lo >= other.t_lo
            and self.t_hi <= other.t_hi
        )

    def essential_distance(self, p: SpaceTimePoint) -> float:
        pieces = []
        if math.isfinite(self.t_lo):
            pieces.append(Box(self.lo, self.hi, self.t_lo, self.t_lo))
        for axis in range(self.n):
            for value in (self.lo[axis], self.hi[axis]):
                lo, hi = list(self.lo), list(self.hi)
                lo[axis] = hi[axis] = value
                pieces.append(Box(lo, hi, self.t_lo, self.t_hi))
        return gap(p, pieces)

    def bridge(self, x0: np.ndarray, x1: np.ndarray, var: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Bridge crossing probability, most likely face and crossing fraction for interior segments."""
        d0 = np.clip(self.face_distances(x0), 0.0, None)
        d1 = np.clip(self.face_distances(x1), 0.0, None)
        p = np.exp(-2.0 * d0 * d1 / var)
        face = np.argmax(p, axis=1)
        rows = np.arange(x0.shape[0])
        a, b = d0[rows, face], d1[rows, face]
        return 1.0 - np.prod(1.0 - p, axis=1), face, a / np.where(a + b > 0, a + b, 1.0)


@dataclass(frozen=True)
class BallContainer:
    """Open spatial ball times the open time interval (t_lo, t_hi)."""

    center: Tuple[float, ...]
    radius: float
    t_lo: float = -math.inf
    t_hi: float = math.inf

    def __post_init__(self):
        center = tuple(float(v) for v in self.center)
        if not center or self.radius <= 0 or not self.t_lo < self.t_hi:
            raise GeometryError(f"Empty ball container {center}, r={self.radius}, ({self.t_lo}, {self.t_hi})")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "radius", float(self.radius))
        object.__setattr__(self, "t_lo", float(self.t_lo))
        object.__setattr__(self, "t_hi", float(self.t_hi))

    @property
    def n(self) -> int:
        return len(self.center)

    def _radial(self, X: np.ndarray) -> np.ndarray:
        return np.linalg.norm(X - np.array(self.center), axis=1)

    def spatial_inside(self, X: np.ndarray) -> np.ndarray:
        return self._radial(X) < self.radius

    def inside(self, X: np.ndarray, t: np.ndarray) -> np.ndarray:
        return self.spatial_inside(X) & (t > self.t_lo) & (t < self.t_hi)

    def closed_contains(self, p: SpaceTimePoint, tol: float = 0.0) -> bool:
        radial = math.hypot(*(x - c for x, c in zip(p.X, self.center)))
        return radial <= self.radius + tol and self.t_lo - tol <= p.t <= self.t_hi + tol

    def face_distances(self, X: np.ndarray) -> np.ndarray:
        return (self.radius - self._radial(X))[:, None]

    def lateral_face(self, X: np.ndarray) -> np.ndarray:
        return np.zeros(X.shape[0], dtype=int)

    def project(self, X: np.ndarray, face: np.ndarray) -> np.ndarray:
        c = np.array(self.center)
        radial = self._radial(X)
        safe = np.where(radial > 0, radial, 1.0)
        direction = np.where((radial > 0)[:, None], (X - c) / safe[:, None], np.eye(self.n)[0])
        return c + self.radius * direction

    def spatial_distance(self, X: np.ndarray) -> np.ndarray:
        return self.radius - self._radial(X)

    def nearest_boundary(self, X: np.ndarray) -> np.ndarray:
        return self.project(X, self.lateral_face(X))

    def features(self) -> List[float]:
        widths = [2.0 * self.radius]
        if math.isfinite(self.t_lo) and math.isfinite(self.t_hi):
            widths.append(math.sqrt(self.t_hi - self.t_lo))
        return widths

    def within(self, other) -> bool:
        if not isinstance(other, BallContainer):
            return False
        offset = math.hypot(*(a - b for a, b in zip(self.center, other.center)))
        return offset + self.radius <= other.radius and self.t_lo >= other.t_lo and self.t_hi <= other.t_hi

    def essential_distance(self, p: SpaceTimePoint) -> float:
        radial = math.hypot(*(x - c for x, c in zip(p.X, self.center)))
        time_gap = max(0.0, self.t_lo - p.t, p.t - self.t_hi)
        lateral = max(abs(self.radius - radial), math.sqrt(time_gap))
        if not math.isfinite(self.t_lo):
            return lateral
        bottom = max(max(0.0, radial - self.radius), math.sqrt(abs(p.t - self.t_lo)))
        return min(lateral, bottom)

    def bridge(self, x0: np.ndarray, x1: np.ndarray, var: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        # tangent-plane approximation of the sphere
        a = np.clip(self.spatial_distance(x0), 0.0, None)
        b = np.clip(self.spatial_distance(x1), 0.0, None)
        p = np.exp(-2.0 * a * b / var)
        return p, np.zeros(x0.shape[0], dtype=int), a / np.where(a + b > 0, a + b, 1.0)


Container = Union[BoxContainer, BallContainer]


@dataclass(frozen=True)
class SpaceTimeDomain:
    """Omega = container minus the union of closed obstacle rectangles."""

    container: Container
    obstacles: Tuple[ParabolicRectangle, ...] = ()

    def __post_init__(self):
        obstacles = tuple(self.obstacles)
        for rect in obstacles:
            if rect.n != self.container.n:
                raise GeometryError(f"Obstacle dimension n={rect.n} differs from container n={self.container.n}")
        object.__setattr__(self, "obstacles", obstacles)

    @property
    def n(self) -> int:
        return self.container.n

    @cached_property
    def _arrays(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        lo = np.array([r.lower for r in self.obstacles], dtype=float).reshape(-1, self.n)
        hi = np.array([r.upper for r in self.obstacles], dtype=float).reshape(-1, self.n)
        t0 = np.array([r.t0 for r in self.obstacles], dtype=float)
        t1 = np.array([r.t1 for r in self.obstacles], dtype=float)
        return lo, hi, t0, t1

    def in_obstacles(self, X: np.ndarray, t: np.ndarray) -> np.ndarray:
        if not self.obstacles:
            return np.zeros(X.shape[0], dtype=bool)
        lo, hi, t0, t1 = self._arrays
        inside = np.all((X[:, None, :] >= lo) & (X[:, None, :] <= hi), axis=2) & (t[:, None] >= t0) & (t[:, None] <= t1)
        return np.any(inside, axis=1)

    def contains_many(self, X: np.ndarray, t: np.ndarray) -> np.ndarray:
        return self.container.inside(X, t) & ~self.in_obstacles(X, t)

    def contains(self, p: SpaceTimePoint) -> bool:
        return bool(self.contains_many(p.space()[None, :], np.array([p.t]))[0])

    def with_obstacles(self, extra: Sequence[ParabolicRectangle]) -> "SpaceTimeDomain":
        return SpaceTimeDomain(self.container, self.obstacles + tuple(extra))

    def is_subdomain_of(self, other: "SpaceTimeDomain") -> bool:
        return self.container.within(other.container) and all(o in self.obstacles for o in other.obstacles)

    def essential_distance(self, p: SpaceTimePoint) -> float:
        """Parabolic distance from p to the container's bottom and lateral faces and the obstacles' lateral and top faces."""
        distances = [self.container.essential_distance(p)]
        for rect in self.obstacles:
            pieces = [Box(rect.lower, rect.upper, rect.t1, rect.t1)]
            for axis in range(self.n):
                for value in (rect.lower[axis], rect.upper[axis]):
                    lo, hi = list(rect.lower), list(rect.upper)
                    lo[axis] = hi[axis] = value
                    pieces.append(Box(lo, hi, rect.t0, rect.t1))
            distances.append(gap(p, pieces))
        return min(distances)

    def on_essential_boundary(self, p: SpaceTimePoint, tol: float = 1e-9) -> bool:
        if not self.container.closed_contains(p, tol) or self.contains(p):
            return False
        strictly_inside = any(
            all(a + tol < x < b - tol for a, x, b in zip(r.lower, p.X, r.upper)) and r.t0 + tol < p.t < r.t1 - tol for r in self.obstacles
        )
        return not strictly_inside and self.essential_distance(p) <= tol

    def default_dt(self) -> float:
        features = list(self.container.features())
        for rect in self.obstacles:
            features.extend(rect.sides)
            features.append(math.sqrt(rect.time_side))
        return min(features) ** 2 / 400.0

    def obstacle_entry(self, x0, s0, x1, s1) -> Tuple[np.ndarray, np.ndarray]:
        """First parameter in [0, 1] at which each segment enters a closed obstacle (inf if none)."""
        lo, hi, t0, t1 = self._arrays
        d = (x1 - x0)[:, None, :]
        start = x0[:, None, :]
        still = d == 0
        safe = np.where(still, 1.0, d)
        ta, tb = (lo - start) / safe, (hi - start) / safe
        inside = (start >= lo) & (start <= hi)
        t_min = np.where(still, np.where(inside, -np.inf, np.inf), np.minimum(ta, tb))
        t_max = np.where(still, np.where(inside, np.inf, -np.inf), np.maximum(ta, tb))
        dt = (s0 - s1)[:, None]
        # time runs backwards: s(tau) = s0 - tau dt
        time_enter = (s0[:, None] - t1) / dt
        time_leave = (s0[:, None] - t0) / dt
        enter = np.maximum(np.max(t_min, axis=2), time_enter)
        leave = np.minimum(np.min(t_max, axis=2), time_leave)
        valid = (enter <= leave) & (leave >= 0.0) & (enter <= 1.0)
        entry = np.where(valid, np.maximum(enter, 0.0), np.inf)
        which = np.argmin(entry, axis=1)
        return entry[np.arange(entry.shape[0]), which], which

    def obstacle_bridge(self, x0, s0, x1, s1, var: float):
        """Bridge kill probability across lateral obstacle faces for segments that miss every obstacle."""
        lo, hi, t0, t1 = self._arrays
        k, O, n = x0.shape[0], lo.shape[0], self.n
        a0, a1 = x0[:, None, :], x1[:, None, :]
        overlap = (s1[:, None] <= t1) & (s0[:, None] >= t0)
        within = (a0 >= lo) & (a0 <= hi) & (a1 >= lo) & (a1 <= hi)
        others = (np.sum(within, axis=2)[:, :, None] - within) == n - 1
        d_low0, d_low1 = lo - a0, lo - a1
        d_high0, d_high1 = a0 - hi, a1 - hi
        dist0 = np.stack([d_low0, d_high0], axis=3)
        dist1 = np.stack([d_low1, d_high1], axis=3)
        ok = (dist0 > 0) & (dist1 > 0) & others[..., None] & overlap[:, :, None, None]
        p = np.where(ok, np.exp(-2.0 * np.clip(dist0, 0, None) * np.clip(dist1, 0, None) / var), 0.0).reshape(k, -1)
        total = 1.0 - np.prod(1.0 - p, axis=1)
        best = np.argmax(p, axis=1)
        obstacle, axis, side = np.unravel_index(best, (O, n, 2))
        rows = np.arange(k)
        a = dist0.reshape(k, -1)[rows, best]
        b = dist1.reshape(k, -1)[rows, best]
        tau = np.clip(a / np.where(a + b > 0, a + b, 1.0), 0.0, 1.0)
        value = np.where(side == 0, lo[obstacle, axis], hi[obstacle, axis])
        return total, obstacle, tau, axis, value


# Walks
@dataclass(frozen=True)
class WalkConfig:
    dt: Optional[float] = None
    seed: int = 0
    bisection_tol: float = 1e-6
    max_steps: int = field(default_factory=lambda: settings.max_steps)
    batch_size: int = field(default_factory=lambda: settings.batch_size)
    variance_rate: float = 2.0
    bridge_correction: bool = True
    threads: int = field(default_factory=lambda: settings.threads)

    def __post_init__(self):
        if self.dt is not None and self.dt <= 0:
            raise ParameterError(f"dt must be positive, got {self.dt}")
        if self.bisection_tol <= 0:
            raise ParameterError(f"bisection_tol must be positive, got {self.bisection_tol}")
        if self.max_steps < 1 or self.batch_size < 1 or self.threads < 1:
            raise ParameterError("max_steps, batch_size and threads must be >= 1")
        if self.variance_rate <= 0:
            raise ParameterError(f"variance_rate must be positive, got {self.variance_rate}")
        if not 0 <= self.seed < 2**64:
            raise ParameterError("seed must be an unsigned 64-bit integer")

    def resolve_dt(self, domain: SpaceTimeDomain) -> float:
        return self.dt if self.dt is not None else domain.default_dt()

    @classmethod
    def from_spec(cls, spec: WalkSpec, seed: int, threads: Optional[int] = None) -> "WalkConfig":
        values = {k: v for k, v in spec.model_dump().items() if v is not None}
        if threads is not None:
            values["threads"] = threads
        return cls(seed=seed, **values)


@dataclass(frozen=True)
class ExitSample:
    Y: Tuple[float, ...]
    s: float
    tag: str
    steps: int


@dataclass(frozen=True, eq=False)
class ExitBatch:
    domain: SpaceTimeDomain
    X0: np.ndarray
    t0: np.ndarray
    Y: np.ndarray
    s: np.ndarray
    tag: np.ndarray
    face: np.ndarray
    steps: np.ndarray

    @property
    def N(self) -> int:
        return self.s.shape[0]

    def sample(self, i: int) -> ExitSample:
        return ExitSample(tuple(float(v) for v in self.Y[i]), float(self.s[i]), tag_name(int(self.tag[i])), int(self.steps[i]))


def _bisect(pred, x0, s0, x1, s1, tol: float) -> np.ndarray:
    """Smallest parameter (to tol in the parabolic metric) at which a convex predicate turns false."""
    lo = np.zeros(x0.shape[0])
    hi = np.ones(x0.shape[0])
    length = np.maximum(np.linalg.norm(x1 - x0, axis=1), np.sqrt(np.abs(s0 - s1)))
    iterations = int(max(0, math.ceil(math.log2(max(float(np.max(length)), tol) / tol))))
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        inside = pred(x0 + mid[:, None] * (x1 - x0), s0 + mid * (s1 - s0))
        lo = np.where(inside, mid, lo)
        hi = np.where(inside, hi, mid)
    return hi


def _walk_batch(domain: SpaceTimeDomain, X0, t0, cfg: WalkConfig, dt: float, rng, stop_time: Optional[float]):
    B, n = X0.shape
    cont = domain.container
    X, t = X0.copy(), t0.copy()
    alive = np.ones(B, dtype=bool)
    Y, S = np.empty((B, n)), np.empty(B)
    tag = np.full(B, STOPPED, dtype=np.int64)
    face = np.full(B, -1, dtype=np.int64)
    steps = np.zeros(B, dtype=np.int64)
    var = cfg.variance_rate * dt
    sigma = math.sqrt(var)
    budget = cfg.max_steps
    if math.isfinite(cont.t_lo):
        budget = max(budget, math.ceil((float(np.max(t0)) - cont.t_lo) / dt) + 2)

    for step in range(1, budget + 1):
        xi = rng.standard_normal((B, n))
        u = rng.random(B)
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        x0, s0 = X[idx], t[idx]
        x1, s1 = x0 + sigma * xi[idx], s0 - dt
        k = idx.size
        tau = np.full(k, np.inf)
        ev_Y, ev_S = x1.copy(), s1.copy()
        ev_tag = np.full(k, STOPPED, dtype=np.int64)
        ev_face = np.full(k, -1, dtype=np.int64)

        out = ~cont.inside(x1, s1)
        if out.any():
            o = np.flatnonzero(out)
            th = _bisect(cont.inside, x0[o], s0[o], x1[o], s1[o], cfg.bisection_tol)
            pts = x0[o] + th[:, None] * (x1[o] - x0[o])
            ts = s0[o] - th * dt
            bottom = ts <= cont.t_lo
            tau[o], ev_Y[o], ev_S[o] = th, pts, ts
            ev_tag[o] = np.where(bottom, BOTTOM, LATERAL)
            ev_face[o] = np.where(bottom, -1, cont.lateral_face(pts))

        if domain.obstacles:
            te, which = domain.obstacle_entry(x0, s0, x1, s1)
            hit = te < tau
            if hit.any():
                h = np.flatnonzero(hit)
                tau[h] = te[h]
                ev_Y[h] = x0[h] + te[h][:, None] * (x1[h] - x0[h])
                ev_S[h] = s0[h] - te[h] * dt
                ev_tag[h] = which[h]
                ev_face[h] = -1

        if cfg.bridge_correction:
            q = np.flatnonzero(np.isinf(tau))
            if q.size:
                pc, cface, ctau = cont.bridge(x0[q], x1[q], var)
                if domain.obstacles:
                    po, oidx, otau, oaxis, oval = domain.obstacle_bridge(x0[q], s0[q], x1[q], s1[q], var)
                else:
                    po = np.zeros(q.size)
                uq = u[idx[q]]
                kill_c = uq < pc
                kill_o = ~kill_c & (uq < pc + (1.0 - pc) * po)
                if kill_c.any():
                    c = q[kill_c]
                    tc = ctau[kill_c]
                    pts = x0[c] + tc[:, None] * (x1[c] - x0[c])
                    tau[c] = tc
                    ev_Y[c] = cont.project(pts, cface[kill_c])
                    ev_S[c] = s0[c] - tc * dt
                    ev_tag[c] = LATERAL
                    ev_face[c] = cface[kill_c]
                if kill_o.any():
                    c = q[kill_o]
                    tc = otau[kill_o]
                    pts = x0[c] + tc[:, None] * (x1[c] - x0[c])
                    pts[np.arange(c.size), oaxis[kill_o]] = oval[kill_o]
                    tau[c] = tc
                    ev_Y[c] = pts
                    ev_S[c] = s0[c] - tc * dt
                    ev_tag[c] = oidx[kill_o]
                    ev_face[c] = -1

        done = np.isfinite(tau)
        if stop_time is not None:
            done |= s1 <= stop_time
        # exits strictly before the pole time
        pole_t = t0[idx]
        ev_S = np.where(ev_S >= pole_t, np.nextafter(pole_t, -np.inf), ev_S)

        finished = idx[done]
        Y[finished], S[finished] = ev_Y[done], ev_S[done]
        tag[finished], face[finished] = ev_tag[done], ev_face[done]
        steps[finished] = step
        alive[finished] = False
        moving = idx[~done]
        X[moving], t[moving] = x1[~done], s1[~done]

    if alive.any():
        raise WalkBudgetExceeded(
            f"{int(alive.sum())} walks still inside after {budget} steps (dt={dt}); raise max_steps or dt"
        )
    return Y, S, tag, face, steps


def _as_poles(domain: SpaceTimeDomain, poles, N: Optional[int]) -> Tuple[np.ndarray, np.ndarray]:
    if isinstance(poles, SpaceTimePoint):
        if N is None or N < 1:
            raise ParameterError("A single pole needs a sample count N >= 1")
        if poles.n != domain.n:
            raise GeometryError(f"Pole dimension n={poles.n} differs from domain n={domain.n}")
        X0 = np.tile(poles.space(), (N, 1))
        t0 = np.full(N, poles.t)
    else:
        X0, t0 = poles
        X0 = np.asarray(X0, dtype=float).reshape(-1, domain.n)
        t0 = np.asarray(t0, dtype=float).reshape(-1)
    if not np.all(domain.contains_many(X0, t0)):
        raise ParameterError("Every pole must lie in the open domain")
    return X0, t0


def simulate_exits(
    domain: SpaceTimeDomain,
    poles,
    N: Optional[int] = None,
    cfg: Optional[WalkConfig] = None,
    stream: int = 0,
    stop_time: Optional[float] = None,
) -> ExitBatch:
    """Run one walk per pole (a point replicated N times, or arrays (X, t))."""
    cfg = cfg or WalkConfig()
    X0, t0 = _as_poles(domain, poles, N)
    total = X0.shape[0]
    dt = cfg.resolve_dt(domain)
    starts = list(range(0, total, cfg.batch_size))

    def run(b: int):
        lo = starts[b]
        hi = min(total, lo + cfg.batch_size)
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(stream, b)))
        return _walk_batch(domain, X0[lo:hi], t0[lo:hi], cfg, dt, rng, stop_time)

    if not starts:
        raise ParameterError("simulate_exits needs at least one pole")
    if cfg.threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as executor:
            parts = list(executor.map(run, range(len(starts))))
    else:
        parts = [run(b) for b in range(len(starts))]
    Y, S, tag, face, steps = (np.concatenate(column) for column in zip(*parts))
    if not np.all(S < t0):
        raise LabError("Zero-future violated: an exit time is not strictly before its pole time")
    logger.debug("simulated %d walks in %d batches (dt=%g, stream=%d)", total, len(starts), dt, stream)
    return ExitBatch(domain, X0, t0, Y.reshape(-1, domain.n), S, tag, face, steps)


def simulate_exit(domain: SpaceTimeDomain, pole: SpaceTimePoint, cfg: Optional[WalkConfig] = None, walk_index: int = 0) -> ExitSample:
    """A single walk; walk i draws from its own stream keyed by (seed, i)."""
    cfg = replace(cfg or WalkConfig(), batch_size=1, threads=1)
    batch = simulate_exits(domain, pole, 1, cfg, stream=2**32 + int(walk_index))
    return batch.sample(0)


# Targets
class Target:
    def __call__(self, batch: ExitBatch) -> np.ndarray:
        raise NotImplementedError

    def horizon(self, domain: SpaceTimeDomain) -> Optional[float]:
        """A time below which no exit can be in the target, if known."""
        return None

    def complement(self) -> "Target":
        return Complement(self)


class Everything(Target):
    def __call__(self, batch):
        return np.ones(batch.N, dtype=bool)


class Nothing(Target):
    def __call__(self, batch):
        return np.zeros(batch.N, dtype=bool)


@dataclass(frozen=True)
class Complement(Target):
    inner: Target

    def __call__(self, batch):
        return ~self.inner(batch)


@dataclass(frozen=True)
class Bottom(Target):
    def __call__(self, batch):
        return batch.tag == BOTTOM


@dataclass(frozen=True)
class Lateral(Target):
    face: Optional[int] = None

    def __call__(self, batch):
        hit = batch.tag == LATERAL
        return hit if self.face is None else hit & (batch.face == self.face)


@dataclass(frozen=True)
class ObstacleTarget(Target):
    rects: Tuple[ParabolicRectangle, ...]

    def _indices(self, domain: SpaceTimeDomain) -> List[int]:
        return [i for i, r in enumerate(domain.obstacles) if r in self.rects]

    def __call__(self, batch):
        return np.isin(batch.tag, self._indices(batch.domain))

    def horizon(self, domain):
        present = [domain.obstacles[i].t0 for i in self._indices(domain)]
        return min(present) if present else None


@dataclass(frozen=True)
class CylinderTarget(Target):
    """Open cylinder U_{r,s}(X0, t0) = {|Y - X0| < r, |s - t0| < s}; s = r^2 gives the parabolic ball."""

    center: SpaceTimePoint
    r: float
    s: float

    def __call__(self, batch):
        near = np.linalg.norm(batch.Y - self.center.space(), axis=1) < self.r
        return near & (np.abs(batch.s - self.center.t) < self.s)

    def horizon(self, domain):
        return self.center.t - self.s


def parabolic_ball_target(center: SpaceTimePoint, r: float) -> CylinderTarget:
    return CylinderTarget(center, r, r * r)


@dataclass(frozen=True)
class RegionTarget(Target):
    """Exit points in a closed rectangle (to within tol)."""

    rect: ParabolicRectangle
    tol: float = 1e-9

    def __call__(self, batch):
        lo, hi = np.array(self.rect.lower) - self.tol, np.array(self.rect.upper) + self.tol
        inside = np.all((batch.Y >= lo) & (batch.Y <= hi), axis=1)
        return inside & (batch.s >= self.rect.t0 - self.tol) & (batch.s <= self.rect.t1 + self.tol)

    def horizon(self, domain):
        return self.rect.t0 - self.tol


# Spatial sets for harmonic measure and cross-sections A x R
@dataclass(frozen=True)
class HalfSpaceSet:
    axis: int
    value: float
    side: str = "above"
    tol: float = 1e-6

    def contains(self, Y: np.ndarray) -> np.ndarray:
        if self.side == "above":
            return Y[:, self.axis] >= self.value - self.tol
        return Y[:, self.axis] <= self.value + self.tol


@dataclass(frozen=True)
class ArcSet:
    """Points of the plane whose polar angle about center lies in [theta_lo, theta_hi)."""

    center: Tuple[float, float]
    theta_lo: float
    theta_hi: float

    def contains(self, Y: np.ndarray) -> np.ndarray:
        theta = np.mod(np.arctan2(Y[:, 1] - self.center[1], Y[:, 0] - self.center[0]), 2 * math.pi)
        lo = self.theta_lo % (2 * math.pi)
        width = self.theta_hi - self.theta_lo
        return np.mod(theta - lo, 2 * math.pi) < width


@dataclass(frozen=True)
class CrossSection(Target):
    """A x R for a spatial set A: lateral exits whose spatial point lies in A."""

    spatial: Union[HalfSpaceSet, ArcSet]

    def __call__(self, batch):
        return (batch.tag == LATERAL) & self.spatial.contains(batch.Y)


# Estimates
@dataclass(frozen=True)
class MCEstimate:
    mean: float
    stderr: float
    N: int
    seed: int

    @classmethod
    def from_counts(cls, hits: int, N: int, seed: int) -> "MCEstimate":
        if N < 1:
            raise ParameterError("An estimate needs N >= 1")
        mean = hits / N
        return cls(mean, math.sqrt(mean * (1.0 - mean) / N), N, seed)


def estimate_caloric(domain: SpaceTimeDomain, pole: SpaceTimePoint, target: Target, N: int, cfg: Optional[WalkConfig] = None) -> MCEstimate:
    cfg = cfg or WalkConfig()
    batch = simulate_exits(domain, pole, N, cfg, stop_time=target.horizon(domain))
    hits = int(np.count_nonzero(target(batch)))
    return MCEstimate.from_counts(hits, N, cfg.seed)


def interval_survival_series(half_width: float = 1.0, duration: float = 1.0, variance_rate: float = 1.0, terms: int = 50) -> float:
    """P(Brownian motion with the given variance rate stays in (-a, a) up to time T), started at 0."""
    total = 0.0
    for k in range(terms):
        total += (4.0 / math.pi) * (-1) ** k / (2 * k + 1) * math.exp(
            -((2 * k + 1) ** 2) * math.pi**2 * variance_rate * duration / (8.0 * half_width**2)
        )
    return total


def _three_sigma(estimate: float, reference: float, sigma: float) -> bool:
    return abs(estimate - reference) <= 3.0 * sigma if sigma > 0 else estimate == reference


def check_interval_survival(N: int, cfg: Optional[WalkConfig] = None, half_width: float = 1.0, duration: float = 1.0) -> AuditRecord:
    cfg = cfg or WalkConfig()
    domain = SpaceTimeDomain(BoxContainer((-half_width,), (half_width,), 0.0, duration))
    est = estimate_caloric(domain, SpaceTimePoint((0.0,), duration), Bottom(), N, cfg)
    oracle = interval_survival_series(half_width, duration, cfg.variance_rate)
    return AuditRecord(
        name="interval-survival",
        estimate=est.mean,
        stderr=est.stderr,
        bound=oracle,
        passed=_three_sigma(est.mean, oracle, est.stderr),
        details={"N": N, "seed": cfg.seed, "dt": cfg.resolve_dt(domain), "variance_rate": cfg.variance_rate},
    )


def check_cylinder_estimate(
    domain: SpaceTimeDomain, pole: SpaceTimePoint, center: SpaceTimePoint, r: float, s: float, N: int, cfg: Optional[WalkConfig] = None
) -> AuditRecord:
    """Caloric measure of U_{r,s}(X0, t0) against the universal cylinder bound."""
    cfg = cfg or WalkConfig()
    if not domain.on_essential_boundary(center, tol=max(cfg.bisection_tol, 1e-9)):
        raise ParameterError(f"Cylinder center {center} is not on the essential boundary")
    est = estimate_caloric(domain, pole, CylinderTarget(center, r, s), N, cfg)
    bound = cylinder_bound(np.subtract(pole.X, center.X), pole.t - center.t, r, s)
    return AuditRecord(
        name="cylinder-estimate",
        estimate=est.mean,
        stderr=est.stderr,
        bound=bound,
        passed=est.mean <= bound + 3.0 * est.stderr,
        details={"r": r, "s": s, "N": N, "seed": cfg.seed, "pole": [*pole.X, pole.t], "center": [*center.X, center.t]},
    )


def check_ball_estimate(
    domain: SpaceTimeDomain, pole: SpaceTimePoint, center: SpaceTimePoint, r: float, N: int, cfg: Optional[WalkConfig] = None
) -> AuditRecord:
    """Caloric measure of the parabolic ball U((X0, t0), r) against K_n r^n / dist^n."""
    cfg = cfg or WalkConfig()
    if not domain.on_essential_boundary(center, tol=max(cfg.bisection_tol, 1e-9)):
        raise ParameterError(f"Ball center {center} is not on the essential boundary")
    dist = domain.essential_distance(pole)
    if r > dist * (1 + 1e-12):
        raise ParameterError(f"Ball radius r={r} exceeds the essential-boundary distance {dist}")
    est = estimate_caloric(domain, pole, parabolic_ball_target(center, r), N, cfg)
    bound = ball_constant(domain.n) * (r / dist) ** domain.n
    return AuditRecord(
        name="ball-estimate",
        estimate=est.mean,
        stderr=est.stderr,
        bound=bound,
        passed=est.mean <= bound + 3.0 * est.stderr,
        details={"r": r, "dist": dist, "K_n": ball_constant(domain.n), "N": N, "seed": cfg.seed},
    )


def strong_markov_residual(
    inner: SpaceTimeDomain, outer: SpaceTimeDomain, pole: SpaceTimePoint, target: Target, N: int, cfg: Optional[WalkConfig] = None
) -> AuditRecord:
    """
    Direct estimate in the outer domain against the two-stage estimate: exits of
    the inner domain already on the outer boundary, plus fresh outer walks
    started from inner exits that are still inside the outer domain.
    """
    cfg = cfg or WalkConfig()
    if not inner.is_subdomain_of(outer):
        raise ParameterError("strong_markov_residual needs the inner domain nested in the outer one")
    direct_batch = simulate_exits(outer, pole, N, cfg, stream=0)
    direct = MCEstimate.from_counts(int(np.count_nonzero(target(direct_batch))), N, cfg.seed)

    stage1 = simulate_exits(inner, pole, N, cfg, stream=0)
    interior = outer.contains_many(stage1.Y, stage1.s)
    term1 = int(np.count_nonzero(target(stage1) & ~interior))
    term2 = 0
    if interior.any():
        stage2 = simulate_exits(outer, (stage1.Y[interior], stage1.s[interior]), cfg=cfg, stream=1)
        term2 = int(np.count_nonzero(target(stage2)))
    two_stage = MCEstimate.from_counts(term1 + term2, N, cfg.seed)
    residual = direct.mean - two_stage.mean
    sigma = math.hypot(direct.stderr, two_stage.stderr)
    return AuditRecord(
        name="strong-markov",
        estimate=residual,
        stderr=sigma,
        bound=0.0,
        passed=_three_sigma(residual, 0.0, sigma),
        details={
            "direct": direct.mean,
            "term1": term1 / N,
            "term2": term2 / N,
            "continued": int(np.count_nonzero(interior)),
            "N": N,
            "seed": cfg.seed,
        },
    )


def _face_grid(rect: ParabolicRectangle, per_axis: int) -> List[SpaceTimePoint]:
    """Grid points on the lateral faces and the top face of a closed rectangle."""
    fractions = [(i + 0.5) / per_axis for i in range(per_axis)]
    n = rect.n
    points = []
    spatial = [[a + f * s for f in fractions] for a, s in zip(rect.lower, rect.sides)]
    times = [rect.t0 + f * (rect.t1 - rect.t0) for f in fractions]
    for X in np.array(np.meshgrid(*spatial, indexing="ij")).reshape(n, -1).T:
        points.append(SpaceTimePoint(tuple(X), rect.t1))
    for axis in range(n):
        for value in (rect.lower[axis], rect.upper[axis]):
            others = [spatial[j] if j != axis else [value] for j in range(n)]
            for X in np.array(np.meshgrid(*others, indexing="ij")).reshape(n, -1).T:
                for t in times:
                    points.append(SpaceTimePoint(tuple(X), t))
    return points


def nested_rectangle_bound(
    domain: SpaceTimeDomain,
    rects: Sequence[ParabolicRectangle],
    pole: SpaceTimePoint,
    N: int,
    cfg: Optional[WalkConfig] = None,
    grid_per_axis: int = 3,
    N_grid: Optional[int] = None,
) -> AuditRecord:
    """
    omega(H_k) against omega_{Omega minus H_1}(G_1') times, for each i < k, the
    largest estimate of omega_{Omega minus H_(i+1)}(G_(i+1)') over a pole grid on G_i'.
    G_i' is the part of the boundary of H_i inside Omega; the last factor uses all of H_k.
    """
    cfg = cfg or WalkConfig()
    rects = list(rects)
    if not rects:
        raise ParameterError("nested_rectangle_bound needs at least one rectangle")
    for outer_rect, inner_rect in zip(rects, rects[1:]):
        if not outer_rect.interior_contains(inner_rect):
            raise ParameterError("Rectangles must be strictly nested: H_(i+1) inside the interior of H_i")
    if rects[0].contains_point(pole) or not domain.contains(pole):
        raise ParameterError("The pole must lie in the domain and outside H_1")
    N_grid = N_grid or N
    k = len(rects)

    def target_for(i: int) -> Target:
        return RegionTarget(rects[i]) if i == k - 1 else ObstacleTarget((rects[i],))

    lhs = estimate_caloric(domain, pole, RegionTarget(rects[-1]), N, cfg)
    first = estimate_caloric(domain.with_obstacles([rects[0]]), pole, target_for(0), N, cfg)
    factors = [first]
    grid_sizes = []
    for i in range(k - 1):
        removed = domain.with_obstacles([rects[i + 1]])
        poles = [p for p in _face_grid(rects[i], grid_per_axis) if removed.contains(p)]
        grid_sizes.append(len(poles))
        if not poles:
            raise ParameterError(f"No grid pole on the boundary of H_{i + 1} lies in the domain")
        estimates = [estimate_caloric(removed, p, target_for(i + 1), N_grid, cfg) for p in poles]
        factors.append(max(estimates, key=lambda e: e.mean))
    means = [f.mean for f in factors]
    bound = math.prod(means)
    sigma_bound = math.sqrt(sum((f.stderr * math.prod(means[:j] + means[j + 1:])) ** 2 for j, f in enumerate(factors)))
    sigma = math.hypot(lhs.stderr, sigma_bound)
    logger.info("nested rectangles k=%d: lhs %.4g, bound %.4g", k, lhs.mean, bound)
    return AuditRecord(
        name="nested-rectangles",
        estimate=lhs.mean,
        stderr=sigma,
        bound=bound,
        passed=lhs.mean <= bound + 3.0 * sigma,
        details={"k": k, "factors": means, "grid_per_axis": grid_per_axis, "grid_sizes": grid_sizes, "N": N, "N_grid": N_grid, "seed": cfg.seed},
    )


def walk_on_spheres(
    D: Container, X: Sequence[float], target, N: int, seed: int, eps: float = 1e-6, max_steps: int = 100_000
) -> MCEstimate:
    """Harmonic measure of a boundary set of a ball or box D from X by walk on spheres."""
    X = np.asarray(X, dtype=float).reshape(1, -1)
    if not D.spatial_inside(X)[0]:
        raise ParameterError(f"walk_on_spheres needs X inside D, got {X[0]}")
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(3,)))
    n = X.shape[1]
    P = np.tile(X, (N, 1))
    for _ in range(max_steps):
        r = D.spatial_distance(P)
        active = r > eps
        if not active.any():
            break
        direction = rng.standard_normal((N, n))
        direction /= np.linalg.norm(direction, axis=1)[:, None]
        P = np.where(active[:, None], P + r[:, None] * direction, P)
    else:
        raise WalkBudgetExceeded(f"walk_on_spheres did not absorb within {max_steps} jumps")
    hits = int(np.count_nonzero(target.contains(D.nearest_boundary(P))))
    return MCEstimate.from_counts(hits, N, seed)


def check_cylinder_projection(
    D: Container, X: Sequence[float], A, N: int, cfg: Optional[WalkConfig] = None, t: float = 0.0, exact: Optional[float] = None
) -> AuditRecord:
    """Caloric measure of A x R on D x R against the harmonic measure of A on D."""
    cfg = cfg or WalkConfig()
    cylinder = replace(D, t_lo=-math.inf, t_hi=math.inf)
    domain = SpaceTimeDomain(cylinder)
    caloric = estimate_caloric(domain, SpaceTimePoint(tuple(X), t), CrossSection(A), N, cfg)
    harmonic = walk_on_spheres(D, X, A, N, cfg.seed)
    sigma = math.hypot(caloric.stderr, harmonic.stderr)
    return AuditRecord(
        name="cylinder-projection",
        estimate=caloric.mean,
        stderr=sigma,
        bound=harmonic.mean,
        passed=_three_sigma(caloric.mean, harmonic.mean, sigma),
        details={"harmonic": harmonic.mean, "exact": exact, "N": N, "seed": cfg.seed},
    )


# Config conversion
def point_from_spec(spec: PointSpec) -> SpaceTimePoint:
    return SpaceTimePoint(tuple(spec.X), spec.t)


def rectangle_from_spec(spec: RectangleSpec) -> ParabolicRectangle:
    return ParabolicRectangle(tuple(spec.lower), tuple(spec.sides), spec.t0, spec.time_side)


def container_from_spec(spec: ContainerSpec) -> Container:
    t_lo = -math.inf if spec.t_lo is None else spec.t_lo
    t_hi = math.inf if spec.t_hi is None else spec.t_hi
    if spec.kind == "cube":
        return BoxContainer.from_cube(ParabolicCube.from_literal(spec.cube))
    if spec.kind == "box":
        return BoxContainer(tuple(spec.lower), tuple(spec.upper), t_lo, t_hi)
    return BallContainer(tuple(spec.center), spec.radius, t_lo, t_hi)


def domain_from_spec(spec: DomainSpec) -> SpaceTimeDomain:
    return SpaceTimeDomain(container_from_spec(spec.container), tuple(rectangle_from_spec(r) for r in spec.obstacles))


def spatial_set_from_spec(spec: TargetSpec):
    if spec.arc is not None:
        return ArcSet((0.0, 0.0), spec.arc[0], spec.arc[1])
    if spec.axis is None or spec.value is None:
        raise ParameterError("cross-section targets need either an arc or an axis and value")
    return HalfSpaceSet(spec.axis, spec.value, spec.side or "above")


def target_from_spec(spec: TargetSpec, domain: SpaceTimeDomain) -> Target:
    if spec.kind == "everything":
        return Everything()
    if spec.kind == "nothing":
        return Nothing()
    if spec.kind == "bottom":
        return Bottom()
    if spec.kind == "lateral":
        return Lateral()
    if spec.kind == "obstacles":
        indices = spec.obstacles if spec.obstacles is not None else range(len(domain.obstacles))
        try:
            return ObstacleTarget(tuple(domain.obstacles[i] for i in indices))
        except IndexError:
            raise ParameterError(f"Obstacle target indices {list(indices)} out of range")
    if spec.kind in ("cylinder", "ball"):
        if spec.center is None or spec.r is None:
            raise ParameterError(f"{spec.kind} targets need center and r")
        center = point_from_spec(spec.center)
        return parabolic_ball_target(center, spec.r) if spec.kind == "ball" else CylinderTarget(center, spec.r, spec.s or spec.r**2)
    if spec.kind == "region":
        if spec.region is None:
            raise ParameterError("region targets need a rectangle")
        return RegionTarget(rectangle_from_spec(spec.region))
    if spec.kind == "cross-section":
        return CrossSection(spatial_set_from_spec(spec))
    if spec.of is None:
        raise ParameterError("complement targets need 'of'")
    return Complement(target_from_spec(spec.of, domain))
