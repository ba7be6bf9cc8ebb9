"""
The fundamental temperature W(X, t) = (4 pi t)^(-n/2) exp(-|X|^2 / 4t) for t > 0,
its radial profile phi(r, t) and the phase portrait constants.

Everything is evaluated in the log domain so extreme r^2/t neither overflows
nor underflows before the final exponential.
"""

import logging
import math
from typing import Dict, List, Optional, Sequence

import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy import integrate, optimize, special

from exceptions import ParameterError

logger = logging.getLogger(__name__)

LOG_4PI = math.log(4.0 * math.pi)


def _check_n(n: int) -> int:
    if int(n) != n or n < 1:
        raise ParameterError(f"Spatial dimension n must be an integer >= 1, got {n}")
    return int(n)


def log_phi(r, t, n: int):
    """log phi(r, t) for t > 0 (arrays broadcast)."""
    r = np.asarray(r, dtype=float)
    t = np.asarray(t, dtype=float)
    return -0.5 * n * (LOG_4PI + np.log(t)) - r * r / (4.0 * t)


def W(X, t, n: Optional[int] = None):
    """
    Heat kernel at spatial displacement X (shape (..., n)) and time lag t.

    Returns 0 wherever t <= 0. Scalar inputs give a float.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 0:
        X = X.reshape(1)
    n = X.shape[-1] if n is None else _check_n(n)
    t = np.asarray(t, dtype=float)
    r2 = np.sum(X * X, axis=-1)
    positive = t > 0
    safe_t = np.where(positive, t, 1.0)
    value = np.where(positive, np.exp(-0.5 * n * (LOG_4PI + np.log(safe_t)) - r2 / (4.0 * safe_t)), 0.0)
    return float(value) if value.ndim == 0 else value


def phi(r, t, n: int):
    n = _check_n(n)
    if np.any(np.asarray(t) <= 0):
        raise ParameterError("phi(r, t) needs t > 0")
    value = np.exp(log_phi(r, t, n))
    return float(value) if np.ndim(value) == 0 else value


def C_n(n: int) -> float:
    """Maximum of t -> phi(1, t): (n / 2 pi)^(n/2) e^(-n/2)."""
    n = _check_n(n)
    return (n / (2.0 * math.pi)) ** (n / 2.0) * math.exp(-n / 2.0)


def phi_argmax_t(r: float, n: int) -> float:
    n = _check_n(n)
    if r <= 0:
        raise ParameterError(f"phi_argmax_t needs r > 0, got {r}")
    return r * r / (2.0 * n)


def phi_max(r: float, n: int) -> float:
    if r <= 0:
        raise ParameterError(f"phi_max needs r > 0, got {r}")
    return C_n(n) * r ** (-n)


def numeric_phi_argmax_t(r: float, n: int) -> float:
    """
    Locate the maximum of t -> phi(r, t) numerically.

    A golden-section search on u = log t brackets the peak; the root of
    d/du log phi = -n/2 + r^2 e^(-u) / 4 is then polished with brentq.
    """
    n = _check_n(n)
    if r <= 0:
        raise ParameterError(f"numeric_phi_argmax_t needs r > 0, got {r}")
    centre = 2.0 * math.log(r)
    result = optimize.minimize_scalar(
        lambda u: -float(log_phi(r, math.exp(u), n)),
        bracket=(centre - 10.0, centre, centre + 10.0),
        method="golden",
    )
    u = float(result.x)

    def score(v: float) -> float:
        return -0.5 * n + r * r * math.exp(-v) / 4.0

    lo, hi = u - 1.0, u + 1.0
    while score(lo) <= 0:
        lo -= 1.0
    while score(hi) >= 0:
        hi += 1.0
    return math.exp(optimize.brentq(score, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps))


def numeric_C_n(n: int) -> float:
    return phi(1.0, numeric_phi_argmax_t(1.0, n), n)


def C_lambda(lam: float, n: int) -> float:
    """phi(r, lam r^2) = C(lam, n) r^(-n) with C(lam, n) = (4 pi lam)^(-n/2) e^(-1/(4 lam))."""
    n = _check_n(n)
    if lam <= 0:
        raise ParameterError(f"C_lambda needs lambda > 0, got {lam}")
    return math.exp(-0.5 * n * (LOG_4PI + math.log(lam)) - 1.0 / (4.0 * lam))


def normalization_check(n: int, t: float, order: int = 40, method: str = "hermite") -> float:
    """Integral of W(., t) over R^n by product Gauss-Hermite or radial quadrature."""
    n = _check_n(n)
    if t <= 0:
        return 0.0
    if method == "hermite":
        if order ** n > 5_000_000:
            raise ParameterError(f"Product rule with order {order} in n={n} is too large; use method='radial'")
        x, w = hermgauss(order)
        scale = 2.0 * math.sqrt(t)
        grids = np.meshgrid(*([x] * n), indexing="ij")
        nodes = np.stack([g.ravel() for g in grids], axis=-1)
        weights = np.prod(np.stack(np.meshgrid(*([w * np.exp(x * x)] * n), indexing="ij"), axis=-1).reshape(-1, n), axis=1)
        return float(np.sum(weights * W(scale * nodes, t, n)) * scale**n)
    if method == "radial":
        surface = 2.0 * math.pi ** (n / 2.0) / special.gamma(n / 2.0)
        value, err = integrate.quad(lambda r: surface * r ** (n - 1) * math.exp(float(log_phi(r, t, n))), 0.0, np.inf, epsabs=1e-13, epsrel=1e-12)
        if err > 1e-8:
            raise ParameterError(f"Radial quadrature did not converge (error estimate {err})")
        return value
    raise ParameterError(f"Unknown quadrature method {method!r}")


def ball_constant(n: int) -> float:
    """K_n = max(C_n, (4 pi)^(-n/2)) / phi(1, 1/(2n) + 2) of the universal ball estimate."""
    n = _check_n(n)
    return max(C_n(n), (4.0 * math.pi) ** (-n / 2.0)) / phi(1.0, 1.0 / (2 * n) + 2.0, n)


def cylinder_bound(dX: Sequence[float], dt: float, r: float, s: float) -> float:
    """
    Upper bound for the caloric measure of the open cylinder U_{r,s}(X0, t0).

    dX = X - X0 and dt = t - t0 for the pole (X, t).
    """
    dX = np.atleast_1d(np.asarray(dX, dtype=float))
    n = dX.shape[-1]
    if r <= 0 or s <= 0:
        raise ParameterError(f"Cylinder radius and half-height must be positive, got r={r}, s={s}")
    lag = r * r / (2 * n) + s + dt
    return W(dX, lag, n) / phi(1.0, 1.0 / (2 * n) + 2.0 * s / (r * r), n) * r**n


def kernel_portrait(
    n_values: Sequence[int] = tuple(range(1, 9)),
    r_values: Sequence[float] = (0.1, 1.0, 10.0),
    samples: int = 41,
) -> Dict[str, List[dict]]:
    """
    Phase-portrait tables: C_n (closed form and numeric), horizontal traces
    r -> phi(r, t) and vertical traces t -> phi(r, t) around the peak.
    """
    constants, horizontal, vertical = [], [], []
    for n in n_values:
        closed, numeric = C_n(n), numeric_C_n(n)
        constants.append({"n": n, "C_n": closed, "C_n_numeric": numeric, "rel_diff": abs(closed - numeric) / closed})
        for r in r_values:
            peak = phi_argmax_t(r, n)
            for t in np.geomspace(peak / 100.0, peak * 100.0, samples):
                vertical.append({"n": n, "r": r, "t": float(t), "phi": phi(r, t, n), "peak_t": peak})
        for t in (0.01, 0.1, 1.0):
            for r in np.linspace(0.0, 3.0 * math.sqrt(t), samples):
                horizontal.append({"n": n, "t": t, "r": float(r), "phi": phi(r, t, n)})
    logger.info("kernel portrait: %d dimensions, %d vertical rows", len(constants), len(vertical))
    return {"constants": constants, "horizontal": horizontal, "vertical": vertical}
