"""Phase diagram of ``V(x) = x``, ``W(y) = y^2/2 + alpha y``, the parameter
``gamma`` near the multicritical point and the triple scaling probe."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize

from .errors import ToleranceError, ValidationError
from .kernel import build_kernel
from .model import ModelSpec

__all__ = [
    "CASES",
    "PhasePoint",
    "classify",
    "curve_ab",
    "curve_c",
    "curve_intersections",
    "phase_map",
    "gamma_residual",
    "solve_gamma",
    "gamma_expansion",
    "gamma_expansion_fit",
    "ScalingPath",
    "triple_scaling_probe",
]

CURVE_TOL = 1e-9
MULTICRITICAL = (-1.0, 1.0)
CASES = ("I", "II", "III", "IV", "CurveAB", "CurveC", "Multicritical")


def curve_ab(alpha: float) -> float:
    """``tau = sqrt(alpha + 2)`` for ``alpha >= -2``."""
    return math.sqrt(alpha + 2) if alpha >= -2 else math.nan


def curve_c(alpha: float) -> float:
    """``tau = sqrt(-1/alpha)`` for ``alpha < 0``."""
    return math.sqrt(-1.0 / alpha) if alpha < 0 else math.nan


def _dist_to_curve(alpha: float, tau: float, which: str) -> float:
    """Euclidean distance from ``(alpha, tau)`` to a critical curve."""
    if which == "AB":
        # parametrize by t = tau >= 0: alpha = t^2 - 2
        f = lambda t: (t * t - 2 - alpha) ** 2 + (t - tau) ** 2
        lo, hi = 0.0, max(10.0, 2 * abs(tau) + math.sqrt(abs(alpha) + 2) + 1)
    else:
        # parametrize by t = tau > 0: alpha = -1/t^2
        f = lambda t: (-1 / (t * t) - alpha) ** 2 + (t - tau) ** 2
        lo, hi = 1e-3, max(10.0, 2 * abs(tau) + 1)
    ts = np.linspace(lo, hi, 2001)
    vals = np.array([f(t) for t in ts])
    i = int(np.argmin(vals))
    a, b = ts[max(i - 1, 0)], ts[min(i + 1, len(ts) - 1)]
    res = optimize.minimize_scalar(f, bounds=(a, b), method="bounded",
                                   options={"xatol": 1e-14})
    best = min(float(res.fun), float(vals[i]))
    # exact membership short-circuits rounding in the minimizer
    on = (which == "AB" and alpha >= -2 and abs(tau - curve_ab(alpha)) == 0) or \
         (which == "C" and alpha < 0 and abs(tau - curve_c(alpha)) == 0)
    return 0.0 if on else math.sqrt(max(best, 0.0))


@dataclass(frozen=True)
class PhasePoint:
    """Classification of ``(alpha, tau)``.

    ``physical`` is False on the parts of the critical curves drawn dashed
    in the phase diagram (``CurveAB`` for ``alpha < -1``, ``CurveC`` for
    ``alpha > -1``).
    """

    alpha: float
    tau: float
    case: str
    dist_ab: float
    dist_c: float
    dist_multicritical: float
    physical: bool = True
    gamma: Optional[float] = None

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "tau": self.tau, "case": self.case,
                "dist_ab": self.dist_ab, "dist_c": self.dist_c,
                "dist_multicritical": self.dist_multicritical,
                "physical": self.physical, "gamma": self.gamma}


def _region(alpha: float, tau: float) -> str:
    if alpha < 0 and tau > curve_c(alpha):
        return "III"
    if alpha > -1:
        return "II" if tau > curve_ab(alpha) else "I"
    if alpha > -2 and tau < curve_ab(alpha):
        return "I"
    return "IV"


def classify(alpha: float, tau: float, with_gamma: bool = True) -> PhasePoint:
    """Case of ``(alpha, tau)`` in the phase diagram.

    Points within 1e-9 of a critical curve are reported as on the curve;
    ``gamma`` is attached when the continuation from ``(-1, 1)`` succeeds.
    """
    alpha, tau = float(alpha), float(tau)
    if not tau > 0:
        raise ValidationError("tau must be positive")
    dab = _dist_to_curve(alpha, tau, "AB")
    dc = _dist_to_curve(alpha, tau, "C")
    dm = math.hypot(alpha - MULTICRITICAL[0], tau - MULTICRITICAL[1])
    physical = True
    if dm <= CURVE_TOL:
        case = "Multicritical"
    elif dab <= CURVE_TOL:
        case = "CurveAB"
        physical = alpha > -1
    elif dc <= CURVE_TOL:
        case = "CurveC"
        physical = alpha < -1
    else:
        case = _region(alpha, tau)
    g = None
    if with_gamma:
        try:
            g = solve_gamma(alpha, tau)
        except ToleranceError:
            g = None
    return PhasePoint(alpha, tau, case, dab, dc, dm, physical, g)


def curve_intersections(alpha_range: Tuple[float, float] = (-10.0, 10.0),
                        cells: int = 4000) -> dict:
    """Certificate that the two critical curves meet only at ``(-1, 1)``.

    Both curves coexist on ``[-2, 0)``.  There ``d = sqrt(-1/alpha) -
    sqrt(alpha + 2) >= 0`` touches 0 without a sign change, so its local
    minima are located by bisection on sign changes of ``d'`` and every
    minimum below 1e-9 is reported as an intersection.
    """
    lo = max(alpha_range[0], -2.0)
    hi = min(alpha_range[1], -1e-9)
    if lo >= hi:
        return {"intersections": [], "min_gap_elsewhere": math.inf, "minima": []}
    d = lambda a: curve_c(a) - curve_ab(a)
    dd = lambda a: 0.5 * (-a) ** -1.5 - 0.5 / math.sqrt(a + 2)
    grid = np.linspace(lo + 1e-12, hi, cells + 1)
    vals = np.array([d(a) for a in grid])
    minima = []
    for a0, a1 in zip(grid[:-1], grid[1:]):
        if dd(a0) < 0 <= dd(a1) or dd(a0) <= 0 < dd(a1):
            r = optimize.bisect(dd, a0, a1, xtol=1e-15, maxiter=200)
            minima.append((float(r), float(d(r))))
    hits = [(a, curve_ab(a)) for a, g in minima if abs(g) <= CURVE_TOL]
    # smallest gap away from the touching points
    mask = np.ones_like(grid, dtype=bool)
    for a, _ in hits:
        mask &= np.abs(grid - a) > 1e-2
    return {
        "intersections": hits,
        "minima": minima,
        "min_gap_elsewhere": float(np.min(vals[mask])) if mask.any() else math.inf,
        "negative_gaps": int(np.count_nonzero(vals < -1e-14)),
    }


def phase_map(alpha_range: Tuple[float, float], tau_range: Tuple[float, float],
              n_alpha: int = 81, n_tau: int = 81) -> dict:
    """Raster of case labels on a regular ``(alpha, tau)`` grid."""
    if tau_range[0] <= 0:
        raise ValidationError("tau range must be positive")
    al = np.linspace(*alpha_range, n_alpha)
    ta = np.linspace(*tau_range, n_tau)
    labels = [[classify(a, t, with_gamma=False).case for a in al] for t in ta]
    return {"alpha": al, "tau": ta, "labels": labels}


# ---------------------------------------------------------------------------
# gamma
# ---------------------------------------------------------------------------

def gamma_residual(g: float, alpha: float, tau: float) -> float:
    """``3/g - 9 g^2 + 5 tau^(4/3) g - alpha tau^(2/3)``."""
    return 3 / g - 9 * g * g + 5 * tau ** (4 / 3) * g - alpha * tau ** (2 / 3)


def _gamma_deriv(g: float, tau: float) -> float:
    return -3 / (g * g) - 18 * g + 5 * tau ** (4 / 3)


def _newton(g: float, alpha: float, tau: float, tol: float = 1e-13, maxit: int = 30) -> Optional[float]:
    for _ in range(maxit):
        d = _gamma_deriv(g, tau)
        if d == 0 or g <= 0:
            return None
        step = gamma_residual(g, alpha, tau) / d
        g -= step
        if abs(step) <= tol * max(1.0, abs(g)):
            return g
    return None


def solve_gamma(alpha: float, tau: float, min_step: float = 1e-8) -> float:
    """Branch of ``alpha tau^(2/3) = 3/g - 9 g^2 + 5 tau^(4/3) g`` through ``g = 1`` at ``(-1, 1)``.

    Continued along the segment from ``(-1, 1)``; the step is halved when
    Newton fails, the residual exceeds 1e-12 or the predicted jump is
    large (a fold of the branch ends the basin).
    """
    if not tau > 0:
        raise ValidationError("tau must be positive")
    a0, t0 = MULTICRITICAL
    g = 1.0
    s, h = 0.0, 0.05
    while s < 1.0:
        h = min(h, 1.0 - s)
        sn = s + h
        a = a0 + sn * (alpha - a0)
        t = t0 + sn * (tau - t0)
        gn = _newton(g, a, t)
        ok = (gn is not None and abs(gamma_residual(gn, a, t)) < 1e-12 * max(1.0, abs(a) + abs(t))
              and abs(gn - g) < 0.25 * max(1.0, abs(g))
              and abs(_gamma_deriv(gn, t)) > 1e-6)
        if ok:
            g, s = gn, sn
            h *= 1.5
        else:
            h /= 2
            if h < min_step:
                raise ToleranceError(f"gamma continuation failed near ({a:.6g}, {t:.6g})")
    res = abs(gamma_residual(g, alpha, tau))
    if res >= 1e-12 * max(1.0, abs(alpha) + abs(tau)):
        raise ToleranceError("gamma residual above 1e-12")
    return g


def gamma_expansion(a: float, b: float, n: float) -> float:
    """Two-term expansion ``1 + a/3 n^(-1/3) + (11 a^2/144 + 47 b/48) n^(-2/3)``."""
    e = n ** (-1 / 3)
    return 1 + a / 3 * e + (11 * a * a / 144 + 47 * b / 48) * e * e


def gamma_expansion_fit(a: float, b: float, n_values: Sequence[float] = tuple(np.geomspace(1e3, 1e6, 25)),
                        terms: int = 5) -> dict:
    """Fit ``gamma_n`` along the scaling path by a polynomial in ``n^(-1/3)``.

    Returns fitted coefficients next to ``a/3`` and ``11 a^2/144 + 47 b/48``.
    """
    e = np.array([n ** (-1 / 3) for n in n_values])
    g = np.array([solve_gamma(*ScalingPath.point(a, b, n)) for n in n_values])
    A = np.stack([e ** k for k in range(terms)], axis=1)
    coef, *_ = np.linalg.lstsq(A, g, rcond=None)
    c1, c2 = a / 3, 11 * a * a / 144 + 47 * b / 48
    return {
        "c0": float(coef[0]),
        "c1": float(coef[1]),
        "c2": float(coef[2]),
        "c1_pred": c1,
        "c2_pred": c2,
        "c1_rel_err": abs(coef[1] - c1) / abs(c1) if c1 else abs(coef[1]),
        "c2_rel_err": abs(coef[2] - c2) / abs(c2) if c2 else abs(coef[2]),
    }


# ---------------------------------------------------------------------------
# triple scaling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScalingPath:
    """``(alpha_n, tau_n) = (-1, 1) + a n^(-1/3) (2, 1) + b n^(-2/3) (-1, 2)``."""

    a: float
    b: float
    n_list: Tuple[int, ...] = (9, 18, 36)

    def __post_init__(self):
        nl = tuple(int(n) for n in self.n_list)
        object.__setattr__(self, "n_list", nl)
        if any(n <= 0 or n % 3 for n in nl):
            raise ValidationError("every n must be a positive multiple of 3")
        if any(y <= x for x, y in zip(nl, nl[1:])):
            raise ValidationError("n_list must be strictly increasing")

    @staticmethod
    def point(a: float, b: float, n: float) -> Tuple[float, float]:
        e1, e2 = n ** (-1 / 3), n ** (-2 / 3)
        return (-1 + 2 * a * e1 - b * e2, 1 + a * e1 + 2 * b * e2)

    def pairs(self) -> List[Tuple[int, float, float]]:
        return [(n, *self.point(self.a, self.b, n)) for n in self.n_list]


def triple_scaling_probe(path: ScalingPath, grid: Sequence[float] = (0.5, 1.0, 2.0),
                         nu: float = 0.0, builder=build_kernel) -> dict:
    """Cauchy test of ``(u/v)^(nu/2) n^(-4/3) K_n(u n^(-4/3), v n^(-4/3))``.

    Passes when the sup differences between consecutive ``n`` decrease.
    """
    if len(path.n_list) < 3:
        raise ValidationError("need at least three values of n")
    u = np.asarray(grid, dtype=float)
    if np.any(u <= 0):
        raise ValidationError("grid must lie in (0, inf)")
    khat: Dict[int, np.ndarray] = {}
    for n, alpha, tau in path.pairs():
        if tau <= 0:
            raise ValidationError(f"tau_n = {tau} is not positive at n = {n}")
        spec = ModelSpec.quadratic(nu, tau, n, alpha)
        ke = builder(spec)
        s = n ** (-4 / 3)
        K = ke.matrix(u * s, u * s)
        gauge = (u[:, None] / u[None, :]) ** (nu / 2)
        khat[n] = gauge * s * K
    deltas = [float(np.max(np.abs(khat[q] - khat[p]))) for p, q in zip(path.n_list, path.n_list[1:])]
    return {
        "a": path.a,
        "b": path.b,
        "nu": nu,
        "pairs": path.pairs(),
        "grid": u.tolist(),
        "khat": {str(k): v.tolist() for k, v in khat.items()},
        "deltas": deltas,
        "cauchy": all(y < x for x, y in zip(deltas, deltas[1:])),
    }
