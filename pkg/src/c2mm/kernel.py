"""Correlation kernel of the squared singular values and its statistics.

``K_n(x1, x2) = sum_k phi_k(x1) P_k(x2) / kappa_k`` with
``phi_k(x) = exp(-n V(x)) sum_l Q_kl h_l(x)``.  The polynomial
coefficients are huge and of mixed sign, so every contraction with them
happens in mpmath; only normalized vectors are rounded to binary64.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Optional, Sequence

import mpmath as mp
import numpy as np
from scipy import interpolate, optimize, special

from .biortho import BiorthSystem, build_system
from .errors import ToleranceError, ValidationError
from .model import ModelSpec
from .specfun import graded_panels, panel_rule

__all__ = [
    "KernelEvaluator",
    "GapRequest",
    "build_kernel",
    "kernel_eval",
    "mean_density",
    "gap_probability",
    "scaling_limit_compare",
    "sine_kernel",
    "airy_kernel",
    "bessel_kernel",
    "density_rule",
]


class KernelEvaluator:
    """Evaluates ``K_n`` for the ``n`` of the system's spec.

    The kernel is stored as ``K_n(x, y) = F(x) . G(y)`` with

        F_k(x) = phi_k(x) / sqrt|kappa_k|,  G_k(y) = sign(kappa_k) P_k(y) / sqrt|kappa_k|.

    Both vectors are formed in mpmath and rounded once; their entries are
    of moderate size, so the final binary64 dot product is accurate.

    Parameters
    ----------
    sys : BiorthSystem
        Must contain at least ``n`` degrees.
    """

    def __init__(self, sys: BiorthSystem):
        n = sys.spec.n
        if sys.degree < n:
            raise ValidationError(f"system degree {sys.degree} < n = {n}")
        self.sys = sys
        self.spec = sys.spec
        self.n_used = n
        self.dps = sys.dps
        self._series = sys.bimoments.series
        with mp.workdps(self.dps):
            kap = sys.kappa[:n]
            self._scale = [1 / mp.sqrt(abs(k)) for k in kap]
            self._sign = [1 if k > 0 else -1 for k in kap]
            # phi_k(x) = exp(-nV) sum_l h_l(x) Q[k, l]
            self._Q = [[sys.Q[k, l] * self._scale[k] for l in range(n)] for k in range(n)]
            self._P = [[sys.P[k, i] * self._scale[k] * self._sign[k] for i in range(n)][::-1]
                       for k in range(n)]
            self._V = [mp.mpf(c) for c in self.spec.V[::-1]]
        self._F: Dict[float, np.ndarray] = {}
        self._G: Dict[float, np.ndarray] = {}

    # internal -----------------------------------------------------------
    def phi_vec(self, x: float) -> np.ndarray:
        """``F(x)`` (cached per ``x``)."""
        key = float(x)
        f = self._F.get(key)
        if f is None:
            n = self.n_used
            with mp.workdps(self.dps):
                xm = mp.mpf(key)
                h = self._series.h_values(xm, n)
                ev = mp.exp(-n * mp.polyval(self._V, xm))
                f = np.array([float(ev * mp.fdot(h, self._Q[k])) for k in range(n)])
            self._F[key] = f
        return f

    def poly_vec(self, y: float) -> np.ndarray:
        """``G(y)`` (cached per ``y``)."""
        key = float(y)
        g = self._G.get(key)
        if g is None:
            with mp.workdps(self.dps):
                ym = mp.mpf(key)
                g = np.array([float(mp.polyval(c, ym)) for c in self._P])
            self._G[key] = g
        return g

    def eval(self, x1: float, x2: float) -> float:
        if not (x1 > 0 and x2 > 0):
            raise ValidationError("kernel arguments must be positive")
        return float(math.fsum(self.phi_vec(x1) * self.poly_vec(x2)))

    def matrix(self, xs: Sequence[float], ys: Optional[Sequence[float]] = None) -> np.ndarray:
        """``K[i, j] = K_n(xs[i], ys[j])``."""
        ys = xs if ys is None else ys
        F = np.array([self.phi_vec(x) for x in xs])
        G = np.array([self.poly_vec(y) for y in ys])
        return F @ G.T

    def diagonal(self, xs: Sequence[float]) -> np.ndarray:
        return np.array([self.eval(x, x) for x in xs])

    def support_bound(self, rel: float = 1e-17) -> float:
        """Point beyond which ``K_n(x, x)`` is below ``rel`` of its maximum."""
        xs = np.geomspace(1e-3, 1e3, 121)
        vals = np.abs(self.diagonal(xs))
        peak = np.max(vals)
        i = int(np.argmax(vals))
        for j in range(i, len(xs)):
            if vals[j] < rel * peak:
                return float(xs[j])
        raise ToleranceError("kernel diagonal does not decay on the probe range")


def build_kernel(spec: ModelSpec, precision: str = "extended", dps: Optional[int] = None) -> KernelEvaluator:
    """Biorthogonal system of degree ``n`` followed by the evaluator."""
    return KernelEvaluator(build_system(spec, spec.n, precision, dps, max_degree=max(48, spec.n)))


def kernel_eval(ke: KernelEvaluator, x1: float, x2: float) -> float:
    """``K_n(x1, x2)`` for positive arguments."""
    return ke.eval(x1, x2)


def density_rule(ke: KernelEvaluator, panels: int = 24, order: int = 20,
                 grade_levels: int = 18):
    """Quadrature rule on ``(0, X]`` adapted to ``K_n(x, x)``.

    Panels are graded geometrically towards 0 for the ``x**nu`` factor.
    """
    X = ke.support_bound()
    return panel_rule(graded_panels(0.0, X, panels, grade_levels), order)


def mean_density(ke: KernelEvaluator, grid: Sequence[float]):
    """``(x, rho_n(x))`` with ``rho_n = K_n(x, x) / n``."""
    xs = np.asarray(grid, dtype=float)
    if np.any(xs <= 0):
        raise ValidationError("density grid must lie in (0, inf)")
    return xs, ke.diagonal(xs) / ke.n_used


def trace(ke: KernelEvaluator, **rule_kw) -> float:
    """``int_0^inf K_n(x, x) dx`` by quadrature."""
    x, w = density_rule(ke, **rule_kw)
    return float(np.dot(w, ke.diagonal(x)))


def reproducing_defect(ke: KernelEvaluator, x: float, z: float, **rule_kw) -> float:
    """Relative defect of ``int K(x,y) K(y,z) dy = K(x,z)``."""
    y, w = density_rule(ke, **rule_kw)
    left = ke.matrix([x], y)[0]
    right = ke.matrix(y, [z])[:, 0]
    lhs = float(np.dot(w, left * right))
    rhs = ke.eval(x, z)
    return abs(lhs - rhs) / abs(rhs)


@dataclass(frozen=True)
class GapRequest:
    """Interval ``[a, b]`` and Nystrom order ``m``."""

    a: float
    b: float
    m: int = 32

    def __post_init__(self):
        if not (0 <= self.a < self.b):
            raise ValidationError("gap interval needs 0 <= a < b")
        if self.m < 16:
            raise ValidationError("Nystrom order must be >= 16")


def _gap_nodes(a: float, b: float, m: int, nu: float):
    if a == 0 and nu != int(nu):
        # panels graded towards the x**nu endpoint; the unresolved first
        # panel contributes about ratio**(levels*(nu+1))
        ratio = 0.25
        levels = min(48, int(math.ceil(math.log(1e-13) / ((1 + nu) * math.log(ratio)))))
        per = max(12, m // 4)
        edges = graded_panels(0.0, b, max(2, m // 16), levels, ratio=ratio)
        return panel_rule(edges, per)
    x, w = np.polynomial.legendre.leggauss(m)
    return 0.5 * (a + b) + 0.5 * (b - a) * x, 0.5 * (b - a) * w


def gap_probability(ke: KernelEvaluator, req: GapRequest) -> float:
    """``det(I - K_n restricted to [a, b])`` by Gauss-Legendre Nystrom."""
    a = max(req.a, 0.0)
    x, w = _gap_nodes(a, req.b, req.m, ke.spec.nu)
    try:
        K = ke.matrix(x)
    except Exception as exc:  # pragma: no cover - propagated as a clear failure
        raise ToleranceError(f"kernel evaluation failed on Nystrom nodes: {exc}") from exc
    sw = np.sqrt(w)
    A = np.eye(len(x)) - sw[:, None] * K * sw[None, :]
    sign, logdet = np.linalg.slogdet(A)
    return float(sign * math.exp(logdet))


# ---------------------------------------------------------------------------
# limiting kernels
# ---------------------------------------------------------------------------

def sine_kernel(u, v):
    d = np.asarray(u, dtype=float) - np.asarray(v, dtype=float)
    return np.sinc(d)


def airy_kernel(u, v):
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    au, apu, _, _ = special.airy(u)
    av, apv, _, _ = special.airy(v)
    with np.errstate(invalid="ignore", divide="ignore"):
        off = (au * apv - apu * av) / (u - v)
    diag = apu ** 2 - u * au ** 2
    return np.where(np.abs(u - v) < 1e-10, diag, off)


def bessel_kernel(u, v, nu: float):
    """Hard-edge kernel ``(J(√u)√v J'(√v) - √u J'(√u) J(√v)) / (2(u-v))``."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    su, sv = np.sqrt(u), np.sqrt(v)
    ju, jv = special.jv(nu, su), special.jv(nu, sv)
    jpu, jpv = special.jvp(nu, su), special.jvp(nu, sv)
    with np.errstate(invalid="ignore", divide="ignore"):
        off = (ju * sv * jpv - su * jpu * jv) / (2 * (u - v))
    # diagonal limit: (J_nu(s)^2 - J_{nu+1}(s) J_{nu-1}(s)) / 4
    diag = 0.25 * (ju ** 2 - special.jv(nu + 1, su) * special.jv(nu - 1, su))
    return np.where(np.abs(u - v) < 1e-10, diag, off)


def _gauge_free(Kuv: np.ndarray) -> np.ndarray:
    """Signed ``sqrt(K(u,v) K(v,u))``; invariant under diagonal conjugation."""
    prod = Kuv * Kuv.T
    return np.sign(Kuv) * np.sqrt(np.abs(prod))


def scaling_limit_compare(ke: KernelEvaluator, regime: str, location: Optional[float] = None,
                          window=(-2.0, 1.0), points: int = 9,
                          c: Optional[float] = None) -> dict:
    """Compare the rescaled finite-``n`` kernel with its universal limit.

    Parameters
    ----------
    regime : {"bulk", "soft_edge", "hard_edge"}
    location : float
        Interior point (bulk) or edge location (soft edge).  For the soft
        edge it is refined by the fit when omitted.
    window : (float, float)
        Range of the scaled variables.
    c : float, optional
        Edge constant; fitted from the diagonal when omitted.

    Returns
    -------
    dict
        ``sup_deviation`` of the gauge-free kernel on the window grid,
        the fitted constants and the diagonal deviation.
    """
    n = ke.n_used
    if n % 3:
        raise ValidationError("scaling comparisons need n divisible by 3")
    s = np.linspace(window[0], window[1], points)
    U, Vv = np.meshgrid(s, s, indexing="ij")
    report = {"regime": regime, "n": n}
    if regime == "bulk":
        if location is None:
            raise ValidationError("bulk comparison needs an interior location")
        rho = ke.eval(location, location) / n
        if rho <= 0:
            raise ValidationError("density vanishes at the bulk location")
        scale = 1.0 / (n * rho)
        xs = location + s * scale
        Kh = ke.matrix(xs) * scale
        L = sine_kernel(U, Vv)
        report.update(location=location, rho=rho)
    elif regime == "soft_edge":
        x0 = location if location is not None else _fit_right_edge(ke)

        def rescaled(params):
            b, cc = params
            sc = (abs(cc) * n) ** (-2.0 / 3.0)
            xs = b + s * sc
            return xs, sc

        target = airy_kernel(s, s)

        def resid_with(diag):
            def resid(params):
                xs, sc = rescaled(params)
                if np.any(xs <= 0):
                    return np.full(len(s), 1e3)
                return diag(xs) * sc - target
            return resid

        # coarse search on a tabulated diagonal, then refinement on the exact one
        X = ke.support_bound(1e-10)
        tab_x = np.linspace(0.25 * x0, X, 200)
        spline = interpolate.CubicSpline(tab_x, ke.diagonal(tab_x))
        approx = resid_with(lambda xs: spline(np.clip(xs, tab_x[0], tab_x[-1])))
        exact = resid_with(ke.diagonal)
        bs = [x0] if location is not None else np.linspace(0.8 * x0, X, 60)
        cs = [c] if c is not None else np.geomspace(0.02, 20.0, 60)
        start = min(((bb, cc) for bb in bs for cc in cs), key=lambda p: np.max(np.abs(approx(p))))
        free = [location is None, c is None]

        def pack(p):
            full = list(start)
            it = iter(p)
            for i in range(2):
                if free[i]:
                    full[i] = next(it)
            return full

        p0 = [v for v, f in zip(start, free) if f]
        if p0:
            p0 = optimize.least_squares(lambda p: approx(pack(p)), p0).x
            p0 = optimize.least_squares(lambda p: exact(pack(p)), p0).x
        b, cc = pack(p0)
        xs, sc = rescaled([b, cc])
        Kh = ke.matrix(xs) * sc
        L = airy_kernel(U, Vv)
        report.update(location=float(b), c=float(abs(cc)))
    elif regime == "hard_edge":
        # macroscopic blow-up at 0, away from the microscopic n^-2 scale
        if not ke.eval(0.05, 0.05) > ke.eval(0.3, 0.3):
            raise ValidationError("density does not blow up at 0; hard edge regime mismatch")
        s = np.linspace(max(window[0], 0.05), window[1], points)
        U, Vv = np.meshgrid(s, s, indexing="ij")

        def resid(p):
            sc = (abs(p[0]) * n) ** (-2.0)
            return ke.diagonal(s * sc) * sc - bessel_kernel(s, s, ke.spec.nu)

        if c is None:
            cc = optimize.least_squares(resid, [1.0]).x[0]
        else:
            cc = c
        sc = (abs(cc) * n) ** (-2.0)
        Kh = ke.matrix(s * sc) * sc
        L = bessel_kernel(U, Vv, ke.spec.nu)
        report.update(c=float(abs(cc)))
    else:
        raise ValidationError("regime must be bulk, soft_edge or hard_edge")
    G = _gauge_free(Kh)
    report["sup_deviation"] = float(np.max(np.abs(G - L)))
    report["diag_deviation"] = float(np.max(np.abs(np.diag(Kh) - np.diag(L))))
    return report


def _fit_right_edge(ke: KernelEvaluator) -> float:
    """Right end of the bulk: where ``rho_n`` drops to a small fraction of its peak."""
    X = ke.support_bound(1e-8)
    xs = np.linspace(X / 200, X, 200)
    rho = ke.diagonal(xs)
    peak = np.max(rho)
    above = np.nonzero(rho > 0.05 * peak)[0]
    return float(xs[above[-1]])
