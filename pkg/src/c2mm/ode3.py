"""Third-order ODE for quadratic ``W``: solutions, theta functions, Wronskian.

For ``W(y) = y**2/2 + alpha*y`` the functions

    p0(z) = int_0^inf f_n(zy) exp(-nW) dy                    (cut on R-)
    p1(z) = (i/pi) int_R (zy)**(nu/2) K_nu(2 tau n sqrt(zy)) exp(-nW) dy
    p2(z) = int_{-inf}^0 f_n(zy) exp(-nW) dy                 (cut on R+)

solve ``z^2 p''' + (2-2nu) z p'' + (alpha n^2 tau^2 z + nu^2 - nu) p'
- (tau^4 n^3 z + tau^2 n^2 nu alpha) p = 0``.

Two independent evaluation routes are implemented:

* term-wise integration of the Bessel power series against exact Gaussian
  moments (:class:`SolutionTriple`), valid for moderate ``|z|``, with
  ``p1 = i/(2 sin(nu pi)) (E - p0 - p2)`` and ``E`` entire;
* contour integrals ``q_j`` (:func:`eval_q`) for ``tau = n = 1`` combined
  with the rescaling to general ``(alpha, n, tau)``, used at large ``|z|``.
"""
from __future__ import annotations

import cmath
import itertools
import math
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import mpmath as mp
import numpy as np

from .errors import DomainError, ToleranceError, ValidationError
from .model import FullLineMoments, HalfLineMoments, ModelSpec
from .specfun import LogScaledValue, erfc_scaled, gauss_legendre, logsumexp_complex

__all__ = [
    "x_star",
    "y_star",
    "ThetaSystem",
    "SolutionTriple",
    "ode_residual",
    "eval_p",
    "theta",
    "asymptotic_match",
    "eval_q",
    "p_contour",
    "wronskian_det",
    "f_alpha",
    "jump_residuals",
    "connection_residual",
    "pq_residual",
    "asymptotic_prefactor",
]

OMEGA = cmath.exp(2j * math.pi / 3)
INTEGER_EPS = 1e-6


def _require_quadratic(spec: ModelSpec) -> float:
    a = spec.alpha
    if a is None:
        raise ValidationError("this operation needs W(y) = y^2/2 + alpha*y")
    return a


# ---------------------------------------------------------------------------
# theta functions
# ---------------------------------------------------------------------------

def x_star(alpha: float, tau: float) -> float:
    """Branch point ``x*``: 0 for ``alpha >= 0``, ``-(4/tau^2)(alpha/3)^3`` otherwise."""
    if alpha >= 0:
        return 0.0
    return -(4.0 / tau ** 2) * (alpha / 3.0) ** 3


def y_star(alpha: float, tau: float) -> float:
    """``y*(alpha) = -x*(-alpha)``."""
    return -x_star(-alpha, tau)


class ThetaSystem:
    """Branches of ``z xi^3 + alpha tau^2 xi - tau^4 = 0`` and their primitives.

    ``xi_j(z) ~ tau^(4/3) omega^(j-1) z^(-1/3)`` at infinity in the upper
    half plane.  The primitive of ``xi_j`` is available in closed form,

        theta_j = (3/2) tau^4 / xi_j^2 - 2 alpha tau^2 / xi_j + alpha^2 / 2,

    (``d theta_j / dz = xi_j`` follows from the cubic), where the constant
    makes the constant term of the large-``z`` expansion ``alpha^2 / 3``.
    Branches are continued from ``Re z + i 10^6`` down a vertical line.
    """

    def __init__(self, alpha: float, tau: float):
        if not tau > 0:
            raise ValidationError("tau must be positive")
        self.alpha = float(alpha)
        self.tau = float(tau)
        self.x_star = x_star(alpha, tau)
        self.y_star = y_star(alpha, tau)

    def _roots(self, z: complex) -> np.ndarray:
        return np.roots([z, 0.0, self.alpha * self.tau ** 2, -self.tau ** 4])

    def _anchor(self, z: complex) -> np.ndarray:
        r = self._roots(z)
        guess = [self.tau ** (4 / 3) * OMEGA ** j * z ** (-1 / 3) for j in range(3)]
        return _match(guess, r)

    def xi_all(self, z: complex, side: Optional[str] = None) -> np.ndarray:
        """``(xi_1, xi_2, xi_3)`` at ``z``; real ``z`` needs ``side`` in ``{'+','-'}``."""
        z = complex(z)
        if z.imag < 0 or (z.imag == 0 and side == "-"):
            return np.conj(self.xi_all(z.conjugate(), "+" if z.imag == 0 else None))
        if z.imag == 0 and side != "+":
            raise DomainError("theta functions are cut along R; pass side='+' or '-'")
        if z == 0:
            raise DomainError("z = 0 is a branch point")
        x, y1 = z.real, z.imag
        s0 = max(1e6, 1e3 * abs(z))
        cur = self._anchor(complex(x, s0))
        s = s0
        floor = y1 if y1 > 0 else 1e-13 * max(1.0, abs(x))
        step = 0.7
        while s > floor:
            s_new = max(s * step, floor)
            nxt = self._roots(complex(x, s_new))
            new = _match(cur, nxt)
            if _ambiguous(cur, new):
                if step > 0.999:
                    raise ToleranceError("branch tracking failed near a branch point")
                step = 1 - (1 - step) / 4
                continue
            cur, s = new, s_new
            step = min(0.7, 1 - (1 - step) * 0.5) if step > 0.7 else step
        if y1 == 0:
            cur = _match(cur, self._roots(complex(x, 0.0)))
        return cur

    def xi(self, z: complex, j: int, side: Optional[str] = None) -> complex:
        return complex(self.xi_all(z, side)[j - 1])

    def theta_all(self, z: complex, side: Optional[str] = None) -> np.ndarray:
        xi = self.xi_all(z, side)
        t2 = self.tau ** 2
        return 1.5 * t2 * t2 / xi ** 2 - 2 * self.alpha * t2 / xi + self.alpha ** 2 / 2

    def theta(self, z: complex, j: int, side: Optional[str] = None) -> complex:
        if j not in (1, 2, 3):
            raise ValidationError("j must be 1, 2 or 3")
        return complex(self.theta_all(z, side)[j - 1])

    def expansion(self, z: complex, j: int, D: float = 0.0) -> complex:
        """Truncated large-``z`` expansion of ``theta_j`` (upper half plane)."""
        a, t = self.alpha, self.tau
        w1, w4 = OMEGA ** (j - 1), OMEGA ** ((4 - j) % 3)
        return (1.5 * w1 * t ** (4 / 3) * z ** (2 / 3) - a * w4 * t ** (2 / 3) * z ** (1 / 3)
                + a ** 2 / 3 - a ** 3 / 27 * w1 * t ** (-2 / 3) * z ** (-1 / 3)
                + D * w4 * t ** (-4 / 3) * z ** (-2 / 3))

    def fit_expansion(self, j: int, angle: float = math.pi / 4,
                      radii: Sequence[float] = tuple(np.geomspace(1e3, 1e6, 16))) -> dict:
        """Least-squares coefficients of ``theta_j`` in powers ``z^(k/3)``.

        Returns the coefficients of ``z^(2/3), z^(1/3), 1, z^(-1/3),
        z^(-2/3)`` and the implied real constant ``D``.
        """
        zs = np.array([r * cmath.exp(1j * angle) for r in radii])
        vals = np.array([self.theta(z, j) for z in zs])
        powers = [2, 1, 0, -1, -2, -3, -4, -5]
        A = np.array([[z ** (p / 3) for p in powers] for z in zs])
        # scale columns to stabilize the fit
        sc = np.max(np.abs(A), axis=0)
        coef, *_ = np.linalg.lstsq(A / sc, vals, rcond=None)
        coef = coef / sc
        w4 = OMEGA ** ((4 - j) % 3)
        return {
            "z^(2/3)": complex(coef[0]),
            "z^(1/3)": complex(coef[1]),
            "const": complex(coef[2]),
            "z^(-1/3)": complex(coef[3]),
            "z^(-2/3)": complex(coef[4]),
            "D": float((coef[4] / (w4 * self.tau ** (-4 / 3))).real),
        }


def _match(prev: Sequence[complex], roots: np.ndarray) -> np.ndarray:
    """Permutation of ``roots`` minimizing the total distance to ``prev``."""
    best, best_cost = None, math.inf
    for perm in itertools.permutations(range(3)):
        cost = sum(abs(roots[perm[i]] - prev[i]) for i in range(3))
        if cost < best_cost:
            best, best_cost = perm, cost
    return np.array([roots[best[i]] for i in range(3)])


def _ambiguous(prev: np.ndarray, new: np.ndarray) -> bool:
    sep = min(abs(prev[i] - prev[k]) for i in range(3) for k in range(i + 1, 3))
    move = max(abs(new - prev))
    return move > 0.3 * sep


def theta(ts: ThetaSystem, j: int, z: complex, side: Optional[str] = None) -> complex:
    """``theta_j(z)`` for ``z`` off the real line (or boundary values via ``side``)."""
    return ts.theta(z, j, side)


# ---------------------------------------------------------------------------
# series route for p0, p1, p2
# ---------------------------------------------------------------------------

class _SeriesData:
    """Moments and coefficients for one ``(spec, dps)`` pair."""

    def __init__(self, spec: ModelSpec, nu: float, dps: int):
        self.dps = dps
        self.nu_f = nu
        with mp.workdps(dps + 20):
            self.nu = mp.mpf(nu)
            self.c = mp.mpf(spec.tau) * spec.n
        W = spec.W
        Wneg = tuple(w * (-1) ** k for k, w in enumerate(W))
        self.B = HalfLineMoments(W, spec.n, nu, dps)
        self.Bt = HalfLineMoments(Wneg, spec.n, nu, dps)
        self.T = FullLineMoments(W, spec.n, dps)
        self._a: List = []
        self._e: List = []

    def a(self, count):
        a = self._a
        with mp.workdps(self.dps + 20):
            if not a:
                a.append(self.c ** self.nu / mp.gamma(self.nu + 1))
            c2 = self.c ** 2
            while len(a) < count:
                m = len(a)
                a.append(a[-1] * c2 / (m * (m + self.nu)))
        return a

    def e(self, count):
        e = self._e
        with mp.workdps(self.dps + 20):
            if not e:
                e.append(self.c ** (-self.nu) * mp.rgamma(1 - self.nu))
            c2 = self.c ** 2
            while len(e) < count:
                m = len(e)
                # 1/Gamma(m - nu + 1) = 1/Gamma(m - nu) / (m - nu)
                if e[-1] == 0:
                    e.append(self.c ** (2 * m - self.nu) / mp.factorial(m) * mp.rgamma(m - self.nu + 1))
                else:
                    e.append(e[-1] * c2 / (m * (m - self.nu)))
        return e


def _falling(x, k):
    out = mp.mpf(1)
    for i in range(k):
        out *= (x - i)
    return out


class SolutionTriple:
    """Series evaluators for ``p0, p1, p2`` and their derivatives.

    Parameters
    ----------
    spec : ModelSpec
        Quadratic ``W`` required.
    dps : int
        Starting working precision; raised automatically when the series
        shows cancellation.
    """

    def __init__(self, spec: ModelSpec, dps: int = 40):
        self.spec = spec
        self.alpha = _require_quadratic(spec)
        self.nu = spec.nu
        self.base_dps = int(dps)
        self._data: Dict[Tuple[float, int], _SeriesData] = {}
        self.integer_nu = abs(self.nu - round(self.nu)) < INTEGER_EPS

    def _get(self, nu: float, dps: int) -> _SeriesData:
        dps = int(20 * math.ceil(dps / 20))
        key = (nu, dps)
        if key not in self._data:
            self._data[key] = _SeriesData(self.spec, nu, dps)
        return self._data[key]

    # raw series -----------------------------------------------------------
    def _sum(self, nu: float, kind: str, z, k: int, side: Optional[str], dps: int):
        """Returns (value, log10 of sum of |terms|) for one series."""
        d = self._get(nu, dps)
        with mp.workdps(d.dps):
            z = mp.mpc(z)
            nuv = d.nu
            if kind == "E":
                mom, coef, base = d.T, d.e, None
            elif kind == "p0":
                mom, coef = d.B, d.a
                base = z
            else:
                mom, coef = d.Bt, d.a
                base = -z
            if base is not None:
                if base.imag == 0 and base.real < 0:
                    if side is None:
                        raise DomainError(f"{kind} is cut at z = {complex(z)}; pass side")
                    sgn = 1 if side == "+" else -1
                    if kind == "p2":
                        sgn = -sgn
                    logb = mp.log(-base.real) + sgn * mp.pi * 1j
                else:
                    logb = mp.log(base)
            eps = mp.mpf(10) ** (-(d.dps + 5))
            total = mp.mpc(0)
            absum = mp.mpf(0)
            peak = mp.mpf(0)
            prev = mp.mpf(0)
            m = 0
            while True:
                cm = coef(m + 1)[m]
                if kind == "E":
                    if m < k:
                        m += 1
                        continue
                    t = cm * mom[m] * _falling(m, k) * z ** (m - k)
                else:
                    t = cm * mom[m] * _falling(m + nuv, k) * mp.exp((m + nuv - k) * logb)
                    if kind == "p2" and k % 2:
                        t = -t
                at = abs(t)
                total += t
                absum += at
                peak = max(peak, at)
                # terms decay super-geometrically once past the peak; odd
                # full-line moments can vanish, so require two small terms
                if m > 10 + k and max(at, prev) < eps * peak:
                    break
                prev = at
                m += 1
                if m > 200000:
                    raise ToleranceError("series did not converge")
            return total, absum

    def _series(self, nu: float, kind: str, z, k: int, side: Optional[str],
                dps: Optional[int] = None, with_absum: bool = False):
        dps = dps or self.base_dps
        for _ in range(6):
            val, absum = self._sum(nu, kind, z, k, side, dps)
            if val == 0:
                return (val, absum) if with_absum else val
            lost = float(mp.log10(absum / abs(val))) if absum > 0 else 0.0
            if lost < dps - 18:
                return (val, absum) if with_absum else val
            dps = int(lost + 30)
        raise ToleranceError("series cancellation exceeds the precision budget")

    # public -------------------------------------------------------------
    def value_mp(self, j: int, z, k: int = 0, side: Optional[str] = None):
        """``p_j^{(k)}(z)`` as an mpmath complex number."""
        if j == 0:
            return self._series(self.nu, "p0", z, k, side)
        if j == 2:
            return self._series(self.nu, "p2", z, k, side)
        if j != 1:
            raise ValidationError("j must be 0, 1 or 2")
        zc = complex(z)
        if zc.imag == 0 and side is None:
            raise DomainError("p1 is cut along R; pass side")
        if self.integer_nu:
            nu0 = float(round(self.nu))
            vals = [self._p1_at(nu0 + s * INTEGER_EPS, z, k, side) for s in (1, -1)]
            return (vals[0] + vals[1]) / 2
        return self._p1_at(self.nu, z, k, side)

    def _p1_at(self, nu: float, z, k: int, side):
        zc = complex(z)
        s0 = side if (zc.imag == 0 and zc.real < 0) else None
        s2 = side if (zc.imag == 0 and zc.real > 0) else None
        dps = self.base_dps
        for _ in range(6):
            E, aE = self._series(nu, "E", z, k, side, dps, True)
            p0, a0 = self._series(nu, "p0", z, k, s0, dps, True)
            p2, a2 = self._series(nu, "p2", z, k, s2, dps, True)
            with mp.workdps(dps + 20):
                comb = E - p0 - p2
                big = max(aE, a0, a2)
                # p1 is recessive in parts of the plane: E - p0 - p2 cancels
                lost = float(mp.log10(big / abs(comb))) if comb != 0 else float(dps)
                if lost < dps - 18:
                    return 1j / (2 * mp.sin(mp.pi * nu)) * comb
            dps = int(lost + 30)
        raise ToleranceError("p1 cancellation exceeds the precision budget")

    def value(self, j: int, z, k: int = 0, side: Optional[str] = None) -> complex:
        return complex(self.value_mp(j, z, k, side))

    def handle(self, j: int, side: Optional[str] = None) -> Callable[[complex, int], complex]:
        """Callable ``(z, k) -> p_j^{(k)}(z)`` for :func:`ode_residual`."""
        return lambda z, k=0: self.value(j, z, k, side)


def eval_p(triple: SolutionTriple, j: int, z, side: Optional[str] = None) -> LogScaledValue:
    """``p_j(z)`` as a :class:`LogScaledValue` (series route)."""
    v = triple.value_mp(j, z, 0, side)
    if v == 0:
        return LogScaledValue(0.0)
    lg = mp.log(v)
    return LogScaledValue.from_log(complex(lg))


def ode_residual(spec: ModelSpec, p: Callable, z: complex) -> float:
    """Relative residual of the third-order ODE at ``z``.

    ``p(z, k)`` must return the ``k``-th derivative.  The residual is
    normalized by the largest of the four terms.
    """
    alpha = _require_quadratic(spec)
    nu, tau, n = spec.nu, spec.tau, spec.n
    z = complex(z)
    d = [complex(p(z, k)) for k in range(4)]
    terms = [
        z * z * d[3],
        (2 - 2 * nu) * z * d[2],
        (alpha * n * n * tau * tau * z + nu * nu - nu) * d[1],
        -(tau ** 4 * n ** 3 * z + tau * tau * n * n * nu * alpha) * d[0],
    ]
    scale = max(abs(t) for t in terms)
    if scale == 0:
        return 0.0
    return abs(sum(terms)) / scale


def wronskian_det(triple: SolutionTriple, z: complex, sign: Optional[int] = None) -> complex:
    """``det [p_j^{(k)}] diag(1, 1, exp(+-nu pi i))`` at ``z`` off the real line."""
    z = complex(z)
    if z.imag == 0:
        raise DomainError("Wronskian is evaluated off the real line")
    s = sign if sign is not None else (1 if z.imag > 0 else -1)
    with mp.workdps(triple.base_dps + 20):
        cols = [[triple.value_mp(j, z, k) for k in range(3)] for j in range(3)]
        W = mp.matrix(3, 3)
        for j in range(3):
            for k in range(3):
                W[k, j] = cols[j][k]
        det = mp.det(W) * mp.exp(s * 1j * mp.pi * triple.nu)
        # columns with small determinant relative to the product of norms
        norms = [mp.sqrt(sum(abs(c) ** 2 for c in col)) for col in cols]
        rel = abs(det) / (norms[0] * norms[1] * norms[2])
        if rel < mp.mpf(10) ** (-(triple.base_dps - 10)):
            raise ToleranceError("Wronskian columns nearly dependent")
        return complex(det)


# ---------------------------------------------------------------------------
# contour route: q functions for tau = n = 1
# ---------------------------------------------------------------------------

_BRANCH = {1: (-math.pi / 2, math.pi / 2), 2: (math.pi / 2, 3 * math.pi / 2),
           3: (0.0, math.pi), 4: (-math.pi, 0.0)}


def _log_branch(t: np.ndarray, j: int) -> np.ndarray:
    lo, hi = _BRANCH[j]
    ang = np.angle(t)
    ang = np.where(ang < lo, ang + 2 * np.pi, ang)
    ang = np.where(ang > hi, ang - 2 * np.pi, ang)
    return np.log(np.abs(t)) + 1j * ang


def _saddles(z: complex, alpha: float) -> np.ndarray:
    """Labeled saddles of ``1/(2t^2) - alpha/t + z t`` (tau = 1)."""
    ts = ThetaSystem(alpha, 1.0)
    if z.imag == 0:
        return ts.xi_all(z, "+")
    return ts.xi_all(z)


def _contour(j: int, z: complex, alpha: float, npan: int):
    """Nodes ``t``, weights ``dt`` for the contour ``Gamma_j``."""
    xi = _saddles(z, alpha)
    x, w = gauss_legendre(24)
    if j in (1, 2):
        target = xi[0] if j == 1 else xi[2]
        if j == 2:
            target = -target.conjugate()  # mirror into the right half plane
        if target.real > 0.2 * abs(target):
            R0 = abs(target) ** 2 / (2 * target.real)
        else:
            R0 = abs(target)
        # phi in (-pi, pi); the integrand vanishes rapidly as t -> 0
        edges = np.linspace(-np.pi, np.pi, npan + 1)
        a, b = edges[:-1, None], edges[1:, None]
        phi = (0.5 * (a + b) + 0.5 * (b - a) * x).ravel()
        wphi = (0.5 * (b - a) * w).ravel()
        t = R0 * (1 + np.exp(1j * phi))
        dt = R0 * 1j * np.exp(1j * phi) * wphi
        if j == 2:
            t = -np.conj(t)
            dt = -np.conj(dt)
        return t, dt
    # Gamma_3 (upper) and Gamma_4 (lower): infinity -> t0 -> 0
    up = j == 3
    ref = xi[1] if up else np.conj(_saddles(z.conjugate(), alpha)[1])
    rho = abs(ref)
    psi = cmath.phase(ref)
    lo, hi = (math.pi / 4 + 0.15, 3 * math.pi / 4 - 0.15) if up else (-3 * math.pi / 4 + 0.15, -math.pi / 4 - 0.15)
    psi = min(max(psi, lo), hi)
    t0 = rho * cmath.exp(1j * psi)
    # ray direction: exp(z t) must decay and the ray must stay in the half plane
    az = cmath.phase(z)
    want = math.pi - az
    feas_lo, feas_hi = math.pi / 2 - az + 0.2, 3 * math.pi / 2 - az - 0.2
    half = (0.0, math.pi) if up else (-math.pi, 0.0)
    cands = []
    for shift in (-2 * math.pi, 0.0, 2 * math.pi):
        lo2, hi2 = max(feas_lo + shift, half[0]), min(feas_hi + shift, half[1])
        if lo2 <= hi2:
            cands.append(min(max(want + shift, lo2), hi2))
    if not cands:
        raise ToleranceError("no admissible ray direction for the contour")
    d = min(cands, key=lambda v: abs(((v - want + math.pi) % (2 * math.pi)) - math.pi))
    e = cmath.exp(1j * d)
    kappa = -(z * e).real
    if kappa <= 0:
        raise ToleranceError("ray does not decay")
    S = 80.0 / kappa + 4 * rho
    # segment t0 -> 0: t = t0 (1 - u), u in [0, 1]
    u_edges = np.linspace(0, 1, npan // 2 + 1)
    a, b = u_edges[:-1, None], u_edges[1:, None]
    u = (0.5 * (a + b) + 0.5 * (b - a) * x).ravel()
    wu = (0.5 * (b - a) * w).ravel()
    t_seg = t0 * (1 - u)
    dt_seg = -t0 * wu
    # ray infinity -> t0: t = t0 + e s, integral = -int_0^S
    s_edges = np.concatenate([np.linspace(0, 4 * rho, npan // 4 + 1), np.linspace(4 * rho, S, npan + 1)[1:]])
    a, b = s_edges[:-1, None], s_edges[1:, None]
    s = (0.5 * (a + b) + 0.5 * (b - a) * x).ravel()
    ws = (0.5 * (b - a) * w).ravel()
    t_ray = t0 + e * s
    dt_ray = -e * ws
    return np.concatenate([t_ray, t_seg]), np.concatenate([dt_ray, dt_seg])


def _q_once(j: int, z: complex, alpha: float, nu: float, deriv: int, npan: int) -> LogScaledValue:
    t, dt = _contour(j, z, alpha, npan)
    with np.errstate(all="ignore"):
        lt = _log_branch(t, j)
        logs = (nu - 3 + deriv) * lt + 1 / (2 * t * t) - alpha / t + z * t + np.log(dt)
    logs = np.where(np.isfinite(logs), logs, -np.inf + 0j)
    return logsumexp_complex(logs)


def eval_q(alpha: float, nu: float, j: int, z: complex, deriv: int = 0,
           rtol: float = 1e-12) -> LogScaledValue:
    """``q_j^{(deriv)}(z) = int_{Gamma_j} t^(nu-3+deriv) exp(1/(2t^2) - alpha/t + z t) dt``.

    Computed for ``tau = n = 1``; panel counts are doubled until two
    successive results agree to ``rtol``.
    """
    if j not in (1, 2, 3, 4):
        raise ValidationError("j must be in 1..4")
    z = complex(z)
    if z == 0:
        raise DomainError("contour route needs z != 0")
    npan = 64
    prev = _q_once(j, z, alpha, nu, deriv, npan)
    for _ in range(7):
        npan *= 2
        cur = _q_once(j, z, alpha, nu, deriv, npan)
        diff = cur - prev
        if diff.mantissa == 0 or diff.log_abs - cur.log_abs < math.log(rtol):
            return cur
        prev = cur
    raise ToleranceError("contour quadrature did not converge")


def p_contour(spec: ModelSpec, j: int, z: complex) -> LogScaledValue:
    """``p_j(z)`` from ``q`` functions and the rescaling to ``tau = n = 1``."""
    alpha = _require_quadratic(spec)
    nu, tau, n = spec.nu, spec.tau, spec.n
    z = complex(z)
    if z.imag == 0 and (j == 1 or (j == 0 and z.real <= 0) or (j == 2 and z.real >= 0)):
        raise DomainError(f"p_{j} is cut at z = {z}")
    a1 = math.sqrt(n) * alpha
    Z = n ** 1.5 * tau ** 2 * z
    pre = LogScaledValue.from_log(complex(a1 * a1 / 2 - math.log(math.sqrt(2 * math.pi)) - 0.5j * math.pi))
    if j == 0:
        q = eval_q(a1, nu, 1, Z, 2)
        zp = LogScaledValue.from_log(nu * cmath.log(Z))
        val = pre * zp * q
    elif j == 1:
        up = Z.imag > 0
        q = eval_q(a1, nu, 3 if up else 4, Z, 2)
        ph = LogScaledValue.from_log(complex(0, -nu * math.pi if up else nu * math.pi))
        val = pre * ph * LogScaledValue.from_log(nu * cmath.log(Z)) * q
    elif j == 2:
        q = eval_q(a1, nu, 2, Z, 2)
        ph = LogScaledValue.from_log(complex(0, -nu * math.pi))
        val = -(pre * ph * LogScaledValue.from_log(nu * cmath.log(-Z)) * q)
    else:
        raise ValidationError("j must be 0, 1 or 2")
    return val.scaled_by_log(-nu * math.log(tau * n) - 0.5 * math.log(n))


def jump_residuals(triple: SolutionTriple, x: float) -> Dict[str, float]:
    """Relative defects of the boundary-value jumps at a real ``x != 0``.

    For ``x < 0``: ``p0+ = e^(2 nu pi i) p0-`` and ``p1+ = p1- + e^(nu pi i) p0-``.
    For ``x > 0``: ``p2+ = e^(-2 nu pi i) p2-`` and ``p1+ = p1- - e^(-nu pi i) p2-``.
    """
    x = float(x)
    if x == 0:
        raise DomainError("jumps are checked away from the origin")
    nu = triple.nu
    v = {(j, sd): triple.value(j, x, 0, sd) for j in ((0, 1) if x < 0 else (1, 2)) for sd in "+-"}
    if x < 0:
        return {
            "p0": abs(v[0, "+"] - cmath.exp(2j * nu * math.pi) * v[0, "-"]) / abs(v[0, "+"]),
            "p1_neg": abs(v[1, "+"] - v[1, "-"] - cmath.exp(1j * nu * math.pi) * v[0, "-"]) / abs(v[1, "+"]),
        }
    return {
        "p2": abs(v[2, "+"] - cmath.exp(-2j * nu * math.pi) * v[2, "-"]) / abs(v[2, "+"]),
        "p1_pos": abs(v[1, "+"] - v[1, "-"] + cmath.exp(-1j * nu * math.pi) * v[2, "-"]) / abs(v[1, "+"]),
    }


def connection_residual(alpha: float, nu: float, z: complex) -> float:
    """Relative defect of ``q2 = q3 - e^(2 pi nu i) q4`` (``Re z > 0``) or ``q1 = q3 - q4`` (``Re z < 0``)."""
    z = complex(z)
    if z.real == 0:
        raise DomainError("connection formulas need Re z != 0")
    q3 = eval_q(alpha, nu, 3, z).value
    q4 = eval_q(alpha, nu, 4, z).value
    if z.real > 0:
        lhs, rhs = eval_q(alpha, nu, 2, z).value, q3 - cmath.exp(2j * math.pi * nu) * q4
    else:
        lhs, rhs = eval_q(alpha, nu, 1, z).value, q3 - q4
    return abs(lhs - rhs) / abs(lhs)


def pq_residual(triple: SolutionTriple, j: int, z: complex) -> float:
    """Relative difference between the contour and series routes for ``p_j(z)``."""
    a = triple.value(j, z)
    return abs(p_contour(triple.spec, j, z).value - a) / abs(a)


# ---------------------------------------------------------------------------
# asymptotics
# ---------------------------------------------------------------------------

def asymptotic_prefactor(nu: float, tau: float, n: int, alpha: float, j: int,
                         upper: bool = True, extra_factor: bool = False) -> complex:
    """Leading constant of ``p_j / (z^((2nu-1)/3) exp(n theta_{j+1}))``.

    ``C_j / (sqrt(3) n) tau^((nu-2)/3) omega^(2j)`` with ``C_0 = 1``,
    ``C_1 = -i exp(-pi i (2nu+1)/6)``, ``C_2 = exp(-pi i (2nu+1)/3)``.
    ``extra_factor=True`` multiplies by an additional ``exp(alpha^2 n / 3)``,
    a variant the numerics do not support.
    Lower half plane values follow from ``p_j(conj z) = +-conj p_j(z)``.
    """
    C = [1.0, -1j * cmath.exp(-1j * math.pi * (2 * nu + 1) / 6), cmath.exp(-1j * math.pi * (2 * nu + 1) / 3)][j]
    val = C / (math.sqrt(3) * n) * tau ** ((nu - 2) / 3) * OMEGA ** (2 * j)
    if extra_factor:
        val *= math.exp(alpha * alpha * n / 3)
    if not upper:
        val = val.conjugate() * (-1 if j == 1 else 1)
    return complex(val)


def subleading_coefficient(nu: float, tau: float, n: int, alpha: float, j: int,
                           upper: bool = True, extra_factor: bool = False) -> complex:
    """Coefficient of ``z^(-1/3)`` in the normalized ratio.

    ``-alpha nu / (3 tau^(2/3)) omega^j``; ``extra_factor=True`` divides
    by ``n``, a variant the numerics do not support.
    """
    w = OMEGA ** j if upper else OMEGA ** (-j)
    val = -alpha * nu / (3 * tau ** (2 / 3)) * w
    if extra_factor:
        val /= n
    return complex(val)


def asymptotic_match(spec: ModelSpec, j: int, angle: float = math.pi / 3,
                     radii: Sequence[float] = tuple(np.geomspace(1e3, 3.2e4, 10)),
                     ts: Optional[ThetaSystem] = None) -> dict:
    """Fit ``p_j(z) / (z^((2nu-1)/3) exp(n theta_{j+1}(z)))`` along a ray.

    The ratio is modeled as ``L (1 + s1 u + s2 u^2 + s3 u^3)`` with
    ``u = z^(-1/3)``.  Returns the fitted ``L`` and ``s1`` next to the
    predicted values, the raw ratio at the smallest radius, and a drift
    diagnostic (large drift signals branch mislabeling).
    """
    alpha = _require_quadratic(spec)
    nu, tau, n = spec.nu, spec.tau, spec.n
    ts = ts or ThetaSystem(alpha, tau)
    upper = math.sin(angle) > 0
    zs = [r * cmath.exp(1j * angle) for r in radii]
    ratios = []
    for z in zs:
        p = p_contour(spec, j, z)
        th = ts.theta(z, j + 1)
        logr = p.log() - ((2 * nu - 1) / 3 * cmath.log(z) + n * th)
        ratios.append(cmath.exp(logr))
    ratios = np.array(ratios)
    u = np.array([z ** (-1 / 3) for z in zs])
    A = np.stack([u ** k for k in range(4)], axis=1)
    coef, *_ = np.linalg.lstsq(A, ratios, rcond=None)
    L = complex(coef[0])
    s1 = complex(coef[1] / coef[0])
    Lp = asymptotic_prefactor(nu, tau, n, alpha, j, upper)
    Lx = asymptotic_prefactor(nu, tau, n, alpha, j, upper, extra_factor=True)
    s1p = subleading_coefficient(nu, tau, n, alpha, j, upper)
    fitted = A @ coef
    return {
        "j": j,
        "angle": angle,
        "L_fit": L,
        "L_pred": Lp,
        "L_rel_err": abs(L / Lp - 1),
        "L_extra": Lx,
        "L_extra_rel_err": abs(L / Lx - 1),
        "s1_fit": s1,
        "s1_pred": s1p,
        "s1_abs_err": abs(s1 - s1p),
        "ratio_at_first_radius": complex(ratios[0]),
        "ratio_rel_err_first": abs(ratios[0] / (Lp * (1 + s1p * u[0])) - 1),
        "fit_residual": float(np.max(np.abs(fitted - ratios) / np.abs(ratios))),
    }


def f_alpha(s: complex, alpha: float) -> complex:
    """``int_{-inf}^0 exp(-y^2/2 - alpha y + y/s) dy`` via the scaled erfc.

    Equals ``exp(t^2/2) sqrt(pi/2) erfc(t/sqrt 2)`` with ``t = 1/s - alpha``.
    """
    s = complex(s)
    if s == 0:
        raise DomainError("f_alpha is singular at s = 0")
    t = 1 / s - alpha
    return complex(math.sqrt(math.pi / 2) * erfc_scaled(t / math.sqrt(2)).value)
