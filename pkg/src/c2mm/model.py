"""Weight system of the chiral two-matrix model.

The coupled weight is ``w_n(x, y) = f_n(xy) exp(-n (V(x) + W(y)))`` with
``f_n(x) = x**(nu/2) I_nu(2 tau n sqrt(x))``.  Two evaluation routes are
provided:

* a binary64 route (``f_n``, ``w_n``, ``h_l``) built on scaled Bessel
  functions and Gauss-Legendre panels, and
* an arbitrary precision route (:class:`HSeries`) that expands ``f_n`` in
  its power series and integrates term by term against exact power
  moments of ``exp(-n W)``.

The second route feeds the ill-conditioned bimoment computations; the
first one serves as its independent check.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple, Union

import mpmath as mp
import numpy as np
from scipy import special

from .errors import ValidationError, ToleranceError
from .specfun import (
    LogScaledValue,
    QuadratureRule,
    bessel_i,
    gauss_legendre,
    graded_panels,
    panel_rule,
)

__all__ = [
    "ModelSpec",
    "WeightTable",
    "HalfLineMoments",
    "FullLineMoments",
    "HSeries",
    "f_n",
    "f_n_deriv",
    "w_n",
    "h_l",
    "weight_w_l",
    "load_spec",
]


def _poly_eval(coeffs: Sequence[float], x):
    """Horner evaluation with ascending coefficients."""
    acc = 0.0 * x
    for c in reversed(coeffs):
        acc = acc * x + c
    return acc


@dataclass(frozen=True)
class ModelSpec:
    """Parameters ``(nu, tau, n, V, W)`` of the model.

    ``V`` and ``W`` hold ascending polynomial coefficients.  The constant
    term of ``W`` is removed on construction and kept in ``w_offset``.
    """

    nu: float
    tau: float
    n: int
    V: Tuple[float, ...]
    W: Tuple[float, ...]
    w_offset: float = 0.0

    def __post_init__(self):
        V = tuple(float(c) for c in self.V)
        W = tuple(float(c) for c in self.W)
        while len(V) > 1 and V[-1] == 0:
            V = V[:-1]
        while len(W) > 1 and W[-1] == 0:
            W = W[:-1]
        if len(W) > 0 and W[0] != 0:
            object.__setattr__(self, "w_offset", self.w_offset + W[0])
            W = (0.0,) + W[1:]
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "nu", float(self.nu))
        object.__setattr__(self, "tau", float(self.tau))
        self.validate()

    def validate(self) -> None:
        if isinstance(self.n, bool) or int(self.n) != self.n or self.n < 1:
            raise ValidationError("n must be a positive integer")
        object.__setattr__(self, "n", int(self.n))
        if not (math.isfinite(self.nu) and self.nu > -1):
            raise ValidationError("nu must satisfy nu > -1")
        if not (math.isfinite(self.tau) and self.tau > 0):
            raise ValidationError("tau must satisfy tau > 0")
        for name, p in (("V", self.V), ("W", self.W)):
            if len(p) < 2:
                raise ValidationError(f"{name} must have degree >= 1")
            if not all(math.isfinite(c) for c in p):
                raise ValidationError(f"{name} coefficients must be finite")
            if not p[-1] > 0:
                raise ValidationError(f"leading coefficient of {name} must be positive")
        if len(self.V) == 2 and len(self.W) == 2:
            if not self.tau ** 2 < self.V[1] * self.W[1]:
                raise ValidationError("linear V and W require tau^2 < c1*c2")

    # derived quantities -------------------------------------------------
    @property
    def r(self) -> int:
        return len(self.W) - 2

    @property
    def c(self) -> float:
        """Bessel argument scale ``tau * n``."""
        return self.tau * self.n

    @property
    def alpha(self) -> Optional[float]:
        """Linear coefficient of ``W`` when ``W = y**2/2 + alpha*y``."""
        if len(self.W) == 3 and self.W[2] == 0.5:
            return self.W[1]
        return None

    def Vx(self, x):
        return _poly_eval(self.V, x)

    def Wy(self, y):
        return _poly_eval(self.W, y)

    def dW_coeffs(self) -> Tuple[float, ...]:
        """Coefficients ``c_j`` of ``W'(y) = sum_j c_j y**(j-1)``."""
        return tuple(j * w for j, w in enumerate(self.W))[1:]

    def replace(self, **kw) -> "ModelSpec":
        d = dict(nu=self.nu, tau=self.tau, n=self.n, V=self.V,
                 W=(self.w_offset,) + self.W[1:])
        d.update(kw)
        return ModelSpec(**d)

    @classmethod
    def quadratic(cls, nu: float, tau: float, n: int, alpha: float,
                  V: Sequence[float] = (0.0, 1.0)) -> "ModelSpec":
        """Spec with ``W(y) = y**2/2 + alpha*y``."""
        return cls(nu, tau, n, tuple(V), (0.0, alpha, 0.5))

    # serialization ------------------------------------------------------
    def to_dict(self) -> dict:
        return {"nu": self.nu, "tau": self.tau, "n": self.n,
                "V": list(self.V), "W": [self.w_offset] + list(self.W[1:])}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        if not isinstance(d, dict):
            raise ValidationError("model spec must be a JSON object")
        keys = {"nu", "tau", "n", "V", "W"}
        unknown = set(d) - keys
        if unknown:
            raise ValidationError(f"unknown spec keys: {sorted(unknown)}")
        missing = keys - set(d)
        if missing:
            raise ValidationError(f"missing spec keys: {sorted(missing)}")
        try:
            return cls(float(d["nu"]), float(d["tau"]), d["n"],
                       tuple(float(c) for c in d["V"]), tuple(float(c) for c in d["W"]))
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ValidationError(f"malformed spec: {exc}") from exc


def load_spec(path: str) -> ModelSpec:
    """Read a :class:`ModelSpec` from a JSON file."""
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read spec {path}: {exc}") from exc
    return ModelSpec.from_dict(data)


# ---------------------------------------------------------------------------
# binary64 route
# ---------------------------------------------------------------------------

def f_n(spec: ModelSpec, x) -> LogScaledValue:
    """``f_n(x) = x**(nu/2) I_nu(2 tau n sqrt(x))``, principal branch."""
    return f_n_deriv(spec, x, 0)


def f_n_deriv(spec: ModelSpec, x, k: int = 0) -> LogScaledValue:
    """k-th derivative ``c**k x**((nu-k)/2) I_{nu-k}(2c sqrt(x))``."""
    c, nu = spec.c, spec.nu
    if isinstance(x, complex):
        if x == 0:
            return LogScaledValue(_f_at_zero(nu, c, k))
        s = np.sqrt(complex(x))
        u = 2 * c * s
        val = complex(special.ive(nu - k, u))
        logpre = k * math.log(c) + (nu - k) * np.log(s)
        return LogScaledValue(val, abs(u.real)) * LogScaledValue.from_log(complex(logpre))
    x = float(x)
    if x < 0:
        return f_n_deriv(spec, complex(x, 0.0), k)
    if x == 0:
        return LogScaledValue(_f_at_zero(nu, c, k))
    u = 2 * c * math.sqrt(x)
    val = float(special.ive(nu - k, u))
    return LogScaledValue(val, u + k * math.log(c) + 0.5 * (nu - k) * math.log(x))


def _f_at_zero(nu: float, c: float, k: int) -> float:
    # f = c**nu sum_m a_m x**(m+nu); only integer nu gives finite nonzero values
    if float(nu).is_integer() and nu >= 0:
        m = k - int(nu)
        if m < 0:
            return 0.0
        return c ** nu * c ** (2 * m) / (math.factorial(m) * math.gamma(m + nu + 1)) * math.factorial(k)
    return 0.0 if nu > k else math.inf


def w_n(spec: ModelSpec, x: float, y: float) -> LogScaledValue:
    """Coupled weight ``f_n(xy) exp(-n(V(x) + W(y)))``."""
    if x < 0 or y < 0:
        raise ValidationError("w_n requires x, y >= 0")
    return f_n(spec, x * y).scaled_by_log(-spec.n * (spec.Vx(x) + spec.Wy(y)))


def _y_rule(spec: ModelSpec, x: float, l: int, k: int, npan: int = 48,
            order: int = 24) -> Tuple[np.ndarray, np.ndarray]:
    """Panel rule for ``int_0^inf y**(l+k) f^{(k)}(xy) exp(-n W(y)) dy``."""
    n, c = spec.n, spec.c

    def env(y):
        return (l + k + 0.5 * spec.nu) * np.log(np.maximum(y, 1e-300)) \
            + 2 * c * np.sqrt(x * y) - n * spec.Wy(y)

    ys = np.geomspace(1e-6, 1e6, 4000)
    e = env(ys)
    peak = float(ys[np.argmax(e)])
    emax = float(np.max(e))
    # truncation: envelope 45 units plus margin below its maximum
    hi = peak
    while env(np.array([hi]))[0] > emax - 60.0:
        hi = hi * 1.2 + 1e-3
    return panel_rule(graded_panels(0.0, hi, npan, 24), order)


def h_l(spec: ModelSpec, l: int, x: float, deriv: int = 0) -> LogScaledValue:
    """``h_l^{(deriv)}(x) = int_0^inf y**(l+deriv) f^{(deriv)}(xy) exp(-nW) dy``.

    Derivatives act on the integrand.  Uses binary64 quadrature with log
    scaling; accurate to about 1e-12 relative for positive ``x``.
    """
    if l < 0 or deriv < 0:
        raise ValidationError("l and deriv must be nonnegative")
    x = float(x)
    if x <= 0:
        raise ValidationError("h_l quadrature route needs x > 0")
    y, w = _y_rule(spec, x, l, deriv)
    c, nu, n = spec.c, spec.nu, spec.n
    xy = x * y
    u = 2 * c * np.sqrt(xy)
    iv = special.ive(nu - deriv, u)
    with np.errstate(divide="ignore"):
        logmag = (u + deriv * math.log(c) + 0.5 * (nu - deriv) * np.log(xy)
                  + (l + deriv) * np.log(y) - n * spec.Wy(y) + np.log(np.abs(iv)))
    sgn = np.sign(iv)
    finite = np.isfinite(logmag)
    mx = float(np.max(logmag[finite]))
    total = float(np.sum(w[finite] * sgn[finite] * np.exp(logmag[finite] - mx)))
    return LogScaledValue(total, mx)


def weight_w_l(spec: ModelSpec, l: int, x: float) -> LogScaledValue:
    """Alternative weights: ``exp(-nV) h_l`` for ``l <= r`` and
    ``exp(-nV) x h'_{l-r-1}`` for ``r < l <= 2r``."""
    r = spec.r
    if not 0 <= l <= 2 * r:
        raise IndexError(f"l must lie in 0..{2 * r}")
    ev = -spec.n * spec.Vx(x)
    if l <= r:
        return h_l(spec, l, x).scaled_by_log(ev)
    return (h_l(spec, l - r - 1, x, deriv=1) * x).scaled_by_log(ev)


class WeightTable:
    """Caches ``h_l`` values of a spec on given nodes."""

    def __init__(self, spec: ModelSpec, rule_x: Optional[QuadratureRule] = None,
                 rule_y: Optional[QuadratureRule] = None):
        self.spec = spec
        self.rule_x = rule_x
        self.rule_y = rule_y
        self._cache: Dict[tuple, LogScaledValue] = {}

    def h(self, l: int, x: float, deriv: int = 0) -> LogScaledValue:
        key = (l, float(x), deriv)
        if key not in self._cache:
            self._cache[key] = h_l(self.spec, l, x, deriv)
        return self._cache[key]


# ---------------------------------------------------------------------------
# arbitrary precision route
# ---------------------------------------------------------------------------

class HalfLineMoments:
    """Moments ``A(k) = int_0^inf x**(nu+k) exp(-n P(x)) dx`` in mpmath.

    The first ``deg P`` values come from quadrature (or closed form for
    linear ``P``); the rest follow from integration by parts,
    ``(nu+i) A(i-1) = n sum_j j p_j A(i+j-1)``.
    """

    def __init__(self, coeffs: Sequence[float], n: float, nu: float, dps: int):
        self.dps = int(dps)
        self._work = self.dps + 30
        with mp.workdps(self._work):
            p = [mp.mpf(c) for c in coeffs]
            while len(p) > 1 and p[-1] == 0:
                p.pop()
            self.p0 = p[0]
            p[0] = mp.mpf(0)
            self.p = p
            self.n = mp.mpf(n)
            self.nu = mp.mpf(nu)
            self.deg = len(p) - 1
            off = mp.exp(-self.n * self.p0)
            if self.deg == 1:
                lam = self.n * p[1]
                self._vals = [mp.gamma(self.nu + 1) / lam ** (self.nu + 1) * off]
                self._closed = lam
            else:
                self._closed = None
                pp = self.p
                nn = self.n

                def P(x):
                    return mp.polyval(pp[::-1], x)

                # integration breakpoints around the bulk of exp(-nP)
                scale = float(max(1.0, (1.0 / (float(nn) * float(pp[-1]))) ** (1.0 / self.deg)))
                pts = [0, scale, 4 * scale, 12 * scale, mp.inf]
                self._vals = [mp.quad(lambda x, i=i: x ** (self.nu + i) * mp.exp(-nn * P(x)), pts) * off
                              for i in range(self.deg)]

    def __getitem__(self, k: int):
        self.ensure(k + 1)
        return self._vals[k]

    def ensure(self, count: int) -> None:
        vals = self._vals
        if len(vals) >= count:
            return
        with mp.workdps(self._work):
            if self._closed is not None:
                lam = self._closed
                while len(vals) < count:
                    k = len(vals)
                    vals.append(vals[-1] * (self.nu + k) / lam)
                return
            p, n, D = self.p, self.n, self.deg
            top = n * D * p[D]
            while len(vals) < count:
                i = len(vals) - D + 1
                acc = (self.nu + i) * vals[i - 1]
                for j in range(1, D):
                    acc -= n * j * p[j] * vals[i + j - 1]
                vals.append(acc / top)

    def values(self, count: int):
        self.ensure(count)
        return self._vals[:count]


class FullLineMoments:
    """Integer moments ``T(k) = int_R y**k exp(-n W(y)) dy`` (even degree W)."""

    def __init__(self, coeffs: Sequence[float], n: float, dps: int):
        self.dps = int(dps)
        self._work = self.dps + 30
        with mp.workdps(self._work):
            p = [mp.mpf(c) for c in coeffs]
            self.p = p
            self.n = mp.mpf(n)
            self.deg = len(p) - 1
            if self.deg % 2:
                raise ValidationError("full-line moments need even degree")
            if self.deg == 2:
                a2, a1, a0 = p[2], p[1], p[0]
                lam = self.n * a2
                t0 = mp.sqrt(mp.pi / lam) * mp.exp(self.n * (a1 ** 2 / (4 * a2) - a0))
                t1 = -a1 / (2 * a2) * t0
                self._vals = [t0, t1]
            else:
                nn = self.n
                self._vals = [mp.quad(lambda y, i=i: y ** i * mp.exp(-nn * mp.polyval(p[::-1], y)),
                                      [-mp.inf, -4, 0, 4, mp.inf]) for i in range(self.deg)]

    def __getitem__(self, k):
        self.ensure(k + 1)
        return self._vals[k]

    def ensure(self, count: int) -> None:
        vals = self._vals
        p, n, D = self.p, self.n, self.deg
        with mp.workdps(self._work):
            top = n * D * p[D]
            while len(vals) < count:
                # k T(k-1) = n sum_j j p_j T(k+j-1) solved for the top index
                k = len(vals) - D + 1
                acc = k * vals[k - 1] if k >= 1 else mp.mpf(0)
                for j in range(1, D):
                    acc -= n * j * p[j] * vals[k + j - 1]
                vals.append(acc / top)


def mp_dps_for_degree(d: int) -> int:
    """Working digits for degree-``d`` bimoment problems."""
    return int(40 + 2.5 * d)


class HSeries:
    """Series representation of ``h_l`` and of the bimoments.

    ``h_l(z) = c**nu sum_m a_m B(l+m) z**(m+nu)`` with
    ``a_m = c**(2m)/(m! Gamma(m+nu+1))`` and ``B`` the half-line moments of
    ``exp(-nW)``.  All arithmetic is carried out with ``dps`` digits.
    """

    def __init__(self, spec: ModelSpec, dps: int = 50):
        self.spec = spec
        self.dps = int(dps)
        with mp.workdps(self.dps + 10):
            self.c = mp.mpf(spec.tau) * spec.n
            self.nu = mp.mpf(spec.nu)
            self.cnu = self.c ** self.nu
        self.B = HalfLineMoments(spec.W, spec.n, spec.nu, self.dps)
        self._a = []

    def a(self, count: int):
        """Series coefficients ``a_0..a_{count-1}``."""
        a = self._a
        if len(a) < count:
            with mp.workdps(self.dps + 10):
                c2 = self.c ** 2
                if not a:
                    a.append(1 / mp.gamma(self.nu + 1))
                while len(a) < count:
                    m = len(a)
                    a.append(a[-1] * c2 / (m * (m + self.nu)))
        return a[:count]

    def h_values(self, x, L: int, deriv: int = 0):
        """``[h_0^{(deriv)}(x), ..., h_{L-1}^{(deriv)}(x)]`` as mpmath numbers.

        ``x`` may be real positive or complex (principal branch of
        ``x**nu``).  Terms are summed until they fall below ``10**-dps``
        of the running maximum.
        """
        with mp.workdps(self.dps + 10):
            z = mp.mpmathify(x)
            az = abs(z)
            if az == 0:
                raise ValidationError("series route needs x != 0")
            eps = mp.mpf(10) ** (-(self.dps + 5))
            terms = []
            tm = mp.mpf(1)
            m = 0
            peak = mp.mpf(0)
            a_list = self.a(64)
            while True:
                if m >= len(a_list):
                    a_list = self.a(2 * len(a_list))
                mag = a_list[m] * az ** m * self.B[L - 1 + m] * (abs(m + self.nu) + deriv) ** deriv
                peak = max(peak, mag)
                terms.append(m)
                if m > 8 and mag < eps * peak:
                    break
                m += 1
            M = m + 1
            a_list = self.a(M)
            Bv = self.B.values(L + M)
            zp = z ** (self.nu - deriv)
            coef = []
            zm = mp.mpf(1)
            for m in range(M):
                fall = mp.mpf(1)
                for i in range(deriv):
                    fall *= (m + self.nu - i)
                coef.append(a_list[m] * fall * zm)
                zm *= z
            out = []
            for l in range(L):
                s = mp.fdot(coef, Bv[l:l + M])
                out.append(+(self.cnu * zp * s))
            return out

    def bimoments(self, A: HalfLineMoments, d_rows: int, d_cols: int):
        """``M_jk = c**nu sum_m a_m A(j+m) B(k+m)`` for the given sizes."""
        with mp.workdps(self.dps + 10):
            eps = mp.mpf(10) ** (-(self.dps + 5))
            m = 0
            peak = mp.mpf(0)
            a_list = self.a(64)
            jr, kc = d_rows - 1, d_cols - 1
            while True:
                if m >= len(a_list):
                    a_list = self.a(2 * len(a_list))
                mag = a_list[m] * max(A[m] * self.B[m], A[jr + m] * self.B[kc + m])
                peak = max(peak, mag)
                if m > 8 and mag < eps * peak:
                    break
                m += 1
            M = m + 1
            a_list = self.a(M)
            Av = A.values(d_rows + M)
            Bv = self.B.values(d_cols + M)
            out = mp.matrix(d_rows, d_cols)
            for j in range(d_rows):
                aj = [a_list[i] * Av[j + i] for i in range(M)]
                for k in range(d_cols):
                    out[j, k] = self.cnu * mp.fdot(aj, Bv[k:k + M])
            return out
