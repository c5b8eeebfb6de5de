"""Overflow-safe special functions and quadrature primitives.

Values that can overflow binary64 are carried as :class:`LogScaledValue`,
a mantissa together with a natural-log scale.  Bessel and error functions
are delegated to :mod:`scipy.special` in their exponentially scaled forms;
this module only adds the scale bookkeeping, argument checks and the
quadrature builder used by the weight integrals.
"""
from __future__ import annotations

import math
import cmath
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy import special

from .errors import DomainError, ToleranceError

Number = Union[float, complex]

__all__ = [
    "LogScaledValue",
    "QuadratureRule",
    "DecayHint",
    "bessel_i",
    "bessel_k",
    "log_bessel_i",
    "build_quadrature",
    "graded_panels",
    "erfc_scaled",
]


@dataclass(frozen=True)
class LogScaledValue:
    """Number represented as ``mantissa * exp(log_scale)``.

    The mantissa is normalized so that ``1 <= |mantissa| < e`` unless it is
    exactly zero, in which case ``log_scale`` is 0.
    """

    mantissa: Number
    log_scale: float = 0.0

    def __post_init__(self):
        m = self.mantissa
        s = float(self.log_scale)
        if m == 0:
            object.__setattr__(self, "mantissa", 0.0 * m)
            object.__setattr__(self, "log_scale", 0.0)
            return
        a = abs(m)
        if not math.isfinite(a):
            raise OverflowError("non-finite mantissa")
        k = math.floor(math.log(a))
        m = m / math.exp(k)
        # guard rounding at the interval ends
        if abs(m) >= math.e:
            m, k = m / math.e, k + 1
        elif abs(m) < 1.0:
            m, k = m * math.e, k - 1
        object.__setattr__(self, "mantissa", m)
        object.__setattr__(self, "log_scale", s + k)

    # construction -------------------------------------------------------
    @classmethod
    def from_value(cls, v: Number) -> "LogScaledValue":
        return cls(v, 0.0)

    @classmethod
    def from_log(cls, logv: Number) -> "LogScaledValue":
        """Build from a (possibly complex) natural logarithm."""
        if isinstance(logv, complex):
            return cls(cmath.exp(1j * logv.imag), logv.real)
        if logv == -math.inf:
            return cls(0.0, 0.0)
        return cls(1.0, float(logv))

    # decoding -----------------------------------------------------------
    @property
    def value(self) -> Number:
        """Decoded value; may be ``inf`` when it exceeds binary64 range."""
        if self.mantissa == 0:
            return self.mantissa
        if self.log_scale > 709.0:
            return self.mantissa * math.inf
        return self.mantissa * math.exp(self.log_scale)

    def __complex__(self):
        return complex(self.value)

    def __float__(self):
        v = self.value
        if isinstance(v, complex):
            if v.imag != 0:
                raise TypeError("complex LogScaledValue")
            v = v.real
        return float(v)

    @property
    def log_abs(self) -> float:
        if self.mantissa == 0:
            return -math.inf
        return math.log(abs(self.mantissa)) + self.log_scale

    def log(self) -> Number:
        """Principal natural logarithm of the represented value."""
        if isinstance(self.mantissa, complex):
            return cmath.log(self.mantissa) + self.log_scale
        if self.mantissa < 0:
            return complex(math.log(-self.mantissa) + self.log_scale, math.pi)
        return math.log(self.mantissa) + self.log_scale

    # arithmetic ---------------------------------------------------------
    @staticmethod
    def _coerce(other) -> "LogScaledValue":
        if isinstance(other, LogScaledValue):
            return other
        return LogScaledValue(other, 0.0)

    def __mul__(self, other):
        o = self._coerce(other)
        return LogScaledValue(self.mantissa * o.mantissa, self.log_scale + o.log_scale)

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self._coerce(other)
        if o.mantissa == 0:
            raise ZeroDivisionError("division by zero LogScaledValue")
        return LogScaledValue(self.mantissa / o.mantissa, self.log_scale - o.log_scale)

    def __rtruediv__(self, other):
        return self._coerce(other) / self

    def __add__(self, other):
        o = self._coerce(other)
        if self.mantissa == 0:
            return o
        if o.mantissa == 0:
            return self
        s = max(self.log_scale, o.log_scale)
        m = self.mantissa * math.exp(self.log_scale - s) + o.mantissa * math.exp(o.log_scale - s)
        return LogScaledValue(m, s)

    __radd__ = __add__

    def __neg__(self):
        return LogScaledValue(-self.mantissa, self.log_scale)

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def conjugate(self) -> "LogScaledValue":
        m = self.mantissa
        return LogScaledValue(m.conjugate() if isinstance(m, complex) else m, self.log_scale)

    def scaled_by_log(self, logfactor: float) -> "LogScaledValue":
        return LogScaledValue(self.mantissa, self.log_scale + logfactor)

    def isclose(self, other, rtol: float = 1e-12) -> bool:
        o = self._coerce(other)
        d = self - o
        if d.mantissa == 0:
            return True
        ref = max(self.log_abs, o.log_abs)
        return d.log_abs - ref <= math.log(rtol)


def logsumexp_complex(logs: np.ndarray, weights: Optional[np.ndarray] = None) -> LogScaledValue:
    """Sum ``weights * exp(logs)`` for complex ``logs`` without overflow."""
    logs = np.asarray(logs)
    finite = np.isfinite(logs.real)
    if not np.any(finite):
        return LogScaledValue(0.0)
    mx = float(np.max(logs.real[finite]))
    terms = np.zeros(logs.shape, dtype=complex)
    terms[finite] = np.exp(logs[finite] - mx)
    if weights is not None:
        terms = terms * weights
    total = complex(np.sum(terms))
    if not np.iscomplexobj(logs) or np.all(np.imag(logs) == 0):
        if weights is None or not np.iscomplexobj(weights):
            total = total.real
    return LogScaledValue(total, mx)


# ---------------------------------------------------------------------------
# Bessel functions
# ---------------------------------------------------------------------------

def _check_order(nu: float) -> None:
    if not nu > -1:
        raise DomainError(f"Bessel order must satisfy nu > -1, got {nu}")


def bessel_i(nu: float, u: Number) -> LogScaledValue:
    """Modified Bessel function of the first kind, ``I_nu(u)``.

    Parameters
    ----------
    nu : float
        Order, ``nu > -1``.
    u : float or complex
        Argument.  Complex arguments use the principal branch of ``u**nu``.

    Returns
    -------
    LogScaledValue
        ``I_nu(u)`` with log scale ``|Re u|``.
    """
    _check_order(nu)
    if isinstance(u, complex) or np.iscomplexobj(u):
        u = complex(u)
        val = complex(special.ive(nu, u))
        return LogScaledValue(val, abs(u.real))
    u = float(u)
    if u < 0:
        return bessel_i(nu, complex(u, 0.0))
    return LogScaledValue(float(special.ive(nu, u)), u)


def bessel_k(nu: float, u: Number) -> LogScaledValue:
    """Modified Bessel function of the second kind, ``K_nu(u)``.

    Defined on the plane cut along ``(-inf, 0]``; integer orders use the
    limiting value.  The result carries log scale ``-Re u``.
    """
    uc = complex(u)
    if uc.imag == 0 and uc.real <= 0:
        raise DomainError("K_nu is cut along (-inf, 0]")
    if isinstance(u, complex):
        val = complex(special.kve(nu, uc))
    else:
        val = float(special.kve(nu, uc.real))
    return LogScaledValue(val, -uc.real)


def log_bessel_i(nu: float, u: np.ndarray) -> np.ndarray:
    """Vectorized ``log I_nu(u)`` for real ``u >= 0``.

    Returns ``-inf`` where ``I_nu(u) = 0`` (``u = 0`` with ``nu > 0``).
    Orders below -1 are accepted here for derivative formulas.
    """
    u = np.asarray(u, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(special.ive(nu, u)) + u
        small = u < 1e-150
        if np.any(small):
            # leading series term avoids 0 * inf in ive for tiny arguments
            us = np.maximum(u[small], 1e-300)
            out[small] = nu * np.log(us / 2) - special.gammaln(nu + 1)
    return out


# ---------------------------------------------------------------------------
# Error function
# ---------------------------------------------------------------------------

def erfc_scaled(z: Number) -> LogScaledValue:
    """Scaled complementary error function ``exp(z**2) * erfc(z)``."""
    val = special.erfcx(complex(z)) if isinstance(z, complex) else special.erfcx(float(z))
    return LogScaledValue(val.item() if hasattr(val, "item") else val, 0.0)


# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DecayHint:
    """Describes an integrand's behavior for rule construction.

    Attributes
    ----------
    log_envelope : callable or None
        Vectorized ``log |f(y)|`` bound used to choose the truncation point
        and to self-check convergence.
    endpoint_power : float or None
        Exponent ``p`` of an ``(y - a)**p`` endpoint singularity at the left
        end, triggering geometrically graded panels.
    """

    log_envelope: Optional[Callable[[np.ndarray], np.ndarray]] = None
    endpoint_power: Optional[float] = None

    @classmethod
    def exponential(cls, rate: float = 1.0) -> "DecayHint":
        return cls(lambda y: -rate * np.asarray(y, dtype=float))

    @classmethod
    def gaussian(cls, scale: float = 1.0) -> "DecayHint":
        return cls(lambda y: -0.5 * (np.asarray(y, dtype=float) / scale) ** 2)

    @classmethod
    def power(cls, p: float) -> "DecayHint":
        def env(y):
            y = np.asarray(y, dtype=float)
            with np.errstate(divide="ignore"):
                return p * np.log(y)
        return cls(env, endpoint_power=p)


@dataclass(frozen=True)
class QuadratureRule:
    """Immutable quadrature rule ``sum(w * f(x))``."""

    nodes: np.ndarray
    weights: np.ndarray
    domain: tuple
    kind: str = "legendre_panels"
    x_max: Optional[float] = None

    def integrate(self, values: np.ndarray) -> float:
        return np.dot(self.weights, values)

    def __len__(self):
        return len(self.nodes)


_GL_CACHE: dict = {}


def gauss_legendre(order: int):
    """Cached Gauss-Legendre nodes and weights on [-1, 1]."""
    if order not in _GL_CACHE:
        _GL_CACHE[order] = np.polynomial.legendre.leggauss(order)
    return _GL_CACHE[order]


def panel_rule(edges: Sequence[float], order: int = 20):
    """Composite Gauss-Legendre rule over consecutive panel ``edges``."""
    x, w = gauss_legendre(order)
    e = np.asarray(edges, dtype=float)
    a, b = e[:-1, None], e[1:, None]
    nodes = (0.5 * (a + b) + 0.5 * (b - a) * x).ravel()
    weights = (0.5 * (b - a) * w).ravel()
    return nodes, weights


def graded_panels(a: float, b: float, n_uniform: int, grade_levels: int = 0,
                  ratio: float = 0.15) -> np.ndarray:
    """Panel edges on [a, b], geometrically refined towards ``a``.

    The first uniform panel is subdivided ``grade_levels`` times with the
    given ratio, which resolves algebraic endpoint singularities.
    """
    edges = np.linspace(a, b, n_uniform + 1)
    if grade_levels > 0:
        h = edges[1] - a
        inner = a + h * ratio ** np.arange(grade_levels, 0, -1)
        edges = np.concatenate(([a], inner, edges[1:]))
    return edges


def _truncation_point(env: Callable, a: float, log_tol: float) -> float:
    """Smallest ``X`` on a doubling ladder with ``env(X) <= log_tol``."""
    x = max(1.0, a + 1.0)
    ref = float(np.max(env(np.linspace(a, x, 200)[1:])))
    for _ in range(200):
        if float(env(np.array([x]))[0]) - ref <= log_tol:
            return x
        x *= 1.25
    raise ToleranceError("integrand envelope does not decay")


def build_quadrature(domain, target_rel_tol: float = 1e-12,
                     integrand_hint: Optional[DecayHint] = None,
                     order: int = 20) -> QuadratureRule:
    """Build a composite Gauss-Legendre rule for ``domain``.

    Parameters
    ----------
    domain : tuple
        ``(a, b)`` with ``b`` possibly ``inf``.
    target_rel_tol : float
        Requested relative accuracy, in ``[1e-16, 1e-6]``.
    integrand_hint : DecayHint
        Envelope and endpoint behavior.  Required for infinite domains.

    Returns
    -------
    QuadratureRule
        Rule whose self-convergence on the envelope is within tolerance.
    """
    if not (1e-16 <= target_rel_tol <= 1e-6):
        raise ToleranceError("target_rel_tol must lie in [1e-16, 1e-6]")
    a, b = float(domain[0]), float(domain[1])
    hint = integrand_hint or DecayHint()
    env = hint.log_envelope
    if math.isinf(b):
        if env is None:
            raise ToleranceError("infinite domain requires a decay envelope")
        b_eff = _truncation_point(env, a, math.log(target_rel_tol / 10) - 3.0)
    else:
        b_eff = b
    grade = 0
    if hint.endpoint_power is not None and hint.endpoint_power != int(hint.endpoint_power):
        # each level shrinks the first panel, the unresolved piece scales
        # like ratio**(levels*(p+1))
        p1 = hint.endpoint_power + 1.0
        if p1 <= 0:
            raise ToleranceError("non-integrable endpoint singularity")
        grade = int(math.ceil(math.log(target_rel_tol / 100) / (p1 * math.log(0.15)))) + 1

    def make(npan):
        edges = graded_panels(a, b_eff, npan, grade)
        return panel_rule(edges, order)

    probe = env if env is not None else (lambda y: np.zeros_like(np.asarray(y, dtype=float)))

    def probe_int(rule):
        x, w = rule
        with np.errstate(over="ignore", under="ignore"):
            return float(np.dot(w, np.exp(probe(x))))

    npan = max(4, int(math.ceil(b_eff - a)))
    prev = probe_int(make(npan))
    for _ in range(12):
        npan *= 2
        cur_rule = make(npan)
        cur = probe_int(cur_rule)
        if abs(cur - prev) <= target_rel_tol * abs(cur):
            x, w = cur_rule
            return QuadratureRule(x, w, (a, b), "legendre_panels", b_eff)
        prev = cur
    raise ToleranceError("quadrature did not converge to the requested tolerance")
