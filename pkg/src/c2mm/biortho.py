"""Biorthogonal polynomials from the bimoment matrix.

``M_jk = int int x**j y**k w_n(x, y) dx dy`` is assembled from the exact
series of :class:`~c2mm.model.HSeries`.  An LDU factorization without
pivoting, ``M = L D U``, gives the monic families

    P_j = (L^-1)_j . (1, x, x**2, ...),    Q_k = (U^-T)_k . (1, y, ...)

and the norms ``kappa_k = D_kk``.  The matrices lose roughly two digits
per degree, so everything runs in mpmath with a working precision chosen
from an a posteriori condition estimate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import mpmath as mp
import numpy as np

from .errors import ConditioningAlarm, ValidationError
from .model import HalfLineMoments, HSeries, ModelSpec, mp_dps_for_degree

__all__ = [
    "BimomentMatrix",
    "BiorthSystem",
    "MopReport",
    "build_bimoments",
    "biorthogonalize",
    "check_mop",
    "build_system",
    "laguerre_fit",
]

STANDARD_CAP = 24
EXTENDED_CAP = 48


@dataclass
class BimomentMatrix:
    """Bimoments ``M_jk`` for ``0 <= j, k < d`` in mpmath precision."""

    spec: ModelSpec
    entries: "mp.matrix"
    degree: int
    precision: str
    dps: int
    series: HSeries = field(repr=False)
    xmoments: HalfLineMoments = field(repr=False)

    def to_float(self) -> np.ndarray:
        return np.array(self.entries.tolist(), dtype=float)

    def log10_condition(self) -> float:
        """log10 of the infinity-norm condition number, in working precision."""
        with mp.workdps(self.dps):
            M = self.entries
            try:
                inv = mp.inverse(M)
            except ZeroDivisionError:
                return math.inf
            return float(mp.log10(mp.mnorm(M, "inf") * mp.mnorm(inv, "inf")))


@dataclass
class BiorthSystem:
    """Monic biorthogonal families with norms.

    ``P[j, i]`` is the coefficient of ``x**i`` in ``P_j``; ``Q`` likewise.
    ``Minv`` is the inverse bimoment matrix, which equals
    ``sum_k Q_k^T P_k / kappa_k`` and drives the kernel.
    """

    spec: ModelSpec
    P: "mp.matrix"
    Q: "mp.matrix"
    kappa: List
    Minv: "mp.matrix"
    bimoments: BimomentMatrix

    @property
    def degree(self) -> int:
        return len(self.kappa)

    @property
    def dps(self) -> int:
        return self.bimoments.dps

    def P_float(self) -> np.ndarray:
        return np.array(self.P.tolist(), dtype=float)

    def Q_float(self) -> np.ndarray:
        return np.array(self.Q.tolist(), dtype=float)

    def kappa_float(self) -> np.ndarray:
        return np.array([float(k) for k in self.kappa])

    def eval_P(self, j: int, x):
        with mp.workdps(self.dps):
            return mp.polyval([self.P[j, i] for i in range(j, -1, -1)], x)

    def eval_Q(self, k: int, y):
        with mp.workdps(self.dps):
            return mp.polyval([self.Q[k, i] for i in range(k, -1, -1)], y)

    def biorth_matrix(self) -> "mp.matrix":
        """``int int w P_j Q_k`` for all pairs, from the bimoments."""
        with mp.workdps(self.dps):
            return self.P * self.bimoments.entries * self.Q.T

    def biorth_residual(self) -> float:
        """``max_{j != k} |<P_j, Q_k>| / min |kappa|``."""
        G = self.biorth_matrix()
        d = self.degree
        off = max((abs(G[j, k]) for j in range(d) for k in range(d) if j != k), default=mp.mpf(0))
        return float(off / min(abs(k) for k in self.kappa))

    def P_zeros(self, j: int) -> np.ndarray:
        """Zeros of ``P_j`` computed in working precision."""
        with mp.workdps(self.dps):
            coeffs = [self.P[j, i] for i in range(j, -1, -1)]
            roots = mp.polyroots(coeffs, maxsteps=200, extraprec=4 * self.dps)
        return np.array([complex(r) for r in roots])

    def to_dict(self) -> dict:
        d = self.degree
        return {
            "spec": self.spec.to_dict(),
            "degree": d,
            "dps": self.dps,
            "P": [[mp.nstr(self.P[j, i], 20) for i in range(j + 1)] for j in range(d)],
            "Q": [[mp.nstr(self.Q[j, i], 20) for i in range(j + 1)] for j in range(d)],
            "kappa": [mp.nstr(k, 20) for k in self.kappa],
        }


def _precision_cap(precision: str) -> int:
    if precision == "standard":
        return STANDARD_CAP
    if precision == "extended":
        return EXTENDED_CAP
    raise ValidationError("precision must be 'standard' or 'extended'")


def build_bimoments(spec: ModelSpec, d: int, precision: str = "extended",
                    dps: Optional[int] = None, max_degree: Optional[int] = None,
                    rows: Optional[int] = None) -> BimomentMatrix:
    """Assemble the ``d x d`` bimoment matrix.

    Parameters
    ----------
    spec : ModelSpec
    d : int
        Number of degrees ``0..d-1``.
    precision : {"extended", "standard"}
        ``standard`` rounds entries to binary64, ``extended`` keeps
        ``dps`` digits (default grows with ``d``).
    dps : int, optional
        Override of the working digits.
    max_degree : int, optional
        Override of the precision-dependent degree cap.
    rows : int, optional
        Number of rows (x-degrees); defaults to ``d``.

    Raises
    ------
    ConditioningAlarm
        When the condition estimate exceeds ``10**(digits - 4)``.
    """
    if d < 1:
        raise ValidationError("degree must be >= 1")
    cap = max_degree if max_degree is not None else _precision_cap(precision)
    if d > cap:
        raise ConditioningAlarm(f"degree {d} exceeds the {precision} cap {cap}")
    work = dps if dps is not None else mp_dps_for_degree(d)
    series = HSeries(spec, work)
    A = HalfLineMoments(spec.V, spec.n, spec.nu, work)
    with mp.workdps(work):
        M = series.bimoments(A, rows or d, d)
        if precision == "standard":
            M = mp.matrix([[mp.mpf(float(M[i, j])) for j in range(d)] for i in range(rows or d)])
    bm = BimomentMatrix(spec, M, d, precision, work, series, A)
    if rows is None or rows == d:
        digits = 15.95 if precision == "standard" else work
        lc = bm.log10_condition()
        if lc > digits - 4:
            raise ConditioningAlarm(
                f"bimoment condition estimate 1e{lc:.1f} exceeds 1e{digits - 4:.0f} at degree {d}")
    return bm


def biorthogonalize(M: BimomentMatrix) -> BiorthSystem:
    """Doolittle LDU without pivoting, yielding monic ``P``, ``Q`` and ``kappa``."""
    d = M.degree
    with mp.workdps(M.dps):
        A = M.entries.copy()
        L = mp.eye(d)
        U = mp.eye(d)
        kappa = []
        for k in range(d):
            piv = A[k, k]
            if piv == 0:
                raise ConditioningAlarm(f"singular leading minor at degree {k}")
            kappa.append(piv)
            for i in range(k + 1, d):
                L[i, k] = A[i, k] / piv
                U[k, i] = A[k, i] / piv
            for i in range(k + 1, d):
                lik = L[i, k] * piv
                for j in range(k + 1, d):
                    A[i, j] -= lik * U[k, j]
        P = _unit_lower_inverse(L)
        Q = _unit_lower_inverse(U.T)
        Dinv = mp.diag([1 / k for k in kappa])
        Minv = Q.T * Dinv * P
    return BiorthSystem(M.spec, P, Q, kappa, Minv, M)


def _unit_lower_inverse(L):
    d = L.rows
    X = mp.eye(d)
    for i in range(d):
        for j in range(i):
            s = mp.mpf(0)
            for k in range(j, i):
                s += L[i, k] * X[k, j]
            X[i, j] = -s
    return X


def build_system(spec: ModelSpec, d: int, precision: str = "extended",
                 dps: Optional[int] = None, max_degree: Optional[int] = None) -> BiorthSystem:
    """Convenience wrapper: bimoments followed by factorization.

    In extended mode the digits are raised until the condition estimate
    leaves at least 20 spare digits.
    """
    work = dps if dps is not None else mp_dps_for_degree(d)
    for _ in range(4):
        try:
            bm = build_bimoments(spec, d, precision, work, max_degree)
        except ConditioningAlarm:
            if precision == "standard" or dps is not None:
                raise
            work = int(work * 1.5)
            continue
        if precision == "extended" and dps is None and bm.log10_condition() > work - 20:
            work = int(bm.log10_condition() + 30)
            continue
        return biorthogonalize(bm)
    raise ConditioningAlarm(f"could not reach a stable precision at degree {d}")


@dataclass
class MopReport:
    """Residuals of the multiple orthogonality conditions."""

    variant: str
    entries: List[dict]
    max_residual: float

    def to_dict(self) -> dict:
        return {"variant": self.variant, "max_residual": self.max_residual,
                "entries": self.entries}


def mop_index_set(j: int, r: int) -> Dict[int, List[int]]:
    """``{l: [k, ...]}`` with ``k <= floor((j-l-1)/(2r+1))`` for ``l = 0..2r``."""
    out = {}
    for l in range(2 * r + 1):
        kmax = (j - l - 1) // (2 * r + 1)
        if kmax >= 0:
            out[l] = list(range(kmax + 1))
    return out


def check_mop(sys: BiorthSystem, variant: str = "MOP1", jmax: Optional[int] = None) -> MopReport:
    """Check both multiple orthogonality systems.

    ``MOP1`` uses the weights ``exp(-nV) h_l``, ``l = 0..2r``;
    ``MOP2`` uses ``exp(-nV) h_l`` for ``l <= r`` and
    ``exp(-nV) x h'_{l-r-1}`` beyond.  Integrals follow exactly from the
    series, via ``int x**i exp(-nV) h_l = M_il`` and the term-wise identity
    ``int x**(i+1) exp(-nV) h'_l = c**nu sum_m a_m (m+nu) A(i+m) B(l+m)``.

    Each residual ``|int P_j x**k weight_l|`` is scaled by
    ``int |P_j| x**k weight_l`` evaluated on the absolute coefficients, so
    that values near the working precision indicate exact orthogonality.
    """
    variant = variant.upper()
    if variant not in ("MOP1", "MOP2"):
        raise ValidationError("variant must be MOP1 or MOP2")
    spec = sys.spec
    r = spec.r
    d = sys.degree if jmax is None else min(jmax + 1, sys.degree)
    bm = sys.bimoments
    series, A = bm.series, bm.xmoments
    entries = []
    worst = 0.0
    with mp.workdps(sys.dps):
        ncols = 2 * r + 1
        kmax_all = max(0, (d - 1) // (2 * r + 1)) + 1
        rows = d + kmax_all + 1
        Mrect = series.bimoments(A, rows, ncols)
        if variant == "MOP2":
            Dmat = _xhprime_moments(series, A, rows, r + 1)
        for j in range(1, d):
            idx = mop_index_set(j, r)
            pj = [sys.P[j, i] for i in range(j + 1)]
            for l, ks in idx.items():
                for k in ks:
                    if variant == "MOP1" or l <= r:
                        col = [Mrect[i + k, l] for i in range(j + 1)]
                    else:
                        col = [Dmat[i + k, l - r - 1] for i in range(j + 1)]
                    val = mp.fdot(pj, col)
                    scale = mp.fdot([abs(p) for p in pj], [abs(c) for c in col])
                    res = float(abs(val) / scale)
                    worst = max(worst, res)
                    entries.append({"j": j, "l": l, "k": k, "residual": res})
    return MopReport(variant, entries, worst)


def _xhprime_moments(series: HSeries, A: HalfLineMoments, rows: int, cols: int):
    """``int_0^inf x**i exp(-nV) x h_l'(x) dx`` for ``i < rows``, ``l < cols``."""
    with mp.workdps(series.dps + 10):
        eps = mp.mpf(10) ** (-(series.dps + 5))
        m, peak = 0, mp.mpf(0)
        while True:
            a = series.a(m + 1)[m]
            mag = a * (m + abs(series.nu) + 1) * A[rows + m] * series.B[cols + m]
            peak = max(peak, mag)
            if m > 8 and mag < eps * peak:
                break
            m += 1
        M = m + 1
        a_list = series.a(M)
        Av = A.values(rows + M)
        Bv = series.B.values(cols + M)
        out = mp.matrix(rows, cols)
        for i in range(rows):
            ai = [a_list[t] * (t + series.nu) * Av[i + t] for t in range(M)]
            for l in range(cols):
                out[i, l] = series.cnu * mp.fdot(ai, Bv[l:l + M])
        return out


def laguerre_fit(sys: BiorthSystem, j: int, c: Optional[float] = None) -> dict:
    """Compare ``P_j`` with a monic rescaled Laguerre polynomial.

    ``P_j(x) ~ const * L_j^{(nu)}(c x)``.  When ``c`` is not given it is
    fitted from the subleading coefficient of ``P_1``; the report contains
    the fitted ``c`` and the maximum relative coefficient mismatch.
    """
    nu = sys.spec.nu
    with mp.workdps(sys.dps):
        if c is None:
            # monic P_1(x) = x - (nu+1)/c
            c = -(nu + 1) / sys.P[1, 0]
        c = mp.mpf(c)
        # monic form of L_j^{(nu)}(c x): coefficients of x**i
        lag = [(-1) ** i * mp.binomial(j + nu, j - i) / mp.factorial(i) * c ** i for i in range(j + 1)]
        lead = lag[j]
        lag = [v / lead for v in lag]
        res = max(abs(sys.P[j, i] - lag[i]) / max(abs(lag[i]), mp.mpf(10) ** -30) for i in range(j + 1))
    return {"c": float(c), "residual": float(res)}
