"""Logarithmic energies, squared measures and finite-n density extrapolation.

Measures are stored as cells ``[a_i, b_i]`` carrying mass ``m_i`` spread
uniformly (``a_i == b_i`` is a point mass).  Interactions between cells on
the same line use the exact primitive

    G(u) = u^2 log|u| / 2 - 3 u^2 / 4,   G'' = log|u|,

so ``int_a^b int_c^d log|x - y| dy dx = G(b-c) - G(a-c) - G(b-d) + G(a-d)``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence, Union

import numpy as np

from .errors import DomainError, ToleranceError, ValidationError
from .kernel import build_kernel, density_rule
from .model import ModelSpec
from .specfun import gauss_legendre, graded_panels, panel_rule

__all__ = [
    "DiscreteMeasure",
    "log_energy",
    "mutual_energy",
    "square_measure",
    "energy_functional",
    "midpoint_convexity",
    "DensityEstimate",
    "density_extrapolate",
    "edge_exponent",
    "load_measure",
]

MASS_TOL = 1e-12
JITTER = 1e-14

Field = Union[Callable[[np.ndarray], np.ndarray], Sequence[float], None]


def _cheb_breaks(a: float, b: float, cells: int) -> np.ndarray:
    """Chebyshev-graded breakpoints, exactly symmetric about the midpoint."""
    th = np.linspace(math.pi, 0.0, cells + 1)
    u = np.cos(th)
    u = 0.5 * (u - u[::-1])
    return 0.5 * (a + b) + 0.5 * (b - a) * u


@dataclass(frozen=True)
class DiscreteMeasure:
    """Positive measure on the real line (``axis='real'``) or on ``iR``.

    Parameters
    ----------
    grid : array
        Sorted cell midpoints (the point locations for point masses).
    masses : array
        Nonnegative cell masses.
    total_mass : float
        Must equal ``sum(masses)`` within 1e-12.
    symmetric : bool
        Declared symmetry under ``x -> -x``; verified by :func:`square_measure`.
    edges : array, optional
        ``(len(grid), 2)`` array of cell ends ``[a_i, b_i]``; point masses
        when omitted.
    axis : {'real', 'imag'}
        Points are ``grid`` or ``i * grid``.
    """

    grid: np.ndarray
    masses: np.ndarray
    total_mass: float
    symmetric: bool = False
    edges: Optional[np.ndarray] = None
    axis: str = "real"

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float)
        m = np.asarray(self.masses, dtype=float)
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "masses", m)
        if g.ndim != 1 or g.shape != m.shape:
            raise ValidationError("grid and masses must be 1-d arrays of equal length")
        if len(g) == 0:
            raise ValidationError("empty measure")
        if np.any(np.diff(g) < 0):
            raise ValidationError("grid must be sorted")
        if np.any(m < 0):
            raise ValidationError("masses must be nonnegative")
        if abs(m.sum() - self.total_mass) > MASS_TOL * max(1.0, abs(self.total_mass)):
            raise ValidationError(f"masses sum to {m.sum()!r}, not total_mass={self.total_mass!r}")
        if self.axis not in ("real", "imag"):
            raise ValidationError("axis must be 'real' or 'imag'")
        if self.edges is not None:
            e = np.asarray(self.edges, dtype=float)
            if e.shape != (len(g), 2) or np.any(e[:, 1] < e[:, 0]):
                raise ValidationError("edges must be an (N, 2) array with a_i <= b_i")
            object.__setattr__(self, "edges", e)

    # constructors -------------------------------------------------------
    @classmethod
    def points(cls, locations, masses, axis: str = "real", symmetric: bool = False) -> "DiscreteMeasure":
        loc = np.asarray(locations, dtype=float)
        m = np.asarray(masses, dtype=float)
        order = np.argsort(loc, kind="stable")
        return cls(loc[order], m[order], float(m.sum()), symmetric, None, axis)

    @classmethod
    def from_cells(cls, breaks, masses, axis: str = "real", symmetric: bool = False) -> "DiscreteMeasure":
        """Uniform density on each ``[breaks[i], breaks[i+1]]``."""
        b = np.asarray(breaks, dtype=float)
        m = np.asarray(masses, dtype=float)
        if len(b) != len(m) + 1 or np.any(np.diff(b) <= 0):
            raise ValidationError("breaks must be increasing with len(masses) + 1 entries")
        edges = np.stack([b[:-1], b[1:]], axis=1)
        return cls(0.5 * (b[:-1] + b[1:]), m, float(m.sum()), symmetric, edges, axis)

    @classmethod
    def from_cdf(cls, cdf: Callable[[np.ndarray], np.ndarray], breaks, axis: str = "real",
                 symmetric: bool = False) -> "DiscreteMeasure":
        b = np.asarray(breaks, dtype=float)
        return cls.from_cells(b, np.diff(cdf(b)), axis, symmetric)

    @classmethod
    def from_density(cls, rho: Callable[[np.ndarray], np.ndarray], breaks, order: int = 8,
                     axis: str = "real", symmetric: bool = False) -> "DiscreteMeasure":
        b = np.asarray(breaks, dtype=float)
        x, w = panel_rule(b, order)
        cell = np.repeat(np.arange(len(b) - 1), order)
        masses = np.bincount(cell, weights=w * rho(x), minlength=len(b) - 1)
        return cls.from_cells(b, masses, axis, symmetric)

    @classmethod
    def arcsine(cls, a: float = -1.0, b: float = 1.0, cells: int = 800, mass: float = 1.0) -> "DiscreteMeasure":
        """Arcsine law on ``[a, b]`` with Chebyshev-graded cells."""
        br = _cheb_breaks(a, b, cells)
        F = lambda x: mass * (1 - np.arccos(np.clip((2 * x - a - b) / (b - a), -1, 1)) / math.pi)
        return cls.from_cdf(F, br, symmetric=(a == -b))

    @classmethod
    def semicircle(cls, R: float = 2.0, cells: int = 800, mass: float = 1.0) -> "DiscreteMeasure":
        br = _cheb_breaks(-R, R, cells)

        def F(x):
            t = np.clip(x / R, -1, 1)
            return mass * (0.5 + (t * np.sqrt(1 - t * t) + np.arcsin(t)) / math.pi)
        return cls.from_cdf(F, br, symmetric=True)

    # helpers -------------------------------------------------------------
    @property
    def cells(self) -> np.ndarray:
        if self.edges is None:
            return np.stack([self.grid, self.grid], axis=1)
        return self.edges

    def scaled(self, factor: float) -> "DiscreteMeasure":
        """Multiply all masses by ``factor``."""
        return DiscreteMeasure(self.grid, self.masses * factor, self.total_mass * factor,
                               self.symmetric, self.edges, self.axis)

    def dilated(self, lam: float) -> "DiscreteMeasure":
        if lam <= 0:
            raise ValidationError("dilation factor must be positive")
        e = None if self.edges is None else self.edges * lam
        return DiscreteMeasure(self.grid * lam, self.masses, self.total_mass, self.symmetric, e, self.axis)

    def mix(self, other: "DiscreteMeasure", t: float) -> "DiscreteMeasure":
        """``(1 - t) self + t other`` as a measure on the union of cells."""
        if self.axis != other.axis:
            raise ValidationError("cannot mix measures on different axes")
        c = np.concatenate([self.cells, other.cells])
        m = np.concatenate([(1 - t) * self.masses, t * other.masses])
        g = c.mean(axis=1)
        order = np.argsort(g, kind="stable")
        has_cells = self.edges is not None or other.edges is not None
        return DiscreteMeasure(g[order], m[order], float(m.sum()), self.symmetric and other.symmetric,
                               c[order] if has_cells else None, self.axis)

    def integrate(self, f: Field) -> float:
        """``int f dmu`` with ``f`` averaged over each cell (4-point Gauss)."""
        if f is None:
            return 0.0
        if not callable(f):
            vals = np.asarray(f, dtype=float)
            if vals.shape != self.grid.shape:
                raise ValidationError("sampled field must match the measure grid")
            return float(np.dot(self.masses, vals))
        x, w = gauss_legendre(4)
        c = self.cells
        pts = 0.5 * (c[:, :1] + c[:, 1:]) + 0.5 * (c[:, 1:] - c[:, :1]) * x
        avg = (np.asarray(f(pts), dtype=float) * w).sum(axis=1) / 2
        return float(np.dot(self.masses, avg))

    def to_dict(self) -> dict:
        d = {"grid": self.grid.tolist(), "masses": self.masses.tolist(),
             "total_mass": self.total_mass, "symmetric": self.symmetric, "axis": self.axis}
        if self.edges is not None:
            d["edges"] = self.edges.tolist()
        return d


def load_measure(path_or_dict) -> DiscreteMeasure:
    """Measure from JSON ``{"grid", "masses", "total_mass"[, "edges", "axis", "symmetric"]}``."""
    d = path_or_dict
    if not isinstance(d, dict):
        with open(d) as fh:
            d = json.load(fh)
    allowed = {"grid", "masses", "total_mass", "edges", "axis", "symmetric"}
    extra = set(d) - allowed
    if extra:
        raise ValidationError(f"unknown measure keys: {sorted(extra)}")
    missing = {"grid", "masses", "total_mass"} - set(d)
    if missing:
        raise ValidationError(f"missing measure keys: {sorted(missing)}")
    return DiscreteMeasure(np.asarray(d["grid"]), np.asarray(d["masses"]), float(d["total_mass"]),
                           bool(d.get("symmetric", False)),
                           None if d.get("edges") is None else np.asarray(d["edges"]),
                           d.get("axis", "real"))


# ---------------------------------------------------------------------------
# energies
# ---------------------------------------------------------------------------

def _G(u):
    u = np.asarray(u, dtype=float)
    au = np.abs(u)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = 0.5 * u * u * np.log(au) - 0.75 * u * u
    return np.where(au == 0, 0.0, out)


def _G1(u):
    u = np.asarray(u, dtype=float)
    au = np.abs(u)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = u * np.log(au) - u
    return np.where(au == 0, 0.0, out)


def _mean_log_same_line(c1: np.ndarray, c2: np.ndarray) -> np.ndarray:
    """Average of ``log|x - y|`` over cell pairs (exact, uniform densities)."""
    a, b = c1[:, 0][:, None], c1[:, 1][:, None]
    c, d = c2[:, 0][None, :], c2[:, 1][None, :]
    w1, w2 = b - a, d - c
    out = np.empty(np.broadcast_shapes(a.shape, c.shape))
    both = (w1 > 0) & (w2 > 0)
    only1 = (w1 > 0) & (w2 == 0)
    only2 = (w1 == 0) & (w2 > 0)
    none = (w1 == 0) & (w2 == 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        full = (_G(b - c) - _G(a - c) - _G(b - d) + _G(a - d)) / (w1 * w2)
        # point y = c against cell [a, b]
        p1 = (_G1(b - c) - _G1(a - c)) / w1
        # point x = a against cell [c, d]
        p2 = (_G1(a - c) - _G1(a - d)) / w2
        dist = np.abs(a - c)
        pp = np.log(np.where(dist == 0, JITTER, dist))
    out = np.where(both, full, 0.0)
    out = np.where(only1, p1, out)
    out = np.where(only2, p2, out)
    out = np.where(none, pp, out)
    return out


def _mean_log_cross(c1: np.ndarray, c2: np.ndarray, order: int = 6) -> np.ndarray:
    """Average of ``log|x - i y|`` for ``x`` in real cells and ``y`` in cells on ``iR``."""
    x, w = gauss_legendre(order)
    w = w / 2

    def nodes(c):
        width = c[:, 1] - c[:, 0]
        return 0.5 * (c[:, :1] + c[:, 1:]) + 0.5 * width[:, None] * x[None, :]

    X = nodes(c1)  # (N1, q)
    Y = nodes(c2)  # (N2, q)
    r2 = X[:, None, :, None] ** 2 + Y[None, :, None, :] ** 2
    with np.errstate(divide="ignore"):
        lg = 0.5 * np.log(np.where(r2 == 0, JITTER ** 2, r2))
    return np.einsum("ijab,a,b->ij", lg, w, w)


def _self_point_correction(mu: DiscreteMeasure) -> float:
    """Diagonal term for point masses: each mass smeared over its local spacing."""
    g = mu.grid
    if len(g) < 2:
        raise ToleranceError("infinite energy: all mass sits on one node")
    gaps = np.diff(g)
    h = np.empty_like(g)
    h[0], h[-1] = gaps[0], gaps[-1]
    h[1:-1] = 0.5 * (gaps[:-1] + gaps[1:])
    if np.any(h == 0):
        raise ToleranceError("infinite energy: coincident nodes carry mass")
    # mean of log|x - y| over a uniform square of side h is log h - 3/2
    return float(np.sum(mu.masses ** 2 * (np.log(h) - 1.5)))


def mutual_energy(mu: DiscreteMeasure, nu: DiscreteMeasure) -> float:
    """``I(mu, nu) = int int log(1/|x - y|) dmu dnu``."""
    if mu.axis == nu.axis:
        L = _mean_log_same_line(mu.cells, nu.cells)
    elif mu.axis == "real":
        L = _mean_log_cross(mu.cells, nu.cells)
    else:
        L = _mean_log_cross(nu.cells, mu.cells).T
    return float(-(mu.masses @ L @ nu.masses))


def log_energy(mu: DiscreteMeasure) -> float:
    """``I(mu)``; point-mass measures get the local smearing correction on the diagonal."""
    L = _mean_log_same_line(mu.cells, mu.cells)
    if mu.edges is None:
        np.fill_diagonal(L, 0.0)
        return float(-(mu.masses @ L @ mu.masses) - _self_point_correction(mu))
    nz = mu.masses > 0
    if np.count_nonzero(nz) == 1 and np.all(mu.cells[nz, 1] == mu.cells[nz, 0]):
        raise ToleranceError("infinite energy: all mass sits on one node")
    return float(-(mu.masses @ L @ mu.masses))


# ---------------------------------------------------------------------------
# squaring
# ---------------------------------------------------------------------------

def _check_symmetric(mu: DiscreteMeasure, tol: float = 1e-10) -> None:
    c = mu.cells
    if not (np.allclose(c[::-1, ::-1], -c, rtol=0, atol=tol * max(1.0, np.max(np.abs(c))))
            and np.allclose(mu.masses[::-1], mu.masses, rtol=0, atol=tol)):
        raise ValidationError("measure is not symmetric under reflection")


def square_measure(mu: DiscreteMeasure, sub: int = 2, levels: int = 24) -> DiscreteMeasure:
    """``d mu_hat(x) = 2 d mu(sqrt x)`` for a reflection-symmetric ``mu``.

    A measure on ``R`` maps to ``R+``; one on ``iR`` maps to ``R-``.  Each
    squared cell is split into ``sub`` pieces (geometrically graded pieces
    for the cell touching 0, where the image density has an ``x^(-1/2)``
    singularity) with masses exact for the uniform source density.
    """
    _check_symmetric(mu)
    c = mu.cells
    m = mu.masses
    lo, hi = c[:, 0], c[:, 1]
    # by symmetry only the part on [0, inf) is needed, with doubled mass;
    # a point mass at 0 keeps its mass
    keep = (hi > 0) | ((hi == 0) & (lo == 0))
    lo, hi, m = lo[keep], hi[keep], m[keep]
    out_lo, out_hi, out_m = [], [], []
    for l, h, mass in zip(lo, hi, m):
        if h == l:
            out_lo.append(l * l)
            out_hi.append(h * h)
            out_m.append(mass if h == 0 else 2 * mass)
            continue
        l0 = max(l, 0.0)
        M = 2 * mass * (h - l0) / (h - l)
        if l0 == 0:
            br = np.concatenate([[0.0], h * h * 0.25 ** np.arange(levels, -1, -1)])
        else:
            br = np.linspace(l0 * l0, h * h, sub + 1)
        sq = np.sqrt(br)
        out_lo.extend(br[:-1])
        out_hi.extend(br[1:])
        out_m.extend(M * np.diff(sq) / (h - l0))
    new_lo, new_hi, new_m = np.array(out_lo), np.array(out_hi), np.array(out_m)
    if mu.axis == "imag":
        new_lo, new_hi = -new_hi, -new_lo
    g = 0.5 * (new_lo + new_hi)
    order = np.argsort(g, kind="stable")
    edges = np.stack([new_lo, new_hi], axis=1)[order]
    return DiscreteMeasure(g[order], new_m[order], float(new_m.sum()), False,
                           edges if mu.edges is not None else None, "real")


# ---------------------------------------------------------------------------
# vector energy functional
# ---------------------------------------------------------------------------

REQUIRED_MASSES = (1.0, 2.0 / 3.0, 1.0 / 3.0)


def energy_functional(nu1: DiscreteMeasure, nu2: DiscreteMeasure, nu3: DiscreteMeasure,
                      V1: Field = None, V3: Field = None,
                      sigma2: Optional[DiscreteMeasure] = None,
                      setting: str = "chiral") -> float:
    """``sum I(nu_j) - I(nu1, nu2) - I(nu2, nu3) + int V1 dnu1 + int V3 dnu3``.

    ``setting='chiral'``: ``nu1, nu3`` on ``R+`` and ``nu2`` on ``R-``.
    ``setting='nonchiral'``: ``nu1, nu3`` on ``R`` and ``nu2`` on ``iR``.
    ``sigma2``, when given, must share ``nu2``'s grid; ``nu2 <= sigma2``
    is checked cell by cell.
    """
    if setting not in ("chiral", "nonchiral"):
        raise ValidationError("setting must be 'chiral' or 'nonchiral'")
    for k, (mu, want) in enumerate(zip((nu1, nu2, nu3), REQUIRED_MASSES), start=1):
        if abs(mu.total_mass - want) > 1e-10:
            raise ValidationError(f"nu{k} must have total mass {want:.6g}, got {mu.total_mass:.12g}")
    if setting == "chiral":
        for k, mu in ((1, nu1), (3, nu3)):
            if mu.axis != "real" or np.any(mu.cells[:, 0] < -1e-14):
                raise ValidationError(f"nu{k} must live on R+")
        if nu2.axis != "real" or np.any(nu2.cells[:, 1] > 1e-14):
            raise ValidationError("nu2 must live on R-")
    else:
        if nu1.axis != "real" or nu3.axis != "real" or nu2.axis != "imag":
            raise ValidationError("nonchiral setting: nu1, nu3 on R and nu2 on iR")
    if sigma2 is not None:
        if sigma2.grid.shape != nu2.grid.shape or not np.allclose(sigma2.grid, nu2.grid):
            raise ValidationError("sigma2 must share nu2's grid")
        if np.any(nu2.masses > sigma2.masses + 1e-14):
            raise ValidationError("upper constraint nu2 <= sigma2 violated")
    return (log_energy(nu1) + log_energy(nu2) + log_energy(nu3)
            - mutual_energy(nu1, nu2) - mutual_energy(nu2, nu3)
            + nu1.integrate(V1) + nu3.integrate(V3))


def midpoint_convexity(E: Callable[..., float], triple_a, triple_b) -> dict:
    """Compare ``E`` at the midpoint triple with the endpoint values."""
    mid = tuple(a.mix(b, 0.5) for a, b in zip(triple_a, triple_b))
    ea, eb, em = E(*triple_a), E(*triple_b), E(*mid)
    return {"E_a": ea, "E_b": eb, "E_mid": em, "chord_mid": 0.5 * (ea + eb),
            "convex": em <= 0.5 * (ea + eb) + 1e-12 * max(1.0, abs(ea), abs(eb))}


# ---------------------------------------------------------------------------
# finite-n density and extrapolation
# ---------------------------------------------------------------------------

@dataclass
class DensityEstimate:
    """Extrapolated density on a grid with diagnostics."""

    grid: np.ndarray
    n_list: tuple
    rho_n: Dict[int, np.ndarray]
    rho: np.ndarray
    error: np.ndarray
    masses: Dict[int, float]
    mass: float
    sup_diffs: list
    converging: bool
    nonconvergent_points: np.ndarray
    cumulative: Dict[int, np.ndarray] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "grid": self.grid.tolist(),
            "n_list": list(self.n_list),
            "rho_n": {str(k): v.tolist() for k, v in self.rho_n.items()},
            "rho": self.rho.tolist(),
            "error": self.error.tolist(),
            "masses": {str(k): v for k, v in self.masses.items()},
            "mass": self.mass,
            "sup_diffs": self.sup_diffs,
            "converging": self.converging,
            "nonconvergent_points": self.nonconvergent_points.tolist(),
        }


def _cumulative(ke, xs: np.ndarray) -> np.ndarray:
    """``int_0^x rho_n`` at sorted ``xs`` from one graded composite rule."""
    br = np.concatenate([graded_panels(0.0, xs[0], 1, 30, ratio=0.25), xs[1:]])
    # refine each interval between grid points
    fine = np.unique(np.concatenate([np.linspace(br[i], br[i + 1], 5) for i in range(len(br) - 1)]))
    x, w = panel_rule(fine, 12)
    vals = ke.diagonal(x) / ke.n_used
    cell = np.searchsorted(fine, x) - 1
    per = np.bincount(cell, weights=w * vals, minlength=len(fine) - 1)
    cum = np.concatenate([[0.0], np.cumsum(per)])
    return np.interp(xs, fine, cum)


def density_extrapolate(spec: ModelSpec, n_list: Sequence[int] = (9, 18, 36),
                        grid: Sequence[float] = (), cumulative_grid: Sequence[float] = (),
                        builder=build_kernel) -> DensityEstimate:
    """Richardson extrapolation ``rho_1 ~ 2 rho_{n_k} - rho_{n_{k-1}}`` (error ``O(1/n)``).

    ``spec`` fixes every parameter except ``n``.  The last difference is the
    per-point error bar; points where differences grow are flagged.
    ``cumulative_grid`` optionally records ``int_0^x rho_n`` for the
    exponent estimator.
    """
    n_list = tuple(int(n) for n in n_list)
    if len(n_list) < 2 or any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ValidationError("n_list must be strictly increasing with at least two entries")
    if any(n % 3 for n in n_list):
        raise ValidationError("every n must be divisible by 3")
    xs = np.asarray(grid, dtype=float)
    if xs.size == 0 or np.any(xs <= 0):
        raise ValidationError("density grid must be a nonempty subset of (0, inf)")
    cg = np.sort(np.asarray(cumulative_grid, dtype=float))
    rho_n, masses, cums = {}, {}, {}
    for n in n_list:
        ke = builder(spec.replace(n=n))
        rho_n[n] = ke.diagonal(xs) / n
        xq, wq = density_rule(ke)
        masses[n] = float(np.dot(wq, ke.diagonal(xq)) / n)
        if cg.size:
            cums[n] = _cumulative(ke, cg)
    a, b = n_list[-2], n_list[-1]
    ratio = b / a
    rho = (ratio * rho_n[b] - rho_n[a]) / (ratio - 1)
    err = np.abs(rho_n[b] - rho_n[a]) / (ratio - 1)
    mass = (ratio * masses[b] - masses[a]) / (ratio - 1)
    sups = [float(np.max(np.abs(rho_n[q] - rho_n[p]))) for p, q in zip(n_list, n_list[1:])]
    conv = all(y < x for x, y in zip(sups, sups[1:]))
    bad = np.zeros(xs.shape, dtype=bool)
    if len(n_list) >= 3:
        p = n_list[-3]
        bad = np.abs(rho_n[b] - rho_n[a]) > np.abs(rho_n[a] - rho_n[p])
    return DensityEstimate(xs, n_list, rho_n, rho, err, masses, float(mass), sups, conv,
                           np.flatnonzero(bad), cums)


def edge_exponent(xs: Sequence[float], cumulative: Sequence[float]) -> float:
    """Exponent ``e`` in ``rho ~ x^e`` near 0 from ``int_0^x rho ~ x^(e+1)``.

    The cumulative mass averages out the finite-n oscillations that make
    pointwise slopes of ``rho_n`` unreliable.
    """
    x = np.asarray(xs, dtype=float)
    F = np.asarray(cumulative, dtype=float)
    if np.any(x <= 0) or np.any(F <= 0):
        raise DomainError("exponent fit needs positive abscissae and masses")
    return float(np.polyfit(np.log(x), np.log(F), 1)[0] - 1)
