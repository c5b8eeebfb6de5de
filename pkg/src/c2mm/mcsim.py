"""Monte Carlo sampling of the matrix model and comparison with the kernel.

``Phi1`` and ``Phi2`` are ``n x (n + nu)`` complex matrices with density
proportional to ``exp(-n Tr(V(Phi1 Phi1^*) + W(Phi2 Phi2^*) - tau (Phi1^* Phi2 + Phi2^* Phi1)))``.
Each chain draws from its own Philox stream keyed by ``(seed, chain)``, so
results depend only on the chain layout, never on the thread count.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy import stats

from .errors import C2MMError, ToleranceError, ValidationError
from .kernel import GapRequest, KernelEvaluator, gap_probability
from .model import ModelSpec
from .specfun import graded_panels, panel_rule

__all__ = [
    "SampleBatch",
    "chain_rng",
    "sample_gaussian",
    "sample_gaussian_params",
    "sample_wishart_reference",
    "sample_mcmc",
    "entry_covariance",
    "gaussian_logdensity_spread",
    "kernel_cdf",
    "compare_to_kernel",
    "min_gap_check",
    "detailed_balance_1x1",
    "oracle_1x1",
    "thread_count",
]

MASK64 = (1 << 64) - 1


def thread_count() -> int:
    """``C2MM_THREADS`` if set, else the number of logical cores."""
    v = os.environ.get("C2MM_THREADS")
    if v:
        try:
            k = int(v)
        except ValueError:
            raise ValidationError("C2MM_THREADS must be a positive integer")
        if k < 1:
            raise ValidationError("C2MM_THREADS must be a positive integer")
        return k
    return os.cpu_count() or 1


def chain_rng(seed: int, chain: int) -> np.random.Generator:
    """Counter-based generator for one chain."""
    return np.random.Generator(np.random.Philox(key=np.array([seed & MASK64, chain & MASK64], dtype=np.uint64)))


@dataclass
class SampleBatch:
    """Squared singular values of ``Phi1`` (one sorted row per configuration)."""

    spec: ModelSpec
    seed: int
    chains: int
    per_chain: List[int]
    values: np.ndarray
    mode: str
    acceptance: Optional[np.ndarray] = None
    steps: Optional[np.ndarray] = None
    tuning_ok: bool = True
    meta: dict = field(default_factory=dict)

    @property
    def count(self) -> int:
        return int(self.values.shape[0])


def _split(count: int, chains: int) -> List[int]:
    if count < 1 or chains < 1:
        raise ValidationError("count and chains must be positive")
    base, extra = divmod(count, chains)
    return [base + (1 if c < extra else 0) for c in range(chains)]


def _run_chains(fn, chains: int) -> list:
    with ThreadPoolExecutor(max_workers=min(thread_count(), chains)) as ex:
        return list(ex.map(fn, range(chains)))


def _integer_nu(spec: ModelSpec) -> int:
    nu = spec.nu
    if nu < 0 or nu != int(nu):
        raise ValidationError("matrix sampling needs an integer nu >= 0")
    return int(nu)


def _cn(rng: np.random.Generator, shape) -> np.ndarray:
    """Standard complex normal, ``E|z|^2 = 1``."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2)


def _sq_singular_values(Phi: np.ndarray) -> np.ndarray:
    """Sorted eigenvalues of ``Phi Phi^*`` for a stack of matrices."""
    s = np.linalg.svd(Phi, compute_uv=False)
    return np.sort(s * s, axis=-1)


# ---------------------------------------------------------------------------
# Gaussian mode
# ---------------------------------------------------------------------------

def _linear_coeffs(spec: ModelSpec):
    if len(spec.V) != 2 or len(spec.W) != 2 or spec.V[0] != 0 or spec.W[0] != 0:
        raise ValidationError("Gaussian mode needs V = c1 x and W = c2 y")
    return spec.V[1], spec.W[1], spec.tau


def _gaussian_factor(n: int, c1: float, c2: float, tau: float) -> np.ndarray:
    """``L`` with ``L L^* = (n A)^(-1)``, ``A = [[c1, -tau], [-tau, c2]]``."""
    if not (c1 > 0 and c2 > 0 and tau >= 0 and tau * tau < c1 * c2):
        raise ValidationError("Gaussian mode needs c1, c2 > 0 and 0 <= tau^2 < c1 c2")
    cov = np.linalg.inv(n * np.array([[c1, -tau], [-tau, c2]]))
    return np.linalg.cholesky(cov)


def _gaussian_pairs(rng, n: int, m: int, L: np.ndarray, count: int):
    w = _cn(rng, (count, 2, n, m))
    phi1 = L[0, 0] * w[:, 0]
    phi2 = L[1, 0] * w[:, 0] + L[1, 1] * w[:, 1]
    return phi1, phi2


def sample_gaussian_params(n: int, nu: int, c1: float, c2: float, tau: float, count: int,
                           seed: int, chains: int = 4) -> np.ndarray:
    """Exact Gaussian sampling from explicit coefficients; ``tau = 0`` is allowed."""
    if int(n) != n or n < 1 or int(nu) != nu or nu < 0:
        raise ValidationError("n must be positive and nu a nonnegative integer")
    n, m = int(n), int(n) + int(nu)
    L = _gaussian_factor(n, c1, c2, tau)
    sizes = _split(count, chains)

    def run(c):
        phi1, _ = _gaussian_pairs(chain_rng(seed, c), n, m, L, sizes[c])
        return _sq_singular_values(phi1)

    return np.concatenate(_run_chains(run, chains), axis=0)


def sample_gaussian(spec: ModelSpec, count: int, seed: int, chains: int = 4) -> SampleBatch:
    """Exact sampling for ``V = c1 x``, ``W = c2 y``, integer ``nu``."""
    c1, c2, tau = _linear_coeffs(spec)
    nu = _integer_nu(spec)
    vals = sample_gaussian_params(spec.n, nu, c1, c2, tau, count, seed, chains)
    return SampleBatch(spec, seed, chains, _split(count, chains), vals, "gaussian")


def sample_wishart_reference(n: int, nu: int, scale: float, count: int, seed: int) -> np.ndarray:
    """Complex Wishart eigenvalues via the bidiagonal (chi-distributed) model.

    Independent of :func:`sample_gaussian`: ``B`` has diagonal
    ``chi_{2(n+nu-i)}`` and subdiagonal ``chi_{2(n-1-i)}`` entries scaled by
    ``sqrt(scale / 2)``; the eigenvalues of ``B B^T`` are those of ``G G^*``
    with ``E|G_ij|^2 = scale``.
    """
    rng = np.random.Generator(np.random.Philox(key=np.array([seed & MASK64, 0xC0FFEE], dtype=np.uint64)))
    i = np.arange(n)
    diag = np.sqrt(rng.chisquare(2 * (n + nu - i), size=(count, n)))
    sub = np.sqrt(rng.chisquare(np.maximum(2 * (n - 1 - i[:-1]), 1), size=(count, n - 1))) if n > 1 else None
    B = np.zeros((count, n, n))
    B[:, i, i] = diag
    if n > 1:
        B[:, i[1:], i[:-1]] = sub
    ev = np.linalg.eigvalsh(B @ np.transpose(B, (0, 2, 1)))
    return np.sort(ev * scale / 2, axis=-1)


def entry_covariance(spec: ModelSpec, count: int, seed: int) -> dict:
    """Empirical ``Cov(Re Phi1_ij, Re Phi2_ij)`` against ``tau / (2 n (c1 c2 - tau^2))``."""
    c1, c2, tau = _linear_coeffs(spec)
    L = _gaussian_factor(spec.n, c1, c2, tau)
    phi1, phi2 = _gaussian_pairs(chain_rng(seed, 0), spec.n, spec.n + _integer_nu(spec), L, count)
    x, y = phi1.real.ravel(), phi2.real.ravel()
    cov = float(np.mean((x - x.mean()) * (y - y.mean())))
    se = float(np.std((x - x.mean()) * (y - y.mean())) / math.sqrt(x.size))
    return {"empirical": cov, "predicted": tau / (2 * spec.n * (c1 * c2 - tau * tau)), "stderr": se}


def gaussian_logdensity_spread(spec: ModelSpec, count: int, seed: int) -> float:
    """Variance over samples of ``log target - log sampler density``."""
    c1, c2, tau = _linear_coeffs(spec)
    n = spec.n
    L = _gaussian_factor(n, c1, c2, tau)
    rng = chain_rng(seed, 0)
    w = _cn(rng, (count, 2))
    v1 = L[0, 0] * w[:, 0]
    v2 = L[1, 0] * w[:, 0] + L[1, 1] * w[:, 1]
    target = -n * (c1 * abs(v1) ** 2 + c2 * abs(v2) ** 2 - 2 * tau * (np.conj(v1) * v2).real)
    sampler = -np.sum(np.abs(w) ** 2, axis=1)
    return float(np.var(target - sampler))


# ---------------------------------------------------------------------------
# MCMC mode
# ---------------------------------------------------------------------------

def _quadratic_alpha(spec: ModelSpec) -> float:
    if tuple(spec.V) != (0.0, 1.0):
        raise ValidationError("MCMC mode needs V(x) = x")
    a = spec.alpha
    if a is None:
        raise ValidationError("MCMC mode needs W(y) = y^2/2 + alpha y")
    return a


def _log_cond_phi2(phi1: np.ndarray, phi2: np.ndarray, n: int, alpha: float, tau: float) -> float:
    """``log p(Phi2 | Phi1)`` up to a constant."""
    G = phi2 @ phi2.conj().T
    trW = 0.5 * np.real(np.vdot(G, G)) + alpha * np.real(np.trace(G))
    cross = 2 * tau * np.real(np.vdot(phi1, phi2))
    return -n * (trW - cross)


def _entry_delta(phi1, phi2, G, i, j, d, n, alpha, tau):
    """Change of ``log p(Phi2 | Phi1)`` when ``Phi2[i, j] += d``.

    Only row ``i`` of ``Phi2`` moves, so ``G = Phi2 Phi2^*`` changes in row
    and column ``i``.
    """
    r = phi2[i]
    dG_row = d * phi2[:, j].conj()
    dG_row[i] = 2 * (d * np.conj(r[j])).real + abs(d) ** 2
    Gi = G[i].copy()
    new_row = Gi + dG_row
    # ||G'||_F^2 - ||G||_F^2 over row i and column i (Hermitian)
    old = 2 * np.sum(np.abs(Gi) ** 2) - abs(Gi[i]) ** 2
    new = 2 * np.sum(np.abs(new_row) ** 2) - abs(new_row[i]) ** 2
    dtr = dG_row[i].real
    dcross = 2 * tau * (np.conj(phi1[i, j]) * d).real
    return -n * (0.5 * (new - old) + alpha * dtr - dcross), new_row


def _mcmc_chain(spec: ModelSpec, alpha: float, rng: np.random.Generator, samples: int,
                burn_in: int, step0: float, max_abs: float = 1e6):
    n, tau = spec.n, spec.tau
    m = n + int(spec.nu)
    phi2 = _cn(rng, (n, m)) / math.sqrt(n)
    step = step0
    out = np.empty((samples, n))
    acc_total = prop_total = 0
    acc_window = prop_window = 0
    for sweep in range(burn_in + samples):
        # exact Gaussian update: Phi1 | Phi2 ~ CN(tau Phi2, 1/n)
        phi1 = tau * phi2 + _cn(rng, (n, m)) / math.sqrt(n)
        G = phi2 @ phi2.conj().T
        props = _cn(rng, (n, m)) * step
        logu = np.log(rng.random((n, m)))
        acc = 0
        for i in range(n):
            for j in range(m):
                d = props[i, j]
                dl, new_row = _entry_delta(phi1, phi2, G, i, j, d, n, alpha, tau)
                if logu[i, j] < dl:
                    phi2[i, j] += d
                    G[i, :] = new_row
                    G[:, i] = new_row.conj()
                    G[i, i] = new_row[i].real
                    acc += 1
        if not np.all(np.isfinite(phi2)) or np.max(np.abs(phi2)) > max_abs:
            raise C2MMError("MCMC diverged: Phi2 escaped to infinity (check W)")
        if sweep < burn_in:
            acc_window += acc
            prop_window += n * m
            if (sweep + 1) % 50 == 0:
                rate = acc_window / prop_window
                step *= math.exp(rate - 0.4)
                acc_window = prop_window = 0
        else:
            acc_total += acc
            prop_total += n * m
            out[sweep - burn_in] = _sq_singular_values(phi1)
    return out, acc_total / max(prop_total, 1), step


def sample_mcmc(spec: ModelSpec, count: int, seed: int, step: float = 0.3, chains: int = 4,
                burn_in: int = 2000) -> SampleBatch:
    """Gibbs update of ``Phi1`` plus entrywise random-walk Metropolis on ``Phi2``.

    The step is tuned towards acceptance 0.4 during burn-in; the batch is
    flagged when the post-burn-in acceptance leaves ``[0.2, 0.6]``.
    """
    alpha = _quadratic_alpha(spec)
    _integer_nu(spec)
    if not step > 0:
        raise ValidationError("step must be positive")
    sizes = _split(count, chains)

    def run(c):
        return _mcmc_chain(spec, alpha, chain_rng(seed, c), sizes[c], burn_in, step)

    res = _run_chains(run, chains)
    vals = np.concatenate([r[0] for r in res], axis=0)
    acc = np.array([r[1] for r in res])
    steps = np.array([r[2] for r in res])
    ok = bool(np.all((acc >= 0.2) & (acc <= 0.6)))
    return SampleBatch(spec, seed, chains, sizes, vals, "mcmc", acc, steps, ok,
                       {"burn_in": burn_in})


# ---------------------------------------------------------------------------
# 1 x 1 oracle
# ---------------------------------------------------------------------------

def oracle_1x1(spec: ModelSpec, grid_x: Sequence[float], panels: int = 60, order: int = 20) -> dict:
    """Law of ``x = |Phi1|^2`` for ``n = 1``, ``nu = 0`` by dense 2D integration.

    Integrating out the phases, ``(x, y) = (|Phi1|^2, |Phi2|^2)`` has
    density ``I_0(2 tau sqrt(xy)) exp(-x - W(y))``.
    """
    from scipy.special import i0e

    if spec.n != 1 or spec.nu != 0:
        raise ValidationError("the 1x1 oracle needs n = 1 and nu = 0")
    tau = spec.tau
    X = 60.0
    xs, wx = panel_rule(np.linspace(0, X, panels + 1), order)
    ys, wy = panel_rule(np.linspace(0, X, panels + 1), order)
    arg = 2 * tau * np.sqrt(np.outer(xs, ys))
    logd = np.log(i0e(arg)) + arg - xs[:, None] - spec.Wy(ys)[None, :]
    dens = np.exp(logd)
    Z = float(wx @ dens @ wy)
    marg = dens @ wy / Z
    cdf = []
    for t in grid_x:
        xt, wt = panel_rule(np.linspace(0, t, 21), order)
        argt = 2 * tau * np.sqrt(np.outer(xt, ys))
        dt = np.exp(np.log(i0e(argt)) + argt - xt[:, None] - spec.Wy(ys)[None, :])
        cdf.append(float(wt @ dt @ wy / Z))
    return {"Z": Z, "mean_x": float(wx @ (xs * marg)), "cdf": np.array(cdf),
            "log_density": lambda x, y: (np.log(i0e(2 * tau * np.sqrt(x * y))) + 2 * tau * np.sqrt(x * y)
                                         - x - spec.Wy(y) - math.log(Z))}


def detailed_balance_1x1(spec: ModelSpec, pairs: int = 200, seed: int = 0, step: float = 0.5) -> dict:
    """Detailed balance of the ``Phi2`` Metropolis move for ``n = 1``.

    For random states ``a, b`` (with ``Phi1`` fixed) compares
    ``pi(a) T(a -> b)`` with ``pi(b) T(b -> a)``.  ``pi`` is the joint
    target normalized by dense integration, ``T`` uses the sampler's own
    acceptance rule and the symmetric Gaussian proposal density.
    """
    alpha = _quadratic_alpha(spec)
    orc = oracle_1x1(spec, [1.0])
    rng = chain_rng(seed, 0)
    worst = 0.0
    tau = spec.tau
    for _ in range(pairs):
        z1 = _cn(rng, (1, 1))
        a = _cn(rng, (1, 1))
        d = _cn(rng, (1, 1)) * step
        b = a + d
        G = a @ a.conj().T
        dl, _ = _entry_delta(z1, a.copy(), G, 0, 0, d[0, 0], 1, alpha, tau)
        acc_ab = min(1.0, math.exp(min(dl, 0.0)) if dl < 0 else 1.0)
        Gb = b @ b.conj().T
        dl2, _ = _entry_delta(z1, b.copy(), Gb, 0, 0, -d[0, 0], 1, alpha, tau)
        acc_ba = min(1.0, math.exp(min(dl2, 0.0)) if dl2 < 0 else 1.0)
        q = math.exp(-abs(d[0, 0]) ** 2 / step ** 2) / (math.pi * step ** 2)

        def joint(p2):
            # joint density of (Phi1, Phi2) in C^2, normalized via the oracle
            x, y = abs(z1[0, 0]) ** 2, abs(p2) ** 2
            cross = 2 * tau * (np.conj(z1[0, 0]) * p2).real
            return math.exp(-x - spec.Wy(y) + cross - math.log(orc["Z"]) - 2 * math.log(math.pi))

        lhs = joint(a[0, 0]) * q * acc_ab
        rhs = joint(b[0, 0]) * q * acc_ba
        if max(lhs, rhs) > 0:
            worst = max(worst, abs(lhs - rhs) / max(lhs, rhs))
    return {"max_rel_mismatch": worst, "pairs": pairs, "Z": orc["Z"]}


# ---------------------------------------------------------------------------
# comparison with the kernel
# ---------------------------------------------------------------------------

def kernel_cdf(ke: KernelEvaluator, xmax: Optional[float] = None, panels: int = 40, order: int = 10):
    """Normalized CDF of ``K_n(x, x) / n``.

    On each panel the density is interpolated at its Gauss-Legendre nodes
    and the interpolant is integrated exactly.  Panels are graded
    geometrically towards 0.  Returns ``(F, total)`` with ``total`` the
    unnormalized mass.
    """
    L = np.polynomial.legendre
    X = xmax or ke.support_bound()
    br = graded_panels(0.0, X, panels, 40, ratio=0.5)
    g, gw = L.leggauss(order)
    half = 0.5 * np.diff(br)
    mid = 0.5 * (br[:-1] + br[1:])
    x = (mid[:, None] + half[:, None] * g[None, :]).ravel()
    vals = (ke.diagonal(x) / ke.n_used).reshape(-1, order)
    # Legendre coefficients of the interpolant on each panel
    coef = vals @ np.linalg.inv(L.legvander(g, order - 1)).T
    anti = np.array([L.legint(c, lbnd=-1) for c in coef]) * half[:, None]
    per = anti @ L.legvander(np.array([1.0]), order)[0]
    cum = np.concatenate([[0.0], np.cumsum(per)])
    total = float(cum[-1])

    def F(t):
        t = np.asarray(t, dtype=float)
        tc = np.clip(t, 0.0, X)
        i = np.clip(np.searchsorted(br, tc, side="right") - 1, 0, len(per) - 1)
        u = (tc - mid[i]) / half[i]
        out = cum[i] + np.einsum("ij,ij->i", L.legvander(u.ravel(), order), anti[i.ravel()]).reshape(t.shape)
        return np.where(t <= 0, 0.0, np.where(t >= X, 1.0, out / total))
    return F, total


def compare_to_kernel(batch: SampleBatch, ke: KernelEvaluator, bins: int = 6) -> dict:
    """KS distance of the pooled sample to ``K_n(x, x)/n`` and a pair-correlation check."""
    if batch.spec != ke.spec:
        raise ValidationError("batch and kernel were built for different specs")
    x = np.sort(batch.values.ravel())
    N = x.size
    F, total = kernel_cdf(ke)
    Fx = F(x)
    i = np.arange(N)
    ks = float(np.max(np.maximum((i + 1) / N - Fx, Fx - i / N)))
    # pair correlation on a coarse grid of bins
    edges = np.quantile(x, np.linspace(0, 1, bins + 1))
    edges[0] = max(edges[0] * 0.999, 1e-300)
    V = batch.values
    S = V.shape[0]
    b = np.clip(np.searchsorted(edges, V, side="right") - 1, 0, bins - 1)
    counts = np.zeros((bins, bins))
    for r in range(V.shape[1]):
        for s in range(V.shape[1]):
            if r != s:
                np.add.at(counts, (b[:, r], b[:, s]), 1.0)
    emp = counts / S
    pred = np.zeros((bins, bins))
    gx, gw = np.polynomial.legendre.leggauss(6)
    for i in range(bins):
        xi = 0.5 * (edges[i] + edges[i + 1]) + 0.5 * (edges[i + 1] - edges[i]) * gx
        wi = 0.5 * (edges[i + 1] - edges[i]) * gw
        for j in range(bins):
            yj = 0.5 * (edges[j] + edges[j + 1]) + 0.5 * (edges[j + 1] - edges[j]) * gx
            wj = 0.5 * (edges[j + 1] - edges[j]) * gw
            Kxy = ke.matrix(xi, yj)
            Kyx = ke.matrix(yj, xi).T
            dx = ke.diagonal(xi)
            dy = ke.diagonal(yj)
            rho2 = np.outer(dx, dy) - Kxy * Kyx
            pred[i, j] = float(wi @ rho2 @ wj)
    se = np.sqrt(np.maximum(counts, 1.0)) / S
    z = np.abs(emp - pred) / se
    return {
        "ks": ks,
        "n_samples": int(S),
        "kernel_mass": float(total),
        "pair_edges": edges.tolist(),
        "pair_empirical": emp.tolist(),
        "pair_predicted": pred.tolist(),
        "pair_max_z": float(np.max(z)),
    }


def min_gap_check(batch: SampleBatch, ke: KernelEvaluator, s_values: Sequence[float], m: int = 32) -> dict:
    """Empirical ``P(min x > s)`` against the gap probability ``det(I - K)`` on ``[0, s]``."""
    mins = batch.values[:, 0]
    S = len(mins)
    rows = []
    for s in s_values:
        emp = float(np.mean(mins > s))
        pred = gap_probability(ke, GapRequest(0.0, float(s), m))
        se = math.sqrt(max(pred * (1 - pred), 1e-12) / S)
        rows.append({"s": float(s), "empirical": emp, "gap": pred, "stderr": se,
                     "z": abs(emp - pred) / se})
    return {"rows": rows, "max_z": max(r["z"] for r in rows)}
