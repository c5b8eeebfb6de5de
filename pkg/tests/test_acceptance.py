"""Acceptance suite: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v``; the verdict lines are
shown even when output capture is on.
"""
import cmath
import math
import time

import numpy as np
import pytest
from scipy import stats

from c2mm import ode3
from c2mm.biortho import build_system, check_mop
from c2mm.cli import DEFAULT_ODE_POINTS, run
from c2mm.equilibrium import (DiscreteMeasure, density_extrapolate, edge_exponent, log_energy,
                              mutual_energy, square_measure)
from c2mm.kernel import build_kernel, reproducing_defect, trace
from c2mm.mcsim import (compare_to_kernel, detailed_balance_1x1, sample_gaussian,
                        sample_gaussian_params, sample_wishart_reference)
from c2mm.model import ModelSpec
from c2mm.phase import (ScalingPath, classify, curve_intersections, gamma_expansion_fit,
                        solve_gamma, triple_scaling_probe)


@pytest.fixture
def verdict(capsys):
    def report(k: int, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {k}: {detail}")
        assert ok, detail
    return report


BIORTHO_SPECS = [
    ModelSpec.quadratic(-0.5, 0.8, 6, -0.5),
    ModelSpec.quadratic(0.0, 1.0, 16, -1.0),
    ModelSpec(0.5, 0.7, 8, (0, 1), (0, 0.2, -0.1, 0.3)),
    ModelSpec(2.0, 0.6, 10, (0, 0.5, 0.5), (0, 0.1, 0.5)),
    ModelSpec.quadratic(0.5, 1.5, 12, 1.0),
    ModelSpec(0.0, 0.9, 16, (0, 1, 0, 0.1), (0, 0, 0, 0.25)),
]


@pytest.fixture(scope="module")
def biortho_runs():
    out = []
    for sp in BIORTHO_SPECS:
        t0 = time.perf_counter()
        s = build_system(sp, 16)
        mops = [check_mop(s, v).max_residual for v in ("MOP1", "MOP2")]
        out.append((s, mops, time.perf_counter() - t0))
    return out


def test_criterion_01_biorthogonality(biortho_runs, verdict):
    res = [s.biorth_residual() for s, _, _ in biortho_runs]
    secs = [t for _, _, t in biortho_runs]
    ok = max(res) <= 1e-8 and max(secs) <= 120
    verdict(1, ok, f"max residual {max(res):.2e}, slowest spec {max(secs):.1f} s")


def test_criterion_02_multiple_orthogonality(biortho_runs, verdict):
    worst = max(max(m) for _, m, _ in biortho_runs)
    verdict(2, worst <= 1e-7, f"max scaled MOP residual {worst:.2e} over 6 specs")


def test_criterion_03_kernel_identities(verdict):
    rng = np.random.default_rng(3)
    terr, rerr = 0.0, 0.0
    for n in (3, 6, 9):
        ke = build_kernel(ModelSpec.quadratic(0.5, 0.8, n, -0.5))
        terr = max(terr, abs(trace(ke) - n))
        for x, z in rng.uniform(0.1, 2.5, size=(4, 2)):
            rerr = max(rerr, reproducing_defect(ke, x, z))
    verdict(3, terr <= 1e-6 and rerr <= 1e-6, f"trace error {terr:.2e}, reproducing defect {rerr:.2e}")


ODE_SPECS = [
    ModelSpec.quadratic(0.3, 0.9, 4, -0.5),
    ModelSpec.quadratic(0.0, 0.5, 3, 0.0),
    ModelSpec.quadratic(1.5, 1.2, 8, 0.7),
]


@pytest.fixture(scope="module")
def triples():
    return [ode3.SolutionTriple(sp) for sp in ODE_SPECS]


def test_criterion_04_ode_residual(triples, verdict):
    assert len(DEFAULT_ODE_POINTS) == 20
    worst = max(ode3.ode_residual(tr.spec, tr.handle(j), z)
                for tr in triples for z in DEFAULT_ODE_POINTS for j in range(3))
    verdict(4, worst <= 1e-7, f"max relative residual {worst:.2e} (3 specs, 20 points, 3 solutions)")


def test_criterion_05_jumps(triples, verdict):
    worst = 0.0
    for tr in triples:
        for x in (-2.5, -1.5, -0.7, -0.3, -0.05, 0.05, 0.3, 0.7, 1.5, 2.5):
            worst = max(worst, *ode3.jump_residuals(tr, x).values())
    verdict(5, worst <= 1e-8, f"max relative jump defect {worst:.2e} (4 relations, 5 points each)")


def test_criterion_06_wronskian(triples, verdict):
    zs = [1 + 1j, 2 - 1j, -1.5 + 0.5j, 0.5 + 2.5j, -2 - 2j]
    spread = 0.0
    for tr in triples:
        v = [ode3.wronskian_det(tr, z) * z ** (2 - 2 * tr.nu) for z in zs]
        m = sum(v) / len(v)
        spread = max(spread, max(abs(x - m) for x in v) / abs(m))
    t1 = ode3.SolutionTriple(ModelSpec.quadratic(1.0, 0.9, 4, -0.5))
    v1 = [ode3.wronskian_det(t1, z) for z in zs]
    s1 = max(abs(x / v1[0] - 1) for x in v1)
    verdict(6, spread <= 1e-6 and s1 <= 1e-8, f"scaled spread {spread:.2e}, nu=1 spread {s1:.2e}")


def test_criterion_07_theta_and_prefactors(verdict):
    a, t = -0.5, 0.9
    ts = ode3.ThetaSystem(a, t)
    w = cmath.exp(2j * math.pi / 3)
    cerr = 0.0
    for j in (1, 2, 3):
        f = ts.fit_expansion(j)
        cerr = max(cerr,
                   abs(f["z^(2/3)"] / (1.5 * w ** (j - 1) * t ** (4 / 3)) - 1),
                   abs(f["z^(1/3)"] / (-a * w ** ((4 - j) % 3) * t ** (2 / 3)) - 1),
                   abs(f["const"] / (a * a / 3) - 1))
    sp = ModelSpec.quadratic(0.3, t, 4, a)
    perr, extra = 0.0, 0.0
    for j in range(3):
        for ang in (math.pi / 3, -math.pi / 3):
            r = ode3.asymptotic_match(sp, j, ang)
            perr = max(perr, r["L_rel_err"])
            extra = max(extra, r["L_extra_rel_err"])
    verdict(7, cerr <= 1e-3 and perr <= 1e-3,
            f"theta coefficient error {cerr:.2e}, prefactor error {perr:.2e} "
            f"(with an extra exp(alpha^2 n/3) factor the error would be {extra:.2f})")


def test_criterion_08_connection_and_pq(triples, verdict):
    cz = [2 + 1j, 1 - 2j, 0.5 + 0.3j, -2 + 1j, -1 - 2j, -0.5 + 0.3j]
    conn = max(ode3.connection_residual(a, nu, z) for a, nu in ((-0.7, 0.4), (0.5, 1.0)) for z in cz)
    pz = [0.7 + 0.4j, -1.2 + 0.8j, 0.3 + 1.5j, 0.7 - 0.4j, -1.2 - 0.8j, 0.3 - 1.5j]
    pq = max(ode3.pq_residual(tr, j, z) for tr in triples[:2] for j in range(3) for z in pz)
    verdict(8, conn <= 1e-7 and pq <= 1e-7, f"connection defect {conn:.2e}, p-q defect {pq:.2e}")


def test_criterion_09_phase_diagram(verdict):
    samples = [(2, 0.8, "I"), (1, 3, "II"), (-2, 2, "III"), (-2.5, 0.2, "IV")]
    labels = [classify(a, t, with_gamma=False).case for a, t, _ in samples]
    cert = curve_intersections((-10.0, 10.0))
    pts = cert["intersections"]
    one = len(pts) == 1 and abs(pts[0][0] + 1) < 1e-6 and abs(pts[0][1] - 1) < 1e-6
    ok = labels == [c for _, _, c in samples] and one and cert["negative_gaps"] == 0
    verdict(9, ok, f"labels {labels}, intersections {pts}")


def test_criterion_10_gamma(verdict):
    g = solve_gamma(-1.0, 1.0)
    fits = [gamma_expansion_fit(a, b) for a, b in ((0.5, -0.3), (1.0, 0.2))]
    worst = max(max(f["c1_rel_err"], f["c2_rel_err"]) for f in fits)
    verdict(10, abs(g - 1) <= 1e-14 and worst <= 0.01,
            f"|gamma(-1,1) - 1| = {abs(g - 1):.1e}, expansion error {worst:.2e}")


def _imag(m):
    return DiscreteMeasure(m.grid, m.masses, m.total_mass, True, m.edges, "imag")


def test_criterion_11_energy_squaring(verdict):
    arc = DiscreteMeasure.arcsine(-1, 1, 800)
    semi = DiscreteMeasure.semicircle(2.0, 800)
    pairs = [(arc, semi), (semi, DiscreteMeasure.semicircle(0.7, 800, mass=0.5)), (semi, _imag(arc))]
    worst = max(abs(mutual_energy(square_measure(p), square_measure(q)) - 2 * mutual_energy(p, q))
                for p, q in pairs)
    self_err = abs(log_energy(arc) - math.log(2))
    verdict(11, worst <= 1e-4 and self_err <= 1e-3,
            f"squaring defect {worst:.2e}, arcsine energy error {self_err:.2e}")


def test_criterion_12_density(verdict):
    t0 = time.perf_counter()
    reg = density_extrapolate(ModelSpec.quadratic(0.0, 0.5, 9, 0.0), grid=np.linspace(0.9, 3.6, 40))
    xs = np.geomspace(0.02, 0.2, 10)
    exps, rich = [], []
    for a, t in ((0.0, 0.8), (-1.0, 1.0)):
        est = density_extrapolate(ModelSpec.quadratic(0.0, t, 9, a), grid=[0.5], cumulative_grid=xs)
        exps.append(edge_exponent(xs, est.cumulative[36]))
        rich.append(edge_exponent(xs, 2 * est.cumulative[36] - est.cumulative[18]))
    secs = time.perf_counter() - t0
    ok = (reg.converging and abs(reg.mass - 1) <= 2e-3 and abs(exps[0] + 0.5) <= 0.1
          and abs(exps[1] + 0.25) <= 0.1 and secs <= 900)
    verdict(12, ok, f"sup diffs {[round(s, 4) for s in reg.sup_diffs]}, mass {reg.mass:.6f}, "
                    f"exponents at n=36 {exps[0]:.3f} / {exps[1]:.3f} "
                    f"(extrapolated {rich[0]:.3f} / {rich[1]:.3f}), {secs:.0f} s")


def test_criterion_13_triple_scaling(verdict):
    runs = [triple_scaling_probe(ScalingPath(a, b)) for a, b in ((0.0, 0.0), (0.5, -0.3))]
    ok = all(r["cauchy"] for r in runs)
    verdict(13, ok, "deltas " + ", ".join(str([round(d, 4) for d in r["deltas"]]) for r in runs))


def test_criterion_14_monte_carlo(verdict):
    sp = ModelSpec(0.0, 0.5, 6, (0, 1), (0, 1))
    ks = compare_to_kernel(sample_gaussian(sp, 10000, 2026), build_kernel(sp))["ks"]
    ctrl = sample_gaussian_params(6, 0.0, 1.0, 1.0, 0.0, 10000, 17)
    ref = sample_wishart_reference(6, 0.0, 1 / 6, 10000, 18)
    ks0 = stats.ks_2samp(ctrl.ravel(), ref.ravel()).statistic
    db = detailed_balance_1x1(ModelSpec.quadratic(0.0, 0.5, 1, -0.7))["max_rel_mismatch"]
    verdict(14, ks < 0.03 and ks0 < 0.02 and db <= 1e-3,
            f"Gaussian KS {ks:.4f}, Wishart control KS {ks0:.4f}, detailed balance {db:.1e}")


def test_criterion_15_determinism(tmp_path, monkeypatch, verdict):
    import json
    lin, quad = tmp_path / "lin.json", tmp_path / "quad.json"
    lin.write_text(json.dumps({"nu": 0, "tau": 0.5, "n": 3, "V": [0, 1], "W": [0, 1]}))
    quad.write_text(json.dumps({"nu": 0, "tau": 0.5, "n": 3, "V": [0, 1], "W": [0, 0, 0.5]}))
    spec = quad
    cmds = [
        ["sample", "--spec", str(lin), "--count", "300", "--seed", "5"],
        ["sample", "--spec", str(quad), "--mode", "mcmc", "--count", "200", "--burn-in", "100", "--seed", "5"],
        ["kernel", "--spec", str(spec), "--density", "0.5,1,2", "--emit-plot", "PLOT"],
        ["phase-map", "--n-alpha", "9", "--n-tau", "9", "--emit-plot", "PLOT"],
    ]
    same = True
    for i, cmd in enumerate(cmds):
        blobs = []
        for k, threads in enumerate(("1", "4", "1")):
            monkeypatch.setenv("C2MM_THREADS", threads)
            out, plot = tmp_path / f"o{i}_{k}", tmp_path / f"p{i}_{k}.svg"
            argv = [str(plot) if a == "PLOT" else a for a in cmd] + ["--out", str(out)]
            assert run(argv) == 0
            blobs.append((out.read_bytes(), plot.read_bytes() if plot.exists() else b""))
        same = same and blobs[0] == blobs[1] == blobs[2]
    verdict(15, same, f"{len(cmds)} commands rerun with 1 and 4 threads")
