import cmath
import math

import mpmath as mp
import numpy as np
import pytest

from c2mm import ode3
from c2mm.errors import DomainError, ValidationError
from c2mm.model import ModelSpec


@pytest.fixture(scope="module")
def spec():
    return ModelSpec.quadratic(0.3, 0.9, 4, -0.5)


@pytest.fixture(scope="module")
def triple(spec):
    return ode3.SolutionTriple(spec)


def test_ode_residual_examples(spec, triple):
    assert ode3.ode_residual(spec, triple.handle(0), 1 + 1j) < 1e-7
    assert ode3.ode_residual(spec, triple.handle(2), -2 + 0.5j) < 1e-7
    assert ode3.ode_residual(spec, triple.handle(1), 0.4 - 2j) < 1e-7


def test_ode_negative_control(spec):
    cubic = lambda z, k: [1 + z + z ** 2 + z ** 3, 1 + 2 * z + 3 * z ** 2, 2 + 6 * z, 6][k]
    assert ode3.ode_residual(spec, cubic, 1 + 1j) > 1e-2


def test_p0_small_x(spec, triple):
    nu, c, n = spec.nu, spec.c, spec.n
    A = c ** nu / math.gamma(nu + 1) * float(mp.quad(lambda y: y ** nu * mp.exp(-n * spec.Wy(float(y))), [0, mp.inf]))
    xs = np.array([1e-6, 1e-5])
    vals = [triple.value(0, x).real for x in xs]
    slope = math.log(vals[1] / vals[0]) / math.log(xs[1] / xs[0])
    assert abs(slope - nu) < 0.01
    assert abs(vals[0] / (A * xs[0] ** nu) - 1) < 1e-3


def test_p0_cut(triple):
    with pytest.raises(DomainError):
        triple.value(0, -1.0)


def test_jumps(triple):
    for x in (-1.5, 1.5):
        assert max(ode3.jump_residuals(triple, x).values()) < 1e-8


def test_schwarz_symmetry(triple):
    ts = ode3.ThetaSystem(-0.5, 0.9)
    rng = np.random.default_rng(3)
    for _ in range(10):
        z = complex(*rng.uniform(-3, 3, 2))
        assert abs(triple.value(0, z.conjugate()) - triple.value(0, z).conjugate()) < 1e-10 * abs(triple.value(0, z))
        for j in (1, 2, 3):
            assert abs(ts.theta(z.conjugate(), j) - ts.theta(z, j).conjugate()) < 1e-10 * (1 + abs(ts.theta(z, j)))


def test_branch_points():
    assert ode3.x_star(-3, 1) == 4 and ode3.y_star(-3, 1) == 0


def test_theta_derivative_is_branch():
    ts = ode3.ThetaSystem(-0.5, 0.9)
    z, h = 1.3 + 0.7j, 1e-5
    for j in (1, 2, 3):
        d = (ts.theta(z + h, j) - ts.theta(z - h, j)) / (2 * h)
        assert abs(d - ts.xi(z, j)) < 1e-9


def test_theta_alpha_zero():
    ts = ode3.ThetaSystem(0.0, 0.8)
    errs = []
    for r in (1e2, 1e4, 1e6):
        z = r * cmath.exp(1j * math.pi / 4)
        errs.append(abs(ts.theta(z, 1) - 1.5 * 0.8 ** (4 / 3) * z ** (2 / 3)))
    assert errs[-1] < 1e-8


def test_theta_expansion_coefficients():
    a, t = -0.5, 0.9
    ts = ode3.ThetaSystem(a, t)
    w = cmath.exp(2j * math.pi / 3)
    for j in (1, 2, 3):
        f = ts.fit_expansion(j)
        assert abs(f["z^(2/3)"] / (1.5 * w ** (j - 1) * t ** (4 / 3)) - 1) < 1e-4
        assert abs(f["z^(1/3)"] / (-a * w ** ((4 - j) % 3) * t ** (2 / 3)) - 1) < 1e-4
        assert abs(f["const"] / (a * a / 3) - 1) < 1e-4


def test_theta_jumps():
    ts = ode3.ThetaSystem(-3.0, 1.0)
    up, dn = ts.theta_all(6.0, "+"), ts.theta_all(6.0, "-")
    assert abs(up[1] - dn[2]) < 1e-8 * abs(up[1]) and abs(up[2] - dn[1]) < 1e-8 * abs(up[2])
    up, dn = ts.theta_all(-2.0, "+"), ts.theta_all(-2.0, "-")
    assert abs(up[0] - dn[1]) < 1e-8 * abs(up[0]) and abs(up[1] - dn[0]) < 1e-8 * abs(up[1])
    with pytest.raises(DomainError):
        ts.theta_all(2.0)


def test_connection_formulas():
    for z in (2 + 1j, -2 + 1j, 3 - 0.5j, -1 - 2j):
        assert ode3.connection_residual(-0.7, 0.4, z) < 1e-8


def test_p0_from_q_on_real_axis():
    sp = ModelSpec.quadratic(0.4, 1.0, 1, -0.7)
    tr = ode3.SolutionTriple(sp)
    assert abs(ode3.p_contour(sp, 0, 1.3).value / tr.value(0, 1.3) - 1) < 1e-7


def test_rescaling(spec, triple):
    z = 0.7 + 0.4j
    n, t = spec.n, spec.tau
    base = ModelSpec.quadratic(spec.nu, 1.0, 1, math.sqrt(n) * spec.alpha)
    tb = ode3.SolutionTriple(base)
    for j in range(3):
        rhs = (t * n) ** (-spec.nu) * n ** -0.5 * tb.value(j, n ** 1.5 * t * t * z)
        assert abs(triple.value(j, z) / rhs - 1) < 1e-10
        assert ode3.pq_residual(triple, j, z) < 1e-7


def test_wronskian(spec, triple):
    zs = [1 + 1j, 2 + 2j, -1 + 3j]
    vals = [ode3.wronskian_det(triple, z) * z ** (2 - 2 * spec.nu) for z in zs]
    assert max(abs(v / vals[0] - 1) for v in vals) < 1e-6
    z, h = 1 + 1j, 1e-4
    dlog = (cmath.log(ode3.wronskian_det(triple, z + h)) - cmath.log(ode3.wronskian_det(triple, z - h))) / (2 * h)
    assert abs(dlog - (2 * spec.nu - 2) / z) < 1e-6
    with pytest.raises(DomainError):
        ode3.wronskian_det(triple, 1.0)


def test_wronskian_nu_one():
    tr = ode3.SolutionTriple(ModelSpec.quadratic(1.0, 0.9, 4, -0.5))
    vals = [ode3.wronskian_det(tr, z) for z in (1 + 1j, 2 + 2j, -1 + 3j)]
    assert max(abs(v / vals[0] - 1) for v in vals) < 1e-8


def test_asymptotic_prefactors(spec):
    for j in range(3):
        for ang in (math.pi / 3, -math.pi / 3):
            r = ode3.asymptotic_match(spec, j, ang)
            assert r["L_rel_err"] < 1e-3
            assert r["s1_abs_err"] < 5e-3


def test_f_alpha_contraction():
    for ang in np.linspace(-3 * math.pi / 4 + 0.1, 3 * math.pi / 4 - 0.1, 7):
        for r in (0.1, 0.03, 0.01):
            s = r * cmath.exp(1j * ang)
            assert abs(ode3.f_alpha(s, -0.7)) <= 2.0 * abs(s)


def test_requires_quadratic():
    with pytest.raises(ValidationError):
        ode3.SolutionTriple(ModelSpec(0.0, 0.5, 2, (0, 1), (0, 0, 0, 1)))


def test_symmetric_weight_large_z():
    # alpha = 0 makes every odd full-line moment vanish
    sp = ModelSpec.quadratic(0.3, 0.5, 3, 0.0)
    tr = ode3.SolutionTriple(sp)
    for z in (3 + 1j, 1.6 + 5.78j, -4.4 + 4j):
        assert ode3.ode_residual(sp, tr.handle(1), z) < 1e-10


def test_recessive_p1():
    # p1 is exponentially small here; E - p0 - p2 cancels about 20 digits
    sp = ModelSpec.quadratic(1.5, 1.2, 8, 0.7)
    tr = ode3.SolutionTriple(sp)
    z = 1.605 + 5.781j
    assert ode3.ode_residual(sp, tr.handle(1), z) < 1e-12
    ref = ode3.SolutionTriple(sp, dps=80).value(1, z)
    assert abs(tr.value(1, z) / ref - 1) < 1e-12
