import math

import mpmath as mp
import numpy as np
import pytest

from c2mm.errors import DomainError, ToleranceError, ValidationError
from c2mm.specfun import (DecayHint, LogScaledValue, bessel_i, bessel_k, build_quadrature,
                          erfc_scaled, logsumexp_complex)


def test_bessel_i_zero():
    assert float(bessel_i(0.0, 0.0)) == 1.0


def test_bessel_i_half_integer():
    ref = math.sqrt(2 / (math.pi * 2)) * math.sinh(2)
    assert abs(float(bessel_i(0.5, 2.0)) / ref - 1) < 1e-14


def test_bessel_i_ode_residual_large_argument():
    nu, u, h = 0.3, 50.0, 1e-3
    f = lambda t: float(bessel_i(nu, t).scaled_by_log(-50.0))
    d1 = (f(u + h) - f(u - h)) / (2 * h)
    d2 = (f(u + h) - 2 * f(u) + f(u - h)) / h ** 2
    res = u * u * d2 + u * d1 - (u * u + nu * nu) * f(u)
    assert abs(res) / (u * u * abs(f(u))) < 1e-7


def test_bessel_i_overflow_safe():
    v = bessel_i(1.5, 5000.0)
    ref = mp.besseli(1.5, 5000)
    assert abs(v.log_abs - float(mp.log(ref))) < 1e-12


def test_bessel_k_half_integer():
    ref = math.sqrt(math.pi / 6) * math.exp(-3)
    assert abs(float(bessel_k(0.5, 3.0)) / ref - 1) < 1e-14


def test_bessel_k_reflection_formula():
    nu = 0.4
    ref = math.pi / 2 * (float(mp.besseli(-nu, 1)) - float(mp.besseli(nu, 1))) / math.sin(nu * math.pi)
    assert abs(float(bessel_k(nu, 1.0)) / ref - 1) < 1e-13


def test_bessel_k_integer_continuity():
    k1 = float(bessel_k(1.0, 1.0))
    for d in (1e-4, -1e-4):
        assert abs(float(bessel_k(1.0 + d, 1.0)) / k1 - 1) < 1e-4


def test_bessel_k_cut():
    with pytest.raises(DomainError):
        bessel_k(0.3, -1.0)


def test_bessel_order_validation():
    with pytest.raises(ValidationError):
        bessel_i(-1.5, 1.0)


def test_quadrature_exponential():
    rule = build_quadrature((0.0, math.inf), 1e-12, DecayHint.exponential(1.0))
    assert abs(rule.integrate(np.exp(-rule.nodes)) - 1) < 1e-12


def test_quadrature_gaussian():
    rule = build_quadrature((0.0, math.inf), 1e-12, DecayHint.gaussian(1.0))
    assert abs(rule.integrate(np.exp(-rule.nodes ** 2 / 2)) - math.sqrt(math.pi / 2)) < 1e-12


def test_quadrature_endpoint_singularity():
    rule = build_quadrature((0.0, 1.0), 1e-12, DecayHint.power(-0.5))
    assert abs(rule.integrate(rule.nodes ** -0.5) - 2) < 1e-10


def test_quadrature_needs_envelope():
    with pytest.raises(ToleranceError):
        build_quadrature((0.0, math.inf), 1e-12)


def test_erfc_scaled_values():
    assert complex(erfc_scaled(0.0)) == 1.0
    ref = complex(mp.exp(mp.mpf(4)) * mp.erfc(2))
    assert abs(complex(erfc_scaled(2.0)) / ref - 1) < 1e-12
    z = complex(mp.mpc(1.5, 0.7))
    ref = complex(mp.exp(mp.mpc(z) ** 2) * mp.erfc(mp.mpc(z)))
    assert abs(complex(erfc_scaled(z)) / ref - 1) < 1e-12


def test_erfc_scaled_asymptotics():
    ang = math.pi / 2 - 0.1
    errs = []
    for r in (1e2, 1e3, 1e4):
        z = r * complex(math.cos(ang), math.sin(ang))
        errs.append(abs(complex(erfc_scaled(z)) * math.sqrt(math.pi) * z - 1))
    assert errs[-1] < 1e-7 and errs[0] > errs[1] > errs[2]


def test_log_scaled_arithmetic():
    a = LogScaledValue.from_log(800.0)
    b = LogScaledValue.from_log(799.0)
    assert abs((a / b).value - math.e) < 1e-12
    assert abs((a - a).value) == 0
    s = logsumexp_complex(np.array([1000.0, 1000.0 + math.log(2)]))
    assert abs(s.log_abs - (1000.0 + math.log(3))) < 1e-12
