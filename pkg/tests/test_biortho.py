import math

import mpmath as mp
import numpy as np
import pytest

from c2mm.biortho import (build_bimoments, build_system, check_mop, laguerre_fit,
                          mop_index_set)
from c2mm.errors import ConditioningAlarm, ValidationError
from c2mm.model import ModelSpec, h_l
from c2mm.specfun import graded_panels, panel_rule


def test_decoupled_moments():
    n = 3
    sp = ModelSpec(0.0, 1e-9, n, (0, 1), (0, 1))
    # rank one in the limit: only rectangular assembly skips the conditioning alarm
    with pytest.raises(ConditioningAlarm):
        build_bimoments(sp, 4)
    M = build_bimoments(sp, 4, rows=5).to_float()
    for j in range(4):
        for k in range(4):
            ref = math.factorial(j) / n ** (j + 1) * math.factorial(k) / n ** (k + 1)
            assert abs(M[j, k] / ref - 1) < 1e-6


def test_moments_match_direct_quadrature():
    sp = ModelSpec.quadratic(0.5, 0.8, 3, -0.4)
    M = build_bimoments(sp, 3).to_float()
    x, w = panel_rule(graded_panels(0.0, 30.0, 48, 30), 20)
    for k in range(3):
        hk = np.array([float(h_l(sp, k, xi)) for xi in x])
        for j in range(3):
            val = np.dot(w, x ** j * np.exp(-sp.n * x) * hk)
            assert abs(val / M[j, k] - 1) < 1e-9


def test_degree_zero():
    sp = ModelSpec.quadratic(0.5, 0.8, 4, -0.4)
    s = build_system(sp, 6)
    assert s.P[0, 0] == 1 and s.Q[0, 0] == 1
    assert s.kappa[0] == s.bimoments.entries[0, 0]
    assert s.bimoments.entries[0, 0] > 0


def test_biorthogonality_small():
    sp = ModelSpec(0.5, 0.7, 8, (0, 1), (0, 0.2, -0.1, 0.3))
    s = build_system(sp, 10)
    assert s.biorth_residual() < 1e-20
    assert all(k != 0 for k in s.kappa)


def test_standard_precision_route():
    sp = ModelSpec.quadratic(0.0, 0.6, 3, 0.0)
    s = build_system(sp, 5, precision="standard")
    assert s.biorth_residual() < 1e-8


def test_laguerre_linear_weights():
    sp = ModelSpec(0.5, 0.5, 4, (0, 1), (0, 1))
    s = build_system(sp, 8)
    for j in (2, 5, 7):
        assert laguerre_fit(s, j)["residual"] < 1e-6


def test_zeros_real_simple_positive():
    sp = ModelSpec.quadratic(0.5, 0.8, 6, -1.0)
    z = build_system(sp, 6).P_zeros(5)
    assert np.all(np.abs(z.imag) < 1e-12)
    r = np.sort(z.real)
    assert np.all(r > 0) and np.all(np.diff(r) > 1e-8)


def test_index_sets():
    assert mop_index_set(0, 1) == {}
    assert mop_index_set(4, 1)[0] == [0, 1]


def test_mop_variants_agree():
    sp = ModelSpec(0.0, 0.9, 8, (0, 1), (0, 0, 0, 0.25))
    s = build_system(sp, 10)
    r1, r2 = check_mop(s, "MOP1"), check_mop(s, "MOP2")
    assert r1.max_residual < 1e-20 and r2.max_residual < 1e-20
    with pytest.raises(ValidationError):
        check_mop(s, "MOP3")
