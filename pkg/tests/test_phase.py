import math

import numpy as np
import pytest

from c2mm.errors import ValidationError
from c2mm.kernel import build_kernel
from c2mm.model import ModelSpec
from c2mm.phase import (ScalingPath, classify, curve_ab, curve_c, curve_intersections,
                        gamma_expansion_fit, gamma_residual, phase_map, solve_gamma,
                        triple_scaling_probe)


@pytest.mark.parametrize("alpha,tau,case", [
    (2, 0.8, "I"), (1, 3, "II"), (-2, 2, "III"), (-2.5, 0.2, "IV"),
    (2, 2, "CurveAB"), (-1, 1, "Multicritical"),
])
def test_classification(alpha, tau, case):
    assert classify(alpha, tau, with_gamma=False).case == case


def test_dashed_curve_parts():
    assert classify(-0.5, math.sqrt(2), with_gamma=False).case == "CurveC"
    assert not classify(-0.5, math.sqrt(2), with_gamma=False).physical
    assert not classify(-1.5, math.sqrt(0.5), with_gamma=False).physical
    assert classify(-1.5, math.sqrt(0.5), with_gamma=False).case == "CurveAB"


def test_curves():
    assert curve_ab(2) == 2 and curve_c(-1) == 1


def test_intersection_certificate():
    r = curve_intersections()
    assert len(r["intersections"]) == 1
    a, t = r["intersections"][0]
    assert abs(a + 1) < 1e-6 and abs(t - 1) < 1e-6
    assert r["negative_gaps"] == 0 and r["min_gap_elsewhere"] > 0


def test_gamma_fixed_point():
    assert abs(solve_gamma(-1, 1) - 1) < 1e-14
    assert gamma_residual(1.0, -1.0, 1.0) == 0


def test_gamma_roundtrip():
    g0 = 1.1
    alpha = 3 / g0 - 9 * g0 ** 2 + 5 * g0
    assert abs(solve_gamma(alpha, 1.0) - g0) < 1e-10


def test_gamma_expansion():
    r = gamma_expansion_fit(0.5, -0.3)
    assert r["c1_rel_err"] < 0.01 and r["c2_rel_err"] < 0.01


def test_gamma_validation():
    with pytest.raises(ValidationError):
        solve_gamma(0.0, -1.0)


def test_path_points():
    a, b = 0.5, -0.3
    p = ScalingPath(a, b).pairs()[0]
    assert p == (9, -1 + 2 * a * 9 ** (-1 / 3) - b * 9 ** (-2 / 3), 1 + a * 9 ** (-1 / 3) + 2 * b * 9 ** (-2 / 3))
    with pytest.raises(ValidationError):
        ScalingPath(0, 0, (9, 10, 36))


def test_gauge_on_diagonal():
    path = ScalingPath(0.0, 0.0, (3, 6, 9))
    r = triple_scaling_probe(path, grid=(0.5, 1.0), nu=0.5)
    n, alpha, tau = path.pairs()[0]
    ke = build_kernel(ModelSpec.quadratic(0.5, tau, n, alpha))
    s = n ** (-4 / 3)
    raw = s * np.diag(ke.matrix(np.array([0.5, 1.0]) * s))
    assert np.allclose(np.diag(r["khat"]["3"]), raw, rtol=1e-14, atol=0)


def test_phase_map_labels():
    pm = phase_map((-3, 3), (0.1, 3), 7, 7)
    flat = {c for row in pm["labels"] for c in row}
    assert {"I", "II", "III", "IV"} <= flat
