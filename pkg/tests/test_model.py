import math

import mpmath as mp
import numpy as np
import pytest

from c2mm.errors import ValidationError
from c2mm.model import HSeries, ModelSpec, f_n, f_n_deriv, h_l, load_spec, w_n, weight_w_l


def test_spec_validation():
    with pytest.raises(ValidationError, match="leading coefficient of W"):
        ModelSpec(0.0, 0.5, 2, (0, 1), (0, 0, -0.5))
    with pytest.raises(ValidationError):
        ModelSpec(-1.0, 0.5, 2, (0, 1), (0, 1))
    with pytest.raises(ValidationError):
        ModelSpec(0.0, 0.0, 2, (0, 1), (0, 1))
    with pytest.raises(ValidationError):
        ModelSpec(0.0, 1.5, 2, (0, 1), (0, 1))
    with pytest.raises(ValidationError, match="unknown"):
        ModelSpec.from_dict({"nu": 0, "tau": 0.5, "n": 2, "V": [0, 1], "W": [0, 1], "x": 1})


def test_spec_roundtrip(tmp_path):
    sp = ModelSpec.quadratic(0.3, 0.9, 4, -0.5)
    p = tmp_path / "s.json"
    import json
    p.write_text(json.dumps(sp.to_dict()))
    assert load_spec(str(p)) == sp
    assert sp.alpha == -0.5 and sp.r == 1


def test_f_n_values():
    assert float(f_n(ModelSpec(0, 1, 1, (0, 1), (0, 0, 1)), 0.0)) == 1.0
    sp = ModelSpec(0.5, 1.0, 2, (0, 1), (0, 0, 1))
    # I_{1/2}(u) = sqrt(2 / (pi u)) sinh(u) at u = 4
    assert abs(float(f_n(sp, 1.0)) / (math.sinh(4) / math.sqrt(2 * math.pi)) - 1) < 1e-13


def test_f_n_differential_equation():
    rng = np.random.default_rng(0)
    for _ in range(5):
        sp = ModelSpec(rng.uniform(-0.5, 2), rng.uniform(0.2, 1.2), int(rng.integers(1, 6)), (0, 1), (0, 0, 1))
        x = rng.uniform(0.1, 5)
        f0, f1, f2 = (float(f_n_deriv(sp, x, k)) for k in range(3))
        c2 = sp.c ** 2
        assert abs(x * f2 - (sp.nu - 1) * f1 - c2 * f0) < 1e-8 * abs(c2 * f0)


def test_w_n_values():
    sp = ModelSpec(0.5, 0.5, 1, (0, 1), (0, 1))
    assert float(w_n(sp, 0.0, 1.0)) == 0.0
    sp0 = ModelSpec(0.0, 0.5, 1, (0, 1), (0, 1))
    assert abs(float(w_n(sp0, 1.0, 1.0)) - float(mp.besseli(0, 1)) * math.exp(-2)) < 1e-15
    assert float(f_n(sp0, 2.0 * 3.0)) == float(f_n(sp0, 3.0 * 2.0))


def test_h_decoupled_limit():
    sp = ModelSpec(0.0, 1e-8, 3, (0, 1), (0, 1))
    assert abs(float(h_l(sp, 0, 1.0)) - 1 / 3) < 1e-6


def test_h_recurrence_quadratic():
    sp = ModelSpec.quadratic(0.4, 0.9, 4, -0.5)
    n, a = sp.n, sp.alpha
    for x in (0.3, 1.7):
        h0, h1, h2 = (float(h_l(sp, l, x)) for l in range(3))
        d0 = float(h_l(sp, 0, x, 1))
        assert abs(x * d0 + h0 - n * a * h1 - n * h2) < 1e-10 * (abs(h0) + n * abs(h2))


def test_h_ladder():
    sp = ModelSpec(0.7, 0.6, 3, (0, 1), (0, 0.2, -0.1, 0.3))
    hs = HSeries(sp, 40)
    c2 = sp.c ** 2
    for x in np.linspace(0.2, 3.0, 10):
        l1 = float(hs.h_values(x, 3, 0)[2])
        d1 = float(hs.h_values(x, 2, 1)[1])
        d2 = float(hs.h_values(x, 2, 2)[1])
        assert abs(c2 * l1 - (x * d2 - (sp.nu - 1) * d1)) < 1e-10 * abs(c2 * l1)


def test_series_matches_quadrature():
    sp = ModelSpec(-0.5, 0.7, 5, (0, 1), (0, 0.2, -0.1, 0.3))
    hs = HSeries(sp, 40)
    for x in (0.01, 1.0, 3.0):
        a = float(h_l(sp, 1, x))
        b = float(hs.h_values(x, 2)[1])
        assert abs(a / b - 1) < 1e-10


def test_weight_branches():
    sp = ModelSpec.quadratic(0.3, 0.8, 3, -0.2)
    x = 0.9
    ev = math.exp(-sp.n * sp.Vx(x))
    assert abs(float(weight_w_l(sp, 0, x)) / (ev * float(h_l(sp, 0, x))) - 1) < 1e-14
    assert abs(float(weight_w_l(sp, 2, x)) / (ev * x * float(h_l(sp, 0, x, 1))) - 1) < 1e-14


def test_weight_small_x_exponent():
    sp = ModelSpec.quadratic(0.6, 0.8, 3, -0.2)
    xs = np.array([1e-6, 1e-4])
    vals = [float(weight_w_l(sp, 1, x)) for x in xs]
    slope = math.log(vals[1] / vals[0]) / math.log(xs[1] / xs[0])
    assert abs(slope - sp.nu) < 0.02
