import math

import numpy as np
import pytest

from c2mm.equilibrium import (REQUIRED_MASSES, DiscreteMeasure, edge_exponent, energy_functional,
                              load_measure, log_energy, midpoint_convexity, mutual_energy,
                              square_measure)
from c2mm.errors import ToleranceError, ValidationError


@pytest.fixture(scope="module")
def arcsine():
    return DiscreteMeasure.arcsine(-1, 1, 800)


def test_point_pair_at_distance_one():
    p = DiscreteMeasure.points([0.0], [1.0])
    q = DiscreteMeasure.points([1.0], [1.0])
    assert mutual_energy(p, q) == 0.0


def test_single_point_self_energy_rejected():
    with pytest.raises(ToleranceError):
        log_energy(DiscreteMeasure.points([0.0], [1.0]))


def test_arcsine_energy(arcsine):
    assert abs(log_energy(arcsine) - math.log(2)) < 1e-3


def test_dilation(arcsine):
    lam = 3.0
    assert abs(log_energy(arcsine.dilated(lam)) - (log_energy(arcsine) - math.log(lam))) < 1e-6


def test_square_two_points():
    sq = square_measure(DiscreteMeasure.points([-2.0, 2.0], [0.5, 0.5], symmetric=True))
    assert np.allclose(sq.grid, [4.0]) and np.allclose(sq.masses, [1.0])


def test_square_requires_symmetry():
    with pytest.raises(ValidationError):
        square_measure(DiscreteMeasure.points([-1.0, 2.0], [0.5, 0.5], symmetric=True))


def test_square_arcsine(arcsine):
    sq = square_measure(arcsine)
    assert sq.grid.min() >= 0 and sq.grid.max() <= 1 + 1e-12
    assert abs(sq.total_mass - 1) < 1e-12
    assert abs(log_energy(sq) - 2 * log_energy(arcsine)) < 1e-4


def test_square_semicircle_is_marchenko_pastur():
    s = DiscreteMeasure.semicircle(2.0, 800)
    sq = square_measure(s)
    # x = y^2 with y semicircular on [-2, 2]: density sqrt((4 - x) / x) / (2 pi) on [0, 4]
    xs = np.array([0.5, 1.0, 2.0, 3.0])
    cdf = np.array([sq.masses[sq.grid <= x].sum() for x in xs])
    ref = np.array([(math.sqrt(x * (4 - x)) / 2 + 2 * math.asin(math.sqrt(x) / 2)) / math.pi for x in xs])
    assert np.max(np.abs(cdf - ref)) < 5e-3


def test_squaring_cross_axes(arcsine):
    s = DiscreteMeasure.semicircle(2.0, 800)
    ai = DiscreteMeasure(arcsine.grid, arcsine.masses, arcsine.total_mass, True, arcsine.edges, "imag")
    si = square_measure(ai)
    assert si.grid.max() <= 0
    assert abs(mutual_energy(square_measure(s), si) - 2 * mutual_energy(s, ai)) < 1e-4


def test_energy_separated_measures():
    nu1 = DiscreteMeasure.arcsine(1, 2, 200)
    nu2 = DiscreteMeasure.arcsine(-301, -300, 200, mass=2 / 3)
    nu3 = DiscreteMeasure.arcsine(500, 501, 200, mass=1 / 3)
    E = energy_functional(nu1, nu2, nu3)
    c1, c2, c3 = 1.5, -300.5, 500.5
    approx = (log_energy(nu1) + log_energy(nu2) + log_energy(nu3)
              + (2 / 3) * math.log(c1 - c2) + (2 / 9) * math.log(c3 - c2))
    assert abs(E - approx) < 1e-5


def test_mass_constraint():
    nu1 = DiscreteMeasure.arcsine(0, 2, 100)
    nu2 = DiscreteMeasure.arcsine(-2, -0.1, 100)
    nu3 = DiscreteMeasure.arcsine(0, 1, 100, mass=1 / 3)
    with pytest.raises(ValidationError, match="nu2"):
        energy_functional(nu1, nu2, nu3)
    with pytest.raises(ValidationError, match="R\\+"):
        energy_functional(nu1, nu2.scaled(2 / 3), DiscreteMeasure.arcsine(-1, 1, 100, mass=1 / 3))


def test_upper_constraint():
    nu1 = DiscreteMeasure.arcsine(0, 2, 100)
    nu2 = DiscreteMeasure.arcsine(-2, -0.1, 100, mass=2 / 3)
    nu3 = DiscreteMeasure.arcsine(0, 1, 100, mass=1 / 3)
    with pytest.raises(ValidationError, match="upper constraint"):
        energy_functional(nu1, nu2, nu3, sigma2=nu2.scaled(0.5))
    assert math.isfinite(energy_functional(nu1, nu2, nu3, sigma2=nu2.scaled(2.0)))


def test_chiral_equals_twice_nonchiral():
    V1 = lambda y: y ** 2 / 2 + y ** 4 / 4
    V3 = lambda y: y ** 2
    nu1 = DiscreteMeasure.semicircle(1.5, 600)
    nu2 = DiscreteMeasure.arcsine(-1, 1, 600, mass=2 / 3)
    nu2 = DiscreteMeasure(nu2.grid, nu2.masses, nu2.total_mass, True, nu2.edges, "imag")
    nu3 = DiscreteMeasure.semicircle(0.8, 600, mass=1 / 3)
    e_nc = energy_functional(nu1, nu2, nu3, V1, V3, setting="nonchiral")
    e_ch = energy_functional(square_measure(nu1), square_measure(nu2), square_measure(nu3),
                             lambda x: 2 * V1(np.sqrt(x)), lambda x: 2 * V3(np.sqrt(x)))
    assert abs(e_ch - 2 * e_nc) < 1e-4


def test_midpoint_convexity():
    rng = np.random.default_rng(7)
    b1, b2, b3 = np.linspace(0.01, 3, 41), np.linspace(-3, -0.01, 41), np.linspace(0.01, 2, 41)

    def rand_triple():
        out = []
        for br, m in zip((b1, b2, b3), REQUIRED_MASSES):
            w = rng.uniform(0.1, 1.0, len(br) - 1)
            out.append(DiscreteMeasure.from_cells(br, m * w / w.sum()))
        return tuple(out)

    E = lambda a, b, c: energy_functional(a, b, c, lambda x: x, lambda x: x)
    for _ in range(20):
        assert midpoint_convexity(E, rand_triple(), rand_triple())["convex"]


def test_load_measure_roundtrip(tmp_path, arcsine):
    import json
    p = tmp_path / "m.json"
    p.write_text(json.dumps(arcsine.to_dict()))
    m = load_measure(str(p))
    assert np.array_equal(m.masses, arcsine.masses)
    with pytest.raises(ValidationError):
        load_measure({"grid": [0, 1], "masses": [0.5, 0.5], "total_mass": 2.0})


def test_edge_exponent_power_law():
    xs = np.geomspace(0.02, 0.2, 10)
    assert abs(edge_exponent(xs, 3 * xs ** 0.5) + 0.5) < 1e-12
