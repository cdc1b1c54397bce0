import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from msh.energy import Cube, EnergyParams, LatticeField, collar_mask, energy_I, pure_jump
from msh.homogenize import (CellProblemSpec, anisotropy_scan, bulk_cell_problem, cell_lattice, cell_window,
                            estimate_coefficients, fit_inverse_T, phi0, surface_cell_problem, unit_from_angle)
from msh.potential import PotentialSpec

DIAG = np.array([1.0, -1.0]) / math.sqrt(2)
ANGLES = [0.0, 22.5, 45.0, 67.5, 90.0]


@pytest.fixture(scope="module")
def z2_32():
    nus = [unit_from_angle(a) for a in ANGLES + [135.0]]
    return cell_lattice("cubic", 2, 32, nus)


@pytest.fixture(scope="module")
def rsa_16():
    nus = [unit_from_angle(a) for a in (0.0, 45.0, 90.0, 135.0)]
    return cell_lattice("rsa", 2, 16, nus + [-n for n in nus], seed=3)


def bulk(lat, edges, center, xi, T=32, **kw):
    return bulk_cell_problem(CellProblemSpec("bulk", T, xi=xi, center=center, **kw), lat, edges)


def surface(lat, edges, center, nu, T=32, **kw):
    return surface_cell_problem(CellProblemSpec("surface", T, nu=nu, center=center, **kw), lat, edges)


class TestSpec:
    def test_small_cell_rejected(self):
        with pytest.raises(ValueError):
            CellProblemSpec("bulk", 4, xi=[[1.0, 0.0]])

    def test_missing_data(self):
        with pytest.raises(ValueError):
            CellProblemSpec("bulk", 16)
        with pytest.raises(ValueError):
            CellProblemSpec("surface", 16)

    def test_non_unit_normal(self):
        with pytest.raises(ValueError):
            CellProblemSpec("surface", 16, nu=[1.0, 1.0])

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            CellProblemSpec("volume", 16)

    def test_cell_must_fit(self):
        lat, edges, c = cell_lattice("cubic", 2, 16)
        with pytest.raises(ValueError):
            bulk(lat, edges, c, [[1.0, 0.0]], T=40)

    def test_window_holds_rotated_cube(self):
        w = cell_window(2, 10, [unit_from_angle(45.0)], margin=0.0)
        assert np.all(w.upper >= 5 * math.sqrt(2) - 1e-12)


class TestBulk:
    def test_square_lattice_axis(self, z2_32):
        r = bulk(*z2_32, [[1.0, 0.0]])
        assert abs(r.value - 1.0) <= 0.05
        assert r.exact

    def test_zero_gradient(self, z2_32):
        assert bulk(*z2_32, [[0.0, 0.0]]).value == 0.0

    def test_quadratic_homogeneity(self, z2_32):
        xi = np.array([[0.3, -0.7]])
        q1 = bulk(*z2_32, xi).value
        q2 = bulk(*z2_32, 2 * xi).value
        assert abs(q2 - 4 * q1) <= 1e-9 * max(1.0, q2)

    def test_rsa_quadratic_homogeneity_and_bounds(self, rsa_16):
        lat, edges, c = rsa_16
        xi = np.array([[1.0, 0.5]])
        q1 = bulk(lat, edges, c, xi, T=16).value
        q3 = bulk(lat, edges, c, 3 * xi, T=16).value
        assert abs(q3 - 9 * q1) <= 1e-9 * q3
        # lower and upper bounds of order |xi|^2
        assert 0.1 * float(np.sum(xi ** 2)) <= q1 <= 10 * float(np.sum(xi ** 2))

    def test_vector_valued(self, z2_32):
        # components decouple
        xi = np.array([[1.0, 0.0], [0.0, 1.0]])
        q = bulk(*z2_32, xi).value
        q1 = bulk(*z2_32, xi[:1]).value
        q2 = bulk(*z2_32, xi[1:]).value
        assert q == pytest.approx(q1 + q2, rel=1e-9)

    def test_wrong_kind(self, z2_32):
        with pytest.raises(ValueError):
            bulk_cell_problem(CellProblemSpec("surface", 32, nu=[1.0, 0.0]), *z2_32[:2])


class TestSurface:
    def test_axis(self, z2_32):
        r = surface(*z2_32, np.array([1.0, 0.0]))
        assert abs(r.value - 1.0) <= 0.05
        assert r.exact

    def test_diagonal(self, z2_32):
        assert abs(surface(*z2_32, DIAG).value - math.sqrt(2)) <= 0.05 * math.sqrt(2)

    def test_cubic_3d_diagonal(self):
        nu = np.array([1.0, 1.0, 0.0]) / math.sqrt(2)
        lat, edges, c = cell_lattice("cubic", 3, 16, [nu])
        val = surface(lat, edges, c, nu, T=16).value
        assert val <= 1 / math.sqrt(2) + 0.1
        assert val >= 0.5

    @pytest.mark.parametrize("angle", ANGLES)
    def test_first_quadrant_density(self, z2_32, angle):
        nu = unit_from_angle(angle)
        assert abs(surface(*z2_32, nu).value - phi0(nu)) <= 0.10 * phi0(nu)

    def test_phi0_reference(self):
        assert phi0(np.array([1.0, 0.0])) == 1.0
        assert phi0(DIAG) == pytest.approx(math.sqrt(2))
        assert phi0(unit_from_angle(45.0)) == pytest.approx(1 / math.sqrt(2))

    @pytest.mark.parametrize("angle", [0.0, 45.0, 90.0, 135.0])
    def test_even_in_normal(self, rsa_16, angle):
        lat, edges, c = rsa_16
        nu = unit_from_angle(angle)
        a = surface(lat, edges, c, nu, T=16).value
        b = surface(lat, edges, c, -nu, T=16).value
        assert a == pytest.approx(b, abs=1e-12)

    def test_bounds_on_rsa(self, rsa_16):
        lat, edges, c = rsa_16
        for angle in (0.0, 45.0, 90.0, 135.0):
            s = surface(lat, edges, c, unit_from_angle(angle), T=16).value
            assert 0.2 <= s <= 5.0

    def test_monotone_in_cap(self, rsa_16):
        lat, edges, c = rsa_16
        vals = [surface(lat, edges, c, np.array([1.0, 0.0]), T=16,
                        potential=PotentialSpec("capped_sum", 1.0, cap)).value for cap in (0.25, 0.5, 1.0, 2.0)]
        assert all(a <= b + 1e-12 for a, b in zip(vals, vals[1:]))

    def test_pairwise_at_least_capped(self, rsa_16):
        lat, edges, c = rsa_16
        nu = np.array([1.0, 0.0])
        cap = surface(lat, edges, c, nu, T=16, potential=PotentialSpec("capped_sum")).value
        pair = surface(lat, edges, c, nu, T=16, potential=PotentialSpec("pairwise_sum")).value
        assert pair >= cap - 1e-12

    def test_custom_potential_not_exact(self):
        spec = PotentialSpec.custom(lambda v: min(float(np.sum(v)), 1.0), 1.0, 1.0, trials=100)
        lat, edges, c = cell_lattice("cubic", 2, 12)
        r = surface(lat, edges, c, np.array([1.0, 0.0]), T=12, potential=spec)
        assert not r.exact
        assert r.value >= 1.0 - 0.05


@pytest.mark.parametrize("generator,angle", [("cubic", 0.0), ("cubic", 30.0), ("rsa", 0.0), ("rsa", 60.0)])
def test_exact_surface_matches_enumeration(generator, angle):
    """Few free sites: the minimum over all binary fields agrees with the cut."""
    T = 8
    nu = unit_from_angle(angle)
    lat, edges, c = cell_lattice(generator, 2, T, [nu], seed=5)
    delta = 2.6 / T
    spec = CellProblemSpec("surface", T, nu=nu, center=c, delta=delta)
    r = surface_cell_problem(spec, lat, edges)
    assert r.exact

    eps = 1.0 / T
    region = Cube(eps * np.asarray(c, dtype=float), 1.0, nu)
    params = EnergyParams(eps, 2.0, 2.0, PotentialSpec(), 1.0, region)
    u = LatticeField(lat, eps, np.zeros(lat.n))
    base = np.asarray(pure_jump([-1.0], [1.0], eps * np.asarray(c, dtype=float), nu)(u.sites), dtype=float).ravel()
    fixed = collar_mask(u, region, delta) | ~region.contains(u.sites)
    free = np.flatnonzero(~fixed)
    assert 1 <= len(free) <= 16
    best = math.inf
    for signs in itertools.product((-1.0, 1.0), repeat=len(free)):
        vals = base.copy()
        vals[free] = signs
        best = min(best, energy_I(u.with_values(vals), edges, params))
    assert r.value == pytest.approx(best, abs=1e-12)


class TestScan:
    def test_second_quadrant(self, z2_32):
        scan = anisotropy_scan([unit_from_angle(0.0), unit_from_angle(135.0)], z2_32[0], z2_32[1],
                               CellProblemSpec("surface", 32, nu=[1.0, 0.0], center=z2_32[2]))
        assert scan.exact
        assert abs(scan.sigma[1] - math.sqrt(2)) <= 0.05 * math.sqrt(2)
        assert scan.spread == pytest.approx((scan.sigma.max() - scan.sigma.min()) / scan.sigma.mean())
        rows = scan.rows()
        assert rows[1]["angle_deg"] == pytest.approx(135.0)

    def test_needs_two_directions(self, z2_32):
        with pytest.raises(ValueError):
            anisotropy_scan([[1.0, 0.0]], z2_32[0], z2_32[1], CellProblemSpec("surface", 32, nu=[1.0, 0.0]))


class TestFit:
    def test_recovers_line(self):
        T = [8, 16, 32, 64]
        a, b = fit_inverse_T(T, [2.0 + 3.0 / t for t in T])
        assert a == pytest.approx(2.0, abs=1e-12) and b == pytest.approx(3.0, abs=1e-10)

    def test_single_size(self):
        assert fit_inverse_T([16, 16], [1.0, 3.0]) == (2.0, 0.0)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-5, 5), st.floats(-5, 5))
    def test_property(self, a, b):
        T = [8, 12, 20]
        fa, fb = fit_inverse_T(T, [a + b / t for t in T])
        assert fa == pytest.approx(a, abs=1e-9) and fb == pytest.approx(b, abs=1e-8)


@pytest.fixture(scope="module")
def z2():
    return estimate_coefficients("cubic", 2, PotentialSpec(), [16, 32], n_dirs=4,
                                 fidelity_weight=2.5, gamma_side=16)


class TestCoefficients:
    def test_bulk_coefficient(self, z2):
        assert abs(z2["c1"] - 1.0) <= 0.05

    def test_surface_is_anisotropic(self, z2):
        assert any("anisotropic" in w for w in z2["warnings"])
        assert z2["per_T"][-1]["sigma_spread"] > 0.3

    def test_fidelity_coefficient(self, z2):
        assert z2["gamma"] == pytest.approx(1.0, abs=1e-9)
        assert z2["c3"] == pytest.approx(2.5, abs=1e-9)

    def test_bookkeeping(self, z2):
        assert [row["T"] for row in z2["per_T"]] == [16.0, 32.0]
        assert len(z2["directions"]) == 4
        assert not any("bulk density" in w for w in z2["warnings"])
