import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from groupreg.grids import ActivationMap, Lattice, make_lattice_1d
from groupreg.interp import interpolate, resample
from groupreg.transforms import AffineTransform


def linear_map():
    lat = make_lattice_1d(0.0, 10.0, 1.0)
    return ActivationMap(lat, 3.0 * np.arange(11.0) + 1.0)


class TestInterpolate1D:
    def test_lattice_points_exact(self):
        amap = linear_map()
        pts = amap.lattice.locations()
        got = interpolate(amap, pts)
        assert np.max(np.abs(got - amap.values)) < 1e-12

    def test_linear_field_exact_interior(self):
        got = interpolate(linear_map(), np.array([[2.5]]))
        assert got[0] == pytest.approx(8.5, abs=1e-10)

    def test_constant_field_exact(self):
        lat = make_lattice_1d(-2.0, 2.0, 0.5)
        amap = ActivationMap(lat, np.full(9, 4.2))
        q = np.linspace(-1.4, 1.4, 23)[:, None]
        assert np.max(np.abs(interpolate(amap, q) - 4.2)) < 1e-10

    def test_far_outside_fill_zero(self):
        assert interpolate(linear_map(), np.array([[40.0]]))[0] == 0.0
        assert interpolate(linear_map(), np.array([[-7.0]]))[0] == 0.0

    def test_clamp_boundary(self):
        got = interpolate(linear_map(), np.array([[40.0]]), boundary="clamp")
        assert got[0] == pytest.approx(31.0)

    def test_needs_four_sites(self):
        lat = make_lattice_1d(0.0, 2.0, 1.0)
        with pytest.raises(ValueError):
            interpolate(ActivationMap(lat, np.zeros(3)), np.array([[1.0]]))

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0.5, 9.5))
    def test_continuity(self, q):
        amap = linear_map()
        rng_span = np.ptp(amap.values)
        a = interpolate(amap, np.array([[q]]))[0]
        b = interpolate(amap, np.array([[q + 1e-6]]))[0]
        assert abs(a - b) < 1e-4 * rng_span


class TestInterpolate2D:
    def test_separability(self):
        lat2 = Lattice((8, 8), np.array([1.0, 1.0]), np.zeros(2))
        f = np.sin(0.3 * np.arange(8.0))
        g = np.cos(0.2 * np.arange(8.0))
        m2 = ActivationMap(lat2, np.outer(f, g).ravel())
        m1f = ActivationMap(make_lattice_1d(0, 7, 1.0), f)
        m1g = ActivationMap(make_lattice_1d(0, 7, 1.0), g)
        rng = np.random.default_rng(0)
        q = rng.uniform(1.0, 6.0, size=(50, 2))
        got = interpolate(m2, q)
        want = interpolate(m1f, q[:, :1]) * interpolate(m1g, q[:, 1:])
        assert np.max(np.abs(got - want)) < 1e-10

    def test_linear_2d_exact(self):
        lat2 = Lattice((6, 6), np.array([1.0, 1.0]), np.zeros(2))
        locs = lat2.locations()
        vals = 2.0 * locs[:, 0] - 0.5 * locs[:, 1] + 3.0
        amap = ActivationMap(lat2, vals)
        q = np.array([[1.25, 2.75], [2.5, 2.5], [3.9, 1.1]])
        want = 2.0 * q[:, 0] - 0.5 * q[:, 1] + 3.0
        assert np.max(np.abs(interpolate(amap, q) - want)) < 1e-10

    def test_resample_identity(self):
        lat2 = Lattice((5, 5), np.array([1.0, 1.0]), np.zeros(2))
        amap = ActivationMap(lat2, np.random.default_rng(1).normal(size=25))
        out = resample(amap, AffineTransform.identity(2))
        assert np.max(np.abs(out.values - amap.values)) < 1e-12

    def test_nonunit_spacing_offset_lattice(self):
        lat = Lattice((6, 6), np.array([0.5, 0.25]), np.array([-1.0, 2.0]))
        locs = lat.locations()
        vals = locs[:, 0] + 4.0 * locs[:, 1]
        amap = ActivationMap(lat, vals)
        q = np.array([[-0.3, 2.6], [0.2, 2.55]])  # stencils fully interior
        want = q[:, 0] + 4.0 * q[:, 1]
        assert np.max(np.abs(interpolate(amap, q) - want)) < 1e-10
