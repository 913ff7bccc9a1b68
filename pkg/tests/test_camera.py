import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vpgeo.camera import (
    Intrinsics,
    normalize_direction_gen,
    normalize_direction_real,
    outside_distance,
    project,
    reference_intrinsics,
    rescale_intrinsics,
    unproject,
    unproject_h,
)
from vpgeo.errors import EmptyList, ZeroDimension

K500 = Intrinsics(fx=500, fy=500, cx=320, cy=240)


class TestUnproject:
    def test_identity_like_origin(self):
        k = Intrinsics(fx=1, fy=1, cx=0, cy=0)
        np.testing.assert_allclose(unproject((0, 0), k), [0, 0, 1], atol=1e-15)

    def test_principal_point(self):
        np.testing.assert_allclose(unproject((320, 240), K500), [0, 0, 1], atol=1e-15)

    def test_45_degrees(self):
        v = unproject((820, 240), K500)
        np.testing.assert_allclose(v, [1 / np.sqrt(2), 0, 1 / np.sqrt(2)], atol=1e-9)

    def test_homogeneous_infinity(self):
        v = unproject_h(np.array([1.0, 0.0, 0.0]), K500)
        np.testing.assert_allclose(v, [1, 0, 0], atol=1e-15)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-2000, 2000), st.floats(-2000, 2000))
    def test_round_trip(self, u, v):
        p = project(unproject((u, v), K500), K500)
        np.testing.assert_allclose(p, [u, v], atol=1e-6)


class TestReferenceIntrinsics:
    def test_odd_count_median(self):
        ks = [Intrinsics(fx, 500, 320, 240) for fx in (499, 500, 501)]
        assert reference_intrinsics(ks).fx == 500

    def test_single_frame(self):
        k = Intrinsics(430, 510, 300, 250)
        assert reference_intrinsics([k]) == k

    def test_even_count_mean_of_middle(self):
        ks = [Intrinsics(fx, 500, 320, 240) for fx in (400, 600)]
        assert reference_intrinsics(ks).fx == 500

    def test_empty(self):
        with pytest.raises(EmptyList):
            reference_intrinsics([])


class TestRescale:
    def test_anisotropic(self):
        k = Intrinsics(fx=500, fy=450, cx=320, cy=240)
        out = rescale_intrinsics(k, (640, 480), (1280, 720))
        assert out.fx == 1000 and out.fy == 450 * 1.5
        assert out.cx == 640 and out.cy == 360
        # verify by reprojecting a known ray through both cameras
        ray = unproject((400, 300), k)
        p_small = project(ray, k)
        p_big = project(ray, out)
        np.testing.assert_allclose(p_big, [p_small[0] * 2, p_small[1] * 1.5], atol=1e-9)

    def test_identity(self):
        k = Intrinsics(500, 450, 320, 240)
        assert rescale_intrinsics(k, (640, 480), (640, 480)) == k

    def test_halving(self):
        k = Intrinsics(500, 450, 320, 240)
        out = rescale_intrinsics(k, (640, 480), (320, 240))
        assert (out.fx, out.fy, out.cx, out.cy) == (250, 225, 160, 120)

    def test_zero_dimension(self):
        with pytest.raises(ZeroDimension):
            rescale_intrinsics(K500, (640, 0), (320, 240))


class TestNormalizeReal:
    def test_equal_intrinsics_reduces_to_unproject(self):
        v = normalize_direction_real((500, 300), K500, K500)
        np.testing.assert_allclose(v, unproject((500, 300), K500), atol=1e-12)

    def test_principal_point_fixed_under_focal_change(self):
        k_t = Intrinsics(fx=1000, fy=1000, cx=320, cy=240)
        v = normalize_direction_real((320, 240), k_t, K500)
        np.testing.assert_allclose(v, [0, 0, 1], atol=1e-12)

    def test_matrix_product_oracle(self):
        # fx_t=1000 vs fx_ref=500, vp at (cx+500, cy)
        k_t = Intrinsics(fx=1000, fy=500, cx=320, cy=240)
        v = normalize_direction_real((820, 240), k_t, K500)
        chain = (K500.K_inv @ k_t.K) @ (k_t.K_inv @ np.array([820.0, 240.0, 1.0]))
        chain = chain / np.linalg.norm(chain)
        np.testing.assert_allclose(v, chain, atol=1e-12)
        np.testing.assert_allclose(v, [1 / np.sqrt(2), 0, 1 / np.sqrt(2)], atol=1e-9)


class TestNormalizeGen:
    def test_principal_point(self):
        np.testing.assert_allclose(normalize_direction_gen((320, 240), K500), [0, 0, 1],
                                   atol=1e-15)

    def test_definitional(self):
        p = (812.3, 91.7)
        np.testing.assert_array_equal(normalize_direction_gen(p, K500), unproject(p, K500))


class TestOutsideDistance:
    def test_center_zero(self):
        assert outside_distance((320, 240), 640, 480) == 0.0

    def test_just_outside(self):
        assert outside_distance((643, 240), 640, 480) == pytest.approx(3 / 800)

    def test_on_boundary(self):
        assert outside_distance((640, 100), 640, 480) == 0.0

    def test_corner(self):
        assert outside_distance((-3, -4), 640, 480) == pytest.approx(5 / 800)
