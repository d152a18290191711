import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from frontview.core import Box3D, Point3, PointCloud, corners_array
from frontview.fvproj import (DegeneratePointError, FrontViewMap, ProjectionConfig, angles_of_point, angles_of_points,
                          box_to_map_rect, build_front_view_map, load_map, map_to_input, project_point,
                          project_points, read_ppm, render_map, save_map, upscale_nearest, write_ppm)

CFG = ProjectionConfig()
# window wide enough to hold the (3, 4, 12) fixture
WIDE = ProjectionConfig(theta_min=math.radians(-80), theta_max=math.radians(80), phi_min=math.radians(-80),
                        phi_max=math.radians(80))


def interval_scan(theta, phi, cfg):
    """Reference cell lookup: walk every row/column interval until one contains the angle."""
    u = v = None
    for r in range(cfg.base_height):
        lo = cfg.theta_min + r * cfg.delta_theta
        if lo <= theta < lo + cfg.delta_theta:
            u = r
            break
    for c in range(cfg.base_width):
        lo = cfg.phi_min + c * cfg.delta_phi
        if lo <= phi < lo + cfg.delta_phi:
            v = c
            break
    return u, v


def random_in_window(rng, n, cfg=CFG):
    """Points whose angles sit at least 1e-6 rad from every cell boundary."""
    out = []
    while len(out) < n:
        u = rng.integers(0, cfg.base_height)
        v = rng.integers(0, cfg.base_width)
        fu, fv = rng.uniform(0.01, 0.99, size=2)
        theta = cfg.theta_min + (u + fu) * cfg.delta_theta
        phi = cfg.phi_min + (v + fv) * cfg.delta_phi
        rho = rng.uniform(1.0, 70.0)
        x, y = rho * math.cos(phi), rho * math.sin(phi)
        z = math.tan(theta) * rho
        out.append((x, y, z, rng.uniform()))
    return np.array(out)


class TestAngles:
    def test_on_axis(self):
        assert angles_of_point(Point3(1, 0, 0)) == (0.0, 0.0)

    def test_diagonal(self):
        th, ph = angles_of_point(Point3(1, 1, 0))
        assert th == 0.0
        assert ph == pytest.approx(math.pi / 4, abs=1e-15)

    def test_pythagorean_fixture(self):
        th, ph = angles_of_point(Point3(3, 4, 12))
        assert th == math.asin(12 / 13)
        assert ph == math.asin(4 / 5)

    @pytest.mark.parametrize("p", [Point3(0, 0, 5), Point3(0, 0, 0)])
    def test_degenerate(self, p):
        with pytest.raises(DegeneratePointError):
            angles_of_point(p)

    def test_vectorised_agrees(self):
        rng = np.random.default_rng(0)
        xyz = rng.normal(size=(200, 3)) * 10
        th, ph, deg = angles_of_points(xyz)
        assert not deg.any()
        for i in range(200):
            a, b = angles_of_point(Point3(*xyz[i]))
            assert th[i] == pytest.approx(a, rel=1e-14, abs=1e-15)
            assert ph[i] == pytest.approx(b, rel=1e-14, abs=1e-15)


class TestProjectPoint:
    def test_window_corner(self):
        # a point just inside the lower corner of the window
        th, ph = CFG.theta_min + 1e-9, CFG.phi_min + 1e-9
        p = Point3(math.cos(ph), math.sin(ph), math.tan(th))
        assert project_point(p, CFG) == (0, 0)

    def test_floor_semantics(self):
        th = CFG.theta_min + 1.5 * CFG.delta_theta
        p = Point3(10.0, 0.0, 10.0 * math.tan(th))
        assert project_point(p, CFG).u == 1

    def test_out_of_window(self):
        assert project_point(Point3(1, 0, 5), CFG) is None
        assert project_point(Point3(-5, 0, -1), CFG) is None  # behind the sensor

    def test_fov_limit(self):
        cfg = ProjectionConfig(fov_limit=math.radians(10))
        assert project_point(Point3(10, 5, -1), cfg) is None
        assert project_point(Point3(10, 1, -1), cfg) is not None

    def test_interval_scan_oracle(self):
        rng = np.random.default_rng(7)
        pts = random_in_window(rng, 2000)
        proj = project_points(pts[:, :3], CFG)
        th, ph, _ = angles_of_points(pts[:, :3])
        for i in range(len(pts)):
            assert (proj.u[i], proj.v[i]) == interval_scan(th[i], ph[i], CFG)

    def test_monotone_in_azimuth(self):
        th = CFG.theta_min + 10.5 * CFG.delta_theta
        for k in range(5, 50):
            ph = CFG.phi_min + (k + 0.5) * CFG.delta_phi
            a = project_point(Point3(math.cos(ph), math.sin(ph), math.tan(th)), CFG)
            ph2 = ph + CFG.delta_phi
            b = project_point(Point3(math.cos(ph2), math.sin(ph2), math.tan(th)), CFG)
            assert b.v == a.v + 1 and b.u == a.u


class TestBuildMap:
    def test_empty(self):
        fv = build_front_view_map(PointCloud(), CFG)
        assert not fv.occupied.any()
        assert np.all(fv.channels == 0)

    def test_single_point_channels(self):
        fv = build_front_view_map(PointCloud([[3, 4, 12, 0.5]]), WIDE)
        assert fv.occupied.sum() == 1
        u, v = project_point(Point3(3, 4, 12), WIDE)
        np.testing.assert_array_equal(fv.channels[u, v], [12.0, 5.0, 0.5])

    def test_nearest_wins(self):
        # same direction, radials 5 and 7
        pts = np.array([[7 * 0.6, 7 * 0.8, -0.7, 0.2], [3.0, 4.0, -0.5, 0.9]])
        fv = build_front_view_map(PointCloud(pts), WIDE)
        assert fv.occupied.sum() == 1
        cell = fv.channels[fv.occupied][0]
        assert cell[1] == 5.0 and cell[2] == 0.9

    def test_sort_then_first_oracle(self):
        rng = np.random.default_rng(3)
        base = random_in_window(rng, 300)
        # duplicate rays at other ranges so collisions are common
        scale = rng.uniform(0.5, 1.5, size=(900, 1))
        pts = np.vstack([base, base[rng.integers(0, 300, 900)] * np.hstack([scale, scale, scale, np.ones((900, 1))])])
        fv = build_front_view_map(PointCloud(pts), CFG)
        proj = project_points(pts[:, :3], CFG)
        ref = {}
        for i in sorted(range(len(pts)), key=lambda i: (proj.radial[i], i)):
            if proj.valid[i]:
                ref.setdefault((proj.u[i], proj.v[i]), i)
        assert fv.occupied.sum() == len(ref)
        for (u, v), i in ref.items():
            assert fv.index[u, v] == i
            np.testing.assert_array_equal(fv.channels[u, v], [pts[i, 2], math.hypot(pts[i, 0], pts[i, 1]), pts[i, 3]])

    def test_degenerate_counted(self):
        fv = build_front_view_map(PointCloud([[0, 0, 1, 0], [5, 0, -1, 0.3]]), CFG)
        assert fv.skipped == 1
        assert fv.occupied.sum() == 1

    def test_channel_fidelity(self):
        rng = np.random.default_rng(11)
        pts = random_in_window(rng, 10000)
        fv = build_front_view_map(PointCloud(pts), CFG)
        idx = fv.index[fv.occupied]
        ch = fv.channels[fv.occupied]
        np.testing.assert_array_equal(ch[:, 0], pts[idx, 2])
        np.testing.assert_array_equal(ch[:, 1], [math.hypot(x, y) for x, y in pts[idx, :2]])
        np.testing.assert_array_equal(ch[:, 2], pts[idx, 3])

    @pytest.mark.parametrize("workers", [2, 3, 7])
    def test_worker_count_invariant(self, workers):
        rng = np.random.default_rng(5)
        pts = random_in_window(rng, 3000)
        pts = np.vstack([pts, pts * np.array([1.2, 1.2, 1.2, 1.0])])
        a = build_front_view_map(PointCloud(pts), CFG)
        b = build_front_view_map(PointCloud(pts), CFG, workers=workers)
        np.testing.assert_array_equal(a.channels, b.channels)
        np.testing.assert_array_equal(a.index, b.index)


class TestUpscale:
    def test_constant(self):
        fv = FrontViewMap(np.full((48, 192, 3), 2.5), np.ones((48, 192), bool))
        up = upscale_nearest(fv, 128, 512)
        assert np.all(up.channels == 2.5) and up.occupied.all()

    def test_integer_factor_blocks(self):
        ch = np.arange(12, dtype=float).reshape(2, 2, 3)
        up = upscale_nearest(FrontViewMap(ch, np.ones((2, 2), bool)), 4, 4)
        for r in range(4):
            for c in range(4):
                np.testing.assert_array_equal(up.channels[r, c], ch[r // 2, c // 2])

    def test_index_formula_oracle(self):
        rng = np.random.default_rng(2)
        fv = FrontViewMap(rng.normal(size=(48, 192, 3)), rng.random((48, 192)) > 0.5)
        up = upscale_nearest(fv, 128, 512)
        for r in range(0, 128, 3):
            for c in range(0, 512, 7):
                np.testing.assert_array_equal(up.channels[r, c], fv.channels[r * 48 // 128, c * 192 // 512])
                assert up.occupied[r, c] == fv.occupied[r * 48 // 128, c * 192 // 512]

    def test_idempotent_at_same_size(self):
        rng = np.random.default_rng(4)
        fv = FrontViewMap(rng.normal(size=(6, 8, 3)), rng.random((6, 8)) > 0.5)
        np.testing.assert_array_equal(upscale_nearest(fv, 6, 8).channels, fv.channels)

    def test_rejects_shrinking(self):
        with pytest.raises(ValueError):
            upscale_nearest(FrontViewMap.empty(4, 4), 2, 4)

    @given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 3), st.integers(0, 3))
    @settings(max_examples=30)
    def test_values_subset(self, h, w, dh, dw):
        rng = np.random.default_rng(h * 7 + w)
        fv = FrontViewMap(rng.integers(0, 5, size=(h, w, 3)).astype(float), np.ones((h, w), bool))
        up = upscale_nearest(fv, h + dh, w + dw)
        assert set(np.unique(up.channels)) <= set(np.unique(fv.channels))


class TestRender:
    def test_all_unoccupied_black(self):
        assert not render_map(FrontViewMap.empty(4, 5)).any()

    def test_single_cell(self):
        fv = FrontViewMap.empty(4, 5)
        fv.channels[1, 2] = [1.0, 2.0, 0.3]
        fv.occupied[1, 2] = True
        img = render_map(fv)
        assert np.count_nonzero(img.any(axis=-1)) == 1

    def test_two_cell_normalisation(self):
        fv = FrontViewMap.empty(2, 2)
        fv.channels[0, 0] = [-1.0, 10.0, 0.0]
        fv.channels[1, 1] = [1.0, 30.0, 0.25]
        fv.occupied[0, 0] = fv.occupied[1, 1] = True
        img = render_map(fv)
        # image is flipped vertically: map row 0 is the bottom image row
        np.testing.assert_array_equal(img[1, 0], [0, 0, 0])
        np.testing.assert_array_equal(img[0, 1], [255, 255, 255])
        fv.channels[1, 1, 1] = 20.0
        fv.channels[1, 1, 0] = 0.0
        img = render_map(fv)
        np.testing.assert_array_equal(img[0, 1], [255, 255, 255])

    def test_ppm_round_trip(self, tmp_path):
        img = np.random.default_rng(0).integers(0, 256, size=(7, 9, 3)).astype(np.uint8)
        write_ppm(tmp_path / "a.ppm", img)
        np.testing.assert_array_equal(read_ppm(tmp_path / "a.ppm"), img)
        raw = (tmp_path / "a.ppm").read_bytes()
        (tmp_path / "b.ppm").write_bytes(raw[:-5])
        with pytest.raises(ValueError):
            read_ppm(tmp_path / "b.ppm")


class TestMapFile:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        pts = random_in_window(rng, 500)
        fv = build_front_view_map(PointCloud(pts), CFG)
        save_map(tmp_path / "m.fvm", fv)
        back = load_map(tmp_path / "m.fvm")
        np.testing.assert_array_equal(back.occupied, fv.occupied)
        np.testing.assert_array_equal(back.channels, fv.channels.astype(np.float32).astype(np.float64))
        assert (tmp_path / "m.fvm").stat().st_size == 16 + 48 * 192 * 4 * 4

    def test_truncated_rejected(self, tmp_path):
        save_map(tmp_path / "m.fvm", FrontViewMap.empty(3, 3))
        raw = (tmp_path / "m.fvm").read_bytes()
        (tmp_path / "t.fvm").write_bytes(raw[:-1])
        with pytest.raises(ValueError):
            load_map(tmp_path / "t.fvm")

    def test_network_input_scaling(self):
        fv = FrontViewMap.empty(1, 1)
        fv.channels[0, 0] = [-1.0, 40.0, 0.5]
        np.testing.assert_allclose(map_to_input(fv, CFG)[0, 0], [-0.5, 0.5, 0.5])


class TestBoxToMapRect:
    def test_contains_every_surface_point(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            r = rng.uniform(5, 60)
            ph = rng.uniform(-0.6, 0.6)
            box = Box3D(r * math.cos(ph), r * math.sin(ph), -0.9, 1.5, 1.7, 4.0, rng.uniform(0, 6.28))
            x0, y0, x1, y1, rmin, rmax = box_to_map_rect(box, CFG)
            local = rng.uniform(-0.5, 0.5, size=(400, 3)) * [box.l, box.w, box.h]
            c, s = math.cos(box.heading), math.sin(box.heading)
            xyz = np.column_stack([c * local[:, 0] - s * local[:, 1] + box.cx,
                                   s * local[:, 0] + c * local[:, 1] + box.cy, local[:, 2] + box.cz])
            xyz = np.vstack([xyz, corners_array(box)])
            th, ph_, _ = angles_of_points(xyz)
            px = (ph_ - CFG.phi_min) / CFG.delta_phi * CFG.scale_cols
            py = (th - CFG.theta_min) / CFG.delta_theta * CFG.scale_rows
            rad = np.hypot(xyz[:, 0], xyz[:, 1])
            tol = 1e-9
            assert np.all((px >= x0 - tol) & (px <= x1 + tol) & (py >= y0 - tol) & (py <= y1 + tol))
            assert np.all((rad >= rmin - tol) & (rad <= rmax + tol))
