import numpy as np
import pytest

from zoomsplat.errors import InvalidParameterError, RoiUndefinedError, TransportError
from zoomsplat.lod import scale_projection_coefficient
from zoomsplat.metrics import psnr
from zoomsplat.optimizer import LossWeights, degrade_downsample
from zoomsplat.pipeline import (
    PipelineConfig,
    Roi,
    ZoomState,
    compute_roi,
    init_scene_from_points,
    init_scene_uniform,
    make_zoom_cameras,
    render_trajectory,
    run_zoom,
    zoom_step,
)
from zoomsplat.renderer import RenderOptions, render
from zoomsplat.storage import scene_to_ply_bytes

from conftest import convergent_rig, make_camera, random_scene


@pytest.fixture
def zoom_fixture(rng):
    rig = convergent_rig(5, radius=5.0, fx=60.0, size=48)
    scene = random_scene(rng, 60, rig, extent=0.6)
    roi = compute_roi(rig)
    return ZoomState(scene=scene, base_cameras=rig, roi=roi), rig


class TestComputeRoi:
    def test_two_cameras_symmetric(self):
        a = make_camera([4.0, 0.0, 0.2], [0, 0, 0])
        b = make_camera([-4.0, 0.0, 0.2], [0, 0, 0])
        roi = compute_roi([a, b])
        np.testing.assert_allclose(roi.center, [0, 0, 0], atol=1e-9)
        assert roi.radius == pytest.approx(0.1 * np.linalg.norm([4.0, 0, 0.2]),
                                           rel=1e-6)

    def test_identical_cameras_midpoint(self):
        cam = make_camera([0.0, -5.0, 0.0], [0, 0, 0], near=0.5, far=9.5)
        roi = compute_roi([cam, cam])
        expect = cam.position + cam.optical_axis * 0.5 * (0.5 + 9.5)
        np.testing.assert_allclose(roi.center, expect, atol=1e-9)

    def test_needs_two_cameras(self):
        with pytest.raises(InvalidParameterError):
            compute_roi([make_camera([1, 0, 0], [0, 0, 0])])

    def test_matches_grid_search(self, rng):
        rig = convergent_rig(6, radius=4.0)
        # jitter targets so axes do not all pass through one point
        cams = []
        for i, c in enumerate(rig):
            target = rng.uniform(-0.3, 0.3, size=3)
            cams.append(make_camera(c.position, target))
        roi = compute_roi(cams)

        def cost(p):
            total = 0.0
            for c in cams:
                d = c.optical_axis
                v = p - c.position
                total += float(v @ v - (v @ d) ** 2)
            return total

        grid = np.linspace(-1.0, 1.0, 21)
        best, best_p = np.inf, None
        for x in grid:
            for y in grid:
                for z in grid:
                    p = np.array([x, y, z])
                    c = cost(p)
                    if c < best:
                        best, best_p = c, p
        step = grid[1] - grid[0]
        assert cost(roi.center) <= best + 1e-9
        assert np.abs(roi.center - best_p).max() <= step


class TestMakeZoomCameras:
    def test_level_zero_keeps_focal(self, zoom_fixture):
        state, rig = zoom_fixture
        cams = make_zoom_cameras(rig, state.roi, 0, 4)
        assert len(cams) == len(rig)
        for a, b in zip(cams, rig):
            assert a.fx == b.fx and a.width == b.width
            # re-aimed at the ROI: it projects to the principal point
            p = a.world_to_cam(state.roi.center)
            np.testing.assert_allclose(
                [a.fx * p[0] / p[2], a.fy * p[1] / p[2]], [0.0, 0.0],
                atol=1e-9)

    def test_level_one_scales_focal(self, zoom_fixture):
        state, rig = zoom_fixture
        cams = make_zoom_cameras(rig, state.roi, 1, 4)
        for a, b in zip(cams, rig):
            assert a.fx == pytest.approx(4.0 * b.fx)

    def test_psi_scales_inversely(self, zoom_fixture):
        state, rig = zoom_fixture
        base = make_zoom_cameras(rig, state.roi, 0, 4)
        lvl2 = make_zoom_cameras(rig, state.roi, 2, 4)
        for b, z in zip(base, lvl2):
            psi_b = scale_projection_coefficient(b, state.roi.center)
            psi_z = scale_projection_coefficient(z, state.roi.center)
            assert psi_z == pytest.approx(psi_b / 16.0, rel=1e-9)

    def test_roi_behind_camera_dropped(self, caplog):
        import logging
        front = make_camera([0, -4.0, 0], [0, 0, 0])
        behind = make_camera([0, 4.0, 0], [0, 8.0, 0])  # looks away
        with caplog.at_level(logging.WARNING, logger="zoomsplat.pipeline"):
            cams = make_zoom_cameras([front, behind], Roi([0, 0, 0], 1.0), 0, 4)
        assert len(cams) == 1
        with pytest.raises(RoiUndefinedError):
            make_zoom_cameras([behind], Roi([0, 0, 0], 1.0), 0, 4)


class TestInit:
    def test_from_points(self, rig):
        pts = np.random.default_rng(0).uniform(-1, 1, size=(50, 3))
        colors = np.random.default_rng(1).uniform(size=(50, 3))
        scene = init_scene_from_points(pts, colors, rig)
        assert len(scene) == 50
        assert scene.active_layer is not None
        ops = scene.opacities()
        np.testing.assert_allclose(ops, 0.1, atol=1e-12)

    def test_uniform(self, rig):
        scene = init_scene_uniform(Roi([0, 0, 0], 1.0), rig, count=64)
        assert len(scene) == 64
        assert np.all(np.linalg.norm(scene.centers, axis=1) <= 1.0 + 1e-9)


class TestZoomStep:
    def _config(self, iters=120):
        return PipelineConfig(zoom_factor_s=4, num_zoom_steps=1,
                              weights=LossWeights(),
                              step_iterations=iters, neighbor_count=2,
                              rng_seed=3)

    def test_zero_steps_unchanged(self, zoom_fixture):
        state, _ = zoom_fixture
        before = scene_to_ply_bytes(state.scene)
        cfg = self._config()
        cfg.num_zoom_steps = 0
        run_zoom(state, cfg)
        assert scene_to_ply_bytes(state.scene) == before
        assert state.current_level == 0

    def test_one_step_lifecycle_and_consistency(self, zoom_fixture):
        state, rig = zoom_fixture
        cfg = self._config()
        pre_frozen = state.scene.layer_parameter_bytes(0)
        count_before = len(state.scene)
        art = zoom_step(state, cfg)

        assert state.current_level == 1
        assert len(state.scene.layers) == 2
        assert [l.frozen for l in state.scene.layers] == [True, False]
        assert state.scene.layer_parameter_bytes(0) == pre_frozen
        assert len(art.sr_images) == len(rig)
        assert all(p for p in art.prompts)
        # capacity is monotone except through (logged) pruning
        assert len(state.scene) >= count_before - art.pruned

        # cross-scale self-consistency: decimated level-1 renders match the
        # pre-step level-0 renders
        vals = []
        for i, cam in enumerate(art.cameras):
            hr = render(state.scene, cam, cfg.render_options).color
            down = degrade_downsample(hr, cfg.zoom_factor_s)
            vals.append(psnr(down, art.renders[i]))
        assert np.mean(vals) >= 28.0

    def test_step_is_atomic_on_failure(self, zoom_fixture):
        state, _ = zoom_fixture
        cfg = self._config()

        class FailingProvider:
            name = "failing"

            def request_prompt(self, a, b):
                return "x"

            def super_resolve(self, request):
                raise TransportError("sidecar gone")

        before = scene_to_ply_bytes(state.scene)
        level = state.current_level
        with pytest.raises(TransportError):
            zoom_step(state, cfg, provider=FailingProvider())
        assert scene_to_ply_bytes(state.scene) == before
        assert state.current_level == level

    def test_determinism_bit_identical(self, rng):
        def build():
            r = np.random.default_rng(77)
            rig = convergent_rig(4, radius=5.0, fx=50.0, size=32)
            scene = random_scene(r, 40, rig, extent=0.6)
            return ZoomState(scene=scene, base_cameras=rig,
                             roi=compute_roi(rig))

        cfg = self._config(iters=40)
        s1 = build()
        zoom_step(s1, cfg)
        s2 = build()
        zoom_step(s2, cfg)
        assert scene_to_ply_bytes(s1.scene) == scene_to_ply_bytes(s2.scene)


class TestTrajectory:
    def test_single_frame_equals_plain_render(self, zoom_fixture):
        state, rig = zoom_fixture
        opts = RenderOptions()
        frames = render_trajectory(state, (1.0, 1.0), 1, [rig[0]], opts)
        plain = render(state.scene, rig[0], opts)
        np.testing.assert_array_equal(frames[0].data, plain.color.data)

    def test_focal_multipliers_log_spaced(self, zoom_fixture):
        state, rig = zoom_fixture
        frames = render_trajectory(state, (1.0, 4.0), 3, [rig[0]],
                                   RenderOptions())
        assert len(frames) == 3

    def test_sweep_is_smooth(self, zoom_fixture):
        state, rig = zoom_fixture
        frames = render_trajectory(state, (1.0, 4.0), 16, [rig[0]],
                                   RenderOptions())
        diffs = [np.abs(a.data - b.data).mean()
                 for a, b in zip(frames[:-1], frames[1:])]
        static = render_trajectory(state, (1.0, 1.0), 2, [rig[0]],
                                   RenderOptions())
        static_diff = np.abs(static[0].data - static[1].data).mean()
        assert static_diff == 0.0
        # no popping: adjacent diffs stay in a tight band
        assert max(diffs) <= 5.0 * max(np.mean(diffs), 1e-9)
