from __future__ import annotations

import numpy as np
import pytest

from oracles import ray_box_z_depth

from pointloc.geometry import intrinsics_from_fov
from pointloc.render import DEPTH_LEVELS, add_rgb_noise, render
from pointloc.scene import Box, SceneModel, camera_pose, generate_scene

K64 = intrinsics_from_fov(90.0, 64, 64)
QUANT = 0.5 / DEPTH_LEVELS  # half a 16-bit quantization step, normalized units


def wall_scene() -> SceneModel:
    # single obstacle wall 5 m in front of a camera at the origin looking +x
    wall = Box((5.0, -10.0, -10.0), (5.3, 10.0, 10.0), 7, 4, (0.8, 0.8, 0.8))
    return SceneModel(0, (-20.0, 20.0, -20.0, 20.0), (wall,), 30.0)


class TestRenderBasics:
    def test_wall_at_5m_principal_depth(self):
        frame = render(wall_scene(), camera_pose((0.0, 0.0, 1.25), 0.0), K64)
        cv, cu = int(K64.cy), int(K64.cx)
        assert frame.depth[cv, cu] == pytest.approx(0.5, abs=QUANT + 1e-9)
        assert frame.instances[cv, cu] == 7

    def test_empty_halfspace_no_hits(self):
        scene = SceneModel(0, (0.0, 10.0, 0.0, 10.0), (), 3.0)
        # camera far outside the room, facing away from it
        pose = camera_pose((-60.0, -60.0, 1.25), np.pi)  # looking toward -x
        frame = render(scene, pose, K64)
        assert np.all(frame.depth == 1.0)
        assert np.all(frame.instances == 0)

    def test_deterministic(self):
        scene = generate_scene(2)
        pose = camera_pose((4.0, 4.0, 1.25), 0.9)
        a = render(scene, pose, K64)
        b = render(scene, pose, K64)
        assert np.array_equal(a.rgb, b.rgb)
        assert np.array_equal(a.depth, b.depth)
        assert np.array_equal(a.instances, b.instances)

    def test_depth_in_unit_range_and_quantized(self):
        scene = generate_scene(2)
        frame = render(scene, camera_pose((4.0, 4.0, 1.25), 0.9), K64)
        assert frame.depth.min() >= 0.0 and frame.depth.max() <= 1.0
        scaled = frame.depth * DEPTH_LEVELS
        assert np.allclose(scaled, np.round(scaled), atol=1e-6)

    def test_rasters_share_dimensions(self):
        frame = render(generate_scene(2), camera_pose((4, 4, 1.25), 0.0), K64)
        assert frame.rgb.shape == (64, 64, 3)
        assert frame.depth.shape == (64, 64)
        assert frame.instances.shape == (64, 64)


class TestRenderOracle:
    def test_depth_and_instance_match_slab_oracle(self, rng):
        """Random pixels of random frames vs. an independently written
        per-ray box-intersection oracle."""
        scene = generate_scene(5)
        boxes = scene.all_boxes()
        for trial in range(3):
            pose = camera_pose(
                (rng.uniform(2, 10), rng.uniform(2, 10), 1.25), rng.uniform(0, 6.28)
            )
            frame = render(scene, pose, K64)
            r = pose.rotation.rotation_matrix()
            origin = pose.translation
            for _ in range(80):
                v, u = int(rng.integers(64)), int(rng.integers(64))
                d_cam = np.array([(u - K64.cx) / K64.fx, (v - K64.cy) / K64.fy, 1.0])
                d_world = r @ d_cam
                best_t, best_id = np.inf, 0
                for b in boxes:
                    t = ray_box_z_depth(origin, d_world, b.min_corner, b.max_corner)
                    if t is not None and 1e-6 < t < best_t:
                        best_t, best_id = t, b.instance_id
                if best_t is np.inf:
                    assert frame.depth[v, u] == 1.0
                    assert frame.instances[v, u] == 0
                else:
                    expected = min(best_t / 10.0, 1.0)
                    assert frame.depth[v, u] == pytest.approx(
                        expected, abs=QUANT + 1e-6
                    )
                    assert frame.instances[v, u] == best_id

    def test_far_hits_saturate_depth(self):
        # wall at 14 m: a hit, so it keeps its instance id, but depth saturates
        wall = Box((14.0, -30.0, -10.0), (14.5, 30.0, 10.0), 7, 4, (0.8, 0.8, 0.8))
        scene = SceneModel(0, (-20.0, 20.0, -30.0, 30.0), (wall,), 30.0)
        frame = render(scene, camera_pose((0.0, 0.0, 1.25), 0.0), K64)
        cv, cu = int(K64.cy), int(K64.cx)
        assert frame.depth[cv, cu] == 1.0
        assert frame.instances[cv, cu] == 7


class TestRgbNoise:
    def make_frame(self):
        return render(generate_scene(3), camera_pose((4.0, 4.0, 1.25), 1.2), K64)

    def test_factor_zero_unchanged(self):
        frame = self.make_frame()
        assert np.array_equal(add_rgb_noise(frame, 0.0, seed=1).rgb, frame.rgb)

    def test_noise_std_matches_factor(self):
        k256 = intrinsics_from_fov(90.0, 256, 256)
        frame = render(generate_scene(3), camera_pose((4.0, 4.0, 1.25), 1.2), k256)
        noisy = add_rgb_noise(frame, 0.02, seed=7)
        diff = noisy.rgb.astype(np.float64) - frame.rgb.astype(np.float64)
        # avoid clipping bias: only pixels with headroom on both sides
        mask = (frame.rgb > 30) & (frame.rgb < 225)
        sigma = diff[mask].std()
        assert sigma == pytest.approx(255 * 0.02, rel=0.10)

    def test_seed_changes_raster(self):
        frame = self.make_frame()
        a = add_rgb_noise(frame, 0.02, seed=1)
        b = add_rgb_noise(frame, 0.02, seed=2)
        assert not np.array_equal(a.rgb, b.rgb)

    def test_seed_deterministic(self):
        frame = self.make_frame()
        a = add_rgb_noise(frame, 0.02, seed=9)
        b = add_rgb_noise(frame, 0.02, seed=9)
        assert np.array_equal(a.rgb, b.rgb)

    def test_depth_and_instances_untouched(self):
        frame = self.make_frame()
        noisy = add_rgb_noise(frame, 0.05, seed=3)
        assert np.array_equal(noisy.depth, frame.depth)
        assert np.array_equal(noisy.instances, frame.instances)

    def test_negative_factor_rejected(self):
        with pytest.raises(ValueError):
            add_rgb_noise(self.make_frame(), -0.1, seed=0)
