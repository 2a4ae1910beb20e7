"""RGB-D-instance rendering of box scenes by per-pixel raycasting.

Rays are cast with unit z-component in the camera frame, so the slab-test ray
parameter is directly the z-depth.  Every surface gets a deterministic
hash-based cell texture anchored to world coordinates, which makes frames
corner-rich and view-consistent for feature matching.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from pointloc.geometry import CameraIntrinsics, Pose
from pointloc.scene import SceneModel

DEPTH_MAX = 10.0
DEPTH_LEVELS = 65535  # on-disk 16-bit quantization, also applied at render time
BACKGROUND_RGB = (11, 11, 14)

AMBIENT = 0.5
DIFFUSE = 0.5
_LIGHT_DIR = np.array([0.42, 0.24, -0.88])
_LIGHT_DIR = _LIGHT_DIR / np.linalg.norm(_LIGHT_DIR)

# The wide brightness/contrast ranges are deliberate: regions differ strongly
# in how many cell junctions clear the corner detector's threshold, and that
# regional variation is what makes global embeddings tell views apart.
# Key poses keep a clearance from obstacles (scene.SceneParams), so no
# database view degenerates to a single up-close texture cell.
TEXTURE_CELLS = (0.15, 0.2, 0.25, 0.3, 0.4)  # meters; picked per face
TEXTURE_MIN = 0.55
TEXTURE_SPAN = 0.45
TEXTURE_COARSE_CELL = 1.0  # meters, coarse layer (regional identity)
TEXTURE_COARSE_MIN = 0.55
TEXTURE_COARSE_SPAN = 0.45


@dataclass(frozen=True)
class Frame:
    """One rendered RGB-D observation with instance labels and its true pose.

    depth is normalized z-depth in [0, 1] over 0..10 m, quantized to the
    16-bit on-disk grid (1.0 means >= 10 m or no hit).  instances holds box
    instance ids, 0 for background.  pose is camera-to-world.
    """

    rgb: np.ndarray
    depth: np.ndarray
    instances: np.ndarray
    pose: Pose
    point_id: int
    frame_id: int
    is_database: bool

    def __post_init__(self) -> None:
        for name in ("rgb", "depth", "instances"):
            arr = getattr(self, name)
            arr.setflags(write=False)
        if self.rgb.shape[:2] != self.depth.shape or self.depth.shape != self.instances.shape:
            raise ValueError("rasters must share dimensions")


def _hash01(*channels: np.ndarray) -> np.ndarray:
    """SplitMix64-style hash of integer arrays, mapped to [0, 1)."""
    state = np.zeros(np.broadcast(*channels).shape, dtype=np.uint64)
    for c in channels:
        state = state + c.astype(np.uint64) + np.uint64(0x9E3779B97F4A7C15)
        state = (state ^ (state >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        state = (state ^ (state >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        state = state ^ (state >> np.uint64(31))
    return (state >> np.uint64(11)).astype(np.float64) * (2.0**-53)


_RAY_CACHE: dict[tuple, tuple[np.ndarray, np.ndarray]] = {}


def _camera_rays(k: CameraIntrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel ray directions (du, dv) in the camera frame; dz is 1."""
    key = (k.fx, k.fy, k.cx, k.cy, k.width, k.height)
    rays = _RAY_CACHE.get(key)
    if rays is None:
        u = ((np.arange(k.width) - k.cx) / k.fx).astype(np.float32)
        v = ((np.arange(k.height) - k.cy) / k.fy).astype(np.float32)
        uu, vv = np.meshgrid(u, v)
        rays = (uu.ravel(), vv.ravel())
        for a in rays:
            a.setflags(write=False)
        _RAY_CACHE[key] = rays
    return rays


def render(scene: SceneModel, pose: Pose, k: CameraIntrinsics, depth_max: float = DEPTH_MAX) -> Frame:
    """Raycast all scene boxes from the given camera-to-world pose."""
    boxes = scene.all_boxes()
    n_px = k.width * k.height
    r = pose.rotation.rotation_matrix().astype(np.float32)
    du, dv = _camera_rays(k)
    # world-space direction components, z-depth parameterization preserved
    d = [du * r[a, 0] + dv * r[a, 1] + r[a, 2] for a in range(3)]
    origin = pose.translation.astype(np.float32)

    inv = []
    for a in range(3):
        comp = d[a]
        tiny = np.abs(comp) < 1e-12
        if tiny.any():
            comp = np.where(tiny, np.where(comp < 0, -1e-12, 1e-12).astype(np.float32), comp)
        inv.append(np.float32(1.0) / comp)

    best_t = np.full(n_px, np.inf, dtype=np.float32)
    best_box = np.full(n_px, -1, dtype=np.int16)
    best_axis = np.zeros(n_px, dtype=np.int8)
    for i, b in enumerate(boxes):
        lo = []
        hi = []
        for a in range(3):
            t1 = inv[a] * np.float32(b.min_corner[a] - origin[a])
            t2 = inv[a] * np.float32(b.max_corner[a] - origin[a])
            lo.append(np.minimum(t1, t2))
            hi.append(np.maximum(t1, t2))
        t_enter = np.maximum(np.maximum(lo[0], lo[1]), lo[2])
        t_exit = np.minimum(np.minimum(hi[0], hi[1]), hi[2])
        hit = (t_enter <= t_exit) & (t_enter > np.float32(1e-6)) & (t_enter < best_t)
        if not hit.any():
            continue
        axis = np.where(t_enter == lo[0], 0, np.where(t_enter == lo[1], 1, 2)).astype(np.int8)
        best_t[hit] = t_enter[hit]
        best_box[hit] = i
        best_axis[hit] = axis[hit]

    hit_mask = best_box >= 0
    depth = np.ones(n_px)
    depth[hit_mask] = np.minimum(best_t[hit_mask].astype(np.float64) / depth_max, 1.0)
    depth = np.round(depth * DEPTH_LEVELS) / DEPTH_LEVELS

    instances = np.zeros(n_px, dtype=np.uint16)
    rgb = np.empty((n_px, 3), dtype=np.uint8)
    rgb[:] = BACKGROUND_RGB

    if hit_mask.any():
        idx = np.nonzero(hit_mask)[0]
        t = best_t[idx]
        box_idx = best_box[idx].astype(np.int64)
        axis = best_axis[idx].astype(np.int64)

        ids = np.array([b.instance_id for b in boxes], dtype=np.uint16)
        albedos = np.array([b.albedo for b in boxes], dtype=np.float64)
        instances[idx] = ids[box_idx]

        px = origin[0] + t * d[0][idx]
        py = origin[1] + t * d[1][idx]
        pz = origin[2] + t * d[2][idx]

        # face normal opposes the ray along the entry axis
        d_axis = np.choose(axis, (d[0][idx], d[1][idx], d[2][idx]))
        n_sign = np.where(d_axis > 0, -1.0, 1.0)

        # two-scale blocky value noise in the two in-face coordinates.  The
        # fine layer makes corner features; its cell size is face-specific and
        # its contrast varies per coarse cell, so different wall regions have
        # distinct descriptor statistics.  The coarse layer adds a brightness
        # signature that gives whole views a retrievable identity.
        cu = np.where(axis == 0, py, px)
        cv = np.where(axis == 2, py, pz)
        face_code = (axis * 2 + (n_sign > 0)).astype(np.uint64)
        box_code = ids[box_idx].astype(np.uint64)
        cell_sizes = np.asarray(TEXTURE_CELLS)
        cell = cell_sizes[
            (_hash01(face_code + np.uint64(7), box_code) * len(cell_sizes)).astype(np.int64)
        ]
        cell_u = np.floor(cu / cell).astype(np.int64).astype(np.uint64)
        cell_v = np.floor(cv / cell).astype(np.int64).astype(np.uint64)
        coarse_u = np.floor(cu / TEXTURE_COARSE_CELL).astype(np.int64).astype(np.uint64)
        coarse_v = np.floor(cv / TEXTURE_COARSE_CELL).astype(np.int64).astype(np.uint64)
        contrast = 0.4 + 0.6 * _hash01(coarse_u, coarse_v, face_code + np.uint64(53), box_code)
        fine = _hash01(cell_u, cell_v, face_code, box_code) - 0.5
        tex = TEXTURE_MIN + TEXTURE_SPAN * (0.5 + contrast * fine)
        tex *= TEXTURE_COARSE_MIN + TEXTURE_COARSE_SPAN * _hash01(
            coarse_u, coarse_v, face_code + np.uint64(101), box_code
        )

        lambert = -(n_sign * _LIGHT_DIR[axis])  # n . (-light)
        shade = AMBIENT + DIFFUSE * np.maximum(0.0, lambert)

        color = albedos[box_idx] * (tex * shade)[:, None] * 255.0
        rgb[idx] = np.clip(np.round(color), 0, 255).astype(np.uint8)

    return Frame(
        rgb=rgb.reshape(k.height, k.width, 3),
        depth=depth.reshape(k.height, k.width),
        instances=instances.reshape(k.height, k.width),
        pose=pose,
        point_id=-1,
        frame_id=-1,
        is_database=False,
    )


def add_rgb_noise(frame: Frame, factor: float = 0.02, seed=0) -> Frame:
    """Additive Gaussian pixel noise: v + round(255 * factor * N(0, 1)), clamped.

    seed may be an int or a numpy SeedSequence; every call with the same seed
    produces the same raster.
    """
    if factor < 0:
        raise ValueError("noise factor must be >= 0")
    if factor == 0:
        return frame
    rng = np.random.default_rng(seed)
    noise = np.round(255.0 * factor * rng.standard_normal(frame.rgb.shape))
    noisy = np.clip(frame.rgb.astype(np.int64) + noise.astype(np.int64), 0, 255)
    return Frame(
        rgb=noisy.astype(np.uint8),
        depth=frame.depth,
        instances=frame.instances,
        pose=frame.pose,
        point_id=frame.point_id,
        frame_id=frame.frame_id,
        is_database=frame.is_database,
    )
