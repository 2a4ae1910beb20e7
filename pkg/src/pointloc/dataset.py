"""Point-grid dataset construction and the on-disk dataset format.

A dataset is a grid of "Points".  Each Point holds 6 database frames rendered
at the grid node covering 360 degrees (60 degree yaw steps), plus up to M
query frames sampled uniformly in a 0.5 m disk around the node with random
yaw.  Query candidates that land in occupied space are discarded, not
resampled.

Directory layout (one scene):

    manifest.txt                 key = value lines
    scene.txt                    box list
    points/<pid>/db_<k>.{rgb,depth,inst,pose}
    queries/<pid>/q_<k>.{rgb,depth,inst,pose}

rgb is binary PPM (P6, maxval 255); depth and inst are binary PGM (P5,
maxval 65535, big-endian 16-bit); pose files hold one
"tx ty tz qw qx qy qz" line.  A multi-scene dataset nests single-scene
directories under scene_<i>/ with an aggregate manifest at the root.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from pointloc.geometry import (
    CameraIntrinsics,
    Pose,
    intrinsics_from_fov,
    pose_from_text,
    pose_to_text,
)
from pointloc.render import DEPTH_LEVELS, Frame, add_rgb_noise, render
from pointloc.scene import (
    GridPoint,
    SceneModel,
    SceneParams,
    camera_pose,
    generate_point_grid,
    generate_scene,
    scene_from_text,
    scene_to_text,
)

DB_FRAMES_PER_POINT = 6
YAW_STEP_DEG = 60.0


class DatasetFormatError(Exception):
    """Raised when a dataset directory is missing or malformed; the message
    names the offending file."""


class InvalidKeyPoseError(Exception):
    pass


@dataclass(frozen=True)
class GenerationParams:
    scenes: int = 1
    grid_spacing: float = 2.0
    queries_per_point: int = 50
    query_radius: float = 0.5
    noise_factor: float = 0.02
    fov_deg: float = 90.0
    resolution: int = 256
    camera_height: float = 1.25
    depth_max: float = 10.0
    scene: SceneParams = field(default_factory=SceneParams)

    def intrinsics(self) -> CameraIntrinsics:
        return intrinsics_from_fov(self.fov_deg, self.resolution, self.resolution)


@dataclass(frozen=True)
class PointGroup:
    point_id: int
    center: np.ndarray
    database_frames: tuple[Frame, ...]
    query_frames: tuple[Frame, ...]

    def __post_init__(self) -> None:
        c = np.array(self.center, dtype=np.float64).reshape(3)
        c.setflags(write=False)
        object.__setattr__(self, "center", c)

    def frames(self) -> Iterator[Frame]:
        yield from self.database_frames
        yield from self.query_frames


@dataclass(frozen=True)
class SceneSummary:
    name: str
    seed: int
    points: int
    poses: int


@dataclass(frozen=True)
class DatasetManifest:
    seed: int
    scenes: tuple[SceneSummary, ...]
    points: int
    poses: int
    categories: int
    instances: int
    maps: int
    params: GenerationParams


def generate_point_frames(
    scene: SceneModel,
    point: GridPoint,
    params: GenerationParams,
    dataset_seed: int,
    scene_index: int = 0,
) -> PointGroup:
    """Render the 6 database frames and up to M query frames of one Point.

    All randomness comes from streams keyed by (dataset seed, scene, point id,
    frame id), so output is independent of generation order.
    """
    center = np.array([point.position[0], point.position[1], params.camera_height])
    if not scene.is_free(center):
        raise InvalidKeyPoseError(f"key pose {center.tolist()} is not in free space")
    k = params.intrinsics()
    rng = np.random.default_rng(
        np.random.SeedSequence((dataset_seed, scene_index, point.point_id))
    )
    base_yaw = rng.uniform(0.0, 2.0 * math.pi)

    db_frames = []
    for i in range(DB_FRAMES_PER_POINT):
        yaw = base_yaw + math.radians(YAW_STEP_DEG) * i
        frame = render(scene, camera_pose(center, yaw), k, params.depth_max)
        frame = replace(frame, point_id=point.point_id, frame_id=i, is_database=True)
        frame = add_rgb_noise(
            frame,
            params.noise_factor,
            np.random.SeedSequence((dataset_seed, scene_index, point.point_id, 0, i)),
        )
        db_frames.append(frame)

    query_frames = []
    for i in range(params.queries_per_point):
        for _ in range(10000):
            dx, dy = rng.uniform(-params.query_radius, params.query_radius, size=2)
            if dx * dx + dy * dy <= params.query_radius**2:
                break
        yaw = rng.uniform(0.0, 2.0 * math.pi)
        pos = center + np.array([dx, dy, 0.0])
        if not scene.is_free(pos):
            continue  # discarded, not resampled
        frame = render(scene, camera_pose(pos, yaw), k, params.depth_max)
        frame = replace(frame, point_id=point.point_id, frame_id=i, is_database=False)
        frame = add_rgb_noise(
            frame,
            params.noise_factor,
            np.random.SeedSequence((dataset_seed, scene_index, point.point_id, 1, i)),
        )
        query_frames.append(frame)

    return PointGroup(point.point_id, center, tuple(db_frames), tuple(query_frames))


def generate_scene_dataset(
    seed: int, params: GenerationParams, scene_index: int = 0
) -> tuple[SceneModel, list[PointGroup]]:
    """Generate one scene and all its point groups (in memory)."""
    scene = generate_scene(_scene_seed(seed, scene_index), params.scene)
    grid = generate_point_grid(scene, params.grid_spacing, params.camera_height)
    groups = [
        generate_point_frames(scene, gp, params, seed, scene_index) for gp in grid
    ]
    return scene, groups


def generate_dataset_to_dir(
    seed: int,
    params: GenerationParams,
    directory: str | Path,
    scene_index: int = 0,
    scene_name: str = "scene_0",
) -> DatasetManifest:
    """Generate one scene dataset straight to disk, one point at a time.

    Keeps at most one point group in memory, so full-size datasets (about
    1 GB of rasters) generate in bounded space.  Output bytes are identical
    to write_dataset() on the in-memory equivalent.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    scene = generate_scene(_scene_seed(seed, scene_index), params.scene)
    (directory / "scene.txt").write_text(scene_to_text(scene), encoding="ascii")
    grid = generate_point_grid(scene, params.grid_spacing, params.camera_height)

    points = poses = 0
    seen_instances: set[int] = set()
    for gp in grid:
        group = generate_point_frames(scene, gp, params, seed, scene_index)
        for f in group.database_frames:
            write_frame(f, directory / "points" / str(group.point_id))
        for f in group.query_frames:
            write_frame(f, directory / "queries" / str(group.point_id))
        points += 1
        poses += len(group.database_frames) + len(group.query_frames)
        for f in group.frames():
            seen_instances.update(int(v) for v in np.unique(f.instances) if v != 0)

    categories = {scene.category_of(i) for i in seen_instances} - {None}
    manifest = DatasetManifest(
        seed=seed,
        scenes=(SceneSummary(scene_name, scene.seed, points, poses),),
        points=points,
        poses=poses,
        categories=len(categories),
        instances=len(seen_instances),
        maps=1,
        params=params,
    )
    (directory / "manifest.txt").write_text(manifest_to_text(manifest), encoding="ascii")
    return manifest


def _scene_seed(dataset_seed: int, scene_index: int) -> int:
    return int(
        np.random.SeedSequence((dataset_seed, 0x5CE, scene_index)).generate_state(1)[0]
    )


# --- statistics ----------------------------------------------------------------


def dataset_stats(
    groups: Sequence[PointGroup], scene: SceneModel | None = None
) -> dict[str, int]:
    """Table-style summary: Points, Poses, Categories, Instances, Maps.

    Instance and category counts are over the distinct nonzero instance ids
    actually visible in the frames; categories require the scene's
    instance-to-category map and are 0 when no scene is given.
    """
    points = len(groups)
    poses = sum(len(g.database_frames) + len(g.query_frames) for g in groups)
    seen: set[int] = set()
    for g in groups:
        for f in g.frames():
            seen.update(int(v) for v in np.unique(f.instances) if v != 0)
    categories = 0
    if scene is not None and seen:
        categories = len({scene.category_of(i) for i in seen} - {None})
    return {
        "points": points,
        "poses": poses,
        "categories": categories,
        "instances": len(seen),
        "maps": 1 if groups else 0,
    }


# --- raster files ----------------------------------------------------------------


def write_ppm(path: Path, rgb: np.ndarray) -> None:
    h, w = rgb.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(rgb, dtype=np.uint8).tobytes())


def read_ppm(path: Path) -> np.ndarray:
    try:
        with open(path, "rb") as fh:
            magic, dims, maxval, data = _read_netpbm(fh)
    except OSError as e:
        raise DatasetFormatError(f"cannot read {path}: {e}") from e
    if magic != b"P6" or maxval != 255:
        raise DatasetFormatError(f"{path}: expected binary PPM with maxval 255")
    w, h = dims
    arr = np.frombuffer(data, dtype=np.uint8, count=w * h * 3)
    return arr.reshape(h, w, 3)


def write_pgm16(path: Path, values: np.ndarray) -> None:
    h, w = values.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(np.ascontiguousarray(values, dtype=">u2").tobytes())


def read_pgm16(path: Path) -> np.ndarray:
    try:
        with open(path, "rb") as fh:
            magic, dims, maxval, data = _read_netpbm(fh)
    except OSError as e:
        raise DatasetFormatError(f"cannot read {path}: {e}") from e
    if magic != b"P5" or maxval != 65535:
        raise DatasetFormatError(f"{path}: expected 16-bit binary PGM")
    w, h = dims
    return np.frombuffer(data, dtype=">u2", count=w * h).reshape(h, w)


def _read_netpbm(fh):
    magic = fh.readline().strip()
    fields: list[int] = []
    while len(fields) < 3:
        line = fh.readline()
        if not line:
            raise DatasetFormatError(f"{fh.name}: truncated netpbm header")
        text = line.split(b"#", 1)[0]
        fields.extend(int(tok) for tok in text.split())
    return magic, (fields[0], fields[1]), fields[2], fh.read()


# --- frame files ----------------------------------------------------------------


def _frame_stem(frame: Frame) -> str:
    prefix = "db" if frame.is_database else "q"
    return f"{prefix}_{frame.frame_id}"


def write_frame(frame: Frame, directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    stem = directory / _frame_stem(frame)
    write_ppm(stem.with_suffix(".rgb"), frame.rgb)
    depth_u16 = np.round(frame.depth * DEPTH_LEVELS).astype(np.uint16)
    write_pgm16(stem.with_suffix(".depth"), depth_u16)
    write_pgm16(stem.with_suffix(".inst"), frame.instances)
    stem.with_suffix(".pose").write_text(pose_to_text(frame.pose) + "\n", encoding="ascii")


def read_frame(directory: Path, point_id: int, frame_id: int, is_database: bool) -> Frame:
    stem = directory / (("db" if is_database else "q") + f"_{frame_id}")
    pose_path = stem.with_suffix(".pose")
    if not pose_path.exists():
        raise DatasetFormatError(f"missing pose file {pose_path}")
    try:
        pose = pose_from_text(pose_path.read_text(encoding="ascii").strip())
    except ValueError as e:
        raise DatasetFormatError(f"corrupt pose file {pose_path}: {e}") from e
    rgb = read_ppm(stem.with_suffix(".rgb"))
    depth = read_pgm16(stem.with_suffix(".depth")).astype(np.float64) / DEPTH_LEVELS
    inst = read_pgm16(stem.with_suffix(".inst")).astype(np.uint16)
    return Frame(rgb, depth, inst, pose, point_id, frame_id, is_database)


# --- manifest ----------------------------------------------------------------


def manifest_to_text(m: DatasetManifest) -> str:
    p = m.params
    sp = p.scene
    lines = [
        "format = pointloc-dataset-v1",
        f"seed = {m.seed}",
        f"maps = {m.maps}",
        f"points = {m.points}",
        f"poses = {m.poses}",
        f"categories = {m.categories}",
        f"instances = {m.instances}",
        f"grid_spacing = {p.grid_spacing:.17g}",
        f"queries_per_point = {p.queries_per_point}",
        f"query_radius = {p.query_radius:.17g}",
        f"noise_factor = {p.noise_factor:.17g}",
        f"fov_deg = {p.fov_deg:.17g}",
        f"resolution = {p.resolution}",
        f"camera_height = {p.camera_height:.17g}",
        f"depth_max = {p.depth_max:.17g}",
        f"scene_floor_width = {sp.floor_width:.17g}",
        f"scene_floor_depth = {sp.floor_depth:.17g}",
        f"scene_wall_height = {sp.wall_height:.17g}",
        f"scene_wall_thickness = {sp.wall_thickness:.17g}",
        f"scene_min_obstacles = {sp.min_obstacles}",
        f"scene_max_obstacles = {sp.max_obstacles}",
        f"scene_min_box_size = {sp.min_box_size:.17g}",
        f"scene_max_box_size = {sp.max_box_size:.17g}",
        f"scene_tall_fraction = {sp.tall_fraction:.17g}",
        f"scene_keypose_spacing = {sp.keypose_spacing:.17g}",
        f"scene_keypose_clearance = {sp.keypose_clearance:.17g}",
        f"scenes = {len(m.scenes)}",
    ]
    for i, s in enumerate(m.scenes):
        lines.append(f"scene_{i} = {s.name} {s.seed} {s.points} {s.poses}")
    return "\n".join(lines) + "\n"


def manifest_from_text(text: str, path: str = "manifest.txt") -> DatasetManifest:
    kv: dict[str, str] = {}
    scene_lines: list[tuple[int, str]] = []
    for raw in text.splitlines():
        if "=" not in raw:
            continue
        key, value = (part.strip() for part in raw.split("=", 1))
        if key.startswith("scene_") and key[6:].isdigit():
            scene_lines.append((int(key[6:]), value))
        else:
            kv[key] = value
    try:
        scene_params = SceneParams(
            floor_width=float(kv["scene_floor_width"]),
            floor_depth=float(kv["scene_floor_depth"]),
            wall_height=float(kv["scene_wall_height"]),
            wall_thickness=float(kv["scene_wall_thickness"]),
            min_obstacles=int(kv["scene_min_obstacles"]),
            max_obstacles=int(kv["scene_max_obstacles"]),
            min_box_size=float(kv["scene_min_box_size"]),
            max_box_size=float(kv["scene_max_box_size"]),
            tall_fraction=float(kv["scene_tall_fraction"]),
            keypose_spacing=float(kv["scene_keypose_spacing"]),
            keypose_clearance=float(kv["scene_keypose_clearance"]),
        )
        params = GenerationParams(
            scenes=int(kv.get("scenes", "1")),
            grid_spacing=float(kv["grid_spacing"]),
            queries_per_point=int(kv["queries_per_point"]),
            query_radius=float(kv["query_radius"]),
            noise_factor=float(kv["noise_factor"]),
            fov_deg=float(kv["fov_deg"]),
            resolution=int(kv["resolution"]),
            camera_height=float(kv["camera_height"]),
            depth_max=float(kv["depth_max"]),
            scene=scene_params,
        )
        summaries = []
        for _, value in sorted(scene_lines):
            name, seed, points, poses = value.split()
            summaries.append(SceneSummary(name, int(seed), int(points), int(poses)))
        return DatasetManifest(
            seed=int(kv["seed"]),
            scenes=tuple(summaries),
            points=int(kv["points"]),
            poses=int(kv["poses"]),
            categories=int(kv["categories"]),
            instances=int(kv["instances"]),
            maps=int(kv["maps"]),
            params=params,
        )
    except (KeyError, ValueError) as e:
        raise DatasetFormatError(f"corrupt manifest {path}: {e}") from e


def build_manifest(
    seed: int,
    params: GenerationParams,
    per_scene: Sequence[tuple[str, SceneModel, Sequence[PointGroup]]],
) -> DatasetManifest:
    summaries = []
    points = poses = instances = 0
    categories: set[tuple[int, int]] = set()
    for name, scene, groups in per_scene:
        stats = dataset_stats(groups, scene)
        summaries.append(SceneSummary(name, scene.seed, stats["points"], stats["poses"]))
        points += stats["points"]
        poses += stats["poses"]
        instances += stats["instances"]
        for g in groups:
            for f in g.frames():
                for v in np.unique(f.instances):
                    if v != 0:
                        cat = scene.category_of(int(v))
                        if cat is not None:
                            categories.add((scene.seed, cat))
    return DatasetManifest(
        seed=seed,
        scenes=tuple(summaries),
        points=points,
        poses=poses,
        categories=len({c for _, c in categories}),
        instances=instances,
        maps=len(per_scene),
        params=params,
    )


# --- dataset directories ---------------------------------------------------------


def write_dataset(
    scene: SceneModel,
    groups: Sequence[PointGroup],
    manifest: DatasetManifest,
    directory: str | Path,
) -> None:
    """Write one scene dataset: manifest, scene boxes, and all frames."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "manifest.txt").write_text(manifest_to_text(manifest), encoding="ascii")
    (directory / "scene.txt").write_text(scene_to_text(scene), encoding="ascii")
    for g in groups:
        for f in g.database_frames:
            write_frame(f, directory / "points" / str(g.point_id))
        for f in g.query_frames:
            write_frame(f, directory / "queries" / str(g.point_id))


def load_scene_model(directory: str | Path) -> SceneModel:
    path = Path(directory) / "scene.txt"
    if not path.exists():
        raise DatasetFormatError(f"missing scene file {path}")
    try:
        return scene_from_text(path.read_text(encoding="ascii"))
    except (ValueError, IndexError) as e:
        raise DatasetFormatError(f"corrupt scene file {path}: {e}") from e


def load_manifest(directory: str | Path) -> DatasetManifest:
    path = Path(directory) / "manifest.txt"
    if not path.exists():
        raise DatasetFormatError(f"missing manifest file {path}")
    return manifest_from_text(path.read_text(encoding="ascii"), str(path))


def _numeric_subdirs(path: Path) -> list[int]:
    if not path.exists():
        return []
    return sorted(int(p.name) for p in path.iterdir() if p.is_dir() and p.name.isdigit())


def _frame_ids(directory: Path, prefix: str) -> list[int]:
    if not directory.exists():
        return []
    ids = []
    for p in directory.glob(f"{prefix}_*.pose"):
        ids.append(int(p.stem.split("_", 1)[1]))
    return sorted(ids)


def iter_point_groups(directory: str | Path) -> Iterator[PointGroup]:
    """Stream point groups from a single-scene dataset directory."""
    directory = Path(directory)
    points_root = directory / "points"
    queries_root = directory / "queries"
    for pid in _numeric_subdirs(points_root):
        db_dir = points_root / str(pid)
        db = [read_frame(db_dir, pid, k, True) for k in _frame_ids(db_dir, "db")]
        q_dir = queries_root / str(pid)
        queries = [read_frame(q_dir, pid, k, False) for k in _frame_ids(q_dir, "q")]
        if not db:
            raise DatasetFormatError(f"point {pid} has no database frames in {db_dir}")
        center = db[0].pose.translation.copy()
        yield PointGroup(pid, center, tuple(db), tuple(queries))


def load_dataset(directory: str | Path) -> tuple[list[PointGroup], DatasetManifest]:
    """Load a single-scene dataset fully into memory and validate its counts."""
    directory = Path(directory)
    manifest = load_manifest(directory)
    groups = list(iter_point_groups(directory))
    poses = sum(len(g.database_frames) + len(g.query_frames) for g in groups)
    expected = sum(s.poses for s in manifest.scenes) or manifest.poses
    if poses != expected:
        raise DatasetFormatError(
            f"{directory / 'manifest.txt'}: manifest lists {expected} poses, found {poses}"
        )
    return groups, manifest


def scene_directories(root: str | Path) -> list[Path]:
    """Single-scene dirs composing a dataset: the root itself, or scene_* children."""
    root = Path(root)
    if (root / "scene.txt").exists():
        return [root]
    subdirs = sorted(
        (p for p in root.glob("scene_*") if p.is_dir()),
        key=lambda p: int(p.name.split("_", 1)[1]),
    )
    if not subdirs:
        raise DatasetFormatError(f"missing scene file {root / 'scene.txt'}")
    return subdirs
