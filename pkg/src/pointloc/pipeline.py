"""End-to-end localization: database preparation, retrieval, matching,
back-projection, registration, and final pose composition.

For a query frame the pipeline (1) embeds the query and retrieves the closest
database frame, (2) matches binary descriptors between the two, (3) lifts both
sides of every match to 3D using each frame's own depth at the keypoint pixel,
(4) estimates the relative transform with the configured solver, and (5)
composes it with the retrieved frame's camera-to-world pose.  Any failure
falls back to the retrieved pose itself (the retrieval-only baseline).
"""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from pointloc.dataset import PointGroup
from pointloc.features import (
    DESCRIPTOR_BYTES,
    describe,
    detect,
    match,
    to_grayscale,
)
from pointloc.geometry import (
    CameraIntrinsics,
    Pose,
    backproject,
    compose,
    pose_from_text,
    pose_to_text,
)
from pointloc.render import DEPTH_MAX, Frame
from pointloc.retrieval import (
    GlobalEmbedding,
    RetrievalIndex,
    VARIANT_BOW,
    VARIANT_VLAD,
    Vocabulary,
    build_index,
    embed_bow,
    embed_vlad,
    query_top1,
)
from pointloc.registration import (
    RegistrationError,
    gnc_tls_register,
    icp_refine,
    ransac_register,
    umeyama,
)

RETRIEVAL_VARIANTS = (VARIANT_BOW, VARIANT_VLAD)
REGISTRATION_METHODS = ("umeyama", "ransac", "ransac+icp", "gnc")
INVALID_DEPTH_MAX = 0.999  # normalized depth at or above this means no/far hit


@dataclass(frozen=True)
class PipelineConfig:
    retrieval: str = "vlad"
    method: str = "gnc"
    ratio: float = 0.8
    mutual: bool = True
    min_matches: int = 3
    max_keypoints: int = 1000
    fast_threshold: int = 20
    ransac_threshold: float = 0.05
    ransac_iters: int = 1000
    ransac_seed: int = 0
    icp_iters: int = 30
    icp_tol: float = 1e-6
    gnc_noise_bound: float = 0.05
    record_timings: bool = True
    hardware: str = ""

    def __post_init__(self) -> None:
        if self.retrieval not in RETRIEVAL_VARIANTS:
            raise ValueError(f"retrieval must be one of {RETRIEVAL_VARIANTS}")
        if self.method not in REGISTRATION_METHODS:
            raise ValueError(f"method must be one of {REGISTRATION_METHODS}")
        if self.min_matches < 3:
            raise ValueError("min_matches must be at least 3")


_CONFIG_PARSERS = {
    "retrieval": str,
    "method": str,
    "ratio": float,
    "mutual": lambda v: v.lower() in ("1", "true", "yes", "on"),
    "min_matches": int,
    "max_keypoints": int,
    "fast_threshold": int,
    "ransac_threshold": float,
    "ransac_iters": int,
    "ransac_seed": int,
    "icp_iters": int,
    "icp_tol": float,
    "gnc_noise_bound": float,
    "record_timings": lambda v: v.lower() in ("1", "true", "yes", "on"),
    "hardware": str,
}


def parse_config(text: str) -> PipelineConfig:
    """key = value lines; unknown keys are rejected."""
    kv = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno} is not 'key = value': {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _CONFIG_PARSERS:
            raise ValueError(f"unknown config key {key!r} on line {lineno}")
        kv[key] = _CONFIG_PARSERS[key](value)
    return PipelineConfig(**kv)


def load_config(path: str | Path) -> PipelineConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def config_to_text(config: PipelineConfig) -> str:
    lines = []
    for key in _CONFIG_PARSERS:
        v = getattr(config, key)
        if isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{key} = {v}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class DatabaseFrame:
    frame_id: int
    point_id: int
    pose: Pose
    keypoint_xy: np.ndarray  # (n, 2) float64
    descriptors: np.ndarray  # (n, 32) uint8
    depth: np.ndarray  # (h, w) float64, normalized
    embedding: GlobalEmbedding


@dataclass(frozen=True)
class LocalizationDatabase:
    frames: tuple[DatabaseFrame, ...]
    vocabulary: Vocabulary
    index: RetrievalIndex
    intrinsics: CameraIntrinsics
    variant: str

    def frame_by_id(self, frame_id: int) -> DatabaseFrame:
        return self.frames[frame_id]


def _embed(descriptors: np.ndarray, vocab: Vocabulary, variant: str) -> GlobalEmbedding:
    if variant == VARIANT_BOW:
        return embed_bow(descriptors, vocab)
    return embed_vlad(descriptors, vocab)


def extract_frame_features(
    frame: Frame, config: PipelineConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Keypoint pixel coordinates and their descriptors for one frame."""
    gray = to_grayscale(frame.rgb)
    kps = detect(gray, config.max_keypoints, config.fast_threshold)
    desc, kept = describe(gray, kps)
    return kps.xy[kept], desc


def build_database(
    dataset: Iterable[PointGroup],
    vocab: Vocabulary,
    config: PipelineConfig,
    intrinsics: CameraIntrinsics,
) -> LocalizationDatabase:
    """Precompute features, embeddings and the retrieval index over every
    database frame (6 per point); frame ids are assigned in (point, yaw) order."""
    frames: list[DatabaseFrame] = []
    for group in sorted(dataset, key=lambda g: g.point_id):
        for f in group.database_frames:
            xy, desc = extract_frame_features(f, config)
            frames.append(
                DatabaseFrame(
                    frame_id=len(frames),
                    point_id=f.point_id,
                    pose=f.pose,
                    keypoint_xy=xy,
                    descriptors=desc,
                    depth=f.depth,
                    embedding=_embed(desc, vocab, config.retrieval),
                )
            )
    if not frames:
        raise ValueError("dataset holds no database frames")
    index = build_index([f.frame_id for f in frames], [f.embedding for f in frames])
    return LocalizationDatabase(tuple(frames), vocab, index, intrinsics, config.retrieval)


@dataclass(frozen=True)
class StageTimings:
    """Wall-clock seconds of each localization stage for one query."""

    feature_extraction: float = 0.0
    embedding_extraction: float = 0.0
    embedding_matching: float = 0.0
    feature_matching: float = 0.0
    pose_optimization: float = 0.0
    total: float = 0.0

    @property
    def retrieval(self) -> float:
        return self.embedding_extraction + self.embedding_matching

    @property
    def matching(self) -> float:
        return self.feature_extraction + self.feature_matching

    @property
    def registration(self) -> float:
        return self.pose_optimization


@dataclass(frozen=True)
class LocalizationResult:
    estimated_pose: Pose
    top1_frame_id: int
    match_count: int
    inlier_count: int
    fallback: bool
    timings: StageTimings
    query_point_id: int = -1
    query_frame_id: int = -1

    def __post_init__(self) -> None:
        if self.fallback and self.inlier_count != 0:
            raise ValueError("fallback results must report zero inliers")


class _StageClock:
    """perf_counter stages; reports zeros when timing is disabled."""

    def __init__(self, enabled: bool):
        self.enabled = enabled
        self.values: dict[str, float] = {}
        self._start = time.perf_counter()
        self._mark = self._start

    def lap(self, name: str) -> None:
        now = time.perf_counter()
        self.values[name] = self.values.get(name, 0.0) + (now - self._mark)
        self._mark = now

    def timings(self) -> StageTimings:
        if not self.enabled:
            return StageTimings()
        return StageTimings(
            feature_extraction=self.values.get("feature_extraction", 0.0),
            embedding_extraction=self.values.get("embedding_extraction", 0.0),
            embedding_matching=self.values.get("embedding_matching", 0.0),
            feature_matching=self.values.get("feature_matching", 0.0),
            pose_optimization=self.values.get("pose_optimization", 0.0),
            total=time.perf_counter() - self._start,
        )


def _register(
    p_query: np.ndarray,
    p_db: np.ndarray,
    query_cloud: np.ndarray,
    db_cloud: np.ndarray,
    config: PipelineConfig,
    seed: int,
):
    method = config.method
    if method == "umeyama":
        return umeyama(p_query, p_db), len(p_query)
    if method == "ransac":
        res = ransac_register(
            p_query, p_db, config.ransac_threshold, config.ransac_iters, seed
        )
        return res.pose, len(res.inlier_indices)
    if method == "ransac+icp":
        res = ransac_register(
            p_query, p_db, config.ransac_threshold, config.ransac_iters, seed
        )
        refined = icp_refine(
            query_cloud, db_cloud, res.pose, config.icp_iters, config.icp_tol
        )
        return refined.pose, len(res.inlier_indices)
    res = gnc_tls_register(p_query, p_db, config.gnc_noise_bound)
    return res.pose, len(res.inlier_indices)


def backproject_keypoints(
    xy: np.ndarray, depth: np.ndarray, k: CameraIntrinsics
) -> np.ndarray:
    """3D cloud of the valid-depth keypoints of one frame (camera coordinates)."""
    pts = []
    for x, y in xy:
        dn = float(depth[int(round(y)), int(round(x))])
        if 0.0 < dn < INVALID_DEPTH_MAX:
            pts.append(backproject((x, y), dn * DEPTH_MAX, k))
    return np.asarray(pts).reshape(-1, 3)


def localize(
    db: LocalizationDatabase, query: Frame, config: PipelineConfig
) -> LocalizationResult:
    """Full three-stage localization of one query frame.

    The estimated pose is P_db_top1 composed with the relative transform that
    maps query-camera points into top1-camera coordinates; when matching or
    registration cannot produce one, the retrieved pose itself is returned
    with fallback=True.
    """
    clock = _StageClock(config.record_timings)
    query_xy, query_desc = extract_frame_features(query, config)
    clock.lap("feature_extraction")
    embedding = _embed(query_desc, db.vocabulary, config.retrieval)
    clock.lap("embedding_extraction")
    top1_id, _ = query_top1(db.index, embedding)
    clock.lap("embedding_matching")

    db_frame = db.frame_by_id(top1_id)
    matches = match(query_desc, db_frame.descriptors, config.ratio, config.mutual)
    clock.lap("feature_matching")

    p_query, p_db = [], []
    for m in matches:
        qx, qy = query_xy[m.query_index]
        dx, dy = db_frame.keypoint_xy[m.db_index]
        qd = float(query.depth[int(round(qy)), int(round(qx))])
        dd = float(db_frame.depth[int(round(dy)), int(round(dx))])
        if not (0.0 < qd < INVALID_DEPTH_MAX and 0.0 < dd < INVALID_DEPTH_MAX):
            continue
        p_query.append(backproject((qx, qy), qd * DEPTH_MAX, db.intrinsics))
        p_db.append(backproject((dx, dy), dd * DEPTH_MAX, db.intrinsics))

    fallback = True
    pose = db_frame.pose
    inliers = 0
    if len(p_query) >= config.min_matches:
        if config.method == "ransac+icp":
            query_cloud = backproject_keypoints(query_xy, query.depth, db.intrinsics)
            db_cloud = backproject_keypoints(
                db_frame.keypoint_xy, db_frame.depth, db.intrinsics
            )
        else:
            query_cloud = db_cloud = np.zeros((0, 3))
        seed = (
            config.ransac_seed * 1000003 + query.point_id * 1009 + query.frame_id
        ) % (2**63)
        try:
            relative, inliers = _register(
                np.asarray(p_query), np.asarray(p_db), query_cloud, db_cloud, config, seed
            )
            pose = compose(db_frame.pose, relative)
            fallback = False
        except RegistrationError:
            fallback = True
            pose = db_frame.pose
            inliers = 0
    clock.lap("pose_optimization")

    return LocalizationResult(
        estimated_pose=pose,
        top1_frame_id=top1_id,
        match_count=len(matches),
        inlier_count=inliers,
        fallback=fallback,
        timings=clock.timings(),
        query_point_id=query.point_id,
        query_frame_id=query.frame_id,
    )


def retrieval_only_localize(
    db: LocalizationDatabase, query: Frame, config: PipelineConfig
) -> LocalizationResult:
    """Top-1 retrieved pose as the answer; no matching or registration."""
    clock = _StageClock(config.record_timings)
    _, query_desc = extract_frame_features(query, config)
    clock.lap("feature_extraction")
    embedding = _embed(query_desc, db.vocabulary, config.retrieval)
    clock.lap("embedding_extraction")
    top1_id, _ = query_top1(db.index, embedding)
    clock.lap("embedding_matching")
    return LocalizationResult(
        estimated_pose=db.frame_by_id(top1_id).pose,
        top1_frame_id=top1_id,
        match_count=0,
        inlier_count=0,
        fallback=True,
        timings=clock.timings(),
        query_point_id=query.point_id,
        query_frame_id=query.frame_id,
    )


# --- results file ------------------------------------------------------------------


def result_to_csv_line(r: LocalizationResult) -> str:
    p = r.estimated_pose
    fields = [
        str(r.query_frame_id),
        str(r.query_point_id),
        str(r.top1_frame_id),
        "1" if r.fallback else "0",
        *(f"{v:.17g}" for v in p.translation),
        f"{p.rotation.w:.17g}",
        f"{p.rotation.x:.17g}",
        f"{p.rotation.y:.17g}",
        f"{p.rotation.z:.17g}",
        f"{r.timings.retrieval:.9f}",
        f"{r.timings.matching:.9f}",
        f"{r.timings.registration:.9f}",
    ]
    return ",".join(fields)


def write_results(results: Sequence[LocalizationResult], path: str | Path) -> None:
    """One line per query: query_id, point_id, top1_frame_id, fallback,
    tx, ty, tz, qw, qx, qy, qz, t_retr, t_match, t_reg."""
    Path(path).write_text(
        "".join(result_to_csv_line(r) + "\n" for r in results), encoding="ascii"
    )


@dataclass(frozen=True)
class ResultRow:
    query_frame_id: int
    query_point_id: int
    top1_frame_id: int
    fallback: bool
    pose: Pose
    t_retrieval: float
    t_matching: float
    t_registration: float


def read_results(path: str | Path) -> list[ResultRow]:
    rows = []
    for lineno, line in enumerate(Path(path).read_text(encoding="ascii").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 14:
            raise ValueError(f"{path}:{lineno}: expected 14 fields, got {len(parts)}")
        pose = pose_from_text(" ".join(parts[4:11]))
        rows.append(
            ResultRow(
                query_frame_id=int(parts[0]),
                query_point_id=int(parts[1]),
                top1_frame_id=int(parts[2]),
                fallback=parts[3] == "1",
                pose=pose,
                t_retrieval=float(parts[11]),
                t_matching=float(parts[12]),
                t_registration=float(parts[13]),
            )
        )
    return rows


# --- database file -----------------------------------------------------------------

_DB_MAGIC = b"PLDB"
_DB_VERSION = 1


def save_database(db: LocalizationDatabase, path: str | Path) -> None:
    """Flat deterministic binary dump of a LocalizationDatabase."""
    k = db.intrinsics
    with open(path, "wb") as fh:
        fh.write(_DB_MAGIC)
        fh.write(struct.pack(">I", _DB_VERSION))
        variant_code = 0 if db.variant == VARIANT_BOW else 1
        fh.write(struct.pack(">B", variant_code))
        fh.write(struct.pack(">ddddII", k.fx, k.fy, k.cx, k.cy, k.width, k.height))
        fh.write(struct.pack(">I", db.vocabulary.k))
        fh.write(struct.pack(">q", db.vocabulary.training_seed))
        fh.write(np.ascontiguousarray(db.vocabulary.centroids, dtype=np.uint8).tobytes())
        fh.write(np.ascontiguousarray(db.vocabulary.idf, dtype=">f8").tobytes())
        fh.write(struct.pack(">I", len(db.frames)))
        dim = db.index.matrix.shape[1]
        fh.write(struct.pack(">I", dim))
        for f in db.frames:
            fh.write(struct.pack(">II", f.frame_id, f.point_id))
            fh.write((pose_to_text(f.pose) + "\n").encode("ascii"))
            fh.write(struct.pack(">I", len(f.keypoint_xy)))
            fh.write(np.ascontiguousarray(f.keypoint_xy, dtype=">f8").tobytes())
            fh.write(np.ascontiguousarray(f.descriptors, dtype=np.uint8).tobytes())
            fh.write(np.ascontiguousarray(f.embedding.values, dtype=">f8").tobytes())
            h, w = f.depth.shape
            fh.write(struct.pack(">II", h, w))
            depth_u16 = np.round(np.asarray(f.depth) * 65535.0).astype(">u2")
            fh.write(depth_u16.tobytes())


def load_database(path: str | Path) -> LocalizationDatabase:
    from pointloc.render import DEPTH_LEVELS

    with open(path, "rb") as fh:
        if fh.read(4) != _DB_MAGIC:
            raise ValueError(f"{path}: not a localization database file")
        (version,) = struct.unpack(">I", fh.read(4))
        if version != _DB_VERSION:
            raise ValueError(f"{path}: unsupported database version {version}")
        (variant_code,) = struct.unpack(">B", fh.read(1))
        variant = VARIANT_BOW if variant_code == 0 else VARIANT_VLAD
        fx, fy, cx, cy, width, height = struct.unpack(">ddddII", fh.read(40))
        intrinsics = CameraIntrinsics(fx, fy, cx, cy, width, height)
        (vocab_k,) = struct.unpack(">I", fh.read(4))
        (seed,) = struct.unpack(">q", fh.read(8))
        centroids = np.frombuffer(fh.read(vocab_k * DESCRIPTOR_BYTES), dtype=np.uint8)
        centroids = centroids.reshape(vocab_k, DESCRIPTOR_BYTES).copy()
        idf = np.frombuffer(fh.read(vocab_k * 8), dtype=">f8").astype(np.float64)
        vocab = Vocabulary(vocab_k, centroids, idf, seed)
        n_frames, dim = struct.unpack(">II", fh.read(8))
        frames = []
        for _ in range(n_frames):
            frame_id, point_id = struct.unpack(">II", fh.read(8))
            pose_line = b""
            while not pose_line.endswith(b"\n"):
                pose_line += fh.read(1)
            pose = pose_from_text(pose_line.decode("ascii").strip())
            (n_kp,) = struct.unpack(">I", fh.read(4))
            xy = np.frombuffer(fh.read(n_kp * 16), dtype=">f8").astype(np.float64)
            xy = xy.reshape(n_kp, 2)
            desc = np.frombuffer(fh.read(n_kp * DESCRIPTOR_BYTES), dtype=np.uint8)
            desc = desc.reshape(n_kp, DESCRIPTOR_BYTES).copy()
            emb = np.frombuffer(fh.read(dim * 8), dtype=">f8").astype(np.float64)
            h, w = struct.unpack(">II", fh.read(8))
            depth = np.frombuffer(fh.read(h * w * 2), dtype=">u2").astype(np.float64)
            depth = depth.reshape(h, w) / DEPTH_LEVELS
            frames.append(
                DatabaseFrame(
                    frame_id=frame_id,
                    point_id=point_id,
                    pose=pose,
                    keypoint_xy=xy,
                    descriptors=desc,
                    depth=depth,
                    embedding=GlobalEmbedding(emb, variant),
                )
            )
    index = build_index([f.frame_id for f in frames], [f.embedding for f in frames])
    return LocalizationDatabase(tuple(frames), vocab, index, intrinsics, variant)


def train_vocabulary_for_dataset(
    groups: Iterable[PointGroup], k: int, seed: int, config: PipelineConfig
) -> Vocabulary:
    """Vocabulary over the descriptors of all database frames (queries unseen)."""
    from pointloc.retrieval import train_vocabulary

    per_frame = []
    for g in groups:
        for f in g.database_frames:
            _, desc = extract_frame_features(f, config)
            per_frame.append(desc)
    return train_vocabulary(per_frame, k=k, seed=seed)
