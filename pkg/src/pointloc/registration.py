"""Rigid 3D-3D registration: closed-form least squares, RANSAC, trimmed ICP
refinement, and a graduated non-convexity solver over a truncated-least-squares
cost for heavy outlier contamination.

Scale is fixed to 1 everywhere: both point sets come from metric RGB-D
back-projections.  All solvers return rotations re-orthonormalized through the
SVD factorization (det +1).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from pointloc.geometry import Pose, UnitQuaternion, transform_points

GNC_DIVISOR = 1.4
GNC_INIT_HYPOTHESES = 256
_GNC_INIT_SEED = 0xD1CE  # internal constant; the solver takes no seed
DEGENERACY_RTOL = 1e-9


class RegistrationError(Exception):
    pass


class InsufficientPointsError(RegistrationError):
    pass


class DegenerateConfigurationError(RegistrationError):
    pass


class RegistrationFailedError(RegistrationError):
    pass


@dataclass(frozen=True)
class RegistrationResult:
    """Estimated transform mapping query-frame points into db-frame coordinates.

    residual_history records the per-iteration objective of iterative solvers
    (trimmed mean residual for ICP, truncated cost for GNC); closed-form paths
    leave it empty.
    """

    pose: Pose
    inlier_indices: np.ndarray
    iterations: int
    converged: bool
    mean_inlier_residual: float
    residual_history: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        idx = np.asarray(self.inlier_indices, dtype=np.int64)
        idx.setflags(write=False)
        object.__setattr__(self, "inlier_indices", idx)


def _as_points(arr, name: str) -> np.ndarray:
    pts = np.asarray(arr, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"{name} must be an (n, 3) array, got shape {pts.shape}")
    return pts


def umeyama(p_query: np.ndarray, p_db: np.ndarray, weights: np.ndarray | None = None) -> Pose:
    """Least-squares rigid transform T with T(p_query) ~ p_db, scale fixed at 1.

    Cross-covariance SVD with determinant sign correction.  Raises
    InsufficientPointsError below 3 points and DegenerateConfigurationError for
    collinear (rank < 2) configurations, where the rotation is not unique.
    """
    q = _as_points(p_query, "p_query")
    d = _as_points(p_db, "p_db")
    if q.shape != d.shape:
        raise ValueError("point sets must have equal shapes")
    if len(q) < 3:
        raise InsufficientPointsError(f"need at least 3 correspondences, got {len(q)}")
    if weights is None:
        w = np.ones(len(q))
    else:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (len(q),) or (w < 0).any():
            raise ValueError("weights must be a nonnegative (n,) array")
        if w.sum() <= 0:
            raise DegenerateConfigurationError("all correspondence weights are zero")
    w = w / w.sum()

    qc = w @ q
    dc = w @ d
    a = q - qc
    b = d - dc
    h = np.einsum("ni,n,nj->ij", a, w, b)
    u, s, vt = np.linalg.svd(h)
    if s[1] <= DEGENERACY_RTOL * max(s[0], 1e-300):
        raise DegenerateConfigurationError(
            "correspondences are collinear or coincident; rotation underdetermined"
        )
    sign = np.sign(np.linalg.det(vt.T @ u.T))
    r = vt.T @ np.diag([1.0, 1.0, sign]) @ u.T
    t = dc - r @ qc
    return Pose(UnitQuaternion.from_rotation_matrix(r), t)


def _residuals(pose: Pose, q: np.ndarray, d: np.ndarray) -> np.ndarray:
    return np.linalg.norm(transform_points(pose, q) - d, axis=1)


def ransac_register(
    p_query: np.ndarray,
    p_db: np.ndarray,
    inlier_threshold: float = 0.05,
    max_iters: int = 1000,
    seed: int = 0,
) -> RegistrationResult:
    """3-point hypotheses from a seeded stream, consensus by residual < threshold,
    early exit at 90% consensus, final refit on the best consensus set."""
    q = _as_points(p_query, "p_query")
    d = _as_points(p_db, "p_db")
    if q.shape != d.shape:
        raise ValueError("point sets must have equal shapes")
    n = len(q)
    if n < 3:
        raise InsufficientPointsError(f"need at least 3 correspondences, got {n}")
    if inlier_threshold <= 0:
        raise ValueError("inlier_threshold must be positive")
    rng = np.random.default_rng(seed)

    best_size = 0
    best_mask: np.ndarray | None = None
    best_pose: Pose | None = None
    iterations = 0
    for _ in range(max_iters):
        iterations += 1
        idx = rng.choice(n, size=3, replace=False)
        try:
            hyp = umeyama(q[idx], d[idx])
        except DegenerateConfigurationError:
            continue
        mask = _residuals(hyp, q, d) < inlier_threshold
        size = int(mask.sum())
        if size > best_size:  # strictly greater keeps the earliest hypothesis on ties
            best_size, best_mask, best_pose = size, mask, hyp
        if best_size >= 3 and best_size / n >= 0.9:
            break

    if best_pose is None or best_size < 3:
        raise RegistrationFailedError(
            f"no hypothesis reached 3 inliers in {iterations} iterations"
        )

    pose = best_pose
    try:
        pose = umeyama(q[best_mask], d[best_mask])
    except DegenerateConfigurationError:
        pass  # keep the minimal-sample pose
    mask = _residuals(pose, q, d) < inlier_threshold
    if mask.sum() < 3:
        pose, mask = best_pose, best_mask
    residuals = _residuals(pose, q, d)
    inliers = np.nonzero(mask)[0]
    return RegistrationResult(
        pose=pose,
        inlier_indices=inliers,
        iterations=iterations,
        converged=True,
        mean_inlier_residual=float(residuals[inliers].mean()),
    )


def icp_refine(
    query_cloud: np.ndarray,
    db_cloud: np.ndarray,
    init: Pose,
    max_iters: int = 30,
    tol: float = 1e-6,
) -> RegistrationResult:
    """Point-to-point ICP with an adaptive trim at twice the median residual.

    Associations go from the transformed query cloud to its nearest db points.
    The trimmed mean residual is non-increasing over accepted iterations; a
    step that would raise it is rejected and iteration stops there.
    """
    q = _as_points(query_cloud, "query_cloud")
    d = _as_points(db_cloud, "db_cloud")
    if len(q) == 0 or len(d) == 0:
        raise InsufficientPointsError("both clouds must be nonempty")
    if not np.isfinite(init.translation).all():
        raise ValueError("initial pose must be finite")
    tree = cKDTree(d)

    def associate(pose: Pose):
        dist, nn = tree.query(transform_points(pose, q))
        med = float(np.median(dist))
        keep = dist <= 2.0 * med + 1e-12
        return nn, keep, float(dist[keep].mean())

    pose = init
    nn, keep, mean_res = associate(pose)
    history = [mean_res]
    converged = False
    iterations = 0
    for _ in range(max_iters):
        iterations += 1
        try:
            cand = umeyama(q[keep], d[nn[keep]])
        except (InsufficientPointsError, DegenerateConfigurationError):
            break
        nn2, keep2, mean2 = associate(cand)
        if mean2 > history[-1] + 1e-15:
            converged = True  # no further improvement possible from here
            break
        pose, nn, keep = cand, nn2, keep2
        history.append(mean2)
        if history[-2] - history[-1] < tol:
            converged = True
            break

    return RegistrationResult(
        pose=pose,
        inlier_indices=np.nonzero(keep)[0],
        iterations=iterations,
        converged=converged,
        mean_inlier_residual=history[-1],
        residual_history=tuple(history),
    )


def _tls_weights(r2: np.ndarray, eps2: float, mu: float) -> np.ndarray:
    """Closed-form truncated-least-squares weight update at control value mu.

    mu > 1 interpolates between a soft 1/r-style downweighting (mu large) and
    the hard r <= eps inlier test (mu -> 1): weights are 1 below eps^2/mu,
    0 above mu * eps^2, and (eps * sqrt(mu) / r - 1) / (mu - 1) in between.
    """
    w = np.zeros_like(r2)
    lower = eps2 / mu
    upper = eps2 * mu
    w[r2 <= lower] = 1.0
    mid = (r2 > lower) & (r2 < upper)
    if mid.any():
        r = np.sqrt(r2[mid])
        w[mid] = (np.sqrt(eps2 * mu) / r - 1.0) / (mu - 1.0)
    return np.clip(w, 0.0, 1.0)


def gnc_tls_register(
    p_query: np.ndarray, p_db: np.ndarray, noise_bound: float
) -> RegistrationResult:
    """Graduated non-convexity over the truncated cost sum(min(r^2/eps^2, 1)).

    Alternates weighted closed-form fits with the closed-form TLS weight
    update; the control value starts at 2 * (max residual / noise bound)^2 and
    is divided by 1.4 each outer iteration until it reaches 1.  The anneal is
    started from the best of a fixed set of internally seeded 3-point
    hypotheses under the truncated cost (a plain least-squares fit is a poor
    basin beyond ~60% outliers); the whole solve is deterministic.  The best
    pose by truncated cost is retained, so the recorded cost never increases.
    """
    if noise_bound <= 0:
        raise ValueError("noise_bound must be positive")
    q = _as_points(p_query, "p_query")
    d = _as_points(p_db, "p_db")
    if q.shape != d.shape:
        raise ValueError("point sets must have equal shapes")
    if len(q) < 3:
        raise InsufficientPointsError(f"need at least 3 correspondences, got {len(q)}")
    eps2 = noise_bound * noise_bound

    def truncated_cost(res2: np.ndarray) -> float:
        return float(np.minimum(res2 / eps2, 1.0).sum())

    pose = umeyama(q, d)
    best_cost = truncated_cost(_residuals(pose, q, d) ** 2)
    hyp_rng = np.random.default_rng(_GNC_INIT_SEED)
    for _ in range(GNC_INIT_HYPOTHESES):
        idx = hyp_rng.choice(len(q), size=3, replace=False)
        try:
            cand = umeyama(q[idx], d[idx])
        except DegenerateConfigurationError:
            continue
        cost = truncated_cost(_residuals(cand, q, d) ** 2)
        if cost < best_cost:
            pose, best_cost = cand, cost

    r2 = _residuals(pose, q, d) ** 2
    history = [truncated_cost(r2)]
    mu = 2.0 * float(r2.max()) / eps2
    iterations = 0
    while mu > 1.0:
        iterations += 1
        weights = _tls_weights(r2, eps2, mu)
        try:
            cand = umeyama(q, d, weights=weights)
        except (DegenerateConfigurationError, InsufficientPointsError):
            mu /= GNC_DIVISOR
            history.append(history[-1])
            continue
        cand_r2 = _residuals(cand, q, d) ** 2
        cost = truncated_cost(cand_r2)
        if cost <= history[-1] + 1e-15:
            pose, r2 = cand, cand_r2
            history.append(cost)
        else:
            history.append(history[-1])  # keep the best pose so far
        mu /= GNC_DIVISOR

    inlier_mask = r2 <= eps2  # weight limit as mu -> 1
    inliers = np.nonzero(inlier_mask)[0]
    if len(inliers) < 3:
        raise RegistrationFailedError(
            f"only {len(inliers)} correspondences survive the noise bound"
        )
    try:
        pose = umeyama(q[inliers], d[inliers])
    except DegenerateConfigurationError:
        pass
    residuals = _residuals(pose, q, d)
    final_mask = residuals**2 <= eps2
    if final_mask.sum() >= 3:
        inliers = np.nonzero(final_mask)[0]
    return RegistrationResult(
        pose=pose,
        inlier_indices=inliers,
        iterations=iterations,
        converged=True,
        mean_inlier_residual=float(residuals[inliers].mean()),
        residual_history=tuple(history),
    )


# --- correspondence debug dump -----------------------------------------------------


def correspondences_to_text(p_query: np.ndarray, p_db: np.ndarray) -> str:
    q = _as_points(p_query, "p_query")
    d = _as_points(p_db, "p_db")
    lines = [
        " ".join(f"{v:.17g}" for v in (*q[i], *d[i])) for i in range(len(q))
    ]
    return "\n".join(lines) + ("\n" if lines else "")


def correspondences_from_text(text: str) -> tuple[np.ndarray, np.ndarray]:
    rows = [[float(v) for v in line.split()] for line in text.splitlines() if line.strip()]
    arr = np.asarray(rows, dtype=np.float64).reshape(-1, 6)
    return arr[:, :3].copy(), arr[:, 3:].copy()


def dump_correspondences(p_query: np.ndarray, p_db: np.ndarray, path: str | Path) -> None:
    Path(path).write_text(correspondences_to_text(p_query, p_db), encoding="ascii")
