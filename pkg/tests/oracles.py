"""Independent reference implementations used as test oracles.

Everything here is written from first principles (scalar loops, direct
formulas) and deliberately avoids calling into the code paths it checks.
"""

from __future__ import annotations

import math

import numpy as np


def quat_to_matrix(w: float, x: float, y: float, z: float) -> np.ndarray:
    """Rotation matrix via the sandwich product q * v * q^-1 on basis vectors."""

    def rot(v):
        # quaternion multiply (w, vec) style, expanded by hand
        qv = (x, y, z)
        uv = _cross(qv, v)
        uuv = _cross(qv, uv)
        return [v[i] + 2.0 * (w * uv[i] + uuv[i]) for i in range(3)]

    cols = [rot((1, 0, 0)), rot((0, 1, 0)), rot((0, 0, 1))]
    return np.array(cols, dtype=np.float64).T


def _cross(a, b):
    return (
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    )


def homogeneous(w, x, y, z, t) -> np.ndarray:
    m = np.eye(4)
    m[:3, :3] = quat_to_matrix(w, x, y, z)
    m[:3, 3] = t
    return m


def rotation_angle_from_trace(r_a: np.ndarray, r_b: np.ndarray) -> float:
    """Geodesic angle in degrees via acos((trace(R_rel) - 1) / 2)."""
    r_rel = r_a.T @ r_b
    c = (np.trace(r_rel) - 1.0) / 2.0
    return math.degrees(math.acos(max(-1.0, min(1.0, c))))


def hamming(a: np.ndarray, b: np.ndarray) -> int:
    """Bit-level Hamming distance between two uint8 descriptor rows."""
    dist = 0
    for x, y in zip(a.tolist(), b.tolist()):
        dist += bin(x ^ y).count("1")
    return dist


def ray_box_z_depth(origin, direction, box_min, box_max):
    """Scalar slab test.  Returns the entry parameter t (= z-depth when the
    direction has unit z in the camera frame) or None when the ray misses."""
    t_near, t_far = -math.inf, math.inf
    for a in range(3):
        o, d = origin[a], direction[a]
        lo, hi = box_min[a], box_max[a]
        if abs(d) < 1e-300:
            if o < lo or o > hi:
                return None
            continue
        t1, t2 = (lo - o) / d, (hi - o) / d
        if t1 > t2:
            t1, t2 = t2, t1
        t_near = max(t_near, t1)
        t_far = min(t_far, t2)
    if t_near > t_far or t_far <= 0:
        return None
    return t_near


def fast_segment_test(gray: np.ndarray, row: int, col: int, threshold: int) -> bool:
    """Brute-force FAST-9 segment test at one pixel."""
    circle = [
        (0, -3), (1, -3), (2, -2), (3, -1), (3, 0), (3, 1), (2, 2), (1, 3),
        (0, 3), (-1, 3), (-2, 2), (-3, 1), (-3, 0), (-3, -1), (-2, -2), (-1, -3),
    ]
    center = int(gray[row, col])
    brighter = []
    darker = []
    for dx, dy in circle:
        v = int(gray[row + dy, col + dx])
        brighter.append(v > center + threshold)
        darker.append(v < center - threshold)
    for flags in (brighter, darker):
        doubled = flags + flags
        run = 0
        for f in doubled:
            run = run + 1 if f else 0
            if run >= 9:
                return True
    return False
