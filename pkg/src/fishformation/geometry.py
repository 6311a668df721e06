"""Planar geometry, random leader paths, path offsetting and LOS guidance.

Lengths are in millimetres and angles in radians throughout.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateOffsetError, InvalidArgument


def wrap_angle(a):
    """Wrap angle(s) into (-pi, pi]."""
    w = np.pi - np.mod(np.pi - np.asarray(a, dtype=float), 2.0 * np.pi)
    w = np.where(w <= -np.pi, w + 2.0 * np.pi, w)
    return float(w) if w.ndim == 0 else w


@dataclass(frozen=True)
class Point2:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise InvalidArgument(f"non-finite point ({self.x}, {self.y})")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class Pose2:
    position: Point2
    heading: float

    def __post_init__(self):
        object.__setattr__(self, "heading", float(wrap_angle(float(self.heading))))


def as_xy(p) -> np.ndarray:
    if isinstance(p, Point2):
        return p.as_array()
    return np.asarray(p, dtype=float).reshape(2)


@dataclass(frozen=True)
class TankSpec:
    length: float = 3050.0
    width: float = 580.0

    def __post_init__(self):
        if not (self.length > 0 and self.width > 0):
            raise InvalidArgument("tank dimensions must be positive")

    def contains(self, p, margin: float = 0.0) -> bool:
        x, y = as_xy(p)
        return margin <= x <= self.length - margin and margin <= y <= self.width - margin


@dataclass(frozen=True)
class GuidanceConfig:
    lookahead: float = 100.0
    gain: float = 0.3 / (math.pi / 4)
    clamp_fraction: float = 0.3

    def __post_init__(self):
        if not self.lookahead > 0:
            raise InvalidArgument("lookahead must be positive")
        if not 0 < self.clamp_fraction <= 1:
            raise InvalidArgument("clamp_fraction must lie in (0, 1]")


@dataclass(frozen=True, eq=False)
class PathSpline:
    """A polyline with cumulative arc length ``s`` (mm) at every sample."""

    points: np.ndarray
    s: np.ndarray
    control_points: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))

    @classmethod
    def from_points(cls, points, control_points=None) -> "PathSpline":
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        if len(pts) < 2:
            raise InvalidArgument("a path needs at least two samples")
        seg = np.hypot(*np.diff(pts, axis=0).T)
        s = np.concatenate([[0.0], np.cumsum(seg)])
        cp = np.zeros((0, 2)) if control_points is None else np.asarray(control_points, float)
        return cls(pts, s, cp)

    @property
    def length(self) -> float:
        return float(self.s[-1])

    def headings(self) -> np.ndarray:
        """Tangent direction at each sample (central differences)."""
        d = np.gradient(self.points, axis=0)
        return np.arctan2(d[:, 1], d[:, 0])

    def point_at(self, s: float) -> np.ndarray:
        s = min(max(s, 0.0), self.length)
        return np.array([np.interp(s, self.s, self.points[:, 0]),
                         np.interp(s, self.s, self.points[:, 1])])

    def project(self, p) -> float:
        """Arc length of the closest point on the polyline to ``p``."""
        q = as_xy(p)
        a = self.points[:-1]
        d = self.points[1:] - a
        dd = np.einsum("ij,ij->i", d, d)
        u = np.einsum("ij,ij->i", q - a, d) / np.where(dd > 0, dd, 1.0)
        u = np.clip(u, 0.0, 1.0)
        foot = a + u[:, None] * d
        k = int(np.argmin(np.einsum("ij,ij->i", foot - q, foot - q)))
        return float(self.s[k] + u[k] * math.sqrt(dd[k]))

    def curvature(self) -> np.ndarray:
        """Signed curvature per sample; positive turns left."""
        d1 = np.gradient(self.points, self.s, axis=0)
        d2 = np.gradient(d1, self.s, axis=0)
        num = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        den = np.hypot(d1[:, 0], d1[:, 1]) ** 3
        return num / np.where(den > 0, den, 1.0)

    def to_csv(self, path) -> None:
        h = self.headings()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["s_mm", "x_mm", "y_mm", "heading_rad"])
            for s, (x, y), hd in zip(self.s, self.points, h):
                w.writerow([f"{s:.6f}", f"{x:.6f}", f"{y:.6f}", f"{hd:.9f}"])


def _catmull_rom(points: np.ndarray, per_segment: int = 400, alpha: float = 0.5) -> np.ndarray:
    """Centripetal Catmull-Rom through every point, with reflected end tangents."""
    p = np.vstack([2 * points[0] - points[1], points, 2 * points[-1] - points[-2]])
    out = []
    for i in range(len(p) - 3):
        p0, p1, p2, p3 = p[i:i + 4]
        t0 = 0.0
        t1 = t0 + np.linalg.norm(p1 - p0) ** alpha
        t2 = t1 + np.linalg.norm(p2 - p1) ** alpha
        t3 = t2 + np.linalg.norm(p3 - p2) ** alpha
        t = np.linspace(t1, t2, per_segment, endpoint=False)[:, None]
        a1 = (t1 - t) / (t1 - t0) * p0 + (t - t0) / (t1 - t0) * p1
        a2 = (t2 - t) / (t2 - t1) * p1 + (t - t1) / (t2 - t1) * p2
        a3 = (t3 - t) / (t3 - t2) * p2 + (t - t2) / (t3 - t2) * p3
        b1 = (t2 - t) / (t2 - t0) * a1 + (t - t0) / (t2 - t0) * a2
        b2 = (t3 - t) / (t3 - t1) * a2 + (t - t1) / (t3 - t1) * a3
        out.append((t2 - t) / (t2 - t1) * b1 + (t - t1) / (t2 - t1) * b2)
    out.append(points[-1:])
    return np.vstack(out)


def resample(points: np.ndarray, step: float) -> np.ndarray:
    """Resample a dense polyline at uniform arc-length spacing (last point kept)."""
    seg = np.hypot(*np.diff(points, axis=0).T)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    n = int(math.floor(s[-1] / step))
    grid = np.arange(n + 1) * step
    if s[-1] - grid[-1] > 1e-9:
        grid = np.append(grid, s[-1])
    return np.column_stack([np.interp(grid, s, points[:, 0]), np.interp(grid, s, points[:, 1])])


def generate_random_path(seed: int, tank: TankSpec, start, *, margin: float = 80.0,
                         resolution: float = 5.0, min_radius: float = 250.0,
                         max_tries: int = 200) -> PathSpline:
    """Random leader path: spline through ``start`` and three random control points.

    Control point i is drawn uniformly in the i-th third of the tank length
    ahead of ``start`` (clipped to the wall margin), with y uniform across the
    tank width minus the margin. Draws that leave the margin band or bend
    tighter than ``min_radius`` are redrawn from the same generator, so the
    result depends only on the arguments.
    """
    p0 = as_xy(start)
    if not tank.contains(p0, margin):
        raise InvalidArgument(f"start {tuple(p0)} outside tank interior (margin {margin} mm)")
    rng = np.random.default_rng(seed)
    span = (tank.length - p0[0]) / 3.0
    lo_y, hi_y = margin, tank.width - margin
    for _ in range(max_tries):
        ctrl = [p0]
        for i in range(3):
            a = max(p0[0] + i * span, margin)
            b = min(p0[0] + (i + 1) * span, tank.length - margin)
            ctrl.append(np.array([rng.uniform(a, b), rng.uniform(lo_y, hi_y)]))
        ctrl = np.array(ctrl)
        pts = resample(_catmull_rom(ctrl), resolution)
        inside = np.all((pts[:, 0] >= margin) & (pts[:, 0] <= tank.length - margin)
                        & (pts[:, 1] >= lo_y) & (pts[:, 1] <= hi_y))
        if not inside:
            continue
        path = PathSpline.from_points(pts, ctrl)
        if np.max(np.abs(path.curvature())) * min_radius <= 1.0:
            return path
    raise InvalidArgument(f"no admissible path found for seed {seed} after {max_tries} draws")


def offset_path(path: PathSpline, offset: float, side: str) -> PathSpline:
    """Displace every sample by ``offset`` along the local normal toward ``side``."""
    if offset < 0:
        raise InvalidArgument("offset must be non-negative")
    if side not in ("left", "right"):
        raise InvalidArgument(f"side must be 'left' or 'right', got {side!r}")
    if offset == 0:
        return PathSpline(path.points.copy(), path.s.copy(), path.control_points.copy())
    sign = 1.0 if side == "left" else -1.0
    h = path.headings()
    normal = np.column_stack([-np.sin(h), np.cos(h)])
    pts = path.points + sign * offset * normal
    # folding shows up as offset segments reversing against the original ones
    d_old = np.diff(path.points, axis=0)
    d_new = np.diff(pts, axis=0)
    if np.any(np.einsum("ij,ij->i", d_old, d_new) <= 0.0) or \
            np.any(sign * path.curvature() * offset >= 1.0):
        raise DegenerateOffsetError(f"offset {offset} mm exceeds the path's radius of curvature")
    return PathSpline.from_points(pts, path.control_points)


def heading_error(reference: float, current: float) -> float:
    return float(wrap_angle(reference - current))


def los_reference(path: PathSpline, pos, cfg: GuidanceConfig) -> float:
    """Heading from ``pos`` to the path point ``cfg.lookahead`` past its projection."""
    q = as_xy(pos)
    target = path.point_at(path.project(q) + cfg.lookahead)
    d = target - q
    if d[0] == 0.0 and d[1] == 0.0:
        return float(path.headings()[-1])
    return math.atan2(d[1], d[0])
