"""
Сервисный слой вычислительной геометрии
"""
import math
from typing import List, Sequence, Tuple, Union

import numpy as np

from navrobust.apps.geom.models import (
    DynamicsProfile,
    FloatArray,
    OrientedBox,
    Polygon,
    Polyline,
    Trajectory,
    normalize_angles,
)
from navrobust.core.exceptions import (
    HorizonExceedsData,
    TrajectoryTooShort,
    ValidationException,
)

ArrayOrFloat = Union[float, FloatArray]

# Допуск принадлежности точки ребру многоугольника
ON_EDGE_EPS = 1e-9
# Порог "стоящей" точки при восстановлении курса
STATIONARY_EPS = 1e-6


class GeometryService:
    """Геометрические примитивы для симуляции и метрик"""

    @staticmethod
    def obb_overlap(a: OrientedBox, b: OrientedBox) -> bool:
        """Пересечение прямоугольников по теореме о разделяющей оси; касание = пересечение"""
        return bool(
            GeometryService.obb_overlap_batch(
                a.center.as_array()[None, :],
                a.half_length,
                a.half_width,
                b.center.as_array()[None, :],
                b.half_length,
                b.half_width,
            )[0]
        )

    @staticmethod
    def obb_overlap_batch(
        centers_a: FloatArray,
        half_length_a: ArrayOrFloat,
        half_width_a: ArrayOrFloat,
        centers_b: FloatArray,
        half_length_b: ArrayOrFloat,
        half_width_b: ArrayOrFloat,
    ) -> FloatArray:
        """Векторная версия: центры (N, 3) -> булев массив (N,)"""
        ua = np.stack([np.cos(centers_a[:, 2]), np.sin(centers_a[:, 2])], axis=-1)
        va = np.stack([-ua[:, 1], ua[:, 0]], axis=-1)
        ub = np.stack([np.cos(centers_b[:, 2]), np.sin(centers_b[:, 2])], axis=-1)
        vb = np.stack([-ub[:, 1], ub[:, 0]], axis=-1)
        d = centers_b[:, :2] - centers_a[:, :2]

        separated = np.zeros(centers_a.shape[0], dtype=bool)
        for axis in (ua, va, ub, vb):
            ra = half_length_a * np.abs(np.sum(ua * axis, axis=1)) + half_width_a * np.abs(
                np.sum(va * axis, axis=1)
            )
            rb = half_length_b * np.abs(np.sum(ub * axis, axis=1)) + half_width_b * np.abs(
                np.sum(vb * axis, axis=1)
            )
            separated |= np.abs(np.sum(d * axis, axis=1)) > ra + rb
        return ~separated

    @staticmethod
    def point_in_polygon(p: Tuple[float, float], poly: Polygon) -> bool:
        """Точка внутри или на границе (подсчет пересечений луча)"""
        return bool(GeometryService.points_in_polygon(np.array([p], dtype=np.float64), poly)[0])

    @staticmethod
    def points_in_polygon(points: FloatArray, poly: Polygon) -> FloatArray:
        points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        a = poly.ring[None, :, :]
        b = np.roll(poly.ring, -1, axis=0)[None, :, :]
        p = points[:, None, :]

        ab = b - a
        ap = p - a
        seg_len = np.linalg.norm(ab, axis=-1)
        cross = ab[..., 0] * ap[..., 1] - ab[..., 1] * ap[..., 0]
        dot = np.sum(ab * ap, axis=-1)
        on_edge = (
            (np.abs(cross) <= ON_EDGE_EPS * np.maximum(seg_len, 1.0))
            & (dot >= -ON_EDGE_EPS)
            & (dot <= seg_len**2 + ON_EDGE_EPS)
        )

        ay, by = a[..., 1], b[..., 1]
        straddles = (ay > p[..., 1]) != (by > p[..., 1])
        denom = np.where(by - ay == 0.0, 1.0, by - ay)
        x_cross = a[..., 0] + (p[..., 1] - ay) * ab[..., 0] / denom
        crossings = np.sum(straddles & (p[..., 0] < x_cross), axis=1)

        return np.any(on_edge, axis=1) | (crossings % 2 == 1)

    @staticmethod
    def points_in_any_polygon(points: FloatArray, polygons: Sequence[Polygon]) -> FloatArray:
        points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        inside = np.zeros(points.shape[0], dtype=bool)
        for poly in polygons:
            inside |= GeometryService.points_in_polygon(points, poly)
        return inside

    @staticmethod
    def project_to_polyline(p: Tuple[float, float], line: Polyline) -> Tuple[float, float, float]:
        """Длина дуги ближайшей точки, знаковое боковое смещение (+ слева), курс касательной"""
        s, lateral, heading = GeometryService.project_points(
            np.array([p], dtype=np.float64), line
        )
        return float(s[0]), float(lateral[0]), float(heading[0])

    @staticmethod
    def project_points(
        points: FloatArray, line: Polyline
    ) -> Tuple[FloatArray, FloatArray, FloatArray]:
        points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        a = line.vertices[:-1][None, :, :]
        ab = np.diff(line.vertices, axis=0)[None, :, :]
        seg_len2 = np.sum(ab**2, axis=-1)
        p = points[:, None, :]

        t = np.clip(np.sum((p - a) * ab, axis=-1) / seg_len2, 0.0, 1.0)
        closest = a + t[..., None] * ab
        dist2 = np.sum((p - closest) ** 2, axis=-1)
        # argmin берет первый минимум: при равенстве побеждает меньшая длина дуги
        idx = np.argmin(dist2, axis=1)
        rows = np.arange(points.shape[0])

        seg = ab[0, idx]
        offset = points - closest[rows, idx]
        cross = seg[:, 0] * offset[:, 1] - seg[:, 1] * offset[:, 0]
        sign = np.where(cross < 0.0, -1.0, 1.0)

        arclength = line.cumulative_length[idx] + t[rows, idx] * np.sqrt(seg_len2[0, idx])
        lateral = sign * np.sqrt(dist2[rows, idx])
        heading = np.arctan2(seg[:, 1], seg[:, 0])
        return arclength, lateral, heading

    @staticmethod
    def interpolate_polyline(
        line: Polyline, arclength: ArrayOrFloat
    ) -> Tuple[FloatArray, FloatArray, FloatArray]:
        """Поза на заданной длине дуги; за концами ломаной продолжается последний отрезок"""
        s = np.atleast_1d(np.asarray(arclength, dtype=np.float64))
        cum = line.cumulative_length
        idx = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(cum) - 2)
        a = line.vertices[idx]
        ab = line.vertices[idx + 1] - a
        seg_len = cum[idx + 1] - cum[idx]
        frac = (s - cum[idx]) / seg_len
        xy = a + frac[:, None] * ab
        heading = np.arctan2(ab[:, 1], ab[:, 0])
        return xy[:, 0], xy[:, 1], heading

    @staticmethod
    def segments_intersect(
        p0: FloatArray, p1: FloatArray, q0: FloatArray, q1: FloatArray
    ) -> bool:
        """Пересечение отрезков с учетом касания и коллинеарного наложения"""

        def orient(a: FloatArray, b: FloatArray, c: FloatArray) -> float:
            return float((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))

        def on_segment(a: FloatArray, b: FloatArray, c: FloatArray) -> bool:
            return bool(
                min(a[0], b[0]) - ON_EDGE_EPS <= c[0] <= max(a[0], b[0]) + ON_EDGE_EPS
                and min(a[1], b[1]) - ON_EDGE_EPS <= c[1] <= max(a[1], b[1]) + ON_EDGE_EPS
            )

        d1, d2 = orient(q0, q1, p0), orient(q0, q1, p1)
        d3, d4 = orient(p0, p1, q0), orient(p0, p1, q1)
        if d1 * d2 < 0 and d3 * d4 < 0:
            return True
        if d1 == 0 and on_segment(q0, q1, p0):
            return True
        if d2 == 0 and on_segment(q0, q1, p1):
            return True
        if d3 == 0 and on_segment(p0, p1, q0):
            return True
        if d4 == 0 and on_segment(p0, p1, q1):
            return True
        return False

    @staticmethod
    def point_on_polyline(p: FloatArray, line: Polyline) -> bool:
        _, lateral, _ = GeometryService.project_points(np.asarray(p)[None, :], line)
        return bool(abs(lateral[0]) <= ON_EDGE_EPS)

    @staticmethod
    def resample_trajectory(traj: Trajectory, dt_out: float, horizon: float) -> Trajectory:
        """Линейная интерполяция положений и кратчайшая дуга для курса"""
        if dt_out <= 0 or horizon <= 0:
            raise ValidationException("Шаг и горизонт должны быть положительными")
        if horizon > traj.duration + 1e-9:
            raise HorizonExceedsData(
                f"Горизонт {horizon:.3f} с превышает длительность {traj.duration:.3f} с"
            )
        steps = int(round(horizon / dt_out))
        if steps < 1:
            raise ValidationException("Горизонт короче шага дискретизации")
        if dt_out == traj.dt and steps == traj.num_poses - 1:
            return traj

        times = np.minimum(np.arange(steps + 1, dtype=np.float64) * dt_out, traj.duration)
        x = np.interp(times, traj.times, traj.poses[:, 0])
        y = np.interp(times, traj.times, traj.poses[:, 1])
        heading = np.interp(times, traj.times, np.unwrap(traj.poses[:, 2]))
        return Trajectory(dt_out, np.stack([x, y, normalize_angles(heading)], axis=1))

    @staticmethod
    def dynamics_profile(traj: Trajectory) -> DynamicsProfile:
        """
        Скорость, ускорение, рывок и скорость рысканья.
        Центральные разности внутри, односторонние второго порядка на краях.
        """
        if traj.num_poses < 4:
            raise TrajectoryTooShort(
                f"Для профиля динамики нужно не менее 4 точек, получено {traj.num_poses}"
            )
        dt = traj.dt
        velocity = np.gradient(traj.xy, dt, axis=0, edge_order=2)
        speed = np.linalg.norm(velocity, axis=1)
        accel = np.gradient(speed, dt, edge_order=2)
        jerk = np.gradient(accel, dt, edge_order=2)
        yaw_rate = np.gradient(np.unwrap(traj.headings), dt, edge_order=2)
        return DynamicsProfile(speed=speed, accel=accel, jerk=jerk, yaw_rate=yaw_rate)

    @staticmethod
    def velocities(traj: Trajectory) -> FloatArray:
        """Вектор скорости (T, 2) по конечным разностям"""
        return np.gradient(traj.xy, traj.dt, axis=0)

    @staticmethod
    def fit_headings(xy: FloatArray) -> FloatArray:
        """Курс по направлению движения; на стоянке сохраняется последний известный"""
        xy = np.asarray(xy, dtype=np.float64)
        delta = np.gradient(xy, axis=0)
        norms = np.linalg.norm(delta, axis=1)
        raw = np.arctan2(delta[:, 1], delta[:, 0])
        valid = norms > STATIONARY_EPS

        headings = np.zeros(xy.shape[0], dtype=np.float64)
        if not np.any(valid):
            return headings
        last = raw[int(np.argmax(valid))]
        for i in range(xy.shape[0]):
            if valid[i]:
                last = raw[i]
            headings[i] = last
        return headings

    @staticmethod
    def trajectory_from_xy(xy: FloatArray, dt: float) -> Trajectory:
        xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
        headings = GeometryService.fit_headings(xy)
        return Trajectory(dt, np.concatenate([xy, headings[:, None]], axis=1))

    @staticmethod
    def polyline_from_arc(
        start: Tuple[float, float, float], curvature: float, length: float, step: float = 0.5
    ) -> List[Tuple[float, float]]:
        """Точки дуги постоянной кривизны (прямая при curvature = 0)"""
        x0, y0, h0 = start
        n = max(int(math.ceil(length / step)), 1)
        s = np.linspace(0.0, length, n + 1)
        if abs(curvature) < 1e-12:
            xs = x0 + s * math.cos(h0)
            ys = y0 + s * math.sin(h0)
        else:
            radius = 1.0 / curvature
            xs = x0 + radius * (np.sin(h0 + curvature * s) - math.sin(h0))
            ys = y0 - radius * (np.cos(h0 + curvature * s) - math.cos(h0))
        return list(zip(xs.tolist(), ys.tolist()))

    @staticmethod
    def path_crossings(path: FloatArray, q0: FloatArray, q1: FloatArray) -> FloatArray:
        """
        Для ломаного пути (N, 2): пересекает ли звено k-1 -> k отрезок q0-q1.
        Касание концом звена считается пересечением, старт на отрезке - нет.
        """
        p0, p1 = path[:-1], path[1:]

        def orient(a: FloatArray, b: FloatArray, c: FloatArray) -> FloatArray:
            return (b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1]) - (
                b[..., 1] - a[..., 1]
            ) * (c[..., 0] - a[..., 0])

        d1, d2 = orient(q0, q1, p0), orient(q0, q1, p1)
        d3, d4 = orient(p0, p1, q0), orient(p0, p1, q1)
        proper = (d1 * d2 < 0) & (d3 * d4 <= 0)

        lo = np.minimum(q0, q1) - ON_EDGE_EPS
        hi = np.maximum(q0, q1) + ON_EDGE_EPS
        lands = (
            (np.abs(d2) <= ON_EDGE_EPS)
            & (np.abs(d1) > ON_EDGE_EPS)
            & np.all((p1 >= lo) & (p1 <= hi), axis=1)
        )
        return proper | lands
