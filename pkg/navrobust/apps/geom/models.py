"""
Геометрические типы: позы, траектории, прямоугольники, полилинии, полигоны
"""
import math
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np
import numpy.typing as npt

from navrobust.core.exceptions import ValidationException

FloatArray = npt.NDArray[np.float64]


def normalize_angle(angle: float) -> float:
    """Приведение угла к интервалу (-pi, pi]"""
    if -math.pi < angle <= math.pi:
        return angle
    return math.pi - (math.pi - angle) % (2.0 * math.pi)


def normalize_angles(angles: FloatArray) -> FloatArray:
    angles = np.asarray(angles, dtype=np.float64)
    inside = (angles > -np.pi) & (angles <= np.pi)
    return np.where(inside, angles, np.pi - np.mod(np.pi - angles, 2.0 * np.pi))


def _frozen(array: FloatArray) -> FloatArray:
    array = np.array(array, dtype=np.float64)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class Pose2:
    """Поза на плоскости: x, y в метрах и курс в радианах"""

    x: float
    y: float
    heading: float

    def __post_init__(self) -> None:
        if not all(math.isfinite(v) for v in (self.x, self.y, self.heading)):
            raise ValidationException("Поза содержит нечисловые значения")
        object.__setattr__(self, "heading", normalize_angle(float(self.heading)))

    def as_array(self) -> FloatArray:
        return np.array([self.x, self.y, self.heading], dtype=np.float64)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """
    Траектория с равномерным шагом dt; poses имеет форму (T, 3): x, y, heading.
    Точка 0 соответствует t = 0 (текущая поза).
    """

    dt: float
    poses: FloatArray

    def __post_init__(self) -> None:
        poses = np.array(self.poses, dtype=np.float64)
        if poses.ndim != 2 or poses.shape[1] != 3:
            raise ValidationException("Траектория должна иметь форму (T, 3)")
        if poses.shape[0] < 2:
            raise ValidationException("Траектория должна содержать не менее 2 точек")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValidationException("Шаг траектории dt должен быть положительным")
        if not np.all(np.isfinite(poses)):
            raise ValidationException("Траектория содержит нечисловые значения")
        poses[:, 2] = normalize_angles(poses[:, 2])
        object.__setattr__(self, "dt", float(self.dt))
        object.__setattr__(self, "poses", _frozen(poses))

    @classmethod
    def from_waypoints(cls, dt: float, waypoints: Sequence[Pose2]) -> "Trajectory":
        return cls(dt, np.array([p.as_array() for p in waypoints]).reshape(-1, 3))

    @property
    def waypoints(self) -> List[Pose2]:
        return [Pose2(*row) for row in self.poses]

    @property
    def xy(self) -> FloatArray:
        return self.poses[:, :2]

    @property
    def headings(self) -> FloatArray:
        return self.poses[:, 2]

    @property
    def num_poses(self) -> int:
        return int(self.poses.shape[0])

    @property
    def duration(self) -> float:
        return self.dt * (self.num_poses - 1)

    @property
    def times(self) -> FloatArray:
        return np.arange(self.num_poses, dtype=np.float64) * self.dt

    def __len__(self) -> int:
        return self.num_poses

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Trajectory):
            return NotImplemented
        return self.dt == other.dt and np.array_equal(self.poses, other.poses)

    def __hash__(self) -> int:
        return hash((self.dt, self.poses.tobytes()))


@dataclass(frozen=True)
class OrientedBox:
    """Прямоугольник с центром и полуразмерами (габарит ТС)"""

    center: Pose2
    half_length: float
    half_width: float

    def __post_init__(self) -> None:
        if not (self.half_length > 0 and self.half_width > 0):
            raise ValidationException("Размеры прямоугольника должны быть положительными")

    def corners(self) -> FloatArray:
        """Углы в порядке: передний левый, передний правый, задний правый, задний левый"""
        return box_corners(
            self.center.as_array()[None, :], self.half_length, self.half_width
        )[0]


def box_corners(
    centers: FloatArray, half_length: float, half_width: float
) -> FloatArray:
    """Углы для массива центров (N, 3) -> (N, 4, 2)"""
    c = np.cos(centers[:, 2])[:, None]
    s = np.sin(centers[:, 2])[:, None]
    local = np.array(
        [
            [half_length, half_width],
            [half_length, -half_width],
            [-half_length, -half_width],
            [-half_length, half_width],
        ]
    )
    x = centers[:, 0:1] + c * local[:, 0] - s * local[:, 1]
    y = centers[:, 1:2] + s * local[:, 0] + c * local[:, 1]
    return np.stack([x, y], axis=-1)


@dataclass(frozen=True, eq=False)
class Polyline:
    """Ломаная (осевая линия полосы); направление обхода = направление движения"""

    vertices: FloatArray
    _cumulative: FloatArray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        vertices = np.array(self.vertices, dtype=np.float64)
        if vertices.ndim != 2 or vertices.shape[1] != 2 or vertices.shape[0] < 2:
            raise ValidationException("Ломаная должна содержать не менее 2 вершин")
        if not np.all(np.isfinite(vertices)):
            raise ValidationException("Ломаная содержит нечисловые значения")
        lengths = np.linalg.norm(np.diff(vertices, axis=0), axis=1)
        if np.any(lengths <= 0.0):
            raise ValidationException("Соседние вершины ломаной совпадают")
        object.__setattr__(self, "vertices", _frozen(vertices))
        object.__setattr__(
            self, "_cumulative", _frozen(np.concatenate([[0.0], np.cumsum(lengths)]))
        )

    @property
    def cumulative_length(self) -> FloatArray:
        return self._cumulative

    @property
    def length(self) -> float:
        return float(self._cumulative[-1])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Polyline):
            return NotImplemented
        return np.array_equal(self.vertices, other.vertices)

    def __hash__(self) -> int:
        return hash(self.vertices.tobytes())


def signed_area(ring: FloatArray) -> float:
    x, y = ring[:, 0], ring[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _has_proper_crossing(ring: FloatArray) -> bool:
    """Есть ли пара ребер с собственным пересечением (смежные ребра его не дают)"""
    a = ring
    b = np.roll(ring, -1, axis=0)
    p0, p1 = a[:, None, :], b[:, None, :]
    q0, q1 = a[None, :, :], b[None, :, :]

    def orient(u: FloatArray, v: FloatArray, w: FloatArray) -> FloatArray:
        return (v[..., 0] - u[..., 0]) * (w[..., 1] - u[..., 1]) - (
            v[..., 1] - u[..., 1]
        ) * (w[..., 0] - u[..., 0])

    d1, d2 = orient(q0, q1, p0), orient(q0, q1, p1)
    d3, d4 = orient(p0, p1, q0), orient(p0, p1, q1)
    return bool(np.any((d1 * d2 < 0) & (d3 * d4 < 0)))


@dataclass(frozen=True, eq=False)
class Polygon:
    """Простой многоугольник против часовой стрелки, замыкается неявно"""

    ring: FloatArray

    def __post_init__(self) -> None:
        ring = np.array(self.ring, dtype=np.float64)
        if ring.ndim != 2 or ring.shape[1] != 2 or ring.shape[0] < 3:
            raise ValidationException("Многоугольник должен содержать не менее 3 вершин")
        if not np.all(np.isfinite(ring)):
            raise ValidationException("Многоугольник содержит нечисловые значения")
        if signed_area(ring) <= 0.0:
            raise ValidationException("Многоугольник должен обходиться против часовой стрелки")
        if _has_proper_crossing(ring):
            raise ValidationException("Многоугольник самопересекается")
        object.__setattr__(self, "ring", _frozen(ring))

    @classmethod
    def from_points(cls, points: Sequence[Tuple[float, float]]) -> "Polygon":
        """Создание с автоматической ориентацией против часовой стрелки"""
        ring = np.array(points, dtype=np.float64)
        if ring.ndim == 2 and ring.shape[0] >= 3 and signed_area(ring) < 0.0:
            ring = ring[::-1].copy()
        return cls(ring)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Polygon):
            return NotImplemented
        return np.array_equal(self.ring, other.ring)

    def __hash__(self) -> int:
        return hash(self.ring.tobytes())


@dataclass(frozen=True, eq=False)
class DynamicsProfile:
    """Покадровая динамика траектории"""

    speed: FloatArray
    accel: FloatArray
    jerk: FloatArray
    yaw_rate: FloatArray
