"""
Тесты для геометрических примитивов
"""
import math

import numpy as np
import pytest

from navrobust.apps.geom.models import OrientedBox, Polygon, Polyline, Pose2, Trajectory
from navrobust.core.exceptions import (
    HorizonExceedsData,
    TrajectoryTooShort,
    ValidationException,
)
from navrobust.services.geometry import GeometryService

SAMPLING_STEP = 0.005
SAMPLING_MARGIN = 0.01


def square(x: float, y: float, heading: float = 0.0, half: float = 0.5) -> OrientedBox:
    return OrientedBox(Pose2(x, y, heading), half, half)


def sampled_overlap(a: OrientedBox, b: OrientedBox) -> bool:
    """Перебор точек прямоугольника A с шагом SAMPLING_STEP и проверка попадания в B"""
    u = np.linspace(-a.half_length, a.half_length, int(2 * a.half_length / SAMPLING_STEP) + 1)
    v = np.linspace(-a.half_width, a.half_width, int(2 * a.half_width / SAMPLING_STEP) + 1)
    uu, vv = np.meshgrid(u, v)
    ca, sa = math.cos(a.center.heading), math.sin(a.center.heading)
    x = a.center.x + ca * uu - sa * vv
    y = a.center.y + sa * uu + ca * vv
    cb, sb = math.cos(b.center.heading), math.sin(b.center.heading)
    dx, dy = x - b.center.x, y - b.center.y
    local_u = cb * dx + sb * dy
    local_v = -sb * dx + cb * dy
    inside = (np.abs(local_u) <= b.half_length) & (np.abs(local_v) <= b.half_width)
    return bool(np.any(inside))


def grown(box: OrientedBox, delta: float) -> OrientedBox:
    return OrientedBox(box.center, box.half_length + delta, box.half_width + delta)


def random_boxes(rng: np.random.Generator) -> OrientedBox:
    return OrientedBox(
        Pose2(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-math.pi, math.pi)),
        rng.uniform(0.2, 1.0),
        rng.uniform(0.2, 1.0),
    )


def disagreements(count: int, seed: int) -> int:
    rng = np.random.default_rng(seed)
    wrong = 0
    for _ in range(count):
        a, b = random_boxes(rng), random_boxes(rng)
        inner = GeometryService.obb_overlap(grown(a, -SAMPLING_MARGIN), grown(b, -SAMPLING_MARGIN))
        outer = GeometryService.obb_overlap(grown(a, SAMPLING_MARGIN), grown(b, SAMPLING_MARGIN))
        if inner != outer:
            continue
        if GeometryService.obb_overlap(a, b) != sampled_overlap(a, b):
            wrong += 1
    return wrong


def winding_number(point: np.ndarray, ring: np.ndarray) -> int:
    angles = np.arctan2(ring[:, 1] - point[1], ring[:, 0] - point[0])
    delta = np.diff(np.concatenate([angles, angles[:1]]))
    delta = (delta + math.pi) % (2 * math.pi) - math.pi
    return int(round(delta.sum() / (2 * math.pi)))


def distance_to_ring(point: np.ndarray, ring: np.ndarray) -> float:
    a, b = ring, np.roll(ring, -1, axis=0)
    ab = b - a
    t = np.clip(np.sum((point - a) * ab, axis=1) / np.sum(ab**2, axis=1), 0.0, 1.0)
    closest = a + t[:, None] * ab
    return float(np.min(np.linalg.norm(point - closest, axis=1)))


class TestGeometryTypes:
    """Тесты для инвариантов геометрических типов"""

    def test_pose_heading_normalized(self):
        """Тест приведения курса к (-pi, pi]"""
        assert Pose2(0.0, 0.0, 1.5 * math.pi).heading == pytest.approx(-0.5 * math.pi)
        assert Pose2(0.0, 0.0, -math.pi).heading == pytest.approx(math.pi)
        assert Pose2(0.0, 0.0, math.pi).heading == math.pi

    def test_trajectory_rejects_single_pose(self):
        """Тест отказа для траектории из одной точки"""
        with pytest.raises(ValidationException):
            Trajectory(0.1, np.zeros((1, 3)))

    def test_trajectory_rejects_non_finite(self):
        """Тест отказа для нечисловых координат"""
        poses = np.zeros((3, 3))
        poses[1, 0] = np.nan
        with pytest.raises(ValidationException):
            Trajectory(0.1, poses)

    def test_polyline_rejects_repeated_vertex(self):
        """Тест отказа для совпадающих соседних вершин"""
        with pytest.raises(ValidationException):
            Polyline(np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 0.0]]))

    def test_polygon_orientation(self):
        """Тест требования обхода против часовой стрелки"""
        clockwise = [(0.0, 0.0), (0.0, 1.0), (1.0, 1.0), (1.0, 0.0)]
        with pytest.raises(ValidationException):
            Polygon(np.array(clockwise))
        assert Polygon.from_points(clockwise).ring[0].tolist() == [1.0, 0.0]

    def test_polygon_self_intersection(self):
        """Тест отказа для самопересекающегося многоугольника"""
        bowtie = np.array([[0.0, 0.0], [2.0, 2.0], [2.0, 0.0], [0.0, 2.0], [-1.0, 1.0]])
        with pytest.raises(ValidationException):
            Polygon(bowtie)


class TestObbOverlap:
    """Тесты для пересечения прямоугольников"""

    def test_clear_overlap(self):
        """Тест пересечения квадратов на расстоянии 0.5 м"""
        assert GeometryService.obb_overlap(square(0, 0), square(0.5, 0))

    def test_disjoint(self):
        """Тест непересекающихся квадратов"""
        assert not GeometryService.obb_overlap(square(0, 0), square(3.0, 0))

    def test_touching_counts_as_overlap(self):
        """Тест касания ребрами"""
        assert GeometryService.obb_overlap(square(0, 0), square(1.0, 0))

    def test_rotated_square_matches_sampling(self):
        """Тест квадрата под 45 градусов против перебора точек"""
        a, b = square(0, 0), square(1.40, 0, math.pi / 4)
        assert GeometryService.obb_overlap(a, b) == sampled_overlap(a, b)
        assert not GeometryService.obb_overlap(a, b)

    def test_symmetry(self):
        """Тест симметричности на случайных парах"""
        rng = np.random.default_rng(7)
        for _ in range(500):
            a, b = random_boxes(rng), random_boxes(rng)
            assert GeometryService.obb_overlap(a, b) == GeometryService.obb_overlap(b, a)

    def test_batch_matches_scalar(self):
        """Тест векторной версии против поштучной"""
        rng = np.random.default_rng(3)
        pairs = [(random_boxes(rng), random_boxes(rng)) for _ in range(50)]
        batch = GeometryService.obb_overlap_batch(
            np.array([a.center.as_array() for a, _ in pairs]),
            np.array([a.half_length for a, _ in pairs]),
            np.array([a.half_width for a, _ in pairs]),
            np.array([b.center.as_array() for _, b in pairs]),
            np.array([b.half_length for _, b in pairs]),
            np.array([b.half_width for _, b in pairs]),
        )
        assert batch.tolist() == [GeometryService.obb_overlap(a, b) for a, b in pairs]

    def test_sampling_oracle(self):
        """Тест согласия с перебором на случайных парах"""
        assert disagreements(200, seed=11) == 0

    @pytest.mark.slow
    def test_sampling_oracle_full(self):
        """Тест согласия с перебором на 10000 парах"""
        assert disagreements(10000, seed=12) == 0


class TestPointInPolygon:
    """Тесты для принадлежности точки многоугольнику"""

    unit = Polygon.from_points([(-0.5, -0.5), (0.5, -0.5), (0.5, 0.5), (-0.5, 0.5)])

    def test_origin_inside(self):
        """Тест центра квадрата"""
        assert GeometryService.point_in_polygon((0.0, 0.0), self.unit)

    def test_far_point_outside(self):
        """Тест далекой точки"""
        assert not GeometryService.point_in_polygon((10.0, 10.0), self.unit)

    def test_boundary_inside(self):
        """Тест точек на ребре и в вершине"""
        assert GeometryService.point_in_polygon((0.5, 0.0), self.unit)
        assert GeometryService.point_in_polygon((-0.5, -0.5), self.unit)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_winding_oracle(self, seed):
        """Тест звездного семиугольника против числа оборотов"""
        rng = np.random.default_rng(seed)
        angles = np.sort(rng.uniform(0, 2 * math.pi, 7))
        radii = rng.uniform(0.5, 2.0, 7)
        ring = np.stack([radii * np.cos(angles), radii * np.sin(angles)], axis=1)
        poly = Polygon.from_points([tuple(p) for p in ring])
        points = rng.uniform(-2.5, 2.5, (1000, 2))
        inside = GeometryService.points_in_polygon(points, poly)
        for point, flag in zip(points, inside):
            if distance_to_ring(point, poly.ring) < 1e-6:
                continue
            assert bool(flag) == (winding_number(point, poly.ring) != 0)


class TestProjection:
    """Тесты для проекции на ломаную"""

    line = Polyline(np.array([[0.0, 0.0], [10.0, 0.0]]))

    def test_first_vertex(self):
        """Тест проекции первой вершины"""
        assert GeometryService.project_to_polyline((0.0, 0.0), self.line) == (0.0, 0.0, 0.0)

    def test_left_of_midpoint(self):
        """Тест точки слева от середины"""
        s, lateral, heading = GeometryService.project_to_polyline((5.0, 1.0), self.line)
        assert (s, lateral, heading) == pytest.approx((5.0, 1.0, 0.0))

    def test_right_is_negative(self):
        """Тест знака смещения справа"""
        _, lateral, _ = GeometryService.project_to_polyline((3.0, -2.0), self.line)
        assert lateral == pytest.approx(-2.0)

    def test_dense_sampling_oracle(self):
        """Тест против плотного перебора длины дуги с шагом 1 мм"""
        rng = np.random.default_rng(5)
        vertices = np.cumsum(rng.uniform(0.5, 3.0, (6, 2)) * [1.0, 0.6], axis=0)
        line = Polyline(vertices)
        x, y, _ = GeometryService.interpolate_polyline(
            line, np.arange(0.0, line.length, 0.001)
        )
        dense = np.stack([x, y], axis=1)
        for point in rng.uniform(vertices.min() - 2, vertices.max() + 2, (30, 2)):
            distances = np.linalg.norm(dense - point, axis=1)
            s, lateral, _ = GeometryService.project_to_polyline(tuple(point), line)
            assert abs(lateral) == pytest.approx(distances.min(), abs=1e-3)
            assert s == pytest.approx(0.001 * np.argmin(distances), abs=0.05)


class TestResample:
    """Тесты для передискретизации траекторий"""

    @staticmethod
    def straight(dt: float, count: int, speed: float = 5.0) -> Trajectory:
        t = np.arange(count) * dt
        return Trajectory(dt, np.stack([speed * t, np.zeros(count), np.zeros(count)], axis=1))

    def test_identity(self):
        """Тест тождественной передискретизации"""
        traj = self.straight(0.5, 9)
        assert GeometryService.resample_trajectory(traj, 0.5, 4.0) == traj

    def test_idempotent(self):
        """Тест идемпотентности при совпадающем шаге"""
        traj = GeometryService.resample_trajectory(self.straight(0.5, 9), 0.1, 4.0)
        again = GeometryService.resample_trajectory(traj, 0.1, 4.0)
        assert again == traj

    def test_straight_line_upsampling(self):
        """Тест точек на прямой при переходе 2 Гц -> 10 Гц"""
        out = GeometryService.resample_trajectory(self.straight(0.5, 9), 0.1, 4.0)
        assert out.num_poses == 41
        np.testing.assert_allclose(out.xy[:, 0], 5.0 * np.arange(41) * 0.1, atol=1e-12)
        np.testing.assert_allclose(out.xy[:, 1], 0.0)

    def test_arc_chord_bound(self):
        """Тест ошибки на дуге окружности в пределах стрелы хорды"""
        radius, speed, dt = 20.0, 8.0, 0.5
        t = np.arange(9) * dt
        theta = speed * t / radius
        poses = np.stack([radius * np.sin(theta), radius * (1 - np.cos(theta)), theta], axis=1)
        out = GeometryService.resample_trajectory(Trajectory(dt, poses), 0.1, 4.0)
        fine = speed * out.times / radius
        truth = np.stack([radius * np.sin(fine), radius * (1 - np.cos(fine))], axis=1)
        sagitta = radius * (1 - math.cos(speed * dt / radius / 2))
        assert np.max(np.linalg.norm(out.xy - truth, axis=1)) <= sagitta + 1e-9

    def test_heading_shortest_arc(self):
        """Тест интерполяции курса через разрыв pi"""
        poses = np.array([[0.0, 0.0, math.pi - 0.1], [1.0, 0.0, -math.pi + 0.1]])
        out = GeometryService.resample_trajectory(Trajectory(1.0, poses), 0.5, 1.0)
        assert abs(out.headings[1]) == pytest.approx(math.pi)

    def test_horizon_exceeds_data(self):
        """Тест горизонта длиннее траектории"""
        with pytest.raises(HorizonExceedsData):
            GeometryService.resample_trajectory(self.straight(0.5, 5), 0.1, 4.0)


class TestDynamicsProfile:
    """Тесты для профиля динамики"""

    def test_uniform_motion(self):
        """Тест равномерного движения 5 м/с"""
        traj = TestResample.straight(0.1, 20)
        profile = GeometryService.dynamics_profile(traj)
        np.testing.assert_allclose(profile.speed, 5.0)
        np.testing.assert_allclose(profile.accel, 0.0, atol=1e-9)
        np.testing.assert_allclose(profile.jerk, 0.0, atol=1e-7)
        np.testing.assert_allclose(profile.yaw_rate, 0.0)

    def test_constant_acceleration(self):
        """Тест равноускоренного движения 1 м/с^2"""
        t = np.arange(30) * 0.1
        traj = Trajectory(0.1, np.stack([0.5 * t**2, np.zeros(30), np.zeros(30)], axis=1))
        profile = GeometryService.dynamics_profile(traj)
        np.testing.assert_allclose(profile.accel[1:-1], 1.0, atol=1e-9)

    def test_yaw_rate_analytic(self):
        """Тест скорости рысканья против аналитической производной"""
        speed, c, dt = 5.0, 0.1, 0.01
        t = np.arange(200) * dt
        heading = np.arctan2(2 * c * t, speed)
        traj = Trajectory(dt, np.stack([speed * t, c * t**2, heading], axis=1))
        profile = GeometryService.dynamics_profile(traj)
        a = 2 * c / speed
        expected = a / (1 + (a * t) ** 2)
        np.testing.assert_allclose(profile.yaw_rate[1:-1], expected[1:-1], atol=1e-6)

    def test_translation_invariance(self):
        """Тест независимости от сдвига"""
        rng = np.random.default_rng(0)
        poses = np.cumsum(rng.normal(size=(12, 3)) * 0.1, axis=0)
        traj = Trajectory(0.1, poses)
        shifted = Trajectory(0.1, poses + np.array([13.0, -7.0, 0.0]))
        a = GeometryService.dynamics_profile(traj)
        b = GeometryService.dynamics_profile(shifted)
        np.testing.assert_allclose(a.speed, b.speed, atol=1e-9)
        np.testing.assert_allclose(a.jerk, b.jerk, atol=1e-6)

    def test_too_short(self):
        """Тест отказа для трех точек"""
        with pytest.raises(TrajectoryTooShort):
            GeometryService.dynamics_profile(TestResample.straight(0.1, 3))


class TestGeometryHelpers:
    """Тесты для вспомогательных функций"""

    def test_segments_intersect(self):
        """Тест пересечения, касания и непересечения отрезков"""
        p = [np.array(v, dtype=float) for v in ([0, 0], [2, 2], [0, 2], [2, 0])]
        assert GeometryService.segments_intersect(p[0], p[1], p[2], p[3])
        assert GeometryService.segments_intersect(p[0], p[1], p[1], p[3])
        assert not GeometryService.segments_intersect(p[0], p[2], p[1], p[3])

    def test_path_crossings(self):
        """Тест пересечения стоп-линии звеньями пути"""
        path = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 0.0]])
        crossings = GeometryService.path_crossings(
            path, np.array([1.5, -1.0]), np.array([1.5, 1.0])
        )
        assert crossings.tolist() == [False, True, False]

    def test_fit_headings_keeps_last_on_stop(self):
        """Тест сохранения курса на стоянке"""
        xy = np.array([[0.0, 0.0], [0.0, 1.0], [0.0, 2.0], [0.0, 2.0], [0.0, 2.0]])
        headings = GeometryService.fit_headings(xy)
        np.testing.assert_allclose(headings, math.pi / 2)

    def test_interpolate_polyline(self):
        """Тест позы на заданной длине дуги"""
        line = Polyline(np.array([[0.0, 0.0], [3.0, 0.0], [3.0, 4.0]]))
        x, y, heading = GeometryService.interpolate_polyline(line, [1.0, 5.0])
        np.testing.assert_allclose(x, [1.0, 3.0])
        np.testing.assert_allclose(y, [0.0, 2.0])
        np.testing.assert_allclose(heading, [0.0, math.pi / 2])
