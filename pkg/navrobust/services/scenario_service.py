"""
Сервисный слой сценариев: процедурная генерация, разбиение набора, ввод-вывод
"""
import hashlib
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from navrobust.apps.geom.models import FloatArray, Polygon, Polyline, Trajectory
from navrobust.apps.metrics.models import MetricConfig
from navrobust.apps.planners.models import EgoStatus
from navrobust.apps.scenario.models import (
    Agent,
    AgentKind,
    DatasetSplit,
    GeneratorConfig,
    GeometrySeed,
    GoalCommand,
    LightPhase,
    MapFamily,
    Scenario,
    StyleId,
    StyleRegistry,
    TrafficLightState,
)
from navrobust.apps.scenario.serializers import ScenarioSerializer
from navrobust.apps.sim.models import IdmParams
from navrobust.core.exceptions import ConfigException, GenerationFailed, InvalidFraction
from navrobust.services.geometry import GeometryService
from navrobust.services.metrics_service import MetricsService
from navrobust.services.sim_service import SimulationService

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

# Длина дорог позади эго-ТС (эго стоит в начале координат) и впереди, м
ROAD_BACK = 60.0
ROAD_AHEAD = 150.0
CROSS_HALF_LENGTH = 60.0
CENTERLINE_STEP = 1.0
EDGE_STEP = 2.0
# Запас коридора, в котором препятствие считается лежащим на пути эксперта, м
CORRIDOR_MARGIN = 0.5
# Упреждение для пешеходов, входящих в коридор, с
PEDESTRIAN_PREVIEW = 2.0
# Дальность учета ограничения скорости в поворотах, м
SPEED_PREVIEW = 80.0
# Подметрики, которые эксперт обязан выполнять
ACCEPTANCE_METRICS = ("nc", "dac", "ddc", "tlc", "ttc", "lk", "hc")


@dataclass(frozen=True)
class _Layout:
    family: MapFamily
    drivable: Tuple[Polygon, ...]
    centerlines: Tuple[Polyline, ...]
    route_index: int
    opposite_index: Optional[int]
    route_curvature: FloatArray
    goal_command: GoalCommand
    stop_line: Optional[Polyline] = None

    @property
    def route(self) -> Polyline:
        return self.centerlines[self.route_index]


class ScenarioService:
    """Генерация сцен с разделением геометрии и стиля"""

    @staticmethod
    def generate_scenario(
        geometry_seed: GeometrySeed,
        style: StyleId,
        params: Optional[GeneratorConfig] = None,
    ) -> Scenario:
        """
        Стиль копируется в сцену без участия в генерации: все случайные величины
        зависят только от (seed, номер попытки).
        """
        params = (params or GeneratorConfig()).validate()
        for attempt in range(params.max_retries):
            rng = np.random.default_rng([geometry_seed.seed, attempt])
            scenario = ScenarioService._attempt(rng, geometry_seed, style, params)
            if ScenarioService._expert_acceptable(scenario):
                return scenario
            logger.debug(f"seed {geometry_seed.seed}: попытка {attempt} отклонена")
        logger.warning(f"seed {geometry_seed.seed}: генерация не удалась")
        raise GenerationFailed(
            f"seed {geometry_seed.seed}: эксперт не прошел проверку за {params.max_retries} попыток"
        )

    @staticmethod
    def _expert_acceptable(scenario: Scenario) -> bool:
        trace = SimulationService.rollout_open_loop(scenario, scenario.expert)
        scores = MetricsService.score_all(trace, scenario, MetricConfig())
        return all(getattr(scores, name) == 1.0 for name in ACCEPTANCE_METRICS)

    @staticmethod
    def _attempt(
        rng: np.random.Generator,
        geometry_seed: GeometrySeed,
        style: StyleId,
        params: GeneratorConfig,
    ) -> Scenario:
        families = list(params.family_weights)
        weights = np.array([params.family_weights[f] for f in families], dtype=np.float64)
        family = MapFamily(families[int(rng.choice(len(families), p=weights / weights.sum()))])

        if family is MapFamily.STRAIGHT:
            layout = ScenarioService._straight_layout(params)
        elif family is MapFamily.CURVE:
            layout = ScenarioService._curve_layout(rng, params)
        else:
            layout = ScenarioService._intersection_layout(rng, params)

        speed_range = (
            params.approach_speed_range
            if family is MapFamily.INTERSECTION
            else params.ego_speed_range
        )
        ego_speed = float(rng.uniform(*speed_range))
        steps = int(round(params.horizon / params.dt))

        lights: Tuple[TrafficLightState, ...] = ()
        if layout.stop_line is not None:
            lights = (ScenarioService._light(rng, layout.stop_line, steps, params),)
        agents = ScenarioService._agents(rng, layout, ego_speed, steps, params)
        history = ScenarioService._history(ego_speed, params)
        expert = ScenarioService._drive_expert(layout, agents, lights, ego_speed, steps, params)

        return Scenario(
            geometry_seed=geometry_seed,
            style=style,
            map_family=family,
            drivable=layout.drivable,
            centerlines=layout.centerlines,
            route_index=layout.route_index,
            lights=lights,
            agents=tuple(agents),
            ego_history=history,
            ego_half_length=params.ego_half_length,
            ego_half_width=params.ego_half_width,
            expert=expert,
            goal_command=layout.goal_command,
        )

    # Геометрия дорог

    @staticmethod
    def _sample_path(
        segments: Sequence[Tuple[float, float]], step: float
    ) -> Tuple[FloatArray, FloatArray]:
        """Позы (N, 3) и кривизна (N,) пути из отрезков (кривизна, длина) от (-ROAD_BACK, 0)"""
        x, y, heading = -ROAD_BACK, 0.0, 0.0
        poses = [np.array([[x, y, heading]])]
        curvature = [np.array([segments[0][0]])]
        for kappa, length in segments:
            xy = np.array(GeometryService.polyline_from_arc((x, y, heading), kappa, length, step))
            s = np.linspace(0.0, length, xy.shape[0])
            headings = heading + kappa * s
            poses.append(np.column_stack([xy[1:], headings[1:]]))
            curvature.append(np.full(xy.shape[0] - 1, kappa))
            x, y, heading = float(xy[-1, 0]), float(xy[-1, 1]), float(headings[-1])
        return np.concatenate(poses), np.concatenate(curvature)

    @staticmethod
    def _offset(poses: FloatArray, distance: float) -> FloatArray:
        normal = np.column_stack([-np.sin(poses[:, 2]), np.cos(poses[:, 2])])
        return poses[:, :2] + distance * normal

    @staticmethod
    def _road(
        segments: Sequence[Tuple[float, float]], lane_width: float
    ) -> Tuple[Polygon, Polyline, Polyline, FloatArray]:
        """Двухполосная дорога: проезжая часть, полоса эго, встречная полоса, кривизна"""
        center, curvature = ScenarioService._sample_path(segments, CENTERLINE_STEP)
        edges, _ = ScenarioService._sample_path(segments, EDGE_STEP)
        ring = np.concatenate(
            [
                ScenarioService._offset(edges, -0.5 * lane_width),
                ScenarioService._offset(edges, 1.5 * lane_width)[::-1],
            ]
        )
        lane = Polyline(center[:, :2])
        opposite = Polyline(ScenarioService._offset(center, lane_width)[::-1])
        return Polygon.from_points(ring.tolist()), lane, opposite, curvature

    @staticmethod
    def _straight_layout(params: GeneratorConfig) -> _Layout:
        polygon, lane, opposite, curvature = ScenarioService._road(
            [(0.0, ROAD_BACK + ROAD_AHEAD)], params.lane_width
        )
        return _Layout(
            family=MapFamily.STRAIGHT,
            drivable=(polygon,),
            centerlines=(lane, opposite),
            route_index=0,
            opposite_index=1,
            route_curvature=curvature,
            goal_command=GoalCommand.STRAIGHT,
        )

    @staticmethod
    def _curve_layout(rng: np.random.Generator, params: GeneratorConfig) -> _Layout:
        entry = float(rng.uniform(10.0, 30.0))
        radius = float(rng.uniform(*params.curve_radius_range))
        sign = 1.0 if rng.random() < 0.5 else -1.0
        angle = float(rng.uniform(0.25, 0.5)) * math.pi
        segments = [(0.0, ROAD_BACK + entry), (sign / radius, radius * angle), (0.0, 80.0)]
        polygon, lane, opposite, curvature = ScenarioService._road(segments, params.lane_width)
        return _Layout(
            family=MapFamily.CURVE,
            drivable=(polygon,),
            centerlines=(lane, opposite),
            route_index=0,
            opposite_index=1,
            route_curvature=curvature,
            goal_command=GoalCommand.LEFT if sign > 0 else GoalCommand.RIGHT,
        )

    @staticmethod
    def _intersection_layout(rng: np.random.Generator, params: GeneratorConfig) -> _Layout:
        """
        Главная дорога вдоль x и поперечная вдоль y с центром x_int.
        Левый поворот идет по дуге радиуса 1.5w на северную полосу поперечной дороги.
        """
        w = params.lane_width
        x_int = float(rng.uniform(20.0, 40.0))
        turn_left = bool(rng.random() < params.left_turn_prob)

        main, lane, opposite, straight_curvature = ScenarioService._road(
            [(0.0, ROAD_BACK + ROAD_AHEAD)], w
        )
        cross = Polygon.from_points(
            [
                (x_int - w, -CROSS_HALF_LENGTH),
                (x_int + w, -CROSS_HALF_LENGTH),
                (x_int + w, CROSS_HALF_LENGTH),
                (x_int - w, CROSS_HALF_LENGTH),
            ]
        )
        northbound = Polyline(
            np.array([[x_int + 0.5 * w, -CROSS_HALF_LENGTH], [x_int + 0.5 * w, CROSS_HALF_LENGTH]])
        )
        southbound = Polyline(
            np.array([[x_int - 0.5 * w, CROSS_HALF_LENGTH], [x_int - 0.5 * w, -CROSS_HALF_LENGTH]])
        )
        radius = 1.5 * w
        connector_poses, connector_curvature = ScenarioService._sample_path(
            [
                (0.0, ROAD_BACK + x_int - w),
                (1.0 / radius, 0.5 * math.pi * radius),
                (0.0, CROSS_HALF_LENGTH - radius),
            ],
            CENTERLINE_STEP,
        )
        connector = Polyline(connector_poses[:, :2])
        stop_x = x_int - w - 1.0
        stop_line = Polyline(np.array([[stop_x, -0.5 * w], [stop_x, 0.5 * w]]))

        return _Layout(
            family=MapFamily.INTERSECTION,
            drivable=(main, cross),
            centerlines=(lane, opposite, northbound, southbound, connector),
            route_index=4 if turn_left else 0,
            opposite_index=1,
            route_curvature=connector_curvature if turn_left else straight_curvature,
            goal_command=GoalCommand.LEFT if turn_left else GoalCommand.STRAIGHT,
            stop_line=stop_line,
        )

    # Участники движения

    @staticmethod
    def _light(
        rng: np.random.Generator, stop_line: Polyline, steps: int, params: GeneratorConfig
    ) -> TrafficLightState:
        phase = [LightPhase.GREEN] * (steps + 1)
        if rng.random() < params.red_light_prob:
            switch = steps + 1
            if rng.random() < 0.5:
                switch = int(round(float(rng.uniform(1.0, params.horizon - 0.5)) / params.dt))
            phase = [LightPhase.RED if k < switch else LightPhase.GREEN for k in range(steps + 1)]
        return TrafficLightState(stop_line=stop_line, phase=tuple(phase))

    @staticmethod
    def _lane_trajectory(
        lane: Polyline, s0: float, speeds: FloatArray, dt: float
    ) -> Trajectory:
        """Движение вдоль полосы с заданным профилем скорости"""
        travelled = np.concatenate([[0.0], np.cumsum(0.5 * (speeds[1:] + speeds[:-1]) * dt)])
        x, y, heading = GeometryService.interpolate_polyline(lane, s0 + travelled)
        return Trajectory(dt, np.column_stack([x, y, heading]))

    @staticmethod
    def _agents(
        rng: np.random.Generator,
        layout: _Layout,
        ego_speed: float,
        steps: int,
        params: GeneratorConfig,
    ) -> List[Agent]:
        dt = params.dt
        times = np.arange(steps + 1) * dt
        agents: List[Agent] = []

        if rng.random() < params.lead_vehicle_prob:
            mode = rng.random()
            if mode < 0.15:
                gap = float(rng.uniform(25.0, 45.0))
                speeds = np.zeros(steps + 1)
            else:
                gap = float(rng.uniform(10.0, 30.0))
                speed = ego_speed * float(rng.uniform(0.6, 1.0))
                speeds = np.full(steps + 1, speed)
                if mode < 0.45:
                    start = float(rng.uniform(0.5, 2.5))
                    decel = float(rng.uniform(0.5, 1.5))
                    speeds = np.maximum(0.0, speed - decel * np.maximum(0.0, times - start))
            s0 = ROAD_BACK + params.ego_half_length + gap + params.vehicle_half_length
            agents.append(
                Agent(
                    kind=AgentKind.VEHICLE,
                    half_length=params.vehicle_half_length,
                    half_width=params.vehicle_half_width,
                    logged_trajectory=ScenarioService._lane_trajectory(
                        layout.route, s0, speeds, dt
                    ),
                    lane_index=layout.route_index,
                )
            )

        turning_left = layout.family is MapFamily.INTERSECTION and layout.route_index != 0
        if (
            layout.opposite_index is not None
            and not turning_left
            and rng.random() < params.oncoming_prob
        ):
            opposite = layout.centerlines[layout.opposite_index]
            ahead = ROAD_BACK + float(rng.uniform(20.0, 80.0))
            x, y, heading = GeometryService.interpolate_polyline(layout.route, ahead)
            point = ScenarioService._offset(np.array([[x[0], y[0], heading[0]]]), params.lane_width)
            s0, _, _ = GeometryService.project_to_polyline((point[0, 0], point[0, 1]), opposite)
            speeds = np.full(steps + 1, float(rng.uniform(5.0, 11.0)))
            agents.append(
                Agent(
                    kind=AgentKind.VEHICLE,
                    half_length=params.vehicle_half_length,
                    half_width=params.vehicle_half_width,
                    logged_trajectory=ScenarioService._lane_trajectory(opposite, s0, speeds, dt),
                    lane_index=layout.opposite_index,
                )
            )

        if rng.random() < params.pedestrian_prob:
            agents.append(ScenarioService._pedestrian(rng, layout, times, params))

        return agents[: params.max_agents]

    @staticmethod
    def _pedestrian(
        rng: np.random.Generator, layout: _Layout, times: FloatArray, params: GeneratorConfig
    ) -> Agent:
        """Пешеход пересекает дорогу поперек маршрута"""
        w = params.lane_width
        s = ROAD_BACK + float(rng.uniform(15.0, 40.0))
        x, y, heading = GeometryService.interpolate_polyline(layout.route, s)
        normal = np.array([-math.sin(heading[0]), math.cos(heading[0])])
        start, end = -0.5 * w - 1.5, 1.5 * w + 1.5
        if rng.random() < 0.5:
            start, end = end, start
        direction = math.copysign(1.0, end - start)
        speed = float(rng.uniform(1.0, 1.6))
        delay = float(rng.uniform(0.0, 1.5))
        lateral = start + direction * speed * np.maximum(0.0, times - delay)
        xy = np.array([x[0], y[0]]) + lateral[:, None] * normal
        walk_heading = heading[0] + direction * 0.5 * math.pi
        poses = np.column_stack([xy, np.full(times.shape[0], walk_heading)])
        return Agent(
            kind=AgentKind.PEDESTRIAN,
            half_length=params.pedestrian_half_size,
            half_width=params.pedestrian_half_size,
            logged_trajectory=Trajectory(params.dt, poses),
        )

    # Эго-ТС и эксперт

    @staticmethod
    def _history(speed: float, params: GeneratorConfig) -> Trajectory:
        """Равномерное прямолинейное движение, заканчивающееся в начале координат"""
        count = int(round(params.history / params.dt))
        back = speed * params.dt * np.arange(count, -1, -1, dtype=np.float64)
        zeros = np.zeros_like(back)
        return Trajectory(params.dt, np.column_stack([-back, zeros, zeros]))

    @staticmethod
    def _speed_cap(layout: _Layout, s: float, params: GeneratorConfig) -> float:
        """Допустимая скорость с учетом поворотов впереди и комфортного торможения"""
        cumulative = layout.route.cumulative_length
        ahead = (cumulative >= s) & (cumulative <= s + SPEED_PREVIEW)
        curvature = np.abs(layout.route_curvature[ahead])
        if curvature.size == 0 or not np.any(curvature > 0):
            return math.inf
        caps = np.sqrt(params.turn_lateral_accel / np.maximum(curvature, 1e-9))
        braking = 0.75 * params.comfort_decel
        allowed = np.sqrt(caps**2 + 2.0 * braking * (cumulative[ahead] - s))
        return float(allowed.min())

    @staticmethod
    def _expert_leader(
        layout: _Layout,
        agents: Sequence[Agent],
        lights: Sequence[TrafficLightState],
        step: int,
        s_ego: float,
        params: GeneratorConfig,
    ) -> Tuple[float, float]:
        """Ближайшее препятствие на маршруте эксперта: (дистанция, скорость вдоль маршрута)"""
        route = layout.route
        best_gap, best_speed = math.inf, 0.0
        preview = int(round(PEDESTRIAN_PREVIEW / params.dt))

        for agent in agents:
            states = agent.logged_trajectory
            pose = states.poses[step]
            s_agent, lateral, tangent = GeometryService.project_to_polyline(
                (pose[0], pose[1]), route
            )
            if s_agent <= s_ego:
                continue
            limit = params.ego_half_width + agent.half_width + CORRIDOR_MARGIN
            if agent.kind is AgentKind.PEDESTRIAN:
                future = states.poses[min(step + preview, states.num_poses - 1)]
                _, lateral_future, _ = GeometryService.project_to_polyline(
                    (future[0], future[1]), route
                )
                blocking = (
                    min(abs(lateral), abs(lateral_future)) <= limit
                    or lateral * lateral_future < 0
                )
                speed = 0.0
            else:
                blocking = abs(lateral) <= limit
                velocity = GeometryService.velocities(states)[step]
                speed = float(velocity[0] * math.cos(tangent) + velocity[1] * math.sin(tangent))
            if not blocking:
                continue
            gap = s_agent - s_ego - params.ego_half_length - agent.half_length
            if gap < best_gap:
                best_gap, best_speed = gap, speed

        for light in lights:
            if light.phase[step] is not LightPhase.RED:
                continue
            middle = light.stop_line.vertices.mean(axis=0)
            s_line, _, _ = GeometryService.project_to_polyline((middle[0], middle[1]), route)
            gap = s_line - s_ego - params.ego_half_length
            if 0.0 < gap < best_gap:
                best_gap, best_speed = gap, 0.0

        return best_gap, best_speed

    @staticmethod
    def _drive_expert(
        layout: _Layout,
        agents: Sequence[Agent],
        lights: Sequence[TrafficLightState],
        cruise_speed: float,
        steps: int,
        params: GeneratorConfig,
    ) -> Trajectory:
        """
        Кинематический водитель: pure pursuit по маршруту и продольное IDM
        с комфортными ограничениями ускорения и рывка.
        """
        dt = params.dt
        idm = IdmParams(
            desired_speed=cruise_speed,
            max_accel=params.max_accel,
            comfortable_decel=params.comfort_decel,
        )
        x = y = heading = 0.0
        speed, accel = cruise_speed, 0.0
        poses = [(x, y, heading)]

        for step in range(steps):
            s, _, _ = GeometryService.project_to_polyline((x, y), layout.route)
            gap, leader_speed = ScenarioService._expert_leader(
                layout, agents, lights, step, s, params
            )
            desired = max(min(cruise_speed, ScenarioService._speed_cap(layout, s, params)), 0.1)
            command = SimulationService.idm_accel(
                speed, max(gap, 0.1), speed - leader_speed, replace(idm, desired_speed=desired)
            )
            command = min(max(command, -params.comfort_decel), params.max_accel)
            jerk_step = params.max_jerk * dt
            accel = min(max(command, accel - jerk_step), accel + jerk_step)
            new_speed = max(0.0, speed + accel * dt)
            distance = 0.5 * (speed + new_speed) * dt

            lookahead = max(params.min_lookahead, params.lookahead_time * speed)
            tx, ty, _ = GeometryService.interpolate_polyline(layout.route, s + lookahead)
            dx, dy = float(tx[0]) - x, float(ty[0]) - y
            alpha = math.atan2(dy, dx) - heading
            curvature = 2.0 * math.sin(alpha) / max(math.hypot(dx, dy), 1e-6)

            mid_heading = heading + 0.5 * curvature * distance
            x += distance * math.cos(mid_heading)
            y += distance * math.sin(mid_heading)
            heading += curvature * distance
            speed = new_speed
            poses.append((x, y, heading))

        return Trajectory(dt, np.array(poses, dtype=np.float64))

    # Разбиение и ввод-вывод

    @staticmethod
    def split_dataset(
        seeds: Sequence[int],
        styles: StyleRegistry,
        support_fraction: float,
        seen_count: int,
        rng_seed: int,
    ) -> DatasetSplit:
        """
        Разбиение по зерну геометрии (support / evaluation) и по стилям (seen / unseen).
        """
        if not 0.0 < support_fraction < 1.0:
            raise InvalidFraction(f"support_fraction={support_fraction} вне (0, 1)")
        if len(set(seeds)) != len(seeds):
            raise ConfigException("Зерна геометрии должны быть уникальными")
        candidates = styles.non_origin
        if not 0 <= seen_count < len(candidates):
            raise ConfigException(
                f"seen_count={seen_count} должен лежать в [0, {len(candidates)})"
            )

        rng = np.random.default_rng(rng_seed)
        order = rng.permutation(len(seeds))
        n_support = int(round(len(seeds) * support_fraction))
        support = sorted(int(seeds[i]) for i in order[:n_support])
        evaluation = sorted(int(seeds[i]) for i in order[n_support:])

        style_order = rng.permutation(len(candidates))
        seen = sorted((candidates[i] for i in style_order[:seen_count]), key=lambda s: s.id)
        unseen = sorted((candidates[i] for i in style_order[seen_count:]), key=lambda s: s.id)
        return DatasetSplit(
            support_seeds=tuple(support),
            evaluation_seeds=tuple(evaluation),
            seen_styles=tuple(seen),
            unseen_styles=tuple(unseen),
        )

    @staticmethod
    def write_scenario(
        scenario: Scenario, path: PathLike, registry: Optional[StyleRegistry] = None
    ) -> None:
        ScenarioSerializer(registry).write(scenario, path)

    @staticmethod
    def read_scenario(path: PathLike, registry: Optional[StyleRegistry] = None) -> Scenario:
        return ScenarioSerializer(registry).read(path)

    @staticmethod
    def scenario_hash(scenario: Scenario, registry: Optional[StyleRegistry] = None) -> str:
        """sha256 канонического JSON сценария"""
        text = ScenarioSerializer(registry).dumps(scenario)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    @staticmethod
    def ego_status(scenario: Scenario) -> EgoStatus:
        profile = GeometryService.dynamics_profile(scenario.ego_history)
        return EgoStatus(
            speed=float(profile.speed[-1]),
            accel=float(profile.accel[-1]),
            goal_command=scenario.goal_command,
        )
