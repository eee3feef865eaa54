"""
Сервисный слой метрик EPDMS
"""
import logging
import math
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from navrobust.apps.geom.models import (
    DynamicsProfile,
    FloatArray,
    Polyline,
    Trajectory,
    box_corners,
)
from navrobust.apps.metrics.models import (
    PENALTY_METRICS,
    WEIGHTED_METRICS,
    EpdmsResult,
    EpdmsWeights,
    MetricConfig,
    SubMetricScores,
)
from navrobust.apps.scenario.models import LightPhase, Scenario
from navrobust.apps.sim.models import IdmParams, RolloutTrace
from navrobust.core.exceptions import ZeroOrigin, ZeroWeightSum
from navrobust.services.geometry import GeometryService
from navrobust.services.sim_service import SimulationService

logger = logging.getLogger(__name__)

# Полосы, чья удаленность отличается от ближайшей не более чем на допуск,
# считаются равноправными кандидатами при проверке направления движения, м
LANE_AMBIGUITY = 0.5


class MetricsService:
    """Девять подметрик, фильтр по эксперту и агрегирование EPDMS"""

    @staticmethod
    def score_nc(trace: RolloutTrace) -> float:
        return 0.0 if any(event.at_fault for event in trace.collision_events) else 1.0

    @staticmethod
    def score_dac(trace: RolloutTrace, scenario: Scenario) -> float:
        """Все углы габарита эго-ТС внутри объединения проезжей части на каждом шаге"""
        corners = box_corners(
            trace.ego_states.poses, trace.ego_half_length, trace.ego_half_width
        )
        inside = GeometryService.points_in_any_polygon(corners.reshape(-1, 2), scenario.drivable)
        return 1.0 if bool(np.all(inside)) else 0.0

    @staticmethod
    def against_direction_distance(
        ego: Trajectory, centerlines: Sequence[Polyline], stopped_speed: float
    ) -> float:
        """Путь, пройденный против направления ближайшей полосы, м"""
        xy = ego.xy
        step = np.diff(xy, axis=0)
        length = np.linalg.norm(step, axis=1)
        midpoints = 0.5 * (xy[:-1] + xy[1:])

        distances = []
        tangents = []
        for line in centerlines:
            _, lateral, heading = GeometryService.project_points(midpoints, line)
            distances.append(np.abs(lateral))
            tangents.append(np.stack([np.cos(heading), np.sin(heading)], axis=1))
        dist = np.stack(distances)  # (L, N)
        along = np.stack([np.sum(step * t, axis=1) for t in tangents])  # (L, N)

        candidates = dist <= dist.min(axis=0, keepdims=True) + LANE_AMBIGUITY
        against = np.all(~candidates | (along < 0.0), axis=0)
        moving = length > stopped_speed * ego.dt
        return float(np.sum(length[against & moving]))

    @staticmethod
    def score_ddc(
        trace: RolloutTrace, scenario: Scenario, config: Optional[MetricConfig] = None
    ) -> float:
        config = config or MetricConfig()
        distance = MetricsService.against_direction_distance(
            trace.ego_states, scenario.centerlines, config.stopped_speed_threshold
        )
        if distance <= config.ddc_compliance_threshold:
            return 1.0
        if distance <= config.ddc_violation_threshold:
            return 0.5
        return 0.0

    @staticmethod
    def score_tlc(trace: RolloutTrace, scenario: Optional[Scenario] = None) -> float:
        """0, если передний бампер пересек стоп-линию на красный"""
        red = any(c.phase is LightPhase.RED for c in trace.stopline_crossings)
        return 0.0 if red else 1.0

    @staticmethod
    def score_ttc(trace: RolloutTrace, config: Optional[MetricConfig] = None) -> float:
        """
        Проекция с постоянной скоростью на ttc_horizon вперед с шагом симуляции.
        Шаги со стоящим эго-ТС и агенты позади эго не учитываются.
        """
        config = config or MetricConfig()
        if not trace.agent_states:
            return 1.0
        ego = trace.ego_states
        dt = ego.dt
        offsets = np.arange(int(round(config.ttc_horizon / dt)) + 1) * dt  # (J,)

        ego_vel = GeometryService.velocities(ego)
        moving = np.linalg.norm(ego_vel, axis=1) > config.stopped_speed_threshold
        if not np.any(moving):
            return 1.0
        forward = np.stack([np.cos(ego.headings), np.sin(ego.headings)], axis=1)
        ego_future = MetricsService._project(ego.poses, ego_vel, offsets)

        for states, (half_length, half_width) in zip(trace.agent_states, trace.agent_extents):
            ahead = np.sum((states.xy - ego.xy) * forward, axis=1) > 0.0
            mask = moving & ahead
            if not np.any(mask):
                continue
            agent_future = MetricsService._project(
                states.poses, GeometryService.velocities(states), offsets
            )
            overlap = GeometryService.obb_overlap_batch(
                ego_future[mask].reshape(-1, 3),
                trace.ego_half_length,
                trace.ego_half_width,
                agent_future[mask].reshape(-1, 3),
                half_length,
                half_width,
            )
            if np.any(overlap):
                return 0.0
        return 1.0

    @staticmethod
    def _project(poses: FloatArray, velocity: FloatArray, offsets: FloatArray) -> FloatArray:
        """Позы (T, J, 3) при движении с постоянной скоростью и курсом"""
        xy = poses[:, None, :2] + velocity[:, None, :] * offsets[None, :, None]
        heading = np.broadcast_to(poses[:, None, 2:3], xy.shape[:2] + (1,))
        return np.concatenate([xy, heading], axis=2)

    @staticmethod
    def route_progress(traj: Trajectory, route: Polyline) -> float:
        s, _, _ = GeometryService.project_points(traj.xy[[0, -1]], route)
        return float(s[1] - s[0])

    @staticmethod
    def score_ep(
        trace: RolloutTrace, scenario: Scenario, config: Optional[MetricConfig] = None
    ) -> float:
        """Прогресс вдоль маршрута относительно эксперта за тот же отрезок времени"""
        config = config or MetricConfig()
        horizon = min(trace.ego_states.duration, scenario.expert.duration)
        expert = GeometryService.resample_trajectory(scenario.expert, scenario.dt, horizon)
        expert_progress = MetricsService.route_progress(expert, scenario.route)
        if expert_progress < config.progress_guard:
            return 1.0
        ego_progress = MetricsService.route_progress(trace.ego_states, scenario.route)
        return float(np.clip(ego_progress / expert_progress, 0.0, 1.0))

    @staticmethod
    def score_lk(
        trace: RolloutTrace, scenario: Scenario, config: Optional[MetricConfig] = None
    ) -> float:
        """0, если смещение от ближайшей осевой больше предела дольше окна"""
        config = config or MetricConfig()
        xy = trace.ego_states.xy
        offsets = np.min(
            [np.abs(GeometryService.project_points(xy, line)[1]) for line in scenario.centerlines],
            axis=0,
        )
        exceeded = offsets > config.lane_keeping_deviation_limit
        longest = run = 0
        for flag in exceeded:
            run = run + 1 if flag else 0
            longest = max(longest, run)
        # N подряд идущих отсчетов покрывают (N - 1) * dt
        span = max(longest - 1, 0) * trace.dt
        return 0.0 if span > config.lane_keeping_window + 1e-9 else 1.0

    @staticmethod
    def comfort_trajectory(trace: RolloutTrace, config: MetricConfig) -> Tuple[Trajectory, int]:
        """
        План на собственной частоте с хвостом истории той же частоты.
        Возвращает траекторию и индекс позы t = 0.
        """
        plan = trace.plan if trace.plan is not None else trace.ego_states
        history = trace.ego_history
        if history is None:
            return plan, 0

        dt = plan.dt
        count = int(math.floor(min(config.comfort_history_window, history.duration) / dt + 1e-9))
        if count == 0:
            return plan, 0
        times = history.times - history.duration
        query = -dt * np.arange(count, 0, -1, dtype=np.float64)
        heading = np.interp(query, times, np.unwrap(history.headings))
        tail = np.stack(
            [
                np.interp(query, times, history.poses[:, 0]),
                np.interp(query, times, history.poses[:, 1]),
                heading,
            ],
            axis=1,
        )
        return Trajectory(dt, np.concatenate([tail, plan.poses], axis=0)), count

    @staticmethod
    def _comfortable(profile: DynamicsProfile, config: MetricConfig, window: slice) -> bool:
        return bool(
            np.all(np.abs(profile.accel[window]) <= config.max_abs_accel)
            and np.all(np.abs(profile.jerk[window]) <= config.max_abs_jerk)
            and np.all(np.abs(profile.yaw_rate[window]) <= config.max_abs_yaw_rate)
        )

    @staticmethod
    def score_hc(trace: RolloutTrace, config: Optional[MetricConfig] = None) -> float:
        """
        Границы ускорения, рывка и скорости рысканья: в окне стыка с историей
        (первые comfort_junction_window секунд плана) и по всему плану.
        """
        config = config or MetricConfig()
        traj, start = MetricsService.comfort_trajectory(trace, config)
        if start > 0 and config.comfort_junction_window > 0 and traj.num_poses >= 4:
            junction = GeometryService.dynamics_profile(traj)
            end = start + int(round(config.comfort_junction_window / traj.dt)) + 1
            if not MetricsService._comfortable(junction, config, slice(start, end)):
                return 0.0
        plan = traj.poses[start:]
        if len(plan) < 4:
            return 1.0
        profile = GeometryService.dynamics_profile(Trajectory(traj.dt, plan))
        return 1.0 if MetricsService._comfortable(profile, config, slice(None)) else 0.0

    @staticmethod
    def score_ec(
        trace: RolloutTrace,
        prev_plan: Optional[Trajectory],
        config: Optional[MetricConfig] = None,
    ) -> float:
        """
        Согласованность с предыдущим планом: СКО разности ускорений на общем
        отрезке времени, предыдущий план сдвинут на ec_frame_shift.
        """
        config = config or MetricConfig()
        if prev_plan is None:
            return 1.0
        plan = trace.plan if trace.plan is not None else trace.ego_states
        dt = plan.dt
        overlap = min(plan.duration, prev_plan.duration - config.ec_frame_shift)
        steps = int(math.floor(overlap / dt + 1e-9))
        if steps < 3:
            return 1.0

        current = GeometryService.dynamics_profile(
            GeometryService.resample_trajectory(plan, dt, steps * dt)
        )
        times = config.ec_frame_shift + np.arange(steps + 1) * dt
        previous_profile = GeometryService.dynamics_profile(prev_plan)
        previous = np.interp(times, prev_plan.times, previous_profile.accel)
        rms = float(np.sqrt(np.mean((current.accel - previous) ** 2)))
        return 1.0 if rms <= config.ec_max_rms_accel_diff else 0.0

    @staticmethod
    def score_all(
        trace: RolloutTrace,
        scenario: Scenario,
        config: Optional[MetricConfig] = None,
        prev_plan: Optional[Trajectory] = None,
    ) -> SubMetricScores:
        config = config or MetricConfig()
        return SubMetricScores(
            nc=MetricsService.score_nc(trace),
            dac=MetricsService.score_dac(trace, scenario),
            ddc=MetricsService.score_ddc(trace, scenario, config),
            tlc=MetricsService.score_tlc(trace, scenario),
            ttc=MetricsService.score_ttc(trace, config),
            ep=MetricsService.score_ep(trace, scenario, config),
            lk=MetricsService.score_lk(trace, scenario, config),
            hc=MetricsService.score_hc(trace, config),
            ec=MetricsService.score_ec(trace, prev_plan, config),
        )

    @staticmethod
    def apply_human_filter(
        scores: SubMetricScores, expert_scores: SubMetricScores
    ) -> SubMetricScores:
        """Штраф игнорируется, если эксперт нарушает то же правило"""
        values = scores.as_dict()
        for name in PENALTY_METRICS:
            if getattr(expert_scores, name) < 1.0:
                values[name] = 1.0
        return SubMetricScores(**values)

    @staticmethod
    def aggregate_epdms(scores: SubMetricScores, weights: Optional[EpdmsWeights] = None) -> float:
        """Произведение штрафных подметрик на взвешенное среднее остальных"""
        weights = weights or EpdmsWeights()
        total = weights.total
        if total <= 0:
            raise ZeroWeightSum("Сумма весов EPDMS равна нулю")
        penalty = 1.0
        for name in PENALTY_METRICS:
            penalty *= getattr(scores, name)
        weighted = sum(getattr(weights, name) * getattr(scores, name) for name in WEIGHTED_METRICS)
        return float(penalty * weighted / total)

    @staticmethod
    def drop_rate(epdms_origin: float, epdms_ood: float) -> float:
        """Относительное падение EPDMS при смене стиля"""
        if not epdms_origin > 0:
            raise ZeroOrigin(f"EPDMS исходного стиля должен быть положительным: {epdms_origin}")
        return (epdms_origin - epdms_ood) / epdms_origin

    @staticmethod
    def rollout(
        scenario: Scenario,
        plan: Trajectory,
        reactive: bool = False,
        idm: Optional[IdmParams] = None,
    ) -> RolloutTrace:
        if reactive:
            return SimulationService.rollout_reactive(scenario, plan, idm or IdmParams())
        return SimulationService.rollout_open_loop(scenario, plan)

    @staticmethod
    def evaluate_plan(
        scenario: Scenario,
        plan: Trajectory,
        config: Optional[MetricConfig] = None,
        reactive: bool = False,
        idm: Optional[IdmParams] = None,
        prev_plan: Optional[Trajectory] = None,
        expert_scores: Optional[SubMetricScores] = None,
    ) -> EpdmsResult:
        """Прогон плана, подметрики, фильтр по эксперту, EPDMS"""
        config = config or MetricConfig()
        trace = MetricsService.rollout(scenario, plan, reactive, idm)
        scores = MetricsService.score_all(trace, scenario, config, prev_plan)
        if config.human_penalty_filter:
            if expert_scores is None:
                expert_trace = MetricsService.rollout(scenario, scenario.expert, reactive, idm)
                expert_scores = MetricsService.score_all(expert_trace, scenario, config)
            scores = MetricsService.apply_human_filter(scores, expert_scores)
        epdms = MetricsService.aggregate_epdms(scores, config.weights)
        return EpdmsResult(scores=scores, epdms=epdms)


class PlanEvaluator:
    """Оценка планов с кэшем подметрик эксперта по зерну геометрии"""

    def __init__(
        self,
        config: Optional[MetricConfig] = None,
        reactive: bool = False,
        idm: Optional[IdmParams] = None,
    ):
        self.config = config or MetricConfig()
        self.reactive = reactive
        self.idm = idm
        self._expert_scores: Dict[int, SubMetricScores] = {}

    def expert_scores(self, scenario: Scenario) -> SubMetricScores:
        # стиль не влияет на геометрию, поэтому ключ - только зерно
        key = scenario.geometry_seed.seed
        if key not in self._expert_scores:
            trace = MetricsService.rollout(scenario, scenario.expert, self.reactive, self.idm)
            self._expert_scores[key] = MetricsService.score_all(trace, scenario, self.config)
        return self._expert_scores[key]

    def evaluate(
        self, scenario: Scenario, plan: Trajectory, prev_plan: Optional[Trajectory] = None
    ) -> EpdmsResult:
        return MetricsService.evaluate_plan(
            scenario,
            plan,
            self.config,
            self.reactive,
            self.idm,
            prev_plan,
            self.expert_scores(scenario) if self.config.human_penalty_filter else None,
        )
