"""
Сервисный слой симуляции: воспроизведение плана, реактивные агенты IDM, виновность
"""
import logging
import math
from dataclasses import dataclass, replace
from typing import List, Sequence, Tuple

import numpy as np

from navrobust.apps.geom.models import FloatArray, Trajectory, box_corners
from navrobust.apps.scenario.models import AgentKind, Scenario
from navrobust.apps.sim.models import (
    CollisionEvent,
    IdmParams,
    RolloutTrace,
    StoplineCrossing,
)
from navrobust.core.exceptions import HorizonMismatch, NonPositiveGap
from navrobust.services.geometry import GeometryService

logger = logging.getLogger(__name__)

# Скорость, ниже которой ТС считается стоящим, м/с
STOPPED_SPEED = 5e-3
# Минимальная скорость записи, при которой агент управляется IDM, м/с
REACTIVE_MIN_SPEED = 0.5
# Боковой запас при поиске лидера на полосе, м
LEADER_LATERAL_MARGIN = 0.5
# Минимальная дистанция при перекрытии с лидером, м
MIN_GAP = 0.1


@dataclass(frozen=True)
class CollisionContext:
    """Состояния эго-ТС и агента на шаге столкновения"""

    ego_pose: FloatArray
    ego_velocity: FloatArray
    ego_half_length: float
    ego_half_width: float
    agent_pose: FloatArray
    agent_velocity: FloatArray
    agent_half_length: float
    agent_half_width: float


class SimulationService:
    """Прогон плана эго-ТС в сценарии"""

    @staticmethod
    def idm_accel(speed: float, gap: float, closing_speed: float, p: IdmParams) -> float:
        """Ускорение IDM: a[1 - (v/v0)^d - (s*/s)^2], s* = s0 + vT + v dv / (2 sqrt(ab))"""
        if not gap > 0:
            raise NonPositiveGap(f"Дистанция до лидера {gap} <= 0")
        s_star = (
            p.min_gap
            + speed * p.time_headway
            + speed * closing_speed / (2.0 * math.sqrt(p.max_accel * p.comfortable_decel))
        )
        interaction = 0.0 if math.isinf(gap) else (s_star / gap) ** 2
        accel = p.max_accel * (1.0 - (speed / p.desired_speed) ** p.exponent - interaction)
        return float(min(max(accel, -p.emergency_decel), p.max_accel))

    @staticmethod
    def executed_plan(scenario: Scenario, plan: Trajectory) -> Trajectory:
        """План, передискретизированный к шагу симуляции"""
        if plan.duration > scenario.horizon + 1e-9:
            raise HorizonMismatch(
                f"Горизонт плана {plan.duration:.2f} с больше горизонта эксперта "
                f"{scenario.horizon:.2f} с"
            )
        dt = scenario.dt
        steps = int(math.floor(plan.duration / dt + 1e-9))
        if steps < 1:
            raise HorizonMismatch("План короче одного шага симуляции")
        return GeometryService.resample_trajectory(plan, dt, steps * dt)

    @staticmethod
    def rollout_open_loop(scenario: Scenario, plan: Trajectory) -> RolloutTrace:
        """Эго-ТС точно исполняет план, агенты воспроизводят записи"""
        ego = SimulationService.executed_plan(scenario, plan)
        agents = [
            SimulationService._logged_states(agent.logged_trajectory, ego)
            for agent in scenario.agents
        ]
        return SimulationService._build_trace(scenario, plan, ego, agents)

    @staticmethod
    def rollout_reactive(scenario: Scenario, plan: Trajectory, p: IdmParams) -> RolloutTrace:
        """
        Агенты на полосах пересчитывают продольное ускорение по IDM;
        желаемая скорость агента равна его начальной скорости в записи.
        """
        ego = SimulationService.executed_plan(scenario, plan)
        steps, dt = ego.num_poses, ego.dt
        ego_vel = GeometryService.velocities(ego)

        logged = [
            SimulationService._logged_states(agent.logged_trajectory, ego)
            for agent in scenario.agents
        ]
        logged_vel = [GeometryService.velocities(states) for states in logged]
        poses = [np.array(states.poses) for states in logged]

        reactive: List[Tuple[int, IdmParams, float, float]] = []
        for i, agent in enumerate(scenario.agents):
            if agent.lane_index is None or agent.kind is not AgentKind.VEHICLE:
                continue
            speed0 = float(np.linalg.norm(logged_vel[i][0]))
            if speed0 < REACTIVE_MIN_SPEED:
                continue
            lane = scenario.centerlines[agent.lane_index]
            s0, _, _ = GeometryService.project_to_polyline(
                (poses[i][0, 0], poses[i][0, 1]), lane
            )
            reactive.append((i, replace(p, desired_speed=speed0), s0, speed0))

        state = {i: (s, v) for i, _, s, v in reactive}
        speeds = {i: np.full(steps, v) for i, _, _, v in reactive}
        for k in range(steps - 1):
            updates = {}
            for i, params, _, _ in reactive:
                agent = scenario.agents[i]
                lane = scenario.centerlines[agent.lane_index]  # type: ignore[index]
                s, v = state[i]
                gap, leader_speed = SimulationService._leader(
                    scenario, i, k, s, lane, poses, ego, ego_vel, logged_vel, speeds
                )
                accel = SimulationService.idm_accel(v, gap, v - leader_speed, params)
                v_new = max(0.0, v + accel * dt)
                updates[i] = (s + 0.5 * (v + v_new) * dt, v_new)
            for i, (s_new, v_new) in updates.items():
                lane = scenario.centerlines[scenario.agents[i].lane_index]  # type: ignore[index]
                x, y, heading = GeometryService.interpolate_polyline(lane, s_new)
                poses[i][k + 1] = (x[0], y[0], heading[0])
                speeds[i][k + 1] = v_new
                state[i] = (s_new, v_new)

        agents = [Trajectory(dt, pose_array) for pose_array in poses]
        return SimulationService._build_trace(scenario, plan, ego, agents)

    @staticmethod
    def _leader(
        scenario: Scenario,
        index: int,
        step: int,
        s_agent: float,
        lane,  # type: ignore[no-untyped-def]
        poses: Sequence[FloatArray],
        ego: Trajectory,
        ego_vel: FloatArray,
        logged_vel: Sequence[FloatArray],
        speeds: dict,  # type: ignore[type-arg]
    ) -> Tuple[float, float]:
        """Ближайшее препятствие впереди на полосе агента: (дистанция, скорость вдоль полосы)"""
        agent = scenario.agents[index]
        obstacles = [
            (ego.poses[step], ego_vel[step], scenario.ego_half_length, scenario.ego_half_width)
        ]
        for j, other in enumerate(scenario.agents):
            if j == index:
                continue
            if j in speeds:
                heading = poses[j][step, 2]
                velocity = speeds[j][step] * np.array([math.cos(heading), math.sin(heading)])
            else:
                velocity = logged_vel[j][step]
            obstacles.append((poses[j][step], velocity, other.half_length, other.half_width))

        best_gap, best_speed = math.inf, 0.0
        points = np.array([o[0][:2] for o in obstacles])
        arclength, lateral, tangent = GeometryService.project_points(points, lane)
        for (pose, velocity, half_length, half_width), s, lat, heading in zip(
            obstacles, arclength, lateral, tangent
        ):
            if s <= s_agent:
                continue
            if abs(lat) > agent.half_width + half_width + LEADER_LATERAL_MARGIN:
                continue
            gap = max(s - s_agent - agent.half_length - half_length, MIN_GAP)
            if gap < best_gap:
                best_gap = gap
                best_speed = float(
                    velocity[0] * math.cos(heading) + velocity[1] * math.sin(heading)
                )
        return best_gap, best_speed

    @staticmethod
    def attribute_collision(context: CollisionContext) -> bool:
        """
        Виновность эго-ТС: нет, если эго стоит, или удар пришелся в заднюю грань
        при скорости эго не выше скорости сближения агента.
        """
        ego_speed = float(np.linalg.norm(context.ego_velocity))
        if ego_speed <= STOPPED_SPEED:
            return False

        heading = context.ego_pose[2]
        forward = np.array([math.cos(heading), math.sin(heading)])
        closing_speed = float(np.dot(context.agent_velocity, forward))
        if SimulationService.impact_face(context) == "rear" and ego_speed <= closing_speed:
            return False
        return True

    @staticmethod
    def impact_face(context: CollisionContext) -> str:
        """Ближайшая к точке контакта грань эго-ТС: front, rear, left, right"""
        ego_corners = box_corners(
            context.ego_pose[None, :], context.ego_half_length, context.ego_half_width
        )[0]
        agent_corners = box_corners(
            context.agent_pose[None, :], context.agent_half_length, context.agent_half_width
        )[0]

        def to_local(points: FloatArray, pose: FloatArray) -> FloatArray:
            c, s = math.cos(pose[2]), math.sin(pose[2])
            d = points - pose[:2]
            return np.stack([c * d[:, 0] + s * d[:, 1], -s * d[:, 0] + c * d[:, 1]], axis=1)

        agent_in_ego = to_local(agent_corners, context.ego_pose)
        inside_ego = (np.abs(agent_in_ego[:, 0]) <= context.ego_half_length) & (
            np.abs(agent_in_ego[:, 1]) <= context.ego_half_width
        )
        ego_in_agent = to_local(ego_corners, context.agent_pose)
        inside_agent = (np.abs(ego_in_agent[:, 0]) <= context.agent_half_length) & (
            np.abs(ego_in_agent[:, 1]) <= context.agent_half_width
        )
        contacts = np.concatenate([agent_corners[inside_ego], ego_corners[inside_agent]])
        if contacts.shape[0] == 0:
            contacts = context.agent_pose[None, :2]
        lx, ly = to_local(contacts.mean(axis=0, keepdims=True), context.ego_pose)[0]

        distances = {
            "front": abs(context.ego_half_length - lx),
            "rear": abs(lx + context.ego_half_length),
            "left": abs(context.ego_half_width - ly),
            "right": abs(ly + context.ego_half_width),
        }
        return min(distances, key=distances.__getitem__)

    @staticmethod
    def _logged_states(logged: Trajectory, ego: Trajectory) -> Trajectory:
        if logged.dt != ego.dt:
            logged = GeometryService.resample_trajectory(logged, ego.dt, logged.duration)
        return Trajectory(ego.dt, logged.poses[: ego.num_poses])

    @staticmethod
    def _build_trace(
        scenario: Scenario,
        plan: Trajectory,
        ego: Trajectory,
        agents: Sequence[Trajectory],
    ) -> RolloutTrace:
        hl, hw = scenario.ego_half_length, scenario.ego_half_width
        ego_vel = GeometryService.velocities(ego)

        events: List[CollisionEvent] = []
        for i, (agent, states) in enumerate(zip(scenario.agents, agents)):
            overlap = GeometryService.obb_overlap_batch(
                ego.poses, hl, hw, states.poses, agent.half_length, agent.half_width
            )
            if not np.any(overlap):
                continue
            k = int(np.argmax(overlap))
            context = CollisionContext(
                ego_pose=ego.poses[k],
                ego_velocity=ego_vel[k],
                ego_half_length=hl,
                ego_half_width=hw,
                agent_pose=states.poses[k],
                agent_velocity=GeometryService.velocities(states)[k],
                agent_half_length=agent.half_length,
                agent_half_width=agent.half_width,
            )
            events.append(
                CollisionEvent(
                    t=k * ego.dt,
                    step=k,
                    agent_index=i,
                    at_fault=SimulationService.attribute_collision(context),
                )
            )
        events.sort(key=lambda e: (e.step, e.agent_index))

        corners = box_corners(ego.poses, hl, hw)
        inside = GeometryService.points_in_any_polygon(
            corners.reshape(-1, 2), scenario.drivable
        ).reshape(-1, 4)
        offroad = tuple(int(k) for k in np.flatnonzero(~np.all(inside, axis=1)))

        front = ego.xy + hl * np.stack([np.cos(ego.headings), np.sin(ego.headings)], axis=1)
        crossings: List[StoplineCrossing] = []
        for j, light in enumerate(scenario.lights):
            vertices = light.stop_line.vertices
            crossed = np.zeros(ego.num_poses - 1, dtype=bool)
            for q0, q1 in zip(vertices[:-1], vertices[1:]):
                crossed |= GeometryService.path_crossings(front, q0, q1)
            for k in np.flatnonzero(crossed) + 1:
                crossings.append(
                    StoplineCrossing(t=k * ego.dt, step=int(k), light_index=j, phase=light.phase[k])
                )
        crossings.sort(key=lambda c: (c.step, c.light_index))

        return RolloutTrace(
            ego_states=ego,
            agent_states=tuple(agents),
            agent_kinds=tuple(agent.kind for agent in scenario.agents),
            agent_extents=tuple((a.half_length, a.half_width) for a in scenario.agents),
            ego_half_length=hl,
            ego_half_width=hw,
            collision_events=tuple(events),
            offroad_steps=offroad,
            stopline_crossings=tuple(crossings),
            plan=plan,
            ego_history=scenario.ego_history,
        )
