"""
Типы симуляции: параметры IDM и след прогона
"""
from dataclasses import dataclass
from typing import Optional, Tuple

from navrobust.apps.geom.models import Trajectory
from navrobust.apps.scenario.models import AgentKind, LightPhase
from navrobust.core.exceptions import ConfigException, ValidationException

# Шаг симуляции, с (частота 10 Гц)
SIM_DT = 0.1


@dataclass(frozen=True)
class IdmParams:
    """Параметры Intelligent Driver Model"""

    desired_speed: float = 12.0
    time_headway: float = 1.5
    min_gap: float = 2.0
    max_accel: float = 1.5
    comfortable_decel: float = 2.0
    exponent: float = 4.0

    def __post_init__(self) -> None:
        values = (
            self.desired_speed,
            self.time_headway,
            self.min_gap,
            self.max_accel,
            self.comfortable_decel,
            self.exponent,
        )
        if any(v <= 0 for v in values):
            raise ConfigException("Все параметры IDM должны быть положительными")

    @property
    def emergency_decel(self) -> float:
        return 2.0 * self.comfortable_decel


@dataclass(frozen=True)
class CollisionEvent:
    t: float
    step: int
    agent_index: int
    at_fault: bool


@dataclass(frozen=True)
class StoplineCrossing:
    t: float
    step: int
    light_index: int
    phase: LightPhase


@dataclass(frozen=True)
class RolloutTrace:
    """
    Результат прогона: исполненный план, состояния агентов и события.
    plan и ego_history сохраняются для метрик комфорта.
    """

    ego_states: Trajectory
    agent_states: Tuple[Trajectory, ...]
    agent_kinds: Tuple[AgentKind, ...]
    agent_extents: Tuple[Tuple[float, float], ...]
    ego_half_length: float
    ego_half_width: float
    collision_events: Tuple[CollisionEvent, ...] = ()
    offroad_steps: Tuple[int, ...] = ()
    stopline_crossings: Tuple[StoplineCrossing, ...] = ()
    plan: Optional[Trajectory] = None
    ego_history: Optional[Trajectory] = None

    def __post_init__(self) -> None:
        steps = self.ego_states.num_poses
        for states in self.agent_states:
            if states.num_poses != steps:
                raise ValidationException("Число шагов агента не совпадает с эго-ТС")
        if not (len(self.agent_states) == len(self.agent_kinds) == len(self.agent_extents)):
            raise ValidationException("Несогласованные списки агентов в следе прогона")

    @property
    def num_steps(self) -> int:
        return self.ego_states.num_poses

    @property
    def dt(self) -> float:
        return self.ego_states.dt
