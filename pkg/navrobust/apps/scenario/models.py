"""
Модель сценария: геометрия сцены отделена от стиля внешнего вида
"""
import enum
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from navrobust.apps.geom.models import Polygon, Polyline, Trajectory
from navrobust.core.configuration import STRICT_SCHEMA
from navrobust.core.exceptions import ConfigException, ValidationException

MAX_SEED = 2**64

DEFAULT_STYLE_NAMES = (
    "origin",
    "heavy_rain",
    "heavy_snow",
    "dawn_sunrise",
    "dusk_sunset",
    "light_dust",
    "vintage_photo",
    "digital_noise",
    "motion_blur",
    "carla_toy",
    "dappled_light",
)


class AgentKind(str, enum.Enum):
    VEHICLE = "vehicle"
    PEDESTRIAN = "pedestrian"


class LightPhase(str, enum.Enum):
    RED = "red"
    GREEN = "green"


class GoalCommand(str, enum.Enum):
    LEFT = "left"
    STRAIGHT = "straight"
    RIGHT = "right"

    def one_hot(self) -> Tuple[float, float, float]:
        return (
            float(self is GoalCommand.LEFT),
            float(self is GoalCommand.STRAIGHT),
            float(self is GoalCommand.RIGHT),
        )


class MapFamily(str, enum.Enum):
    STRAIGHT = "straight"
    CURVE = "curve"
    INTERSECTION = "intersection"


@dataclass(frozen=True)
class StyleId:
    """Стиль внешнего вида; id 0 зарезервирован за исходным стилем"""

    id: int
    name: str

    @property
    def is_origin(self) -> bool:
        return self.id == 0


@dataclass(frozen=True)
class StyleRegistry:
    """Реестр стилей с уникальными id"""

    styles: Tuple[StyleId, ...]

    def __post_init__(self) -> None:
        ids = [s.id for s in self.styles]
        if sorted(ids) != list(range(len(ids))):
            raise ConfigException("id стилей должны быть уникальны и идти подряд с 0")
        if not self.styles or self.get(0).name != "origin":
            raise ConfigException("Стиль с id 0 должен называться 'origin'")

    @classmethod
    def default(cls) -> "StyleRegistry":
        return cls.from_names(DEFAULT_STYLE_NAMES)

    @classmethod
    def from_names(cls, names: Sequence[str]) -> "StyleRegistry":
        return cls(tuple(StyleId(i, name) for i, name in enumerate(names)))

    @property
    def origin(self) -> StyleId:
        return self.get(0)

    @property
    def non_origin(self) -> List[StyleId]:
        return [s for s in self.styles if not s.is_origin]

    def get(self, style_id: int) -> StyleId:
        for style in self.styles:
            if style.id == style_id:
                return style
        raise ValidationException(f"Стиль с id {style_id} отсутствует в реестре")

    def by_name(self, name: str) -> StyleId:
        for style in self.styles:
            if style.name == name:
                return style
        raise ConfigException(f"Стиль '{name}' отсутствует в реестре")

    def __len__(self) -> int:
        return len(self.styles)


@dataclass(frozen=True)
class GeometrySeed:
    """Зерно геометрии сцены (64-битное беззнаковое)"""

    seed: int

    def __post_init__(self) -> None:
        if not (0 <= int(self.seed) < MAX_SEED):
            raise ValidationException("Зерно геометрии должно быть 64-битным беззнаковым")
        object.__setattr__(self, "seed", int(self.seed))


@dataclass(frozen=True)
class Agent:
    """Участник движения с записанной траекторией"""

    kind: AgentKind
    half_length: float
    half_width: float
    logged_trajectory: Trajectory
    lane_index: Optional[int] = None

    def __post_init__(self) -> None:
        if not (self.half_length > 0 and self.half_width > 0):
            raise ValidationException("Габариты агента должны быть положительными")


@dataclass(frozen=True)
class TrafficLightState:
    """Стоп-линия и фаза светофора на каждом шаге"""

    stop_line: Polyline
    phase: Tuple[LightPhase, ...]


@dataclass(frozen=True)
class Scenario:
    geometry_seed: GeometrySeed
    style: StyleId
    map_family: MapFamily
    drivable: Tuple[Polygon, ...]
    centerlines: Tuple[Polyline, ...]
    route_index: int
    lights: Tuple[TrafficLightState, ...]
    agents: Tuple[Agent, ...]
    ego_history: Trajectory
    ego_half_length: float
    ego_half_width: float
    expert: Trajectory
    goal_command: GoalCommand

    def __post_init__(self) -> None:
        if not self.drivable:
            raise ValidationException("Сценарий без проезжей части")
        if not (0 <= self.route_index < len(self.centerlines)):
            raise ValidationException("Индекс маршрута вне списка осевых линий")
        if not (self.ego_half_length > 0 and self.ego_half_width > 0):
            raise ValidationException("Габариты эго-ТС должны быть положительными")
        if not np.allclose(self.expert.poses[0], self.ego_history.poses[-1], atol=1e-9):
            raise ValidationException(
                "Траектория эксперта должна начинаться в последней позе истории"
            )
        steps = self.expert.num_poses
        for light in self.lights:
            if len(light.phase) != steps:
                raise ValidationException("Длина фаз светофора не совпадает с числом шагов")
        for agent in self.agents:
            if agent.logged_trajectory.duration + 1e-9 < self.expert.duration:
                raise ValidationException("Записанная траектория агента короче горизонта")
            if agent.lane_index is not None and not (
                0 <= agent.lane_index < len(self.centerlines)
            ):
                raise ValidationException("Индекс полосы агента вне списка осевых линий")

    @property
    def route(self) -> Polyline:
        return self.centerlines[self.route_index]

    @property
    def horizon(self) -> float:
        return self.expert.duration

    @property
    def dt(self) -> float:
        return self.expert.dt

    def with_style(self, style: StyleId) -> "Scenario":
        return replace(self, style=style)


@dataclass(frozen=True)
class GeneratorConfig:
    """Параметры процедурного генератора сцен"""

    __pydantic_config__ = STRICT_SCHEMA

    dt: float = 0.1
    horizon: float = 4.0
    history: float = 2.0
    lane_width: float = 3.5
    ego_half_length: float = 2.4
    ego_half_width: float = 1.0
    vehicle_half_length: float = 2.3
    vehicle_half_width: float = 0.95
    pedestrian_half_size: float = 0.3
    family_weights: Dict[str, float] = field(
        default_factory=lambda: {"straight": 0.35, "curve": 0.35, "intersection": 0.3}
    )
    lead_vehicle_prob: float = 0.5
    oncoming_prob: float = 0.5
    pedestrian_prob: float = 0.3
    red_light_prob: float = 0.5
    left_turn_prob: float = 0.5
    max_agents: int = 4
    ego_speed_range: Tuple[float, float] = (5.0, 11.0)
    approach_speed_range: Tuple[float, float] = (4.0, 8.0)
    curve_radius_range: Tuple[float, float] = (45.0, 150.0)
    max_accel: float = 1.5
    comfort_decel: float = 2.0
    max_jerk: float = 3.0
    turn_lateral_accel: float = 2.0
    lookahead_time: float = 0.5
    min_lookahead: float = 2.0
    wheelbase: float = 2.8
    max_retries: int = 25

    def validate(self) -> "GeneratorConfig":
        if not (self.dt > 0 and self.horizon > 0 and self.history > 0):
            raise ConfigException("dt, horizon и history должны быть положительными")
        widest = 2.0 * max(self.ego_half_width, self.vehicle_half_width)
        if self.lane_width <= widest:
            raise ConfigException("Ширина полосы должна превышать ширину ТС")
        if self.max_agents < 1:
            raise ConfigException("Генератор должен допускать хотя бы одного агента")
        ranges = (
            self.ego_speed_range,
            self.approach_speed_range,
            self.curve_radius_range,
        )
        for low, high in ranges:
            if not 0 < low <= high:
                raise ConfigException("Диапазоны скоростей и радиусов должны быть положительными")
        if self.max_retries < 1:
            raise ConfigException("max_retries должен быть положительным")
        if not self.family_weights or any(w < 0 for w in self.family_weights.values()):
            raise ConfigException("Веса семейств карт должны быть неотрицательными")
        unknown = set(self.family_weights) - {f.value for f in MapFamily}
        if unknown or sum(self.family_weights.values()) <= 0:
            raise ConfigException(f"Неверные семейства карт: {sorted(unknown)}")
        if not math.isclose(round(self.horizon / self.dt) * self.dt, self.horizon):
            raise ConfigException("horizon должен быть кратен dt")
        return self


@dataclass(frozen=True)
class DatasetSplit:
    """Разбиение по геометрии сцен и по стилям"""

    support_seeds: Tuple[int, ...]
    evaluation_seeds: Tuple[int, ...]
    seen_styles: Tuple[StyleId, ...]
    unseen_styles: Tuple[StyleId, ...]
