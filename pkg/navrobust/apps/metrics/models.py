"""
Типы метрик EPDMS
"""
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, Tuple

from navrobust.core.configuration import STRICT_SCHEMA
from navrobust.core.exceptions import ConfigException, ValidationException, ZeroWeightSum

PENALTY_METRICS = ("nc", "dac", "ddc", "tlc")
WEIGHTED_METRICS = ("ttc", "ep", "lk", "hc", "ec")
ALL_METRICS = PENALTY_METRICS + WEIGHTED_METRICS


@dataclass(frozen=True)
class SubMetricScores:
    """Оценки девяти подметрик, каждая в [0, 1]"""

    nc: float = 1.0
    dac: float = 1.0
    ddc: float = 1.0
    tlc: float = 1.0
    ttc: float = 1.0
    ep: float = 1.0
    lk: float = 1.0
    hc: float = 1.0
    ec: float = 1.0

    def __post_init__(self) -> None:
        for f in fields(self):
            value = float(getattr(self, f.name))
            if not (math.isfinite(value) and 0.0 <= value <= 1.0):
                raise ValidationException(f"Подметрика {f.name}={value} вне [0, 1]")
            object.__setattr__(self, f.name, value)

    def as_dict(self) -> Dict[str, float]:
        return asdict(self)

    def as_tuple(self) -> Tuple[float, ...]:
        return tuple(getattr(self, name) for name in ALL_METRICS)


@dataclass(frozen=True)
class EpdmsWeights:
    """Веса усредняемых подметрик"""

    __pydantic_config__ = STRICT_SCHEMA

    ttc: float = 5.0
    ep: float = 5.0
    lk: float = 2.0
    hc: float = 1.0
    ec: float = 1.0

    def __post_init__(self) -> None:
        values = [getattr(self, name) for name in WEIGHTED_METRICS]
        if any(v < 0 or not math.isfinite(v) for v in values):
            raise ConfigException("Веса EPDMS должны быть неотрицательными")
        if sum(values) <= 0:
            raise ZeroWeightSum("Хотя бы один вес EPDMS должен быть положительным")

    @property
    def total(self) -> float:
        return float(sum(getattr(self, name) for name in WEIGHTED_METRICS))


@dataclass(frozen=True)
class EpdmsResult:
    scores: SubMetricScores
    epdms: float


@dataclass(frozen=True)
class MetricConfig:
    """Пороги подметрик, веса и включение фильтра по эксперту"""

    __pydantic_config__ = STRICT_SCHEMA

    weights: EpdmsWeights = field(default_factory=EpdmsWeights)
    stopped_speed_threshold: float = 5e-3  # [m/s]
    ttc_horizon: float = 1.0  # [s]
    ddc_compliance_threshold: float = 2.0  # [m]
    ddc_violation_threshold: float = 6.0  # [m]
    lane_keeping_deviation_limit: float = 0.5  # [m]
    lane_keeping_window: float = 1.0  # [s]
    max_abs_accel: float = 2.4  # [m/s^2]
    max_abs_jerk: float = 4.0  # [m/s^3]
    max_abs_yaw_rate: float = 0.95  # [rad/s]
    comfort_junction_window: float = 0.5  # [s]
    comfort_history_window: float = 1.0  # [s]
    ec_max_rms_accel_diff: float = 1.0  # [m/s^2]
    ec_frame_shift: float = 0.5  # [s]
    progress_guard: float = 0.1  # [m]
    human_penalty_filter: bool = True

    def __post_init__(self) -> None:
        if self.ddc_compliance_threshold > self.ddc_violation_threshold:
            raise ConfigException("Порог DDC для 0.5 не может быть меньше порога для 1.0")
        positive = (
            self.ttc_horizon,
            self.lane_keeping_window,
            self.comfort_history_window,
            self.ec_frame_shift,
        )
        if any(v <= 0 for v in positive):
            raise ConfigException("Временные окна метрик должны быть положительными")
        if self.comfort_junction_window < 0:
            raise ConfigException("Окно стыка с историей не может быть отрицательным")
