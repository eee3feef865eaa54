"""
Типы планировщиков: статус эго-ТС, выход плана, расписание шума, конфигурации обучения
"""
import enum
import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from navrobust.apps.geom.models import FloatArray, Trajectory
from navrobust.apps.metrics.models import ALL_METRICS
from navrobust.apps.perception.models import AdapterConfig, ExtractorKind, PerceptionConfig
from navrobust.apps.scenario.models import GoalCommand
from navrobust.core.configuration import STRICT_SCHEMA
from navrobust.core.exceptions import (
    ConfigException,
    DimMismatch,
    StepOutOfRange,
    ValidationException,
)


class Paradigm(str, enum.Enum):
    REGRESSION = "regression"
    DIFFUSION = "diffusion"
    SCORING = "scoring"


class LrSchedule(str, enum.Enum):
    CONSTANT = "constant"
    COSINE = "cosine"


class Variant(str, enum.Enum):
    """Вариант обучения: экстрактор и состав обучающей выборки"""

    BASE = "base"
    DR = "dr"
    CONSTANT_EYE = "constant_eye"
    E2E = "e2e"

    @property
    def extractor(self) -> ExtractorKind:
        if self is Variant.CONSTANT_EYE:
            return ExtractorKind.CONSTANT_EYE
        if self is Variant.E2E:
            return ExtractorKind.TRAINABLE
        return ExtractorKind.BRITTLE

    @property
    def uses_support(self) -> bool:
        return self is Variant.DR


@dataclass(frozen=True)
class EgoStatus:
    """Вспомогательный вход планировщика: скорость, ускорение, команда маршрута"""

    speed: float
    accel: float
    goal_command: GoalCommand

    def __post_init__(self) -> None:
        if not (math.isfinite(self.speed) and math.isfinite(self.accel)):
            raise ValidationException("Статус эго-ТС содержит нечисловые значения")

    def as_array(self) -> FloatArray:
        return np.array([self.speed, self.accel, *self.goal_command.one_hot()], dtype=np.float64)


@dataclass(frozen=True)
class PlanOutput:
    """Выбранная траектория; для диффузии и скоринга также оценки мод/кандидатов"""

    trajectory: Trajectory
    scores: Optional[FloatArray] = None
    modes: Tuple[Trajectory, ...] = ()
    selected_index: Optional[int] = None

    def __post_init__(self) -> None:
        if self.scores is not None and not np.all(np.isfinite(self.scores)):
            raise ValidationException("Оценки плана содержат нечисловые значения")


@dataclass(frozen=True)
class NoiseSchedule:
    """
    Усеченное расписание: sigma_k = sigma_max * k / steps, k = 0..steps.
    Денойзинг идет от k = steps к k = 0, sigma_0 = 0.
    """

    steps: int = 2
    sigma_max: float = 1.0

    def __post_init__(self) -> None:
        if self.steps < 1:
            raise ConfigException("Число шагов диффузии должно быть положительным")
        if not (self.sigma_max >= 0 and math.isfinite(self.sigma_max)):
            raise ConfigException("sigma_max должен быть неотрицательным")

    @property
    def sigmas(self) -> FloatArray:
        return self.sigma_max * np.arange(self.steps + 1, dtype=np.float64) / self.steps

    def sigma(self, k: int) -> float:
        if not 0 <= k <= self.steps:
            raise StepOutOfRange(f"Шаг {k} вне [0, {self.steps}]")
        return float(self.sigmas[k])

    def ratio(self, k: int) -> float:
        """sigma_{k-1} / sigma_k; при sigma_k = 0 шаг переходит в предсказание"""
        if not 1 <= k <= self.steps:
            raise StepOutOfRange(f"Шаг {k} вне [1, {self.steps}]")
        current = self.sigma(k)
        return self.sigma(k - 1) / current if current > 0 else 0.0


@dataclass(frozen=True)
class TrainingConfig:
    """Гиперпараметры оптимизации"""

    __pydantic_config__ = STRICT_SCHEMA

    steps: int = 1500
    batch_size: int = 16
    lr: float = 1e-3
    schedule: LrSchedule = LrSchedule.CONSTANT
    warmup_steps: int = 50
    weight_decay: float = 1e-4
    betas: Tuple[float, float] = (0.9, 0.999)
    seed: int = 0
    log_every: int = 250

    def __post_init__(self) -> None:
        if self.steps < 1 or self.batch_size < 1:
            raise ConfigException("steps и batch_size должны быть положительными")
        if self.steps > 20000 or self.batch_size > 32:
            raise ConfigException("Бюджет обучения: не более 20000 шагов и батч до 32")
        if not self.lr > 0 or self.weight_decay < 0:
            raise ConfigException("lr должен быть положительным, weight_decay неотрицательным")
        if not all(0 <= b < 1 for b in self.betas):
            raise ConfigException("betas должны лежать в [0, 1)")
        object.__setattr__(self, "schedule", LrSchedule(self.schedule))


@dataclass(frozen=True)
class RegressionConfig:
    __pydantic_config__ = STRICT_SCHEMA

    num_waypoints: int = 8
    plan_dt: float = 0.5
    hidden_dim: int = 64
    status_dim: int = 16
    use_position_encoding: bool = True
    training: TrainingConfig = field(default_factory=lambda: TrainingConfig(lr=1e-3))


@dataclass(frozen=True)
class DiffusionConfig:
    __pydantic_config__ = STRICT_SCHEMA

    num_anchors: int = 20
    num_waypoints: int = 8
    plan_dt: float = 0.5
    diffusion_steps: int = 2
    # None: оценивается по разбросу экспертов вокруг ближайших якорей
    sigma_max: Optional[float] = None
    hidden_dim: int = 64
    status_dim: int = 16
    confidence_weight: float = 1.0
    use_position_encoding: bool = True
    training: TrainingConfig = field(
        default_factory=lambda: TrainingConfig(lr=2e-3, schedule=LrSchedule.COSINE)
    )


def default_omega() -> Dict[str, float]:
    return {
        "nc": 4.0,
        "dac": 4.0,
        "ddc": 2.0,
        "tlc": 2.0,
        "ttc": 5.0,
        "ep": 5.0,
        "lk": 2.0,
        "hc": 1.0,
        "ec": 1.0,
    }


@dataclass(frozen=True)
class ScoringConfig:
    __pydantic_config__ = STRICT_SCHEMA

    vocab_size: int = 256
    candidate_dt: float = 0.1
    hidden_dim: int = 64
    status_dim: int = 16
    use_position_encoding: bool = True
    omega: Dict[str, float] = field(default_factory=default_omega)
    training: TrainingConfig = field(
        default_factory=lambda: TrainingConfig(lr=1e-3, schedule=LrSchedule.COSINE)
    )

    def __post_init__(self) -> None:
        if set(self.omega) != set(ALL_METRICS):
            raise ConfigException(f"omega должен задавать веса для {list(ALL_METRICS)}")
        if any(w < 0 for w in self.omega.values()):
            raise ConfigException("Веса omega должны быть неотрицательными")

    @property
    def omega_vector(self) -> FloatArray:
        return np.array([self.omega[name] for name in ALL_METRICS], dtype=np.float64)


@dataclass(frozen=True)
class FeaturePipeline:
    """Экстрактор и адаптер, через которые сцена превращается в токены"""

    kind: ExtractorKind
    perception: PerceptionConfig = field(default_factory=PerceptionConfig)
    adapter: AdapterConfig = field(default_factory=AdapterConfig)

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", ExtractorKind(self.kind))
        if self.adapter.in_dim != self.perception.feature_dim:
            raise ConfigException(
                f"Вход адаптера {self.adapter.in_dim} != размерности признаков "
                f"{self.perception.feature_dim}"
            )

    @property
    def token_dim(self) -> int:
        return self.adapter.out_dim


@dataclass(frozen=True, eq=False)
class PlannerSample:
    """Обучающий пример: вход экстрактора, статус, целевые точки эксперта"""

    features: FloatArray
    status: FloatArray
    target: FloatArray
    geometry_seed: int
    style_id: int = 0

    def __post_init__(self) -> None:
        if np.asarray(self.features).ndim != 3:
            raise DimMismatch(f"Признаки примера должны быть (H, W, C): {self.features.shape}")
        if np.asarray(self.target).ndim != 2 or self.target.shape[1] != 2:
            raise DimMismatch(f"Цель примера должна быть (T, 2): {self.target.shape}")


@dataclass(frozen=True)
class PlannerSettings:
    """Конфигурации трех парадигм"""

    __pydantic_config__ = STRICT_SCHEMA

    regression: RegressionConfig = field(default_factory=RegressionConfig)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    scoring: ScoringConfig = field(default_factory=ScoringConfig)

    def for_paradigm(self, paradigm: Paradigm) -> object:
        return getattr(self, Paradigm(paradigm).value)
