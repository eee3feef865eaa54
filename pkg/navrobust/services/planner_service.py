"""
Сервисный слой планировщиков: общий кодировщик токенов, обучающие примеры, базовые планировщики
"""
import contextlib
import logging
from typing import Iterator, List, Optional, Protocol, Sequence, Tuple

import numpy as np

from navrobust.apps.geom.models import FloatArray, Trajectory
from navrobust.apps.nncore.models import ParamSet, Tensor
from navrobust.apps.perception.models import ExtractorKind
from navrobust.apps.planners.models import (
    FeaturePipeline,
    Paradigm,
    PlannerSample,
    PlanOutput,
    Variant,
)
from navrobust.apps.scenario.models import Scenario, StyleRegistry
from navrobust.core.exceptions import DimMismatch, ValidationException
from navrobust.services.autograd import AutogradService as ag
from navrobust.services.geometry import GeometryService
from navrobust.services.perception_service import PerceptionService
from navrobust.services.scenario_service import ScenarioService

logger = logging.getLogger(__name__)

# Масштаб координат траекторий внутри сетей, м
POSITION_SCALE = 10.0
# Нормировка статуса: скорость, ускорение, команда
STATUS_SCALE = np.array([0.1, 0.5, 1.0, 1.0, 1.0])
STATUS_INPUT_DIM = 5
POSITION_ENCODING_BASE = 100.0


class Planner(Protocol):
    name: str

    def plan(self, scenario: Scenario) -> PlanOutput:
        ...


class PlannerService:
    # Кодировщик: экстрактор -> адаптер -> позиционное кодирование

    @staticmethod
    def position_encoding(h: int, w: int, dim: int) -> FloatArray:
        """
        Двумерное синусоидальное кодирование (h * w, dim): четверть каналов на
        sin/cos строки и столбца, остаток заполняется нулями.
        """
        quarter = dim // 4
        encoding = np.zeros((h * w, dim))
        if quarter == 0:
            return encoding
        freqs = 1.0 / POSITION_ENCODING_BASE ** (np.arange(quarter) / quarter)
        rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        rows = rows.reshape(-1, 1) * freqs
        cols = cols.reshape(-1, 1) * freqs
        encoding[:, : 4 * quarter] = np.concatenate(
            [np.sin(rows), np.cos(rows), np.sin(cols), np.cos(cols)], axis=1
        )
        return encoding

    @staticmethod
    def init_encoder(params: ParamSet, pipeline: FeaturePipeline, status_dim: int) -> None:
        if pipeline.kind is ExtractorKind.TRAINABLE:
            PerceptionService.init_trainable_extractor(params, pipeline.perception)
        PerceptionService.init_adapter(params, pipeline.adapter)
        params.add_linear("status", STATUS_INPUT_DIM, status_dim)

    @staticmethod
    def encode(params: ParamSet, features: FloatArray, pipeline: FeaturePipeline) -> Tensor:
        """Вход экстрактора (B, H, W, C_in) -> токены (B, H*W, d)"""
        expected = PerceptionService.input_channels(pipeline.kind, pipeline.perception)
        if features.ndim != 4 or features.shape[-1] != expected:
            raise DimMismatch(f"Ожидался вход (B, H, W, {expected}), получено {features.shape}")
        x = Tensor(features)
        if pipeline.kind is ExtractorKind.TRAINABLE:
            x = PerceptionService.trainable_features(x, params)
        return PerceptionService.adapt_tensor(x, params, pipeline.adapter)

    @staticmethod
    def add_position(tokens: Tensor, grid_shape: Tuple[int, int], enabled: bool) -> Tensor:
        if not enabled:
            return tokens
        h, w = grid_shape
        if tokens.shape[-2] != h * w:
            raise DimMismatch(f"Число токенов {tokens.shape[-2]} не равно {h}x{w}")
        return ag.add(tokens, PlannerService.position_encoding(h, w, tokens.shape[-1]))

    @staticmethod
    def embed_status(params: ParamSet, status: FloatArray) -> Tensor:
        """(B, 5) -> (B, status_dim)"""
        status = np.asarray(status, dtype=np.float64)
        if status.ndim != 2 or status.shape[1] != STATUS_INPUT_DIM:
            raise DimMismatch(f"Статус должен иметь форму (B, {STATUS_INPUT_DIM}): {status.shape}")
        return ag.tanh(ag.linear(Tensor(status * STATUS_SCALE), params, "status"))

    @staticmethod
    def tile(x: Tensor, count: int) -> Tensor:
        """(B, k) -> (B, count, k)"""
        batch, width = x.shape
        return ag.broadcast_to(ag.reshape(x, (batch, 1, width)), (batch, count, width))

    @staticmethod
    def check_token_dim(tokens: Tensor, dim: int) -> None:
        if tokens.data.ndim != 3 or tokens.shape[-1] != dim:
            raise DimMismatch(f"Токены {tokens.shape} не соответствуют размерности {dim}")

    # Данные

    @staticmethod
    def features(scenario: Scenario, pipeline: FeaturePipeline) -> FloatArray:
        return PerceptionService.extract(scenario, pipeline.kind, pipeline.perception).grid

    @staticmethod
    def expert_waypoints(scenario: Scenario, dt: float, num_waypoints: int) -> FloatArray:
        """Будущие точки эксперта (T, 2) без текущего положения"""
        expert = GeometryService.resample_trajectory(scenario.expert, dt, dt * num_waypoints)
        return expert.xy[1:]

    @staticmethod
    def build_samples(
        scenarios: Sequence[Scenario],
        pipeline: FeaturePipeline,
        dt: float,
        num_waypoints: int,
    ) -> List[PlannerSample]:
        samples = [
            PlannerSample(
                features=PlannerService.features(scenario, pipeline),
                status=ScenarioService.ego_status(scenario).as_array(),
                target=PlannerService.expert_waypoints(scenario, dt, num_waypoints),
                geometry_seed=scenario.geometry_seed.seed,
                style_id=scenario.style.id,
            )
            for scenario in scenarios
        ]
        logger.info(f"Собрано {len(samples)} обучающих примеров ({pipeline.kind.value})")
        return samples

    @staticmethod
    def stack(samples: Sequence[PlannerSample], batch: Sequence[int]) -> Tuple[FloatArray, ...]:
        """Признаки, статусы и цели выбранных примеров"""
        return (
            np.stack([samples[i].features for i in batch]),
            np.stack([samples[i].status for i in batch]),
            np.stack([samples[i].target for i in batch]),
        )

    @staticmethod
    def waypoints_to_trajectory(waypoints: FloatArray, dt: float) -> Trajectory:
        """Точки (T, 2) с добавленным текущим положением в начале координат"""
        xy = np.concatenate([np.zeros((1, 2)), np.asarray(waypoints).reshape(-1, 2)], axis=0)
        return GeometryService.trajectory_from_xy(xy, dt)

    @staticmethod
    @contextlib.contextmanager
    def frozen_extractors(
        pipeline: FeaturePipeline, registry: Optional[StyleRegistry] = None
    ) -> Iterator[str]:
        """Контрольная сумма замороженных экстракторов до и после обучения"""
        registry = registry or StyleRegistry.default()
        before = PerceptionService.extractor_checksum(pipeline.perception, registry)
        yield before
        after = PerceptionService.extractor_checksum(pipeline.perception, registry)
        if before != after:
            raise ValidationException("Замороженный экстрактор изменился во время обучения")


class TrainedPlanner:
    """Общая часть обученных планировщиков: параметры и путь признаков"""

    paradigm: Paradigm

    def __init__(
        self,
        params: ParamSet,
        pipeline: FeaturePipeline,
        variant: Variant = Variant.BASE,
    ):
        self.params = params
        self.pipeline = pipeline
        self.variant = Variant(variant)

    @property
    def name(self) -> str:
        return f"{self.paradigm.value}/{self.variant.value}"

    def inputs(self, scenario: Scenario) -> Tuple[FloatArray, FloatArray]:
        features = PlannerService.features(scenario, self.pipeline)[None]
        status = ScenarioService.ego_status(scenario).as_array()[None]
        return features, status

    def plan(self, scenario: Scenario) -> PlanOutput:
        raise NotImplementedError


class ExpertPlanner:
    """Оракул: возвращает траекторию эксперта сценария"""

    name = "expert"

    def plan(self, scenario: Scenario) -> PlanOutput:
        return PlanOutput(trajectory=scenario.expert)


class FullStopPlanner:
    """Остановка на месте на всем горизонте"""

    name = "full_stop"

    def __init__(self, dt: float = 0.1, horizon: float = 4.0):
        self.dt = dt
        self.num_poses = int(round(horizon / dt)) + 1

    def plan(self, scenario: Scenario) -> PlanOutput:
        return PlanOutput(trajectory=Trajectory(self.dt, np.zeros((self.num_poses, 3))))
