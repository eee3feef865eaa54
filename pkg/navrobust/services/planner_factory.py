"""
Сервисный слой сборки планировщиков: обучение пары (парадигма, вариант), контрольные точки
"""
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

from navrobust.apps.metrics.models import MetricConfig
from navrobust.apps.nncore.serializers import ParamSetSerializer
from navrobust.apps.perception.models import AdapterConfig, PerceptionConfig
from navrobust.apps.planners.models import (
    FeaturePipeline,
    Paradigm,
    PlannerSettings,
    Variant,
)
from navrobust.apps.planners.serializers import PlannerCheckpointSerializer
from navrobust.apps.scenario.models import Scenario
from navrobust.core.exceptions import ConfigException, ValidationException
from navrobust.services.diffusion_planner import DiffusionPlanner, DiffusionService
from navrobust.services.planner_service import (
    ExpertPlanner,
    FullStopPlanner,
    Planner,
    PlannerService,
    TrainedPlanner,
)
from navrobust.services.regression_planner import RegressionPlanner, RegressionService
from navrobust.services.scoring_planner import ScoringPlanner, ScoringService

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
BASELINES = ("expert", "full_stop")


class PlannerFactory:
    @staticmethod
    def pipeline(
        variant: Variant,
        perception: Optional[PerceptionConfig] = None,
        adapter: Optional[AdapterConfig] = None,
    ) -> FeaturePipeline:
        perception = perception or PerceptionConfig()
        adapter = adapter or AdapterConfig(in_dim=perception.feature_dim)
        return FeaturePipeline(Variant(variant).extractor, perception, adapter)

    @staticmethod
    def baseline(name: str) -> Planner:
        if name == "expert":
            return ExpertPlanner()
        if name == "full_stop":
            return FullStopPlanner()
        raise ConfigException(f"Неизвестный базовый планировщик '{name}', доступны {BASELINES}")

    @staticmethod
    def _unique_geometries(scenarios: Sequence[Scenario]) -> List[Scenario]:
        seen: Dict[int, Scenario] = {}
        for scenario in scenarios:
            seen.setdefault(scenario.geometry_seed.seed, scenario)
        return [seen[seed] for seed in sorted(seen)]

    @staticmethod
    def train(
        paradigm: Paradigm,
        variant: Variant,
        scenarios: Sequence[Scenario],
        settings: Optional[PlannerSettings] = None,
        pipeline: Optional[FeaturePipeline] = None,
        metric_config: Optional[MetricConfig] = None,
        seed: int = 0,
        parallel: int = 1,
        cache_dir: Optional[PathLike] = None,
    ) -> TrainedPlanner:
        """Обучение одного планировщика на переданных сценариях"""
        paradigm, variant = Paradigm(paradigm), Variant(variant)
        settings = settings or PlannerSettings()
        pipeline = pipeline or PlannerFactory.pipeline(variant)
        if pipeline.kind is not variant.extractor:
            raise ConfigException(
                f"Вариант {variant.value} требует экстрактор {variant.extractor.value}"
            )
        if not scenarios:
            raise ValidationException("Пустая обучающая выборка")
        logger.info(
            f"Обучение {paradigm.value}/{variant.value}: {len(scenarios)} сценариев, зерно {seed}"
        )

        if paradigm is Paradigm.REGRESSION:
            config = settings.regression
            samples = PlannerService.build_samples(
                scenarios, pipeline, config.plan_dt, config.num_waypoints
            )
            params, _ = RegressionService.train_regression(samples, pipeline, config, seed)
            return RegressionPlanner(params, pipeline, config, variant)

        if paradigm is Paradigm.DIFFUSION:
            config = settings.diffusion
            samples = PlannerService.build_samples(
                scenarios, pipeline, config.plan_dt, config.num_waypoints
            )
            unique = PlannerService.build_samples(
                PlannerFactory._unique_geometries(scenarios),
                pipeline,
                config.plan_dt,
                config.num_waypoints,
            )
            anchors = DiffusionService.build_anchors(unique, config, seed)
            params, sigma_max, _ = DiffusionService.train_diffusion(
                samples, pipeline, anchors, config, seed
            )
            return DiffusionPlanner(
                params, pipeline, anchors, sigma_max, config, variant, noise_seed=seed
            )

        config = settings.scoring
        unique = PlannerFactory._unique_geometries(scenarios)
        vocab = ScoringService.build_vocabulary(unique, config, seed)
        table = ScoringService.target_table(
            unique, vocab, metric_config, parallel=parallel, cache_dir=cache_dir
        )
        rows = {scenario.geometry_seed.seed: i for i, scenario in enumerate(unique)}
        targets = np.stack([table[rows[s.geometry_seed.seed]] for s in scenarios])
        num_waypoints = vocab[0].num_poses - 1
        samples = PlannerService.build_samples(
            scenarios, pipeline, config.candidate_dt, num_waypoints
        )
        params, _ = ScoringService.train_scoring(samples, targets, pipeline, vocab, config, seed)
        return ScoringPlanner(params, pipeline, vocab, config, variant)

    # Контрольные точки

    @staticmethod
    def save(
        planner: TrainedPlanner, path: PathLike, extra: Optional[Dict[str, Any]] = None
    ) -> None:
        vocabulary = None
        sigma_max = None
        noise_seed = 0
        if isinstance(planner, DiffusionPlanner):
            vocabulary = planner.anchors
            sigma_max = planner.schedule.sigma_max
            noise_seed = planner.noise_seed
        elif isinstance(planner, ScoringPlanner):
            vocabulary = planner.vocab
        metadata = PlannerCheckpointSerializer.to_representation(
            planner.paradigm,
            planner.variant,
            planner.pipeline,
            getattr(planner, "config"),
            vocabulary=vocabulary,
            sigma_max=sigma_max,
            noise_seed=noise_seed,
            extra=extra,
        )
        ParamSetSerializer.write(planner.params, path, metadata)
        logger.info(f"Контрольная точка {planner.name} записана в {path}")

    @staticmethod
    def load(path: PathLike) -> TrainedPlanner:
        raw = ParamSetSerializer.read_raw(path)
        params = ParamSetSerializer.to_internal_value(raw)
        metadata = raw.get("metadata", {})
        paradigm, variant, pipeline, config, vocabulary = (
            PlannerCheckpointSerializer.to_internal_value(metadata)
        )
        if paradigm is Paradigm.REGRESSION:
            return RegressionPlanner(params, pipeline, config, variant)
        if vocabulary is None:
            raise ValidationException(f"{path}: нет словаря для парадигмы {paradigm.value}")
        if paradigm is Paradigm.DIFFUSION:
            return DiffusionPlanner(
                params,
                pipeline,
                vocabulary,
                float(metadata.get("sigma_max", 0.0)),
                config,
                variant,
                noise_seed=int(metadata.get("noise_seed", 0)),
            )
        return ScoringPlanner(params, pipeline, vocabulary, config, variant)

    @staticmethod
    def metadata(path: PathLike) -> Dict[str, Any]:
        return dict(ParamSetSerializer.read_raw(path).get("metadata", {}))
