"""
Метаданные контрольных точек планировщиков
"""
from typing import Any, Dict, Optional, Tuple

from navrobust.apps.perception.models import AdapterConfig, PerceptionConfig
from navrobust.apps.planners.models import (
    DiffusionConfig,
    FeaturePipeline,
    Paradigm,
    RegressionConfig,
    ScoringConfig,
    Variant,
)
from navrobust.apps.vocabulary.models import TrajectoryVocabulary
from navrobust.apps.vocabulary.serializers import VocabularySerializer
from navrobust.core.configuration import from_plain, to_plain
from navrobust.core.exceptions import ConfigException, ValidationException

PARADIGM_CONFIGS = {
    Paradigm.REGRESSION: RegressionConfig,
    Paradigm.DIFFUSION: DiffusionConfig,
    Paradigm.SCORING: ScoringConfig,
}


class PlannerCheckpointSerializer:
    """
    Метаданные описывают парадигму, вариант, путь признаков и конфигурацию;
    якоря диффузии и словарь скоринга хранятся вместе с ними.
    """

    @staticmethod
    def to_representation(
        paradigm: Paradigm,
        variant: Variant,
        pipeline: FeaturePipeline,
        config: Any,
        vocabulary: Optional[TrajectoryVocabulary] = None,
        sigma_max: Optional[float] = None,
        noise_seed: int = 0,
        extra: Optional[Dict[str, Any]] = None,
    ) -> Dict[str, Any]:
        data: Dict[str, Any] = {
            "paradigm": Paradigm(paradigm).value,
            "variant": Variant(variant).value,
            "extractor": pipeline.kind.value,
            "perception": to_plain(pipeline.perception),
            "adapter": to_plain(pipeline.adapter),
            "config": to_plain(config),
            "noise_seed": noise_seed,
        }
        if vocabulary is not None:
            data["vocabulary"] = VocabularySerializer.to_representation(vocabulary)
        if sigma_max is not None:
            data["sigma_max"] = sigma_max
        data.update(extra or {})
        return data

    @staticmethod
    def to_internal_value(
        data: Dict[str, Any]
    ) -> Tuple[Paradigm, Variant, FeaturePipeline, Any, Optional[TrajectoryVocabulary]]:
        try:
            paradigm = Paradigm(data["paradigm"])
            variant = Variant(data["variant"])
            pipeline = FeaturePipeline(
                kind=data["extractor"],
                perception=from_plain(PerceptionConfig, data["perception"], "perception"),
                adapter=from_plain(AdapterConfig, data["adapter"], "adapter"),
            )
            config = from_plain(PARADIGM_CONFIGS[paradigm], data["config"], "config")
        except (KeyError, ValueError, ConfigException) as error:
            raise ValidationException(f"Некорректные метаданные планировщика: {error}") from error
        vocabulary = None
        if "vocabulary" in data:
            vocabulary = VocabularySerializer.to_internal_value(data["vocabulary"])
        return paradigm, variant, pipeline, config, vocabulary
