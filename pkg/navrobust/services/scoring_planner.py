"""
Сервисный слой скорингового планировщика: плотный словарь, головы подметрик, выбор кандидата
"""
import hashlib
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from navrobust.apps.geom.models import FloatArray
from navrobust.apps.metrics.models import ALL_METRICS, MetricConfig
from navrobust.apps.nncore.models import ParamSet, Tensor
from navrobust.apps.perception.models import TokenSequence
from navrobust.apps.planners.models import (
    EgoStatus,
    FeaturePipeline,
    Paradigm,
    PlannerSample,
    PlanOutput,
    ScoringConfig,
    Variant,
)
from navrobust.apps.scenario.models import Scenario
from navrobust.apps.vocabulary.models import TrajectoryVocabulary
from navrobust.core.exceptions import DimMismatch, ScenarioIOError, ValidationException
from navrobust.services.autograd import AutogradService as ag
from navrobust.services.geometry import GeometryService
from navrobust.services.metrics_service import PlanEvaluator
from navrobust.services.optimizer import OptimizerService
from navrobust.services.planner_service import PlannerService, TrainedPlanner
from navrobust.services.scenario_service import ScenarioService
from navrobust.services.vocabulary_service import VocabularyService

logger = logging.getLogger(__name__)

HEAD_DEPTH = 3
NUM_HEADS = len(ALL_METRICS)
PathLike = Union[str, Path]


def _scenario_targets(args: Tuple[Scenario, TrajectoryVocabulary, MetricConfig]) -> FloatArray:
    scenario, vocab, config = args
    return ScoringService.candidate_targets(scenario, vocab, PlanEvaluator(config))


class ScoringService:
    # Словарь

    @staticmethod
    def build_vocabulary(
        scenarios: Sequence[Scenario], config: ScoringConfig, seed: int = 0
    ) -> TrajectoryVocabulary:
        """Плотный словарь из траекторий эксперта с частотой кандидатов"""
        trajs = [
            GeometryService.resample_trajectory(s.expert, config.candidate_dt, s.horizon)
            for s in scenarios
        ]
        vocab = VocabularyService.build_dense_vocabulary(trajs, config.vocab_size, seed)
        logger.info(f"Плотный словарь: {vocab.size} кандидатов")
        return vocab

    # Сеть

    @staticmethod
    def init_params(
        pipeline: FeaturePipeline, config: ScoringConfig, num_poses: int, seed: int = 0
    ) -> ParamSet:
        params = ParamSet(seed=seed)
        PlannerService.init_encoder(params, pipeline, config.status_dim)
        d = pipeline.token_dim
        VocabularyService.init_tokenizer(params, num_poses, d)
        params.add_mlp(
            "scoring.head",
            [2 * d + config.status_dim, config.hidden_dim, config.hidden_dim, NUM_HEADS],
        )
        return params

    @staticmethod
    def logits(
        tokens: Tensor, positions: FloatArray, status_embedding: Tensor, params: ParamSet
    ) -> Tensor:
        """Токены (B, N, d), кандидаты (V, T, 2) -> логиты подметрик (B, V, M)"""
        tokenizer = params["tokenizer.weight"]
        if tokenizer.shape[0] != positions.shape[1] * 2:
            raise DimMismatch(
                f"Токенизатор рассчитан на {tokenizer.shape[0] // 2} точек, "
                f"кандидаты имеют {positions.shape[1]}"
            )
        PlannerService.check_token_dim(tokens, tokenizer.shape[1])
        batch = tokens.shape[0]
        count, dim = positions.shape[0], tokenizer.shape[1]
        queries = VocabularyService.tokenize_tensor(Tensor(positions), params)
        queries = ag.broadcast_to(ag.reshape(queries, (1, count, dim)), (batch, count, dim))
        attended = ag.softmax_attention(queries, tokens, tokens)
        hidden = ag.concat(
            [queries, attended, PlannerService.tile(status_embedding, count)], axis=-1
        )
        return ag.mlp(hidden, params, "scoring.head", HEAD_DEPTH)

    @staticmethod
    def scoring_forward(
        z: TokenSequence,
        vocab: TrajectoryVocabulary,
        s: EgoStatus,
        p: ParamSet,
        config: Optional[ScoringConfig] = None,
    ) -> FloatArray:
        """Подметрики кандидатов s_ij из (0, 1), форма (|V|, M)"""
        config = config or ScoringConfig()
        tokens = PlannerService.add_position(
            Tensor(z.tokens[None]), z.grid_shape, config.use_position_encoding
        )
        status_embedding = PlannerService.embed_status(p, s.as_array()[None])
        logits = ScoringService.logits(tokens, vocab.positions, status_embedding, p)
        return ag.sigmoid(logits).data[0]

    @staticmethod
    def aggregate_candidate_scores(
        sub: FloatArray, omega: Union[FloatArray, Mapping[str, float]]
    ) -> FloatArray:
        """S_i = sum_j omega_j s_ij"""
        if isinstance(omega, Mapping):
            omega = np.array([omega[name] for name in ALL_METRICS], dtype=np.float64)
        sub = np.asarray(sub, dtype=np.float64)
        omega = np.asarray(omega, dtype=np.float64)
        if sub.ndim != 2 or sub.shape[1] != omega.shape[0]:
            raise DimMismatch(f"Подметрики {sub.shape} и веса {omega.shape} несовместимы")
        return sub @ omega

    @staticmethod
    def select_best(scores: FloatArray, vocab: TrajectoryVocabulary) -> PlanOutput:
        """argmax; при равенстве выигрывает меньший индекс"""
        scores = np.asarray(scores, dtype=np.float64)
        if scores.shape != (vocab.size,):
            raise DimMismatch(f"Оценок {scores.shape}, кандидатов {vocab.size}")
        best = int(np.argmax(scores))
        return PlanOutput(trajectory=vocab[best], scores=scores, selected_index=best)

    # Цели дистилляции

    @staticmethod
    def candidate_targets(
        scenario: Scenario, vocab: TrajectoryVocabulary, evaluator: PlanEvaluator
    ) -> FloatArray:
        """Подметрики каждого кандидата после прогона в симуляторе (|V|, M)"""
        return np.array(
            [evaluator.evaluate(scenario, candidate).scores.as_tuple() for candidate in vocab],
            dtype=np.float64,
        )

    @staticmethod
    def dataset_hash(scenarios: Sequence[Scenario]) -> str:
        digest = hashlib.sha256()
        for scenario in scenarios:
            digest.update(ScenarioService.scenario_hash(scenario).encode("utf-8"))
        return digest.hexdigest()

    @staticmethod
    def target_table(
        scenarios: Sequence[Scenario],
        vocab: TrajectoryVocabulary,
        metric_config: Optional[MetricConfig] = None,
        parallel: int = 1,
        cache_dir: Optional[PathLike] = None,
    ) -> FloatArray:
        """
        Цели (n, |V|, M) для набора сценариев. Кэш в npz по хэшу набора и словаря,
        порядок результатов совпадает с порядком сценариев.
        """
        metric_config = metric_config or MetricConfig()
        cache: Optional[Path] = None
        if cache_dir is not None:
            key = f"{ScoringService.dataset_hash(scenarios)[:16]}_{vocab.vocab_hash()[:16]}"
            cache = Path(cache_dir) / f"scoring_targets_{key}.npz"
            if cache.exists():
                try:
                    with np.load(cache) as stored:
                        table = stored["targets"]
                except (OSError, KeyError, ValueError) as error:
                    raise ScenarioIOError(f"Не удалось прочитать кэш {cache}: {error}") from error
                if table.shape == (len(scenarios), vocab.size, NUM_HEADS):
                    logger.info(f"Цели скоринга загружены из кэша {cache.name}")
                    return table
                raise ValidationException(f"Кэш {cache.name} не соответствует набору")

        jobs = [(scenario, vocab, metric_config) for scenario in scenarios]
        if parallel > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=parallel) as pool:
                rows = list(pool.map(_scenario_targets, jobs))
        else:
            rows = [_scenario_targets(job) for job in jobs]
        table = np.stack(rows) if rows else np.zeros((0, vocab.size, NUM_HEADS))
        logger.info(f"Цели скоринга: {len(scenarios)} сценариев x {vocab.size} кандидатов")

        if cache is not None:
            try:
                cache.parent.mkdir(parents=True, exist_ok=True)
                np.savez(cache, targets=table)
            except OSError as error:
                raise ScenarioIOError(f"Не удалось записать кэш {cache}: {error}") from error
        return table

    # Обучение

    @staticmethod
    def loss(
        params: ParamSet,
        samples: Sequence[PlannerSample],
        targets: FloatArray,
        batch: Sequence[int],
        pipeline: FeaturePipeline,
        config: ScoringConfig,
        positions: FloatArray,
    ) -> Tensor:
        """Бинарная кросс-энтропия голов относительно целей симулятора"""
        features, status, _ = PlannerService.stack(samples, batch)
        tokens = PlannerService.add_position(
            PlannerService.encode(params, features, pipeline),
            features.shape[1:3],
            config.use_position_encoding,
        )
        status_embedding = PlannerService.embed_status(params, status)
        logits = ScoringService.logits(tokens, positions, status_embedding, params)
        return ag.bce_with_logits(logits, targets[np.asarray(batch)])

    @staticmethod
    def train_scoring(
        samples: Sequence[PlannerSample],
        targets: FloatArray,
        pipeline: FeaturePipeline,
        vocab: TrajectoryVocabulary,
        config: Optional[ScoringConfig] = None,
        seed: int = 0,
    ) -> Tuple[ParamSet, List[float]]:
        config = config or ScoringConfig()
        if targets.shape != (len(samples), vocab.size, NUM_HEADS):
            raise DimMismatch(
                f"Цели {targets.shape} не соответствуют {len(samples)} примерам "
                f"и {vocab.size} кандидатам"
            )
        positions = vocab.positions
        params = ScoringService.init_params(pipeline, config, positions.shape[1], seed)
        with PlannerService.frozen_extractors(pipeline):
            history = OptimizerService.train(
                params,
                lambda p, batch, rng: ScoringService.loss(
                    p, samples, targets, batch, pipeline, config, positions
                ),
                len(samples),
                config.training,
                label=f"scoring/{pipeline.kind.value}",
            )
        return params, history

    @staticmethod
    def predicted_scores(
        params: ParamSet,
        samples: Sequence[PlannerSample],
        pipeline: FeaturePipeline,
        vocab: TrajectoryVocabulary,
        config: ScoringConfig,
    ) -> FloatArray:
        """Предсказанные подметрики (n, |V|, M) для оценки качества дистилляции"""
        rows = []
        for index in range(len(samples)):
            features, status, _ = PlannerService.stack(samples, [index])
            tokens = PlannerService.add_position(
                PlannerService.encode(params, features, pipeline),
                features.shape[1:3],
                config.use_position_encoding,
            )
            status_embedding = PlannerService.embed_status(params, status)
            logits = ScoringService.logits(tokens, vocab.positions, status_embedding, params)
            rows.append(ag.sigmoid(logits).data[0])
        return np.stack(rows)


class ScoringPlanner(TrainedPlanner):
    paradigm = Paradigm.SCORING

    def __init__(
        self,
        params: ParamSet,
        pipeline: FeaturePipeline,
        vocab: TrajectoryVocabulary,
        config: Optional[ScoringConfig] = None,
        variant: Variant = Variant.BASE,
    ):
        super().__init__(params, pipeline, variant)
        self.config = config or ScoringConfig()
        self.vocab = vocab

    def plan(self, scenario: Scenario) -> PlanOutput:
        features, _ = self.inputs(scenario)
        tokens = PlannerService.encode(self.params, features, self.pipeline)
        z = TokenSequence(tokens.data[0], (features.shape[1], features.shape[2]))
        sub = ScoringService.scoring_forward(
            z, self.vocab, ScenarioService.ego_status(scenario), self.params, self.config
        )
        scores = ScoringService.aggregate_candidate_scores(sub, self.config.omega_vector)
        return ScoringService.select_best(scores, self.vocab)
