"""
Сервисный слой диффузионного планировщика: якоря, усеченный денойзинг, голова уверенности
"""
import logging
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from navrobust.apps.geom.models import FloatArray
from navrobust.apps.nncore.models import ParamSet, Tensor
from navrobust.apps.perception.models import TokenSequence
from navrobust.apps.planners.models import (
    DiffusionConfig,
    EgoStatus,
    FeaturePipeline,
    NoiseSchedule,
    Paradigm,
    PlannerSample,
    PlanOutput,
    Variant,
)
from navrobust.apps.scenario.models import Scenario
from navrobust.apps.vocabulary.models import TrajectoryVocabulary
from navrobust.core.exceptions import DimMismatch, EmptyAnchors, StepOutOfRange
from navrobust.services.autograd import AutogradService as ag
from navrobust.services.optimizer import OptimizerService
from navrobust.services.planner_service import POSITION_SCALE, PlannerService, TrainedPlanner
from navrobust.services.scenario_service import ScenarioService
from navrobust.services.vocabulary_service import VocabularyService

logger = logging.getLogger(__name__)

HEAD_DEPTH = 3
Denoiser = Callable[[FloatArray, int], FloatArray]


class DiffusionService:
    # Якоря

    @staticmethod
    def build_anchors(
        samples: Sequence[PlannerSample], config: DiffusionConfig, seed: int = 0
    ) -> TrajectoryVocabulary:
        """k-means по траекториям эксперта (2 Гц, с текущим положением)"""
        trajs = [
            PlannerService.waypoints_to_trajectory(sample.target, config.plan_dt)
            for sample in samples
        ]
        return VocabularyService.kmeans_trajectories(trajs, config.num_anchors, seed)

    @staticmethod
    def anchor_waypoints(anchors: TrajectoryVocabulary) -> FloatArray:
        """(K, T, 2) без текущего положения"""
        return anchors.positions[:, 1:, :]

    @staticmethod
    def nearest_anchor(targets: FloatArray, anchors: FloatArray) -> np.ndarray:
        """Индекс ближайшего якоря для каждой цели (n, T, 2)"""
        if anchors.shape[0] == 0:
            raise EmptyAnchors("Пустой набор якорей")
        distances = np.sum((targets[:, None] - anchors[None]) ** 2, axis=(-1, -2))
        return np.argmin(distances, axis=1)

    @staticmethod
    def estimate_sigma(targets: FloatArray, anchors: FloatArray) -> float:
        """Среднеквадратичный разброс экспертов вокруг ближайших якорей по координате"""
        labels = DiffusionService.nearest_anchor(targets, anchors)
        return float(np.sqrt(np.mean((targets - anchors[labels]) ** 2)))

    @staticmethod
    def schedule(config: DiffusionConfig, sigma_max: float) -> NoiseSchedule:
        return NoiseSchedule(steps=config.diffusion_steps, sigma_max=sigma_max)

    # Сеть

    @staticmethod
    def init_params(
        pipeline: FeaturePipeline, config: DiffusionConfig, seed: int = 0
    ) -> ParamSet:
        params = ParamSet(seed=seed)
        PlannerService.init_encoder(params, pipeline, config.status_dim)
        d = pipeline.token_dim
        flat = 2 * config.num_waypoints
        params.add_linear("diffusion.traj_in", flat + config.diffusion_steps + 1, d)
        params.add_mlp(
            "diffusion.head",
            [2 * d + config.status_dim, config.hidden_dim, config.hidden_dim, flat],
        )
        params.add_linear("diffusion.anchor_in", flat, d)
        params.add_mlp("diffusion.confidence", [2 * d + config.status_dim, config.hidden_dim, 1])
        return params

    @staticmethod
    def _context(
        queries: Tensor, tokens: Tensor, status_embedding: Tensor
    ) -> Tensor:
        """[запрос, внимание по токенам, статус] для каждого запроса (B, M, 2d + s)"""
        attended = ag.softmax_attention(queries, tokens, tokens)
        count = queries.shape[-2]
        return ag.concat(
            [queries, attended, PlannerService.tile(status_embedding, count)], axis=-1
        )

    @staticmethod
    def denoise(
        noisy: FloatArray,
        steps: np.ndarray,
        tokens: Tensor,
        status_embedding: Tensor,
        params: ParamSet,
        config: DiffusionConfig,
    ) -> Tensor:
        """
        Предсказание чистой траектории (B, M, T, 2) по зашумленной и номеру шага.
        Выход сети добавляется к входу, нулевая голова дает тождественный денойзер.
        """
        batch, modes, length, _ = noisy.shape
        if length != config.num_waypoints:
            raise DimMismatch(f"Ожидалось {config.num_waypoints} точек, получено {length}")
        steps = np.asarray(steps, dtype=np.int64)
        if np.any(steps < 0) or np.any(steps > config.diffusion_steps):
            raise StepOutOfRange(f"Шаги {steps.tolist()} вне [0, {config.diffusion_steps}]")
        one_hot = np.eye(config.diffusion_steps + 1)[steps.reshape(batch, modes)]
        flat = noisy.reshape(batch, modes, 2 * length) / POSITION_SCALE
        queries = ag.tanh(
            ag.linear(Tensor(np.concatenate([flat, one_hot], axis=-1)), params, "diffusion.traj_in")
        )
        hidden = DiffusionService._context(queries, tokens, status_embedding)
        out = ag.mlp(hidden, params, "diffusion.head", HEAD_DEPTH)
        residual = ag.mul(ag.reshape(out, (batch, modes, length, 2)), POSITION_SCALE)
        return ag.add(residual, noisy)

    @staticmethod
    def confidence(
        anchors: FloatArray, tokens: Tensor, status_embedding: Tensor, params: ParamSet
    ) -> Tensor:
        """Логиты уверенности мод (B, K)"""
        count = anchors.shape[0]
        batch = tokens.shape[0]
        flat = anchors.reshape(count, -1) / POSITION_SCALE
        queries = ag.tanh(ag.linear(Tensor(flat), params, "diffusion.anchor_in"))
        queries = ag.broadcast_to(
            ag.reshape(queries, (1, count, queries.shape[-1])), (batch, count, queries.shape[-1])
        )
        hidden = DiffusionService._context(queries, tokens, status_embedding)
        logits = ag.mlp(hidden, params, "diffusion.confidence", 2)
        return ag.reshape(logits, (batch, count))

    # Денойзинг и вывод

    @staticmethod
    def diffusion_denoise_step(
        noisy: FloatArray, k: int, schedule: NoiseSchedule, denoiser: Denoiser
    ) -> FloatArray:
        """T_{k-1} = x0 + (sigma_{k-1} / sigma_k) (T_k - x0)"""
        ratio = schedule.ratio(k)
        x0 = np.asarray(denoiser(noisy, k), dtype=np.float64)
        return x0 + ratio * (noisy - x0)

    @staticmethod
    def learned_denoiser(
        tokens: Tensor, status_embedding: Tensor, params: ParamSet, config: DiffusionConfig
    ) -> Denoiser:
        """Денойзер для одной сцены: (K, T, 2), k -> (K, T, 2)"""

        def denoiser(noisy: FloatArray, k: int) -> FloatArray:
            steps = np.full((1, noisy.shape[0]), k)
            out = DiffusionService.denoise(
                noisy[None], steps, tokens, status_embedding, params, config
            )
            return out.data[0]

        return denoiser

    @staticmethod
    def diffusion_plan(
        z: TokenSequence,
        s: EgoStatus,
        anchors: FloatArray,
        p: ParamSet,
        schedule: NoiseSchedule,
        config: Optional[DiffusionConfig] = None,
        seed: int = 0,
        denoiser: Optional[Denoiser] = None,
    ) -> PlanOutput:
        """
        Для каждого якоря: начальная точка anchor + sigma_K * eps, усеченный цикл
        денойзинга, оценка уверенности; выбирается мода с максимальной уверенностью.
        """
        config = config or DiffusionConfig()
        anchors = np.asarray(anchors, dtype=np.float64)
        if anchors.ndim != 3 or anchors.shape[0] == 0:
            raise EmptyAnchors("Для диффузионного плана нужен хотя бы один якорь")
        tokens = PlannerService.add_position(
            Tensor(z.tokens[None]), z.grid_shape, config.use_position_encoding
        )
        status_embedding = PlannerService.embed_status(p, s.as_array()[None])
        if denoiser is None:
            denoiser = DiffusionService.learned_denoiser(tokens, status_embedding, p, config)

        rng = np.random.default_rng(seed)
        x = anchors + schedule.sigma(schedule.steps) * rng.standard_normal(anchors.shape)
        for k in range(schedule.steps, 0, -1):
            x = DiffusionService.diffusion_denoise_step(x, k, schedule, denoiser)

        logits = DiffusionService.confidence(anchors, tokens, status_embedding, p).data[0]
        shifted = np.exp(logits - logits.max())
        confidences = shifted / shifted.sum()
        best = int(np.argmax(confidences))
        modes = tuple(PlannerService.waypoints_to_trajectory(m, config.plan_dt) for m in x)
        return PlanOutput(
            trajectory=modes[best], scores=confidences, modes=modes, selected_index=best
        )

    # Обучение

    @staticmethod
    def corrupt(
        targets: FloatArray,
        anchors: FloatArray,
        steps: np.ndarray,
        schedule: NoiseSchedule,
        noise: FloatArray,
    ) -> FloatArray:
        """Эксперт смещается к шару шума ближайшего якоря пропорционально sigma_k / sigma_max"""
        sigmas = schedule.sigmas[np.asarray(steps)]
        share = sigmas / schedule.sigma_max if schedule.sigma_max > 0 else np.zeros_like(sigmas)
        labels = DiffusionService.nearest_anchor(targets, anchors)
        shift = anchors[labels] - targets
        return targets + share[:, None, None] * shift + sigmas[:, None, None] * noise

    @staticmethod
    def loss(
        params: ParamSet,
        samples: Sequence[PlannerSample],
        batch: Sequence[int],
        pipeline: FeaturePipeline,
        config: DiffusionConfig,
        anchors: FloatArray,
        schedule: NoiseSchedule,
        rng: np.random.Generator,
    ) -> Tensor:
        """MSE предсказания x0 плюс кросс-энтропия уверенности по метке ближайшего якоря"""
        features, status, targets = PlannerService.stack(samples, batch)
        steps = rng.integers(1, schedule.steps + 1, size=len(batch))
        noise = rng.standard_normal(targets.shape)
        noisy = DiffusionService.corrupt(targets, anchors, steps, schedule, noise)

        tokens = PlannerService.add_position(
            PlannerService.encode(params, features, pipeline),
            features.shape[1:3],
            config.use_position_encoding,
        )
        status_embedding = PlannerService.embed_status(params, status)
        x0 = DiffusionService.denoise(
            noisy[:, None], steps[:, None], tokens, status_embedding, params, config
        )
        regression = ag.mse(ag.mul(x0, 1.0 / POSITION_SCALE), targets[:, None] / POSITION_SCALE)
        logits = DiffusionService.confidence(anchors, tokens, status_embedding, params)
        labels = DiffusionService.nearest_anchor(targets, anchors)
        classification = ag.softmax_cross_entropy(logits, labels)
        return ag.add(regression, ag.mul(classification, config.confidence_weight))

    @staticmethod
    def train_diffusion(
        samples: Sequence[PlannerSample],
        pipeline: FeaturePipeline,
        anchors: TrajectoryVocabulary,
        config: Optional[DiffusionConfig] = None,
        seed: int = 0,
    ) -> Tuple[ParamSet, float, List[float]]:
        """Параметры, оцененный sigma_max и кривая потерь"""
        config = config or DiffusionConfig()
        waypoints = DiffusionService.anchor_waypoints(anchors)
        targets = np.stack([sample.target for sample in samples])
        if waypoints.shape[1:] != targets.shape[1:]:
            raise DimMismatch(f"Якоря {waypoints.shape} не совпадают с целями {targets.shape}")
        sigma_max = (
            config.sigma_max
            if config.sigma_max is not None
            else DiffusionService.estimate_sigma(targets, waypoints)
        )
        schedule = DiffusionService.schedule(config, sigma_max)
        logger.info(f"Диффузия: {waypoints.shape[0]} якорей, sigma_max={sigma_max:.3f} м")

        params = DiffusionService.init_params(pipeline, config, seed)
        with PlannerService.frozen_extractors(pipeline):
            history = OptimizerService.train(
                params,
                lambda p, batch, rng: DiffusionService.loss(
                    p, samples, batch, pipeline, config, waypoints, schedule, rng
                ),
                len(samples),
                config.training,
                label=f"diffusion/{pipeline.kind.value}",
            )
        return params, sigma_max, history

    @staticmethod
    def confidence_accuracy(
        params: ParamSet,
        samples: Sequence[PlannerSample],
        pipeline: FeaturePipeline,
        config: DiffusionConfig,
        anchors: FloatArray,
    ) -> float:
        """Доля примеров, где максимум уверенности совпадает с ближайшим якорем"""
        indices = list(range(len(samples)))
        features, status, targets = PlannerService.stack(samples, indices)
        tokens = PlannerService.add_position(
            PlannerService.encode(params, features, pipeline),
            features.shape[1:3],
            config.use_position_encoding,
        )
        status_embedding = PlannerService.embed_status(params, status)
        logits = DiffusionService.confidence(anchors, tokens, status_embedding, params).data
        labels = DiffusionService.nearest_anchor(targets, anchors)
        return float(np.mean(np.argmax(logits, axis=1) == labels))


class DiffusionPlanner(TrainedPlanner):
    paradigm = Paradigm.DIFFUSION

    def __init__(
        self,
        params: ParamSet,
        pipeline: FeaturePipeline,
        anchors: TrajectoryVocabulary,
        sigma_max: float,
        config: Optional[DiffusionConfig] = None,
        variant: Variant = Variant.BASE,
        noise_seed: int = 0,
    ):
        super().__init__(params, pipeline, variant)
        self.config = config or DiffusionConfig()
        self.anchors = anchors
        self.schedule = DiffusionService.schedule(self.config, sigma_max)
        self.noise_seed = noise_seed

    def scenario_seed(self, scenario: Scenario) -> int:
        """Зерно шума из главного зерна и зерна геометрии; стиль не участвует"""
        sequence = np.random.SeedSequence([self.noise_seed, scenario.geometry_seed.seed])
        return int(sequence.generate_state(1)[0])

    def plan(self, scenario: Scenario) -> PlanOutput:
        features, _ = self.inputs(scenario)
        tokens = PlannerService.encode(self.params, features, self.pipeline)
        z = TokenSequence(tokens.data[0], (features.shape[1], features.shape[2]))
        return DiffusionService.diffusion_plan(
            z,
            ScenarioService.ego_status(scenario),
            DiffusionService.anchor_waypoints(self.anchors),
            self.params,
            self.schedule,
            self.config,
            seed=self.scenario_seed(scenario),
        )
