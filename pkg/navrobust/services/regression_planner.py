"""
Сервисный слой регрессионного планировщика: эго-запрос над токенами и MLP-декодер точек
"""
import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np

from navrobust.apps.nncore.models import ParamSet, Tensor
from navrobust.apps.perception.models import TokenSequence
from navrobust.apps.planners.models import (
    EgoStatus,
    FeaturePipeline,
    Paradigm,
    PlannerSample,
    PlanOutput,
    RegressionConfig,
    Variant,
)
from navrobust.apps.scenario.models import Scenario
from navrobust.services.autograd import AutogradService as ag
from navrobust.services.optimizer import OptimizerService
from navrobust.services.planner_service import POSITION_SCALE, PlannerService, TrainedPlanner

logger = logging.getLogger(__name__)

HEAD_DEPTH = 3


class RegressionService:
    @staticmethod
    def init_params(pipeline: FeaturePipeline, config: RegressionConfig, seed: int = 0) -> ParamSet:
        params = ParamSet(seed=seed)
        PlannerService.init_encoder(params, pipeline, config.status_dim)
        d = pipeline.token_dim
        params.add("regression.query", (1, d), fan_in=d)
        params.add_mlp(
            "regression.head",
            [d + config.status_dim, config.hidden_dim, config.hidden_dim, 2 * config.num_waypoints],
        )
        return params

    @staticmethod
    def forward(
        tokens: Tensor,
        grid_shape: Tuple[int, int],
        status: np.ndarray,
        params: ParamSet,
        config: RegressionConfig,
    ) -> Tensor:
        """Токены (B, N, d) и статус (B, 5) -> точки (B, T, 2) в метрах"""
        query = params["regression.query"]
        PlannerService.check_token_dim(tokens, query.shape[-1])
        tokens = PlannerService.add_position(tokens, grid_shape, config.use_position_encoding)
        batch = tokens.shape[0]
        attended = ag.softmax_attention(query, tokens, tokens)
        attended = ag.reshape(attended, (batch, query.shape[-1]))
        hidden = ag.concat([attended, PlannerService.embed_status(params, status)], axis=-1)
        out = ag.mlp(hidden, params, "regression.head", HEAD_DEPTH)
        return ag.mul(ag.reshape(out, (batch, config.num_waypoints, 2)), POSITION_SCALE)

    @staticmethod
    def regression_plan(
        z: TokenSequence, s: EgoStatus, p: ParamSet, config: Optional[RegressionConfig] = None
    ) -> PlanOutput:
        config = config or RegressionConfig()
        waypoints = RegressionService.forward(
            Tensor(z.tokens[None]), z.grid_shape, s.as_array()[None], p, config
        )
        trajectory = PlannerService.waypoints_to_trajectory(waypoints.data[0], config.plan_dt)
        return PlanOutput(trajectory=trajectory)

    @staticmethod
    def loss(
        params: ParamSet,
        samples: Sequence[PlannerSample],
        batch: Sequence[int],
        pipeline: FeaturePipeline,
        config: RegressionConfig,
    ) -> Tensor:
        """Среднеквадратичная ошибка точек в масштабе POSITION_SCALE"""
        features, status, target = PlannerService.stack(samples, batch)
        tokens = PlannerService.encode(params, features, pipeline)
        waypoints = RegressionService.forward(
            tokens, features.shape[1:3], status, params, config
        )
        return ag.mse(ag.mul(waypoints, 1.0 / POSITION_SCALE), target / POSITION_SCALE)

    @staticmethod
    def train_regression(
        samples: Sequence[PlannerSample],
        pipeline: FeaturePipeline,
        config: Optional[RegressionConfig] = None,
        seed: int = 0,
    ) -> Tuple[ParamSet, List[float]]:
        """Имитационное обучение; замороженный экстрактор не изменяется"""
        config = config or RegressionConfig()
        params = RegressionService.init_params(pipeline, config, seed)
        with PlannerService.frozen_extractors(pipeline):
            history = OptimizerService.train(
                params,
                lambda p, batch, rng: RegressionService.loss(p, samples, batch, pipeline, config),
                len(samples),
                config.training,
                label=f"regression/{pipeline.kind.value}",
            )
        return params, history


class RegressionPlanner(TrainedPlanner):
    paradigm = Paradigm.REGRESSION

    def __init__(
        self,
        params: ParamSet,
        pipeline: FeaturePipeline,
        config: Optional[RegressionConfig] = None,
        variant: Variant = Variant.BASE,
    ):
        super().__init__(params, pipeline, variant)
        self.config = config or RegressionConfig()

    def plan(self, scenario: Scenario) -> PlanOutput:
        features, status = self.inputs(scenario)
        tokens = PlannerService.encode(self.params, features, self.pipeline)
        waypoints = RegressionService.forward(
            tokens, features.shape[1:3], status, self.params, self.config
        )
        trajectory = PlannerService.waypoints_to_trajectory(waypoints.data[0], self.config.plan_dt)
        return PlanOutput(trajectory=trajectory)
