"""
Сервисный слой оптимизации: AdamW, расписания шага обучения, цикл обучения
"""
import logging
import math
from typing import Callable, Dict, List, Mapping, Optional, Tuple

import numpy as np

from navrobust.apps.geom.models import FloatArray
from navrobust.apps.nncore.models import OptimizerState, ParamSet, Tensor
from navrobust.apps.planners.models import LrSchedule, TrainingConfig
from navrobust.core.exceptions import ConfigException, NonFiniteError

logger = logging.getLogger(__name__)

ADAM_EPS = 1e-8

# Функция потерь по индексам батча и генератору шума
LossFn = Callable[[ParamSet, FloatArray, np.random.Generator], Tensor]


class OptimizerService:
    @staticmethod
    def optimizer_step(
        params: ParamSet,
        state: OptimizerState,
        lr: float,
        betas: Tuple[float, float] = (0.9, 0.999),
        weight_decay: float = 0.0,
        grads: Optional[Mapping[str, FloatArray]] = None,
        eps: float = ADAM_EPS,
        trainable: Optional[List[str]] = None,
    ) -> OptimizerState:
        """
        Шаг AdamW с раздельным затуханием весов: p <- p(1 - lr*wd) - lr*m^/(sqrt(v^)+eps).
        Значения параметров заменяются новыми массивами.
        """
        grads = grads if grads is not None else params.grads()
        beta1, beta2 = betas
        state.step += 1
        bias1 = 1.0 - beta1**state.step
        bias2 = 1.0 - beta2**state.step

        for name in trainable if trainable is not None else list(params):
            tensor = params[name]
            grad = grads[name]
            if not np.all(np.isfinite(grad)):
                raise NonFiniteError(f"Нечисловой градиент параметра '{name}'")
            m = state.first_moment.get(name, np.zeros_like(grad))
            v = state.second_moment.get(name, np.zeros_like(grad))
            m = beta1 * m + (1.0 - beta1) * grad
            v = beta2 * v + (1.0 - beta2) * grad**2
            state.first_moment[name] = m
            state.second_moment[name] = v
            update = (m / bias1) / (np.sqrt(v / bias2) + eps)
            tensor.data = tensor.data * (1.0 - lr * weight_decay) - lr * update
        return state

    @staticmethod
    def lr_at(step: int, config: TrainingConfig) -> float:
        """Линейный прогрев, затем постоянный или косинусный шаг"""
        if step < 0:
            raise ConfigException("Номер шага не может быть отрицательным")
        warmup = min(config.warmup_steps, config.steps)
        if warmup and step < warmup:
            return config.lr * (step + 1) / warmup
        if config.schedule is LrSchedule.CONSTANT:
            return config.lr
        span = max(config.steps - warmup, 1)
        progress = min((step - warmup) / span, 1.0)
        return config.lr * 0.5 * (1.0 + math.cos(math.pi * progress))

    @staticmethod
    def train(
        params: ParamSet,
        loss_fn: LossFn,
        num_samples: int,
        config: TrainingConfig,
        trainable: Optional[List[str]] = None,
        label: str = "model",
    ) -> List[float]:
        """
        Мини-батчевое обучение: батчи берутся из перестановок выборки,
        генератор детерминирован зерном конфигурации.
        """
        if num_samples < 1:
            raise ConfigException(f"{label}: пустая обучающая выборка")
        rng = np.random.default_rng(config.seed)
        state = OptimizerState()
        batch_size = min(config.batch_size, num_samples)
        order = rng.permutation(num_samples)
        cursor = 0
        history: List[float] = []

        logger.info(
            f"{label}: обучение {config.steps} шагов, батч {batch_size}, выборка {num_samples}"
        )
        for step in range(config.steps):
            if cursor + batch_size > num_samples:
                order = rng.permutation(num_samples)
                cursor = 0
            batch = order[cursor : cursor + batch_size]
            cursor += batch_size

            params.zero_grad()
            loss = loss_fn(params, batch, rng)
            loss.backward()
            OptimizerService.optimizer_step(
                params,
                state,
                OptimizerService.lr_at(step, config),
                config.betas,
                config.weight_decay,
                trainable=trainable,
            )
            history.append(loss.item())
            if config.log_every and (step + 1) % config.log_every == 0:
                recent = float(np.mean(history[-config.log_every :]))
                logger.info(f"{label}: шаг {step + 1}, средняя потеря {recent:.5f}")

        params.zero_grad()
        logger.info(f"{label}: обучение завершено, итоговая потеря {history[-1]:.5f}")
        return history

    @staticmethod
    def snapshot(params: ParamSet) -> Dict[str, FloatArray]:
        return {name: value.copy() for name, value in params.values().items()}
