"""
Сервисный слой словаря: кластеризация траекторий, плотный словарь, токенизатор
"""
import hashlib
import logging
from typing import List, Sequence

import numpy as np

from navrobust.apps.geom.models import FloatArray, Trajectory
from navrobust.apps.nncore.models import ParamSet, Tensor
from navrobust.apps.vocabulary.models import TrajectoryVocabulary
from navrobust.core.exceptions import DimMismatch, TooFewSamples
from navrobust.services.autograd import AutogradService as ag
from navrobust.services.geometry import GeometryService

logger = logging.getLogger(__name__)

# Масштаб координат на входе токенизатора, м
TOKENIZER_SCALE = 10.0
DUPLICATE_EPS = 1e-9


class VocabularyService:
    @staticmethod
    def _stack(trajs: Sequence[Trajectory]) -> FloatArray:
        if not trajs:
            raise TooFewSamples("Пустой набор траекторий")
        shapes = {t.poses.shape for t in trajs}
        if len(shapes) != 1 or len({t.dt for t in trajs}) != 1:
            raise DimMismatch("Траектории для кластеризации должны иметь одинаковую форму и dt")
        return np.stack([t.xy.reshape(-1) for t in trajs])

    @staticmethod
    def source_hash(trajs: Sequence[Trajectory]) -> str:
        return hashlib.sha256(VocabularyService._stack(trajs).tobytes()).hexdigest()

    @staticmethod
    def _kmeans_pp(points: FloatArray, k: int, rng: np.random.Generator) -> FloatArray:
        centers = [points[int(rng.integers(points.shape[0]))]]
        closest = np.sum((points - centers[0]) ** 2, axis=1)
        for _ in range(1, k):
            total = closest.sum()
            if total <= 0:
                index = int(rng.integers(points.shape[0]))
            else:
                index = int(rng.choice(points.shape[0], p=closest / total))
            centers.append(points[index])
            closest = np.minimum(closest, np.sum((points - points[index]) ** 2, axis=1))
        return np.array(centers)

    @staticmethod
    def _assign(points: FloatArray, centers: FloatArray) -> FloatArray:
        return np.sum((points[:, None, :] - centers[None, :, :]) ** 2, axis=-1)

    @staticmethod
    def kmeans_trajectories(
        trajs: Sequence[Trajectory], k: int, seed: int = 0, max_iter: int = 100
    ) -> TrajectoryVocabulary:
        """
        k-means по плоским векторам положений (x, y) с инициализацией k-means++.
        Пустой кластер переносится в точку, наиболее удаленную от своего центра.
        """
        points = VocabularyService._stack(trajs)
        if k < 1 or points.shape[0] < k:
            raise TooFewSamples(f"Для {k} кластеров нужно не меньше {k} траекторий")
        rng = np.random.default_rng(seed)
        centers = VocabularyService._kmeans_pp(points, k, rng)

        history: List[float] = []
        labels = np.full(points.shape[0], -1)
        for _ in range(max_iter):
            distances = VocabularyService._assign(points, centers)
            new_labels = np.argmin(distances, axis=1)
            rows = np.arange(points.shape[0])
            history.append(float(np.sum(distances[rows, new_labels])))
            if np.array_equal(new_labels, labels):
                break
            labels = new_labels

            own = distances[rows, labels].copy()
            for cluster in range(k):
                members = labels == cluster
                if np.any(members):
                    centers[cluster] = points[members].mean(axis=0)
                else:
                    farthest = int(np.argmax(own))
                    centers[cluster] = points[farthest]
                    own[farthest] = 0.0

        dt = trajs[0].dt
        candidates = tuple(
            GeometryService.trajectory_from_xy(center.reshape(-1, 2), dt) for center in centers
        )
        return TrajectoryVocabulary(
            candidates=candidates,
            source_hash=VocabularyService.source_hash(trajs),
            objective_history=tuple(history),
        )

    @staticmethod
    def full_stop(template: Trajectory) -> Trajectory:
        return Trajectory(template.dt, np.zeros_like(template.poses))

    @staticmethod
    def build_dense_vocabulary(
        trajs: Sequence[Trajectory], size: int = 256, seed: int = 0
    ) -> TrajectoryVocabulary:
        """k-means с K = size и обязательный кандидат полной остановки"""
        k = min(size, len(trajs))
        if k < size:
            logger.warning(f"Размер словаря ограничен числом траекторий: {k} вместо {size}")
        vocab = VocabularyService.kmeans_trajectories(trajs, k, seed)
        stop = VocabularyService.full_stop(trajs[0])
        if any(np.max(np.abs(c.xy)) <= DUPLICATE_EPS for c in vocab.candidates):
            return vocab
        return TrajectoryVocabulary(
            candidates=vocab.candidates + (stop,),
            source_hash=vocab.source_hash,
            objective_history=vocab.objective_history,
        )

    @staticmethod
    def coverage(vocab: TrajectoryVocabulary, trajs: Sequence[Trajectory]) -> float:
        """Среднее по траекториям расстояние (средняя ошибка по точкам) до ближайшего кандидата"""
        targets = VocabularyService._stack(trajs).reshape(len(trajs), -1, 2)
        candidates = vocab.positions
        if candidates.shape[1:] != targets.shape[1:]:
            raise DimMismatch("Горизонт словаря не совпадает с траекториями")
        errors = np.linalg.norm(targets[:, None] - candidates[None], axis=-1).mean(axis=-1)
        return float(errors.min(axis=1).mean())

    # Токенизатор

    @staticmethod
    def init_tokenizer(
        params: ParamSet, num_poses: int, dim: int, prefix: str = "tokenizer"
    ) -> None:
        params.add_linear(prefix, 2 * num_poses, dim)

    @staticmethod
    def tokenize_tensor(xy: Tensor, params: ParamSet, prefix: str = "tokenizer") -> Tensor:
        """(..., T, 2) -> (..., d): tanh(affine(xy / scale))"""
        flat = ag.reshape(xy, xy.shape[:-2] + (xy.shape[-2] * 2,))
        return ag.tanh(ag.linear(ag.mul(flat, 1.0 / TOKENIZER_SCALE), params, prefix))

    @staticmethod
    def tokenize_trajectory(
        traj: Trajectory, params: ParamSet, prefix: str = "tokenizer"
    ) -> FloatArray:
        weight = params[f"{prefix}.weight"]
        if weight.shape[0] != 2 * traj.num_poses:
            raise DimMismatch(
                f"Токенизатор рассчитан на {weight.shape[0] // 2} точек, получено {traj.num_poses}"
            )
        return VocabularyService.tokenize_tensor(Tensor(traj.xy[None]), params, prefix).data[0]
