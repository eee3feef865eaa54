"""
Тесты для k-means словаря траекторий и токенизатора
"""
import logging

import numpy as np
import pytest

from navrobust.apps.nncore.models import ParamSet
from navrobust.apps.vocabulary.serializers import VocabularySerializer
from navrobust.core.exceptions import DimMismatch, SchemaVersionMismatch, TooFewSamples
from navrobust.services.geometry import GeometryService
from navrobust.services.vocabulary_service import VocabularyService

PLAN_DT = 0.5
PLAN_POSES = 9


def fan(count: int, seed: int = 0):
    """Веер траекторий: разные скорости и боковые смещения с малым шумом"""
    rng = np.random.default_rng(seed)
    t = np.arange(PLAN_POSES) * PLAN_DT
    trajs = []
    for _ in range(count):
        speed = rng.uniform(0.0, 12.0)
        bend = rng.uniform(-0.3, 0.3)
        xy = np.stack([speed * t, bend * t**2], axis=1) + rng.normal(0, 0.01, (PLAN_POSES, 2))
        xy[0] = 0.0
        trajs.append(GeometryService.trajectory_from_xy(xy, PLAN_DT))
    return trajs


def clustered(centers_speed=(2.0, 6.0, 10.0), per_cluster=20, seed=0):
    rng = np.random.default_rng(seed)
    t = np.arange(PLAN_POSES) * PLAN_DT
    trajs = []
    for speed in centers_speed:
        for _ in range(per_cluster):
            xy = np.stack([speed * t, np.zeros_like(t)], axis=1)
            xy[1:] += rng.normal(0, 0.05, (PLAN_POSES - 1, 2))
            trajs.append(GeometryService.trajectory_from_xy(xy, PLAN_DT))
    return trajs


class TestKMeans:
    """Тесты для кластеризации траекторий"""

    def test_objective_non_increasing(self):
        """Тест невозрастания целевой функции по итерациям"""
        vocab = VocabularyService.kmeans_trajectories(fan(200), 12, seed=3)
        history = np.array(vocab.objective_history)
        assert np.all(np.diff(history) <= 1e-9 * history[0])
        assert vocab.size == 12

    def test_recovers_clusters(self):
        """Тест восстановления трех хорошо разделенных кластеров"""
        vocab = VocabularyService.kmeans_trajectories(clustered(), 3, seed=0)
        final_x = sorted(float(c.xy[-1, 0]) for c in vocab.candidates)
        np.testing.assert_allclose(final_x, [8.0, 24.0, 40.0], atol=0.1)

    def test_k_equals_n_zero_coverage(self):
        """Тест нулевого покрытия при K, равном числу траекторий"""
        trajs = fan(15, seed=1)
        vocab = VocabularyService.kmeans_trajectories(trajs, 15, seed=0)
        assert VocabularyService.coverage(vocab, trajs) == pytest.approx(0.0, abs=1e-9)

    def test_deterministic(self):
        """Тест воспроизводимости по зерну"""
        trajs = fan(100)
        a = VocabularyService.kmeans_trajectories(trajs, 8, seed=5)
        b = VocabularyService.kmeans_trajectories(trajs, 8, seed=5)
        assert a.vocab_hash() == b.vocab_hash()
        assert a.source_hash == VocabularyService.source_hash(trajs)

    def test_too_few(self):
        """Тест числа кластеров больше числа траекторий"""
        with pytest.raises(TooFewSamples):
            VocabularyService.kmeans_trajectories(fan(3), 4)

    def test_mixed_horizons(self):
        """Тест траекторий разной длины"""
        trajs = fan(4)
        short = GeometryService.trajectory_from_xy(trajs[0].xy[:5], PLAN_DT)
        with pytest.raises(DimMismatch):
            VocabularyService.kmeans_trajectories(trajs + [short], 2)


class TestDenseVocabulary:
    """Тесты для плотного словаря скоринга"""

    def test_contains_full_stop(self):
        """Тест обязательного кандидата полной остановки"""
        vocab = VocabularyService.build_dense_vocabulary(fan(80), size=16)
        stops = [c for c in vocab.candidates if np.max(np.abs(c.xy)) == 0.0]
        assert len(stops) == 1
        assert vocab.size in (16, 17)

    def test_truncated_size_warns(self, caplog):
        """Тест предупреждения, когда траекторий меньше размера словаря"""
        with caplog.at_level(logging.WARNING):
            vocab = VocabularyService.build_dense_vocabulary(fan(10), size=256)
        assert vocab.size <= 11
        assert "Размер словаря ограничен" in caplog.text

    def test_coverage_horizon_mismatch(self):
        """Тест покрытия при несовпадающем горизонте"""
        vocab = VocabularyService.build_dense_vocabulary(fan(20), size=4)
        other = [GeometryService.trajectory_from_xy(t.xy[:5], PLAN_DT) for t in fan(3)]
        with pytest.raises(DimMismatch):
            VocabularyService.coverage(vocab, other)


class TestVocabularySerializer:
    """Тесты для JSON-формата словаря"""

    def test_restore_hash(self, tmp_path):
        """Тест совпадения хэша после записи и чтения"""
        vocab = VocabularyService.build_dense_vocabulary(fan(40), size=8)
        path = tmp_path / "vocab.json"
        VocabularySerializer.write(vocab, path)
        restored = VocabularySerializer.read(path)
        assert restored.vocab_hash() == vocab.vocab_hash()
        assert restored.objective_history == vocab.objective_history

    def test_version_mismatch(self):
        """Тест неподдерживаемой версии"""
        data = VocabularySerializer.to_representation(
            VocabularyService.kmeans_trajectories(fan(4), 2)
        )
        data["format_version"] = 0
        with pytest.raises(SchemaVersionMismatch):
            VocabularySerializer.to_internal_value(data)


class TestTokenizer:
    """Тесты для токенизатора траекторий"""

    def test_shape_and_range(self):
        """Тест размерности и диапазона токена"""
        params = ParamSet(seed=0)
        VocabularyService.init_tokenizer(params, PLAN_POSES, 16)
        token = VocabularyService.tokenize_trajectory(fan(1)[0], params)
        assert token.shape == (16,)
        assert np.all(np.abs(token) < 1.0)

    def test_wrong_length(self):
        """Тест траектории с другим числом точек"""
        params = ParamSet(seed=0)
        VocabularyService.init_tokenizer(params, PLAN_POSES, 16)
        short = GeometryService.trajectory_from_xy(fan(1)[0].xy[:5], PLAN_DT)
        with pytest.raises(DimMismatch):
            VocabularyService.tokenize_trajectory(short, params)
