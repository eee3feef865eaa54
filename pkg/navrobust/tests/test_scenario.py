"""
Тесты для генерации сцен, разбиения набора и сериализации
"""
import json

import numpy as np
import pytest

from navrobust.apps.scenario.models import (
    GeneratorConfig,
    GeometrySeed,
    MapFamily,
    StyleId,
    StyleRegistry,
)
from navrobust.apps.scenario.serializers import ScenarioSerializer
from navrobust.core.exceptions import (
    ConfigException,
    GenerationFailed,
    InvalidFraction,
    SchemaVersionMismatch,
    ScenarioIOError,
    ValidationException,
)
from navrobust.services.metrics_service import MetricsService
from navrobust.services.scenario_service import ScenarioService


class TestStyleRegistry:
    """Тесты для реестра стилей"""

    def test_default_has_eleven_styles(self, registry):
        """Тест реестра по умолчанию: исходный стиль и десять стилей внешнего вида"""
        assert len(registry) == 11
        assert registry.origin == StyleId(0, "origin")
        assert len(registry.non_origin) == 10

    def test_origin_must_be_first(self):
        """Тест отказа, если id 0 не исходный стиль"""
        with pytest.raises(ConfigException):
            StyleRegistry.from_names(["heavy_rain", "origin"])

    def test_unknown_id(self, registry):
        """Тест отказа для отсутствующего id"""
        with pytest.raises(ValidationException):
            registry.get(11)


class TestGenerateScenario:
    """Тесты для процедурной генерации"""

    def test_style_changes_only_style(self, registry):
        """Тест разделения геометрии и стиля для seed=7"""
        origin = ScenarioService.generate_scenario(GeometrySeed(7), registry.origin)
        rain = ScenarioService.generate_scenario(GeometrySeed(7), registry.by_name("heavy_rain"))
        assert rain.style.name == "heavy_rain"
        assert rain.with_style(registry.origin) == origin
        serializer = ScenarioSerializer(registry)
        a = serializer.to_representation(origin)
        b = serializer.to_representation(rain)
        a.pop("style")
        b.pop("style")
        assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)

    def test_deterministic(self, registry):
        """Тест повторной генерации с тем же зерном"""
        a = ScenarioService.generate_scenario(GeometrySeed(7), registry.origin)
        b = ScenarioService.generate_scenario(GeometrySeed(7), registry.origin)
        assert a == b
        assert ScenarioService.scenario_hash(a) == ScenarioService.scenario_hash(b)

    def test_ego_centric_frame(self, generated_scenarios):
        """Тест положения эго-ТС в начале координат с нулевым курсом"""
        for scenario in generated_scenarios:
            np.testing.assert_allclose(scenario.expert.poses[0], [0.0, 0.0, 0.0], atol=1e-9)
            assert scenario.expert.num_poses == 41
            assert scenario.dt == pytest.approx(0.1)

    def test_expert_passes_penalties(self, generated_scenarios):
        """Тест эксперта: NC = DAC = 1 и высокий EPDMS"""
        for scenario in generated_scenarios:
            result = MetricsService.evaluate_plan(scenario, scenario.expert)
            assert result.scores.nc == 1.0
            assert result.scores.dac == 1.0
            assert result.epdms >= 0.9

    def test_family_mix(self, registry):
        """Тест генерации каждого семейства карт при единичном весе"""
        for family in MapFamily:
            params = GeneratorConfig(family_weights={family.value: 1.0})
            scenario = ScenarioService.generate_scenario(GeometrySeed(3), registry.origin, params)
            assert scenario.map_family is family
            if family is MapFamily.INTERSECTION:
                assert len(scenario.lights) == 1

    def test_retry_budget_exhausted(self, registry, monkeypatch):
        """Тест исчерпания попыток, когда эксперт ни разу не проходит проверку"""
        monkeypatch.setattr(ScenarioService, "_expert_acceptable", staticmethod(lambda s: False))
        with pytest.raises(GenerationFailed):
            ScenarioService.generate_scenario(
                GeometrySeed(5), registry.origin, GeneratorConfig(max_retries=3)
            )

    def test_invalid_config(self):
        """Тест проверки конфигурации генератора"""
        with pytest.raises(ConfigException):
            GeneratorConfig(lane_width=1.5).validate()
        with pytest.raises(ConfigException):
            GeneratorConfig(max_agents=0).validate()

    @pytest.mark.slow
    def test_expert_epdms_average(self, registry):
        """Тест среднего EPDMS эксперта на 500 зернах"""
        values = []
        for seed in range(500):
            try:
                scenario = ScenarioService.generate_scenario(GeometrySeed(seed), registry.origin)
            except GenerationFailed:
                continue
            values.append(MetricsService.evaluate_plan(scenario, scenario.expert).epdms)
        assert len(values) >= 495
        assert np.mean(values) >= 0.95


class TestSplitDataset:
    """Тесты для разбиения набора"""

    def test_counts_and_disjointness(self, registry):
        """Тест 100 зерен с долей 0.4 и пяти видимых стилей"""
        split = ScenarioService.split_dataset(list(range(100)), registry, 0.4, 5, rng_seed=0)
        assert len(split.support_seeds) == 40
        assert len(split.evaluation_seeds) == 60
        assert not set(split.support_seeds) & set(split.evaluation_seeds)
        assert len(split.seen_styles) == 5
        assert len(split.unseen_styles) == 5
        assert not set(split.seen_styles) & set(split.unseen_styles)
        assert registry.origin not in split.seen_styles + split.unseen_styles

    def test_deterministic(self, registry):
        """Тест одинакового разбиения при одинаковых входах"""
        a = ScenarioService.split_dataset(list(range(50)), registry, 0.4, 5, rng_seed=3)
        b = ScenarioService.split_dataset(list(range(50)), registry, 0.4, 5, rng_seed=3)
        assert a == b

    @pytest.mark.parametrize("fraction", [0.0, 1.0, -0.2, 1.5])
    def test_invalid_fraction(self, registry, fraction):
        """Тест доли вне (0, 1)"""
        with pytest.raises(InvalidFraction):
            ScenarioService.split_dataset(list(range(10)), registry, fraction, 5, rng_seed=0)

    def test_seen_count_must_leave_unseen(self, registry):
        """Тест seen_count, равного числу стилей"""
        with pytest.raises(ConfigException):
            ScenarioService.split_dataset(list(range(10)), registry, 0.4, 10, rng_seed=0)

    def test_no_seen_styles(self, registry):
        """Тест seen_count = 0: все неисходные стили невиданные"""
        split = ScenarioService.split_dataset(list(range(10)), registry, 0.4, 0, rng_seed=0)
        assert split.seen_styles == ()
        assert len(split.unseen_styles) == len(registry) - 1
        with pytest.raises(ConfigException):
            ScenarioService.split_dataset(list(range(10)), registry, 0.4, -1, rng_seed=0)


class TestScenarioSerializer:
    """Тесты для JSON-представления сценария"""

    def test_round_trip(self, generated_scenarios, registry, tmp_path):
        """Тест записи и чтения сгенерированных сцен"""
        for scenario in generated_scenarios[:4]:
            path = tmp_path / "nested" / f"{scenario.geometry_seed.seed}.json"
            ScenarioService.write_scenario(scenario, path, registry)
            assert ScenarioService.read_scenario(path, registry) == scenario

    def test_top_level_keys(self, make_scenario, registry):
        """Тест ключей верхнего уровня"""
        data = ScenarioSerializer(registry).to_representation(make_scenario())
        expected = {"schema_version", "geometry_seed", "style", "map", "agents", "lights"}
        assert set(data) == expected | {"ego", "expert"}

    def test_unknown_style(self, make_scenario, registry):
        """Тест стиля с id вне реестра"""
        data = ScenarioSerializer(registry).to_representation(make_scenario())
        data["style"] = {"id": 11, "name": "unknown"}
        with pytest.raises(ValidationException):
            ScenarioSerializer(registry).to_internal_value(data)

    def test_expert_start_mismatch(self, make_scenario, registry):
        """Тест эксперта, начинающегося не в конце истории"""
        data = ScenarioSerializer(registry).to_representation(make_scenario())
        data["expert"]["poses"][0][0] = 1.0
        with pytest.raises(ValidationException):
            ScenarioSerializer(registry).to_internal_value(data)

    def test_schema_version(self, make_scenario, registry):
        """Тест несовпадающей версии схемы"""
        data = ScenarioSerializer(registry).to_representation(make_scenario())
        data["schema_version"] = 99
        with pytest.raises(SchemaVersionMismatch):
            ScenarioSerializer(registry).to_internal_value(data)

    def test_missing_file(self, tmp_path):
        """Тест чтения отсутствующего файла"""
        with pytest.raises(ScenarioIOError):
            ScenarioService.read_scenario(tmp_path / "absent.json")
