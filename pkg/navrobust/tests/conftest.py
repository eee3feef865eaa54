"""
Общие фикстуры: построитель сцен на прямой дороге и сгенерированные сцены
"""
from typing import Callable, List

import pytest

from navrobust.apps.scenario.models import (
    GeneratorConfig,
    GeometrySeed,
    Scenario,
    StyleRegistry,
)
from navrobust.services.scenario_service import ScenarioService
from navrobust.tests.factories import build_straight_scenario


@pytest.fixture
def make_scenario() -> Callable[..., Scenario]:
    return build_straight_scenario


@pytest.fixture(scope="session")
def registry() -> StyleRegistry:
    return StyleRegistry.default()


@pytest.fixture(scope="session")
def generator_config() -> GeneratorConfig:
    return GeneratorConfig()


@pytest.fixture(scope="session")
def generated_scenarios(registry, generator_config) -> List[Scenario]:
    """Небольшой набор сгенерированных сцен исходного стиля"""
    return [
        ScenarioService.generate_scenario(GeometrySeed(seed), registry.origin, generator_config)
        for seed in range(8)
    ]
