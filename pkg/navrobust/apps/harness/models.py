"""
Типы эксперимента: конфигурация прогона, манифест набора, таблица результатов
"""
import enum
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from navrobust.apps.metrics.models import ALL_METRICS, MetricConfig
from navrobust.apps.perception.models import AdapterConfig, PerceptionConfig
from navrobust.apps.planners.models import Paradigm, PlannerSettings, Variant
from navrobust.apps.scenario.models import DEFAULT_STYLE_NAMES, GeneratorConfig, StyleRegistry
from navrobust.core.configuration import STRICT_SCHEMA
from navrobust.core.exceptions import ConfigException, InvalidFraction
from navrobust.core.settings import CONFIG_VERSION, OUTPUT_DIR, PARALLEL

TRAIN_SPLIT = "train"
SUPPORT_SPLIT = "support"
EVAL_SPLIT = "eval"
SPLITS = (TRAIN_SPLIT, SUPPORT_SPLIT, EVAL_SPLIT)

FROZEN_STRATEGY = "frozen"
E2E_STRATEGY = "e2e"
STRATEGIES = (FROZEN_STRATEGY, E2E_STRATEGY)


class StyleGroup(str, enum.Enum):
    ORIGIN = "origin"
    SEEN = "seen"
    UNSEEN = "unseen"


@dataclass(frozen=True)
class DatasetConfig:
    """
    Обучающие зерна берутся из отдельного диапазона; зерна раскладок делятся
    на опорные (support) и оценочные.
    """

    __pydantic_config__ = STRICT_SCHEMA

    train_count: int = 300
    layout_count: int = 334
    support_fraction: float = 0.4
    seen_count: int = 5
    train_seed_start: int = 0
    layout_seed_start: int = 100000
    eval_seen: bool = False

    def __post_init__(self) -> None:
        if not 0.0 < self.support_fraction < 1.0:
            raise InvalidFraction(f"support_fraction={self.support_fraction} вне (0, 1)")
        if self.train_count < 1 or self.layout_count < 2:
            raise ConfigException("Нужен хотя бы один обучающий сценарий и две раскладки")
        if self.seen_count < 0:
            raise ConfigException("seen_count не может быть отрицательным")
        train_end = self.train_seed_start + self.train_count
        layout_end = self.layout_seed_start + self.layout_count
        if self.train_seed_start < layout_end and self.layout_seed_start < train_end:
            raise ConfigException("Диапазоны обучающих и оценочных зерен пересекаются")

    @property
    def train_seeds(self) -> List[int]:
        return list(range(self.train_seed_start, self.train_seed_start + self.train_count))

    @property
    def layout_seeds(self) -> List[int]:
        return list(range(self.layout_seed_start, self.layout_seed_start + self.layout_count))


@dataclass(frozen=True)
class AblationConfig:
    __pydantic_config__ = STRICT_SCHEMA

    paradigm: Paradigm = Paradigm.REGRESSION
    strategies: Tuple[str, ...] = STRATEGIES
    adapters: Tuple[str, ...] = ("2L", "4L", "4L+CNN", "8L+CNN")

    def __post_init__(self) -> None:
        object.__setattr__(self, "paradigm", Paradigm(self.paradigm))
        unknown = [s for s in self.strategies if s not in STRATEGIES]
        if unknown:
            raise ConfigException(f"Неизвестные стратегии {unknown}, доступны {list(STRATEGIES)}")
        for label in self.adapters:
            AdapterConfig.from_label(label)


@dataclass(frozen=True)
class ExperimentConfig:
    __pydantic_config__ = STRICT_SCHEMA

    config_version: int = CONFIG_VERSION
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    styles: Tuple[str, ...] = DEFAULT_STYLE_NAMES
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    metrics: MetricConfig = field(default_factory=MetricConfig)
    perception: PerceptionConfig = field(default_factory=PerceptionConfig)
    adapter: AdapterConfig = field(default_factory=AdapterConfig)
    planners: PlannerSettings = field(default_factory=PlannerSettings)
    ablation: AblationConfig = field(default_factory=AblationConfig)
    seed: int = 0
    output_dir: str = str(OUTPUT_DIR)
    parallel: int = PARALLEL
    reactive: bool = False
    paradigms: Tuple[Paradigm, ...] = tuple(Paradigm)
    variants: Tuple[Variant, ...] = (Variant.BASE, Variant.DR, Variant.CONSTANT_EYE)
    baselines: Tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.config_version != CONFIG_VERSION:
            raise ConfigException(
                f"config_version={self.config_version}, поддерживается {CONFIG_VERSION}"
            )
        if len(set(self.styles)) != len(self.styles) or len(self.styles) < 2:
            raise ConfigException("Нужны уникальные стили: исходный и хотя бы один другой")
        if not 0 <= self.dataset.seen_count < len(self.styles) - 1:
            raise ConfigException(
                f"seen_count={self.dataset.seen_count} должен оставлять невиданные стили"
            )
        if self.parallel < 1:
            raise ConfigException("parallel должен быть не меньше 1")
        if self.adapter.in_dim != self.perception.feature_dim:
            raise ConfigException("adapter.in_dim должен совпадать с perception.feature_dim")
        object.__setattr__(self, "paradigms", tuple(Paradigm(p) for p in self.paradigms))
        object.__setattr__(self, "variants", tuple(Variant(v) for v in self.variants))
        for name in self.baselines:
            if name not in ("expert", "full_stop"):
                raise ConfigException(f"Неизвестный базовый планировщик '{name}'")
        self.generator.validate()

    @property
    def registry(self) -> StyleRegistry:
        return StyleRegistry.from_names(self.styles)


@dataclass(frozen=True)
class ManifestEntry:
    __pydantic_config__ = STRICT_SCHEMA

    split: str
    geometry_seed: int
    style: str
    path: str
    sha256: str


@dataclass(frozen=True)
class DatasetManifest:
    entries: Tuple[ManifestEntry, ...]
    support_seeds: Tuple[int, ...]
    evaluation_seeds: Tuple[int, ...]
    seen_styles: Tuple[str, ...]
    unseen_styles: Tuple[str, ...]
    dataset_hash: str
    failed_seeds: Tuple[int, ...] = ()

    def split(self, name: str) -> List[ManifestEntry]:
        return [entry for entry in self.entries if entry.split == name]

    def group_of(self, style: str, origin: str) -> StyleGroup:
        if style == origin:
            return StyleGroup.ORIGIN
        if style in self.seen_styles:
            return StyleGroup.SEEN
        return StyleGroup.UNSEEN


@dataclass(frozen=True)
class ResultRow:
    """Средние подметрики и EPDMS группы стилей (сценарии объединяются)"""

    __pydantic_config__ = STRICT_SCHEMA

    paradigm: str
    variant: str
    group: StyleGroup
    scores: Dict[str, float]
    epdms: float
    count: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "group", StyleGroup(self.group))
        if set(self.scores) != set(ALL_METRICS):
            raise ConfigException(f"Строка результата должна содержать {list(ALL_METRICS)}")


@dataclass(frozen=True)
class ResultTable:
    rows: Tuple[ResultRow, ...]
    drop_rates: Dict[str, Optional[float]] = field(default_factory=dict)

    @staticmethod
    def key(paradigm: str, variant: str, group: StyleGroup = StyleGroup.UNSEEN) -> str:
        suffix = "" if StyleGroup(group) is StyleGroup.UNSEEN else f"/{StyleGroup(group).value}"
        return f"{paradigm}/{variant}{suffix}"

    def row(self, paradigm: str, variant: str, group: StyleGroup) -> Optional[ResultRow]:
        for row in self.rows:
            if (row.paradigm, row.variant, row.group) == (paradigm, variant, StyleGroup(group)):
                return row
        return None

    def pairs(self) -> List[Tuple[str, str]]:
        seen: Dict[Tuple[str, str], None] = {}
        for row in self.rows:
            seen.setdefault((row.paradigm, row.variant), None)
        return list(seen)

    def drop_rate(
        self, paradigm: str, variant: str, group: StyleGroup = StyleGroup.UNSEEN
    ) -> float:
        value = self.drop_rates.get(ResultTable.key(paradigm, variant, group))
        return math.nan if value is None else value
