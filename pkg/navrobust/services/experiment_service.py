"""
Сервисный слой эксперимента: генерация набора, матрица обучения, оценка, абляции
"""
import hashlib
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple, TypeVar

import pandas as pd

from navrobust.apps.harness.models import (
    EVAL_SPLIT,
    FROZEN_STRATEGY,
    SPLITS,
    SUPPORT_SPLIT,
    TRAIN_SPLIT,
    DatasetManifest,
    ExperimentConfig,
    ManifestEntry,
    ResultRow,
    ResultTable,
    StyleGroup,
)
from navrobust.apps.harness.serializers import ManifestSerializer, ResultTableSerializer
from navrobust.apps.metrics.models import ALL_METRICS, MetricConfig
from navrobust.apps.perception.models import AdapterConfig
from navrobust.apps.planners.models import FeaturePipeline, Paradigm, Variant
from navrobust.apps.scenario.models import GeneratorConfig, GeometrySeed, Scenario, StyleId
from navrobust.core.exceptions import (
    GenerationFailed,
    MissingDataset,
    NumericException,
    ValidationException,
    ZeroOrigin,
)
from navrobust.services.metrics_service import MetricsService, PlanEvaluator
from navrobust.services.planner_factory import PlannerFactory
from navrobust.services.planner_service import Planner
from navrobust.services.scenario_service import ScenarioService

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

MANIFEST_FILE = "manifest.json"
RESULTS_FILE = "results.json"
PER_SCENARIO_FILE = "per_scenario.csv"
ABLATION_FILE = "ablation.json"
SCORE_COLUMNS = list(ALL_METRICS) + ["epdms"]


def ordered_map(function: Callable[[T], R], jobs: Sequence[T], parallel: int) -> List[R]:
    """Параллельное отображение с сохранением порядка заданий"""
    if parallel > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            return list(pool.map(function, jobs))
    return [function(job) for job in jobs]


def _generate_geometry(
    job: Tuple[int, StyleId, GeneratorConfig]
) -> Tuple[int, Optional[Scenario]]:
    seed, origin, params = job
    try:
        return seed, ScenarioService.generate_scenario(GeometrySeed(seed), origin, params)
    except GenerationFailed:
        return seed, None


def _evaluate_geometry(
    job: Tuple[Planner, List[Tuple[Scenario, StyleGroup]], MetricConfig, bool]
) -> List[Dict[str, Any]]:
    """Все стили одной геометрии: эксперт оценивается один раз"""
    planner, items, metric_config, reactive = job
    evaluator = PlanEvaluator(metric_config, reactive=reactive)
    rows = []
    for scenario, group in items:
        plan = planner.plan(scenario).trajectory
        # Предыдущего плана нет: EC = 1.0
        result = evaluator.evaluate(scenario, plan)
        row: Dict[str, Any] = {
            "group": StyleGroup(group).value,
            "style": scenario.style.name,
            "geometry_seed": scenario.geometry_seed.seed,
        }
        row.update(result.scores.as_dict())
        row["epdms"] = result.epdms
        rows.append(row)
    return rows


class ExperimentService:
    # Пути

    @staticmethod
    def output(config: ExperimentConfig) -> Path:
        return Path(config.output_dir)

    @staticmethod
    def manifest_path(config: ExperimentConfig) -> Path:
        return ExperimentService.output(config) / "dataset" / MANIFEST_FILE

    @staticmethod
    def checkpoint_path(config: ExperimentConfig, paradigm: Paradigm, variant: Variant) -> Path:
        name = f"{Paradigm(paradigm).value}_{Variant(variant).value}.json"
        return ExperimentService.output(config) / "checkpoints" / name

    @staticmethod
    def results_path(config: ExperimentConfig) -> Path:
        return ExperimentService.output(config) / "results" / RESULTS_FILE

    @staticmethod
    def ablation_path(config: ExperimentConfig) -> Path:
        return ExperimentService.output(config) / "ablation" / ABLATION_FILE

    # gen

    @staticmethod
    def cmd_gen(config: ExperimentConfig) -> DatasetManifest:
        """
        train: обучающие зерна в исходном стиле; support: опорные зерна в видимых стилях;
        eval: оценочные зерна в исходном и невиданных стилях (и видимых при eval_seen).
        """
        registry = config.registry
        split = ScenarioService.split_dataset(
            config.dataset.layout_seeds,
            registry,
            config.dataset.support_fraction,
            config.dataset.seen_count,
            config.seed,
        )
        eval_styles = [registry.origin] + list(split.unseen_styles)
        if config.dataset.eval_seen:
            eval_styles += list(split.seen_styles)
        plan = (
            [(TRAIN_SPLIT, seed, [registry.origin]) for seed in config.dataset.train_seeds]
            + [(SUPPORT_SPLIT, seed, list(split.seen_styles)) for seed in split.support_seeds]
            + [(EVAL_SPLIT, seed, eval_styles) for seed in split.evaluation_seeds]
        )
        jobs = [(seed, registry.origin, config.generator) for _, seed, _ in plan]
        generated = dict(ordered_map(_generate_geometry, jobs, config.parallel))

        root = ExperimentService.output(config) / "dataset"
        entries: List[ManifestEntry] = []
        failed: List[int] = []
        for split_name, seed, styles in plan:
            scenario = generated[seed]
            if scenario is None:
                failed.append(seed)
                continue
            for style in styles:
                relative = Path(split_name) / f"{seed:06d}_{style.name}.json"
                path = root / relative
                ScenarioService.write_scenario(scenario.with_style(style), path, registry)
                digest = hashlib.sha256(path.read_bytes()).hexdigest()
                entries.append(ManifestEntry(split_name, seed, style.name, str(relative), digest))

        manifest = DatasetManifest(
            entries=tuple(entries),
            support_seeds=tuple(s for s in split.support_seeds if s not in failed),
            evaluation_seeds=tuple(s for s in split.evaluation_seeds if s not in failed),
            seen_styles=tuple(s.name for s in split.seen_styles),
            unseen_styles=tuple(s.name for s in split.unseen_styles),
            dataset_hash=ExperimentService.dataset_hash(entries),
            failed_seeds=tuple(sorted(failed)),
        )
        ManifestSerializer.write(manifest, ExperimentService.manifest_path(config))
        counts = {name: len(manifest.split(name)) for name in SPLITS}
        logger.info(f"Набор сгенерирован: {counts}, неудачных зерен {len(failed)}")
        return manifest

    @staticmethod
    def dataset_hash(entries: Iterable[ManifestEntry]) -> str:
        digest = hashlib.sha256()
        for entry in sorted(entries, key=lambda e: e.path):
            digest.update(f"{entry.path}:{entry.sha256}\n".encode("utf-8"))
        return digest.hexdigest()

    @staticmethod
    def load_manifest(config: ExperimentConfig) -> DatasetManifest:
        return ManifestSerializer.read(ExperimentService.manifest_path(config))

    @staticmethod
    def load_entries(config: ExperimentConfig, entries: Sequence[ManifestEntry]) -> List[Scenario]:
        """Чтение сценариев с проверкой sha256 из манифеста"""
        root = ExperimentService.output(config) / "dataset"
        scenarios = []
        for entry in entries:
            path = root / entry.path
            if not path.exists():
                raise MissingDataset(f"Файл набора {path} не найден")
            if hashlib.sha256(path.read_bytes()).hexdigest() != entry.sha256:
                raise ValidationException(f"{path}: sha256 не совпадает с манифестом")
            scenarios.append(ScenarioService.read_scenario(path, config.registry))
        return scenarios

    # train

    @staticmethod
    def training_entries(manifest: DatasetManifest, variant: Variant) -> List[ManifestEntry]:
        """DR добавляет опорный набор в видимых стилях, остальные варианты - только train"""
        entries = manifest.split(TRAIN_SPLIT)
        if Variant(variant).uses_support:
            entries = entries + manifest.split(SUPPORT_SPLIT)
        if not entries:
            raise MissingDataset("Обучающая выборка пуста")
        return entries

    @staticmethod
    def pipeline(config: ExperimentConfig, variant: Variant) -> FeaturePipeline:
        return PlannerFactory.pipeline(variant, config.perception, config.adapter)

    @staticmethod
    def cmd_train(config: ExperimentConfig) -> Dict[str, Path]:
        manifest = ExperimentService.load_manifest(config)
        checkpoints: Dict[str, Path] = {}
        for variant in config.variants:
            entries = ExperimentService.training_entries(manifest, variant)
            scenarios = ExperimentService.load_entries(config, entries)
            for paradigm in config.paradigms:
                planner = PlannerFactory.train(
                    paradigm,
                    variant,
                    scenarios,
                    settings=config.planners,
                    pipeline=ExperimentService.pipeline(config, variant),
                    metric_config=config.metrics,
                    seed=config.seed,
                    parallel=config.parallel,
                    cache_dir=ExperimentService.output(config) / "cache",
                )
                path = ExperimentService.checkpoint_path(config, paradigm, variant)
                PlannerFactory.save(
                    planner,
                    path,
                    extra={
                        "dataset_hash": manifest.dataset_hash,
                        "training_entries": [entry.path for entry in entries],
                    },
                )
                checkpoints[f"{paradigm.value}/{variant.value}"] = path
        return checkpoints

    # eval

    @staticmethod
    def evaluation_items(
        config: ExperimentConfig, manifest: DatasetManifest
    ) -> List[List[Tuple[Scenario, StyleGroup]]]:
        """Оценочные сценарии, сгруппированные по зерну геометрии"""
        entries = manifest.split(EVAL_SPLIT)
        if not entries:
            raise MissingDataset("Оценочная выборка пуста")
        origin = config.registry.origin.name
        scenarios = ExperimentService.load_entries(config, entries)
        grouped: Dict[int, List[Tuple[Scenario, StyleGroup]]] = {}
        for entry, scenario in zip(entries, scenarios):
            group = manifest.group_of(entry.style, origin)
            if group is StyleGroup.SEEN and not config.dataset.eval_seen:
                continue
            grouped.setdefault(entry.geometry_seed, []).append((scenario, group))
        return [grouped[seed] for seed in sorted(grouped)]

    @staticmethod
    def evaluate_planner(
        planner: Planner,
        items: Sequence[List[Tuple[Scenario, StyleGroup]]],
        config: ExperimentConfig,
    ) -> pd.DataFrame:
        jobs = [(planner, chunk, config.metrics, config.reactive) for chunk in items]
        chunks = ordered_map(_evaluate_geometry, jobs, config.parallel)
        frame = pd.DataFrame([row for chunk in chunks for row in chunk])
        logger.info(f"Оценен {planner.name}: {len(frame)} сценариев")
        return frame

    @staticmethod
    def summarize(frame: pd.DataFrame) -> ResultTable:
        """Средние по группам стилей (сценарии объединяются) и доли падения EPDMS"""
        rows: List[ResultRow] = []
        means = frame.groupby(["paradigm", "variant", "group"], sort=False)[SCORE_COLUMNS]
        for (paradigm, variant, group), values in means:
            rows.append(
                ResultRow(
                    paradigm=paradigm,
                    variant=variant,
                    group=group,
                    scores={name: float(values[name].mean()) for name in ALL_METRICS},
                    epdms=float(values["epdms"].mean()),
                    count=int(len(values)),
                )
            )
        table = ResultTable(rows=tuple(rows))
        for paradigm, variant in table.pairs():
            origin = table.row(paradigm, variant, StyleGroup.ORIGIN)
            for group in (StyleGroup.UNSEEN, StyleGroup.SEEN):
                shifted = table.row(paradigm, variant, group)
                if origin is None or shifted is None:
                    continue
                key = ResultTable.key(paradigm, variant, group)
                try:
                    table.drop_rates[key] = MetricsService.drop_rate(origin.epdms, shifted.epdms)
                except ZeroOrigin:
                    logger.warning(f"{key}: EPDMS исходного стиля равен нулю")
                    table.drop_rates[key] = None
        return table

    @staticmethod
    def evaluation_planners(config: ExperimentConfig) -> List[Tuple[str, str, Planner]]:
        planners: List[Tuple[str, str, Planner]] = []
        for paradigm in config.paradigms:
            for variant in config.variants:
                path = ExperimentService.checkpoint_path(config, paradigm, variant)
                if not path.exists():
                    raise MissingDataset(f"Контрольная точка {path} не найдена, выполните train")
                planners.append((paradigm.value, variant.value, PlannerFactory.load(path)))
        for name in config.baselines:
            planners.append(("baseline", name, PlannerFactory.baseline(name)))
        return planners

    @staticmethod
    def cmd_eval(config: ExperimentConfig) -> ResultTable:
        manifest = ExperimentService.load_manifest(config)
        items = ExperimentService.evaluation_items(config, manifest)
        frames = []
        for paradigm, variant, planner in ExperimentService.evaluation_planners(config):
            frame = ExperimentService.evaluate_planner(planner, items, config)
            frame.insert(0, "variant", variant)
            frame.insert(0, "paradigm", paradigm)
            frames.append(frame)
        per_scenario = pd.concat(frames, ignore_index=True)
        table = ExperimentService.summarize(per_scenario)

        results = ExperimentService.results_path(config)
        results.parent.mkdir(parents=True, exist_ok=True)
        per_scenario.to_csv(results.parent / PER_SCENARIO_FILE, index=False)
        ResultTableSerializer.write(
            table,
            results,
            extra={"dataset_hash": manifest.dataset_hash, "reactive": config.reactive},
        )
        logger.info(f"Результаты записаны в {results}")
        return table

    # ablate

    @staticmethod
    def ablation_arms(config: ExperimentConfig) -> List[Tuple[str, str, Variant, FeaturePipeline]]:
        """
        Стратегии: frozen - замороженный инвариантный экстрактор, e2e - обучаемая копия
        смешивания со входом из искаженных каналов. Адаптеры - на замороженном экстракторе.
        """
        arms = []
        for strategy in config.ablation.strategies:
            variant = Variant.CONSTANT_EYE if strategy == FROZEN_STRATEGY else Variant.E2E
            arms.append(
                ("strategy", strategy, variant, ExperimentService.pipeline(config, variant))
            )
        for label in config.ablation.adapters:
            adapter = AdapterConfig.from_label(
                label, config.perception.feature_dim, config.adapter.out_dim
            )
            pipeline = PlannerFactory.pipeline(Variant.CONSTANT_EYE, config.perception, adapter)
            arms.append(("adapter", label, Variant.CONSTANT_EYE, pipeline))
        return arms

    @staticmethod
    def cmd_ablate(config: ExperimentConfig) -> pd.DataFrame:
        manifest = ExperimentService.load_manifest(config)
        train = ExperimentService.load_entries(config, manifest.split(TRAIN_SPLIT))
        items = ExperimentService.evaluation_items(config, manifest)
        paradigm = config.ablation.paradigm

        records = []
        for arm, name, variant, pipeline in ExperimentService.ablation_arms(config):
            planner = PlannerFactory.train(
                paradigm,
                variant,
                train,
                settings=config.planners,
                pipeline=pipeline,
                metric_config=config.metrics,
                seed=config.seed,
                parallel=config.parallel,
                cache_dir=ExperimentService.output(config) / "cache",
            )
            frame = ExperimentService.evaluate_planner(planner, items, config)
            origin = float(frame.loc[frame["group"] == StyleGroup.ORIGIN.value, "epdms"].mean())
            unseen = float(frame.loc[frame["group"] == StyleGroup.UNSEEN.value, "epdms"].mean())
            try:
                drop: Optional[float] = MetricsService.drop_rate(origin, unseen)
            except NumericException:
                drop = None
            records.append(
                {
                    "arm": arm,
                    "name": name,
                    "paradigm": paradigm.value,
                    "extractor": pipeline.kind.value,
                    "adapter": pipeline.adapter.label,
                    "origin_epdms": origin,
                    "unseen_epdms": unseen,
                    "drop_rate": drop,
                }
            )
            logger.info(f"Абляция {arm}={name}: EPDMS {origin:.4f} / {unseen:.4f}")

        table = pd.DataFrame.from_records(records)
        path = ExperimentService.ablation_path(config)
        path.parent.mkdir(parents=True, exist_ok=True)
        table.to_json(path, orient="records", indent=2, double_precision=15)
        table.to_csv(path.with_suffix(".csv"), index=False)
        return table

