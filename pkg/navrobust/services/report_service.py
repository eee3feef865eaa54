"""
Сервисный слой отчета: таблицы CSV/JSON, графики SVG, диагностика признаков
"""
import logging
import math
import shutil
from pathlib import Path
from typing import Any, Dict, List, Optional

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

from navrobust.apps.harness.models import (  # noqa: E402
    EVAL_SPLIT,
    ExperimentConfig,
    ResultTable,
    StyleGroup,
)
from navrobust.apps.harness.serializers import ResultTableSerializer  # noqa: E402
from navrobust.apps.metrics.models import ALL_METRICS  # noqa: E402
from navrobust.apps.nncore.models import ParamSet  # noqa: E402
from navrobust.apps.perception.models import ExtractorKind  # noqa: E402
from navrobust.apps.scenario.models import Scenario, StyleId  # noqa: E402
from navrobust.services.experiment_service import (  # noqa: E402
    PER_SCENARIO_FILE,
    ExperimentService,
)
from navrobust.services.perception_service import PerceptionService  # noqa: E402

logger = logging.getLogger(__name__)

SVG_HASH_SALT = "navrobust"
DIAGNOSTIC_KINDS = (ExtractorKind.CONSTANT_EYE, ExtractorKind.BRITTLE)
DISPERSION_SCENES = 3

REPORT_NOTES = (
    "EC: каждая сцена оценивается одним планом без предыдущего плана, "
    "поэтому согласованность соседних планов в таблицах стенда всегда равна 1.0 "
    "и не влияет на различия между вариантами.",
)


def percent(value: Optional[float]) -> str:
    """Доля в процентах с одним знаком после запятой; пустая строка для отсутствующего"""
    if value is None or math.isnan(value):
        return ""
    return f"{100.0 * value:.1f}"


class ReportService:
    @staticmethod
    def report_dir(config: ExperimentConfig) -> Path:
        return ExperimentService.output(config) / "report"

    @staticmethod
    def table_frame(table: ResultTable) -> pd.DataFrame:
        """Строка на (парадигма, вариант, группа); проценты с одним знаком"""
        records: List[Dict[str, Any]] = []
        for row in table.rows:
            record: Dict[str, Any] = {
                "paradigm": row.paradigm,
                "variant": row.variant,
                "group": row.group.value,
                "count": row.count,
            }
            for name in ALL_METRICS:
                record[name] = percent(row.scores[name])
            record["epdms"] = percent(row.epdms)
            drop: Optional[float] = None
            if row.group is not StyleGroup.ORIGIN:
                drop = table.drop_rates.get(ResultTable.key(row.paradigm, row.variant, row.group))
            record["drop_rate"] = percent(drop)
            records.append(record)
        columns = ["paradigm", "variant", "group", "count"] + list(ALL_METRICS)
        return pd.DataFrame.from_records(records, columns=columns + ["epdms", "drop_rate"])

    @staticmethod
    def style_frame(per_scenario: pd.DataFrame) -> pd.DataFrame:
        """Средний EPDMS по стилям: строки - пары (парадигма, вариант), столбцы - стили"""
        per_scenario = per_scenario.assign(
            planner=per_scenario["paradigm"] + "/" + per_scenario["variant"]
        )
        frame = per_scenario.pivot_table(
            index="planner", columns="style", values="epdms", aggfunc="mean", sort=False
        )
        styles = list(dict.fromkeys(per_scenario["style"]))
        return frame[styles]

    # Графики

    @staticmethod
    def _save(fig: Any, path: Path) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)

    @staticmethod
    def plot_style_epdms(frame: pd.DataFrame, path: Path) -> None:
        fig, ax = plt.subplots(figsize=(9.0, 4.8))
        positions = range(len(frame.columns))
        for planner, values in frame.iterrows():
            ax.plot(positions, 100.0 * values.to_numpy(), marker="o", label=str(planner))
        ax.set_xticks(list(positions))
        ax.set_xticklabels(list(frame.columns), rotation=30, ha="right")
        ax.set_ylabel("EPDMS, %")
        ax.set_title("EPDMS по стилям")
        ax.grid(True, alpha=0.3)
        ax.legend(fontsize="small", ncol=2)
        ReportService._save(fig, path)

    @staticmethod
    def plot_drop_rates(table: ResultTable, path: Path) -> None:
        labels, values = [], []
        for paradigm, variant in table.pairs():
            value = table.drop_rate(paradigm, variant)
            if not math.isnan(value):
                labels.append(f"{paradigm}/{variant}")
                values.append(100.0 * value)
        fig, ax = plt.subplots(figsize=(9.0, 4.8))
        ax.bar(range(len(values)), values, color="#4c72b0")
        ax.set_xticks(list(range(len(labels))))
        ax.set_xticklabels(labels, rotation=30, ha="right")
        ax.axhline(0.0, color="black", linewidth=0.8)
        ax.set_ylabel("Падение EPDMS, %")
        ax.set_title("Доля падения на невиданных стилях")
        ReportService._save(fig, path)

    # Диагностика признаков

    @staticmethod
    def diagnostic_scenes(config: ExperimentConfig) -> List[Scenario]:
        manifest = ExperimentService.load_manifest(config)
        origin = config.registry.origin.name
        entries = [e for e in manifest.split(EVAL_SPLIT) if e.style == origin]
        return ExperimentService.load_entries(config, entries[:DISPERSION_SCENES])

    @staticmethod
    def feature_dispersion(
        config: ExperimentConfig, scenes: List[Scenario], styles: List[StyleId]
    ) -> pd.DataFrame:
        """Межстилевая дисперсия токенов на случайно инициализированном адаптере"""
        params = ParamSet(seed=config.seed)
        PerceptionService.init_adapter(params, config.adapter)
        records = []
        for scenario in scenes:
            for kind in DIAGNOSTIC_KINDS:
                ratio = PerceptionService.token_dispersion(
                    scenario, styles, kind, params, config.perception, config.adapter
                )
                records.append(
                    {
                        "geometry_seed": scenario.geometry_seed.seed,
                        "extractor": kind.value,
                        "dispersion": ratio,
                    }
                )
        return pd.DataFrame.from_records(records)

    @staticmethod
    def feature_maps(
        config: ExperimentConfig, scenario: Scenario, styles: List[StyleId], root: Path
    ) -> List[Path]:
        paths = []
        for kind in DIAGNOSTIC_KINDS:
            for style in styles:
                styled = scenario.with_style(style)
                grid = PerceptionService.extract(styled, kind, config.perception)
                path = root / f"{kind.value}_{style.name}.png"
                PerceptionService.render_pca_png(PerceptionService.pca_maps(grid, 3), path)
                paths.append(path)
        return paths

    @staticmethod
    def cmd_report(config: ExperimentConfig) -> Dict[str, Path]:
        plt.rcParams["svg.hashsalt"] = SVG_HASH_SALT
        results = ExperimentService.results_path(config)
        table = ResultTableSerializer.read(results)
        root = ReportService.report_dir(config)
        root.mkdir(parents=True, exist_ok=True)
        files: Dict[str, Path] = {}

        files["csv"] = root / "results.csv"
        ReportService.table_frame(table).to_csv(files["csv"], index=False)
        files["json"] = root / "results.json"
        ResultTableSerializer.write(table, files["json"])
        files["notes"] = root / "NOTES.md"
        files["notes"].write_text(
            "".join(f"- {note}\n" for note in REPORT_NOTES), encoding="utf-8"
        )

        per_scenario = results.parent / PER_SCENARIO_FILE
        if per_scenario.exists():
            files["style_epdms"] = root / "epdms_by_style.svg"
            frame = pd.read_csv(per_scenario)
            ReportService.plot_style_epdms(ReportService.style_frame(frame), files["style_epdms"])
        files["drop_rates"] = root / "drop_rates.svg"
        ReportService.plot_drop_rates(table, files["drop_rates"])

        scenes = ReportService.diagnostic_scenes(config)
        if scenes:
            manifest = ExperimentService.load_manifest(config)
            registry = config.registry
            styles = [registry.origin] + [registry.by_name(s) for s in manifest.unseen_styles]
            dispersion = ReportService.feature_dispersion(config, scenes, styles)
            files["dispersion"] = root / "features" / "dispersion.csv"
            files["dispersion"].parent.mkdir(parents=True, exist_ok=True)
            dispersion.to_csv(files["dispersion"], index=False)
            ReportService.feature_maps(config, scenes[0], styles, root / "features")

        ablation = ExperimentService.ablation_path(config)
        if ablation.exists():
            files["ablation"] = root / "ablation.csv"
            shutil.copyfile(ablation.with_suffix(".csv"), files["ablation"])

        logger.info(f"Отчет записан в {root}: {len(files)} файлов")
        return files
