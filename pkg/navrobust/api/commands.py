"""
Контроллеры команд: загрузка конфигурации, вызов сервисов эксперимента
"""
import argparse
import logging
from typing import Any, Callable, Dict

from navrobust.apps.harness.models import ExperimentConfig
from navrobust.apps.harness.serializers import ExperimentConfigSerializer
from navrobust.services.experiment_service import ExperimentService
from navrobust.services.report_service import ReportService

logger = logging.getLogger(__name__)


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    """Файл конфигурации (или значения по умолчанию) с флагами поверх"""
    if args.config:
        config = ExperimentConfigSerializer.read(args.config)
    else:
        config = ExperimentConfig()
    changes: Dict[str, Any] = {
        "seed": args.seed,
        "output_dir": args.out,
        "parallel": args.parallel,
        "reactive": True if args.reactive else None,
        "paradigms": [args.paradigm] if args.paradigm else None,
        "variants": [args.variant] if args.variant else None,
    }
    return ExperimentConfigSerializer.with_overrides(config, changes)


def gen(args: argparse.Namespace) -> None:
    """Генерация набора train / support / eval и манифеста"""
    config = load_config(args)
    ExperimentConfigSerializer.write(config, ExperimentService.output(config) / "config.json")
    ExperimentService.cmd_gen(config)


def train(args: argparse.Namespace) -> None:
    """Обучение матрицы (парадигма, вариант)"""
    config = load_config(args)
    for name, path in ExperimentService.cmd_train(config).items():
        logger.info(f"{name}: {path}")


def evaluate(args: argparse.Namespace) -> None:
    """Оценка контрольных точек по группам стилей"""
    config = load_config(args)
    table = ExperimentService.cmd_eval(config)
    for key, value in sorted(table.drop_rates.items()):
        shown = "н/д" if value is None else f"{100.0 * value:.1f}%"
        logger.info(f"Падение EPDMS {key}: {shown}")


def ablate(args: argparse.Namespace) -> None:
    """Абляции стратегии обучения и конфигурации адаптера"""
    config = load_config(args)
    ExperimentService.cmd_ablate(config)


def report(args: argparse.Namespace) -> None:
    """CSV, JSON, SVG и диагностика признаков"""
    config = load_config(args)
    ReportService.cmd_report(config)


COMMANDS: Dict[str, Callable[[argparse.Namespace], None]] = {
    "gen": gen,
    "train": train,
    "eval": evaluate,
    "ablate": ablate,
    "report": report,
}
