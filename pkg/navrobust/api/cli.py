"""
Командная строка: разбор аргументов и диспетчеризация команд
"""
import argparse
import sys
from typing import List, Optional

from navrobust.api.commands import COMMANDS
from navrobust.apps.planners.models import Paradigm, Variant
from navrobust.core.middleware import ErrorHandlingMiddleware
from navrobust.core.settings import configure_logging


def build_arg_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="navrobust",
        description="Оценка планов движения и устойчивости к смене внешнего вида сцены",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name, handler in COMMANDS.items():
        sub = subparsers.add_parser(name, help=(handler.__doc__ or "").strip())
        sub.add_argument("--config", default=None, help="JSON-файл конфигурации эксперимента")
        sub.add_argument("--seed", type=int, default=None, help="Главное зерно")
        sub.add_argument("--out", default=None, help="Каталог результатов")
        sub.add_argument("--parallel", type=int, default=None, help="Число процессов")
        sub.add_argument(
            "--reactive", action="store_true", help="Реактивные агенты (IDM) при прогоне"
        )
        sub.add_argument(
            "--paradigm",
            choices=[p.value for p in Paradigm],
            default=None,
            help="Ограничить одной парадигмой",
        )
        sub.add_argument(
            "--variant",
            choices=[v.value for v in Variant],
            default=None,
            help="Ограничить одним вариантом",
        )
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_arg_parser().parse_args(argv)
    configure_logging()
    return ErrorHandlingMiddleware(COMMANDS[args.command])(args)


if __name__ == "__main__":
    sys.exit(main())
