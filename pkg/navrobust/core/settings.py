import os
from pathlib import Path

from decouple import config

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent.parent

DEBUG = config("NAVROBUST_DEBUG", default=False, cast=bool)

LOG_LEVEL = config("NAVROBUST_LOG_LEVEL", default="INFO")
LOG_DIR = Path(config("NAVROBUST_LOG_DIR", default=str(BASE_DIR / "logs")))

# Каталог результатов по умолчанию (перекрывается --out и output_dir в конфиге)
OUTPUT_DIR = Path(config("NAVROBUST_OUTPUT_DIR", default=str(BASE_DIR / "runs")))

# Число процессов для оценки сценариев (перекрывается --parallel)
PARALLEL = config("NAVROBUST_PARALLEL", default=1, cast=int)

# Версии файловых форматов
SCENARIO_SCHEMA_VERSION = 1
CONFIG_VERSION = 1
CHECKPOINT_FORMAT_VERSION = 1
VOCABULARY_FORMAT_VERSION = 1
MANIFEST_VERSION = 1

# Logging
LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "verbose": {
            "format": "{levelname} {asctime} {module} {message}",
            "style": "{",
        },
    },
    "handlers": {
        "file": {
            "level": "INFO",
            "class": "logging.FileHandler",
            "filename": str(LOG_DIR / "navrobust.log"),
            "formatter": "verbose",
        },
        "console": {
            "level": "DEBUG",
            "class": "logging.StreamHandler",
            "formatter": "verbose",
        },
    },
    "root": {
        "handlers": ["console", "file"],
        "level": LOG_LEVEL,
    },
}


def configure_logging() -> None:
    """Применение LOGGING; каталог логов создается при первом вызове"""
    import logging.config

    os.makedirs(LOG_DIR, exist_ok=True)
    logging.config.dictConfig(LOGGING)
