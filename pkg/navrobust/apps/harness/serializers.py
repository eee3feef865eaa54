"""
JSON-форматы эксперимента: конфигурация, манифест набора, таблица результатов
"""
import json
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, ValidationError

from navrobust.apps.harness.models import (
    DatasetManifest,
    ExperimentConfig,
    ManifestEntry,
    ResultRow,
    ResultTable,
)
from navrobust.core.configuration import STRICT_SCHEMA, describe, from_plain, override, to_plain
from navrobust.core.exceptions import (
    ConfigException,
    MissingDataset,
    SchemaVersionMismatch,
    ValidationException,
)
from navrobust.core.settings import MANIFEST_VERSION

PathLike = Union[str, Path]

# Таблица результатов допускает дополнительные поля верхнего уровня (reactive и т.п.)
RESULTS_SCHEMA = ConfigDict(extra="ignore", strict=True, ser_json_inf_nan="constants")


def _write_json(data: Any, path: PathLike) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(data, sort_keys=True, indent=2), encoding="utf-8")


class ManifestSplitSchema(BaseModel):
    model_config = STRICT_SCHEMA

    support_seeds: Tuple[int, ...]
    evaluation_seeds: Tuple[int, ...]
    seen_styles: Tuple[str, ...]
    unseen_styles: Tuple[str, ...]


class ManifestSchema(BaseModel):
    """Файл manifest.json"""

    model_config = STRICT_SCHEMA

    manifest_version: int
    split: ManifestSplitSchema
    entries: Tuple[ManifestEntry, ...]
    dataset_hash: str
    failed_seeds: Tuple[int, ...] = ()


class ResultTableSchema(BaseModel):
    """Файл results.json"""

    model_config = RESULTS_SCHEMA

    rows: Tuple[ResultRow, ...]
    drop_rates: Dict[str, Optional[float]] = {}


class ExperimentConfigSerializer:
    @staticmethod
    def to_representation(config: ExperimentConfig) -> Dict[str, Any]:
        return to_plain(config)

    @staticmethod
    def to_internal_value(data: Mapping[str, Any]) -> ExperimentConfig:
        if not isinstance(data, Mapping):
            raise ConfigException("Конфигурация должна быть JSON-объектом")
        if "config_version" not in data:
            raise ConfigException("В конфигурации нет поля config_version")
        return from_plain(ExperimentConfig, data)

    @staticmethod
    def read(path: PathLike) -> ExperimentConfig:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as error:
            raise ConfigException(f"Не удалось прочитать конфигурацию {path}: {error}") from error
        try:
            data = json.loads(text)
        except json.JSONDecodeError as error:
            raise ConfigException(f"{path}: некорректный JSON ({error})") from error
        return ExperimentConfigSerializer.to_internal_value(data)

    @staticmethod
    def write(config: ExperimentConfig, path: PathLike) -> None:
        _write_json(ExperimentConfigSerializer.to_representation(config), path)

    @staticmethod
    def with_overrides(config: ExperimentConfig, changes: Mapping[str, Any]) -> ExperimentConfig:
        """Значения флагов командной строки поверх файла"""
        return override(config, {k: v for k, v in changes.items() if v is not None})


class ManifestSerializer:
    @staticmethod
    def to_representation(manifest: DatasetManifest) -> Dict[str, Any]:
        return {
            "manifest_version": MANIFEST_VERSION,
            "split": {
                "support_seeds": list(manifest.support_seeds),
                "evaluation_seeds": list(manifest.evaluation_seeds),
                "seen_styles": list(manifest.seen_styles),
                "unseen_styles": list(manifest.unseen_styles),
            },
            "entries": [to_plain(entry) for entry in manifest.entries],
            "dataset_hash": manifest.dataset_hash,
            "failed_seeds": list(manifest.failed_seeds),
        }

    @staticmethod
    def to_internal_value(data: Mapping[str, Any]) -> DatasetManifest:
        version = data.get("manifest_version") if isinstance(data, Mapping) else None
        if version != MANIFEST_VERSION:
            raise SchemaVersionMismatch(
                f"Версия манифеста {version!r}, поддерживается {MANIFEST_VERSION}"
            )
        try:
            parsed = ManifestSchema.model_validate_json(json.dumps(dict(data)))
        except ValidationError as error:
            raise ValidationException(
                f"Некорректный манифест: {describe(error, 'manifest')}"
            ) from error
        return DatasetManifest(
            entries=parsed.entries,
            support_seeds=parsed.split.support_seeds,
            evaluation_seeds=parsed.split.evaluation_seeds,
            seen_styles=parsed.split.seen_styles,
            unseen_styles=parsed.split.unseen_styles,
            dataset_hash=parsed.dataset_hash,
            failed_seeds=parsed.failed_seeds,
        )

    @staticmethod
    def write(manifest: DatasetManifest, path: PathLike) -> None:
        _write_json(ManifestSerializer.to_representation(manifest), path)

    @staticmethod
    def read(path: PathLike) -> DatasetManifest:
        if not Path(path).exists():
            raise MissingDataset(f"Манифест {path} не найден, сначала выполните gen")
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as error:
            raise ValidationException(f"Не удалось прочитать манифест {path}: {error}") from error
        return ManifestSerializer.to_internal_value(data)


class ResultTableSerializer:
    @staticmethod
    def to_representation(
        table: ResultTable, extra: Optional[Dict[str, Any]] = None
    ) -> Dict[str, Any]:
        data = {
            "rows": [to_plain(row) for row in table.rows],
            "drop_rates": dict(table.drop_rates),
        }
        data.update(extra or {})
        return data

    @staticmethod
    def to_internal_value(data: Mapping[str, Any]) -> ResultTable:
        try:
            parsed = ResultTableSchema.model_validate_json(json.dumps(dict(data)))
        except ValidationError as error:
            raise ValidationException(
                f"Некорректная таблица результатов: {describe(error, 'results')}"
            ) from error
        except (TypeError, ConfigException) as error:
            raise ValidationException(f"Некорректная таблица результатов: {error}") from error
        return ResultTable(rows=parsed.rows, drop_rates=dict(parsed.drop_rates))

    @staticmethod
    def write(table: ResultTable, path: PathLike, extra: Optional[Dict[str, Any]] = None) -> None:
        _write_json(ResultTableSerializer.to_representation(table, extra), path)

    @staticmethod
    def read(path: PathLike) -> ResultTable:
        if not Path(path).exists():
            raise MissingDataset(f"Результаты {path} не найдены, сначала выполните eval")
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as error:
            raise ValidationException(f"Не удалось прочитать {path}: {error}") from error
        return ResultTableSerializer.to_internal_value(data)
