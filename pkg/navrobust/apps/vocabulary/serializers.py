"""
JSON-файл словаря: кандидаты и метаданные
"""
import json
from pathlib import Path
from typing import Any, Dict, Union

from navrobust.apps.scenario.serializers import TrajectorySerializer
from navrobust.apps.vocabulary.models import TrajectoryVocabulary
from navrobust.core.exceptions import ScenarioIOError, SchemaVersionMismatch, ValidationException
from navrobust.core.settings import VOCABULARY_FORMAT_VERSION

PathLike = Union[str, Path]


class VocabularySerializer:
    @staticmethod
    def to_representation(vocab: TrajectoryVocabulary) -> Dict[str, Any]:
        return {
            "format_version": VOCABULARY_FORMAT_VERSION,
            "size": vocab.size,
            "source_hash": vocab.source_hash,
            "vocab_hash": vocab.vocab_hash(),
            "objective_history": list(vocab.objective_history),
            "candidates": [TrajectorySerializer.to_representation(c) for c in vocab.candidates],
        }

    @staticmethod
    def to_internal_value(data: Dict[str, Any]) -> TrajectoryVocabulary:
        if data.get("format_version") != VOCABULARY_FORMAT_VERSION:
            raise SchemaVersionMismatch(
                f"Версия словаря {data.get('format_version')!r}, "
                f"поддерживается {VOCABULARY_FORMAT_VERSION}"
            )
        try:
            return TrajectoryVocabulary(
                candidates=tuple(
                    TrajectorySerializer.to_internal_value(item) for item in data["candidates"]
                ),
                source_hash=str(data.get("source_hash", "")),
                objective_history=tuple(float(v) for v in data.get("objective_history", [])),
            )
        except (KeyError, TypeError, ValueError) as error:
            raise ValidationException(f"Некорректный файл словаря: {error!r}") from error

    @staticmethod
    def write(vocab: TrajectoryVocabulary, path: PathLike) -> None:
        text = json.dumps(VocabularySerializer.to_representation(vocab), sort_keys=True)
        try:
            Path(path).parent.mkdir(parents=True, exist_ok=True)
            Path(path).write_text(text, encoding="utf-8")
        except OSError as error:
            raise ScenarioIOError(f"Не удалось записать {path}: {error}") from error

    @staticmethod
    def read(path: PathLike) -> TrajectoryVocabulary:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as error:
            raise ScenarioIOError(f"Не удалось прочитать {path}: {error}") from error
        except json.JSONDecodeError as error:
            raise ValidationException(f"{path}: некорректный JSON ({error})") from error
        return VocabularySerializer.to_internal_value(data)
