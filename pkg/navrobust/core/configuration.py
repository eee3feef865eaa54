"""
Схемы конфигурационных dataclass на pydantic: проверка JSON и обратная сериализация.

Конфигурационные dataclass объявляют ``__pydantic_config__ = STRICT_SCHEMA``:
неизвестные ключи отклоняются, строки и числа не приводятся друг к другу.
Проверка идет в JSON-режиме, где массивы становятся кортежами, а значения
перечислений - их членами.
"""
import json
from functools import lru_cache
from typing import Any, Dict, Mapping, Type, TypeVar

from pydantic import ConfigDict, TypeAdapter, ValidationError

from navrobust.core.exceptions import ConfigException, NavRobustException

T = TypeVar("T")

STRICT_SCHEMA = ConfigDict(extra="forbid", strict=True, ser_json_inf_nan="constants")


@lru_cache(maxsize=None)
def schema(cls: Type[Any]) -> "TypeAdapter[Any]":
    return TypeAdapter(cls)


def describe(error: ValidationError, path: str) -> str:
    """Первые ошибки pydantic в виде 'config.dataset.seed: сообщение'"""
    parts = []
    for item in error.errors()[:3]:
        location = ".".join(str(part) for part in (path, *item["loc"]))
        parts.append(f"{location}: {item['msg']}")
    more = error.error_count() - len(parts)
    return "; ".join(parts) + (f" (и еще {more})" if more > 0 else "")


def to_plain(value: Any) -> Any:
    """dataclass -> JSON-совместимый словарь: перечисления значениями, кортежи списками"""
    return schema(type(value)).dump_python(value, mode="json")


def validate_json(cls: Type[T], text: str, path: str = "config") -> T:
    """
    Построение dataclass из JSON-текста. Отсутствующие поля получают значения
    по умолчанию; ошибки схемы и проверок __post_init__ становятся ConfigException.
    """
    try:
        return schema(cls).validate_json(text)
    except ValidationError as error:
        raise ConfigException(describe(error, path)) from error
    except ConfigException:
        raise
    except NavRobustException as error:
        raise ConfigException(f"{path}: {error.detail}") from error


def from_plain(cls: Type[T], data: Mapping[str, Any], path: str = "config") -> T:
    if not isinstance(data, Mapping):
        raise ConfigException(f"{path}: ожидался объект")
    return validate_json(cls, json.dumps(dict(data)), path)


def override(instance: T, changes: Mapping[str, Any], path: str = "config") -> T:
    """Копия dataclass с частично замененными полями, вложенные секции сливаются"""
    merged = to_plain(instance)
    _merge(merged, changes)
    return from_plain(type(instance), merged, path)


def _merge(base: Dict[str, Any], changes: Mapping[str, Any]) -> None:
    for key, value in changes.items():
        if isinstance(value, Mapping) and isinstance(base.get(key), dict):
            _merge(base[key], value)
        else:
            base[key] = value
