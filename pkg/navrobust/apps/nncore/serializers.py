"""
JSON-формат контрольных точек: имя -> форма -> значения
"""
import json
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np

from navrobust.apps.nncore.models import ParamSet, Tensor
from navrobust.core.exceptions import CheckpointIOError, SchemaVersionMismatch, ValidationException
from navrobust.core.settings import CHECKPOINT_FORMAT_VERSION

PathLike = Union[str, Path]


class ParamSetSerializer:
    """Значения float64 записываются через repr, чтение восстанавливает их точно"""

    @staticmethod
    def to_representation(
        params: ParamSet, metadata: Optional[Dict[str, Any]] = None
    ) -> Dict[str, Any]:
        return {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "seed": params.seed,
            "metadata": metadata or {},
            "params": [
                {
                    "name": name,
                    "shape": list(tensor.shape),
                    "values": tensor.data.reshape(-1).tolist(),
                }
                for name, tensor in params.params.items()
            ],
        }

    @staticmethod
    def to_internal_value(data: Dict[str, Any]) -> ParamSet:
        if data.get("format_version") != CHECKPOINT_FORMAT_VERSION:
            raise SchemaVersionMismatch(
                f"Версия контрольной точки {data.get('format_version')!r}, "
                f"поддерживается {CHECKPOINT_FORMAT_VERSION}"
            )
        try:
            params = ParamSet(seed=int(data["seed"]))
            for item in data["params"]:
                shape = tuple(int(d) for d in item["shape"])
                values = np.array(item["values"], dtype=np.float64)
                if values.size != int(np.prod(shape)):
                    raise ValidationException(
                        f"Параметр '{item['name']}': {values.size} значений для формы {shape}"
                    )
                params.params[str(item["name"])] = Tensor(values.reshape(shape), op="param")
        except (KeyError, TypeError, ValueError) as error:
            raise ValidationException(f"Некорректная контрольная точка: {error!r}") from error
        return params

    @staticmethod
    def write(params: ParamSet, path: PathLike, metadata: Optional[Dict[str, Any]] = None) -> None:
        text = json.dumps(ParamSetSerializer.to_representation(params, metadata), sort_keys=True)
        try:
            Path(path).parent.mkdir(parents=True, exist_ok=True)
            Path(path).write_text(text, encoding="utf-8")
        except OSError as error:
            raise CheckpointIOError(f"Не удалось записать {path}: {error}") from error

    @staticmethod
    def read_raw(path: PathLike) -> Dict[str, Any]:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as error:
            raise CheckpointIOError(f"Не удалось прочитать {path}: {error}") from error
        try:
            data = json.loads(text)
        except json.JSONDecodeError as error:
            raise ValidationException(f"{path}: некорректный JSON ({error})") from error
        if not isinstance(data, dict):
            raise ValidationException(f"{path}: ожидался JSON-объект")
        return data

    @staticmethod
    def read(path: PathLike) -> ParamSet:
        return ParamSetSerializer.to_internal_value(ParamSetSerializer.read_raw(path))
