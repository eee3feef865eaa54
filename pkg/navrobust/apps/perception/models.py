"""
Типы восприятия: сетки признаков, токены, конфигурации экстракторов и адаптера
"""
import enum
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from navrobust.apps.geom.models import FloatArray
from navrobust.apps.scenario.models import StyleId
from navrobust.core.configuration import STRICT_SCHEMA
from navrobust.core.exceptions import ConfigException, DimMismatch, ValidationException

# Каналы растеризации сцены
RAW_CHANNELS = (
    "drivable",
    "centerline_field",
    "lane_cos",
    "lane_sin",
    "vehicle_occupancy",
    "pedestrian_occupancy",
    "velocity_x",
    "velocity_y",
    "red_stop_line",
    "route",
    "goal_left",
    "goal_straight",
    "goal_right",
)


class ExtractorKind(str, enum.Enum):
    CONSTANT_EYE = "constant_eye"
    BRITTLE = "brittle"
    TRAINABLE = "trainable"


@dataclass(frozen=True)
class PerceptionConfig:
    """Сетка BEV в системе эго-ТС и параметры искажений стиля"""

    __pydantic_config__ = STRICT_SCHEMA

    grid_size: int = 16
    x_range: Tuple[float, float] = (-8.0, 56.0)
    y_range: Tuple[float, float] = (-32.0, 32.0)
    feature_dim: int = 32
    fine_factor: int = 10
    mixing_seed: int = 7
    corruption_seed: int = 11
    # Сдвиг канала 0 на style.id * tint_delta; гарантирует различие стилей
    tint_delta: float = 0.25
    gain_range: Tuple[float, float] = (0.3, 0.8)
    offset_scale: float = 0.5
    field_amplitude: float = 0.4
    velocity_scale: float = 10.0

    def __post_init__(self) -> None:
        if self.grid_size < 2 or self.grid_size % 2:
            raise ConfigException("grid_size должен быть четным и не меньше 2")
        if self.feature_dim < 2 or self.fine_factor < 1:
            raise ConfigException("feature_dim >= 2 и fine_factor >= 1")
        for low, high in (self.x_range, self.y_range):
            if not low < high:
                raise ConfigException("Границы сетки заданы неверно")
        if not 0 <= self.gain_range[0] <= self.gain_range[1] or self.tint_delta <= 0:
            raise ConfigException("Параметры искажений стиля должны быть положительными")

    @property
    def num_raw_channels(self) -> int:
        return len(RAW_CHANNELS)

    @property
    def cell_size(self) -> Tuple[float, float]:
        return (
            (self.x_range[1] - self.x_range[0]) / self.grid_size,
            (self.y_range[1] - self.y_range[0]) / self.grid_size,
        )

    def cell_centers(self, factor: int = 1) -> Tuple[FloatArray, FloatArray]:
        """Центры ячеек по x (строки) и y (столбцы) при разрешении factor"""
        n = self.grid_size * factor
        dx, dy = self.cell_size
        xs = self.x_range[0] + (np.arange(n) + 0.5) * dx / factor
        ys = self.y_range[0] + (np.arange(n) + 0.5) * dy / factor
        return xs, ys


@dataclass(frozen=True)
class AdapterConfig:
    """MLP C -> d глубины depth и пара сверток up/down"""

    __pydantic_config__ = STRICT_SCHEMA

    in_dim: int = 32
    out_dim: int = 16
    depth: int = 4
    use_cnn: bool = True

    def __post_init__(self) -> None:
        if self.depth < 1:
            raise ConfigException("Глубина адаптера должна быть положительной")
        # d = C допускается только для тождественной конфигурации
        if not 0 < self.out_dim <= self.in_dim:
            raise ConfigException(
                f"Размерность адаптера d={self.out_dim} должна быть <= C={self.in_dim}"
            )

    @property
    def label(self) -> str:
        return f"{self.depth}L+CNN" if self.use_cnn else f"{self.depth}L"

    @classmethod
    def from_label(cls, label: str, in_dim: int = 32, out_dim: int = 16) -> "AdapterConfig":
        """'4L+CNN' -> depth 4 со свертками, '2L' -> depth 2 без них"""
        head, _, tail = label.partition("+")
        if not head.endswith("L") or not head[:-1].isdigit() or tail not in ("", "CNN"):
            raise ConfigException(f"Неизвестная конфигурация адаптера '{label}'")
        return cls(in_dim=in_dim, out_dim=out_dim, depth=int(head[:-1]), use_cnn=tail == "CNN")


@dataclass(frozen=True, eq=False)
class FeatureGrid:
    grid: FloatArray
    extractor_id: str
    style: Optional[StyleId] = None

    def __post_init__(self) -> None:
        grid = np.asarray(self.grid, dtype=np.float64)
        if grid.ndim != 3:
            raise DimMismatch(f"Сетка признаков должна иметь форму (H, W, C): {grid.shape}")
        if not np.all(np.isfinite(grid)):
            raise ValidationException("Сетка признаков содержит нечисловые значения")
        object.__setattr__(self, "grid", grid)

    @property
    def shape(self) -> Tuple[int, int, int]:
        h, w, c = self.grid.shape
        return int(h), int(w), int(c)


@dataclass(frozen=True, eq=False)
class TokenSequence:
    """Токены (N, d), N = H * W в построчном порядке"""

    tokens: FloatArray
    grid_shape: Tuple[int, int]

    def __post_init__(self) -> None:
        tokens = np.asarray(self.tokens, dtype=np.float64)
        h, w = self.grid_shape
        if tokens.ndim != 2 or tokens.shape[0] != h * w:
            raise DimMismatch(f"Число токенов {tokens.shape} не равно {h}x{w}")
        object.__setattr__(self, "tokens", tokens)

    @property
    def num_tokens(self) -> int:
        return int(self.tokens.shape[0])

    @property
    def dim(self) -> int:
        return int(self.tokens.shape[1])


@dataclass(frozen=True, eq=False)
class StyleCorruption:
    """Искажение стиля: сдвиг канала 0, перестановка и усиления остальных, гладкое поле"""

    style_id: int
    tint: float
    permutation: Tuple[int, ...]
    gains: FloatArray
    offsets: FloatArray
    field_amplitude: float
    field_phase: Tuple[float, float]
    field_frequency: Tuple[float, float]

    @property
    def is_identity(self) -> bool:
        return self.style_id == 0

    def as_dict(self) -> dict:
        return {
            "id": self.style_id,
            "tint": self.tint,
            "permutation": list(self.permutation),
            "gains": self.gains.tolist(),
            "offsets": self.offsets.tolist(),
            "field_amplitude": self.field_amplitude,
            "field_phase": list(self.field_phase),
            "field_frequency": list(self.field_frequency),
        }
