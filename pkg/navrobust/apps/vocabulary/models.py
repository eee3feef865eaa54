"""
Словарь траекторий-кандидатов (якоря диффузии и плотный словарь скоринга)
"""
import hashlib
import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from navrobust.apps.geom.models import FloatArray, Trajectory
from navrobust.core.exceptions import ValidationException


@dataclass(frozen=True, eq=False)
class TrajectoryVocabulary:
    candidates: Tuple[Trajectory, ...]
    source_hash: str = ""
    objective_history: Tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if not self.candidates:
            raise ValidationException("Словарь траекторий не может быть пустым")
        first = self.candidates[0]
        for candidate in self.candidates[1:]:
            if candidate.num_poses != first.num_poses or not math.isclose(candidate.dt, first.dt):
                raise ValidationException("Кандидаты словаря должны иметь общие dt и горизонт")
        object.__setattr__(self, "candidates", tuple(self.candidates))
        object.__setattr__(self, "objective_history", tuple(self.objective_history))

    @property
    def size(self) -> int:
        return len(self.candidates)

    @property
    def dt(self) -> float:
        return self.candidates[0].dt

    @property
    def horizon(self) -> float:
        return self.candidates[0].duration

    @property
    def positions(self) -> FloatArray:
        """(K, T, 2)"""
        return np.stack([c.xy for c in self.candidates])

    def vocab_hash(self) -> str:
        digest = hashlib.sha256(repr(self.dt).encode("utf-8"))
        for candidate in self.candidates:
            digest.update(np.ascontiguousarray(candidate.poses).tobytes())
        return digest.hexdigest()

    def __len__(self) -> int:
        return self.size

    def __getitem__(self, index: int) -> Trajectory:
        return self.candidates[index]
