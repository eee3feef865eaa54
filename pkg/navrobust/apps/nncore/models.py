"""
Тензоры с записью графа вычислений и наборы параметров
"""
import hashlib
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from navrobust.apps.geom.models import FloatArray
from navrobust.core.exceptions import DimMismatch, ValidationException


def _noop() -> None:
    return None


class Tensor:
    """
    Узел графа: значение, градиент и обратный проход.
    Записанные значения не изменяются на месте.
    """

    __slots__ = ("data", "grad", "_prev", "_backward", "op")

    def __init__(
        self,
        data: object,
        parents: Sequence["Tensor"] = (),
        op: str = "",
    ):
        self.data: FloatArray = np.asarray(data, dtype=np.float64)
        self.grad: FloatArray = np.zeros_like(self.data)
        self._prev: Tuple["Tensor", ...] = tuple(parents)
        self._backward: Callable[[], None] = _noop
        self.op = op

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def parents(self) -> Tuple["Tensor", ...]:
        return self._prev

    def item(self) -> float:
        if self.data.size != 1:
            raise DimMismatch(f"item() для тензора формы {self.shape}")
        return float(self.data.reshape(-1)[0])

    def topological_order(self) -> List["Tensor"]:
        """Узлы графа от листьев к этому узлу"""
        order: List[Tensor] = []
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._prev:
                if id(parent) not in visited:
                    stack.append((parent, False))
        return order

    def backward(self) -> None:
        """Градиенты скалярной функции по всем узлам графа"""
        if self.data.size != 1:
            raise DimMismatch("backward() вызывается только для скалярного значения")
        order = self.topological_order()
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            node._backward()

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op='{self.op}')"


def _uniform_fan_in(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> FloatArray:
    bound = 1.0 / math.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class ParamSet:
    """
    Именованные параметры с градиентами. Инициализация равномерная по fan-in,
    параметры выделяются из одного генератора в порядке добавления.
    """

    seed: int = 0
    params: Dict[str, Tensor] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self._rng = np.random.default_rng(self.seed)

    def add(
        self,
        name: str,
        shape: Tuple[int, ...],
        fan_in: Optional[int] = None,
        init: str = "uniform",
        value: Optional[FloatArray] = None,
    ) -> Tensor:
        if name in self.params:
            raise ValidationException(f"Параметр '{name}' уже существует")
        if value is not None:
            data = np.array(value, dtype=np.float64).reshape(shape)
        elif init == "zeros":
            data = np.zeros(shape)
        elif init == "ones":
            data = np.ones(shape)
        elif init == "conv_identity":
            # ядро (3, 3, c_in, c_out): единичный центр плюс малый шум
            data = 0.1 * _uniform_fan_in(self._rng, shape, int(np.prod(shape[:-1])))
            data[1, 1] += np.eye(shape[2], shape[3])
        else:
            data = _uniform_fan_in(self._rng, shape, fan_in if fan_in else shape[0])
        tensor = Tensor(data, op="param")
        self.params[name] = tensor
        return tensor

    def add_linear(self, prefix: str, in_dim: int, out_dim: int, init: str = "uniform") -> None:
        self.add(f"{prefix}.weight", (in_dim, out_dim), fan_in=in_dim, init=init)
        self.add(f"{prefix}.bias", (out_dim,), fan_in=in_dim, init=init)

    def add_mlp(self, prefix: str, dims: Sequence[int], zero_last: bool = False) -> None:
        """Полносвязные слои dims[0] -> ... -> dims[-1]"""
        last = len(dims) - 2
        for i, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:])):
            init = "zeros" if zero_last and i == last else "uniform"
            self.add_linear(f"{prefix}.{i}", d_in, d_out, init)

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self.params[name]
        except KeyError:
            raise ValidationException(f"Параметр '{name}' не найден") from None

    def __contains__(self, name: object) -> bool:
        return name in self.params

    def __iter__(self) -> Iterator[str]:
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def names(self, prefix: str = "") -> List[str]:
        return [name for name in self.params if name.startswith(prefix)]

    def count(self, prefix: str = "") -> int:
        return sum(
            int(np.prod(p.shape)) for name, p in self.params.items() if name.startswith(prefix)
        )

    def zero_grad(self) -> None:
        for tensor in self.params.values():
            tensor.grad = np.zeros_like(tensor.data)

    def grads(self) -> Dict[str, FloatArray]:
        return {name: tensor.grad for name, tensor in self.params.items()}

    def values(self) -> Dict[str, FloatArray]:
        return {name: tensor.data for name, tensor in self.params.items()}

    def checksum(self, prefix: str = "") -> str:
        digest = hashlib.sha256()
        for name in sorted(self.names(prefix)):
            digest.update(name.encode("utf-8"))
            digest.update(np.ascontiguousarray(self.params[name].data).tobytes())
        return digest.hexdigest()

    def copy(self) -> "ParamSet":
        clone = ParamSet(seed=self.seed)
        for name, tensor in self.params.items():
            clone.params[name] = Tensor(tensor.data.copy(), op="param")
        return clone

    def zero_(self, prefix: str) -> None:
        """Обнуление параметров с префиксом"""
        for name in self.names(prefix):
            self.params[name].data = np.zeros_like(self.params[name].data)


@dataclass
class OptimizerState:
    """Моменты AdamW и счетчик шагов"""

    step: int = 0
    first_moment: Dict[str, FloatArray] = field(default_factory=dict)
    second_moment: Dict[str, FloatArray] = field(default_factory=dict)
