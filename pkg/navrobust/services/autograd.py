"""
Дифференцируемые операции с обратным проходом по записанному графу
"""
import logging
import math
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from navrobust.apps.geom.models import FloatArray
from navrobust.apps.nncore.models import ParamSet, Tensor
from navrobust.core.exceptions import DimMismatch, NonFiniteError

logger = logging.getLogger(__name__)

Operand = Union[Tensor, float, FloatArray]
Axis = Optional[Union[int, Tuple[int, ...]]]

LAYER_NORM_EPS = 1e-5
CONV_MODES = ("same", "up", "down")


def _unbroadcast(grad: FloatArray, shape: Tuple[int, ...]) -> FloatArray:
    """Сумма градиента по осям, размноженным при broadcasting"""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class AutogradService:
    """
    Операции над Tensor. Каждая операция проверяет конечность результата
    и записывает замыкание обратного прохода.
    """

    @staticmethod
    def _node(data: FloatArray, parents: Sequence[Tensor], op: str) -> Tensor:
        if not np.all(np.isfinite(data)):
            raise NonFiniteError(f"Нечисловое значение в операции '{op}'")
        return Tensor(data, parents, op)

    @staticmethod
    def tensor(value: Operand) -> Tensor:
        return value if isinstance(value, Tensor) else Tensor(value, op="const")

    # Поэлементные операции

    @staticmethod
    def add(a: Operand, b: Operand) -> Tensor:
        a, b = AutogradService.tensor(a), AutogradService.tensor(b)
        out = AutogradService._node(a.data + b.data, (a, b), "add")

        def backward() -> None:
            a.grad = a.grad + _unbroadcast(out.grad, a.shape)
            b.grad = b.grad + _unbroadcast(out.grad, b.shape)

        out._backward = backward
        return out

    @staticmethod
    def sub(a: Operand, b: Operand) -> Tensor:
        a, b = AutogradService.tensor(a), AutogradService.tensor(b)
        out = AutogradService._node(a.data - b.data, (a, b), "sub")

        def backward() -> None:
            a.grad = a.grad + _unbroadcast(out.grad, a.shape)
            b.grad = b.grad - _unbroadcast(out.grad, b.shape)

        out._backward = backward
        return out

    @staticmethod
    def mul(a: Operand, b: Operand) -> Tensor:
        a, b = AutogradService.tensor(a), AutogradService.tensor(b)
        out = AutogradService._node(a.data * b.data, (a, b), "mul")

        def backward() -> None:
            a.grad = a.grad + _unbroadcast(out.grad * b.data, a.shape)
            b.grad = b.grad + _unbroadcast(out.grad * a.data, b.shape)

        out._backward = backward
        return out

    @staticmethod
    def power(a: Tensor, exponent: float) -> Tensor:
        out = AutogradService._node(a.data**exponent, (a,), "power")

        def backward() -> None:
            a.grad = a.grad + out.grad * exponent * a.data ** (exponent - 1)

        out._backward = backward
        return out

    @staticmethod
    def square(a: Tensor) -> Tensor:
        return AutogradService.power(a, 2.0)

    @staticmethod
    def tanh(a: Tensor) -> Tensor:
        value = np.tanh(a.data)
        out = AutogradService._node(value, (a,), "tanh")

        def backward() -> None:
            a.grad = a.grad + out.grad * (1.0 - value**2)

        out._backward = backward
        return out

    @staticmethod
    def _sigmoid(x: FloatArray) -> FloatArray:
        decay = np.exp(-np.abs(x))
        return np.where(x >= 0, 1.0 / (1.0 + decay), decay / (1.0 + decay))

    @staticmethod
    def sigmoid(a: Tensor) -> Tensor:
        value = AutogradService._sigmoid(a.data)
        out = AutogradService._node(value, (a,), "sigmoid")

        def backward() -> None:
            a.grad = a.grad + out.grad * value * (1.0 - value)

        out._backward = backward
        return out

    @staticmethod
    def relu(a: Tensor) -> Tensor:
        mask = a.data > 0
        out = AutogradService._node(np.where(mask, a.data, 0.0), (a,), "relu")

        def backward() -> None:
            a.grad = a.grad + out.grad * mask

        out._backward = backward
        return out

    # Линейная алгебра и форма

    @staticmethod
    def matmul(a: Tensor, b: Tensor) -> Tensor:
        if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
            raise DimMismatch(f"matmul: формы {a.shape} и {b.shape} несовместимы")
        out = AutogradService._node(np.matmul(a.data, b.data), (a, b), "matmul")

        def backward() -> None:
            grad_a = np.matmul(out.grad, np.swapaxes(b.data, -1, -2))
            grad_b = np.matmul(np.swapaxes(a.data, -1, -2), out.grad)
            a.grad = a.grad + _unbroadcast(grad_a, a.shape)
            b.grad = b.grad + _unbroadcast(grad_b, b.shape)

        out._backward = backward
        return out

    @staticmethod
    def affine(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
        if bias.shape != (weight.shape[-1],):
            raise DimMismatch(f"affine: смещение {bias.shape} для весов {weight.shape}")
        return AutogradService.add(AutogradService.matmul(x, weight), bias)

    @staticmethod
    def sum(a: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:
        out = AutogradService._node(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), "sum")

        def backward() -> None:
            grad = out.grad
            if axis is not None and not keepdims:
                grad = np.expand_dims(grad, axis)
            a.grad = a.grad + np.broadcast_to(grad, a.shape)

        out._backward = backward
        return out

    @staticmethod
    def mean(a: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:
        if axis is None:
            count = a.size
        else:
            axes = (axis,) if isinstance(axis, int) else axis
            count = int(np.prod([a.shape[ax] for ax in axes]))
        total = AutogradService.sum(a, axis=axis, keepdims=keepdims)
        return AutogradService.mul(total, 1.0 / count)

    @staticmethod
    def reshape(a: Tensor, shape: Tuple[int, ...]) -> Tensor:
        out = AutogradService._node(a.data.reshape(shape), (a,), "reshape")

        def backward() -> None:
            a.grad = a.grad + out.grad.reshape(a.shape)

        out._backward = backward
        return out

    @staticmethod
    def transpose(a: Tensor, axes: Tuple[int, ...]) -> Tensor:
        out = AutogradService._node(np.transpose(a.data, axes), (a,), "transpose")
        inverse = tuple(np.argsort(axes))

        def backward() -> None:
            a.grad = a.grad + np.transpose(out.grad, inverse)

        out._backward = backward
        return out

    @staticmethod
    def swap_last(a: Tensor) -> Tensor:
        axes = tuple(range(a.data.ndim - 2)) + (a.data.ndim - 1, a.data.ndim - 2)
        return AutogradService.transpose(a, axes)

    @staticmethod
    def broadcast_to(a: Tensor, shape: Tuple[int, ...]) -> Tensor:
        out = AutogradService._node(np.broadcast_to(a.data, shape).copy(), (a,), "broadcast")

        def backward() -> None:
            a.grad = a.grad + _unbroadcast(out.grad, a.shape)

        out._backward = backward
        return out

    @staticmethod
    def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
        tensors = [AutogradService.tensor(t) for t in tensors]
        try:
            data = np.concatenate([t.data for t in tensors], axis=axis)
        except ValueError as error:
            raise DimMismatch(f"concat: {error}") from error
        out = AutogradService._node(data, tensors, "concat")
        bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

        def backward() -> None:
            for tensor, start, stop in zip(tensors, bounds[:-1], bounds[1:]):
                index = [slice(None)] * out.grad.ndim
                index[axis] = slice(int(start), int(stop))
                tensor.grad = tensor.grad + out.grad[tuple(index)]

        out._backward = backward
        return out

    @staticmethod
    def take(a: Tensor, indices: Sequence[int], axis: int = 0) -> Tensor:
        """Выбор строк по индексам (индексы могут повторяться)"""
        indices = np.asarray(indices, dtype=np.int64)
        out = AutogradService._node(np.take(a.data, indices, axis=axis), (a,), "take")

        def backward() -> None:
            grad = np.zeros_like(a.data)
            moved = np.moveaxis(grad, axis, 0)
            np.add.at(moved, indices, np.moveaxis(out.grad, axis, 0))
            a.grad = a.grad + grad

        out._backward = backward
        return out

    # Нормализация и внимание

    @staticmethod
    def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
        """Нормировка по последней оси; для постоянного вектора результат равен beta"""
        centered = AutogradService.sub(x, AutogradService.mean(x, axis=-1, keepdims=True))
        variance = AutogradService.mean(AutogradService.square(centered), axis=-1, keepdims=True)
        inv_std = AutogradService.power(AutogradService.add(variance, eps), -0.5)
        normed = AutogradService.mul(centered, inv_std)
        return AutogradService.add(AutogradService.mul(normed, gamma), beta)

    @staticmethod
    def softmax(a: Tensor, axis: int = -1) -> Tensor:
        shifted = a.data - a.data.max(axis=axis, keepdims=True)
        exp = np.exp(shifted)
        value = exp / exp.sum(axis=axis, keepdims=True)
        out = AutogradService._node(value, (a,), "softmax")

        def backward() -> None:
            inner = np.sum(out.grad * value, axis=axis, keepdims=True)
            a.grad = a.grad + value * (out.grad - inner)

        out._backward = backward
        return out

    @staticmethod
    def softmax_attention(
        q: Tensor, k: Tensor, v: Tensor, return_weights: bool = False
    ) -> Union[Tensor, Tuple[Tensor, Tensor]]:
        """
        Y = softmax(Q K^T / sqrt(d)) V по последним двум осям,
        ведущие оси (батч) согласуются по правилам broadcasting.
        """
        if q.data.ndim < 2 or k.data.ndim < 2 or v.data.ndim < 2:
            raise DimMismatch("softmax_attention ожидает матрицы (n, d)")
        if q.shape[-1] != k.shape[-1]:
            raise DimMismatch(f"Размерность запросов {q.shape[-1]} != ключей {k.shape[-1]}")
        if k.shape[-2] != v.shape[-2]:
            raise DimMismatch(f"Число ключей {k.shape[-2]} != числа значений {v.shape[-2]}")
        scale = 1.0 / math.sqrt(q.shape[-1])
        logits = AutogradService.mul(AutogradService.matmul(q, AutogradService.swap_last(k)), scale)
        weights = AutogradService.softmax(logits, axis=-1)
        out = AutogradService.matmul(weights, v)
        return (out, weights) if return_weights else out

    # Сверточная агрегация на сетке (..., h, w, c)

    @staticmethod
    def upsample2x(x: Tensor) -> Tensor:
        """Ближайший сосед x2 по двум пространственным осям"""
        value = np.repeat(np.repeat(x.data, 2, axis=-3), 2, axis=-2)
        out = AutogradService._node(value, (x,), "upsample2x")

        def backward() -> None:
            *lead, h, w, c = x.shape
            grad = out.grad.reshape(*lead, h, 2, w, 2, c).sum(axis=(-4, -2))
            x.grad = x.grad + grad

        out._backward = backward
        return out

    @staticmethod
    def _conv3x3(x: Tensor, kernel: Tensor, bias: Tensor, stride: int) -> Tensor:
        h, w, c_in = x.shape[-3:]
        if kernel.shape[:3] != (3, 3, c_in) or kernel.data.ndim != 4:
            raise DimMismatch(f"Ядро {kernel.shape} не подходит для {c_in} каналов")
        c_out = kernel.shape[3]
        if bias.shape != (c_out,):
            raise DimMismatch(f"Смещение {bias.shape} для {c_out} выходных каналов")

        lead = x.shape[:-3]
        pad = [(0, 0)] * len(lead) + [(1, 1), (1, 1), (0, 0)]
        padded = np.pad(x.data, pad)
        # (..., h, w, c, 3, 3) -> (..., h_out, w_out, 3, 3, c)
        windows = sliding_window_view(padded, (3, 3), axis=(-3, -2))
        windows = windows[..., ::stride, ::stride, :, :, :]
        h_out, w_out = windows.shape[-5], windows.shape[-4]
        cols = np.moveaxis(windows, -3, -1).reshape(*lead, h_out, w_out, 9 * c_in)
        flat_kernel = kernel.data.reshape(9 * c_in, c_out)
        out = AutogradService._node(cols @ flat_kernel + bias.data, (x, kernel, bias), "conv3x3")

        def backward() -> None:
            grad = out.grad
            kernel.grad = kernel.grad + (
                cols.reshape(-1, 9 * c_in).T @ grad.reshape(-1, c_out)
            ).reshape(kernel.shape)
            bias.grad = bias.grad + grad.reshape(-1, c_out).sum(axis=0)
            grad_cols = (grad @ flat_kernel.T).reshape(*lead, h_out, w_out, 3, 3, c_in)
            grad_padded = np.zeros_like(padded)
            for di in range(3):
                for dj in range(3):
                    grad_padded[
                        ...,
                        di : di + stride * h_out : stride,
                        dj : dj + stride * w_out : stride,
                        :,
                    ] += grad_cols[..., di, dj, :]
            x.grad = x.grad + grad_padded[..., 1 : h + 1, 1 : w + 1, :]

        out._backward = backward
        return out

    @staticmethod
    def conv_grid(x: Tensor, kernel: Tensor, bias: Tensor, mode: str = "same") -> Tensor:
        """
        Свертка 3x3 с отступом 1: same сохраняет размер, up сначала
        увеличивает сетку вдвое, down работает с шагом 2.
        """
        if mode not in CONV_MODES:
            raise DimMismatch(f"Неизвестный режим свертки '{mode}'")
        if x.data.ndim < 3:
            raise DimMismatch(f"conv_grid ожидает сетку (h, w, c), получено {x.shape}")
        if mode == "up":
            x = AutogradService.upsample2x(x)
        return AutogradService._conv3x3(x, kernel, bias, 2 if mode == "down" else 1)

    # Композиции из параметров

    @staticmethod
    def linear(x: Tensor, params: ParamSet, prefix: str) -> Tensor:
        return AutogradService.affine(x, params[f"{prefix}.weight"], params[f"{prefix}.bias"])

    @staticmethod
    def mlp(
        x: Tensor, params: ParamSet, prefix: str, depth: int, final_activation: bool = False
    ) -> Tensor:
        """Слои prefix.0 .. prefix.{depth-1}, relu между слоями"""
        for i in range(depth):
            x = AutogradService.linear(x, params, f"{prefix}.{i}")
            if i < depth - 1 or final_activation:
                x = AutogradService.relu(x)
        return x

    # Функции потерь

    @staticmethod
    def mse(prediction: Tensor, target: Operand) -> Tensor:
        return AutogradService.mean(AutogradService.square(AutogradService.sub(prediction, target)))

    @staticmethod
    def bce_with_logits(logits: Tensor, targets: FloatArray) -> Tensor:
        """Средняя бинарная кросс-энтропия; цели могут быть дробными из [0, 1]"""
        targets = np.broadcast_to(np.asarray(targets, dtype=np.float64), logits.shape)
        x = logits.data
        losses = np.maximum(x, 0.0) - x * targets + np.log1p(np.exp(-np.abs(x)))
        out = AutogradService._node(np.asarray(losses.mean()), (logits,), "bce_with_logits")

        def backward() -> None:
            grad = (AutogradService._sigmoid(x) - targets) / x.size
            logits.grad = logits.grad + out.grad * grad

        out._backward = backward
        return out

    @staticmethod
    def softmax_cross_entropy(logits: Tensor, labels: Sequence[int]) -> Tensor:
        """Средняя кросс-энтропия по строкам (n, K) с целочисленными метками"""
        labels = np.asarray(labels, dtype=np.int64)
        if logits.data.ndim != 2 or labels.shape != (logits.shape[0],):
            raise DimMismatch(f"Логиты {logits.shape} и метки {labels.shape} несовместимы")
        shifted = logits.data - logits.data.max(axis=1, keepdims=True)
        log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        rows = np.arange(labels.shape[0])
        loss = np.asarray(-log_probs[rows, labels].mean())
        out = AutogradService._node(loss, (logits,), "xent")

        def backward() -> None:
            grad = np.exp(log_probs)
            grad[rows, labels] -= 1.0
            logits.grad = logits.grad + out.grad * grad / labels.shape[0]

        out._backward = backward
        return out

    # Проверка градиентов

    @staticmethod
    def relu_masks(loss: Tensor) -> List[FloatArray]:
        """Знаки аргументов relu в графе loss в порядке обхода"""
        return [node.parents[0].data > 0 for node in loss.topological_order() if node.op == "relu"]

    @staticmethod
    def finite_diff_check(
        f: Callable[[ParamSet], Tensor],
        params: ParamSet,
        step: float = 1e-5,
        num_coords: int = 50,
        seed: int = 0,
    ) -> float:
        """
        Максимальная относительная ошибка между центральными разностями и backward()
        на случайной подвыборке координат. Координаты, сдвиг которых меняет
        знак аргумента какого-либо relu, пропускаются.
        """
        params.zero_grad()
        try:
            loss = f(params)
            base_masks = AutogradService.relu_masks(loss)
            loss.backward()
            analytic = {name: grad.copy() for name, grad in params.grads().items()}
            base_value = loss.item()

            coords = [
                (name, index)
                for name in params
                for index in range(params[name].size)
            ]
            rng = np.random.default_rng(seed)
            chosen = rng.choice(len(coords), size=min(num_coords, len(coords)), replace=False)

            worst = 0.0
            for position in sorted(int(i) for i in chosen):
                name, index = coords[position]
                tensor = params[name]
                original = tensor.data
                values = []
                kinked = False
                for sign in (1.0, -1.0):
                    shifted = original.copy()
                    shifted.reshape(-1)[index] += sign * step
                    tensor.data = shifted
                    shifted_loss = f(params)
                    values.append(shifted_loss.item())
                    masks = AutogradService.relu_masks(shifted_loss)
                    kinked = kinked or any(
                        not np.array_equal(m0, m1) for m0, m1 in zip(base_masks, masks)
                    )
                tensor.data = original
                if kinked:
                    continue
                numeric = (values[0] - values[1]) / (2.0 * step)
                backprop = float(analytic[name].reshape(-1)[index])
                scale = max(abs(numeric), abs(backprop), 1e-6 * max(1.0, abs(base_value)))
                worst = max(worst, abs(numeric - backprop) / scale)
        finally:
            params.zero_grad()
        return worst
