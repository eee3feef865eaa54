"""
Тесты для автоматического дифференцирования, AdamW и контрольных точек
"""
import numpy as np
import pytest

from navrobust.apps.nncore.models import OptimizerState, ParamSet, Tensor
from navrobust.apps.nncore.serializers import ParamSetSerializer
from navrobust.apps.planners.models import LrSchedule, TrainingConfig
from navrobust.core.exceptions import (
    CheckpointIOError,
    ConfigException,
    DimMismatch,
    NonFiniteError,
    SchemaVersionMismatch,
    ValidationException,
)
from navrobust.services.autograd import AutogradService as ag
from navrobust.services.optimizer import OptimizerService

GRAD_TOLERANCE = 1e-4


def grid_params(seed: int = 0, c_in: int = 3, c_out: int = 4) -> ParamSet:
    params = ParamSet(seed=seed)
    params.add("x", (8, 8, c_in), fan_in=1)
    params.add("kernel", (3, 3, c_in, c_out), fan_in=9 * c_in)
    params.add("bias", (c_out,), fan_in=9 * c_in)
    return params


class TestGradients:
    """Тесты для обратного прохода против центральных разностей"""

    def test_mlp_tanh_sigmoid(self):
        """Тест многослойного перцептрона с tanh и sigmoid"""
        params = ParamSet(seed=1)
        params.add("x", (5, 6), fan_in=1)
        params.add_mlp("net", [6, 8, 8, 3])
        target = np.random.default_rng(0).normal(size=(5, 3))

        def f(p):
            hidden = ag.mlp(p["x"], p, "net", depth=3)
            return ag.mse(ag.sigmoid(ag.tanh(hidden)), target)

        assert ag.finite_diff_check(f, params, num_coords=80) <= GRAD_TOLERANCE

    def test_layer_norm(self):
        """Тест нормировки слоя"""
        params = ParamSet(seed=2)
        params.add("x", (4, 7), fan_in=1)
        params.add("gamma", (7,), init="ones")
        params.add("beta", (7,), fan_in=7)
        weights = np.random.default_rng(1).normal(size=(4, 7))

        def f(p):
            return ag.sum(ag.mul(ag.layer_norm(p["x"], p["gamma"], p["beta"]), weights))

        assert ag.finite_diff_check(f, params) <= GRAD_TOLERANCE

    def test_affine(self):
        """Тест аффинного слоя с батчевой осью"""
        params = ParamSet(seed=5)
        params.add("x", (2, 3, 4), fan_in=1)
        params.add("w", (4, 5), fan_in=4)
        params.add("b", (5,), fan_in=4)
        weights = np.random.default_rng(4).normal(size=(2, 3, 5))

        def f(p):
            return ag.sum(ag.mul(ag.affine(p["x"], p["w"], p["b"]), weights))

        assert ag.finite_diff_check(f, params) <= GRAD_TOLERANCE
        with pytest.raises(DimMismatch):
            ag.affine(params["x"], params["w"], params["x"])

    def test_attention(self):
        """Тест внимания с батчевой осью"""
        params = ParamSet(seed=3)
        params.add("q", (2, 3, 4), fan_in=1)
        params.add("k", (2, 5, 4), fan_in=1)
        params.add("v", (2, 5, 6), fan_in=1)
        weights = np.random.default_rng(2).normal(size=(2, 3, 6))

        def f(p):
            return ag.sum(ag.mul(ag.softmax_attention(p["q"], p["k"], p["v"]), weights))

        assert ag.finite_diff_check(f, params, num_coords=60) <= GRAD_TOLERANCE

    @pytest.mark.parametrize("mode", ["same", "up", "down"])
    def test_conv_grid(self, mode):
        """Тест свертки 3x3 во всех режимах"""
        params = grid_params()

        def f(p):
            out = ag.conv_grid(p["x"], p["kernel"], p["bias"], mode)
            return ag.mean(ag.square(ag.tanh(out)))

        assert ag.finite_diff_check(f, params, num_coords=60) <= GRAD_TOLERANCE

    def test_losses(self):
        """Тест бинарной и многоклассовой кросс-энтропии"""
        params = ParamSet(seed=4)
        params.add("logits", (6, 5), fan_in=1)
        targets = np.random.default_rng(3).uniform(size=(6, 5))
        labels = [0, 4, 2, 2, 1, 3]

        def f(p):
            return ag.add(
                ag.bce_with_logits(p["logits"], targets),
                ag.softmax_cross_entropy(p["logits"], labels),
            )

        assert ag.finite_diff_check(f, params) <= GRAD_TOLERANCE

    def test_take_concat_reshape(self):
        """Тест выборки строк с повторами, конкатенации и смены формы"""
        params = ParamSet(seed=5)
        params.add("a", (4, 3), fan_in=1)
        params.add("b", (4, 2), fan_in=1)

        def f(p):
            joined = ag.concat([ag.take(p["a"], [0, 2, 2, 3]), p["b"]], axis=-1)
            flat = ag.reshape(ag.transpose(joined, (1, 0)), (20,))
            return ag.sum(ag.square(flat))

        assert ag.finite_diff_check(f, params) <= GRAD_TOLERANCE

    def test_relu_masks_from_graph(self):
        """Тест знаков аргументов relu, прочитанных из графа"""
        x = Tensor(np.array([-1.0, 2.0, 0.5]))
        loss = ag.sum(ag.relu(ag.sub(ag.relu(x), 1.0)))
        masks = ag.relu_masks(loss)
        assert len(masks) == 2
        assert [m.tolist() for m in masks] == [[False, True, True], [False, True, False]]

    def test_nested_checks_independent(self):
        """Тест проверки градиентов, вызванной внутри другой проверки"""
        inner = ParamSet(seed=7)
        inner.add("w", (3, 3), fan_in=3)
        outer = ParamSet(seed=8)
        outer.add("x", (2, 3), fan_in=1)
        outer.add_mlp("net", [3, 4, 1])

        def g(p):
            return ag.sum(ag.square(ag.relu(p["w"])))

        def f(p):
            assert ag.finite_diff_check(g, inner, num_coords=3) <= GRAD_TOLERANCE
            return ag.sum(ag.relu(ag.mlp(p["x"], p, "net", depth=2)))

        assert ag.finite_diff_check(f, outer, num_coords=5) <= GRAD_TOLERANCE


class TestOperations:
    """Тесты для значений операций и ошибок формы"""

    def test_layer_norm_constant_vector(self):
        """Тест нормировки постоянного вектора: результат равен beta"""
        beta = Tensor(np.arange(5.0))
        out = ag.layer_norm(Tensor(np.full((2, 5), 3.0)), Tensor(np.ones(5)), beta)
        np.testing.assert_allclose(out.data, np.broadcast_to(beta.data, (2, 5)), atol=1e-12)

    def test_attention_weights(self):
        """Тест нормировки весов внимания по ключам"""
        rng = np.random.default_rng(0)
        q, k, v = (Tensor(rng.normal(size=s)) for s in [(3, 4), (5, 4), (5, 2)])
        out, weights = ag.softmax_attention(q, k, v, return_weights=True)
        assert out.shape == (3, 2)
        np.testing.assert_allclose(weights.data.sum(axis=-1), np.ones(3))

    def test_attention_dim_mismatch(self):
        """Тест несогласованных размерностей запросов и ключей"""
        with pytest.raises(DimMismatch):
            ag.softmax_attention(
                Tensor(np.ones((3, 4))), Tensor(np.ones((5, 3))), Tensor(np.ones((5, 2)))
            )

    def test_conv_shapes(self):
        """Тест размеров сетки для same, up, down"""
        params = grid_params()
        shapes = {
            mode: ag.conv_grid(params["x"], params["kernel"], params["bias"], mode).shape
            for mode in ("same", "up", "down")
        }
        assert shapes == {"same": (8, 8, 4), "up": (16, 16, 4), "down": (4, 4, 4)}

    def test_non_finite(self):
        """Тест отказа на бесконечном значении"""
        with pytest.raises(NonFiniteError):
            ag.add(Tensor(np.inf), 1.0)

    def test_backward_requires_scalar(self):
        """Тест backward() для нескалярного тензора"""
        with pytest.raises(DimMismatch):
            ag.add(Tensor(np.ones(3)), 1.0).backward()

    def test_matmul_mismatch(self):
        """Тест несовместимых форм умножения"""
        with pytest.raises(DimMismatch):
            ag.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


class TestParamSet:
    """Тесты для набора параметров"""

    def test_seeded_init(self):
        """Тест воспроизводимой инициализации по зерну"""
        a, b = ParamSet(seed=7), ParamSet(seed=7)
        for p in (a, b):
            p.add_mlp("net", [4, 8, 2])
        assert a.checksum() == b.checksum()
        assert len(a) == 4 and a.count() == 4 * 8 + 8 + 8 * 2 + 2

    def test_duplicate_and_missing(self):
        """Тест повторного имени и отсутствующего параметра"""
        params = ParamSet()
        params.add("w", (2, 2))
        with pytest.raises(ValidationException):
            params.add("w", (2, 2))
        with pytest.raises(ValidationException):
            params["missing"]

    def test_copy_is_independent(self):
        """Тест независимости копии"""
        params = ParamSet(seed=1)
        params.add("w", (3,))
        clone = params.copy()
        params.zero_("w")
        assert not np.allclose(clone["w"].data, 0.0)


class TestOptimizer:
    """Тесты для AdamW и расписаний шага"""

    def test_first_step_magnitude(self):
        """Тест первого шага Adam: сдвиг на lr против знака градиента"""
        params = ParamSet()
        params.add("w", (3,), value=np.zeros(3))
        params["w"].grad = np.array([0.5, -2.0, 1e-3])
        OptimizerService.optimizer_step(params, OptimizerState(), lr=0.1)
        np.testing.assert_allclose(params["w"].data, [-0.1, 0.1, -0.1], rtol=1e-4)

    def test_weight_decay(self):
        """Тест раздельного затухания весов при нулевом градиенте"""
        params = ParamSet()
        params.add("w", (2,), value=np.array([1.0, -2.0]))
        OptimizerService.optimizer_step(params, OptimizerState(), lr=0.1, weight_decay=0.5)
        np.testing.assert_allclose(params["w"].data, [0.95, -1.9])

    def test_non_finite_gradient(self):
        """Тест отказа на нечисловом градиенте"""
        params = ParamSet()
        params.add("w", (1,))
        params["w"].grad = np.array([np.nan])
        with pytest.raises(NonFiniteError):
            OptimizerService.optimizer_step(params, OptimizerState(), lr=0.1)

    def test_lr_schedules(self):
        """Тест прогрева и косинусного расписания"""
        config = TrainingConfig(steps=110, lr=1.0, warmup_steps=10, schedule=LrSchedule.COSINE)
        assert OptimizerService.lr_at(0, config) == pytest.approx(0.1)
        assert OptimizerService.lr_at(9, config) == pytest.approx(1.0)
        assert OptimizerService.lr_at(60, config) == pytest.approx(0.5)
        assert OptimizerService.lr_at(110, config) == pytest.approx(0.0, abs=1e-12)
        constant = TrainingConfig(steps=100, lr=0.3, warmup_steps=0)
        assert OptimizerService.lr_at(50, constant) == 0.3
        with pytest.raises(ConfigException):
            OptimizerService.lr_at(-1, constant)

    def test_training_budget(self):
        """Тест ограничений бюджета обучения"""
        with pytest.raises(ConfigException):
            TrainingConfig(batch_size=64)

    def _fit(self):
        rng = np.random.default_rng(0)
        features = rng.normal(size=(64, 3))
        targets = features @ np.array([[1.0], [-2.0], [0.5]]) + 0.3
        params = ParamSet(seed=0)
        params.add_linear("fit", 3, 1)

        def loss_fn(p, batch, _rng):
            return ag.mse(ag.linear(Tensor(features[batch]), p, "fit"), targets[batch])

        config = TrainingConfig(
            steps=400, batch_size=16, lr=0.05, warmup_steps=0, weight_decay=0.0, log_every=0
        )
        history = OptimizerService.train(params, loss_fn, 64, config, label="fit")
        return params, history

    def test_train_converges(self):
        """Тест сходимости линейной регрессии"""
        params, history = self._fit()
        assert len(history) == 400
        assert np.mean(history[-20:]) < 0.05 * history[0]
        np.testing.assert_allclose(params["fit.weight"].data[:, 0], [1.0, -2.0, 0.5], atol=0.1)

    def test_train_deterministic(self):
        """Тест побитовой воспроизводимости обучения"""
        (a, history_a), (b, history_b) = self._fit(), self._fit()
        assert history_a == history_b
        assert a.checksum() == b.checksum()


class TestParamSetSerializer:
    """Тесты для JSON-формата контрольных точек"""

    def test_exact_restore(self, tmp_path):
        """Тест точного восстановления значений и метаданных"""
        params = ParamSet(seed=3)
        params.add_mlp("net", [5, 7, 2])
        path = tmp_path / "ckpt" / "model.json"
        ParamSetSerializer.write(params, path, metadata={"paradigm": "regression"})
        restored = ParamSetSerializer.read(path)
        assert restored.checksum() == params.checksum()
        assert list(restored) == list(params)
        assert ParamSetSerializer.read_raw(path)["metadata"] == {"paradigm": "regression"}

    def test_version_mismatch(self):
        """Тест неподдерживаемой версии формата"""
        data = ParamSetSerializer.to_representation(ParamSet())
        data["format_version"] = 99
        with pytest.raises(SchemaVersionMismatch):
            ParamSetSerializer.to_internal_value(data)

    def test_shape_mismatch(self):
        """Тест числа значений, не совпадающего с формой"""
        data = {
            "format_version": 1,
            "seed": 0,
            "params": [{"name": "w", "shape": [2, 2], "values": [1.0, 2.0]}],
        }
        with pytest.raises(ValidationException):
            ParamSetSerializer.to_internal_value(data)

    def test_missing_file(self, tmp_path):
        """Тест отсутствующего файла"""
        with pytest.raises(CheckpointIOError):
            ParamSetSerializer.read(tmp_path / "absent.json")
