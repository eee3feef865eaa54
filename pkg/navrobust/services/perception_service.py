"""
Сервисный слой восприятия: растеризация сцены, экстракторы признаков,
адаптер токенов и диагностика согласованности признаков
"""
import functools
import hashlib
import logging
import math
from pathlib import Path
from typing import Dict, Sequence, Tuple, Union

import numpy as np
from PIL import Image

from navrobust.apps.geom.models import FloatArray
from navrobust.apps.nncore.models import ParamSet, Tensor
from navrobust.apps.perception.models import (
    AdapterConfig,
    ExtractorKind,
    FeatureGrid,
    PerceptionConfig,
    StyleCorruption,
    TokenSequence,
)
from navrobust.apps.scenario.models import AgentKind, LightPhase, Scenario, StyleId, StyleRegistry
from navrobust.core.exceptions import DimMismatch, TooFewStyles
from navrobust.services.autograd import AutogradService as ag
from navrobust.services.geometry import GeometryService

logger = logging.getLogger(__name__)

STOP_LINE_SAMPLE = 0.25
CENTERLINE_FIELD_SCALE = 4.0
ROUTE_FIELD_SCALE = 2.0


@functools.lru_cache(maxsize=8)
def _mixing(config: PerceptionConfig) -> Tuple[FloatArray, FloatArray, FloatArray]:
    """Фиксированные матрицы подъема P (13, C) и смешивания M (C, C), смещение m"""
    rng = np.random.default_rng(config.mixing_seed)
    c_raw, c = config.num_raw_channels, config.feature_dim
    lift = rng.standard_normal((c_raw, c)) / math.sqrt(c_raw)
    mix = rng.standard_normal((c, c)) / math.sqrt(c)
    bias = 0.1 * rng.standard_normal(c)
    for array in (lift, mix, bias):
        array.setflags(write=False)
    return lift, mix, bias


@functools.lru_cache(maxsize=64)
def _corruption(style_id: int, config: PerceptionConfig) -> StyleCorruption:
    c = config.feature_dim
    if style_id == 0:
        return StyleCorruption(
            style_id=0,
            tint=0.0,
            permutation=tuple(range(c)),
            gains=np.ones(c),
            offsets=np.zeros(c),
            field_amplitude=0.0,
            field_phase=(0.0, 0.0),
            field_frequency=(0.0, 0.0),
        )
    rng = np.random.default_rng([config.corruption_seed, style_id])
    permutation = np.concatenate([[0], 1 + rng.permutation(c - 1)])
    signs = np.where(rng.random(c) < 0.5, -1.0, 1.0)
    gains = 1.0 + signs * rng.uniform(*config.gain_range, size=c)
    offsets = config.offset_scale * rng.uniform(-1.0, 1.0, size=c)
    gains[0], offsets[0] = 1.0, 0.0
    return StyleCorruption(
        style_id=style_id,
        tint=style_id * config.tint_delta,
        permutation=tuple(int(i) for i in permutation),
        gains=gains,
        offsets=offsets,
        field_amplitude=config.field_amplitude * float(rng.uniform(0.5, 1.0)),
        field_phase=(float(rng.uniform(0, 2 * math.pi)), float(rng.uniform(0, 2 * math.pi))),
        field_frequency=(
            float(rng.uniform(0.5, 1.5) * math.pi),
            float(rng.uniform(0.5, 1.5) * math.pi),
        ),
    )


class PerceptionService:
    """
    Экстракторы признаков. Постоянный глаз зависит только от геометрии сцены,
    хрупкий экстрактор дополнительно искажается стилем.
    """

    # Растеризация

    @staticmethod
    def rasterize(scenario: Scenario, config: PerceptionConfig) -> FloatArray:
        """Каналы RAW_CHANNELS на сетке (H, W) в момент t = 0"""
        n = config.grid_size
        xs, ys = config.cell_centers()
        points = np.stack(np.meshgrid(xs, ys, indexing="ij"), axis=-1).reshape(-1, 2)
        raster = np.zeros((n, n, config.num_raw_channels))

        drivable = GeometryService.points_in_any_polygon(points, scenario.drivable)
        raster[..., 0] = drivable.reshape(n, n)

        distances, headings = [], []
        for line in scenario.centerlines:
            _, lateral, heading = GeometryService.project_points(points, line)
            distances.append(np.abs(lateral))
            headings.append(heading)
        nearest = np.argmin(np.stack(distances), axis=0)
        rows = np.arange(points.shape[0])
        distance = np.stack(distances)[nearest, rows]
        heading = np.stack(headings)[nearest, rows]
        field = np.exp(-distance / CENTERLINE_FIELD_SCALE)
        raster[..., 1] = field.reshape(n, n)
        raster[..., 2] = (np.cos(heading) * field).reshape(n, n)
        raster[..., 3] = (np.sin(heading) * field).reshape(n, n)

        for agent in scenario.agents:
            occupancy = PerceptionService.occupancy(
                agent.logged_trajectory.poses[0], agent.half_length, agent.half_width, config
            )
            channel = 4 if agent.kind is AgentKind.VEHICLE else 5
            raster[..., channel] = np.maximum(raster[..., channel], occupancy)
            velocity = GeometryService.velocities(agent.logged_trajectory)[0]
            velocity = velocity / config.velocity_scale
            raster[..., 6] += velocity[0] * occupancy
            raster[..., 7] += velocity[1] * occupancy

        for light in scenario.lights:
            if light.phase[0] is LightPhase.RED:
                cells = PerceptionService._line_cells(light.stop_line.vertices, config)
                raster[cells[:, 0], cells[:, 1], 8] = 1.0

        _, route_lateral, _ = GeometryService.project_points(points, scenario.route)
        raster[..., 9] = np.exp(-((route_lateral / ROUTE_FIELD_SCALE) ** 2)).reshape(n, n)
        raster[..., 10:13] = np.array(scenario.goal_command.one_hot())
        return raster

    @staticmethod
    def occupancy(
        pose: FloatArray, half_length: float, half_width: float, config: PerceptionConfig
    ) -> FloatArray:
        """Занятость ячеек: растр в fine_factor раз мельче, затем max-pooling"""
        factor = config.fine_factor
        n = config.grid_size * factor
        xs, ys = config.cell_centers(factor)
        dx = xs[:, None] - pose[0]
        dy = ys[None, :] - pose[1]
        cos_h, sin_h = math.cos(pose[2]), math.sin(pose[2])
        along = dx * cos_h + dy * sin_h
        across = -dx * sin_h + dy * cos_h
        fine = (np.abs(along) <= half_length) & (np.abs(across) <= half_width)
        coarse = fine.reshape(n // factor, factor, n // factor, factor).max(axis=(1, 3))
        return coarse.astype(np.float64)

    @staticmethod
    def _line_cells(vertices: FloatArray, config: PerceptionConfig) -> np.ndarray:
        samples = []
        for a, b in zip(vertices[:-1], vertices[1:]):
            count = max(int(math.ceil(np.linalg.norm(b - a) / STOP_LINE_SAMPLE)), 1)
            t = np.linspace(0.0, 1.0, count + 1)[:, None]
            samples.append(a + t * (b - a))
        points = np.concatenate(samples)
        dx, dy = config.cell_size
        i = np.floor((points[:, 0] - config.x_range[0]) / dx).astype(int)
        j = np.floor((points[:, 1] - config.y_range[0]) / dy).astype(int)
        inside = (i >= 0) & (i < config.grid_size) & (j >= 0) & (j < config.grid_size)
        return np.unique(np.stack([i[inside], j[inside]], axis=1), axis=0).reshape(-1, 2)

    # Экстракторы

    @staticmethod
    def lifted(scenario: Scenario, config: PerceptionConfig) -> FloatArray:
        lift, _, _ = _mixing(config)
        return PerceptionService.rasterize(scenario, config) @ lift

    @staticmethod
    def extract_constant_eye(scenario: Scenario, config: PerceptionConfig) -> FeatureGrid:
        """Замороженное нелинейное смешивание; стиль сцены не используется"""
        _, mix, bias = _mixing(config)
        grid = np.tanh(PerceptionService.lifted(scenario, config) @ mix + bias)
        return FeatureGrid(grid, ExtractorKind.CONSTANT_EYE.value, scenario.style)

    @staticmethod
    def corruption(style_id: int, config: PerceptionConfig) -> StyleCorruption:
        return _corruption(int(style_id), config)

    @staticmethod
    def apply_corruption(lifted: FloatArray, corruption: StyleCorruption) -> FloatArray:
        if corruption.is_identity:
            return lifted.copy()
        h, w, _ = lifted.shape
        u = np.linspace(0.0, 1.0, h)[:, None]
        v = np.linspace(0.0, 1.0, w)[None, :]
        (fu, fv), (pu, pv) = corruption.field_frequency, corruption.field_phase
        field = 1.0 + corruption.field_amplitude * np.sin(fu * u + pu) * np.cos(fv * v + pv)

        permuted = lifted[..., list(corruption.permutation)]
        out = permuted * corruption.gains * field[..., None] + corruption.offsets
        out[..., 0] = lifted[..., 0] + corruption.tint
        return out

    @staticmethod
    def extract_brittle(scenario: Scenario, config: PerceptionConfig) -> FeatureGrid:
        """Поднятая растеризация с искажением, заданным стилем сцены"""
        lifted = PerceptionService.lifted(scenario, config)
        corruption = PerceptionService.corruption(scenario.style.id, config)
        grid = PerceptionService.apply_corruption(lifted, corruption)
        return FeatureGrid(grid, ExtractorKind.BRITTLE.value, scenario.style)

    @staticmethod
    def trainable_input(scenario: Scenario, config: PerceptionConfig) -> FeatureGrid:
        """Вход обучаемого экстрактора: поднятая растеризация и ее искаженная копия (2C каналов)"""
        lifted = PerceptionService.lifted(scenario, config)
        corrupted = PerceptionService.apply_corruption(
            lifted, PerceptionService.corruption(scenario.style.id, config)
        )
        grid = np.concatenate([lifted, corrupted], axis=-1)
        return FeatureGrid(grid, ExtractorKind.TRAINABLE.value, scenario.style)

    @staticmethod
    def extract(scenario: Scenario, kind: ExtractorKind, config: PerceptionConfig) -> FeatureGrid:
        kind = ExtractorKind(kind)
        if kind is ExtractorKind.CONSTANT_EYE:
            return PerceptionService.extract_constant_eye(scenario, config)
        if kind is ExtractorKind.BRITTLE:
            return PerceptionService.extract_brittle(scenario, config)
        return PerceptionService.trainable_input(scenario, config)

    @staticmethod
    def input_channels(kind: ExtractorKind, config: PerceptionConfig) -> int:
        if ExtractorKind(kind) is ExtractorKind.TRAINABLE:
            return 2 * config.feature_dim
        return config.feature_dim

    @staticmethod
    def init_trainable_extractor(params: ParamSet, config: PerceptionConfig) -> None:
        """Копия замороженного смешивания: веса [M; 0] и смещение m"""
        _, mix, bias = _mixing(config)
        c = config.feature_dim
        weight = np.concatenate([mix, np.zeros((c, c))], axis=0)
        params.add("extractor.weight", (2 * c, c), value=weight)
        params.add("extractor.bias", (c,), value=bias)

    @staticmethod
    def trainable_features(x: Tensor, params: ParamSet) -> Tensor:
        return ag.tanh(ag.linear(x, params, "extractor"))

    @staticmethod
    def extractor_checksum(config: PerceptionConfig, registry: StyleRegistry) -> str:
        """Контрольная сумма состояния замороженных экстракторов"""
        digest = hashlib.sha256(repr(config).encode("utf-8"))
        for array in _mixing(config):
            digest.update(np.ascontiguousarray(array).tobytes())
        for style in registry.styles:
            corruption = PerceptionService.corruption(style.id, config)
            digest.update(repr(corruption.as_dict()).encode("utf-8"))
        return digest.hexdigest()

    @staticmethod
    def style_corruption_table(
        config: PerceptionConfig, registry: StyleRegistry
    ) -> Dict[str, dict]:
        """Параметры искажений по именам стилей (для конфигурации прогона и отчета)"""
        return {
            style.name: PerceptionService.corruption(style.id, config).as_dict()
            for style in registry.styles
        }

    # Адаптер

    @staticmethod
    def init_adapter(params: ParamSet, config: AdapterConfig, prefix: str = "adapter") -> None:
        dims = [config.in_dim] + [config.out_dim] * config.depth
        params.add_mlp(f"{prefix}.mlp", dims)
        if config.use_cnn:
            for name in ("up", "down"):
                shape = (3, 3, config.out_dim, config.out_dim)
                params.add(f"{prefix}.{name}.kernel", shape, init="conv_identity")
                params.add(f"{prefix}.{name}.bias", (config.out_dim,), init="zeros")

    @staticmethod
    def adapt_tensor(
        x: Tensor, params: ParamSet, config: AdapterConfig, prefix: str = "adapter"
    ) -> Tensor:
        """(B, H, W, C) -> (B, H*W, d)"""
        if x.data.ndim != 4 or x.shape[-1] != config.in_dim:
            raise DimMismatch(f"Адаптер ожидает (B, H, W, {config.in_dim}), получено {x.shape}")
        y = ag.mlp(x, params, f"{prefix}.mlp", config.depth)
        if config.use_cnn:
            y = ag.conv_grid(y, params[f"{prefix}.up.kernel"], params[f"{prefix}.up.bias"], "up")
            y = ag.conv_grid(
                y, params[f"{prefix}.down.kernel"], params[f"{prefix}.down.bias"], "down"
            )
        batch, h, w, d = y.shape
        return ag.reshape(y, (batch, h * w, d))

    @staticmethod
    def adapt(f: FeatureGrid, params: ParamSet, config: AdapterConfig) -> TokenSequence:
        h, w, c = f.shape
        if c != config.in_dim:
            raise DimMismatch(f"Сетка с {c} каналами, адаптер ожидает {config.in_dim}")
        tokens = PerceptionService.adapt_tensor(Tensor(f.grid[None]), params, config)
        return TokenSequence(tokens.data[0], (h, w))

    # Диагностика

    @staticmethod
    def dispersion_ratio(tokens: FloatArray) -> float:
        """
        tokens (S, N, d): среднее по позициям межстилевой дисперсии токена,
        деленное на дисперсию по позициям усредненных по стилям токенов.
        """
        tokens = np.asarray(tokens, dtype=np.float64)
        if tokens.ndim != 3:
            raise DimMismatch(f"Ожидались токены (S, N, d), получено {tokens.shape}")
        if tokens.shape[0] < 2:
            raise TooFewStyles(f"Для дисперсии нужно не менее 2 стилей, получено {tokens.shape[0]}")
        if np.array_equal(tokens, np.broadcast_to(tokens[:1], tokens.shape)):
            return 0.0
        style_mean = tokens.mean(axis=0)
        within = np.mean(np.sum((tokens - style_mean) ** 2, axis=-1))
        between = np.mean(np.sum((style_mean - style_mean.mean(axis=0)) ** 2, axis=-1))
        if within == 0.0:
            return 0.0
        return float(within / between) if between > 0 else math.inf

    @staticmethod
    def token_dispersion(
        scenario: Scenario,
        styles: Sequence[StyleId],
        kind: ExtractorKind,
        params: ParamSet,
        perception_config: PerceptionConfig,
        adapter_config: AdapterConfig,
    ) -> float:
        if len(styles) < 2:
            raise TooFewStyles(f"Для дисперсии нужно не менее 2 стилей, получено {len(styles)}")
        tokens = [
            PerceptionService.adapt(
                PerceptionService.extract(scenario.with_style(style), kind, perception_config),
                params,
                adapter_config,
            ).tokens
            for style in styles
        ]
        return PerceptionService.dispersion_ratio(np.stack(tokens))

    @staticmethod
    def pca_decompose(f: FeatureGrid, k: int = 3) -> Tuple[FloatArray, FloatArray, FloatArray]:
        """
        Проекции на k главных компонент (H, W, k), компоненты (k, C) и доли дисперсии.
        Знак компоненты: наибольшая по модулю нагрузка положительна.
        """
        h, w, c = f.shape
        if not 1 <= k <= c:
            raise DimMismatch(f"Число компонент {k} вне [1, {c}]")
        matrix = f.grid.reshape(-1, c)
        centered = matrix - matrix.mean(axis=0)
        _, singular, vt = np.linalg.svd(centered, full_matrices=False)
        components = vt[:k].copy()
        for row in components:
            if row[np.argmax(np.abs(row))] < 0:
                row *= -1.0
        variance = singular**2
        total = variance.sum()
        explained = variance[:k] / total if total > 0 else np.zeros(k)
        projections = (centered @ components.T).reshape(h, w, k)
        return projections, components, explained

    @staticmethod
    def pca_maps(f: FeatureGrid, k: int = 3) -> FloatArray:
        return PerceptionService.pca_decompose(f, k)[0]

    @staticmethod
    def render_pca_png(maps: FloatArray, path: Union[str, Path], scale: int = 16) -> None:
        """Три компоненты как каналы RGB с нормировкой min-max"""
        maps = np.asarray(maps, dtype=np.float64)
        if maps.ndim != 3 or maps.shape[2] != 3:
            raise DimMismatch(f"Для PNG нужны 3 компоненты, получено {maps.shape}")
        low = maps.min(axis=(0, 1))
        span = np.maximum(maps.max(axis=(0, 1)) - low, 1e-12)
        pixels = np.round(255.0 * (maps - low) / span).astype(np.uint8)
        image = Image.fromarray(pixels, mode="RGB")
        image = image.resize((maps.shape[1] * scale, maps.shape[0] * scale), Image.NEAREST)
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        image.save(str(path), format="PNG")
