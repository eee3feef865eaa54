"""
JSON-представление сценария
"""
import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np

from navrobust.apps.geom.models import Polygon, Polyline, Trajectory
from navrobust.apps.scenario.models import (
    Agent,
    AgentKind,
    GeometrySeed,
    GoalCommand,
    LightPhase,
    MapFamily,
    Scenario,
    StyleId,
    StyleRegistry,
    TrafficLightState,
)
from navrobust.core.exceptions import (
    ScenarioIOError,
    SchemaVersionMismatch,
    ValidationException,
)
from navrobust.core.settings import SCENARIO_SCHEMA_VERSION

PathLike = Union[str, Path]


class TrajectorySerializer:
    @staticmethod
    def to_representation(traj: Trajectory) -> Dict[str, Any]:
        return {"dt": traj.dt, "poses": traj.poses.tolist()}

    @staticmethod
    def to_internal_value(data: Dict[str, Any]) -> Trajectory:
        return Trajectory(float(data["dt"]), np.array(data["poses"], dtype=np.float64))


class ScenarioSerializer:
    """
    Сериализатор сценария: ключи верхнего уровня schema_version, geometry_seed,
    style, map, agents, lights, ego, expert.
    """

    def __init__(self, registry: Optional[StyleRegistry] = None):
        self.registry = registry or StyleRegistry.default()

    def to_representation(self, scenario: Scenario) -> Dict[str, Any]:
        return {
            "schema_version": SCENARIO_SCHEMA_VERSION,
            "geometry_seed": scenario.geometry_seed.seed,
            "style": {"id": scenario.style.id, "name": scenario.style.name},
            "map": {
                "family": scenario.map_family.value,
                "drivable": [poly.ring.tolist() for poly in scenario.drivable],
                "centerlines": [line.vertices.tolist() for line in scenario.centerlines],
                "route_index": scenario.route_index,
            },
            "agents": [
                {
                    "kind": agent.kind.value,
                    "half_length": agent.half_length,
                    "half_width": agent.half_width,
                    "lane_index": agent.lane_index,
                    "trajectory": TrajectorySerializer.to_representation(
                        agent.logged_trajectory
                    ),
                }
                for agent in scenario.agents
            ],
            "lights": [
                {
                    "stop_line": light.stop_line.vertices.tolist(),
                    "phase": [phase.value for phase in light.phase],
                }
                for light in scenario.lights
            ],
            "ego": {
                "half_length": scenario.ego_half_length,
                "half_width": scenario.ego_half_width,
                "goal_command": scenario.goal_command.value,
                "history": TrajectorySerializer.to_representation(scenario.ego_history),
            },
            "expert": TrajectorySerializer.to_representation(scenario.expert),
        }

    def validate_schema_version(self, value: Any) -> int:
        if value != SCENARIO_SCHEMA_VERSION:
            raise SchemaVersionMismatch(
                f"Версия схемы {value!r}, поддерживается {SCENARIO_SCHEMA_VERSION}"
            )
        return int(value)

    def validate_style(self, value: Dict[str, Any]) -> StyleId:
        """Стиль должен существовать в реестре"""
        style = self.registry.get(int(value["id"]))
        if "name" in value and value["name"] != style.name:
            raise ValidationException(
                f"Имя стиля '{value['name']}' не совпадает с реестром ('{style.name}')"
            )
        return style

    def to_internal_value(self, data: Dict[str, Any]) -> Scenario:
        if not isinstance(data, dict):
            raise ValidationException("Сценарий должен быть JSON-объектом")
        self.validate_schema_version(data.get("schema_version"))
        try:
            map_data = data["map"]
            ego = data["ego"]
            agents: List[Agent] = [
                Agent(
                    kind=AgentKind(item["kind"]),
                    half_length=float(item["half_length"]),
                    half_width=float(item["half_width"]),
                    logged_trajectory=TrajectorySerializer.to_internal_value(item["trajectory"]),
                    lane_index=item.get("lane_index"),
                )
                for item in data["agents"]
            ]
            lights = [
                TrafficLightState(
                    stop_line=Polyline(np.array(item["stop_line"], dtype=np.float64)),
                    phase=tuple(LightPhase(p) for p in item["phase"]),
                )
                for item in data["lights"]
            ]
            return Scenario(
                geometry_seed=GeometrySeed(int(data["geometry_seed"])),
                style=self.validate_style(data["style"]),
                map_family=MapFamily(map_data["family"]),
                drivable=tuple(
                    Polygon(np.array(ring, dtype=np.float64)) for ring in map_data["drivable"]
                ),
                centerlines=tuple(
                    Polyline(np.array(v, dtype=np.float64)) for v in map_data["centerlines"]
                ),
                route_index=int(map_data["route_index"]),
                lights=tuple(lights),
                agents=tuple(agents),
                ego_history=TrajectorySerializer.to_internal_value(ego["history"]),
                ego_half_length=float(ego["half_length"]),
                ego_half_width=float(ego["half_width"]),
                expert=TrajectorySerializer.to_internal_value(data["expert"]),
                goal_command=GoalCommand(ego["goal_command"]),
            )
        except (KeyError, TypeError, ValueError) as error:
            raise ValidationException(f"Некорректный файл сценария: {error!r}") from error

    def dumps(self, scenario: Scenario, indent: Optional[int] = None) -> str:
        return json.dumps(
            self.to_representation(scenario),
            indent=indent,
            sort_keys=True,
            separators=(",", ": ") if indent else (",", ":"),
        )

    def write(self, scenario: Scenario, path: PathLike) -> None:
        try:
            Path(path).parent.mkdir(parents=True, exist_ok=True)
            Path(path).write_text(self.dumps(scenario, indent=1), encoding="utf-8")
        except OSError as error:
            raise ScenarioIOError(f"Не удалось записать {path}: {error}") from error

    def read(self, path: PathLike) -> Scenario:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as error:
            raise ScenarioIOError(f"Не удалось прочитать {path}: {error}") from error
        try:
            data = json.loads(text)
        except json.JSONDecodeError as error:
            raise ValidationException(f"{path}: некорректный JSON ({error})") from error
        return self.to_internal_value(data)
