"""Scenario data model, canonical JSON format, validation and domain selection."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, replace
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .geometry import PolylineSet

SCENARIO_SUFFIX = ".scenario.json"


class ScenarioFormatError(ValueError):
    """Input could not be parsed as a scenario document."""


class ScenarioValidationError(ValueError):
    """A parsed scenario violates one of the data model invariants."""


@dataclass(frozen=True)
class Vec2:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError("Vec2 components must be finite")


@dataclass(frozen=True)
class AgentState:
    position: Vec2
    heading: float
    velocity: Vec2
    valid: bool


class AgentKind(str, enum.Enum):
    VEHICLE = "vehicle"
    PEDESTRIAN = "pedestrian"
    CYCLIST = "cyclist"


class SignalState(str, enum.Enum):
    GREEN = "green"
    YELLOW = "yellow"
    RED = "red"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class AgentMeta:
    id: int
    kind: AgentKind = AgentKind.VEHICLE
    length: float = 4.5
    width: float = 2.0
    is_ego: bool = False
    in_eval_set: bool = False
    is_causal: bool = False


@dataclass(frozen=True)
class MapData:
    """Road edges and lane centerlines as ``(n, 2)`` point arrays.

    Drivable area lies on the left of every road edge's traversal direction.
    """

    road_edges: tuple[np.ndarray, ...] = ()
    lane_centers: tuple[np.ndarray, ...] = ()

    @cached_property
    def edge_set(self) -> PolylineSet:
        if not self.road_edges:
            raise ValueError("no road edges")
        return PolylineSet(self.road_edges)

    @cached_property
    def lane_set(self) -> PolylineSet | None:
        return PolylineSet(self.lane_centers) if self.lane_centers else None


@dataclass(frozen=True)
class SignalTrack:
    position: Vec2
    controlled_lane: int
    states: tuple[SignalState, ...]


@dataclass(frozen=True, eq=False)
class Scenario:
    """A logged scene: map, signals and ground-truth tracks of every agent.

    Tracks are stored time-major: ``position`` has shape ``(T, A, 2)`` with
    ``T = history_len + future_len`` and agents ordered as in ``agents``.
    """

    id: str
    map: MapData
    signals: tuple[SignalTrack, ...]
    agents: tuple[AgentMeta, ...]
    position: np.ndarray
    heading: np.ndarray
    velocity: np.ndarray
    valid: np.ndarray
    dt: float = 0.1
    history_len: int = 11
    future_len: int = 80

    def __post_init__(self):
        for name in ("position", "heading", "velocity", "valid"):
            arr = np.array(getattr(self, name), dtype=bool if name == "valid" else float)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def total_len(self) -> int:
        return self.history_len + self.future_len

    @property
    def current_step(self) -> int:
        """Index of the last observed (history) timestep."""
        return self.history_len - 1

    @cached_property
    def agent_ids(self) -> tuple[int, ...]:
        return tuple(a.id for a in self.agents)

    @cached_property
    def _index(self) -> dict[int, int]:
        return {aid: i for i, aid in enumerate(self.agent_ids)}

    def index_of(self, agent_id: int) -> int:
        try:
            return self._index[agent_id]
        except KeyError:
            raise KeyError(f"agent {agent_id} not in scenario {self.id}") from None

    @cached_property
    def ego_index(self) -> int:
        return next(i for i, a in enumerate(self.agents) if a.is_ego)

    @property
    def ego_id(self) -> int:
        return self.agents[self.ego_index].id

    @cached_property
    def lengths(self) -> np.ndarray:
        return np.array([a.length for a in self.agents])

    @cached_property
    def widths(self) -> np.ndarray:
        return np.array([a.width for a in self.agents])

    @cached_property
    def speed(self) -> np.ndarray:
        return np.linalg.norm(self.velocity, axis=-1)

    @cached_property
    def signal_states(self) -> np.ndarray:
        """Signal states as an ``(n_signals, T)`` array of strings."""
        if not self.signals:
            return np.empty((0, self.total_len), dtype=object)
        return np.array([[s.value for s in sig.states] for sig in self.signals], dtype=object)

    def state(self, agent_id: int, t: int) -> AgentState:
        i = self.index_of(agent_id)
        p, v = self.position[t, i], self.velocity[t, i]
        return AgentState(Vec2(*map(float, p)), float(self.heading[t, i]), Vec2(*map(float, v)), bool(self.valid[t, i]))

    def track(self, agent_id: int) -> list[AgentState]:
        return [self.state(agent_id, t) for t in range(self.total_len)]

    def with_agents(self, agents: Sequence[AgentMeta]) -> "Scenario":
        return replace(self, agents=tuple(agents))


# ---------------------------------------------------------------- validation


def validate(scenario: Scenario) -> Scenario:
    """Check every invariant, raising on the first violation."""
    s = scenario
    if not (s.dt > 0 and math.isfinite(s.dt)):
        raise ScenarioValidationError("dt must be positive")
    if s.history_len < 1 or s.future_len < 1:
        raise ScenarioValidationError("history_len and future_len must be at least 1")
    if not s.agents:
        raise ScenarioValidationError("scenario has no agents")
    ids = [a.id for a in s.agents]
    if len(set(ids)) != len(ids):
        raise ScenarioValidationError("duplicate agent ids")
    n_ego = sum(a.is_ego for a in s.agents)
    if n_ego > 1:
        raise ScenarioValidationError("multiple ego agents")
    if n_ego == 0:
        raise ScenarioValidationError("no ego agent")
    for a in s.agents:
        if a.is_causal and a.is_ego:
            raise ScenarioValidationError(f"agent {a.id} is both ego and causal")
        if not (a.length > 0 and a.width > 0):
            raise ScenarioValidationError(f"agent {a.id} has non-positive extents")
    n_t, n_a = s.total_len, len(s.agents)
    if s.position.shape != (n_t, n_a, 2) or s.velocity.shape != (n_t, n_a, 2):
        raise ScenarioValidationError("track length differs from history_len + future_len")
    if s.heading.shape != (n_t, n_a) or s.valid.shape != (n_t, n_a):
        raise ScenarioValidationError("track length differs from history_len + future_len")
    if not s.valid[:, s.ego_index].all():
        raise ScenarioValidationError("ego track must be valid at every timestep")
    v = s.valid
    if not (np.isfinite(s.position[v]).all() and np.isfinite(s.velocity[v]).all() and np.isfinite(s.heading[v]).all()):
        raise ScenarioValidationError("non-finite state values")
    h = s.heading[v]
    if np.any(h <= -np.pi) or np.any(h > np.pi):
        raise ScenarioValidationError("heading not wrapped to (-pi, pi]")
    for kind, lines in (("road edge", s.map.road_edges), ("lane center", s.map.lane_centers)):
        for line in lines:
            if len(line) < 2:
                raise ScenarioValidationError(f"{kind} polyline has fewer than 2 points")
            if np.any(np.linalg.norm(np.diff(line, axis=0), axis=1) == 0):
                raise ScenarioValidationError(f"{kind} polyline has a zero-length segment")
    for sig in s.signals:
        if len(sig.states) != n_t:
            raise ScenarioValidationError("signal states length differs from scenario length")
    return s


# ------------------------------------------------------------- serialization


def _floats(arr) -> list:
    return [float(x) for x in np.asarray(arr, dtype=float).ravel()]


def _points(arr) -> list:
    return [[float(x), float(y)] for x, y in np.asarray(arr, dtype=float)]


def scenario_to_dict(s: Scenario) -> dict:
    agents = []
    for i, a in enumerate(s.agents):
        agents.append({
            "meta": {
                "id": a.id,
                "kind": a.kind.value,
                "length": float(a.length),
                "width": float(a.width),
                "is_ego": a.is_ego,
                "in_eval_set": a.in_eval_set,
                "is_causal": a.is_causal,
            },
            "track": {
                "x": _floats(s.position[:, i, 0]),
                "y": _floats(s.position[:, i, 1]),
                "heading": _floats(s.heading[:, i]),
                "vx": _floats(s.velocity[:, i, 0]),
                "vy": _floats(s.velocity[:, i, 1]),
                "valid": [bool(x) for x in s.valid[:, i]],
            },
        })
    return {
        "id": s.id,
        "dt": float(s.dt),
        "history_len": s.history_len,
        "future_len": s.future_len,
        "map": {
            "road_edges": [_points(p) for p in s.map.road_edges],
            "lane_centers": [_points(p) for p in s.map.lane_centers],
        },
        "signals": [
            {
                "position": [sig.position.x, sig.position.y],
                "controlled_lane": sig.controlled_lane,
                "states": [st.value for st in sig.states],
            }
            for sig in s.signals
        ],
        "agents": agents,
    }


def save_scenario(scenario: Scenario) -> bytes:
    """Canonical serialization: fixed key order, shortest round-trip floats."""
    text = json.dumps(scenario_to_dict(scenario), separators=(",", ":"), allow_nan=False)
    return (text + "\n").encode("utf-8")


def _polylines(raw) -> tuple[np.ndarray, ...]:
    out = []
    for line in raw:
        arr = np.array(line, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise ScenarioFormatError("polyline must be a list of [x, y] points")
        arr.flags.writeable = False
        out.append(arr)
    return tuple(out)


def scenario_from_dict(doc: dict) -> Scenario:
    try:
        agents, cols = [], []
        for entry in doc["agents"]:
            m = entry["meta"]
            agents.append(AgentMeta(
                id=int(m["id"]),
                kind=AgentKind(m["kind"]),
                length=float(m["length"]),
                width=float(m["width"]),
                is_ego=bool(m["is_ego"]),
                in_eval_set=bool(m["in_eval_set"]),
                is_causal=bool(m["is_causal"]),
            ))
            tr = entry["track"]
            cols.append([tr[k] for k in ("x", "y", "heading", "vx", "vy", "valid")])
        lengths = {len(c) for col in cols for c in col}
        if len(lengths) > 1:
            raise ScenarioValidationError("track length differs from history_len + future_len")
        n_t = lengths.pop() if lengths else 0
        data = np.array([col[:5] for col in cols], dtype=float).reshape(len(cols), 5, n_t)
        valid = np.array([col[5] for col in cols], dtype=bool).reshape(len(cols), n_t)
        mp = doc["map"]
        signals = tuple(
            SignalTrack(
                position=Vec2(float(sig["position"][0]), float(sig["position"][1])),
                controlled_lane=int(sig["controlled_lane"]),
                states=tuple(SignalState(x) for x in sig["states"]),
            )
            for sig in doc["signals"]
        )
        return Scenario(
            id=str(doc["id"]),
            dt=float(doc["dt"]),
            history_len=int(doc["history_len"]),
            future_len=int(doc["future_len"]),
            map=MapData(_polylines(mp["road_edges"]), _polylines(mp["lane_centers"])),
            signals=signals,
            agents=tuple(agents),
            position=data[:, 0:2].transpose(2, 0, 1),
            heading=data[:, 2].T,
            velocity=data[:, 3:5].transpose(2, 0, 1),
            valid=valid.T,
        )
    except ScenarioValidationError:
        raise
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise ScenarioFormatError(f"malformed scenario: {exc!r}") from exc


def load_scenario(data: bytes | str) -> Scenario:
    """Parse and validate a serialized scenario."""
    try:
        doc = json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ScenarioFormatError(f"not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ScenarioFormatError("top-level document must be an object")
    return validate(scenario_from_dict(doc))


def read_scenario(path) -> Scenario:
    return load_scenario(Path(path).read_bytes())


def write_scenario(path, scenario: Scenario) -> None:
    Path(path).write_bytes(save_scenario(scenario))


def read_corpus(directory) -> list[Scenario]:
    """Load every ``*.scenario.json`` in a directory, sorted by file name."""
    files = sorted(Path(directory).glob("*" + SCENARIO_SUFFIX))
    return [read_scenario(f) for f in files]


# ------------------------------------------------------------ domain selection


class Domain(str, enum.Enum):
    EVAL_SET = "eval"
    CAUSAL = "causal"
    UNION = "union"


@dataclass(frozen=True)
class DomainSelector:
    base: Domain = Domain.UNION
    include_ego: bool = True


def select_domain(scenario: Scenario, sel: DomainSelector) -> tuple[int, ...]:
    """Agent ids of the requested evaluation domain, sorted."""
    if sel.base is Domain.EVAL_SET:
        ids = {a.id for a in scenario.agents if a.in_eval_set}
    elif sel.base is Domain.CAUSAL:
        ids = {a.id for a in scenario.agents if a.is_causal}
    else:
        ids = {a.id for a in scenario.agents if a.in_eval_set or a.is_causal}
    if not sel.include_ego:
        ids.discard(scenario.ego_id)
    return tuple(sorted(ids))


def sparse_causal_agents(scenario: Scenario, min_fraction: float = 0.5) -> tuple[int, ...]:
    """Causal agents whose ground truth is valid on fewer than ``min_fraction`` of future steps."""
    future = scenario.valid[scenario.history_len:]
    out = []
    for i, a in enumerate(scenario.agents):
        if a.is_causal and future[:, i].mean() < min_fraction:
            out.append(a.id)
    return tuple(out)


# --------------------------------------------------------------- causal labels


def load_causal_labels(data: bytes | str) -> set[tuple[str, int]]:
    """Parse a JSON array of ``{scenario_id, agent_id}`` objects."""
    try:
        doc = json.loads(data)
        return {(str(d["scenario_id"]), int(d["agent_id"])) for d in doc}
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ScenarioFormatError(f"malformed causal label file: {exc!r}") from exc


def apply_causal_labels(scenario: Scenario, labels: Iterable[tuple[str, int]]) -> Scenario:
    """Flag the labelled agents of this scenario as causal (existing flags are kept)."""
    wanted = {aid for sid, aid in labels if sid == scenario.id}
    if not wanted:
        return scenario
    unknown = wanted - set(scenario.agent_ids)
    if unknown:
        raise ScenarioValidationError(f"causal labels reference unknown agents {sorted(unknown)}")
    agents = [replace(a, is_causal=True) if a.id in wanted else a for a in scenario.agents]
    return validate(scenario.with_agents(agents))
