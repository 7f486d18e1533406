"""Mission scenarios: suspect buildings, the true goal, adversaries, roster.

Scenario files are line oriented::

    # codesign-scenario v1
    targets 17 18 20 23
    goal 20
    time_limit 1500
    platoon UAV 2
    platoon UGV 2
    adversary b1 bomb edge 3 4
    adversary s1 smoke edge 5 9
    adversary d1 dynamic patrol 6 7 11
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import DomainError
from .mapgraph import MapFormatError, MapGraph, edge_key

ADVERSARY_KINDS = ("smoke", "bomb", "dynamic")
PLATOON_KINDS = ("UAV", "UGV")
SCENARIO_HEADER = "# codesign-scenario v1"


@dataclass
class AdversaryState:
    id: str
    kind: str
    path: tuple[int, ...]  # the edge (u, v) for static kinds, the patrol route for dynamic
    alive: bool = True

    def __post_init__(self):
        self.path = tuple(int(n) for n in self.path)
        if self.kind not in ADVERSARY_KINDS:
            raise DomainError(f"adversary {self.id}: unknown kind {self.kind!r}")
        if self.kind == "dynamic" and len(self.path) < 2:
            raise DomainError(f"dynamic adversary {self.id} needs a patrol path of >= 2 nodes")
        if self.kind != "dynamic" and len(self.path) != 2:
            raise DomainError(f"{self.kind} adversary {self.id} sits on exactly one edge (2 nodes)")

    @property
    def edges(self) -> list[tuple[int, int]]:
        return [edge_key(a, b) for a, b in zip(self.path, self.path[1:])]

    def location(self, graph: MapGraph) -> np.ndarray:
        """Static: edge midpoint.  Dynamic: centroid of the patrolled nodes."""
        return np.mean([graph.position(n) for n in self.path], axis=0)


@dataclass(frozen=True)
class PlatoonSpec:
    kind: str
    units: int

    def __post_init__(self):
        if self.kind not in PLATOON_KINDS:
            raise DomainError(f"unknown platoon kind {self.kind!r}")
        if self.units < 1:
            raise DomainError("a platoon needs at least one unit")


@dataclass
class Scenario:
    targets: tuple[int, ...]
    goal: int
    time_limit: float
    roster: tuple[PlatoonSpec, ...]
    adversaries: tuple[AdversaryState, ...] = field(default_factory=tuple)
    name: str = ""

    def __post_init__(self):
        self.targets = tuple(sorted(int(t) for t in self.targets))
        if len(set(self.targets)) != len(self.targets):
            raise DomainError("duplicate target building")
        if not self.targets:
            raise DomainError("scenario needs at least one target")
        if self.goal not in self.targets:
            raise DomainError(f"goal {self.goal} is not among the targets {list(self.targets)}")
        if not self.time_limit > 0:
            raise DomainError("time_limit must be positive")
        ids = [a.id for a in self.adversaries]
        if len(set(ids)) != len(ids):
            raise DomainError("duplicate adversary id")

    def validate_against(self, graph: MapGraph) -> None:
        for t in self.targets:
            if t not in graph.nodes or graph.nodes[t].kind != "building":
                raise DomainError(f"target {t} is not a building node of the map")
        for a in self.adversaries:
            for k in a.edges:
                if k not in graph.edges:
                    raise DomainError(f"adversary {a.id} references missing edge {k[0]}-{k[1]}")
        known = {a.id for a in self.adversaries}
        for e in graph.edges.values():
            missing = e.adversaries - known
            if missing:
                raise DomainError(f"edge {e.u}-{e.v} is annotated with undeclared adversaries {sorted(missing)}")

    def annotate(self, graph: MapGraph) -> MapGraph:
        """Copy of ``graph`` with every adversary recorded on the edges it covers."""
        self.validate_against(graph)
        ann: dict[tuple[int, int], set[str]] = {}
        for a in self.adversaries:
            for k in a.edges:
                ann.setdefault(k, set()).add(a.id)
        return graph.with_annotations(ann)

    @property
    def n_robots(self) -> int:
        return sum(p.units for p in self.roster)

    # -- persistence -------------------------------------------------------------

    def dumps(self) -> str:
        lines = [SCENARIO_HEADER]
        if self.name:
            lines.append(f"name {self.name}")
        lines.append("targets " + " ".join(str(t) for t in self.targets))
        lines.append(f"goal {self.goal}")
        lines.append(f"time_limit {float(self.time_limit)!r}")
        for p in self.roster:
            lines.append(f"platoon {p.kind} {p.units}")
        for a in self.adversaries:
            how = "patrol" if a.kind == "dynamic" else "edge"
            lines.append(f"adversary {a.id} {a.kind} {how} " + " ".join(str(n) for n in a.path))
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(self.dumps())

    @classmethod
    def loads(cls, text: str, path=None) -> "Scenario":
        fields_: dict[str, object] = {}
        seen: dict[str, int] = {}
        roster, advs = [], []
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tok = line.split()
            try:
                key = tok[0]
                if key in ("targets", "goal", "time_limit", "name"):
                    if key in seen:
                        raise ValueError(f"{key} given twice (first on line {seen[key]})")
                    seen[key] = lineno
                    if len(tok) < 2:
                        raise ValueError(f"{key} needs a value")
                if key == "targets":
                    fields_["targets"] = tuple(int(t) for t in tok[1:])
                elif key == "goal":
                    fields_["goal"] = int(tok[1])
                elif key == "time_limit":
                    fields_["time_limit"] = float(tok[1])
                    if not fields_["time_limit"] > 0:
                        raise ValueError("time_limit must be positive")
                elif key == "name":
                    fields_["name"] = tok[1]
                elif key == "platoon":
                    if len(tok) != 3:
                        raise ValueError("expected: platoon <UAV|UGV> <units>")
                    roster.append(PlatoonSpec(tok[1], int(tok[2])))
                elif key == "adversary":
                    if len(tok) < 5 or tok[3] not in ("edge", "patrol"):
                        raise ValueError("expected: adversary <id> <kind> edge|patrol <nodes...>")
                    advs.append(AdversaryState(tok[1], tok[2], tuple(int(n) for n in tok[4:])))
                else:
                    raise ValueError(f"unknown record type {key!r}")
            except (ValueError, DomainError) as exc:
                raise MapFormatError(str(exc), path, lineno) from None
        for required in ("targets", "goal", "time_limit"):
            if required not in fields_:
                raise MapFormatError(f"missing required record {required!r}", path)
        try:
            return cls(roster=tuple(roster), adversaries=tuple(advs), **fields_)
        except DomainError as exc:
            # point at the record that carries the broken invariant
            msg = str(exc)
            line = seen.get("goal") if "goal" in msg else seen.get("targets")
            raise MapFormatError(msg, path, line) from None

    @classmethod
    def load(cls, path) -> "Scenario":
        return cls.loads(Path(path).read_text(), path)


def load_scenario(path) -> Scenario:
    return Scenario.load(path)


def generate_scenario(graph: MapGraph, seed: int, n_targets: tuple[int, int] = (5, 8),
                      uav_platoons: int = 2, ugv_platoons: int = 2, units: int = 2,
                      n_bombs: int = 2, n_smoke: int = 2, n_dynamic: int = 1,
                      time_limit: float = 1500.0, name: str = "") -> Scenario:
    """Random scenario on ``graph``; adversaries sit on street edges only."""
    rng = np.random.default_rng(seed)
    buildings = graph.buildings
    k = int(rng.integers(n_targets[0], n_targets[1] + 1))
    k = min(k, len(buildings))
    targets = sorted(int(b) for b in rng.choice(buildings, size=k, replace=False))
    goal = int(rng.choice(targets))
    street = [key for key, e in graph.edges.items()
              if graph.nodes[key[0]].kind == "intersection" and graph.nodes[key[1]].kind == "intersection"]
    picks = rng.permutation(len(street))
    advs = []
    i = 0
    for kind, count, prefix in (("bomb", n_bombs, "b"), ("smoke", n_smoke, "s")):
        for j in range(count):
            advs.append(AdversaryState(f"{prefix}{j + 1}", kind, street[picks[i]]))
            i += 1
    for j in range(n_dynamic):
        # patrol: a two-edge walk through the street grid
        a, b = street[picks[i]]
        i += 1
        nxt = [v for v, _ in graph.neighbors(b) if v != a and graph.nodes[v].kind == "intersection"]
        route = (a, b, int(nxt[int(rng.integers(len(nxt)))])) if nxt else (a, b)
        advs.append(AdversaryState(f"d{j + 1}", "dynamic", route))
    roster = tuple([PlatoonSpec("UAV", units)] * uav_platoons + [PlatoonSpec("UGV", units)] * ugv_platoons)
    return Scenario(tuple(targets), goal, time_limit, roster, tuple(advs), name=name)
