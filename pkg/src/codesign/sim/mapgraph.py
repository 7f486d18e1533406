"""Topological street map: nodes, weighted edges, path planning, file format.

Map files are line oriented::

    # codesign-map v1
    node 0 depot 0.0 0.0
    node 1 intersection 120.0 0.0
    node 7 building 130.0 40.0 perimeter=160 floors=3
    edge 0 1 120.0
    edge 1 7 41.5 adv=b1,s2

Blank lines and ``#`` comments are ignored.  Errors name the offending line.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from ..errors import DomainError

NODE_KINDS = ("intersection", "building", "depot")
MAP_HEADER = "# codesign-map v1"


class MapFormatError(DomainError):
    def __init__(self, message: str, path=None, line: int | None = None):
        where = f"{path or '<map>'}:{line}: " if line is not None else (f"{path}: " if path else "")
        super().__init__(where + message)
        self.line = line


@dataclass(frozen=True)
class Node:
    id: int
    x: float
    y: float
    kind: str
    perimeter: float = 0.0
    floors: int = 0

    @property
    def workload(self) -> float:
        """Perimeter distance to cover for a full search: floors x perimeter (m)."""
        return self.floors * self.perimeter


@dataclass(frozen=True)
class Edge:
    u: int
    v: int
    length: float
    adversaries: frozenset = frozenset()

    @property
    def key(self) -> tuple[int, int]:
        return (min(self.u, self.v), max(self.u, self.v))


def edge_key(u: int, v: int) -> tuple[int, int]:
    return (u, v) if u < v else (v, u)


@dataclass
class MapGraph:
    nodes: dict[int, Node]
    edges: dict[tuple[int, int], Edge]
    _adj: dict[int, list[tuple[int, float]]] = field(default=None, repr=False, compare=False)
    _dist_cache: dict[int, dict[int, float]] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.nodes = dict(sorted(self.nodes.items()))
        self.edges = {e.key: Edge(*e.key, e.length, frozenset(e.adversaries)) for e in self.edges.values()}
        self.edges = dict(sorted(self.edges.items()))
        adj: dict[int, list[tuple[int, float]]] = {n: [] for n in self.nodes}
        for (u, v), e in self.edges.items():
            if u not in adj or v not in adj:
                raise DomainError(f"edge {u}-{v} references an unknown node")
            adj[u].append((v, e.length))
            adj[v].append((u, e.length))
        self._adj = {n: sorted(nb) for n, nb in adj.items()}

    # -- queries ---------------------------------------------------------------

    @property
    def depot(self) -> int:
        depots = [n.id for n in self.nodes.values() if n.kind == "depot"]
        if len(depots) != 1:
            raise DomainError(f"map must have exactly one depot, found {len(depots)}")
        return depots[0]

    @property
    def buildings(self) -> list[int]:
        return [n.id for n in self.nodes.values() if n.kind == "building"]

    def neighbors(self, u: int) -> list[tuple[int, float]]:
        return self._adj[u]

    def edge(self, u: int, v: int) -> Edge:
        return self.edges[edge_key(u, v)]

    def position(self, u: int) -> np.ndarray:
        n = self.nodes[u]
        return np.array([n.x, n.y])

    def extent(self) -> float:
        xy = np.array([[n.x, n.y] for n in self.nodes.values()])
        return float(max(np.ptp(xy[:, 0]), np.ptp(xy[:, 1]), 1.0))

    def straight_line(self, u: int, v: int) -> float:
        a, b = self.nodes[u], self.nodes[v]
        return math.hypot(a.x - b.x, a.y - b.y)

    def is_connected(self) -> bool:
        if not self.nodes:
            return False
        start = next(iter(self.nodes))
        seen, stack = {start}, [start]
        while stack:
            for v, _ in self._adj[stack.pop()]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        return len(seen) == len(self.nodes)

    def validate(self) -> None:
        if not self.nodes:
            raise DomainError("map has no nodes")
        _ = self.depot
        for n in self.nodes.values():
            if n.kind not in NODE_KINDS:
                raise DomainError(f"node {n.id}: unknown kind {n.kind!r}")
            if n.kind == "building" and (n.perimeter <= 0 or n.floors < 1):
                raise DomainError(f"building {n.id} needs perimeter > 0 and floors >= 1")
        for e in self.edges.values():
            if e.length <= 0:
                raise DomainError(f"edge {e.u}-{e.v}: length must be positive")
            if e.length < self.straight_line(e.u, e.v) * (1 - 1e-9) - 1e-9:
                raise DomainError(f"edge {e.u}-{e.v}: length {e.length} shorter than straight-line distance "
                                  f"{self.straight_line(e.u, e.v):.6g}")
        if not self.is_connected():
            raise DomainError("map is not connected")

    def with_annotations(self, annotations: dict[tuple[int, int], Iterable[str]]) -> "MapGraph":
        edges = {}
        for k, e in self.edges.items():
            extra = frozenset(annotations.get(k, ()))
            edges[k] = replace(e, adversaries=e.adversaries | extra)
        for k in annotations:
            if k not in self.edges:
                raise DomainError(f"annotation on missing edge {k[0]}-{k[1]}")
        return MapGraph(dict(self.nodes), edges)

    # -- shortest paths ------------------------------------------------------------

    def distances_from(self, source: int) -> dict[int, float]:
        """Unrestricted shortest-path distances from ``source`` (cached)."""
        if source not in self._dist_cache:
            dist = {source: 0.0}
            heap = [(0.0, source)]
            done = set()
            while heap:
                d, u = heapq.heappop(heap)
                if u in done:
                    continue
                done.add(u)
                for v, w in self._adj[u]:
                    nd = d + w
                    if nd < dist.get(v, math.inf):
                        dist[v] = nd
                        heapq.heappush(heap, (nd, v))
            self._dist_cache[source] = dist
        return self._dist_cache[source]

    def distance(self, u: int, v: int) -> float:
        return self.distances_from(v).get(u, math.inf)

    def reachable(self, source: int, blocked: Callable[[Edge], bool] | None = None) -> set[int]:
        """Nodes reachable from ``source`` without crossing a blocked edge."""
        seen = {source}
        stack = [source]
        while stack:
            u = stack.pop()
            for v, _ in self._adj[u]:
                if v not in seen and not (blocked is not None and blocked(self.edge(u, v))):
                    seen.add(v)
                    stack.append(v)
        return seen

    def shortest_path(self, source: int, target: int,
                      blocked: Callable[[Edge], bool] | None = None) -> tuple[list[int], float] | None:
        """Dijkstra with ties broken by the lexicographically smallest node sequence.

        Returns ``None`` when every route crosses a blocked edge.
        """
        if source not in self.nodes or target not in self.nodes:
            raise DomainError(f"unknown node in path query {source}->{target}")
        heap = [(0.0, (source,))]
        settled = set()
        while heap:
            d, path = heapq.heappop(heap)
            u = path[-1]
            if u in settled:
                continue
            settled.add(u)
            if u == target:
                return list(path), d
            for v, w in self._adj[u]:
                if v in settled:
                    continue
                if blocked is not None and blocked(self.edges[edge_key(u, v)]):
                    continue
                heapq.heappush(heap, (d + w, path + (v,)))
        return None

    def path_length(self, path: list[int]) -> float:
        return float(sum(self.edge(a, b).length for a, b in zip(path, path[1:])))

    # -- persistence ---------------------------------------------------------------

    def dumps(self) -> str:
        lines = [MAP_HEADER]
        for n in self.nodes.values():
            s = f"node {n.id} {n.kind} {float(n.x)!r} {float(n.y)!r}"
            if n.kind == "building":
                s += f" perimeter={float(n.perimeter)!r} floors={int(n.floors)}"
            lines.append(s)
        for e in self.edges.values():
            s = f"edge {e.u} {e.v} {float(e.length)!r}"
            if e.adversaries:
                s += " adv=" + ",".join(sorted(e.adversaries))
            lines.append(s)
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(self.dumps())

    @classmethod
    def loads(cls, text: str, path=None) -> "MapGraph":
        nodes: dict[int, Node] = {}
        edges: dict[tuple[int, int], Edge] = {}
        node_line: dict[int, int] = {}
        edge_line: dict[tuple[int, int], int] = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tok = line.split()
            try:
                if tok[0] == "node":
                    if len(tok) < 5:
                        raise ValueError("expected: node <id> <kind> <x> <y> [perimeter=..] [floors=..]")
                    nid, kind = int(tok[1]), tok[2]
                    if kind not in NODE_KINDS:
                        raise ValueError(f"unknown node kind {kind!r}")
                    if nid in nodes:
                        raise ValueError(f"duplicate node id {nid} (first defined on line {node_line[nid]})")
                    opts = _options(tok[5:])
                    unknown = set(opts) - {"perimeter", "floors"}
                    if unknown:
                        raise ValueError(f"unknown node options {sorted(unknown)}")
                    node = Node(nid, float(tok[3]), float(tok[4]), kind,
                                float(opts.get("perimeter", 0.0)), int(opts.get("floors", 0)))
                    if kind == "building" and (node.perimeter <= 0 or node.floors < 1):
                        raise ValueError("building needs perimeter > 0 and floors >= 1")
                    nodes[nid] = node
                    node_line[nid] = lineno
                elif tok[0] == "edge":
                    if len(tok) < 4:
                        raise ValueError("expected: edge <u> <v> <length> [adv=id,id]")
                    u, v, length = int(tok[1]), int(tok[2]), float(tok[3])
                    for n in (u, v):
                        if n not in nodes:
                            raise ValueError(f"edge references undefined node {n}")
                    if u == v:
                        raise ValueError("self-loop edges are not allowed")
                    if length <= 0:
                        raise ValueError("edge length must be positive")
                    straight = math.hypot(nodes[u].x - nodes[v].x, nodes[u].y - nodes[v].y)
                    if length < straight * (1 - 1e-9) - 1e-9:
                        raise ValueError(f"edge length {length} is shorter than the straight-line distance {straight:.6g}")
                    opts = _options(tok[4:])
                    adv = frozenset(a for a in opts.get("adv", "").split(",") if a)
                    k = edge_key(u, v)
                    if k in edges:
                        raise ValueError(f"duplicate edge {u}-{v} (first defined on line {edge_line[k]})")
                    edges[k] = Edge(k[0], k[1], length, adv)
                    edge_line[k] = lineno
                else:
                    raise ValueError(f"unknown record type {tok[0]!r}")
            except ValueError as exc:
                raise MapFormatError(str(exc), path, lineno) from None
        graph = cls(nodes, edges)
        depots = [n for n in nodes.values() if n.kind == "depot"]
        if len(depots) != 1:
            line = node_line[depots[1].id] if len(depots) > 1 else None
            raise MapFormatError(f"map must have exactly one depot, found {len(depots)}", path, line)
        if not graph.is_connected():
            raise MapFormatError("map is not connected", path)
        return graph

    @classmethod
    def load(cls, path) -> "MapGraph":
        return cls.loads(Path(path).read_text(), path)


def _options(tokens: list[str]) -> dict[str, str]:
    out = {}
    for t in tokens:
        if "=" not in t:
            raise ValueError(f"expected key=value, got {t!r}")
        k, v = t.split("=", 1)
        out[k] = v
    return out


def load_map(path) -> MapGraph:
    return MapGraph.load(path)


def generate_map(seed: int, rows: int = 4, cols: int = 4, spacing: float = 150.0,
                 n_buildings: int = 8, diagonal_prob: float = 0.3, jitter: float = 0.15,
                 detour: float = 0.1) -> MapGraph:
    """Lattice street grid with random diagonals, buildings hanging off intersections,
    and a depot at the (0, 0) corner.

    Edge lengths are straight-line distance times (1 + U[0, detour]).
    """
    if rows < 2 or cols < 2:
        raise DomainError("lattice needs at least 2 x 2 intersections")
    if n_buildings > rows * cols:
        raise DomainError("more buildings than intersections")
    rng = np.random.default_rng(seed)
    nodes: dict[int, Node] = {}
    depot_id = 0
    nodes[depot_id] = Node(depot_id, -0.5 * spacing, -0.5 * spacing, "depot")

    def grid_id(r, c):
        return 1 + r * cols + c

    for r in range(rows):
        for c in range(cols):
            dx, dy = rng.uniform(-jitter, jitter, size=2) * spacing
            nodes[grid_id(r, c)] = Node(grid_id(r, c), c * spacing + dx, r * spacing + dy, "intersection")
    pairs = []
    for r in range(rows):
        for c in range(cols):
            if c + 1 < cols:
                pairs.append((grid_id(r, c), grid_id(r, c + 1)))
            if r + 1 < rows:
                pairs.append((grid_id(r, c), grid_id(r + 1, c)))
            if r + 1 < rows and c + 1 < cols and rng.random() < diagonal_prob:
                if rng.random() < 0.5:
                    pairs.append((grid_id(r, c), grid_id(r + 1, c + 1)))
                else:
                    pairs.append((grid_id(r, c + 1), grid_id(r + 1, c)))
    pairs.append((depot_id, grid_id(0, 0)))
    hosts = rng.choice(rows * cols, size=n_buildings, replace=False)
    next_id = 1 + rows * cols
    for h in sorted(int(x) for x in hosts):
        host = nodes[1 + h]
        ang = rng.uniform(0, 2 * np.pi)
        off = rng.uniform(0.2, 0.3) * spacing
        bid = next_id
        next_id += 1
        nodes[bid] = Node(bid, host.x + off * np.cos(ang), host.y + off * np.sin(ang), "building",
                          perimeter=float(np.round(rng.uniform(80, 200), 1)), floors=int(rng.integers(1, 5)))
        pairs.append((host.id, bid))
    edges = {}
    for u, v in pairs:
        a, b = nodes[u], nodes[v]
        straight = math.hypot(a.x - b.x, a.y - b.y)
        length = float(np.round(straight * (1 + rng.uniform(0, detour)) + 1e-3, 3))
        edges[edge_key(u, v)] = Edge(*edge_key(u, v), length)
    graph = MapGraph(nodes, edges)
    graph.validate()
    return graph
