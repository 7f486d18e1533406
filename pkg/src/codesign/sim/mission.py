"""Event-driven search-and-rescue mission on a map graph.

Time advances from event to event (arrival at a node, search completion,
range exhaustion, end of a hold, time limit) so every timeline is exact.
Decisions are requested whenever some platoon is idle; the lowest-index
idle platoon acts first.
"""
from __future__ import annotations

import copy
import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import DomainError
from ..morphology import TalentVector
from ..pareto import nondominated_filter
from .mapgraph import Edge, MapGraph
from .scenario import AdversaryState, Scenario

PATH_MODES = ("aggressive", "normal", "cautious")
EPS = 1e-9

IDLE, MOVING, SEARCHING, WAITING, LOST = "idle", "moving", "searching", "waiting", "lost"

# adversary kinds each path mode refuses to cross
_BLOCKED_KINDS = {
    "aggressive": frozenset(),
    "normal": frozenset({"bomb", "dynamic"}),
    "cautious": frozenset({"bomb", "dynamic", "smoke"}),
}

UAV_FEATURES = 5  # x, y, range, type, goal distance
UGV_FEATURES = 6  # x, y, range, health, type, goal distance
BLD_FEATURES = 5  # x, y, probability, indoor progress, outdoor progress
ACT_FEATURES = 4  # x, y, type, range
ADV_FEATURES = 3  # x, y, type
MISSION_FEATURES = 3  # remaining time, remaining UAV platoons, remaining UGV platoons
_ADV_CODE = {"smoke": 1.0 / 3.0, "bomb": 2.0 / 3.0, "dynamic": 1.0}


@dataclass(frozen=True)
class SimConfig:
    ugv_speed: float = 3.0  # m/s
    ugv_range: float = 50_000.0  # m
    ugv_indoor_rate: float = 1.0  # m of workload per second per UGV
    smoke_factor: float = 0.5  # multiplies UAV speed on smoke edges
    stochastic_engagement: bool = False
    engagement_p: float = 0.5
    hold_time: float = 10.0  # s a platoon waits after a wasted decision
    range_scale: float = 10_000.0  # m, feature normalization
    talent_scale: tuple[float, float, float] = (5.0, 15.0, 20_000.0)

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        d = dict(d)
        if "talent_scale" in d:
            d["talent_scale"] = tuple(d["talent_scale"])
        return cls(**d)


@dataclass(frozen=True)
class TacticalAction:
    pareto_node: int
    path_mode: str

    def __post_init__(self):
        if self.path_mode not in PATH_MODES:
            raise DomainError(f"unknown path mode {self.path_mode!r}")


def blocked_edge_test(mode: str, adversaries: dict[str, AdversaryState]):
    kinds = _BLOCKED_KINDS[mode]
    if not kinds:
        return None

    def blocked(e: Edge) -> bool:
        for aid in e.adversaries:
            a = adversaries.get(aid)
            if a is not None and a.alive and a.kind in kinds:
                return True
        return False

    return blocked


def plan_path(graph: MapGraph, source: int, target: int, mode: str,
              adversaries: dict[str, AdversaryState] | None = None) -> tuple[list[int], float] | None:
    """Shortest admissible route for ``mode``; ``None`` when unreachable.

    Edge annotations are read against ``adversaries`` (id -> state); dead
    adversaries never block.  Without a mapping, annotations are ignored.
    """
    if mode not in PATH_MODES:
        raise DomainError(f"unknown path mode {mode!r}")
    blocked = blocked_edge_test(mode, adversaries or {})
    return graph.shortest_path(source, target, blocked)


def pareto_nodes(graph: MapGraph, targets, probs) -> list[int]:
    """Non-dominated nodes under probability-weighted travel distance to every target.

    Targets with zero probability contribute no objective.  Every remaining
    target is returned as well (its own distance is zero).
    """
    targets = list(targets)
    probs = np.asarray(probs, dtype=float)
    if len(targets) != len(probs):
        raise DomainError("targets and probs differ in length")
    if len(targets) and abs(probs.sum() - 1.0) > 1e-9:
        raise DomainError(f"probabilities must sum to 1, got {probs.sum()}")
    live = [(t, p) for t, p in zip(targets, probs) if p > 0]
    nodes = list(graph.nodes)
    cost = np.empty((len(nodes), len(live)))
    for j, (t, p) in enumerate(live):
        dist = graph.distances_from(t)
        cost[:, j] = [p * dist.get(k, math.inf) for k in nodes]
    keep = set(nodes[i] for i in nondominated_filter(-cost))
    keep.update(t for t, _ in live)
    return sorted(keep)


def compute_reward(success: bool, elapsed: float, time_limit: float, surviving: int, initial: int) -> float:
    """Success: time score (1 - elapsed / T_max) plus survival fraction.  Failure: -1."""
    if not success:
        return -1.0
    tau = 1.0 - min(max(elapsed / time_limit, 0.0), 1.0)
    return tau + surviving / initial


def update_probabilities(probs: dict[int, float], building: int, is_goal: bool) -> dict[int, float]:
    """New target probabilities after a completed search of ``building``."""
    if building not in probs or probs[building] == 0.0:
        raise DomainError(f"building {building} is not an unsearched target")
    if is_goal:
        return {t: (1.0 if t == building else 0.0) for t in probs}
    remaining = [t for t, p in probs.items() if p > 0 and t != building]
    share = 1.0 / len(remaining) if remaining else 0.0
    return {t: (share if t in remaining else 0.0) for t in probs}


@dataclass
class Platoon:
    index: int
    kind: str
    units: int
    initial_units: int
    node: int
    range_remaining: float
    initial_range: float
    status: str = IDLE
    goal: int | None = None
    path: list[int] = field(default_factory=list)  # nodes still ahead, path[0] = next node
    edge_progress: float = 0.0  # m along the edge node -> path[0]
    distance_traveled: float = 0.0
    hold_until: float = 0.0
    search_target: int | None = None

    @property
    def health(self) -> float:
        return self.units / self.initial_units if self.kind == "UGV" else 1.0

    @property
    def lost(self) -> bool:
        return self.status == LOST


@dataclass(frozen=True)
class MissionState:
    """Observation for the acting platoon plus bookkeeping for masking and logging."""

    time: float
    mission: np.ndarray  # (3,)
    uav: np.ndarray  # (N_uav, 5)
    ugv: np.ndarray  # (N_ugv, 6)
    buildings: np.ndarray  # (N_bld, 5), one row per Pareto node
    acting: np.ndarray  # (4,)
    adversaries: np.ndarray  # (N_adv, 3)
    talents: np.ndarray  # (3,) normalized
    pareto_nodes: tuple[int, ...]
    action_mask: np.ndarray  # (3 * N_bld,) bool, mode-major
    acting_platoon: int | None
    probabilities: dict
    done: bool


@dataclass
class Outcome:
    success: bool
    elapsed: float
    time_limit: float
    surviving: int
    initial: int

    @property
    def reward(self) -> float:
        return compute_reward(self.success, self.elapsed, self.time_limit, self.surviving, self.initial)


class Mission:
    """One episode.  Construct, read ``state``, call ``step`` until done."""

    def __init__(self, graph: MapGraph, scenario: Scenario, talents: TalentVector,
                 config: SimConfig | None = None, seed: int = 0):
        self.config = config or SimConfig()
        self.scenario = scenario
        self.graph = scenario.annotate(graph)
        self.talents = talents
        self.rng = np.random.default_rng(seed)
        self.adversaries = {a.id: copy.copy(a) for a in scenario.adversaries}
        self.time = 0.0
        self.time_limit = float(scenario.time_limit)
        depot = self.graph.depot
        self.platoons: list[Platoon] = []
        for i, spec in enumerate(scenario.roster):
            rng_m = talents.flight_range if spec.kind == "UAV" else self.config.ugv_range
            self.platoons.append(Platoon(i, spec.kind, spec.units, spec.units, depot, rng_m, rng_m))
        self.initial_robots = scenario.n_robots
        self.casualties = 0
        self.probs = {t: 1.0 / len(scenario.targets) for t in scenario.targets}
        self.outdoor = {t: 0.0 for t in scenario.targets}
        self.indoor = {t: 0.0 for t in scenario.targets}
        self.localized = False
        self.done = False
        self.success = False
        self.acting: int | None = None
        self.decisions = 0
        self.events: list[tuple] = []
        self._ugv_roster = any(p.kind == "UGV" for p in self.platoons)
        self._scale = self.graph.extent()
        self._origin = self.graph.position(depot)
        self._pareto: list[int] = []
        self._log("start", None, depot, "")
        self._advance()

    # -- public API ----------------------------------------------------------------

    @property
    def state(self) -> MissionState:
        return self._observe()

    @property
    def surviving(self) -> int:
        return sum(p.units for p in self.platoons if not p.lost)

    @property
    def outcome(self) -> Outcome:
        return Outcome(self.success, self.time, self.time_limit, self.surviving, self.initial_robots)

    def decode_action(self, index: int) -> TacticalAction:
        n = len(self._pareto)
        if not 0 <= index < 3 * n:
            raise DomainError(f"action index {index} outside [0, {3 * n})")
        return TacticalAction(self._pareto[index % n], PATH_MODES[index // n])

    def encode_action(self, action: TacticalAction) -> int:
        return PATH_MODES.index(action.path_mode) * len(self._pareto) + self._pareto.index(action.pareto_node)

    def step(self, action) -> tuple[MissionState, float, bool]:
        if self.done:
            raise DomainError("step() called on a finished mission")
        if isinstance(action, (int, np.integer)):
            action = self.decode_action(int(action))
        if action.pareto_node not in self._pareto:
            raise DomainError(f"node {action.pareto_node} is not a current Pareto node")
        p = self.platoons[self.acting]
        self.decisions += 1
        self._assign(p, action)
        self._advance()
        reward = self.outcome.reward if self.done else 0.0
        return self.state, reward, self.done

    def write_log(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with Path(path).open("w", newline="") as fh:
            fh.write("# schema_version=1\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time", "event", "platoon", "node", "detail"])
            for row in self.events:
                w.writerow([repr(row[0]), *row[1:]])

    # -- internals ---------------------------------------------------------------------

    def _log(self, event, platoon, node, detail=""):
        self.events.append((self.time, event, "" if platoon is None else platoon, "" if node is None else node, detail))

    def _speed(self, p: Platoon) -> float:
        if p.kind == "UGV":
            return self.config.ugv_speed
        v = self.talents.cruising_speed
        if p.path:
            e = self.graph.edge(p.node, p.path[0])
            if any(self.adversaries[a].alive and self.adversaries[a].kind == "smoke" for a in e.adversaries):
                v *= self.config.smoke_factor
        return v

    def _assign(self, p: Platoon, action: TacticalAction):
        p.goal = action.pareto_node
        route = plan_path(self.graph, p.node, action.pareto_node, action.path_mode, self.adversaries)
        self._log("decision", p.index, action.pareto_node, action.path_mode)
        if route is None:
            self._log("unreachable", p.index, action.pareto_node, action.path_mode)
            self._hold(p)
            return
        path, _ = route
        if len(path) == 1:
            if not self._arrive(p, p.node):
                self._hold(p)
            return
        p.path = path[1:]
        p.edge_progress = 0.0
        p.status = MOVING
        self._enter_edge(p)

    def _hold(self, p: Platoon):
        p.status = WAITING
        p.goal = None
        p.hold_until = self.time + self.config.hold_time

    def _enter_edge(self, p: Platoon):
        """Adversary contact for a UGV starting along edge node -> path[0]."""
        if p.kind != "UGV":
            return
        e = self.graph.edge(p.node, p.path[0])
        for aid in sorted(e.adversaries):
            a = self.adversaries[aid]
            if not a.alive or p.lost:
                continue
            if a.kind == "bomb":
                a.alive = False
                self._lose_unit(p, f"bomb {aid}")
            elif a.kind == "dynamic":
                if self.config.stochastic_engagement:
                    kill = self.rng.random() < self.config.engagement_p
                    hurt = self.rng.random() < self.config.engagement_p
                else:
                    kill = hurt = True
                if kill:
                    a.alive = False
                    self._log("neutralized", p.index, p.node, aid)
                if hurt:
                    self._lose_unit(p, f"dynamic {aid}")

    def _lose_unit(self, p: Platoon, cause: str):
        p.units -= 1
        self.casualties += 1
        self._log("unit_lost", p.index, p.node, cause)
        if p.units <= 0:
            self._mark_lost(p, cause)

    def _mark_lost(self, p: Platoon, cause: str):
        if p.status == LOST:
            return
        self.casualties += p.units  # whatever is left goes down with the platoon
        p.status = LOST
        p.path = []
        p.search_target = None
        self._log("platoon_lost", p.index, p.node, cause)
        if self._ugv_roster and all(q.lost for q in self.platoons if q.kind == "UGV"):
            self._finish(False, "all UGV platoons lost")

    def _arrive(self, p: Platoon, node: int) -> bool:
        """Platoon reached its goal node.  Returns False when there is no task there."""
        p.path = []
        p.edge_progress = 0.0
        self._log("arrival", p.index, node)
        if node in self.probs and self.probs[node] > 0:
            if self.localized and node == self.scenario.goal:
                if p.kind == "UGV":
                    self._finish(True, "rescue")
                    return True
                p.status = IDLE
                return False
            p.status = SEARCHING
            p.search_target = node
            self._log("search_start", p.index, node, "outdoor" if p.kind == "UAV" else "indoor")
            return True
        p.status = IDLE
        return False

    def _finish(self, success: bool, why: str):
        if self.done:
            return
        self.done = True
        self.success = success
        self.acting = None
        self._log("success" if success else "failure", None, None, why)

    def _search_rates(self):
        out_rate = {t: 0.0 for t in self.probs}
        in_rate = {t: 0.0 for t in self.probs}
        for p in self.platoons:
            if p.status == SEARCHING and self.probs[p.search_target] > 0:
                if p.kind == "UAV":
                    out_rate[p.search_target] += p.units * self.talents.search_speed
                else:
                    in_rate[p.search_target] += p.units * self.config.ugv_indoor_rate
        return out_rate, in_rate

    def _next_event_dt(self) -> float:
        dt = math.inf
        for p in self.platoons:
            if p.status == MOVING:
                v = self._speed(p)
                remaining = self.graph.edge(p.node, p.path[0]).length - p.edge_progress
                dt = min(dt, remaining / v, p.range_remaining / v)
            elif p.status == SEARCHING and p.kind == "UAV":
                dt = min(dt, p.range_remaining / self.talents.search_speed)
            elif p.status == WAITING:
                dt = min(dt, p.hold_until - self.time)
        out_rate, in_rate = self._search_rates()
        for t in self.probs:
            work = self.graph.nodes[t].workload
            if out_rate[t] > 0:
                dt = min(dt, (work - self.outdoor[t]) / out_rate[t])
            if in_rate[t] > 0:
                dt = min(dt, (work - self.indoor[t]) / in_rate[t])
        return max(dt, 0.0)

    def _integrate(self, dt: float):
        out_rate, in_rate = self._search_rates()
        for p in self.platoons:
            if p.status == MOVING:
                d = self._speed(p) * dt
                p.edge_progress += d
            elif p.status == SEARCHING and p.kind == "UAV":
                d = self.talents.search_speed * dt
            else:
                continue
            p.range_remaining -= d
            p.distance_traveled += d
        for t in self.probs:
            self.outdoor[t] += out_rate[t] * dt
            self.indoor[t] += in_rate[t] * dt
        self.time += dt

    def _process_events(self):
        # arrivals (and transitions to the next edge)
        for p in self.platoons:
            if p.status != MOVING:
                continue
            e = self.graph.edge(p.node, p.path[0])
            if p.edge_progress >= e.length - EPS * max(1.0, e.length):
                over = p.edge_progress - e.length
                p.range_remaining += over
                p.distance_traveled -= over
                p.node = p.path.pop(0)
                p.edge_progress = 0.0
                if p.path:
                    self._log("waypoint", p.index, p.node)
                    self._enter_edge(p)
                else:
                    self._arrive(p, p.node)
                if self.done:
                    return
        # range exhaustion
        for p in self.platoons:
            if not p.lost and p.range_remaining <= EPS * max(1.0, p.initial_range):
                self._mark_lost(p, "range exhausted")
                if self.done:
                    return
        # search completions
        for t in sorted(self.probs):
            if self.probs[t] == 0.0 or self.done:
                continue
            work = self.graph.nodes[t].workload
            searchers = [p for p in self.platoons if p.status == SEARCHING and p.search_target == t]
            uav_done = any(p.kind == "UAV" for p in searchers) and self.outdoor[t] >= work * (1 - EPS)
            ugv_done = any(p.kind == "UGV" for p in searchers) and self.indoor[t] >= work * (1 - EPS)
            if not (uav_done or ugv_done):
                continue
            kind = "indoor" if ugv_done else "outdoor"
            self._log("search_complete", None, t, kind)
            if t == self.scenario.goal:
                if ugv_done or any(p.kind == "UGV" for p in searchers):
                    self._finish(True, "rescue")
                    return
                self.localized = True
                self.probs = update_probabilities(self.probs, t, True)
                self._log("victim_localized", None, t)
                # every other search is now pointless
                for p in self.platoons:
                    if p.status == SEARCHING:
                        p.status, p.search_target = IDLE, None
            else:
                self.probs = update_probabilities(self.probs, t, False)
                for p in searchers:
                    p.status, p.search_target = IDLE, None
        # holds
        for p in self.platoons:
            if p.status == WAITING and p.hold_until <= self.time + EPS:
                p.status = IDLE

    def _advance(self):
        while not self.done:
            idle = [p for p in self.platoons if p.status == IDLE]
            if idle:
                self.acting = idle[0].index
                self._pareto = self._current_pareto()
                return
            dt = self._next_event_dt()
            if self.time + dt > self.time_limit or math.isinf(dt):
                self._integrate(self.time_limit - self.time)
                self.time = self.time_limit
                self._finish(False, "time limit")
                return
            self._integrate(dt)
            self._process_events()
            if not self.done and self.time >= self.time_limit:
                self._finish(False, "time limit")

    def _current_pareto(self) -> list[int]:
        targets = sorted(self.probs)
        return pareto_nodes(self.graph, targets, [self.probs[t] for t in targets])

    # -- observation ----------------------------------------------------------------

    def _pos(self, node: int) -> np.ndarray:
        return (self.graph.position(node) - self._origin) / self._scale

    def _platoon_pos(self, p: Platoon) -> np.ndarray:
        if p.status == MOVING and p.path:
            e = self.graph.edge(p.node, p.path[0])
            f = p.edge_progress / e.length
            return (1 - f) * self._pos(p.node) + f * self._pos(p.path[0])
        return self._pos(p.node)

    def _goal_distance(self, p: Platoon) -> float:
        if p.status != MOVING or not p.path:
            return 0.0
        nodes = [p.node] + p.path
        rest = self.graph.path_length(nodes) - p.edge_progress
        return rest / self._scale

    def _observe(self) -> MissionState:
        cfg = self.config
        uav, ugv = [], []
        for p in self.platoons:
            pos = self._platoon_pos(p)
            rng_f = max(p.range_remaining, 0.0) / (cfg.range_scale if p.kind == "UAV" else cfg.ugv_range)
            if p.lost:
                rng_f = 0.0
            if p.kind == "UAV":
                uav.append([pos[0], pos[1], rng_f, 0.0, self._goal_distance(p)])
            else:
                ugv.append([pos[0], pos[1], rng_f, p.health, 1.0, self._goal_distance(p)])
        uav_a = np.array(uav, dtype=float).reshape(-1, UAV_FEATURES)
        ugv_a = np.array(ugv, dtype=float).reshape(-1, UGV_FEATURES)
        if len(uav_a) == 0:
            uav_a = np.zeros((1, UAV_FEATURES))
        if len(ugv_a) == 0:
            ugv_a = np.zeros((1, UGV_FEATURES))
        bld = []
        for k in self._pareto:
            pos = self._pos(k)
            work = self.graph.nodes[k].workload
            prob = self.probs.get(k, 0.0)
            inside = min(self.indoor.get(k, 0.0) / work, 1.0) if work > 0 else 0.0
            outside = min(self.outdoor.get(k, 0.0) / work, 1.0) if work > 0 else 0.0
            bld.append([pos[0], pos[1], prob, inside, outside])
        bld_a = np.array(bld, dtype=float).reshape(-1, BLD_FEATURES)
        adv = [[*((a.location(self.graph) - self._origin) / self._scale), _ADV_CODE[a.kind]]
               for a in self.adversaries.values() if a.alive]
        adv_a = np.array(adv, dtype=float).reshape(-1, ADV_FEATURES) if adv else np.zeros((1, ADV_FEATURES))
        n_uav = sum(1 for p in self.platoons if p.kind == "UAV")
        n_ugv = sum(1 for p in self.platoons if p.kind == "UGV")
        alive_uav = sum(1 for p in self.platoons if p.kind == "UAV" and not p.lost)
        alive_ugv = sum(1 for p in self.platoons if p.kind == "UGV" and not p.lost)
        mission = np.array([(self.time_limit - self.time) / self.time_limit,
                            alive_uav / max(n_uav, 1), alive_ugv / max(n_ugv, 1)])
        tal = self.talents.to_array() / np.asarray(cfg.talent_scale)
        if self.acting is not None and not self.done:
            p = self.platoons[self.acting]
            pos = self._pos(p.node)
            scale = cfg.range_scale if p.kind == "UAV" else cfg.ugv_range
            acting = np.array([pos[0], pos[1], 0.0 if p.kind == "UAV" else 1.0, p.range_remaining / scale])
            mask = self._action_mask(p)
        else:
            acting = np.zeros(ACT_FEATURES)
            mask = np.zeros(3 * len(self._pareto), dtype=bool)
        return MissionState(
            time=self.time, mission=mission, uav=uav_a, ugv=ugv_a, buildings=bld_a, acting=acting,
            adversaries=adv_a, talents=tal, pareto_nodes=tuple(self._pareto), action_mask=mask,
            acting_platoon=None if self.done else self.acting, probabilities=dict(self.probs), done=self.done,
        )

    def _action_mask(self, p: Platoon) -> np.ndarray:
        """Eliminated targets and nodes a mode cannot reach from here are invalid."""
        node_ok = np.array([not (k in self.probs and self.probs[k] == 0.0) for k in self._pareto])
        rows = []
        for mode in PATH_MODES:
            reach = self.graph.reachable(p.node, blocked_edge_test(mode, self.adversaries))
            rows.append(node_ok & np.array([k in reach for k in self._pareto]))
        mask = np.concatenate(rows)
        if not mask.any():
            # nothing useful is reachable: keep the aggressive choices so the platoon can still act
            mask[:len(self._pareto)] = np.array([k in self.graph.reachable(p.node) for k in self._pareto])
        return mask
