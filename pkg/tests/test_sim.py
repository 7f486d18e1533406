import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from codesign.errors import DomainError
from codesign.morphology import TalentVector
from codesign.sim import (
    MapFormatError, MapGraph, Mission, Scenario, SimConfig, TacticalAction, compute_reward, generate_map,
    generate_scenario, pareto_nodes, plan_path, update_probabilities,
)
from codesign.sim.scenario import AdversaryState

# -- handcrafted maps ------------------------------------------------------------

MAP_A = """# codesign-map v1
node 0 depot 0 0
node 1 intersection 100 0
node 2 building 100 50 perimeter=100 floors=2
node 3 building 200 0 perimeter=80 floors=1
edge 0 1 100
edge 1 2 50
edge 1 3 100
"""
SCEN_A = """# codesign-scenario v1
targets 2 3
goal 2
time_limit 1000
platoon UAV 2
platoon UGV 1
"""

MAP_B = """# codesign-map v1
node 0 depot 0 0
node 1 intersection 100 0
node 2 building 100 40 perimeter=60 floors=1
node 3 building 0 60 perimeter=50 floors=2
edge 0 1 100
edge 1 2 40
edge 0 3 60
"""
SCEN_B = """# codesign-scenario v1
targets 2 3
goal 3
time_limit 500
platoon UAV 1
platoon UGV 1
adversary s1 smoke edge 0 1
"""

MAP_C = """# codesign-map v1
node 0 depot 0 0
node 1 intersection 100 0
node 2 intersection 0 100
node 3 building 100 100 perimeter=40 floors=1
edge 0 1 100
edge 1 3 100
edge 0 2 100
edge 2 3 100
"""
SCEN_C = """# codesign-scenario v1
targets 3
goal 3
time_limit {T}
platoon UGV 2
adversary b1 bomb edge 0 1
"""


def load(map_text, scen_text):
    return MapGraph.loads(map_text), Scenario.loads(scen_text)


def times(m, event):
    return [e[0] for e in m.events if e[1] == event]


# -- timelines -----------------------------------------------------------------------

def test_timeline_a_outdoor_search_with_ugv_on_site():
    """UAV: 150 m at 10 m/s -> t=15, then W=200 at 2 units x 2.5 m/s -> done at 55.
    UGV: 150 m at 3 m/s -> t=50, indoor search under way when the goal is cleared -> rescue at 55."""
    g, sc = load(MAP_A, SCEN_A)
    m = Mission(g, sc, TalentVector(2.5, 10.0, 10_000.0))
    assert m.acting == 0
    _, r, done = m.step(TacticalAction(2, "aggressive"))
    assert (r, done, m.acting) == (0.0, False, 1)
    _, r, done = m.step(TacticalAction(2, "normal"))
    assert done and m.success
    assert times(m, "arrival") == pytest.approx([15.0, 50.0], abs=1e-6)
    assert times(m, "search_complete") == pytest.approx([55.0], abs=1e-6)
    assert times(m, "success") == pytest.approx([55.0], abs=1e-6)
    assert r == pytest.approx(1 - 55.0 / 1000 + 1.0, abs=1e-12)


def test_timeline_b_smoke_elimination_and_range():
    """UAV to 2 through smoke: 100/5 + 40/10 = 24 s, search 60/3 = 20 s -> idle at 44.
    UGV reaches goal 3 at 20 and searches indoor at 1 m/s.  UAV back to 3: 4 + 20 + 6 = 30 s -> 74,
    outdoor W=100 at 3 m/s -> 107.333.., the UGV is on site so that is the rescue."""
    g, sc = load(MAP_B, SCEN_B)
    m = Mission(g, sc, TalentVector(3.0, 10.0, 1000.0))
    m.step(TacticalAction(2, "aggressive"))
    state, r, done = m.step(TacticalAction(3, "aggressive"))
    assert not done and r == 0.0
    assert state.time == pytest.approx(44.0, abs=1e-6)
    assert m.acting == 0
    assert state.probabilities == {2: 0.0, 3: 1.0}
    uav = m.platoons[0]
    assert uav.range_remaining == pytest.approx(800.0, abs=1e-6)
    # an eliminated target is no longer offered as a destination
    assert 2 not in state.pareto_nodes
    _, r, done = m.step(TacticalAction(3, "normal"))
    assert done and m.success
    assert times(m, "arrival") == pytest.approx([20.0, 24.0, 74.0], abs=1e-6)
    assert times(m, "search_complete") == pytest.approx([44.0, 74.0 + 100.0 / 3.0], abs=1e-6)
    assert m.time == pytest.approx(74.0 + 100.0 / 3.0, abs=1e-6)
    assert r == pytest.approx(1 - m.time / 500.0 + 1.0, abs=1e-12)
    assert uav.initial_range - uav.range_remaining == pytest.approx(uav.distance_traveled, abs=1e-6)
    assert uav.range_remaining == pytest.approx(500.0, abs=1e-6)


def test_timeline_c_bomb_then_time_limit():
    """Aggressive tie-break picks 0-1-3 over the bomb: one unit lost, 200 m at 3 m/s -> 66.67,
    indoor W=40 at 1 unit -> 106.67, after T_max = 100 -> reward -1."""
    g, sc = load(MAP_C, SCEN_C.format(T=100))
    m = Mission(g, sc, TalentVector(2.0, 10.0, 5000.0))
    _, r, done = m.step(TacticalAction(3, "aggressive"))
    assert done and not m.success and r == -1.0
    assert m.time == 100.0
    assert m.platoons[0].units == 1
    assert not m.adversaries["b1"].alive
    assert times(m, "arrival") == pytest.approx([200.0 / 3.0], abs=1e-6)
    assert m.surviving + m.casualties == sc.n_robots


def test_timeline_c_rescue_with_casualty():
    g, sc = load(MAP_C, SCEN_C.format(T=200))
    m = Mission(g, sc, TalentVector(2.0, 10.0, 5000.0))
    _, r, done = m.step(TacticalAction(3, "aggressive"))
    assert done and m.success
    assert m.time == pytest.approx(200.0 / 3.0 + 40.0, abs=1e-6)
    assert r == pytest.approx(1 - m.time / 200.0 + 0.5, abs=1e-12)


def test_normal_mode_avoids_bomb():
    g, sc = load(MAP_C, SCEN_C.format(T=200))
    m = Mission(g, sc, TalentVector(2.0, 10.0, 5000.0))
    _, r, _ = m.step(TacticalAction(3, "normal"))
    assert m.platoons[0].units == 2 and m.adversaries["b1"].alive
    assert r == pytest.approx(1 - (200 / 3 + 20) / 200 + 1.0, abs=1e-12)


def test_dynamic_adversary_engagement_deterministic():
    sc_text = SCEN_C.format(T=500).replace("adversary b1 bomb edge 0 1", "adversary d1 dynamic patrol 0 1 3")
    g, sc = load(MAP_C, sc_text)
    m = Mission(g, sc, TalentVector(2.0, 10.0, 5000.0))
    m.step(TacticalAction(3, "aggressive"))
    assert not m.adversaries["d1"].alive
    assert m.platoons[0].units == 1
    assert any(e[1] == "neutralized" for e in m.events)


def test_stochastic_engagement_is_seeded():
    sc_text = SCEN_C.format(T=500).replace("adversary b1 bomb edge 0 1", "adversary d1 dynamic patrol 0 1 3")
    g, sc = load(MAP_C, sc_text)
    cfg = SimConfig(stochastic_engagement=True)
    runs = []
    for _ in range(2):
        m = Mission(g, sc, TalentVector(2.0, 10.0, 5000.0), cfg, seed=11)
        m.step(TacticalAction(3, "aggressive"))
        runs.append(m.events)
    assert runs[0] == runs[1]


def test_all_ugvs_lost_is_failure():
    sc_text = SCEN_C.format(T=500).replace("platoon UGV 2", "platoon UGV 1")
    g, sc = load(MAP_C, sc_text)
    m = Mission(g, sc, TalentVector(2.0, 10.0, 5000.0))
    _, r, done = m.step(TacticalAction(3, "aggressive"))
    assert done and r == -1.0 and m.time == 0.0
    assert m.surviving == 0 and m.casualties == 1


def test_uav_range_exhaustion_loses_platoon():
    g, sc = load(MAP_A, SCEN_A)
    m = Mission(g, sc, TalentVector(2.5, 10.0, 120.0))
    m.step(TacticalAction(2, "aggressive"))
    m.step(TacticalAction(1, "aggressive"))
    assert m.platoons[0].lost
    assert m.platoons[0].distance_traveled == pytest.approx(120.0, abs=1e-6)
    assert m.surviving + m.casualties == sc.n_robots


# -- reward and probabilities --------------------------------------------------------

def test_reward_examples():
    assert compute_reward(True, 0.0, 100.0, 4, 4) == 2.0
    assert compute_reward(True, 100.0, 100.0, 2, 4) == 0.5
    assert compute_reward(False, 10.0, 100.0, 4, 4) == -1.0


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 1e4), st.floats(1, 1e4), st.integers(0, 10), st.integers(1, 10))
def test_success_reward_range(t, T, s, n):
    s = min(s, n)
    r = compute_reward(True, min(t, T), T, s, n)
    assert 0.0 <= r <= 2.0


def test_probability_updates():
    p = {t: 0.25 for t in (1, 2, 3, 4)}
    q = update_probabilities(p, 2, False)
    assert q == {1: 1 / 3, 2: 0.0, 3: 1 / 3, 4: 1 / 3}
    assert update_probabilities(q, 4, True) == {1: 0.0, 2: 0.0, 3: 0.0, 4: 1.0}
    with pytest.raises(DomainError):
        update_probabilities(q, 2, False)


# -- path planning ---------------------------------------------------------------

def test_modes_agree_without_adversaries():
    g = generate_map(3)
    for dst in g.buildings[:4]:
        paths = {plan_path(g, g.depot, dst, m, {})[0] and tuple(plan_path(g, g.depot, dst, m, {})[0])
                 for m in ("aggressive", "normal", "cautious")}
        assert len(paths) == 1


def test_square_map_tie_break_and_clean_route():
    g, sc = load(MAP_C, SCEN_C.format(T=100))
    g = sc.annotate(g)
    advs = {a.id: a for a in sc.adversaries}
    assert plan_path(g, 0, 3, "aggressive", advs) == ([0, 1, 3], 200.0)
    assert plan_path(g, 0, 3, "normal", advs) == ([0, 2, 3], 200.0)
    assert plan_path(g, 0, 3, "cautious", advs) == ([0, 2, 3], 200.0)


def test_cautious_unreachable():
    g, sc = load(MAP_B, SCEN_B)
    g = sc.annotate(g)
    advs = {a.id: a for a in sc.adversaries}
    assert plan_path(g, 0, 2, "cautious", advs) is None
    assert plan_path(g, 0, 2, "normal", advs)[1] == 140.0
    with pytest.raises(DomainError):
        plan_path(g, 0, 2, "reckless", advs)


def test_unreachable_mode_is_masked_and_wasted_decision_holds():
    g, sc = load(MAP_B, SCEN_B)
    m = Mission(g, sc, TalentVector(3.0, 10.0, 1000.0))
    s = m.state
    n = len(s.pareto_nodes)
    i = s.pareto_nodes.index(2)
    assert s.action_mask[i] and s.action_mask[n + i] and not s.action_mask[2 * n + i]
    # an order with no work at the destination puts the platoon on hold
    m.step(TacticalAction(0, "aggressive"))
    assert m.platoons[0].status == "waiting"


# -- Pareto nodes ----------------------------------------------------------------

def scipy_distances(g):
    ids = sorted(g.nodes)
    pos = {k: i for i, k in enumerate(ids)}
    rows, cols, vals = [], [], []
    for (u, v), e in g.edges.items():
        rows += [pos[u], pos[v]]
        cols += [pos[v], pos[u]]
        vals += [e.length, e.length]
    D = dijkstra(csr_matrix((vals, (rows, cols)), shape=(len(ids), len(ids))), directed=False)
    return ids, D


def brute_pareto(g, targets, probs):
    ids, D = scipy_distances(g)
    live = [(ids.index(t), p) for t, p in zip(targets, probs) if p > 0]
    C = np.array([[p * D[i, j] for j, p in live] for i in range(len(ids))])
    keep = set()
    for i in range(len(ids)):
        if not any(np.all(C[k] <= C[i]) and np.any(C[k] < C[i]) for k in range(len(ids)) if k != i):
            keep.add(ids[i])
    keep.update(t for t, p in zip(targets, probs) if p > 0)
    return sorted(keep)


@pytest.mark.parametrize("seed", range(5))
def test_pareto_nodes_match_brute_force(seed):
    g = generate_map(seed, rows=4, cols=4, n_buildings=4)
    rng = np.random.default_rng(seed)
    targets = sorted(int(t) for t in rng.choice(g.buildings, 3, replace=False))
    probs = rng.dirichlet(np.ones(3))
    assert pareto_nodes(g, targets, probs) == brute_pareto(g, targets, probs)


def test_single_target_pareto_is_argmin():
    g, _ = load(MAP_A, SCEN_A)
    assert pareto_nodes(g, [3], [1.0]) == [3]


def test_symmetric_pair_retained():
    text = """# codesign-map v1
node 0 depot 0 0
node 1 building -100 0 perimeter=50 floors=1
node 2 building 100 0 perimeter=50 floors=1
edge 0 1 100
edge 0 2 100
"""
    g = MapGraph.loads(text)
    assert pareto_nodes(g, [1, 2], [0.5, 0.5]) == [0, 1, 2]


def test_pareto_nodes_requires_normalized_probs():
    g, _ = load(MAP_A, SCEN_A)
    with pytest.raises(DomainError):
        pareto_nodes(g, [2, 3], [0.5, 0.2])


# -- files and generators ------------------------------------------------------------

def test_generate_map_is_deterministic_and_valid():
    a, b = generate_map(9), generate_map(9)
    assert a.dumps() == b.dumps()
    assert a.is_connected()
    assert sum(1 for n in a.nodes.values() if n.kind == "depot") == 1
    for e in a.edges.values():
        assert e.length >= a.straight_line(e.u, e.v) - 1e-9


def test_map_and_scenario_round_trip(tmp_path):
    g, sc = load(MAP_B, SCEN_B)
    g.save(tmp_path / "m.txt")
    sc.save(tmp_path / "s.txt")
    g2 = MapGraph.load(tmp_path / "m.txt")
    sc2 = Scenario.load(tmp_path / "s.txt")
    assert g2.dumps() == g.dumps()
    assert sc2 == sc
    gen = generate_map(2)
    sc3 = generate_scenario(gen, 4)
    assert Scenario.loads(sc3.dumps()) == sc3


@pytest.mark.parametrize("text,line,fragment", [
    (MAP_A.replace("edge 1 2 50", "edge 1 2 10"), 7, "straight"),
    (MAP_A.replace("node 3 building", "node 2 building"), 5, "duplicate"),
    (MAP_A.replace("edge 1 3 100", "edge 1 9 100"), 8, "undefined node 9"),
    (MAP_A.replace("node 0 depot 0 0", "node 0 intersection 0 0"), None, "depot"),
    (MAP_A.replace("edge 1 3 100\n", ""), None, "connected"),
])
def test_map_errors_are_line_precise(text, line, fragment):
    with pytest.raises(MapFormatError, match=fragment) as exc:
        MapGraph.loads(text)
    assert exc.value.line == line


def test_goal_outside_targets_rejected():
    with pytest.raises(MapFormatError, match="goal") as exc:
        Scenario.loads(SCEN_A.replace("goal 2", "goal 7"))
    assert exc.value.line == 3


def test_scenario_must_match_map():
    g, _ = load(MAP_A, SCEN_A)
    bad = Scenario.loads(SCEN_A.replace("targets 2 3", "targets 1 2"))
    with pytest.raises(DomainError, match="target 1"):
        bad.validate_against(g)


def test_adversary_invariants():
    with pytest.raises(DomainError):
        AdversaryState("d", "dynamic", (3,))
    with pytest.raises(DomainError):
        AdversaryState("b", "bomb", (1, 2, 3))


def test_invalid_action_index_and_finished_mission():
    g, sc = load(MAP_C, SCEN_C.format(T=100))
    m = Mission(g, sc, TalentVector(2.0, 10.0, 5000.0))
    with pytest.raises(DomainError):
        m.step(10_000)
    with pytest.raises(DomainError):
        m.step(TacticalAction(99, "normal"))
    m.step(TacticalAction(3, "aggressive"))
    with pytest.raises(DomainError):
        m.step(0)


def test_event_log_file(tmp_path):
    g, sc = load(MAP_A, SCEN_A)
    m = Mission(g, sc, TalentVector(2.5, 10.0, 10_000.0))
    m.step(TacticalAction(2, "aggressive"))
    m.step(TacticalAction(2, "normal"))
    m.write_log(tmp_path / "log.csv")
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "# schema_version=1"
    rows = list(csv.reader(lines[1:]))
    assert rows[0] == ["time", "event", "platoon", "node", "detail"]
    assert rows[-1][1] == "success"


# -- invariants under random play ------------------------------------------------------

def random_rollout(map_seed, scen_seed, act_seed, talents):
    g = generate_map(map_seed, rows=3, cols=3, n_buildings=6)
    sc = generate_scenario(g, scen_seed, n_targets=(3, 6), time_limit=800)
    m = Mission(g, sc, talents, seed=act_seed)
    rng = np.random.default_rng(act_seed)
    trace = []
    steps = 0
    while not m.done:
        s = m.state
        assert abs(sum(s.probabilities.values()) - 1.0) < 1e-9
        assert 0.0 <= s.mission[0] <= 1.0
        assert m.surviving + m.casualties == sc.n_robots
        for p in m.platoons:
            if p.kind == "UAV" and not p.lost:
                assert p.initial_range - p.range_remaining == pytest.approx(p.distance_traveled, abs=1e-6)
        valid = np.flatnonzero(s.action_mask)
        assert len(valid) > 0
        a = int(rng.choice(valid))
        s2, r, done = m.step(a)
        support = {k for k, v in s.probabilities.items() if v > 0}
        assert {k for k, v in s2.probabilities.items() if v > 0} <= support
        trace.append((a, r, round(s2.time, 9)))
        steps += 1
        # every decision advances time by an event or a hold, so T_max bounds the count
        assert steps <= 4 * math.ceil(sc.time_limit / SimConfig().hold_time) + 4 * 100
    assert m.surviving + m.casualties == sc.n_robots
    return trace, m.outcome


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 50), st.integers(0, 50), st.integers(0, 1000),
       st.floats(1.0, 4.8), st.floats(6.0, 15.0), st.floats(300.0, 20000.0))
def test_invariants_and_determinism(map_seed, scen_seed, act_seed, s, v, r):
    tal = TalentVector(s, v, r)
    t1, o1 = random_rollout(map_seed, scen_seed, act_seed, tal)
    t2, o2 = random_rollout(map_seed, scen_seed, act_seed, tal)
    assert t1 == t2 and o1 == o2
    if o1.success:
        assert 0.0 < o1.reward <= 2.0
    else:
        assert o1.reward == -1.0
