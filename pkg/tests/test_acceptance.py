"""The ten acceptance criteria, each at its stated tolerance.

Every test prints one ``criterion N PASS|FAIL`` line; a summary block is
repeated at the end of the pytest run.  The learning and pipeline criteria
train real policies and take tens of minutes on one core.
"""
import time

import numpy as np
import pytest
import torch

import test_policy
import test_sim
from codesign.cli import PipelineConfig, baseline_talents, bundled_config, cmd_pipeline
from codesign.finalize import PsoConfig, exhaustive_oracle, finalize_morphology
from codesign.morphology import DEFAULT_MODEL
from codesign.pareto import MooConfig, hypervolume_2d, nondominated_filter, nsga2
from codesign.policy import DTYPE, EmbeddingConfig, GRAPHS, TalentActorCritic, collate
from codesign.sim import MissionState
from codesign.trainer import Optimizers, TrainConfig, collect_batch, evaluate, train, update

pytestmark = pytest.mark.acceptance


def test_criterion_01_nondominated_filter_exact(criterion):
    from test_pareto import brute_force_front

    with criterion(1, "non-dominated filter vs brute force") as notes:
        rng = np.random.default_rng(2024)
        elapsed = 0.0
        for k in range(50):
            n, d = int(rng.integers(1, 501)), int(rng.integers(2, 5))
            # coarse grids force ties and duplicates on some clouds
            P = rng.integers(0, 12, size=(n, d)).astype(float) if k % 3 == 0 else rng.random((n, d))
            t = time.perf_counter()
            got = nondominated_filter(P)
            elapsed += time.perf_counter() - t
            assert got == brute_force_front(P), f"cloud {k} differs"
        notes.append(f"50/50 clouds exact, filter time {elapsed:.2f} s")
        assert elapsed < 10.0


def test_criterion_02_quantile_envelope(criterion, pareto_set, surface):
    with criterion(2, "quantile envelope coverage") as notes:
        assert len(pareto_set) >= 200
        T = pareto_set.talents
        lo = np.array([surface.q05(y) for y in T[:, 0]])
        hi = np.array([surface.q95(y) for y in T[:, 0]])
        below, above = float(np.mean(T[:, 1] <= hi)), float(np.mean(T[:, 1] >= lo))
        raw = np.random.default_rng(7).random((10_000, 2))
        Y = np.array([surface.decode(r) for r in raw])
        ylo = np.array([surface.q05(y) for y in Y[:, 0]])
        yhi = np.array([surface.q95(y) for y in Y[:, 0]])
        violations = int(np.sum((Y[:, 0] < surface.t1_min) | (Y[:, 0] > surface.t1_max)
                                | (Y[:, 1] < ylo) | (Y[:, 1] > yhi)))
        notes.append(f"{len(T)} points, below Q95 {below:.3f}, above Q05 {above:.3f}, "
                     f"decoder violations {violations}/10000")
        assert 0.90 <= below <= 1.0 and 0.90 <= above <= 1.0
        assert violations == 0


def test_criterion_03_gradient_correctness(criterion):
    with criterion(3, "finite-difference gradients, tiny policy") as notes:
        t0 = time.perf_counter()
        cfg = EmbeddingConfig(h=4, p_moments=2, layers=1, heads=2)
        rng = np.random.default_rng(0)
        mask = np.ones(9, dtype=bool)
        mask[[1, 5]] = False
        states = [test_policy.make_state(rng, n_bld=3, n_uav=3, n_ugv=3, n_adv=3, mask=mask),
                  test_policy.make_state(rng, n_bld=3, n_uav=3, n_ugv=3, n_adv=3)]
        batch = collate(states)
        net = TalentActorCritic(cfg, seed=9)
        actions, raw = torch.tensor([2, 7]), torch.tensor([[0.2, 0.7], [0.6, 0.4]], dtype=DTYPE)
        first = torch.tensor([True, False])

        def actor_loss():
            logp, ent, _ = net.evaluate(batch, actions, raw, first)
            return (logp * torch.tensor([1.1, -0.4], dtype=DTYPE)).sum() + 0.05 * ent.sum()

        target = torch.tensor([0.3, -0.8], dtype=DTYPE)
        test_policy.assert_grads_match(net.actor_parameters(), actor_loss)
        test_policy.assert_grads_match(net.critic_parameters(), lambda: ((net.value(batch) - target) ** 2).mean())
        n_params = sum(p.numel() for p in net.parameters())
        elapsed = time.perf_counter() - t0
        notes.append(f"{n_params} parameters within 1e-4 relative, {elapsed:.1f} s")
        assert elapsed < 120.0


def test_criterion_04_permutation_equivariance(criterion):
    with criterion(4, "permutation equivariance") as notes:
        net = TalentActorCritic(EmbeddingConfig(h=16, heads=4), seed=3)
        rng = np.random.default_rng(11)
        state = test_policy.make_state(rng, n_bld=6, n_uav=4, n_ugv=5, n_adv=3)
        fields = {"bld": "buildings", "uav": "uav", "ugv": "ugv", "adv": "adversaries"}
        with torch.no_grad():
            base_batch = collate([state])
            base_emb, _ = net.actor_encoder(base_batch)
            base_logits = net.actor(base_batch).logits.reshape(3, 6)
            base_choice = net.act(state, None, "deterministic", held_talents=np.array([0.5, 0.5]))[0]
        worst = 0.0
        for g in GRAPHS:
            n = len(getattr(state, fields[g]))
            for _ in range(100):
                perm = rng.permutation(n)
                if g == "bld":
                    s2 = test_policy.permuted(state, perm)
                else:
                    s2 = MissionState(**{**state.__dict__, fields[g]: getattr(state, fields[g])[perm]})
                with torch.no_grad():
                    b2 = collate([s2])
                    emb, _ = net.actor_encoder(b2)
                    logits = net.actor(b2).logits.reshape(3, 6)
                    choice = net.act(s2, None, "deterministic", held_talents=np.array([0.5, 0.5]))[0]
                worst = max(worst, float((emb[g][0] - base_emb[g][0][perm]).abs().max()))
                expect = base_logits[:, perm] if g == "bld" else base_logits
                worst = max(worst, float((logits - expect).abs().max()))
                assert choice == base_choice
        notes.append(f"400 permutations, max deviation {worst:.2e}, action choice invariant")
        assert worst <= 1e-6


def test_criterion_05_talent_mechanics(criterion):
    with criterion(5, "talent constancy and frozen talent-head inputs") as notes:
        from codesign.surface import fit_talent_surface
        from codesign.pareto import nsga2_run

        cfg = PipelineConfig.from_file(bundled_config())
        pool = cfg.pool()
        surface = fit_talent_surface(nsga2_run(MooConfig(runs=1, generations=10)), 2)
        tc = TrainConfig(epochs=1, minibatch_size=10_000)
        net = TalentActorCritic(tc.embedding_config(), seed=0)
        opt = Optimizers.create(net, tc)
        episodes = 0
        for b in range(100):
            eps = collect_batch(net, pool, surface, range(2 * b, 2 * b + 2), seed=5, max_steps=1000)
            for ep in eps:
                assert all(np.array_equal(t.raw_talents, ep.raw_talents) for t in ep.transitions)
                assert sum(t.first_step for t in ep.transitions) == 1
            episodes += len(eps)
            update(net, opt, eps, tc, np.random.default_rng(b))
        w_in = net.talent_head.w_in
        notes.append(f"{episodes}/{episodes} episodes constant, w_in nonzeros after 100 updates: "
                     f"{int(torch.count_nonzero(w_in))}")
        assert torch.count_nonzero(w_in) == 0 and not w_in.requires_grad


def test_criterion_06_simulator_timelines(criterion):
    with criterion(6, "hand-computed simulator timelines") as notes:
        test_sim.test_timeline_a_outdoor_search_with_ugv_on_site()
        test_sim.test_timeline_b_smoke_elimination_and_range()
        test_sim.test_timeline_c_bomb_then_time_limit()
        test_sim.test_timeline_c_rescue_with_casualty()
        notes.append("3 maps, event times to 1e-6 s, rewards exact, failure = -1")


def test_criterion_07_learning_signal(criterion, pareto_set, surface):
    with criterion(7, "desk-scale learning signal") as notes:
        cfg = PipelineConfig.from_file(bundled_config())
        cfg.validate()
        pool = cfg.pool()
        assert 5 <= len(pool.graph.buildings) <= 8
        torch.set_num_threads(1)
        base, _ = evaluate("random", pool, surface, 250, seed=10_000, mode="sample")
        notes.append(f"random {base.mean_reward:.3f}")
        margins, co_success, fixed_success = [], [], []
        for seed in (0, 1, 2):
            tc = TrainConfig.from_dict({**cfg.train, "seed": seed})
            assert tc.total_timesteps == 20_000
            t0 = time.perf_counter()
            co = train(tc, pool, surface)
            minutes = (time.perf_counter() - t0) / 60
            m, _ = evaluate(co.policy, pool, surface, 100, seed=10_000 + seed, mode="sample")
            fixed = baseline_talents(pareto_set, seed)
            fx = train(tc, pool, surface, fixed_talents=fixed)
            f, _ = evaluate(fx.policy, pool, surface, 100, seed=10_000 + seed, mode="sample", fixed_talents=fixed)
            margins.append(m.mean_reward - base.mean_reward)
            co_success.append(m.success_rate)
            fixed_success.append(f.success_rate)
            notes.append(f"seed {seed}: margin {margins[-1]:+.3f} in {minutes:.1f} min, success co {m.success_rate:.2f} "
                         f"vs fixed {f.success_rate:.2f}")
            assert minutes < 30
        assert min(margins) >= 0.3
        assert np.median(co_success) >= np.median(fixed_success)


def test_criterion_08_morphology_finalization(criterion, surface):
    with criterion(8, "MDPSO finalization") as notes:
        t0 = time.perf_counter()
        config = PsoConfig(population=150, iterations=80)
        spread = np.asarray(surface.talent_max) - np.asarray(surface.talent_min)
        X = DEFAULT_MODEL.sample_designs(20, np.random.default_rng(42))
        exact = [finalize_morphology(t, config=config, spread=spread).residual for t in DEFAULT_MODEL.talent_array(X)]
        raw = np.random.default_rng(43).random((5, 2))
        ratios = []
        for r in raw:
            target = surface.decode(r)
            oracle, _ = exhaustive_oracle(target, spread)
            pso = finalize_morphology(target, config=config, spread=spread).residual
            ratios.append((pso, oracle))
        elapsed = time.perf_counter() - t0
        notes.append(f"worst exact-recovery residual {max(exact):.2e}; in-envelope pso/oracle "
                     + ", ".join(f"{p:.4f}/{o:.4f}" for p, o in ratios) + f"; {elapsed:.0f} s")
        assert max(exact) <= 1e-2
        assert all(p <= 1.05 * o + 1e-3 for p, o in ratios)
        assert elapsed < 300


def test_criterion_09_nsga2_toy_hypervolume(criterion):
    from test_pareto import toy_problem

    with criterion(9, "NSGA-II toy front hypervolume") as notes:
        ratios = []
        for seed in range(3):
            _, F, _ = nsga2(toy_problem(), MooConfig(population_size=60, generations=40, seed=seed))
            ratios.append(hypervolume_2d(F, (0.0, 0.0)) / (2.0 / 3.0))
        notes.append("hypervolume ratios " + ", ".join(f"{r:.4f}" for r in ratios))
        assert min(ratios) >= 0.98


def test_criterion_10_pipeline(criterion, tmp_path):
    with criterion(10, "end-to-end pipeline on the tiny config") as notes:
        cfg = PipelineConfig.from_file(bundled_config())
        t0 = time.perf_counter()
        cmd_pipeline(cfg, tmp_path / "a")
        cmd_pipeline(PipelineConfig.from_file(bundled_config()), tmp_path / "b")
        elapsed = (time.perf_counter() - t0) / 60

        def tree(root):
            return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}

        a, b = tree(tmp_path / "a"), tree(tmp_path / "b")
        stages = ["pareto/pareto.csv", "surface/surface.json", "train/checkpoint.json", "finalize/design.json"]
        histories = ["train/history.csv", "finalize/pso_history.csv", "eval/metrics.csv", "eval/episodes.csv"]
        missing = [f for f in stages + histories if f not in a]
        differing = sorted(k for k in set(a) | set(b) if a.get(k) != b.get(k))
        notes.append(f"{len(a)} files, missing {missing or 'none'}, differing {differing or 'none'}, "
                     f"two runs in {elapsed:.1f} min")
        assert not missing and not differing
        assert elapsed / 2 < 45
