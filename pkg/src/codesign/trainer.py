"""Batched talent-infused actor-critic training (PPO-clip with GAE).

Talents are drawn once at the first step of each episode and held for the
rest of it.  Episode ``k`` of a run always uses the random stream seeded by
``(seed, k)``, so results depend on the seed only, not on worker count.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .errors import DomainError
from .morphology import TalentVector
from .policy import DTYPE, EmbeddingConfig, TalentActorCritic, collate
from .sim.mapgraph import MapGraph, load_map
from .sim.mission import Mission, MissionState, SimConfig
from .sim.scenario import Scenario, load_scenario
from .surface import TalentSurface

log = logging.getLogger(__name__)

HISTORY_SCHEMA = 1
HISTORY_FIELDS = (
    "episode", "batch", "timesteps", "scenario", "reward", "success", "elapsed", "surviving", "steps",
    "raw_1", "raw_2", "search_speed", "cruising_speed", "flight_range",
    "actor_loss", "critic_loss", "entropy", "talent_mean_1", "talent_mean_2", "talent_std_1", "talent_std_2",
)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.99
    actor_lr: float = 1e-3
    critic_lr: float = 1e-3
    batch_episodes: int = 8
    clip_ratio: float = 0.2
    epochs: int = 4
    gae_lambda: float = 0.95
    entropy_coef: float = 0.01
    total_timesteps: int = 20000
    workers: int = 1
    seed: int = 0
    minibatch_size: int = 32
    grad_clip: float = 0.5
    normalize_advantages: bool = True
    checkpoint_every: int = 10  # batches
    max_episode_steps: int = 1000
    # "batch": talent log-probs are credited with the episode return minus a
    # leave-one-out batch mean; "critic": they share the first-step GAE advantage
    talent_baseline: str = "batch"
    embedding: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise DomainError(f"gamma must lie in [0, 1], got {self.gamma}")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise DomainError(f"gae_lambda must lie in [0, 1], got {self.gae_lambda}")
        if not self.clip_ratio > 0:
            raise DomainError("clip_ratio must be > 0")
        for name in ("batch_episodes", "epochs", "workers", "minibatch_size", "checkpoint_every",
                     "max_episode_steps"):
            if getattr(self, name) < 1:
                raise DomainError(f"{name} must be >= 1")
        if self.actor_lr <= 0 or self.critic_lr <= 0:
            raise DomainError("learning rates must be positive")
        if self.total_timesteps < 0 or self.entropy_coef < 0 or self.grad_clip <= 0:
            raise DomainError("total_timesteps and entropy_coef must be >= 0, grad_clip > 0")
        if self.talent_baseline not in ("batch", "critic"):
            raise DomainError(f"talent_baseline must be 'batch' or 'critic', got {self.talent_baseline!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise DomainError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)

    def embedding_config(self) -> EmbeddingConfig:
        return EmbeddingConfig(**self.embedding)


# -- environment pool ---------------------------------------------------------------

@dataclass
class ScenarioPool:
    """A map plus the scenarios episodes are drawn from, uniformly."""

    graph: MapGraph
    scenarios: tuple[Scenario, ...]
    sim: SimConfig = field(default_factory=SimConfig)

    def __post_init__(self):
        if not self.scenarios:
            raise DomainError("scenario pool is empty")
        for sc in self.scenarios:
            sc.validate_against(self.graph)

    @classmethod
    def from_files(cls, map_path, scenario_paths: Sequence, sim: SimConfig | None = None) -> "ScenarioPool":
        return cls(load_map(map_path), tuple(load_scenario(p) for p in scenario_paths), sim or SimConfig())


@dataclass
class Transition:
    state: MissionState
    action: int  # index over the state's own 3 * N actions
    reward: float
    next_state: MissionState
    done: bool
    raw_talents: np.ndarray | None
    logp: float
    value: float
    first_step: bool
    episode: int
    talent_logp: float = 0.0  # the talent part of logp (first co-design step only)


@dataclass
class Episode:
    index: int
    scenario: int
    transitions: list[Transition]
    raw_talents: np.ndarray | None
    talents: np.ndarray
    reward: float
    success: bool
    elapsed: float
    surviving: int

    @property
    def steps(self) -> int:
        return len(self.transitions)


def episode_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def talents_for(policy: TalentActorCritic, surface: TalentSurface | None, raw) -> TalentVector:
    if raw is None:
        raise DomainError("co-design episode without raw talents")
    if surface is None:
        raise DomainError("co-design training needs a talent surface")
    return TalentVector.from_array(surface.decode(raw))


def run_episode(policy, pool: ScenarioPool, surface: TalentSurface | None, seed: int, index: int,
                mode: str = "sample", fixed_talents: TalentVector | None = None,
                max_steps: int = 1000, record: bool = True, mean_talents: bool = False) -> Episode:
    """One episode; ``policy`` may be a TalentActorCritic or the string 'random'.

    Talents are drawn from the talent Gaussian unless ``mode`` is
    'deterministic' or ``mean_talents`` holds them at the head's mean (the
    design that would actually be built).
    """
    rng = episode_rng(seed, index)
    which = int(rng.integers(len(pool.scenarios)))
    scenario = pool.scenarios[which]
    raw = None
    if fixed_talents is not None:
        talents = fixed_talents
    elif isinstance(policy, str):
        raw = rng.random(surface.n_raw)
        talents = TalentVector.from_array(surface.decode(raw))
    else:
        hold = mode == "deterministic" or mean_talents
        raw = policy.sample_talents(rng, deterministic=hold) if policy.codesign else None
        talents = talents_for(policy, surface, raw) if policy.codesign else None
        if talents is None:
            raise DomainError("fixed-design policy needs fixed_talents")
    mission = Mission(pool.graph, scenario, talents, pool.sim, seed=int(rng.integers(2**31)))
    transitions: list[Transition] = []
    state = mission.state
    step = 0
    try:
        while not mission.done:
            if step >= max_steps:
                raise TrainingError(f"episode exceeded {max_steps} decisions")
            if isinstance(policy, str):
                idx = int(rng.choice(np.flatnonzero(state.action_mask)))
                logp, value = 0.0, 0.0
            else:
                _, idx, _, logp, _ = policy.act(state, rng, mode, held_talents=raw, first_step=(step == 0))
                value = policy.state_value(state) if record else 0.0
            t_logp = policy.talent_log_prob(raw) if record and step == 0 and raw is not None \
                and not isinstance(policy, str) else 0.0
            nxt, reward, done = mission.step(idx)
            if record:
                transitions.append(Transition(state, idx, reward, nxt, done, raw, logp, value, step == 0, index,
                                              t_logp))
            state = nxt
            step += 1
    except (DomainError, TrainingError) as exc:
        raise TrainingError(f"episode {index} (scenario {which}, seed {seed}): {exc}") from exc
    out = mission.outcome
    return Episode(index, which, transitions, raw, talents.to_array(), out.reward, out.success,
                   out.elapsed, out.surviving)


def _worker(args):
    params, pool, surface, seed, indices, mode, fixed, max_steps, record, mean_talents = args
    torch.set_num_threads(1)
    policy = TalentActorCritic.from_dict(params) if isinstance(params, dict) else params
    return [run_episode(policy, pool, surface, seed, i, mode, fixed, max_steps, record, mean_talents)
            for i in indices]


def collect_batch(policy, pool: ScenarioPool, surface: TalentSurface | None, episodes: Sequence[int],
                  seed: int = 0, workers: int = 1, mode: str = "sample",
                  fixed_talents: TalentVector | None = None, max_steps: int = 1000,
                  record: bool = True, mean_talents: bool = False) -> list[Episode]:
    """Run the given episode indices; output order follows ``episodes`` regardless of workers."""
    episodes = list(episodes)
    if not episodes:
        raise DomainError("collect_batch needs at least one episode")
    if workers < 1:
        raise DomainError("workers must be >= 1")
    if workers == 1 or len(episodes) == 1:
        return _worker((policy, pool, surface, seed, episodes, mode, fixed_talents, max_steps, record,
                        mean_talents))
    snapshot = policy if isinstance(policy, str) else policy.to_dict()
    chunks = [episodes[i::workers] for i in range(workers)]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        results = list(ex.map(_worker, [(snapshot, pool, surface, seed, c, mode, fixed_talents, max_steps,
                                         record, mean_talents) for c in chunks if c]))
    by_index = {e.index: e for chunk in results for e in chunk}
    return [by_index[i] for i in episodes]


# -- advantage estimation ---------------------------------------------------------

def td_error(reward: float, value: float, next_value: float, done: bool, gamma: float) -> float:
    return reward + gamma * (0.0 if done else next_value) - value


def advantages(rewards, values, dones, gamma: float, lam: float, last_value: float = 0.0):
    """GAE over one trajectory; returns (advantages, lambda-returns)."""
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=bool)
    T = len(rewards)
    adv = np.zeros(T)
    next_value, acc = last_value, 0.0
    for t in range(T - 1, -1, -1):
        delta = td_error(rewards[t], values[t], next_value, dones[t], gamma)
        acc = delta + gamma * lam * (0.0 if dones[t] else acc)
        adv[t] = acc
        next_value = values[t]
    return adv, adv + values


def batch_advantages(episodes: Sequence[Episode], gamma: float, lam: float):
    adv, ret = [], []
    for ep in episodes:
        tr = ep.transitions
        a, r = advantages([t.reward for t in tr], [t.value for t in tr], [t.done for t in tr], gamma, lam)
        adv.append(a)
        ret.append(r)
    return np.concatenate(adv), np.concatenate(ret)


def talent_advantages(episodes: Sequence[Episode], gamma: float, normalize: bool = True) -> np.ndarray:
    """Per-episode credit for the talent draw.

    The critic sees the talents, so its first-step advantage mostly cancels
    the effect of the draw itself.  Here each episode's discounted return is
    compared with the mean return of the *other* episodes in the batch, a
    baseline that does not depend on the episode's own talents.
    """
    g = np.array([sum(gamma ** k * t.reward for k, t in enumerate(ep.transitions)) for ep in episodes])
    if len(g) < 2:
        return np.zeros_like(g)
    adv = g - (g.sum() - g) / (len(g) - 1)
    if normalize:
        adv = adv / (adv.std() + 1e-8)
    return adv


# -- update -----------------------------------------------------------------------

@dataclass
class Optimizers:
    actor: torch.optim.Optimizer
    critic: torch.optim.Optimizer

    @classmethod
    def create(cls, policy: TalentActorCritic, config: TrainConfig) -> "Optimizers":
        return cls(torch.optim.Adam(policy.actor_parameters(), lr=config.actor_lr),
                   torch.optim.Adam(policy.critic_parameters(), lr=config.critic_lr))


def _padded_actions(transitions: Sequence[Transition], n_pad: int) -> torch.Tensor:
    out = []
    for t in transitions:
        mode, node = divmod(t.action, len(t.state.pareto_nodes))
        out.append(mode * n_pad + node)
    return torch.as_tensor(out, dtype=torch.long)


def _raw_tensor(transitions: Sequence[Transition], n_raw: int = 2) -> torch.Tensor:
    rows = [t.raw_talents if t.raw_talents is not None else np.zeros(n_raw) for t in transitions]
    return torch.as_tensor(np.stack(rows), dtype=DTYPE)


def _dump_batch(path, transitions, adv, ret, note):
    rows = [{"episode": t.episode, "action": t.action, "reward": t.reward, "logp": t.logp, "value": t.value,
             "first_step": t.first_step, "advantage": float(a), "return": float(r)}
            for t, a, r in zip(transitions, adv, ret)]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps({"error": note, "transitions": rows}, indent=1))


def update(policy: TalentActorCritic, optim: Optimizers, episodes: Sequence[Episode], config: TrainConfig,
           rng: np.random.Generator, dump_path=None) -> dict:
    transitions = [t for ep in episodes for t in ep.transitions]
    if not transitions:
        raise DomainError("update needs a non-empty buffer")
    adv, ret = batch_advantages(episodes, config.gamma, config.gae_lambda)
    if config.normalize_advantages and len(adv) > 1:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    batch = collate([t.state for t in transitions])
    actions = _padded_actions(transitions, batch.bld.shape[1])
    raw = _raw_tensor(transitions)
    first = torch.as_tensor([t.first_step for t in transitions])
    joint = config.talent_baseline == "critic" or not policy.codesign
    if joint:
        old_logp = torch.as_tensor([t.logp for t in transitions], dtype=DTYPE)
    else:
        old_logp = torch.as_tensor([t.logp - t.talent_logp for t in transitions], dtype=DTYPE)
        old_t_logp = torch.as_tensor([t.talent_logp for t in transitions], dtype=DTYPE)
        per_ep = talent_advantages(episodes, config.gamma, config.normalize_advantages)
        t_adv = torch.as_tensor(np.concatenate([np.full(ep.steps, a) for ep, a in zip(episodes, per_ep)]),
                                dtype=DTYPE)
    adv_t = torch.as_tensor(adv, dtype=DTYPE)
    ret_t = torch.as_tensor(ret, dtype=DTYPE)
    n = len(transitions)
    lo, hi = 1 - config.clip_ratio, 1 + config.clip_ratio
    stats = {"actor_loss": [], "critic_loss": [], "entropy": [], "approx_kl": [], "clip_frac": [], "ratio0": []}
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.minibatch_size):
            idx = torch.as_tensor(order[start:start + config.minibatch_size])
            sub = batch_select(batch, idx)
            a_logp, t_logp, a_ent, t_ent, value = policy.evaluate_parts(sub, actions[idx], raw[idx])
            f = first[idx].to(DTYPE)
            ent = a_ent + f * t_ent
            a = adv_t[idx]
            if joint:
                logp = a_logp + f * t_logp
                ratio = torch.exp(logp - old_logp[idx])
                surr = torch.min(ratio * a, torch.clamp(ratio, lo, hi) * a)
                ratio_dev = (ratio - 1).abs()
            else:
                logp = a_logp
                ratio = torch.exp(a_logp - old_logp[idx])
                surr = torch.min(ratio * a, torch.clamp(ratio, lo, hi) * a)
                t_ratio = torch.exp(t_logp - old_t_logp[idx])
                ta = t_adv[idx]
                surr = surr + f * torch.min(t_ratio * ta, torch.clamp(t_ratio, lo, hi) * ta)
                ratio_dev = torch.maximum((ratio - 1).abs(), f * (t_ratio - 1).abs())
            actor_loss = -surr.mean() - config.entropy_coef * ent.mean()
            critic_loss = ((value - ret_t[idx]) ** 2).mean()
            if not (torch.isfinite(actor_loss) and torch.isfinite(critic_loss)):
                note = f"non-finite loss at epoch {epoch}: actor={actor_loss.item()}, critic={critic_loss.item()}"
                if dump_path is not None:
                    _dump_batch(dump_path, transitions, adv, ret, note)
                    note += f"; batch dumped to {dump_path}"
                raise TrainingError(note)
            optim.actor.zero_grad()
            optim.critic.zero_grad()
            (actor_loss + critic_loss).backward()
            torch.nn.utils.clip_grad_norm_(policy.actor_parameters(), config.grad_clip)
            torch.nn.utils.clip_grad_norm_(policy.critic_parameters(), config.grad_clip)
            optim.actor.step()
            optim.critic.step()
            with torch.no_grad():
                stats["actor_loss"].append(float(actor_loss))
                stats["critic_loss"].append(float(critic_loss))
                stats["entropy"].append(float(ent.mean()))
                stats["approx_kl"].append(float((old_logp[idx] - logp).mean()))
                stats["clip_frac"].append(float((ratio_dev > config.clip_ratio).to(DTYPE).mean()))
                if epoch == 0 and start == 0:
                    stats["ratio0"].append(float(ratio_dev.max()))
    with torch.no_grad():
        mean = policy.talent_mean().numpy()
        std = policy.talent_log_std.exp().numpy()
    return {
        "actor_loss": float(np.mean(stats["actor_loss"])),
        "critic_loss": float(np.mean(stats["critic_loss"])),
        "entropy": float(np.mean(stats["entropy"])),
        "approx_kl": float(np.mean(stats["approx_kl"])),
        "clip_frac": float(np.mean(stats["clip_frac"])),
        "first_ratio_dev": stats["ratio0"][0],
        "mean_reward": float(np.mean([ep.reward for ep in episodes])),
        "talent_mean": mean.tolist(),
        "talent_std": std.tolist(),
    }


def batch_select(batch, idx: torch.Tensor):
    return type(batch)(**{f.name: getattr(batch, f.name)[idx] for f in fields(batch)})


# -- checkpoints ----------------------------------------------------------------------

def _optim_state(opt: torch.optim.Optimizer) -> dict:
    sd = opt.state_dict()
    state = {}
    for k, v in sd["state"].items():
        state[str(k)] = {name: ({"tensor": t.reshape(-1).tolist(), "shape": list(t.shape)}
                                if torch.is_tensor(t) else t) for name, t in v.items()}
    return {"state": state, "param_groups": sd["param_groups"]}


def _load_optim_state(opt: torch.optim.Optimizer, d: dict) -> None:
    state = {}
    for k, v in d["state"].items():
        state[int(k)] = {name: (torch.as_tensor(t["tensor"], dtype=DTYPE if name != "step" else torch.float32)
                                .reshape(t["shape"]) if isinstance(t, dict) else t) for name, t in v.items()}
    opt.load_state_dict({"state": state, "param_groups": d["param_groups"]})


def save_checkpoint(path, policy, optim: Optimizers, progress: dict, config: TrainConfig,
                    fixed_talents: TalentVector | None = None) -> None:
    extra = {
        "progress": progress,
        "train_config": asdict(config),
        "fixed_talents": None if fixed_talents is None else fixed_talents.to_array().tolist(),
        "optim_actor": _optim_state(optim.actor),
        "optim_critic": _optim_state(optim.critic),
    }
    policy.save(path, extra)


def load_checkpoint(path):
    d = json.loads(Path(path).read_text())
    policy = TalentActorCritic.from_dict(d)
    return policy, d.get("extra", {})


# -- training loop ------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_history_rows(path: Path, rows: list[dict]) -> None:
    new = not path.exists()
    with path.open("a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            fh.write(f"# schema_version={HISTORY_SCHEMA}\n")
            w.writerow(HISTORY_FIELDS)
        for r in rows:
            w.writerow([_fmt(r.get(k, "")) for k in HISTORY_FIELDS])


def _truncate_history(path: Path, n_rows: int) -> None:
    if not path.exists():
        return
    lines = path.read_text().splitlines(keepends=True)
    path.write_text("".join(lines[:2 + n_rows]))


@dataclass
class TrainResult:
    policy: TalentActorCritic
    history: list[dict]
    checkpoint: Path | None
    metrics: list[dict]


def train(config: TrainConfig, pool: ScenarioPool, surface: TalentSurface | None = None,
          out_dir=None, fixed_talents: TalentVector | None = None, resume=None,
          max_batches: int | None = None) -> TrainResult:
    """Train until ``total_timesteps`` decisions have been collected.

    Co-design runs need ``surface``; fixed-design runs pass ``fixed_talents``
    and the talent head is left out of the optimization.
    """
    codesign = fixed_talents is None
    if codesign and surface is None:
        raise DomainError("co-design training needs a talent surface")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    history_path = out / "history.csv" if out is not None else None
    policy = TalentActorCritic(config.embedding_config(), codesign=codesign, seed=config.seed)
    optim = Optimizers.create(policy, config)
    progress = {"batch": 0, "episodes": 0, "timesteps": 0}
    if resume is not None:
        policy, extra = load_checkpoint(resume)
        if policy.codesign != codesign:
            raise DomainError("checkpoint co-design flag does not match the requested run")
        optim = Optimizers.create(policy, config)
        _load_optim_state(optim.actor, extra["optim_actor"])
        _load_optim_state(optim.critic, extra["optim_critic"])
        progress = dict(extra["progress"])
        if history_path is not None:
            _truncate_history(history_path, progress["episodes"])
    elif history_path is not None and history_path.exists():
        history_path.unlink()
    history, metrics = [], []
    checkpoint = None
    batches_run = 0
    while progress["timesteps"] < config.total_timesteps:
        if max_batches is not None and batches_run >= max_batches:
            break
        b = progress["batch"]
        first = progress["episodes"]
        eps = collect_batch(policy, pool, surface, range(first, first + config.batch_episodes), config.seed,
                            config.workers, "sample", fixed_talents, config.max_episode_steps)
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1_000_003, b]))
        dump = out / f"bad_batch_{b}.json" if out is not None else None
        m = update(policy, optim, eps, config, rng, dump)
        progress["batch"] = b + 1
        progress["episodes"] = first + len(eps)
        rows = []
        for ep in eps:
            progress["timesteps"] += ep.steps
            raw = ep.raw_talents if ep.raw_talents is not None else [math.nan, math.nan]
            rows.append({
                "episode": ep.index, "batch": b, "timesteps": progress["timesteps"], "scenario": ep.scenario,
                "reward": ep.reward, "success": ep.success, "elapsed": ep.elapsed, "surviving": ep.surviving,
                "steps": ep.steps, "raw_1": float(raw[0]), "raw_2": float(raw[1]),
                "search_speed": float(ep.talents[0]), "cruising_speed": float(ep.talents[1]),
                "flight_range": float(ep.talents[2]),
                "actor_loss": m["actor_loss"], "critic_loss": m["critic_loss"], "entropy": m["entropy"],
                "talent_mean_1": m["talent_mean"][0], "talent_mean_2": m["talent_mean"][1],
                "talent_std_1": m["talent_std"][0], "talent_std_2": m["talent_std"][1],
            })
        history.extend(rows)
        metrics.append(m)
        if history_path is not None:
            _write_history_rows(history_path, rows)
        log.info("batch %d: timesteps=%d mean_reward=%.3f entropy=%.3f talents=%s", b, progress["timesteps"],
                 m["mean_reward"], m["entropy"], np.round(m["talent_mean"], 3).tolist())
        batches_run += 1
        done = progress["timesteps"] >= config.total_timesteps
        if out is not None and (progress["batch"] % config.checkpoint_every == 0 or done):
            checkpoint = out / "checkpoint.json"
            save_checkpoint(checkpoint, policy, optim, progress, config, fixed_talents)
    if out is not None and checkpoint is None and progress["batch"] > 0:
        checkpoint = out / "checkpoint.json"
        save_checkpoint(checkpoint, policy, optim, progress, config, fixed_talents)
    return TrainResult(policy, history, checkpoint, metrics)


# -- evaluation ---------------------------------------------------------------------

@dataclass(frozen=True)
class EvalMetrics:
    episodes: int
    success_rate: float
    mean_reward: float
    mean_completion_time: float  # over successful episodes, nan if none
    survival_rate: float

    def as_row(self) -> dict:
        return asdict(self)


def evaluate(policy, pool: ScenarioPool, surface: TalentSurface | None, episodes: int = 250, seed: int = 0,
             mode: str = "deterministic", fixed_talents: TalentVector | None = None, workers: int = 1,
             max_steps: int = 1000) -> tuple[EvalMetrics, list[Episode]]:
    """Run ``episodes`` evaluation episodes; 'random' gives the uniform-action baseline.

    A co-design policy is evaluated with its talents held at the head's mean,
    whatever the action ``mode``.
    """
    if episodes < 1:
        raise DomainError("episodes must be >= 1")
    eps = collect_batch(policy, pool, surface, range(episodes), seed, workers, mode, fixed_talents, max_steps,
                        record=False, mean_talents=True)
    succ = [e for e in eps if e.success]
    initial = [sc.n_robots for sc in (pool.scenarios[e.scenario] for e in eps)]
    metrics = EvalMetrics(
        episodes=len(eps),
        success_rate=len(succ) / len(eps),
        mean_reward=float(np.mean([e.reward for e in eps])),
        mean_completion_time=float(np.mean([e.elapsed for e in succ])) if succ else math.nan,
        survival_rate=float(np.mean([e.surviving / n for e, n in zip(eps, initial)])),
    )
    return metrics, eps
