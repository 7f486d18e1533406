"""Graph actor-critic with a state-independent talent head.

Everything works on padded batches: each entity graph is a (B, N, F)
tensor plus a (B, N) validity mask, so states with different Pareto-node
counts can share a minibatch.  The network runs in float64; it is small and
the finite-difference checks need the precision.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .errors import DomainError
from .sim.mission import (
    ACT_FEATURES, ADV_FEATURES, BLD_FEATURES, MISSION_FEATURES, PATH_MODES, UAV_FEATURES, UGV_FEATURES,
    MissionState, TacticalAction,
)

DTYPE = torch.float64
CHECKPOINT_FORMAT = "codesign-policy"
CHECKPOINT_VERSION = 1
GRAPHS = ("bld", "uav", "ugv", "adv")
GRAPH_WIDTHS = {"bld": BLD_FEATURES, "uav": UAV_FEATURES, "ugv": UGV_FEATURES, "adv": ADV_FEATURES}
N_TALENTS = 3


@dataclass(frozen=True)
class EmbeddingConfig:
    h: int = 32
    p_moments: int = 2
    layers: int = 1
    heads: int = 4
    logit_clip: float = 10.0
    init_log_std: float = math.log(0.3)

    def __post_init__(self):
        for name in ("h", "p_moments", "layers", "heads"):
            if getattr(self, name) < 1:
                raise DomainError(f"{name} must be >= 1")
        if self.h % self.heads:
            raise DomainError(f"h={self.h} is not divisible by heads={self.heads}")


# -- batching --------------------------------------------------------------------

@dataclass
class Batch:
    bld: torch.Tensor
    bld_mask: torch.Tensor
    uav: torch.Tensor
    uav_mask: torch.Tensor
    ugv: torch.Tensor
    ugv_mask: torch.Tensor
    adv: torch.Tensor
    adv_mask: torch.Tensor
    acting: torch.Tensor
    talents: torch.Tensor
    mission: torch.Tensor
    action_mask: torch.Tensor  # (B, 3, N_bld)

    def __len__(self):
        return self.bld.shape[0]

    def graph(self, name):
        return getattr(self, name), getattr(self, name + "_mask")


def _pad(arrays: Sequence[np.ndarray], width: int):
    n = max(1, max(len(a) for a in arrays))
    out = np.zeros((len(arrays), n, width))
    mask = np.zeros((len(arrays), n), dtype=bool)
    for i, a in enumerate(arrays):
        out[i, :len(a)] = a
        mask[i, :len(a)] = True
    return torch.as_tensor(out, dtype=DTYPE), torch.as_tensor(mask)


def collate(states: Sequence[MissionState]) -> Batch:
    bld, bld_mask = _pad([s.buildings for s in states], BLD_FEATURES)
    uav, uav_mask = _pad([s.uav for s in states], UAV_FEATURES)
    ugv, ugv_mask = _pad([s.ugv for s in states], UGV_FEATURES)
    adv, adv_mask = _pad([s.adversaries for s in states], ADV_FEATURES)
    nb = bld.shape[1]
    am = np.zeros((len(states), 3, nb), dtype=bool)
    for i, s in enumerate(states):
        n = len(s.buildings)
        am[i, :, :n] = np.asarray(s.action_mask, dtype=bool).reshape(3, n)
    return Batch(
        bld=bld, bld_mask=bld_mask, uav=uav, uav_mask=uav_mask, ugv=ugv, ugv_mask=ugv_mask,
        adv=adv, adv_mask=adv_mask,
        acting=torch.as_tensor(np.stack([s.acting for s in states]), dtype=DTYPE),
        talents=torch.as_tensor(np.stack([s.talents for s in states]), dtype=DTYPE),
        mission=torch.as_tensor(np.stack([s.mission for s in states]), dtype=DTYPE),
        action_mask=torch.as_tensor(am),
    )


def flat_index(batch_n: int, action: int, n_states_nodes: int) -> int:
    """Map an action index over the state's own N nodes to the padded (3, N_pad) layout."""
    mode, node = divmod(action, n_states_nodes)
    return mode * batch_n + node


# -- layers ------------------------------------------------------------------------

def normalized_laplacian(pos: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """I - D^-1/2 W D^-1/2 over a complete graph with weights 1 / (1 + distance).

    Padded nodes get all-zero rows and columns; isolated nodes keep their
    identity entry.
    """
    diff = pos[:, :, None, :] - pos[:, None, :, :]
    dist = torch.sqrt((diff ** 2).sum(-1) + 1e-300)
    valid = mask[:, :, None] & mask[:, None, :]
    eye = torch.eye(pos.shape[1], dtype=torch.bool, device=pos.device)
    W = torch.where(valid & ~eye, 1.0 / (1.0 + dist), torch.zeros_like(dist))
    deg = W.sum(-1)
    inv_sqrt = torch.where(deg > 0, deg.clamp_min(1e-300).rsqrt(), torch.zeros_like(deg))
    L = torch.diag_embed(mask.to(pos.dtype)) - inv_sqrt[:, :, None] * W * inv_sqrt[:, None, :]
    return L


class GCAPCN(nn.Module):
    """Graph capsule encoder: statistical moments of node features propagated by the Laplacian."""

    def __init__(self, in_dim: int, cfg: EmbeddingConfig):
        super().__init__()
        self.in_dim = in_dim
        self.cfg = cfg
        self.init_embed = nn.Linear(in_dim, cfg.h)
        layers = []
        width = cfg.h
        for _ in range(cfg.layers):
            layers.append(nn.ModuleList(nn.Linear(width, cfg.h) for _ in range(cfg.p_moments)))
            width = cfg.h * cfg.p_moments
        self.capsules = nn.ModuleList(layers)
        self.project = nn.Linear(width, cfg.h)

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.in_dim:
            raise DomainError(f"node property width {x.shape[-1]} != expected {self.in_dim}")
        lap = normalized_laplacian(x[..., :2], mask)
        f0 = self.init_embed(x)
        hidden = f0
        for layer in self.capsules:
            base = torch.tanh(hidden)
            caps = [torch.tanh(lin(lap @ base ** (p + 1))) for p, lin in enumerate(layer)]
            hidden = torch.cat(caps, dim=-1)
        out = f0 + self.project(hidden)
        return out * mask[..., None].to(out.dtype)


def masked_mean(x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    m = mask[..., None].to(x.dtype)
    return (x * m).sum(1) / m.sum(1).clamp_min(1.0)


class MHADecoder(nn.Module):
    """Context-query attention over building embeddings, then one logit per building."""

    def __init__(self, h: int, ctx_dim: int, heads: int, clip: float):
        super().__init__()
        self.h, self.heads, self.clip = h, heads, clip
        self.w_q = nn.Linear(ctx_dim, h, bias=False)
        self.w_k = nn.Linear(h, h, bias=False)
        self.w_v = nn.Linear(h, h, bias=False)
        self.w_o = nn.Linear(h, h)
        self.ff = nn.Sequential(nn.Linear(h, h), nn.ReLU(), nn.Linear(h, h))
        self.w_l = nn.Linear(h, h, bias=False)

    def attention(self, nodes: torch.Tensor, ctx: torch.Tensor, mask: torch.Tensor):
        B, N, h = nodes.shape
        dk = h // self.heads
        q = self.w_q(ctx).view(B, self.heads, dk)
        k = self.w_k(nodes).view(B, N, self.heads, dk)
        v = self.w_v(nodes).view(B, N, self.heads, dk)
        scores = torch.einsum("bhd,bnhd->bhn", q, k) / math.sqrt(dk)
        scores = scores.masked_fill(~mask[:, None, :], float("-inf"))
        attn = torch.softmax(scores, dim=-1)
        glimpse = torch.einsum("bhn,bnhd->bhd", attn, v).reshape(B, h)
        return attn, glimpse

    def forward(self, nodes: torch.Tensor, ctx: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        _, glimpse = self.attention(nodes, ctx, mask)
        g = self.ff(self.w_o(glimpse))
        logits = torch.einsum("bh,bnh->bn", g, self.w_l(nodes)) / math.sqrt(self.h)
        return self.clip * torch.tanh(logits / self.clip) if self.clip else logits


class TalentHead(nn.Module):
    """Constant-output talent network.

    The input weights are a zero buffer, so they never receive updates and
    the output cannot depend on the state.
    """

    def __init__(self, in_dim: int, hidden: int, n_out: int):
        super().__init__()
        self.register_buffer("w_in", torch.zeros(hidden, in_dim, dtype=DTYPE))
        self.b_hidden = nn.Parameter(torch.zeros(hidden, dtype=DTYPE))
        self.out = nn.Linear(hidden, n_out)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        hidden = torch.tanh(F.linear(x, self.w_in, self.b_hidden))
        return torch.sigmoid(self.out(hidden))


class Encoder(nn.Module):
    """Four entity-graph encoders plus the acting-platoon and talent transforms -> context."""

    def __init__(self, cfg: EmbeddingConfig):
        super().__init__()
        self.gnn = nn.ModuleDict({g: GCAPCN(GRAPH_WIDTHS[g], cfg) for g in GRAPHS})
        self.acting = nn.Linear(ACT_FEATURES, cfg.h)
        self.talent = nn.Linear(N_TALENTS, cfg.h)

    def forward(self, batch: Batch):
        emb = {g: self.gnn[g](*batch.graph(g)) for g in GRAPHS}
        ctx = context(
            [masked_mean(emb[g], getattr(batch, g + "_mask")) for g in GRAPHS],
            self.acting(batch.acting), self.talent(batch.talents),
        )
        return emb, ctx


def context(graph_means: Sequence[torch.Tensor], f_act: torch.Tensor, f_tl: torch.Tensor) -> torch.Tensor:
    """Concatenate (BLD, UAV, UGV, ADV) means with the acting-platoon and talent features."""
    parts = list(graph_means) + [f_act, f_tl]
    widths = {p.shape[-1] for p in parts}
    if len(widths) != 1:
        raise DomainError(f"context parts differ in width: {sorted(widths)}")
    return torch.cat(parts, dim=-1)


@dataclass
class PolicyOutput:
    logits: torch.Tensor  # (B, 3 * N_pad), masked entries are -inf
    talent_mean: torch.Tensor  # (B, n_raw)
    talent_std: torch.Tensor  # (n_raw,)


class TalentActorCritic(nn.Module):
    def __init__(self, cfg: EmbeddingConfig | None = None, codesign: bool = True, seed: int = 0):
        super().__init__()
        self.cfg = cfg or EmbeddingConfig()
        self.codesign = codesign
        n_raw = N_TALENTS - 1
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            h = self.cfg.h
            self.actor_encoder = Encoder(self.cfg)
            self.decoders = nn.ModuleList(
                MHADecoder(h, 6 * h, self.cfg.heads, self.cfg.logit_clip) for _ in PATH_MODES)
            self.talent_head = TalentHead(6 * h, h, n_raw)
            self.talent_log_std = nn.Parameter(torch.full((n_raw,), self.cfg.init_log_std, dtype=DTYPE))
            self.critic_encoder = Encoder(self.cfg)
            self.value_head = nn.Sequential(
                nn.Linear(6 * h + MISSION_FEATURES + N_TALENTS, h), nn.ReLU(), nn.Linear(h, 1))
        self.to(DTYPE)
        nn.init.zeros_(self.talent_head.out.bias)

    # -- parameter groups -----------------------------------------------------------

    def actor_parameters(self):
        mods = [self.actor_encoder, self.decoders]
        params = [p for m in mods for p in m.parameters()]
        if self.codesign:
            params += list(self.talent_head.parameters()) + [self.talent_log_std]
        return params

    def critic_parameters(self):
        return list(self.critic_encoder.parameters()) + list(self.value_head.parameters())

    # -- forward --------------------------------------------------------------------

    def actor(self, batch: Batch) -> PolicyOutput:
        emb, ctx = self.actor_encoder(batch)
        logits = torch.stack([d(emb["bld"], ctx, batch.bld_mask) for d in self.decoders], dim=1)
        logits = logits.masked_fill(~batch.action_mask, float("-inf"))
        if not batch.action_mask.reshape(len(batch), -1).any(dim=1).all():
            raise DomainError("every action is masked for some state")
        return PolicyOutput(logits.reshape(len(batch), -1), self.talent_head(ctx), self.talent_log_std.exp())

    def talent_mean(self) -> torch.Tensor:
        """The head's constant output; any input gives the same result."""
        return self.talent_head(torch.zeros(1, 6 * self.cfg.h, dtype=DTYPE))[0]

    def value(self, batch: Batch) -> torch.Tensor:
        _, ctx = self.critic_encoder(batch)
        return self.value_head(torch.cat([ctx, batch.mission, batch.talents], dim=-1)).squeeze(-1)

    def evaluate_parts(self, batch: Batch, actions: torch.Tensor, raw_talents: torch.Tensor):
        """Per-transition (action logp, talent logp, action entropy, talent entropy, value).

        The talent terms are zero for fixed-design policies; callers decide
        where they apply (first steps only).
        """
        out = self.actor(batch)
        logp_all = torch.log_softmax(out.logits, dim=-1)
        logp = logp_all.gather(1, actions[:, None]).squeeze(1)
        probs = logp_all.exp()
        # masked entries: zero the -inf before multiplying so no NaN reaches the gradient
        entropy = -(probs * logp_all.masked_fill(~torch.isfinite(logp_all), 0.0)).sum(-1)
        if self.codesign:
            dist = torch.distributions.Normal(out.talent_mean, out.talent_std)
            t_logp = dist.log_prob(raw_talents).sum(-1)
            t_ent = dist.entropy().sum(-1)
        else:
            t_logp = t_ent = torch.zeros_like(logp)
        return logp, t_logp, entropy, t_ent, self.value(batch)

    def evaluate(self, batch: Batch, actions: torch.Tensor, raw_talents: torch.Tensor, first_step: torch.Tensor):
        """Joint log-prob, entropy and value for stored (padded-index) actions."""
        logp, t_logp, entropy, t_ent, value = self.evaluate_parts(batch, actions, raw_talents)
        first = first_step.to(DTYPE)
        return logp + first * t_logp, entropy + first * t_ent, value

    # -- acting ----------------------------------------------------------------------

    def sample_talents(self, rng: np.random.Generator, deterministic: bool = False) -> np.ndarray:
        with torch.no_grad():
            mean = self.talent_mean().numpy()
            std = self.talent_log_std.exp().numpy()
        if deterministic:
            return mean.copy()
        return np.clip(mean + std * rng.standard_normal(len(mean)), 0.0, 1.0)

    def talent_log_prob(self, raw) -> float:
        with torch.no_grad():
            dist = torch.distributions.Normal(self.talent_mean(), self.talent_log_std.exp())
            return float(dist.log_prob(torch.as_tensor(raw, dtype=DTYPE)).sum())

    def act(self, state: MissionState, rng: np.random.Generator | None = None, mode: str = "sample",
            held_talents=None, first_step: bool = True):
        """Choose an action for the acting platoon.

        Returns (action, action index over the state's own nodes, raw talents,
        joint log-prob, entropy).  Talent log-probs enter only on the first
        step of an episode and only for co-design policies.
        """
        if mode not in ("sample", "deterministic"):
            raise DomainError(f"unknown act mode {mode!r}")
        deterministic = mode == "deterministic"
        if held_talents is None and self.codesign:
            held_talents = self.sample_talents(rng, deterministic)
        raw = None if held_talents is None else np.asarray(held_talents, dtype=float)
        with torch.no_grad():
            batch = collate([state])
            out = self.actor(batch)
            logp_all = torch.log_softmax(out.logits[0], dim=-1).numpy()
        n_pad = batch.bld.shape[1]
        n = len(state.pareto_nodes)
        probs = np.exp(logp_all)
        if deterministic:
            flat = int(np.argmax(np.where(np.isfinite(logp_all), logp_all, -np.inf)))
        else:
            cdf = np.cumsum(probs)
            flat = int(min(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"), len(cdf) - 1))
            while not np.isfinite(logp_all[flat]):
                flat -= 1
        mode_i, node_i = divmod(flat, n_pad)
        index = mode_i * n + node_i
        logp = float(logp_all[flat])
        ent = float(-np.sum(np.where(probs > 0, probs * np.where(np.isfinite(logp_all), logp_all, 0.0), 0.0)))
        if self.codesign and first_step and raw is not None:
            logp += self.talent_log_prob(raw)
        action = TacticalAction(state.pareto_nodes[node_i], PATH_MODES[mode_i])
        return action, index, raw, logp, ent

    def state_value(self, state: MissionState) -> float:
        with torch.no_grad():
            return float(self.value(collate([state]))[0])

    # -- persistence ----------------------------------------------------------------

    def save(self, path, extra: dict | None = None) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(json.dumps(self.to_dict(extra)) + "\n")

    def to_dict(self, extra: dict | None = None) -> dict:
        params = {k: {"shape": list(v.shape), "data": v.detach().reshape(-1).tolist()}
                  for k, v in self.state_dict().items()}
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config": asdict(self.cfg),
            "codesign": self.codesign,
            "shapes": {k: v["shape"] for k, v in params.items()},
            "params": {k: v["data"] for k, v in params.items()},
            "extra": extra or {},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TalentActorCritic":
        if d.get("format") != CHECKPOINT_FORMAT or d.get("version") != CHECKPOINT_VERSION:
            raise DomainError("not a compatible policy checkpoint")
        model = cls(EmbeddingConfig(**d["config"]), codesign=d["codesign"])
        model.load_params(d)
        return model

    def load_params(self, d: dict) -> None:
        own = self.state_dict()
        if set(own) != set(d["shapes"]):
            raise DomainError(f"checkpoint tensors differ: missing {sorted(set(own) - set(d['shapes']))}, "
                              f"unexpected {sorted(set(d['shapes']) - set(own))}")
        new = {}
        for k, v in own.items():
            if list(v.shape) != list(d["shapes"][k]):
                raise DomainError(f"shape mismatch for {k}: checkpoint {d['shapes'][k]} vs model {list(v.shape)}")
            new[k] = torch.as_tensor(d["params"][k], dtype=v.dtype).reshape(v.shape)
        self.load_state_dict(new)

    @classmethod
    def load(cls, path) -> "TalentActorCritic":
        return cls.from_dict(json.loads(Path(path).read_text()))
