"""Recover a concrete design whose talents match a target talent vector.

Mixed-discrete PSO: every gene moves in a continuous box, and the catalog
genes are snapped to their nearest entry whenever a particle is evaluated.
Residuals are Euclidean over talents divided by their Pareto-set spreads.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DomainError, InfeasibleError
from .morphology import DEFAULT_MODEL, DISCRETE, FIELDS, TALENTS, DesignBounds, DesignVector, MorphologyModel, TalentVector


@dataclass(frozen=True)
class PsoConfig:
    population: int = 150
    iterations: int = 80
    inertia: float = 0.9
    inertia_final: float = 0.4  # inertia decays linearly to this value
    cognitive: float = 1.49
    social: float = 1.49
    seed: int = 0
    penalty: float = 10.0
    max_velocity: float = 0.5  # fraction of each gene's range
    discrete_jump: float = 0.1  # per-iteration chance a catalog gene jumps to a random entry
    neighbors: int = 2  # ring-topology radius; 0 means global best

    def __post_init__(self):
        if self.population < 2:
            raise DomainError("population must be >= 2")
        if self.iterations < 1:
            raise DomainError("iterations must be >= 1")
        for name in ("inertia", "inertia_final", "cognitive", "social", "penalty", "max_velocity"):
            if getattr(self, name) < 0:
                raise DomainError(f"{name} must be >= 0")
        if self.neighbors < 0:
            raise DomainError("neighbors must be >= 0")
        if not 0.0 <= self.discrete_jump <= 1.0:
            raise DomainError("discrete_jump must lie in [0, 1]")


@dataclass
class FinalizeResult:
    design: DesignVector
    talents: TalentVector
    residual: float
    history: list[float] = field(default_factory=list)  # best objective after each iteration

    def save(self, path, history_path=None, metadata: dict | None = None) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        body = {
            "schema_version": 1,
            "design": {k: float(v) for k, v in zip(FIELDS, self.design.to_array())},
            "talents": {k: float(v) for k, v in zip(TALENTS, self.talents.to_array())},
            "residual": self.residual,
            "metadata": metadata or {},
        }
        Path(path).write_text(json.dumps(body, indent=2) + "\n")
        if history_path is not None:
            with open(history_path, "w", newline="") as fh:
                fh.write("# schema_version=1\n")
                w = csv.writer(fh)
                w.writerow(["iteration", "best_objective"])
                for i, v in enumerate(self.history):
                    w.writerow([i, repr(float(v))])


def default_spread(model: MorphologyModel = DEFAULT_MODEL, n: int = 4000) -> np.ndarray:
    """Talent extents over a fixed random sample of feasible designs."""
    X = model.sample_designs(n, np.random.default_rng(0))
    return np.ptp(model.talent_array(X), axis=0)


def _check_spread(spread) -> np.ndarray:
    s = np.asarray(spread, dtype=float)
    if s.shape != (3,) or np.any(~np.isfinite(s)) or np.any(s <= 0):
        raise DomainError(f"talent spreads must be 3 positive numbers, got {s.tolist()}")
    return s


def normalized_residual(talents, target, spread) -> np.ndarray:
    T = np.atleast_2d(np.asarray(talents, dtype=float))
    return np.linalg.norm((T - np.asarray(target, dtype=float)) / spread, axis=1)


def objective(X, target, spread, model: MorphologyModel, penalty: float):
    """(objective, residual, feasible) per row after catalog snapping."""
    Xs = model.snap(X)
    res = normalized_residual(model.talent_array(Xs), target, spread)
    viol = model.violation(Xs)
    return res + penalty * viol, res, viol <= 0.0


def finalize_morphology(target, bounds: DesignBounds | None = None, config: PsoConfig | None = None,
                        model: MorphologyModel | None = None, spread=None) -> FinalizeResult:
    model = model or DEFAULT_MODEL
    if bounds is not None and bounds != model.bounds:
        model = replace(model, bounds=bounds)
    config = config or PsoConfig()
    t = np.asarray(target.to_array() if isinstance(target, TalentVector) else target, dtype=float)
    if t.shape != (3,) or not np.all(np.isfinite(t)):
        raise DomainError(f"target must be 3 finite talents, got {t.tolist()}")
    spread = _check_spread(default_spread(model) if spread is None else spread)
    rng = np.random.default_rng(config.seed)
    lo, hi = model.bounds.lower, model.bounds.upper
    span = hi - lo
    n, d = config.population, len(FIELDS)
    catalogs = [(FIELDS.index(name), model.bounds.catalog(name)) for name in DISCRETE]
    X = lo + rng.random((n, d)) * span
    # spread the initial swarm evenly over every catalog combination
    combos = np.array(np.meshgrid(*[cat for _, cat in catalogs], indexing="ij")).reshape(len(catalogs), -1).T
    pick = combos[rng.permutation(np.arange(n) % len(combos))]
    for k, (j, _) in enumerate(catalogs):
        X[:, j] = pick[:, k]
    V = (rng.random((n, d)) - 0.5) * span * 0.1
    vmax = config.max_velocity * span
    f, res, feas = objective(X, t, spread, model, config.penalty)
    pbest, pbest_f = X.copy(), f.copy()
    ring = _ring(n, config.neighbors)
    best_feasible = (res[feas].min(), X[feas][np.argmin(res[feas])].copy()) if feas.any() else (np.inf, None)
    history = []
    for it in range(config.iterations):
        frac = it / max(config.iterations - 1, 1)
        w = config.inertia + (config.inertia_final - config.inertia) * frac
        r1, r2 = rng.random((n, d)), rng.random((n, d))
        V = w * V + config.cognitive * r1 * (pbest - X) + config.social * r2 * (pbest[_leaders(pbest_f, ring)] - X)
        V = np.clip(V, -vmax, vmax)
        X = X + V
        out = (X < lo) | (X > hi)
        X = np.clip(X, lo, hi)
        V[out] = 0.0
        # keep the catalog genes from collapsing onto one entry too early
        for j, cat in catalogs:
            jump = rng.random(n) < config.discrete_jump
            X[jump, j] = cat[rng.integers(len(cat), size=int(jump.sum()))]
            V[jump, j] = 0.0
        f, res, feas = objective(X, t, spread, model, config.penalty)
        better = f < pbest_f
        pbest[better], pbest_f[better] = X[better], f[better]
        g = int(np.argmin(pbest_f))
        if feas.any():
            i = int(np.argmin(np.where(feas, res, np.inf)))
            if res[i] < best_feasible[0]:
                best_feasible = (float(res[i]), X[i].copy())
        history.append(float(min(pbest_f[g], best_feasible[0])))
    if best_feasible[1] is None:
        raise InfeasibleError("no feasible particle found; widen the bounds or raise the population")
    design = model.snap(best_feasible[1])[0]
    return FinalizeResult(
        design=DesignVector.from_array(design),
        talents=TalentVector.from_array(model.talent_array(design[None])[0]),
        residual=float(best_feasible[0]),
        history=history,
    )


def _ring(n: int, radius: int) -> np.ndarray | None:
    if radius == 0 or 2 * radius + 1 >= n:
        return None
    offsets = np.arange(-radius, radius + 1)
    return (np.arange(n)[:, None] + offsets[None, :]) % n


def _leaders(pbest_f: np.ndarray, ring: np.ndarray | None) -> np.ndarray:
    """Index of the best personal best in each particle's neighborhood."""
    if ring is None:
        return np.full(len(pbest_f), int(np.argmin(pbest_f)))
    return ring[np.arange(len(pbest_f)), np.argmin(pbest_f[ring], axis=1)]


def exhaustive_oracle(target, spread, model: MorphologyModel | None = None, grid: int = 50,
                      width_grid: int = 5, chunk: int = 200_000) -> tuple[float, np.ndarray]:
    """Best feasible residual over a grid of the continuous genes times every catalog pair.

    Arm length, propeller diameter and payload get ``grid`` points each; arm
    width, which only adds frame mass, gets ``width_grid``.
    """
    model = model or DEFAULT_MODEL
    b = model.bounds
    t = np.asarray(target, dtype=float)
    spread = _check_spread(spread)
    axes = {
        "arm_length": np.linspace(*b.arm_length, grid),
        "arm_width": np.linspace(*b.arm_width, width_grid),
        "prop_diameter": np.linspace(*b.prop_diameter, grid),
        "payload_mass": np.linspace(*b.payload_mass, grid),
    }
    for name in DISCRETE:
        axes[name] = b.catalog(name)
    mesh = np.stack(np.meshgrid(*[axes[k] for k in FIELDS], indexing="ij"), axis=-1).reshape(-1, len(FIELDS))
    best, best_x = np.inf, None
    for start in range(0, len(mesh), chunk):
        X = mesh[start:start + chunk]
        ok = model.feasible_array(X)
        if not ok.any():
            continue
        r = np.where(ok, normalized_residual(model.talent_array(X), t, spread), np.inf)
        i = int(np.argmin(r))
        if r[i] < best:
            best, best_x = float(r[i]), X[i].copy()
    if best_x is None:
        raise InfeasibleError("grid contains no feasible design")
    return best, best_x
