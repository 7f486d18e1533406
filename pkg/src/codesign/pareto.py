"""Pareto dominance utilities and a mixed-discrete NSGA-II.

All objectives are maximized.  Callers with minimization objectives negate
them first (the simulator's Pareto-node filter does exactly that).
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError, InfeasibleError
from .morphology import DEFAULT_MODEL, FIELDS, TALENTS, DesignVector, MorphologyModel, TalentVector

log = logging.getLogger(__name__)

PARETO_SCHEMA_VERSION = 1


def dominates(a, b) -> bool:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DomainError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return bool(np.all(a >= b) and np.any(a > b))


def _dominance_matrix(F: np.ndarray) -> np.ndarray:
    """D[i, j] is True when row i dominates row j."""
    ge = np.all(F[:, None, :] >= F[None, :, :], axis=2)
    gt = np.any(F[:, None, :] > F[None, :, :], axis=2)
    return ge & gt


def nondominated_filter(points) -> list[int]:
    """Sorted indices of the points that no other point dominates.

    Duplicates do not dominate each other, so every copy of a non-dominated
    point is kept.
    """
    F = np.asarray(points, dtype=float)
    if F.ndim != 2 or len(F) == 0:
        raise DomainError("nondominated_filter needs a non-empty 2-D array of points")
    keep = np.ones(len(F), dtype=bool)
    # blockwise to bound memory on large clouds
    block = max(1, 4_000_000 // max(1, len(F) * F.shape[1]))
    for start in range(0, len(F), block):
        chunk = F[start:start + block]
        ge = np.all(F[:, None, :] >= chunk[None, :, :], axis=2)
        gt = np.any(F[:, None, :] > chunk[None, :, :], axis=2)
        keep[start:start + block] = ~np.any(ge & gt, axis=0)
    return np.flatnonzero(keep).tolist()


def fast_nondominated_sort(points) -> list[list[int]]:
    F = np.asarray(points, dtype=float)
    if F.ndim != 2 or len(F) == 0:
        raise DomainError("fast_nondominated_sort needs a non-empty 2-D array of points")
    D = _dominance_matrix(F)
    count = D.sum(axis=0)  # how many points dominate j
    fronts = []
    current = np.flatnonzero(count == 0)
    while len(current):
        fronts.append(current.tolist())
        count = count - D[current].sum(axis=0)
        count[current] = -1
        current = np.flatnonzero(count == 0)
    return fronts


def crowding_distance(front) -> np.ndarray:
    """Crowding distance of each row of ``front`` (objective values)."""
    F = np.asarray(front, dtype=float)
    if F.ndim != 2 or len(F) == 0:
        raise DomainError("crowding_distance needs a non-empty front")
    n, m = F.shape
    dist = np.zeros(n)
    if n <= 2:
        dist[:] = np.inf
        return dist
    for k in range(m):
        order = np.argsort(F[:, k], kind="stable")
        lo, hi = F[order[0], k], F[order[-1], k]
        dist[order[0]] = dist[order[-1]] = np.inf
        if hi == lo:
            continue
        dist[order[1:-1]] += (F[order[2:], k] - F[order[:-2], k]) / (hi - lo)
    return dist


@dataclass
class MooConfig:
    population_size: int = 120
    generations: int = 40
    runs: int = 6
    crossover_rate: float = 0.9
    mutation_rate: float | None = None  # per gene; default 1 / n_genes
    eta_crossover: float = 15.0
    eta_mutation: float = 20.0
    seed: int = 0
    init_retries: int = 50

    def __post_init__(self):
        if self.population_size < 4 or self.population_size % 2:
            raise DomainError("population_size must be even and >= 4")
        if self.generations < 0 or self.runs < 1:
            raise DomainError("generations must be >= 0 and runs >= 1")
        for name in ("crossover_rate", "mutation_rate"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise DomainError(f"{name} must lie in [0, 1]")


@dataclass
class Problem:
    """A box-bounded problem with continuous genes and catalog (integer) genes.

    ``evaluate`` maps the decoded population (n x n_genes, catalog genes as
    catalog values) to (objectives n x m, violation n); violation 0 means
    feasible.
    """

    lower: np.ndarray
    upper: np.ndarray
    evaluate: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]
    catalogs: dict[int, np.ndarray] = field(default_factory=dict)

    def decode(self, G: np.ndarray) -> np.ndarray:
        X = G.copy()
        for j, cat in self.catalogs.items():
            X[:, j] = cat[G[:, j].astype(int)]
        return X

    def random(self, n, rng) -> np.ndarray:
        G = rng.uniform(self.lower, self.upper, size=(n, len(self.lower)))
        for j, cat in self.catalogs.items():
            G[:, j] = rng.integers(0, len(cat), size=n)
        return G


def _rank_population(F, V):
    """Constraint-domination ranking: (rank, crowding) per individual."""
    n = len(F)
    rank = np.empty(n, dtype=int)
    crowd = np.zeros(n)
    feas = np.flatnonzero(V <= 0)
    infeas = np.flatnonzero(V > 0)
    r = 0
    if len(feas):
        for front in fast_nondominated_sort(F[feas]):
            idx = feas[front]
            rank[idx] = r
            crowd[idx] = crowding_distance(F[idx])
            r += 1
    # infeasible: ranked after every feasible front by increasing violation
    if len(infeas):
        order = infeas[np.argsort(V[infeas], kind="stable")]
        rank[order] = r + np.arange(len(order))
    return rank, crowd


def _better(i, j, rank, crowd):
    if rank[i] != rank[j]:
        return rank[i] < rank[j]
    return crowd[i] > crowd[j]


def _sbx(p1, p2, lo, hi, eta, rng):
    c1, c2 = p1.copy(), p2.copy()
    for k in range(len(p1)):
        if rng.random() > 0.5 or abs(p1[k] - p2[k]) < 1e-14:
            continue
        y1, y2 = min(p1[k], p2[k]), max(p1[k], p2[k])
        span = y2 - y1
        u = rng.random()
        beta = 1.0 + 2.0 * (y1 - lo[k]) / span
        alpha = 2.0 - beta ** -(eta + 1.0)
        bq = (u * alpha) ** (1.0 / (eta + 1.0)) if u <= 1.0 / alpha else (1.0 / (2.0 - u * alpha)) ** (1.0 / (eta + 1.0))
        a = 0.5 * (y1 + y2 - bq * span)
        beta = 1.0 + 2.0 * (hi[k] - y2) / span
        alpha = 2.0 - beta ** -(eta + 1.0)
        bq = (u * alpha) ** (1.0 / (eta + 1.0)) if u <= 1.0 / alpha else (1.0 / (2.0 - u * alpha)) ** (1.0 / (eta + 1.0))
        b = 0.5 * (y1 + y2 + bq * span)
        a, b = np.clip(a, lo[k], hi[k]), np.clip(b, lo[k], hi[k])
        if rng.random() < 0.5:
            a, b = b, a
        c1[k], c2[k] = a, b
    return c1, c2


def _poly_mutation(x, lo, hi, eta, rate, rng):
    y = x.copy()
    for k in range(len(x)):
        if rng.random() >= rate:
            continue
        span = hi[k] - lo[k]
        d1, d2 = (y[k] - lo[k]) / span, (hi[k] - y[k]) / span
        u = rng.random()
        p = 1.0 / (eta + 1.0)
        if u < 0.5:
            dq = (2 * u + (1 - 2 * u) * (1 - d1) ** (eta + 1)) ** p - 1.0
        else:
            dq = 1.0 - (2 * (1 - u) + 2 * (u - 0.5) * (1 - d2) ** (eta + 1)) ** p
        y[k] = np.clip(y[k] + dq * span, lo[k], hi[k])
    return y


def _variation(G, rank, crowd, problem: Problem, config: MooConfig, rng):
    n, ng = G.shape
    cont = np.array([j for j in range(ng) if j not in problem.catalogs], dtype=int)
    disc = sorted(problem.catalogs)
    rate = config.mutation_rate if config.mutation_rate is not None else 1.0 / ng
    lo, hi = problem.lower[cont], problem.upper[cont]

    def tournament():
        i, j = rng.integers(0, n, size=2)
        return i if _better(i, j, rank, crowd) else j

    children = []
    while len(children) < n:
        a, b = G[tournament()], G[tournament()]
        c1, c2 = a.copy(), b.copy()
        if rng.random() < config.crossover_rate:
            c1[cont], c2[cont] = _sbx(a[cont], b[cont], lo, hi, config.eta_crossover, rng)
            for j in disc:
                if rng.random() < 0.5:
                    c1[j], c2[j] = c2[j], c1[j]
        for c in (c1, c2):
            c[cont] = _poly_mutation(c[cont], lo, hi, config.eta_mutation, rate, rng)
            for j in disc:
                if rng.random() < rate:
                    c[j] = rng.integers(0, len(problem.catalogs[j]))
            children.append(c)
    return np.array(children[:n])


def _environmental_selection(G, F, V, n):
    rank, crowd = _rank_population(F, V)
    order = np.lexsort((-crowd, rank))
    keep = order[:n]
    return G[keep], F[keep], V[keep]


def nsga2(problem: Problem, config: MooConfig, seed: int | None = None):
    """One NSGA-II run.  Returns the final (genes, objectives, violations)."""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    n = config.population_size
    G = problem.random(n, rng)
    F, V = problem.evaluate(problem.decode(G))
    tries = 0
    while not np.any(V <= 0):
        tries += 1
        if tries > config.init_retries:
            raise InfeasibleError("no feasible individual after initialization retries")
        G = problem.random(n, rng)
        F, V = problem.evaluate(problem.decode(G))
    for _ in range(config.generations):
        rank, crowd = _rank_population(F, V)
        C = _variation(G, rank, crowd, problem, config, rng)
        Fc, Vc = problem.evaluate(problem.decode(C))
        G, F, V = _environmental_selection(np.vstack([G, C]), np.vstack([F, Fc]), np.concatenate([V, Vc]), n)
    return G, F, V


def hypervolume_2d(points, reference) -> float:
    """Area dominated by ``points`` (maximization) above ``reference``."""
    P = np.asarray(points, dtype=float)
    ref = np.asarray(reference, dtype=float)
    P = P[np.all(P > ref, axis=1)]
    if len(P) == 0:
        return 0.0
    P = P[nondominated_filter(P)]
    P = P[np.argsort(-P[:, 0], kind="stable")]
    area, y_prev = 0.0, ref[1]
    for x, y in P:
        if y > y_prev:
            area += (x - ref[0]) * (y - y_prev)
            y_prev = y
    return float(area)


# -- talent Pareto set ------------------------------------------------------

@dataclass
class ParetoSet:
    designs: np.ndarray  # n x 6, FIELDS order
    talents: np.ndarray  # n x 3, TALENTS order, all maximized

    def __len__(self):
        return len(self.designs)

    @property
    def points(self) -> list[tuple[DesignVector, TalentVector]]:
        return [(DesignVector.from_array(x), TalentVector.from_array(t)) for x, t in zip(self.designs, self.talents)]

    def save(self, path, metadata: dict | None = None) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            fh.write(f"# schema_version={PARETO_SCHEMA_VERSION}\n")
            for k, v in sorted((metadata or {}).items()):
                fh.write(f"# {k}={v}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(FIELDS + TALENTS)
            for x, t in zip(self.designs, self.talents):
                w.writerow([repr(float(v)) for v in (*x, *t)])

    @classmethod
    def load(cls, path) -> "ParetoSet":
        lines = Path(path).read_text().splitlines()
        body = [ln for ln in lines if not ln.startswith("#")]
        if not body:
            raise DomainError(f"{path}: missing header row")
        rows = list(csv.reader(body))
        header = tuple(rows[0])
        if header != FIELDS + TALENTS:
            raise DomainError(f"{path}: unexpected header {header}")
        data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float).reshape(-1, 9)
        return cls(designs=data[:, :6], talents=data[:, 6:])


def design_problem(model: MorphologyModel = DEFAULT_MODEL) -> Problem:
    b = model.bounds
    lower = model.bounds.lower.copy()
    upper = model.bounds.upper.copy()
    catalogs = {}
    for j, name in enumerate(FIELDS):
        if name in ("motor_power", "battery_capacity"):
            cat = b.catalog(name)
            catalogs[j] = cat
            lower[j], upper[j] = 0, len(cat) - 1

    def evaluate(X):
        return model.talent_array(X), model.violation(X)

    return Problem(lower=lower, upper=upper, evaluate=evaluate, catalogs=catalogs)


def nsga2_run(config: MooConfig, model: MorphologyModel = DEFAULT_MODEL) -> ParetoSet:
    """``config.runs`` seeded NSGA-II runs on the talent objectives, merged and re-filtered."""
    problem = design_problem(model)
    designs, talents = [], []
    for r in range(config.runs):
        G, F, V = nsga2(problem, config, seed=config.seed + r)
        ok = V <= 0
        front = np.asarray(nondominated_filter(F[ok]), dtype=int) if ok.any() else np.zeros(0, int)
        designs.append(problem.decode(G[ok])[front])
        talents.append(F[ok][front])
        log.info("nsga2 run %d: %d non-dominated of %d feasible", r, len(front), int(ok.sum()))
    X = np.vstack(designs)
    T = np.vstack(talents)
    keep = nondominated_filter(T)
    X, T = X[keep], T[keep]
    # exact duplicates survive the filter; drop them deterministically
    _, first = np.unique(np.hstack([X, T]), axis=0, return_index=True)
    first = np.sort(first)
    return ParetoSet(designs=X[first], talents=T[first])
