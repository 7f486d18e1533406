"""Polynomial model of the talent Pareto front and the talent decoder.

The front is modeled in the fixed conditioning order search speed ->
cruising speed -> flight range.  Each intermediate talent gets a pair of
5th/95th percentile polynomials conditioned on the talents before it; the
last talent is a least-squares polynomial of all the others.
"""
from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import linprog

from .errors import DomainError
from .morphology import TALENTS, TalentVector
from .pareto import ParetoSet

log = logging.getLogger(__name__)

SURFACE_FORMAT = "codesign-talent-surface"
SURFACE_VERSION = 1


def monomial_exponents(n_vars: int, degree: int) -> list[tuple[int, ...]]:
    """Exponent tuples of all monomials of total degree <= ``degree``.

    Ordered by total degree, then lexicographically descending, so for two
    variables: 1, x, y, x^2, xy, y^2, ...
    """
    out = []
    for total in range(degree + 1):
        combos = [e for e in itertools.product(range(total, -1, -1), repeat=n_vars) if sum(e) == total]
        out.extend(combos)
    return out


def design_matrix(X, degree: int) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    exps = monomial_exponents(X.shape[1], degree)
    return np.stack([np.prod(X ** np.array(e), axis=1) for e in exps], axis=1)


def polyval(coeffs, X, degree: int) -> np.ndarray:
    return design_matrix(X, degree) @ np.asarray(coeffs, dtype=float)


def _column_scales(A):
    s = np.abs(A).max(axis=0)
    s[s == 0] = 1.0
    return s


def fit_surrogate(X, y, degree: int = 2) -> tuple[np.ndarray, float]:
    """Least-squares polynomial of ``y`` on the columns of ``X``.

    Returns (coefficients in the raw monomial basis, RMS residual).
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    A = design_matrix(X, degree)
    n_coef = A.shape[1]
    if len(y) < n_coef:
        raise DomainError(f"need at least {n_coef} points for a degree-{degree} fit, got {len(y)}")
    scale = _column_scales(A)
    As = A / scale
    rank = np.linalg.matrix_rank(As)
    if rank < n_coef:
        raise DomainError(f"rank-deficient design matrix: rank {rank} < {n_coef} coefficients "
                          "(inputs lack spread for this degree)")
    coef, *_ = np.linalg.lstsq(As, y, rcond=None)
    coef = coef / scale
    rms = float(np.sqrt(np.mean((y - A @ coef) ** 2)))
    return coef, rms


def pinball_loss(residual, tau: float) -> float:
    u = np.asarray(residual, dtype=float)
    return float(np.sum(u * (tau - (u < 0))))


def fit_quantile(x, y, tau: float, degree: int = 2) -> np.ndarray:
    """Polynomial quantile regression by exact linear programming.

    Minimizes sum(rho_tau(y - p(x))) with the residual split into positive
    and negative parts.  ``x`` may be 1-D or an (n, k) array.
    """
    if not 0.0 < tau < 1.0:
        raise DomainError(f"tau must lie in (0, 1), got {tau}")
    X = np.asarray(x, dtype=float)
    X = X[:, None] if X.ndim == 1 else X
    y = np.asarray(y, dtype=float)
    n = len(y)
    if n < degree + 2:
        raise DomainError(f"need at least {degree + 2} points, got {n}")
    if np.any(np.ptp(X, axis=0) <= 1e-12 * np.maximum(1.0, np.abs(X).max(axis=0))):
        raise DomainError("degenerate x-spread: conditioning variable is constant")
    A = design_matrix(X, degree)
    scale = _column_scales(A)
    As = A / scale
    ys = np.abs(y).max() or 1.0
    k = A.shape[1]
    # variables: beta (free, k), u+ (n), u- (n)
    c = np.concatenate([np.zeros(k), np.full(n, tau), np.full(n, 1.0 - tau)])
    A_eq = np.hstack([As, np.eye(n), -np.eye(n)])
    bounds = [(None, None)] * k + [(0, None)] * (2 * n)
    res = linprog(c, A_eq=A_eq, b_eq=y / ys, bounds=bounds, method="highs")
    if res.status != 0:
        raise DomainError(f"quantile LP failed: {res.message}")
    return res.x[:k] / scale * ys


@dataclass(frozen=True)
class TalentSurface:
    degree: int
    t1_min: float
    t1_max: float
    surrogate_coeffs: np.ndarray
    q05_coeffs: tuple[np.ndarray, ...]  # one per intermediate talent 2..m-1
    q95_coeffs: tuple[np.ndarray, ...]
    talent_min: np.ndarray  # per-talent extent of the fitted Pareto set
    talent_max: np.ndarray
    surrogate_rms: float = 0.0

    def __post_init__(self):
        if not self.t1_min < self.t1_max:
            raise DomainError("t1_min must be < t1_max")

    @property
    def n_talents(self) -> int:
        return len(self.q05_coeffs) + 2

    @property
    def n_raw(self) -> int:
        return self.n_talents - 1

    def quantile_bounds(self, stage: int, previous) -> tuple[float, float]:
        """(Q05, Q95) for intermediate talent ``stage + 2`` given earlier talents.

        Crossed envelopes collapse to their midpoint.
        """
        prev = np.atleast_2d(np.asarray(previous, dtype=float))
        lo = float(polyval(self.q05_coeffs[stage], prev, self.degree)[0])
        hi = float(polyval(self.q95_coeffs[stage], prev, self.degree)[0])
        if lo > hi:
            lo = hi = 0.5 * (lo + hi)
        return lo, hi

    def q05(self, y1: float) -> float:
        return self.quantile_bounds(0, [y1])[0]

    def q95(self, y1: float) -> float:
        return self.quantile_bounds(0, [y1])[1]

    def f_s(self, leading) -> float:
        return float(polyval(self.surrogate_coeffs, np.atleast_2d(leading), self.degree)[0])

    def decode(self, raw) -> np.ndarray:
        raw = np.asarray(raw, dtype=float).ravel()
        if raw.shape != (self.n_raw,):
            raise DomainError(f"expected {self.n_raw} raw talent values, got {raw.shape}")
        if np.any(~np.isfinite(raw)) or np.any(raw < 0.0) or np.any(raw > 1.0):
            raise DomainError(f"raw talent outputs must lie in [0, 1], got {raw.tolist()}")
        y = [raw[0] * (self.t1_max - self.t1_min) + self.t1_min]
        for stage in range(self.n_raw - 1):
            lo, hi = self.quantile_bounds(stage, y)
            y.append(raw[stage + 1] * (hi - lo) + lo)
        y.append(self.f_s(y))
        return np.array(y)

    def encode(self, talents) -> np.ndarray:
        """Inverse of the affine part of ``decode``; the last talent is ignored."""
        t = np.asarray(talents, dtype=float).ravel()
        raw = [(t[0] - self.t1_min) / (self.t1_max - self.t1_min)]
        for stage in range(self.n_raw - 1):
            lo, hi = self.quantile_bounds(stage, t[:stage + 1])
            raw.append(0.0 if hi == lo else (t[stage + 1] - lo) / (hi - lo))
        return np.array(raw)

    # -- persistence ---------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format": SURFACE_FORMAT,
            "version": SURFACE_VERSION,
            "talents": list(TALENTS[:self.n_talents]) if self.n_talents == 3 else self.n_talents,
            "degree": self.degree,
            "t1_min": self.t1_min,
            "t1_max": self.t1_max,
            "surrogate_coeffs": [float(c) for c in self.surrogate_coeffs],
            "surrogate_rms": self.surrogate_rms,
            "q05_coeffs": [[float(c) for c in q] for q in self.q05_coeffs],
            "q95_coeffs": [[float(c) for c in q] for q in self.q95_coeffs],
            "talent_min": [float(v) for v in self.talent_min],
            "talent_max": [float(v) for v in self.talent_max],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TalentSurface":
        if d.get("format") != SURFACE_FORMAT:
            raise DomainError(f"not a talent surface file (format={d.get('format')!r})")
        if d.get("version") != SURFACE_VERSION:
            raise DomainError(f"unsupported talent surface version {d.get('version')}")
        return cls(
            degree=int(d["degree"]),
            t1_min=float(d["t1_min"]),
            t1_max=float(d["t1_max"]),
            surrogate_coeffs=np.array(d["surrogate_coeffs"], dtype=float),
            q05_coeffs=tuple(np.array(q, dtype=float) for q in d["q05_coeffs"]),
            q95_coeffs=tuple(np.array(q, dtype=float) for q in d["q95_coeffs"]),
            talent_min=np.array(d["talent_min"], dtype=float),
            talent_max=np.array(d["talent_max"], dtype=float),
            surrogate_rms=float(d.get("surrogate_rms", 0.0)),
        )

    def save(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "TalentSurface":
        return cls.from_dict(json.loads(Path(path).read_text()))


def fit_talent_surface(talents, degree: int = 2, grid: int = 512) -> TalentSurface:
    """Fit the full surface from an (n, m) talent array or a ParetoSet."""
    T = talents.talents if isinstance(talents, ParetoSet) else np.asarray(talents, dtype=float)
    m = T.shape[1]
    if m < 3:
        raise DomainError("the talent chain needs at least 3 talents")
    coef, rms = fit_surrogate(T[:, :m - 1], T[:, m - 1], degree)
    q05, q95 = [], []
    for i in range(1, m - 1):
        q05.append(fit_quantile(T[:, :i], T[:, i], 0.05, degree))
        q95.append(fit_quantile(T[:, :i], T[:, i], 0.95, degree))
    surface = TalentSurface(
        degree=degree,
        t1_min=float(T[:, 0].min()),
        t1_max=float(T[:, 0].max()),
        surrogate_coeffs=coef,
        q05_coeffs=tuple(q05),
        q95_coeffs=tuple(q95),
        talent_min=T.min(axis=0),
        talent_max=T.max(axis=0),
        surrogate_rms=rms,
    )
    ys = np.linspace(surface.t1_min, surface.t1_max, grid)[:, None]
    crossed = polyval(q05[0], ys, degree) > polyval(q95[0], ys, degree)
    if crossed.any():
        log.warning("quantile envelopes cross on %d of %d grid points; clamped to midpoint",
                    int(crossed.sum()), grid)
    return surface


def decode_talents(raw, surface: TalentSurface) -> TalentVector:
    return TalentVector.from_array(surface.decode(raw))
