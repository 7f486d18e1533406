"""Quadcopter design space and the analytic morphology -> talent surrogate.

The surrogate is deliberately simple.  Mass is a sum of component masses,
thrust comes from momentum theory, cruise speed from the thrust surplus over
weight, and range from usable battery energy divided by cruise power.  The
search speed of the perimeter sensor grows linearly with its mass (payload).

All array functions take designs as rows of ``FIELDS`` order, so the same
code serves single evaluations, NSGA-II populations and PSO swarms.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .errors import DomainError

FIELDS = ("arm_length", "arm_width", "motor_power", "battery_capacity", "prop_diameter", "payload_mass")
CONTINUOUS = ("arm_length", "arm_width", "prop_diameter", "payload_mass")
DISCRETE = ("motor_power", "battery_capacity")
TALENTS = ("search_speed", "cruising_speed", "flight_range")

GRAVITY = 9.81
AIR_DENSITY = 1.225


@dataclass(frozen=True)
class DesignVector:
    arm_length: float  # m
    arm_width: float  # m
    motor_power: float  # W per motor, catalog value
    battery_capacity: float  # Wh, catalog value
    prop_diameter: float  # m
    payload_mass: float  # kg

    def to_array(self) -> np.ndarray:
        return np.array([getattr(self, f) for f in FIELDS], dtype=float)

    @classmethod
    def from_array(cls, a) -> "DesignVector":
        a = np.asarray(a, dtype=float)
        return cls(*(float(v) for v in a))


@dataclass(frozen=True)
class TalentVector:
    search_speed: float  # m/s of perimeter covered per UAV
    cruising_speed: float  # m/s
    flight_range: float  # m

    def to_array(self) -> np.ndarray:
        return np.array([self.search_speed, self.cruising_speed, self.flight_range])

    @classmethod
    def from_array(cls, a) -> "TalentVector":
        a = np.asarray(a, dtype=float)
        return cls(float(a[0]), float(a[1]), float(a[2]))


@dataclass(frozen=True)
class DesignBounds:
    arm_length: tuple[float, float] = (0.10, 0.35)
    arm_width: tuple[float, float] = (0.01, 0.05)
    prop_diameter: tuple[float, float] = (0.08, 0.40)
    payload_mass: tuple[float, float] = (0.05, 1.0)
    motor_catalog: tuple[float, ...] = (50.0, 80.0, 120.0, 180.0, 250.0, 350.0)
    battery_catalog: tuple[float, ...] = (40.0, 60.0, 90.0, 130.0, 180.0)

    def __post_init__(self):
        for name in CONTINUOUS:
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise DomainError(f"bounds for {name}: lower {lo} must be < upper {hi}")
        for name in ("motor_catalog", "battery_catalog"):
            cat = getattr(self, name)
            if len(cat) == 0:
                raise DomainError(f"{name} is empty")
            if any(b <= a for a, b in zip(cat, cat[1:])):
                raise DomainError(f"{name} must be strictly increasing")

    def catalog(self, name: str) -> np.ndarray:
        return np.asarray(self.motor_catalog if name == "motor_power" else self.battery_catalog, dtype=float)

    @property
    def lower(self) -> np.ndarray:
        return np.array([self._lo(f) for f in FIELDS])

    @property
    def upper(self) -> np.ndarray:
        return np.array([self._hi(f) for f in FIELDS])

    def _lo(self, name):
        return self.catalog(name)[0] if name in DISCRETE else getattr(self, name)[0]

    def _hi(self, name):
        return self.catalog(name)[-1] if name in DISCRETE else getattr(self, name)[1]

    def check(self, x: DesignVector) -> None:
        """Raise DomainError naming the first field outside its bounds or catalog."""
        for name in FIELDS:
            v = getattr(x, name)
            if not np.isfinite(v):
                raise DomainError(f"{name} is not finite")
            if name in DISCRETE:
                if v not in set(self.catalog(name).tolist()):
                    raise DomainError(f"{name}={v} is not a catalog value")
            else:
                lo, hi = getattr(self, name)
                if not lo <= v <= hi:
                    raise DomainError(f"{name}={v} outside [{lo}, {hi}]")

    def nominal(self) -> DesignVector:
        """A mid-box design; discrete fields take the middle catalog entry."""
        mid = {n: 0.5 * sum(getattr(self, n)) for n in CONTINUOUS}
        return DesignVector(
            motor_power=float(self.motor_catalog[len(self.motor_catalog) // 2]),
            battery_capacity=float(self.battery_catalog[len(self.battery_catalog) // 2]),
            **mid,
        )


@dataclass(frozen=True)
class MorphologyModel:
    """Constants of the analytic surrogate plus the design bounds.

    Defaults put feasible designs at roughly 0.5-10 km range and 4-12 m/s
    cruise, with search speeds of 1-4.8 m/s.
    """

    hub_mass: float = 0.6  # kg, avionics + body
    frame_density: float = 20.0  # kg per m^2 of arm planform (4 arms)
    battery_specific_energy: float = 300.0  # Wh/kg
    motor_mass_per_watt: float = 0.001  # kg/W
    figure_of_merit: float = 0.7
    drag_area: float = 0.02  # m^2, Cd * frontal area
    speed_gain: float = 3.0  # kappa
    prop_efficiency_scale: float = 0.15  # m
    energy_efficiency: float = 0.35  # eta, usable fraction of battery energy
    min_search_speed: float = 1.0  # m/s at minimum payload
    search_speed_per_kg: float = 4.0  # m/s per kg of sensor payload
    thrust_margin: float = 1.5
    bounds: DesignBounds = field(default_factory=DesignBounds)

    # -- array core -------------------------------------------------------

    def _components(self, X: np.ndarray):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        L, W, P, E, d, pay = (X[:, i] for i in range(6))
        mass = (self.hub_mass + self.frame_density * 4.0 * L * W
                + E / self.battery_specific_energy + 4.0 * P * self.motor_mass_per_watt + pay)
        disk = np.pi * d ** 2 / 4.0
        thrust = 4.0 * self.figure_of_merit * np.cbrt(2.0 * AIR_DENSITY * disk * P ** 2)
        return L, E, d, pay, mass, disk, thrust

    def constraint_values(self, X) -> np.ndarray:
        """g(X) <= 0 form, normalized: (thrust deficit / weight, overlap / arm length)."""
        L, _, d, _, mass, _, thrust = self._components(X)
        weight = mass * GRAVITY
        g_thrust = (self.thrust_margin * weight - thrust) / weight
        # X-frame: adjacent rotor hubs sit sqrt(2) * arm_length apart
        g_overlap = (d - np.sqrt(2.0) * L) / L
        return np.stack([g_thrust, g_overlap], axis=1)

    def violation(self, X) -> np.ndarray:
        return np.maximum(self.constraint_values(X), 0.0).sum(axis=1)

    def feasible_array(self, X) -> np.ndarray:
        return np.all(self.constraint_values(X) <= 0.0, axis=1)

    def talent_array(self, X) -> np.ndarray:
        """Talents (search, cruise, range) for each row; no feasibility check.

        Infeasible rows can come out with zero cruise speed, which optimizers
        handle through the constraint violation instead.
        """
        L, E, d, pay, mass, disk, thrust = self._components(X)
        surplus = np.maximum(thrust / mass - GRAVITY, 0.0)
        prop_eff = 1.0 - np.exp(-d / self.prop_efficiency_scale)
        cruise = self.speed_gain * np.sqrt(surplus) * prop_eff
        induced = (mass * GRAVITY) ** 1.5 / np.sqrt(2.0 * AIR_DENSITY * 4.0 * disk) / self.figure_of_merit
        power = induced + 0.5 * AIR_DENSITY * self.drag_area * cruise ** 3
        flight_range = self.energy_efficiency * E * 3600.0 / power * cruise
        search = self.min_search_speed + self.search_speed_per_kg * (pay - self.bounds.payload_mass[0])
        return np.stack([search, cruise, flight_range], axis=1)

    # -- scalar API ---------------------------------------------------------

    def feasible(self, x: DesignVector) -> bool:
        return bool(self.feasible_array(x.to_array())[0])

    def evaluate_talents(self, x: DesignVector) -> TalentVector:
        self.bounds.check(x)
        g = self.constraint_values(x.to_array())[0]
        if g[0] > 0:
            raise DomainError("thrust margin constraint violated: max thrust < "
                              f"{self.thrust_margin} x weight")
        if g[1] > 0:
            raise DomainError("rotor overlap constraint violated: prop_diameter > sqrt(2) x arm_length")
        return TalentVector.from_array(self.talent_array(x.to_array())[0])

    def total_mass(self, x: DesignVector) -> float:
        return float(self._components(x.to_array())[4][0])

    def max_thrust(self, x: DesignVector) -> float:
        return float(self._components(x.to_array())[6][0])

    # -- helpers for the optimizers ----------------------------------------

    def snap(self, X) -> np.ndarray:
        """Clip to the box and move discrete columns to the nearest catalog entry."""
        X = np.array(np.atleast_2d(X), dtype=float)
        X = np.clip(X, self.bounds.lower, self.bounds.upper)
        for name in DISCRETE:
            j = FIELDS.index(name)
            cat = self.bounds.catalog(name)
            X[:, j] = cat[np.abs(X[:, j, None] - cat[None, :]).argmin(axis=1)]
        return X

    def sample_designs(self, n: int, rng: np.random.Generator, feasible_only: bool = True,
                       max_tries: int = 100) -> np.ndarray:
        lo, hi = self.bounds.lower, self.bounds.upper
        out = []
        have = 0
        for _ in range(max_tries):
            X = rng.uniform(lo, hi, size=(max(n, 64), 6))
            for name in DISCRETE:
                j = FIELDS.index(name)
                cat = self.bounds.catalog(name)
                X[:, j] = cat[rng.integers(0, len(cat), size=len(X))]
            if feasible_only:
                X = X[self.feasible_array(X)]
            out.append(X)
            have += len(X)
            if have >= n:
                break
        X = np.concatenate(out)[:n]
        if len(X) < n:
            raise DomainError(f"could only sample {len(X)} of {n} feasible designs")
        return X

    # -- config ---------------------------------------------------------------

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bounds"] = {k: list(v) for k, v in d["bounds"].items()}
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "MorphologyModel":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise DomainError(f"unknown morphology config keys: {sorted(unknown)}")
        data = dict(data)
        bounds = data.pop("bounds", None)
        model = cls(**data)
        if bounds is not None:
            bkeys = {f.name for f in fields(DesignBounds)}
            bad = set(bounds) - bkeys
            if bad:
                raise DomainError(f"unknown bounds keys: {sorted(bad)}")
            model = replace(model, bounds=DesignBounds(**{k: tuple(v) for k, v in bounds.items()}))
        return model

    @classmethod
    def load(cls, path) -> "MorphologyModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


DEFAULT_MODEL = MorphologyModel()


def evaluate_talents(x: DesignVector, model: MorphologyModel = DEFAULT_MODEL) -> TalentVector:
    return model.evaluate_talents(x)


def feasible(x: DesignVector, model: MorphologyModel = DEFAULT_MODEL) -> bool:
    return model.feasible(x)
