import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from codesign.errors import DomainError
from codesign.morphology import (
    DEFAULT_MODEL, DesignBounds, DesignVector, FIELDS, GRAVITY, MorphologyModel, evaluate_talents, feasible,
)

M = DEFAULT_MODEL
B = M.bounds


def nominal(**kw):
    return DesignVector(**{**B.nominal().__dict__, **kw})


@st.composite
def feasible_designs(draw):
    seed = draw(st.integers(0, 2**31 - 1))
    return DesignVector.from_array(M.sample_designs(1, np.random.default_rng(seed))[0])


def test_nominal_design_is_feasible_by_direct_formulas():
    x = B.nominal()
    assert feasible(x)
    mass = M.total_mass(x)
    # thrust margin and rotor-overlap constraints evaluated by hand
    assert M.max_thrust(x) >= 1.5 * mass * GRAVITY
    assert x.prop_diameter <= np.sqrt(2) * x.arm_length


def test_nominal_mass_matches_component_sum():
    x = B.nominal()
    expected = (M.hub_mass + M.frame_density * 4 * x.arm_length * x.arm_width
                + x.battery_capacity / M.battery_specific_energy + 4 * x.motor_power * M.motor_mass_per_watt
                + x.payload_mass)
    assert M.total_mass(x) == pytest.approx(expected, rel=1e-12)


def test_max_payload_min_motor_is_infeasible():
    x = nominal(payload_mass=B.payload_mass[1], motor_power=B.motor_catalog[0])
    assert not feasible(x)
    with pytest.raises(DomainError, match="thrust"):
        evaluate_talents(x)


def test_oversized_prop_is_infeasible():
    x = nominal(arm_length=0.15, prop_diameter=0.35)
    assert x.prop_diameter > 2 * x.arm_length
    assert not feasible(x)
    with pytest.raises(DomainError, match="overlap"):
        evaluate_talents(x)


def test_min_payload_gives_floor_search_speed():
    x = nominal(payload_mass=B.payload_mass[0])
    assert evaluate_talents(x).search_speed == pytest.approx(M.min_search_speed, abs=1e-12)


def test_extra_payload_reduces_range():
    x1 = nominal(payload_mass=0.3)
    x2 = nominal(payload_mass=0.5)
    t1, t2 = evaluate_talents(x1), evaluate_talents(x2)
    assert t2.flight_range < t1.flight_range
    assert t2.search_speed > t1.search_speed


@pytest.mark.parametrize("field,value", [
    ("arm_length", 0.5), ("arm_width", 0.0), ("payload_mass", 2.0), ("motor_power", 99.0),
    ("battery_capacity", 41.0), ("prop_diameter", float("nan")),
])
def test_out_of_bounds_names_field(field, value):
    with pytest.raises(DomainError, match=field):
        evaluate_talents(nominal(**{field: value}))


@settings(max_examples=200, deadline=None)
@given(feasible_designs())
def test_talents_positive_and_pure(x):
    a = evaluate_talents(x).to_array()
    b = evaluate_talents(x).to_array()
    assert np.all(a > 0)
    assert np.array_equal(a, b)


def test_conflict_relations_on_1000_designs():
    X = M.sample_designs(1000, np.random.default_rng(7))
    assert M.feasible_array(X).all()
    base = M.talent_array(X)
    # payload up -> search up, range down (only where the heavier design stays feasible)
    Xp = X.copy()
    Xp[:, FIELDS.index("payload_mass")] = np.minimum(Xp[:, 5] + 0.05, B.payload_mass[1])
    moved = (Xp[:, 5] > X[:, 5]) & M.feasible_array(Xp)
    tp = M.talent_array(Xp)
    assert moved.sum() > 500
    assert np.all(tp[moved, 0] > base[moved, 0])
    assert np.all(tp[moved, 2] < base[moved, 2])
    # battery to the next catalog entry -> range up, cruise down
    j = FIELDS.index("battery_capacity")
    cat = B.catalog("battery_capacity")
    k = np.searchsorted(cat, X[:, j])
    up = k + 1 < len(cat)
    Xb = X.copy()
    Xb[up, j] = cat[k[up] + 1]
    ok = up & M.feasible_array(Xb)
    tb = M.talent_array(Xb)
    assert ok.sum() > 300
    assert np.all(tb[ok, 2] > base[ok, 2])
    assert np.all(tb[ok, 1] < base[ok, 1])


def test_bounds_invariants():
    with pytest.raises(DomainError):
        DesignBounds(arm_length=(0.3, 0.1))
    with pytest.raises(DomainError):
        DesignBounds(motor_catalog=(100.0, 50.0))
    with pytest.raises(DomainError):
        DesignBounds(battery_catalog=())


def test_snap_moves_to_nearest_catalog_entry():
    x = B.nominal().to_array()
    x[2], x[3] = 130.0, 100.0
    s = M.snap(x)[0]
    assert s[2] == 120.0 and s[3] == 90.0


def test_config_round_trip(tmp_path):
    path = tmp_path / "morph.json"
    path.write_text(json.dumps(M.to_dict()))
    assert MorphologyModel.load(path) == M


def test_config_rejects_unknown_keys():
    with pytest.raises(DomainError):
        MorphologyModel.from_dict({"hub_mass": 1.0, "warp_drive": 3})
