import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from giby import (BoundEntry, BoundStore, Breach, Dataset, Kind, RelationshipGraph, Schema, TrainingDataError,
                  Verdict, baby_step_test, baby_step_train, bounds_check, determine_bounds, giant_step_test,
                  giant_step_train, linearize, render_explanation)
from giby.synthgen import generate_random

import oracles

WORKED_SENTENCE = ("Anomaly DETECTED for sensor LIT101 at time index 2 for actuation state 1|1 "
                  "because sensor value -1.5316 not in [0.0011,0.1570]")


def _store(entries):
    s = BoundStore()
    s.update(entries)
    return s


def test_determine_bounds_worked_groups(worked_normal, worked_graph):
    groups = linearize(worked_normal, "LIT101", worked_graph, Kind.BABY)
    e11 = determine_bounds(groups["1|1"], Kind.BABY)
    e01 = determine_bounds(groups["0|1"], Kind.BABY)
    # Bounds are the float diffs of the parsed readings.
    assert (e11.lb, e11.ub) == (121.4099 - 121.4088, 121.4088 - 121.2518)
    assert (e01.lb, e01.ub) == (121.6835 - 121.6050, 122.1546 - 121.6835)
    assert (round(e11.lb, 4), round(e11.ub, 4)) == (0.0011, 0.1570)
    assert (round(e01.lb, 4), round(e01.ub, 4)) == (0.0785, 0.4711)
    assert e11.sample_count == 2 and e01.sample_count == 3


def test_singleton_group_is_degenerate():
    from giby.switchboard import LinearizedStateGroup
    g = LinearizedStateGroup("S", "1", np.array([1]), np.array([5.0]))
    e = determine_bounds(g, Kind.GIANT)
    assert (e.lb, e.ub) == (5.0, 5.0)
    assert determine_bounds(LinearizedStateGroup("S", "1", np.array([], int), np.array([])), Kind.GIANT) is None


def test_baby_train_on_worked_example(worked_normal, worked_graph):
    entries = {e.sb: e for e in baby_step_train("LIT101", worked_normal, worked_graph)}
    assert set(entries) == {"1|1", "0|1"}
    assert all(e.kind is Kind.BABY for e in entries.values())


def test_worked_attack_verdict_and_sentence(worked_normal, worked_attack, worked_graph):
    store = _store(baby_step_train("LIT101", worked_normal, worked_graph))
    first = baby_step_test(1, "LIT101", worked_attack, worked_graph, store)
    assert first.breach is Breach.NOT_APPLICABLE and not first.anomalous
    v = baby_step_test(2, "LIT101", worked_attack, worked_graph, store)
    assert v.anomalous and v.breach is Breach.BELOW_LB
    assert v.sb == "1|1" and v.observed == pytest.approx(-1.5316, abs=1e-12)
    text, record = render_explanation(v)
    assert text == WORKED_SENTENCE
    assert record["sensor"] == "LIT101" and record["index"] == 2 and record["sb"] == "1|1"
    assert record["explanation"] == text and record["anomalous"] is True


def test_bounds_check_inclusive_and_unseen():
    store = _store([BoundEntry("LIT101", "1|1", 0.0011, 0.1570, Kind.BABY, 2)])
    assert bounds_check(3, "LIT101", 0.0011, "1|1", store, Kind.BABY).breach is Breach.NONE
    assert bounds_check(3, "LIT101", 0.1570, "1|1", store, Kind.BABY).breach is Breach.NONE
    assert bounds_check(3, "LIT101", 0.2, "1|1", store, Kind.BABY).breach is Breach.ABOVE_UB
    v = bounds_check(3, "LIT101", 0.05, "2|2", store, Kind.BABY)
    assert v.breach is Breach.UNSEEN_STATE and v.lb is None
    text, _ = render_explanation(v)
    assert "actuation state 2|2" in text and "not seen in training" in text
    assert bounds_check(3, "LIT101", 0.2, "1|1", store, Kind.BABY, epsilon=0.05).breach is Breach.NONE


def test_non_finite_test_values_are_anomalous():
    store = _store([BoundEntry("S", "1", 0.0, 1.0, Kind.GIANT, 4)])
    for x in (math.nan, math.inf, -math.inf):
        v = bounds_check(1, "S", x, "1", store, Kind.GIANT)
        assert v.breach is Breach.NON_FINITE and v.anomalous


def test_none_verdict_sentence():
    v = Verdict("S", 1, "1", 0.5, Breach.NONE, Kind.GIANT, 0.0, 1.0)
    assert render_explanation(v)[0] == "No anomaly was detected."


def test_training_rejects_non_finite(worked_graph):
    schema = Schema(("LIT101", "MV101", "P101"), {"MV101": (0, 1, 2), "P101": (1, 2)})
    d = Dataset(schema, [1, 2], {"LIT101": [1.0, math.nan], "MV101": [1, 1], "P101": [1, 1]})
    with pytest.raises(TrainingDataError):
        giant_step_train("LIT101", d, worked_graph)


def test_sensor_without_neighbours_is_skipped(caplog):
    g = RelationshipGraph({"S": ()}, {})
    d = Dataset(Schema(("S",), {}), [1, 2], {"S": [1.0, 2.0]})
    with caplog.at_level(logging.WARNING):
        assert giant_step_train("S", d, g) == []
    assert "no nn-actuators" in caplog.text


def test_constant_sensor_and_ramp():
    g = RelationshipGraph({"S": ("A",)}, {"A": (0, 1)})
    d = Dataset(Schema(("S", "A"), {"A": (0, 1)}), range(1, 7),
                {"S": [10 + 0.05 * i for i in range(6)], "A": [1] * 6})
    (baby,) = baby_step_train("S", d, g)
    assert (baby.lb, baby.ub) == pytest.approx((0.05, 0.05), abs=1e-12)
    flat = d.replace(columns={"S": [7.0] * 6})
    assert all(e.lb == e.ub == 7.0 for e in giant_step_train("S", flat, g))


def test_giant_spoof_far_above_bounds(plant, plant_trained):
    data, graph = plant
    store = plant_trained.core
    ub = max(e.ub for e in store if e.sensor == "LIT101" and e.kind is Kind.GIANT)
    spoofed = data.replace(columns={"LIT101": np.where(data.index == 500, 10 * ub, data.reading("LIT101"))})
    assert giant_step_test(500, "LIT101", spoofed, graph, store).breach is Breach.ABOVE_UB
    assert giant_step_test(499, "LIT101", spoofed, graph, store).breach is Breach.NONE
    with pytest.raises(IndexError):
        giant_step_test(len(data) + 5, "LIT101", data, graph, store)


def test_freeze_breaches_positive_baby_lb(plant, plant_trained):
    data, graph = plant
    store = plant_trained.core
    positive = [e for e in store if e.kind is Kind.BABY and e.sensor == "LIT101" and e.lb > 0]
    assert positive, "plant should have a filling state whose diffs are all positive"
    sb = positive[0].sb
    keys = [f"{a}|{b}" for a, b in zip(data.columns["MV101"].tolist(), data.columns["P101"].tolist())]
    pos = next(i for i in range(1, len(keys)) if keys[i] == sb and keys[i - 1] == sb)
    frozen = data.reading("LIT101").copy()
    frozen[pos] = frozen[pos - 1]
    v = baby_step_test(int(data.index[pos]), "LIT101", data.replace(columns={"LIT101": frozen}), graph, store)
    assert v.breach is Breach.BELOW_LB and v.observed == 0.0


@pytest.mark.parametrize("seed", range(5))
def test_bounds_equal_brute_force(seed):
    data, graph = generate_random(seed, 800, n_actuators=3, n_sensors=2)
    for sensor, acts in graph.neighbors.items():
        for baby, train_fn in ((False, giant_step_train), (True, baby_step_train)):
            got = {e.sb: (e.lb, e.ub) for e in train_fn(sensor, data, graph)}
            ref = oracles.minmax_bounds(data, sensor, acts, baby)
            assert got == {"|".join(map(str, t)): b for t, b in ref.items()}


def test_training_replay_is_clean(plant, plant_trained):
    data, graph = plant
    store = plant_trained.core
    for t in data.index[:400].tolist():
        for s in ("LIT101", "FIT201"):
            assert not giant_step_test(t, s, data, graph, store).anomalous
            assert not baby_step_test(t, s, data, graph, store).anomalous


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(20, 300), st.integers(1, 300))
def test_bounds_grow_monotonically(seed, n, extra):
    data, graph = generate_random(seed, n + extra, n_actuators=2, n_sensors=1)
    head = data.slice(0, n)
    for fn in (giant_step_train, baby_step_train):
        small = {e.sb: e for e in fn("S1", head, graph)}
        big = {e.sb: e for e in fn("S1", data, graph)}
        assert set(small) <= set(big)
        for sb, e in small.items():
            assert big[sb].lb <= e.lb and big[sb].ub >= e.ub


@given(st.floats(allow_nan=True, allow_infinity=True), st.floats(-10, 10), st.floats(0, 10))
def test_breach_classification_is_exhaustive(x, lb, width):
    store = _store([BoundEntry("S", "1", lb, lb + width, Kind.GIANT, 1)])
    v = bounds_check(1, "S", x, "1", store, Kind.GIANT)
    assert v.anomalous == (v.breach is not Breach.NONE)
    if v.breach is Breach.BELOW_LB:
        assert x < v.lb
    elif v.breach is Breach.ABOVE_UB:
        assert x > v.ub
    elif v.breach is Breach.NONE:
        assert v.lb <= x <= v.ub
    else:
        assert v.breach is Breach.NON_FINITE and not math.isfinite(x)


def test_store_rejects_unseen_and_duplicates():
    s = BoundStore()
    s.add(BoundEntry("S", "1", 0.0, 1.0, Kind.GIANT, 1))
    with pytest.raises(KeyError):
        s.add(BoundEntry("S", "1", 0.0, 2.0, Kind.GIANT, 1))
    with pytest.raises(ValueError):
        s.add(BoundEntry("S", "-1", 0.0, 2.0, Kind.GIANT, 1))
    with pytest.raises(ValueError):
        BoundEntry("S", "1", 2.0, 1.0, Kind.GIANT, 1)


def test_promote_widens_bounds_for_reviewed_verdicts():
    store = _store([BoundEntry("S", "1", 0.0, 1.0, Kind.GIANT, 3)])
    reviewed = [Verdict("S", 9, "1", 1.5, Breach.ABOVE_UB, Kind.GIANT, 0.0, 1.0),
                Verdict("S", 10, "2", 4.0, Breach.UNSEEN_STATE, Kind.GIANT)]
    out = store.promote(reviewed)
    assert (out.get(Kind.GIANT, "S", "1").lb, out.get(Kind.GIANT, "S", "1").ub) == (0.0, 1.5)
    assert out.get(Kind.GIANT, "S", "2").lb == 4.0
    assert store.get(Kind.GIANT, "S", "1").ub == 1.0


def test_verdict_json_round_trip():
    v = Verdict("S", 3, "1|2", math.nan, Breach.NON_FINITE, Kind.BABY, 0.0, 1.0, detail="x")
    back = Verdict.from_dict(v.to_dict())
    assert back.breach is v.breach and math.isnan(back.observed) and back.lb == 0.0
