import pytest

from giby import Breach, Detector, Kind, render_explanation, train
from giby.switchboard import UNSEEN
from giby.synthgen import generate_random


def test_streaming_detector_reproduces_worked_verdict(worked_normal, worked_attack, worked_graph):
    res = train(worked_normal, worked_graph, detectors=("baby",))
    det = Detector(worked_graph, res.core, detectors=("baby",))
    verdicts = list(det.run(worked_attack, emit_all=True))
    assert [v.breach for v in verdicts] == [Breach.NOT_APPLICABLE, Breach.BELOW_LB]
    assert render_explanation(verdicts[1])[0].endswith("sensor value -1.5316 not in [0.0011,0.1570]")


def test_illegal_state_routes_to_unseen(worked_normal, worked_graph):
    res = train(worked_normal, worked_graph, detectors=("giant",))
    det = Detector(worked_graph, res.core, detectors=("giant",))
    (v,) = det.check(1, {"LIT101": 121.3, "MV101": 7, "P101": 1})
    assert v.sb == UNSEEN and v.breach is Breach.UNSEEN_STATE
    (v,) = det.check(2, {"LIT101": 121.3, "MV101": 2, "P101": 2})
    assert v.sb == "2|2" and v.breach is Breach.UNSEEN_STATE
    assert "not seen in training" in render_explanation(v)[0]


def test_detector_subsets(plant, plant_trained):
    data, graph = plant
    row = {c: data.columns[c][0].item() for c in data.schema.columns}
    giant_only = Detector(graph, plant_trained.core, detectors=("giant",))
    assert {v.kind for v in giant_only.check(1, row)} == {Kind.GIANT}
    with_ext = Detector(graph, plant_trained.core, plant_trained.extended, window_lens=(5,))
    for t in range(5):
        out = with_ext.check(t + 1, {c: data.columns[c][t].item() for c in data.schema.columns})
    assert any(v.window_len == 5 for v in out)
    with_ext.reset()
    assert all(v.window_len is None for v in with_ext.check(1, row))


def test_epsilon_widens_bounds(worked_normal, worked_attack, worked_graph):
    res = train(worked_normal, worked_graph, detectors=("baby",))
    det = Detector(worked_graph, res.core, detectors=("baby",), epsilon=2.0)
    assert not any(v.anomalous for v in det.run(worked_attack))


@pytest.mark.parametrize("seed", range(6))
def test_replay_of_random_training_data_is_clean(seed):
    data, graph = generate_random(seed, 2000, n_actuators=3, n_sensors=2)
    res = train(data, graph)
    assert list(Detector(graph, res.core, res.extended).run(data)) == []


def test_training_times_reported(plant_trained):
    assert set(plant_trained.seconds) == {"LIT101", "FIT201"}
    assert all(s >= 0 for s in plant_trained.seconds.values())
