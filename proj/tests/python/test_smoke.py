import json
import math
import random

import pytest

import fedbev


def test_window_count():
    assert fedbev.window_count(1800, 60) == 1741
    assert fedbev.window_count(1800, 180) == 1621


def test_split_sizes():
    assert fedbev.split_sizes(1741) == (1392, 174, 175)
    assert fedbev.split_sizes(1741, 4, 1, 5) == (696, 174, 871)


def test_fleet_shape():
    trips = fedbev.generate_fleet(3, seed=1, duration=120)
    assert [t["vehicle_id"] for t in trips] == ["V1", "V2", "V3"]
    for t in trips:
        assert len(t["time"]) == len(t["energy"]) == 120
        assert all(v >= 0 for v in t["speed"])


def test_weights_and_average():
    assert fedbev.weighted_average([[1.0, 1.0], [5.0, 5.0]], [1, 3]) == [4.0, 4.0]
    rng = random.Random(3)
    counts = [rng.randint(1, 900) for _ in range(9)]
    assert abs(math.fsum(fedbev.aggregation_weights(counts)) - 1.0) <= 1e-15


def test_parameter_count():
    assert fedbev.parameter_count("ann", [40, 32, 16], 60) == 13897


def test_bad_config_key():
    with pytest.raises(ValueError):
        fedbev.run({"fl.no_such_key": "1"})


def test_tiny_run(tmp_path):
    out = fedbev.run(
        {
            "data.fleet_size": "2",
            "data.duration": "240",
            "data.window": "10",
            "model.hidden": "3,3,3",
            "fl.rounds": "1",
            "fl.local_epochs": "1",
            "baseline.epochs": "1",
            "output.dir": str(tmp_path),
        }
    )
    assert out["clients"] == ["V1", "V2"]
    doc = json.loads(open(out["report"]).read())
    assert doc["rounds"] == 1
    assert "vehicle" in fedbev.report([out["report"]])
