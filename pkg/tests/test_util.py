import numpy as np

from lemmse.util import config_hash, defer, jsonify, tolerances


def test_defer_evaluates_once_on_access():
    calls = []

    def build(n):
        calls.append(n)
        return np.arange(n)

    lazy = defer(build, 4)
    assert calls == []
    assert lazy.sum() == 6
    assert len(lazy) == 4
    assert calls == [4]


def test_jsonify():
    obj = {1: np.float32(0.5), "a": (np.int64(2), np.arange(2)), "b": float("nan"), "c": "xy"}
    assert jsonify(obj) == {"1": 0.5, "a": [2, [0, 1]], "b": "nan", "c": "xy"}


def test_config_hash():
    first = config_hash({"sigma": 0.1, "task": "denoise"})
    assert first == config_hash({"task": "denoise", "sigma": np.float64(0.1)})
    assert first != config_hash({"task": "denoise", "sigma": 0.2})
    assert len(first) == 64


def test_tolerances():
    table = tolerances.as_dict()
    assert table["rank"] == 1e-10
    assert table["dense_limit"] == 4096
    assert "as_dict" not in table
