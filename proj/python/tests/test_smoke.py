# Copyright 2026 The ulga Authors.
# License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

import json
import math

import numpy as np
import pytest

import ulga


def test_model_costs_and_platforms():
    cfg = ulga.ModelConfig.desk(ulga.ModelKind.tiny_ddsp)
    net = ulga.build(cfg, 1)
    assert net.param_count > net.weight_count > 0
    c = ulga.costs(net, cfg)
    assert c["disk_bytes"] == net.disk_size()
    assert c["flops_per_audio_second"] > 0
    names = [p["name"] for p in ulga.table1_platforms()]
    assert names == ["ATMega1280", "ATMega2560", "RPi 1B", "RPi 2B"]
    v = ulga.feasibility(40e6, 1 << 20, 1 << 20)
    assert v["RPi 1B"] == (True, True)
    assert v["ATMega1280"] == (False, False)


def test_pareto_front():
    front = ulga.pareto_front([(1.0, 100), (1.2, 50), (1.1, 80), (1.3, 60)])
    assert front == [(1.2, 50), (1.1, 80), (1.0, 100)]


def test_mutual_information_of_correlated_gaussians():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(10000)
    y = 0.9 * x + math.sqrt(1 - 0.81) * rng.standard_normal(10000)
    est = ulga.estimate_mi(x, y, max_samples=10000)
    assert abs(est - (-0.5 * math.log(1 - 0.81))) < 0.15
    with pytest.raises(ValueError):
        ulga.estimate_mi(np.ones(1000), y[:1000])


def test_tones_and_wav_roundtrip(tmp_path):
    items = ulga.gen_synthetic_tones(2, 16000, 0.25, seed=3)
    assert len(items) == 2 and items[0]["wave"].shape == (4000,)
    path = str(tmp_path / "a.wav")
    ulga.write_wav(path, items[0]["wave"], 16000)
    x, sr = ulga.read_wav(path)
    assert sr == 16000
    assert np.max(np.abs(x - items[0]["wave"])) <= 1.0 / 32768
    mu = ulga.MuLawCodec(255)
    assert mu.levels == 256 and mu.encode(0.0) == 128


def test_experiment(tmp_path):
    cfg = {
        "model": {"kind": "tiny_ddsp"},
        "dataset": {"n_items": 20, "duration": 0.25},
        "training": {"batch_size": 8, "max_epochs": 1, "lr": 0.01},
        "imp": {"iterations": 1},
        "audio": {"iterations": [], "last": False},
        "output_dir": str(tmp_path / "run"),
    }
    rows = ulga.run_experiment(json.dumps(cfg))
    assert [r["iteration"] for r in rows] == [0, 1]
    assert rows[0]["test_error_multiplier"] == 1.0
    assert rows[1]["units_remaining_frac"] < 1.0
    with pytest.raises(ulga.ConfigError):
        ulga.run_experiment(json.dumps({"bogus": 1}))
