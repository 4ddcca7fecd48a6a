import math

import numpy as np
import pytest

import soh


def small_battery(cycles=24, length=70, seed=3):
    cfg = soh.SyntheticConfig()
    cfg.cycles = cycles
    cfg.base_length = length
    return soh.generate_synthetic(cfg, seed)


def test_synthetic_battery_shape():
    battery = small_battery()
    assert len(battery) == 24
    first = battery.cycles[0]
    assert first.samples.shape == (2, 70)
    assert battery.capacities[0] > battery.capacities[-1]


def test_dtw_hand_example():
    path, distance = soh.dtw_align(np.array([[0.0, 1.0, 2.0]]), np.array([[0.0, 2.0]]))
    assert distance == pytest.approx(1.0)
    assert path[0] == (0, 0) and path[-1] == (2, 1)


def test_edtw_identity():
    battery = small_battery()
    seq = battery.cycles[0].samples
    sol = soh.edtw_solve(seq, seq)
    assert sol.converged
    assert sol.path == [(k, k) for k in range(seq.shape[1])]


def test_pipeline_in_memory():
    battery = small_battery()
    synced = soh.synchronize_battery(battery, 1)
    assert len(synced) == len(battery)
    assert all(s.shape == (2, synced.reference_length) for s in synced.synced)

    parts = soh.split(battery, soh.SplitSpec(1, 0.7))
    train_synced = soh.synchronize_battery(parts.train, 1)
    profile = soh.analyse_importance(train_synced)
    assert max(profile.scores) == 1.0
    grid = soh.fit_grid(train_synced, profile.interval, 40)
    data = [
        soh.LabeledCycle(soh.grid_encode(s, profile.interval, grid), c)
        for s, c in zip(train_synced.synced, train_synced.capacities)
    ]
    cfg = soh.TrainConfig()
    cfg.max_epochs = 3
    result = soh.train(data, cfg, soh.Architecture(1, 8))
    assert len(result.history.train_rmse) <= 3
    result.params.grid_hash = grid.hash(profile.interval)

    session = soh.OnlineSession.build(
        parts.train, parts.train.cycles[0], soh.EdtwOptions(), grid, profile, result.params
    )
    cycle = parts.train.cycles[4]
    online = soh.estimate_at(cycle.samples, session)
    assert online.capacity == soh.offline_estimate(cycle.samples, session)
    stream = soh.stream_cycle(parts.test.cycles[0], session)
    assert len(stream) == parts.test.cycles[0].length
    assert all(math.isfinite(e.capacity) for e in stream)


def test_gradient_check():
    params = soh.init_parameters(soh.Architecture(1, 6), 20, 1)
    battery = small_battery()
    synced = soh.synchronize_battery(battery, 1)
    grid = soh.fit_grid(synced, soh.Interval(0, 9), 10)
    enc = soh.grid_encode(synced.synced[3], soh.Interval(0, 9), grid)
    assert soh.gradient_check(params, enc, 1.0) <= 1e-4


def test_errors_carry_codes(tmp_path):
    with pytest.raises(soh.SohError) as info:
        soh.parse_battery(tmp_path / "none.csv", tmp_path / "none_labels.csv")
    assert info.value.code == "io"

    cfg = soh.PipelineConfig({"out_dir": str(tmp_path)})
    with pytest.raises(soh.CommandError) as info:
        soh.run_command("train", cfg)
    assert info.value.exit_code == 2
    assert info.value.reason == "cycles-not-found"


def test_commands(tmp_path):
    cfg = soh.PipelineConfig(
        {
            "out_dir": str(tmp_path),
            "synth.cycles": 20,
            "synth.base_length": 60,
            "train.max_epochs": 2,
            "grids": 20,
        }
    )
    assert "synth" in soh.run_command("synth", cfg)
    soh.run_command("sync", cfg)
    soh.run_command("train", cfg)
    assert (tmp_path / "model.bin").exists()
    params, warnings = soh.load_model(tmp_path / "model.bin")
    assert params.layers == 2 and warnings == []
