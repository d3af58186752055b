"""Smoke tests for the Python bindings."""

import numpy as np
import pytest

import flowcast


def test_version():
    assert flowcast.__version__


def test_kge_perfect_and_doubled():
    obs = np.array([1.0, 2.0, 3.0])
    perfect = flowcast.kge(obs, obs)
    assert perfect["kge"] == pytest.approx(1.0, abs=1e-12)
    doubled = flowcast.kge(2.0 * obs, obs)
    assert doubled["beta"] == pytest.approx(2.0, abs=1e-12)
    assert doubled["gamma"] == pytest.approx(1.0, abs=1e-12)
    assert doubled["kge"] == pytest.approx(0.0, abs=1e-12)


def test_kge_rejects_degenerate_series():
    obs = np.array([1.0, 2.0, 3.0])
    with pytest.raises(ArithmeticError):
        flowcast.kge(np.array([2.0, 2.0, 2.0]), obs)


def test_chronological_split():
    assert flowcast.chronological_split(100) == (49, 70, 100)
    assert flowcast.chronological_split(10) == (5, 7, 10)


def test_fit_scaler_population_convention():
    mean, std = flowcast.fit_scaler(np.array([1.0, 2.0, 3.0]))
    assert mean == pytest.approx(2.0)
    assert std == pytest.approx(np.sqrt(2.0 / 3.0))


def test_generate_basin_shapes_and_determinism():
    a = flowcast.generate_basin(height=4, width=5, days=120, seed=11)
    b = flowcast.generate_basin(height=4, width=5, days=120, seed=11)
    assert a["precip"].shape == (120, 4, 5)
    assert a["temp"].shape == (120, 4, 5)
    assert a["discharge"].shape == (120,)
    assert (a["precip"] >= 0.0).all()
    assert (a["discharge"] >= 0.0).all()
    np.testing.assert_array_equal(a["precip"], b["precip"])
    np.testing.assert_array_equal(a["discharge"], b["discharge"])


def test_basin_average_matches_numpy():
    basin = flowcast.generate_basin(height=3, width=4, days=50, seed=2)
    avg = flowcast.basin_average(basin["precip"])
    np.testing.assert_allclose(avg, basin["precip"].mean(axis=(1, 2)), rtol=1e-12)


def test_video_samples_streamflow_channel_is_constant():
    basin = flowcast.generate_basin(height=3, width=3, days=60, seed=5)
    out = flowcast.make_video_samples(
        basin["precip"], basin["temp"], basin["discharge"], lookback=20
    )
    videos, targets = out["videos"], out["targets"]
    assert videos.shape == (40, 20, 3, 3, 3)
    flow = videos[:, :, 2, :, :]
    spread = flow.max(axis=(2, 3)) - flow.min(axis=(2, 3))
    assert (spread == 0.0).all()
    np.testing.assert_array_equal(targets, basin["discharge"][20:])


def test_count_parameters_lstm_formula():
    hidden, features = 80, 3
    expected = 4 * (hidden * features + hidden * hidden + hidden) + hidden + 1
    assert flowcast.count_parameters("lstm", hidden=hidden) == expected


def test_train_model_runs_and_is_deterministic():
    basin = flowcast.generate_basin(height=4, width=4, days=200, seed=7)
    kwargs = dict(
        model="lstm", lookback=20, epochs=3, batch_size=16, hidden=8, seed=3
    )
    a = flowcast.train_model(basin["precip"], basin["temp"], basin["discharge"], **kwargs)
    b = flowcast.train_model(basin["precip"], basin["temp"], basin["discharge"], **kwargs)
    assert a["history"].shape == (3, 2)
    assert np.isfinite(a["history"]).all()
    np.testing.assert_array_equal(a["history"], b["history"])
    np.testing.assert_array_equal(a["predictions"], b["predictions"])
    assert -1e3 < a["test_kge"]["kge"] <= 1.0


def test_grad_check_small_models():
    assert flowcast.grad_check(model="cnn-lstm") < 1e-4
    assert flowcast.grad_check(model="lstm") < 1e-4
