"""Tests for simulated panels and the Monte Carlo study."""

from unittest.mock import patch

import numpy as np
import pandas as pd
import pytest

from dpca.errors import ConfigError
from dpca.robust import MScaleSpec
from dpca.simulation import (
    RESULT_COLUMNS,
    McConfig,
    contaminate,
    generate_factor_panel,
    generate_panel,
    make_rng,
    parse_method,
    render_table,
    run_replication,
    run_study,
    simulate_panel,
)


def test_rng_streams_are_reproducible_and_distinct():
    """Test that a stream is fixed by its key and differs between keys."""
    first = make_rng(7, 3, 0).standard_normal(5)

    assert np.array_equal(first, make_rng(7, 3, 0).standard_normal(5))
    assert not np.array_equal(first, make_rng(7, 3, 1).standard_normal(5))
    assert not np.array_equal(first, make_rng(7, 4, 0).standard_normal(5))


def test_shifted_series_panel_structure():
    """Test that consecutive series are one-step shifts up to small noise."""
    panel = generate_panel(500, seed=1)

    assert panel.values.shape == (500, 3)
    difference = panel.values[1:, 0] - panel.values[:-1, 1]
    assert np.std(difference) < 0.2
    assert np.std(panel.values[:, 0]) > 0.8


def test_shifted_series_variance_and_lag_correlation():
    """Test the generator's variance 1.01 and the correlation 1/1.01 of z1[t+1] with z2[t]."""
    T = 5000
    values = generate_panel(T, seed=11).values

    # the variance of a sample variance of normal data is 2 * sigma**4 / (T - 1)
    standard_error = np.sqrt(2.0 / (T - 1)) * 1.01
    for i in range(3):
        assert abs(values[:, i].var(ddof=1) - 1.01) < 4 * standard_error

    correlation = np.corrcoef(values[1:, 0], values[:-1, 1])[0, 1]
    assert abs(correlation - 1 / 1.01) < 0.005


def test_panels_depend_on_seed_and_replication():
    """Test reproducibility and independence of replications."""
    base = generate_panel(50, seed=2, replication=0)

    assert np.array_equal(base.values, generate_panel(50, seed=2, replication=0).values)
    assert not np.array_equal(base.values, generate_panel(50, seed=2, replication=1).values)
    assert not np.array_equal(base.values, generate_panel(50, seed=3, replication=0).values)


def test_factor_panel_shape_and_validation():
    """Test the factor generator's shape and argument checks."""
    panel = generate_factor_panel(60, 7, lags=2, noise=0.1, seed=4)

    assert panel.values.shape == (60, 7)
    with pytest.raises(ConfigError):
        generate_factor_panel(60, 7, noise=-1.0)


def test_contamination_shifts_masked_cells_only():
    """Test that exactly the masked cells move by the shift."""
    panel = generate_panel(400, seed=5)

    dirty, mask = contaminate(panel, 0.05, 20.0, seed=5)

    assert np.allclose(dirty.values - panel.values, 20.0 * mask)
    assert 0.02 < mask.mean() < 0.08


def test_contamination_extremes():
    """Test probabilities 0 and 1 and the range check."""
    panel = generate_panel(30, seed=6)

    clean, none = contaminate(panel, 0.0, 5.0, seed=6)
    shifted, every = contaminate(panel, 1.0, 5.0, seed=6)

    assert not none.any()
    assert np.array_equal(clean.values, panel.values)
    assert every.all()
    assert np.allclose(shifted.values, panel.values + 5.0)
    with pytest.raises(ConfigError):
        contaminate(panel, 1.5, 5.0, seed=6)


def test_parse_method():
    """Test method string parsing."""
    assert parse_method("DPC_5") == ("DPC", 5)
    assert parse_method("BDPC_10") == ("BDPC", 10)
    assert parse_method("SDPC_0") == ("SDPC", 0)
    for bad in ("DPC", "PCA_1", "DPC_x", "dpc_1"):
        with pytest.raises(ConfigError):
            parse_method(bad)


def test_study_config_validation():
    """Test that invalid study settings raise ConfigError."""
    with pytest.raises(ConfigError):
        McConfig(T=10)
    with pytest.raises(ConfigError):
        McConfig(replications=0)
    with pytest.raises(ConfigError):
        McConfig(generator="ar1")
    with pytest.raises(ConfigError):
        McConfig(methods=("DPC_1", "XPC_2"))
    with pytest.raises(ConfigError):
        McConfig.from_dict({"T": 50, "reps": 3})


def test_study_config_dict_round_trip():
    """Test that study settings survive to_dict/from_dict."""
    config = McConfig(T=60, replications=4, seed=9, methods=("DPC_2", "SDPC_1"), mscale=MScaleSpec(c=4.0))

    restored = McConfig.from_dict(config.to_dict())

    assert restored.to_dict() == config.to_dict()
    assert restored.mscale == MScaleSpec(c=4.0)


def test_simulated_panel_is_contaminated_on_request():
    """Test that the study applies contamination after generation."""
    clean = simulate_panel(McConfig(T=40, seed=3), 2)
    dirty = simulate_panel(McConfig(T=40, seed=3, contamination_prob=0.1, contamination_shift=10.0), 2)

    shifted = dirty.values - clean.values
    assert np.all(np.isclose(shifted, 0.0) | np.isclose(shifted, 10.0))
    assert np.any(np.isclose(shifted, 10.0))


def test_replication_records_every_method():
    """Test one replication with a method that cannot be fitted."""
    config = McConfig(T=40, replications=1, methods=("DPC_1", "OPC_30"))

    records = run_replication(config, 0)

    assert [r["method"] for r in records] == ["DPC", "OPC"]
    assert records[0]["error"] == ""
    assert records[0]["mse"] > 0
    assert records[1]["error"] != ""
    assert np.isnan(records[1]["mse"])


def test_replication_records_library_failures():
    """Test that linear algebra and root-finding failures are recorded per method."""
    config = McConfig(T=40, replications=1, methods=("DPC_1", "SDPC_1", "OPC_1"))

    linalg_failure = np.linalg.LinAlgError("SVD did not converge")
    root_failure = RuntimeError("failed to converge after 500 iterations")
    with patch("dpca.simulation.fit_component", side_effect=linalg_failure), patch(
        "dpca.simulation.fit_s_component", side_effect=root_failure
    ):
        records = run_replication(config, 0)

    assert records[0]["error"] == "SVD did not converge"
    assert np.isnan(records[0]["mse"])
    assert "failed to converge" in records[1]["error"]
    assert records[2]["error"] == ""
    assert records[2]["mse"] > 0


def test_study_table():
    """Test the aggregated table of a small study."""
    config = McConfig(T=40, replications=3, methods=("OPC_1", "DPC_1", "BDPC_2", "OPC_30"), seed=1)

    result = run_study(config)

    assert list(result.table.columns) == RESULT_COLUMNS
    assert result.table["method"].tolist() == ["OPC", "DPC", "BDPC", "OPC"]
    assert result.table["ok"].tolist() == [3, 3, 3, 0]
    assert result.table["failed"].tolist() == [0, 0, 0, 3]
    assert np.isnan(result.table["mean_mse"].iloc[3])
    assert len(result.records) == 12

    text = render_table(result.table)
    assert text.startswith("Mean square errors (standard errors)")
    assert "DPC_1" in text
    assert "OPC_30: 3 of 3 fits failed" in text


def test_study_does_not_depend_on_threads():
    """Test that worker threads change nothing in the results."""
    config = McConfig(T=40, replications=4, methods=("DPC_1", "OPC_2", "SDPC_1"), seed=2, max_iter=50)

    serial = run_study(config, threads=1)
    parallel = run_study(config, threads=3)

    pd.testing.assert_frame_equal(serial.records, parallel.records)
    pd.testing.assert_frame_equal(serial.table, parallel.table)
