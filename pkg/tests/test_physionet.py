import logging

import numpy as np
import pandas as pd
import pytest

from shivae.datamodel import read_schema
from shivae.errors import ResamplingError, SchemaError
from shivae.physionet import HOURS, load_physionet_format, physionet_schema_path, write_physionet_format
from shivae.presets import (HUMAN_MONITORING_ATTRIBUTES, PRESETS, get_preset, human_monitoring_standin,
                            physionet_standin)

NAMES = [a.name for a in read_schema(physionet_schema_path())]


def _patient(rows=48, rng=None, extra=None):
    rng = rng or np.random.default_rng(0)
    df = pd.DataFrame(rng.normal(size=(rows, len(NAMES))), columns=NAMES)
    df.iloc[::3, 4] = np.nan
    df.insert(0, "t", np.arange(rows))
    if extra:
        df[extra] = 1.0
    return df


def test_bundled_schema_has_35_real_variables():
    schema = read_schema(physionet_schema_path())
    assert len(schema) == 35 and all(a.kind == "real" for a in schema)


def test_full_file_preserves_mask(tmp_path):
    df = _patient()
    df.to_csv(tmp_path / "132539.csv", index=False, na_rep="")
    ds = load_physionet_format(tmp_path)
    s = ds.sequences[0]
    assert (ds.N, ds.D, s.length, s.id) == (1, 35, HOURS, "132539")
    np.testing.assert_array_equal(s.mask, ~df[NAMES].isna().to_numpy())
    np.testing.assert_array_equal(s.values[s.mask], df[NAMES].to_numpy()[s.mask])


def test_short_file_padded_with_warning(tmp_path, caplog):
    df = _patient(rows=47)
    df.to_csv(tmp_path / "p.csv", index=False, na_rep="")
    with caplog.at_level(logging.WARNING):
        ds = load_physionet_format(tmp_path)
    s = ds.sequences[0]
    assert s.length == 48 and not s.mask[47].any()
    assert "padding" in caplog.text
    # round trip of the padded dataset reproduces it exactly
    write_physionet_format(ds, tmp_path / "out")
    back = load_physionet_format(tmp_path / "out").sequences[0]
    np.testing.assert_array_equal(back.mask, s.mask)
    np.testing.assert_array_equal(back.values[back.mask], s.values[s.mask])


def test_unknown_column(tmp_path):
    _patient(extra="Height").to_csv(tmp_path / "p.csv", index=False)
    with pytest.raises(SchemaError, match="Height"):
        load_physionet_format(tmp_path)


@pytest.mark.parametrize("hours", [[0.5, 1, 2], [0, 0, 1], [0, 1, 48]])
def test_non_hourly_rows(tmp_path, hours):
    df = _patient(rows=3)
    df["t"] = hours
    df.to_csv(tmp_path / "p.csv", index=False)
    with pytest.raises(ResamplingError):
        load_physionet_format(tmp_path)


def test_absent_columns_count_as_never_measured(tmp_path):
    df = _patient()[["t", "HR", "Temp"]]
    df.to_csv(tmp_path / "p.csv", index=False)
    s = load_physionet_format(tmp_path).sequences[0]
    assert s.mask[:, NAMES.index("HR")].all() and not s.mask[:, NAMES.index("Glucose")].any()


def test_physionet_standin_round_trip(tmp_path):
    ds = physionet_standin(num_patients=5, seed=1)
    assert ds.D == 35 and all(s.length == 48 for s in ds.sequences)
    assert 0.25 < 1 - np.mean([s.mask.mean() for s in ds.sequences]) < 0.35
    write_physionet_format(ds, tmp_path)
    back = load_physionet_format(tmp_path)
    for a, b in zip(ds.sequences, back.sequences):
        np.testing.assert_array_equal(a.mask, b.mask)


def test_presets_carry_table_configurations():
    syn = get_preset("synthetic")
    assert syn["data"]["hmm"] == {"num_sequences": 1000, "length": 100}
    assert {k: syn["train"][k] for k in ("epochs", "annealing_epochs", "latent_dim", "hidden_dim",
                                          "n_components", "learning_rate", "batch_size")} == \
        {"epochs": 100, "annealing_epochs": 20, "latent_dim": 2, "hidden_dim": 10, "n_components": 3,
         "learning_rate": 5e-3, "batch_size": 64}
    assert syn["mask"]["num_masks"] == 10 and syn["impute"]["samples"] == 10
    assert PRESETS["physionet"]["train"]["latent_dim"] == 35
    assert PRESETS["human-monitoring"]["train"]["annealing_epochs"] == 50
    get_preset("synthetic")["train"]["epochs"] = 1
    assert PRESETS["synthetic"]["train"]["epochs"] == 100


def test_human_monitoring_standin():
    ds = human_monitoring_standin(num_sequences=40, seed=2)
    lengths = {s.length for s in ds.sequences}
    assert len(lengths) > 1 and min(lengths) >= 40 and max(lengths) <= 120
    assert [a.name for a in ds.schema] == [n for n, _, _ in HUMAN_MONITORING_ATTRIBUTES]
    for d, (_, _, rate) in enumerate(HUMAN_MONITORING_ATTRIBUTES):
        miss = np.mean([1 - s.mask[:, d].mean() for s in ds.sequences])
        assert abs(miss - rate) < 0.03
