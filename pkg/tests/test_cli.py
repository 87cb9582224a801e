import json
import subprocess
import sys

import pytest
import yaml

from shivae.cli import main
from shivae.pipeline import sha256_file

TINY_TRAIN = {"epochs": 2, "annealing_epochs": 1, "batch_size": 16, "hidden": 8}


@pytest.fixture
def workdir(tmp_path):
    (tmp_path / "hmm.yaml").write_text(yaml.safe_dump({"num_sequences": 30, "length": 20}))
    (tmp_path / "train.yaml").write_text(yaml.safe_dump(TINY_TRAIN))
    return tmp_path


def test_stages_individually(workdir, capsys):
    w = str(workdir)
    assert main(["generate", "--config", f"{w}/hmm.yaml", "--seed", "1", "--out", f"{w}/data"]) == 0
    assert main(["mask", "--data", f"{w}/data", "--rate", "0.3", "--min", "3", "--max", "10", "--num", "2",
                 "--seed", "2", "--out", f"{w}/masks"]) == 0
    assert sorted(p.name for p in (workdir / "masks").glob("*.csv")) == ["0.csv", "1.csv"]
    assert main(["train", "--data", f"{w}/data", "--schema", f"{w}/data/schema.yaml", "--mask",
                 f"{w}/masks/0.csv", "--config", f"{w}/train.yaml", "--out", f"{w}/ckpt"]) == 0
    assert (workdir / "ckpt" / "final.ckpt").is_file() and (workdir / "ckpt" / "history.json").is_file()
    assert main(["impute", "--ckpt", f"{w}/ckpt", "--data", f"{w}/data", "--mask", f"{w}/masks/0.csv",
                 "--samples", "3", "--out", f"{w}/imputed/shivae/0"]) == 0
    assert (workdir / "imputed/shivae/0/uncertainty.csv").is_file()
    assert main(["impute", "--method", "mean", "--data", f"{w}/data", "--mask", f"{w}/masks/0.csv",
                 "--out", f"{w}/imputed/mean/0"]) == 0
    for m in ("shivae", "mean"):
        assert main(["evaluate", "--truth", f"{w}/data", "--imputed", f"{w}/imputed/{m}", "--mask", f"{w}/masks",
                     "--out", f"{w}/report/{m}"]) == 0
    report = json.loads((workdir / "report/shivae/report.json").read_text())
    assert report["summary"]["n_replicates"] == 1
    assert main(["report", "--data", f"{w}/report", "--out", f"{w}/fig"]) == 0
    assert (workdir / "fig/summary.png").stat().st_size > 0
    assert "Shi-VAE" in (workdir / "fig/comparison_table.csv").read_text()


def test_missing_schema_is_config_error(workdir):
    w = str(workdir)
    main(["generate", "--config", f"{w}/hmm.yaml", "--out", f"{w}/data"])
    code = main(["train", "--data", f"{w}/data", "--schema", f"{w}/nope.yaml", "--config", f"{w}/train.yaml",
                 "--out", f"{w}/ckpt"])
    assert code == 2 and not (workdir / "ckpt").exists()


def test_data_error_exit_code(workdir):
    w = str(workdir)
    main(["generate", "--config", f"{w}/hmm.yaml", "--out", f"{w}/data"])
    (workdir / "data" / "dataset.csv").write_text("sequence_id,t,bogus\na,0,1\n")
    assert main(["mask", "--data", f"{w}/data", "--out", f"{w}/m"]) == 3


def test_bad_config_exit_code(workdir):
    w = str(workdir)
    (workdir / "bad.yaml").write_text(yaml.safe_dump({"epochs": 2, "annealing_epochs": 5}))
    main(["generate", "--config", f"{w}/hmm.yaml", "--out", f"{w}/data"])
    assert main(["train", "--data", f"{w}/data", "--config", f"{w}/bad.yaml", "--out", f"{w}/c"]) == 2


def test_numeric_fault_exit_code(workdir, monkeypatch):
    from shivae import model as model_mod

    orig = model_mod.ShiVAE.run

    def poisoned(self, *a, **kw):
        out = orig(self, *a, **kw)
        out["kl_z"] = out["kl_z"] * float("inf")
        return out

    w = str(workdir)
    main(["generate", "--config", f"{w}/hmm.yaml", "--out", f"{w}/data"])
    monkeypatch.setattr(model_mod.ShiVAE, "run", poisoned)
    assert main(["train", "--data", f"{w}/data", "--config", f"{w}/train.yaml", "--out", f"{w}/c"]) == 4
    assert (workdir / "c" / "last_good.ckpt").is_file()


def _experiment(tmp_path, **over):
    doc = {"preset": "synthetic-desk", "seed": 3, "data": {"hmm": {"num_sequences": 30, "length": 20}},
           "mask": {"num_masks": 2}, "train": TINY_TRAIN, "impute": {"samples": 2}}
    doc.update(over)
    path = tmp_path / "exp.yaml"
    path.write_text(yaml.safe_dump(doc))
    return path


def test_pipeline_manifest(tmp_path):
    cfg = _experiment(tmp_path)
    assert main(["pipeline", "--config", str(cfg), "--out", str(tmp_path / "run")]) == 0
    man = json.loads((tmp_path / "run" / "manifest.json").read_text())
    assert man["status"] == "complete" and man["tool_version"]
    assert len(man["config_sha256"]) == 64 and man["seeds"]["root"] == 3
    names = {a["path"] for a in man["artifacts"]}
    assert {"data/dataset.csv", "masks/0.csv", "masks/1.csv", "ckpt/0/final.ckpt", "ckpt/1/final.ckpt",
            "imputed/shivae/0/imputed.csv", "report/shivae/report.json"} <= names
    for a in man["artifacts"]:
        assert sha256_file(tmp_path / "run" / a["path"]) == a["sha256"]
    assert all(s["seconds"] >= 0 for s in man["stages"])
    assert set(man["results"]) == {"shivae", "mean", "locf"}
    assert (tmp_path / "run" / "figures" / "summary.png").is_file()


def test_pipeline_missing_schema_fails_before_compute(tmp_path):
    (tmp_path / "in").mkdir()
    cfg = _experiment(tmp_path, data={"source": "csv", "dir": "in", "schema": "missing.yaml"})
    assert main(["pipeline", "--config", str(cfg), "--out", str(tmp_path / "run")]) == 2
    man = json.loads((tmp_path / "run" / "manifest.json").read_text())
    assert man["status"] == "failed" and man["stages"] == [] and man["artifacts"] == []


def test_pipeline_partial_progress_recorded(tmp_path):
    cfg = _experiment(tmp_path, mask={"num_masks": 1, "rate": 0.3, "min_len": 30, "max_len": 30})
    assert main(["pipeline", "--config", str(cfg), "--out", str(tmp_path / "run")]) == 2
    man = json.loads((tmp_path / "run" / "manifest.json").read_text())
    assert man["status"] == "failed" and [s["name"] for s in man["stages"]] == ["data"]
    assert man["error"]["type"] == "ConfigError"


def test_console_entry_point_runs():
    out = subprocess.run([sys.executable, "-m", "shivae.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for sub in ("generate", "mask", "train", "impute", "evaluate", "report", "pipeline"):
        assert sub in out.stdout
