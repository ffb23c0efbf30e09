import configparser
from types import SimpleNamespace

import pytest

from conftest import HEALTHY, write_record
from limbchan import cli
from limbchan.archive import read_archive

SMALL = """\
[imputer]
hidden = 8
encoder_layers = 1
decoder_layers = 1
[stage2]
stem_width = 4
blocks = 4,1
kernel_size = 5
[baseline]
stem_width = 4
blocks = 4,1;8,2
kernel_size = 5
[imputer_train]
epochs = 2
validation_fraction = 0.0
[classifier_train]
epochs = 2
[synthetic]
n_frames = 40
T = 32
"""


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    """A synthetic archive plus one trained imputer and classifier."""
    d = tmp_path_factory.mktemp("cli")
    cfg = d / "small.ini"
    cfg.write_text(SMALL)
    arc = d / "synth.lcb"
    assert cli.main(["synth", "--config", str(cfg), "--out", str(arc)]) == 0
    base = ["--config", str(cfg), "--archive", str(arc), "--out", str(d / "run")]
    assert cli.main(["train", "--stage", "imputer"] + base) == 0
    assert cli.main(["train", "--stage", "classifier", "--imputer", str(d / "run" / "imputer.lcw")] + base) == 0
    return SimpleNamespace(dir=d, cfg=str(cfg), archive=str(arc), run=d / "run")


def test_train_products_and_manifest(run):
    for stage in ("imputer", "classifier"):
        for ext in (".lcw", ".ini", ".log", ".config.ini", ".manifest.ini"):
            assert (run.run / (stage + ext)).is_file()
    man = configparser.ConfigParser()
    man.read(run.run / "imputer.manifest.ini")
    assert man["run"]["seed"] == "0"
    echoed = cli.RunConfig.from_ini((run.run / "imputer.config.ini").read_text())
    assert man["run"]["config_sha256"] == echoed.digest()


def test_rerun_is_byte_identical_and_needs_force(run, tmp_path):
    args = ["train", "--stage", "imputer", "--config", run.cfg, "--archive", run.archive, "--out", str(run.run)]
    before = (run.run / "imputer.lcw").read_bytes()
    assert cli.main(args) == 1
    assert cli.main(args + ["--force"]) == 0
    assert (run.run / "imputer.lcw").read_bytes() == before


def test_evaluate_is_reproducible(run, tmp_path, capsys):
    args = ["evaluate", "--config", run.cfg, "--archive", run.archive, "--model", str(run.run / "classifier.lcw"),
            "--imputer", str(run.run / "imputer.lcw"), "--out", str(tmp_path)]
    assert cli.main(args) == 0
    first = (tmp_path / "report.tsv").read_text()
    assert first.startswith("model\tscope\tclass")
    assert "overall" in capsys.readouterr().out
    assert cli.main(args + ["--force"]) == 0
    assert (tmp_path / "report.tsv").read_text() == first


def test_evaluate_rejects_imputer_as_model(run, tmp_path):
    args = ["evaluate", "--config", run.cfg, "--archive", run.archive, "--model", str(run.run / "imputer.lcw"),
            "--out", str(tmp_path)]
    assert cli.main(args) == 1


@pytest.mark.parametrize(
    "argv",
    [["bogus"], ["train", "--stage", "classifier", "--archive", "x", "--out", "y"],
     ["train", "--stage", "nope", "--archive", "x", "--out", "y"]],
)
def test_usage_errors(argv, tmp_path):
    assert cli.main(argv) == 1


def test_unknown_scenario(run, tmp_path):
    argv = ["train", "--stage", "baseline", "--config", run.cfg, "--archive", run.archive,
            "--scenario", "3", "--out", str(tmp_path)]
    assert cli.main(argv) == 1


def test_data_errors(tmp_path):
    missing = ["train", "--stage", "imputer", "--archive", str(tmp_path / "none.lcb"), "--out", str(tmp_path)]
    assert cli.main(missing) == 2
    (tmp_path / "empty").mkdir()
    assert cli.main(["ingest", str(tmp_path / "empty"), "--out", str(tmp_path / "a.lcb")]) == 2
    bad = tmp_path / "bad.ini"
    bad.write_text("[imputer]\nwidth = 3\n")
    assert cli.main(["synth", "--config", str(bad), "--out", str(tmp_path / "s.lcb")]) == 1


def test_ingest_counts_and_skips(record_dir, tmp_path, capsys):
    (record_dir / "broken").mkdir()
    (record_dir / "broken" / "s0003.hea").write_text("s0003 nonsense\n")
    out = tmp_path / "ptb.lcb"
    assert cli.main(["ingest", str(record_dir), "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "Myocardial Infarction: inferior\t2" in text
    assert "Healthy Control\t3" in text
    assert "total\t5" in text
    assert len(read_archive(out)) == 5
    assert cli.main(["ingest", str(record_dir), "--out", str(tmp_path / "s.lcb"), "--strict"]) == 2


def test_ingest_from_environment(tmp_path, monkeypatch):
    import numpy as np

    write_record(tmp_path / "p", "s0001", np.zeros((5000, 15), dtype=np.int16) + 5, comments=HEALTHY)
    monkeypatch.setenv("LIMBCHAN_DATA_DIR", str(tmp_path / "p"))
    assert cli.main(["ingest", "--out", str(tmp_path / "e.lcb")]) == 0
    monkeypatch.delenv("LIMBCHAN_DATA_DIR")
    assert cli.main(["ingest", "--out", str(tmp_path / "f.lcb")]) == 1


def test_config_round_trip_and_overrides(tmp_path):
    cfg = cli.RunConfig.from_ini(SMALL)
    assert cfg.imputer.hidden == 8
    assert cfg.baseline.blocks == ((4, 1), (8, 2))
    back = cli.RunConfig.from_ini(cfg.to_ini())
    assert back == cfg and back.digest() == cfg.digest()
    with pytest.raises(cli.UsageError):
        cli.RunConfig.from_ini("[nowhere]\nx = 1\n")
    p = tmp_path / "c.ini"
    p.write_text(SMALL)
    args = SimpleNamespace(config=str(p), seed=9, scenario=2, leads=None, group_by_patient=True, epochs=3)
    eff = cli.load_run_config(args)
    assert eff.seed == eff.synthetic.seed == eff.imputer_train.seed == 9
    assert eff.scenario_leads() == ("V1", "V2", "V3")
    assert eff.imputer_train.epochs == eff.classifier_train.epochs == 3
