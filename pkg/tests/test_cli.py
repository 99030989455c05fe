import csv
import subprocess
import sys

import pytest

from hybridload import config as cf
from hybridload.cli import main
from hybridload.evaluation import load_report
from hybridload.train import load_checkpoint

TINY_CFG = """\
# tiny model for fast runs
model.d = 3
model.n_h = 4
train.n_clusters = 3
train.max_epochs_offline = 2
train.max_epochs_online = 2
train.batch_size = 32
data.train_end = 2019-10-01   # test from October
data.test_days = 8
"""


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "tiny.cfg").write_text(TINY_CFG)
    assert main(["synth", "--out", str(d / "s.csv"), "--years", "1", "--seed", "7"]) == 0
    return d


def data_args(d):
    return ["--config", str(d / "tiny.cfg"), "--data", str(d / "s.csv"), "--holidays", str(d / "s.holidays.txt")]


@pytest.fixture(scope="module")
def trained(work):
    assert main(["train", *data_args(work), "--out", str(work / "m.json")]) == 0
    return work / "m.json"


class TestConfig:
    def test_defaults_match_table(self):
        c = cf.RunConfig()
        assert c["train.lambda_perturb"] == 1.0 and c["train.n_clusters"] == 20 and c["model.n_h"] == 128
        assert c["policy.cadence_days"] == 7 and c["policy.history_days"] == 90
        assert c.train() == cf.TrainConfig()

    def test_parse_and_comments(self):
        vals = cf.parse_config(TINY_CFG)
        assert vals["model.d"] == 3
        assert str(vals["data.train_end"]) == "2019-10-01"

    def test_unknown_key(self):
        with pytest.raises(cf.ConfigError, match="train.lamda"):
            cf.parse_config("train.lamda = 1")

    def test_bad_value_names_key(self):
        with pytest.raises(cf.ConfigError, match="train.batch_size"):
            cf.parse_config("train.batch_size = many")

    def test_missing_equals(self):
        with pytest.raises(cf.ConfigError, match=":1:"):
            cf.parse_config("train.seed 3")

    def test_overrides_win(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("train.seed = 3\n")
        assert cf.load_config(p, {"train.seed": 9})["train.seed"] == 9
        assert cf.load_config(p)["train.seed"] == 3

    def test_dump_round_trip(self):
        c = cf.RunConfig().with_values({"synth.level_shift": cf.parse_value("synth.level_shift", "2021-04-01:1000")})
        again = cf.RunConfig().with_values(cf.parse_config(c.dump()))
        assert again.values == c.values

    def test_section_validation(self):
        with pytest.raises(cf.ConfigError, match="history_days"):
            cf.load_config(None, {"policy.history_days": 3})


class TestCommands:
    def test_synth_rows_and_determinism(self, work, tmp_path):
        with open(work / "s.csv") as fh:
            assert sum(1 for _ in fh) - 1 == 8760
        assert main(["synth", "--out", str(tmp_path / "b.csv"), "--years", "1", "--seed", "7"]) == 0
        assert (tmp_path / "b.csv").read_bytes() == (work / "s.csv").read_bytes()
        assert (tmp_path / "b.holidays.txt").read_bytes() == (work / "s.holidays.txt").read_bytes()

    def test_synth_default_span(self, tmp_path):
        assert main(["synth", "--out", str(tmp_path / "d.csv")]) == 0
        with open(tmp_path / "d.csv") as fh:
            assert sum(1 for _ in fh) - 1 == 24 * 1096  # 2019-2021 includes 2020-02-29

    def test_synth_negative_amplitude(self, tmp_path, capsys):
        rc = main(["synth", "--out", str(tmp_path / "x.csv"), "--set", "synth.daily_amplitude=-5"])
        assert rc == 2
        assert "daily_amplitude" in capsys.readouterr().err

    def test_unknown_key_exit_2(self, tmp_path, capsys):
        p = tmp_path / "bad.cfg"
        p.write_text("synth.colour = blue\n")
        assert main(["synth", "--config", str(p), "--out", str(tmp_path / "x.csv")]) == 2
        assert "synth.colour" in capsys.readouterr().err

    def test_train_outputs(self, trained, capsys):
        ck = load_checkpoint(trained)
        assert ck.dims.n_h == 4
        with open(trained.with_suffix(".history.csv")) as fh:
            rows = list(csv.DictReader(fh))
        assert [r["epoch"] for r in rows] == ["0", "1", "2"]

    def test_train_prints_validation_loss(self, work, tmp_path, capsys):
        assert main(["train", *data_args(work), "--out", str(tmp_path / "m.json")]) == 0
        assert "final validation loss" in capsys.readouterr().out

    def test_train_byte_identical(self, work, trained, tmp_path):
        assert main(["train", *data_args(work), "--out", str(tmp_path / "again.json")]) == 0
        assert (tmp_path / "again.json").read_bytes() == trained.read_bytes()

    def test_train_zero_epochs(self, work, tmp_path):
        assert main(["train", *data_args(work), "--max-epochs", "0", "--out", str(tmp_path / "z.json")]) == 0
        assert len(load_checkpoint(tmp_path / "z.json").history) == 1

    def test_train_missing_data(self, work, tmp_path):
        rc = main(["train", "--config", str(work / "tiny.cfg"), "--data", str(tmp_path / "none.csv"),
                   "--out", str(tmp_path / "m.json")])
        assert rc == 1

    def test_train_divergence_exit_3(self, work, tmp_path):
        rc = main(["train", *data_args(work), "--set", "train.lr_offline=1e300", "--out", str(tmp_path / "m.json")])
        assert rc == 3

    def test_backtest_and_metrics(self, work, trained, tmp_path, capsys):
        out = tmp_path / "rep"
        assert main(["backtest", *data_args(work), "--checkpoint", str(trained), "--out", str(out)]) == 0
        rep = load_report(out / "report.json")
        assert len(rep.days) == 8 and len(rep.corrections) == 1
        capsys.readouterr()
        assert main(["metrics", str(out / "report_hourly.csv")]) == 0
        line = capsys.readouterr().out
        assert f"mae={rep.aggregate.mae!r}" in line and f"mape={rep.aggregate.mape!r}" in line

    def test_backtest_retrain_all_label(self, work, trained, tmp_path):
        out = tmp_path / "rep"
        args = [*data_args(work), "--checkpoint", str(trained), "--policy", "retrain-all", "--out", str(out)]
        assert main(["backtest", *args]) == 0
        assert [c["mode"] for c in load_report(out / "report.json").corrections] == ["retrain-all"]

    def test_backtest_byte_identical(self, work, trained, tmp_path):
        for name in ("a", "b"):
            assert main(["backtest", *data_args(work), "--checkpoint", str(trained), "--out", str(tmp_path / name)]) == 0
        for f in ("report.json", "report_hourly.csv", "report_summary.csv"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_backtest_missing_checkpoint(self, work, tmp_path, capsys):
        rc = main(["backtest", *data_args(work), "--checkpoint", str(tmp_path / "gone.json"), "--out", str(tmp_path)])
        assert rc == 1
        assert "gone.json" in capsys.readouterr().err

    def test_backtest_history_shortfall(self, work, trained, tmp_path):
        rc = main(["backtest", *data_args(work), "--checkpoint", str(trained), "--test-start", "2019-01-03",
                   "--out", str(tmp_path)])
        assert rc == 1

    def test_metrics_malformed(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("a,b\n1,2\n")
        assert main(["metrics", str(p)]) == 1

    def test_ablate_two_rows(self, work, tmp_path):
        rc = main(["ablate", *data_args(work), "--variants", "proposed,model1", "--seeds", "1", "--days", "2",
                   "--max-epochs", "1", "--out", str(tmp_path)])
        assert rc == 0
        with open(tmp_path / "ablation.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert [r["name"] for r in rows] == ["proposed", "model1"]

    def test_sweep_two_rows(self, work, tmp_path):
        rc = main(["sweep", *data_args(work), "--nc", "2,3", "--lambda", "1", "--days", "2", "--max-epochs", "1",
                   "--set", "train.n_clusters=3", "--out", str(tmp_path)])
        assert rc == 0
        with open(tmp_path / "sweep.csv") as fh:
            assert len(list(csv.DictReader(fh))) == 2
        assert (tmp_path / "sweep_nc_mape.svg").exists()


def test_help_lists_every_key():
    out = subprocess.run([sys.executable, "-m", "hybridload", "train", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for key in cf.KEYS:
        assert key in out.stdout
    assert "[0.005]" in out.stdout and "[150]" in out.stdout


def test_argparse_error_is_exit_2():
    out = subprocess.run([sys.executable, "-m", "hybridload", "train"], capture_output=True, text=True)
    assert out.returncode == 2
