import csv
import json

import pytest

from spikecloud.ablation import TIMESTEPS, ablate, ablation_csv, suite_variants
from spikecloud.cli import run
from spikecloud.config import Settings
from spikecloud.errors import ConfigError

TINY = """\
data.streams_per_class=3
data.duration_s=0.6
data.rate_hz=4000
window.L_us=200000
window.overlap_us=100000
group.N=64
group.M=8
group.K=4
net.T=4
train.max_epochs=2
train.batch_size=4
energy.samples=4
"""


@pytest.fixture
def cfg(tmp_path):
    p = tmp_path / "tiny.cfg"
    p.write_text(TINY)
    return str(p)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_unknown_subcommand_fails(capsys):
    assert run(["bogus"]) != 0


def test_bad_setting_fails(cfg, tmp_path, capsys):
    code = run(["train", "--config", cfg, "--out", str(tmp_path / "o"), "--set", "net.T=lots"])
    assert code == 1
    assert "net.T" in capsys.readouterr().err


def test_gradcheck_exit_zero(tmp_path):
    out = tmp_path / "o"
    assert run(["gradcheck", "--out", str(out)]) == 0
    rep = json.loads((out / "gradcheck.json").read_text())
    assert rep["passed"] is True


def test_gen_data_manifest(cfg, tmp_path):
    out = tmp_path / "o"
    assert run(["gen-data", "--config", cfg, "--out", str(out), "--format", "csv"]) == 0
    manifest = json.loads((out / "data" / "manifest.json").read_text())
    assert len(manifest) == 12
    assert {"path", "label", "split"} <= set(manifest[0])
    assert sum(r["split"] == "test" for r in manifest) == 4
    assert all((out / "data" / r["path"]).exists() for r in manifest)


def test_pipeline_from_generated_data(cfg, tmp_path):
    out = tmp_path / "o"
    common = ["--config", cfg, "--out", str(out)]
    assert run(["gen-data", *common]) == 0
    data = str(out / "data")
    assert run(["preprocess", *common, "--data", data]) == 0
    assert (out / "grouped.spkc").exists()
    assert run(["train", *common, "--data", data]) == 0
    rows = read_csv(out / "metrics.csv")
    assert [r["split"] for r in rows] == ["train", "test", "test_stream"] * 2
    ck = str(out / "checkpoint.spkc")
    assert run(["eval", *common, "--data", data, "--checkpoint", ck]) == 0
    ev = json.loads((out / "eval.json").read_text())
    assert 0 <= ev["stream_accuracy"] <= 1
    assert run(["energy", *common, "--data", data, "--checkpoint", ck,
                "--reference-params", "580000", "--reference-static-j", "0.000756"]) == 0
    en = json.loads((out / "energy.json").read_text())
    cal = en["calibration"]
    assert cal["bit_seconds_per_param"] == pytest.approx(100.33, abs=0.01)
    assert cal["static_j"] == pytest.approx(en["totals"]["params"] / 580000 * 0.756e-3, rel=1e-12)
    assert en["totals"]["dynamic_j"] <= en["totals"]["ann_dynamic_j"]
    assert run(["encode-stats", *common, "--groups", "2000"]) == 0
    stats = {r["metric"]: float(r["value"]) for r in read_csv(out / "encode_stats.csv")}
    assert stats["mre_rescaled"] < stats["mre_raw"]


def test_flags_override_config(cfg, tmp_path):
    out = tmp_path / "o"
    assert run(["train", "--config", cfg, "--out", str(out), "--set", "net.T=3",
                "--epochs", "1", "--seed", "5", "--grouping-variant", "row4"]) == 0
    resolved = (out / "config.resolved").read_text()
    assert "net.T=3" in resolved and "seed=5" in resolved
    assert "train.max_epochs=1" in resolved and "group.variant=row4" in resolved
    assert len(read_csv(out / "metrics.csv")) == 3


@pytest.mark.parametrize("argv", [
    ["gen-data"],
    ["gradcheck"],
    ["train"],
    ["preprocess"],
    ["encode-stats", "--groups", "500"],
])
def test_runs_are_bitwise_identical(cfg, tmp_path, argv):
    outs = [tmp_path / "a", tmp_path / "b"]
    for o in outs:
        assert run([argv[0], "--config", cfg, "--out", str(o), *argv[1:]]) == 0
    files = lambda root: sorted(p.relative_to(root).as_posix() for p in root.rglob("*") if p.is_file())
    names = files(outs[0])
    assert names == files(outs[1])
    for n in names:
        assert (outs[0] / n).read_bytes() == (outs[1] / n).read_bytes(), n


def test_nothing_written_outside_out(cfg, tmp_path, monkeypatch):
    work = tmp_path / "work"
    work.mkdir()
    monkeypatch.chdir(work)
    assert run(["train", "--config", cfg, "--out", "here"]) == 0
    assert [p.name for p in work.iterdir()] == ["here"]


def test_ablate_timestep_rows(cfg, tmp_path):
    out = tmp_path / "o"
    assert run(["ablate", "--config", cfg, "--out", str(out), "--suite", "timestep", "--epochs", "1"]) == 0
    rows = read_csv(out / "ablation_timestep.csv")
    assert [r["variant"] for r in rows] == [f"T={t}" for t in TIMESTEPS]
    assert all(0 <= float(r["accuracy"]) <= 1 for r in rows)


def test_suites():
    assert len(suite_variants("grouping")) == 10
    assert {v for v, _ in suite_variants("structure")} >= {"full", "local_only", "global_only"}
    with pytest.raises(ConfigError):
        suite_variants("depth")


def test_ablate_is_deterministic():
    base = Settings.defaults().update({
        "data.streams_per_class": 2, "data.duration_s": 0.4, "data.rate_hz": 3000,
        "window.L_us": 200_000, "window.overlap_us": 100_000, "data.test_fraction": 0.5,
        "group.N": 32, "group.M": 4, "group.K": 3, "net.T": 2, "train.batch_size": 4,
    })
    runs = [ablate("resf", base, epochs=1) for _ in range(2)]
    strip = lambda rows: [{k: v for k, v in r.items() if k != "wall_time"} for r in rows]
    assert strip(runs[0]) == strip(runs[1])
    assert ablation_csv(runs[0]).splitlines()[0] == "variant,accuracy,epochs,wall_time"
