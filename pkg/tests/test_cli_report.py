import csv
import io
import json
import subprocess
import sys
import warnings
from pathlib import Path

import jsonschema
import numpy as np
import pytest

from riskdec.cli import main
from riskdec.decomposition import RiskEstimates, decompose
from riskdec.errors import DataValidationError, UsageError
from riskdec.fvec_io import FeatureDataset, save_fvec
from riskdec.report import (COMPONENT_COLUMNS, FEWSHOT_COLUMNS, FRONTIER_COLUMNS, METADATA_COLUMNS,
                            SETTING_COLUMNS, ResultStore, accuracy, accuracy_row, build_report,
                            format_accuracy_row, load_schema, make_document, radar_normalize)

FIXTURES = Path(__file__).parent / "fixtures"


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def synth_dir(tmp_path, capsys):
    out = tmp_path / "data"
    code, _, _ = run(capsys, "synth", "gen", "--out-dir", str(out), "--n-pre", "100", "--n-tr", "200",
                     "--n-te", "200", "--encoder", "random_projection", "--d-out", "4")
    assert code == 0
    return out


def read_csv(text):
    return list(csv.reader(io.StringIO(text)))


class TestFrozenColumns:
    def test_orders(self):
        assert COMPONENT_COLUMNS == ("encoder", "hr_FF", "hr_AF", "hr_AS", "hr_US", "approx", "usability",
                                     "probe_gen", "encoder_gen", "total")
        assert SETTING_COLUMNS == ("risk_100%", "risk_30-shot", "risk_1%", "risk_5-shot", "risk_3-shot")
        assert METADATA_COLUMNS == ("objective", "architecture", "n_params", "year")
        assert FRONTIER_COLUMNS == ("encoder", "usability", "probe_gen")
        assert FEWSHOT_COLUMNS == ("setting", "kind", "mean", "std", "n_seeds", "n_train", "infeasible")


class TestPresentation:
    def test_accuracy_rendering(self):
        assert accuracy(0.263) == 73.7 and accuracy(None) is None

    def test_stored_fixture_row(self):
        doc = json.loads((FIXTURES / "fewshot_mocov3_rn50.json").read_text())
        jsonschema.validate(doc, load_schema("fewshot"))
        means = {s["setting"]: s["mean"] for s in doc["result"]["settings"]}
        assert accuracy_row(means) == [73.7, 55.5, 40.4]
        assert format_accuracy_row("MoCo-v3 RN50", means) == "MoCo-v3 RN50 & 73.7 & 55.5 & 40.4"

    def test_radar_two_models(self):
        assert radar_normalize({"a": {"m": 0.2}, "b": {"m": 0.4}}) == {"a": {"m": 1.0}, "b": {"m": 0.0}}

    def test_radar_constant_column_dropped(self):
        table = {k: {"m": 0.3, "n": v} for k, v in zip("abc", (0.25, 0.5, 0.75))}
        with pytest.warns(RuntimeWarning, match="'m'"):
            out = radar_normalize(table)
        assert out == {"a": {"n": 1.0}, "b": {"n": 0.5}, "c": {"n": 0.0}}

    def test_radar_needs_two_models(self):
        with pytest.raises(DataValidationError):
            radar_normalize({"a": {"m": 0.1}})


class TestStore:
    def test_put_is_append_only(self, tmp_path):
        store = ResultStore(tmp_path)
        doc = make_document("stats", "enc", {"seed": 0}, {"x": 1})
        path, written = store.put(doc)
        assert written and store.get("stats", "enc", doc["key"]) == doc
        _, again = store.put({**doc, "result": {"x": 2}})
        assert not again and store.get("stats", "enc", doc["key"])["result"] == {"x": 1}
        _, forced = store.put({**doc, "result": {"x": 2}}, force=True)
        assert forced and json.loads(path.read_text())["result"] == {"x": 2}

    def test_empty_store_report(self, tmp_path):
        with pytest.raises(UsageError):
            build_report(ResultStore(tmp_path))


class TestDecomposeCommand:
    def test_ref_risk(self, synth_dir, tmp_path, capsys):
        out = tmp_path / "dec.json"
        code, stdout, _ = run(capsys, "decompose", "--train", str(synth_dir / "feat_train.fvec"),
                              "--test", str(synth_dir / "feat_test.fvec"), "--ref-risk", "0.0084",
                              "--lambda", "1e-4", "--out", str(out))
        assert code == 0
        doc = json.loads(out.read_text())
        jsonschema.validate(doc, load_schema("decompose"))
        jsonschema.validate(doc["result"]["components"], load_schema("components"))
        assert doc["result"]["components"]["approx"] == 0.0084
        assert doc["result"]["provenance"]["hr_FF"] == "external"
        lines = stdout.strip().splitlines()
        assert [ln.split()[0] for ln in lines[1:]] == ["approx", "usability", "probe_gen", "encoder_gen"]

    def test_raw_train_computes_everything(self, synth_dir, capsys):
        code, stdout, _ = run(capsys, "decompose", "--train", str(synth_dir / "train.fvec"),
                              "--test", str(synth_dir / "test.fvec"), "--raw-train",
                              str(synth_dir / "train.fvec"), "--lambda", "1e-4", "--alt")
        assert code == 0
        doc = json.loads(stdout)
        assert set(doc["result"]["provenance"].values()) == {"computed"}
        assert doc["result"]["components"]["usability"] == 0.0
        alt = doc["result"]["alternative"]
        c = doc["result"]["components"]
        assert alt["probe_gen_alt"] + alt["encoder_gen_alt"] == pytest.approx(c["hr_US"] - c["hr_AF"], abs=1e-15)

    def test_both_sources_is_usage_error(self, synth_dir, capsys):
        with pytest.raises(SystemExit) as info:
            main(["decompose", "--train", "a", "--test", "b", "--ref-risk", "0.1", "--raw-train", "c"])
        assert info.value.code == 2

    def test_missing_source(self, synth_dir, capsys):
        code, _, err = run(capsys, "decompose", "--train", str(synth_dir / "train.fvec"),
                           "--test", str(synth_dir / "test.fvec"))
        assert code == 2 and "--ref-risk" in err

    def test_bad_file_is_data_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.fvec"
        bad.write_bytes(b"NOPE" + bytes(20))
        code, _, _ = run(capsys, "decompose", "--train", str(bad), "--test", str(bad), "--ref-risk", "0.1")
        assert code == 3

    def test_idempotent_store(self, synth_dir, tmp_path, capsys):
        store, out1, out2 = tmp_path / "store", tmp_path / "a.json", tmp_path / "b.json"
        base = ["decompose", "--train", str(synth_dir / "feat_train.fvec"), "--test",
                str(synth_dir / "feat_test.fvec"), "--ref-risk", "0.01", "--lambda", "1e-4", "--store", str(store)]
        assert run(capsys, *base, "--out", str(out1))[0] == 0
        files = sorted(store.iterdir())
        mtimes = [f.stat().st_mtime_ns for f in files]
        assert run(capsys, *base, "--out", str(out2))[0] == 0
        assert out1.read_bytes() == out2.read_bytes()
        assert [f.stat().st_mtime_ns for f in sorted(store.iterdir())] == mtimes
        assert run(capsys, *base, "--force", "--out", str(out2))[0] == 0
        assert out1.read_bytes() == out2.read_bytes()


class TestConfig:
    def test_flags_override_file(self, synth_dir, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"seed": 5, "decompose": {"ref_risk": 0.2, "lam": 1e-4}}))
        args = ["decompose", "--train", str(synth_dir / "feat_train.fvec"),
                "--test", str(synth_dir / "feat_test.fvec"), "--config", str(cfg)]
        code, stdout, _ = run(capsys, *args)
        doc = json.loads(stdout)
        assert code == 0 and doc["config"]["seed"] == 5 and doc["config"]["ref_risk"] == 0.2
        code, stdout, _ = run(capsys, "--seed", "7", *args, "--ref-risk", "0.3")
        doc = json.loads(stdout)
        assert doc["config"]["seed"] == 7 and doc["result"]["components"]["approx"] == 0.3

    def test_unknown_key(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"decompose": {"bogus": 1}}))
        assert run(capsys, "decompose", "--config", str(cfg))[0] == 2

    def test_env_store(self, synth_dir, tmp_path, capsys, monkeypatch):
        monkeypatch.setenv("RISKDEC_STORE", str(tmp_path / "envstore"))
        code, _, _ = run(capsys, "stats", "--in", str(synth_dir / "feat_train.fvec"))
        assert code == 0 and len(list((tmp_path / "envstore").iterdir())) == 1


class TestOtherCommands:
    def test_fewshot(self, synth_dir, tmp_path, capsys):
        out = tmp_path / "fs.json"
        code, _, _ = run(capsys, "fewshot", "--train", str(synth_dir / "feat_train.fvec"),
                         "--test", str(synth_dir / "feat_test.fvec"), "--seeds", "2", "--lambda", "1e-4",
                         "--settings", "100%,30-shot,3-shot", "--out", str(out))
        assert code == 0
        doc = json.loads(out.read_text())
        jsonschema.validate(doc, load_schema("fewshot"))
        rows = read_csv(out.with_suffix(".csv").read_text())
        assert tuple(rows[0]) == FEWSHOT_COLUMNS and [r[0] for r in rows[1:]] == ["100%", "30-shot", "3-shot"]
        infeasible = {s["setting"]: s["infeasible"] for s in doc["result"]["settings"]}
        assert infeasible["30-shot"] and not infeasible["3-shot"]

    def test_fewshot_default_settings(self, synth_dir, capsys):
        code, stdout, _ = run(capsys, "fewshot", "--train", str(synth_dir / "feat_train.fvec"),
                              "--test", str(synth_dir / "feat_test.fvec"), "--seeds", "1", "--lambda", "1e-4")
        assert code == 0
        assert [s["setting"] for s in json.loads(stdout)["result"]["settings"]] == \
            ["100%", "30-shot", "1%", "5-shot", "3-shot"]

    def test_zero_shot_rejected(self, synth_dir, capsys):
        code, _, _ = run(capsys, "fewshot", "--train", str(synth_dir / "feat_train.fvec"),
                         "--test", str(synth_dir / "feat_test.fvec"), "--settings", "0-shot")
        assert code == 2

    def test_stats(self, synth_dir, capsys):
        path = str(synth_dir / "feat_train.fvec")
        code, stdout, _ = run(capsys, "stats", "--in", path, "--pairs", path)
        doc = json.loads(stdout)
        jsonschema.validate(doc, load_schema("stats"))
        assert doc["result"]["effective_dim"] == 4 and doc["result"]["alignment"] == 0.0

    def test_analyze(self, capsys):
        code, stdout, _ = run(capsys, "analyze", "--table", str(FIXTURES / "models.csv"), "--method", "ca",
                              "--hparam", "dim", "--metric", "usability", "--metrics", "probe_gen",
                              "--log-hparam")
        doc = json.loads(stdout)
        jsonschema.validate(doc, load_schema("olsfit"))
        assert code == 0 and doc["result"]["term"] == "dim"
        (coef,) = [c for c in doc["result"]["coefficients"] if c["name"] == "dim"]
        assert coef["estimate"] == pytest.approx(-3.9080534783560736, rel=1e-10)

    def test_analyze_gla_confounded(self, tmp_path, capsys):
        table = tmp_path / "t.csv"
        table.write_text("h,twin,m\n" + "".join(f"{i},{2 * i},{i % 3}\n" for i in range(10)))
        code, _, err = run(capsys, "analyze", "--table", str(table), "--method", "gla", "--hparam", "h",
                           "--metric", "m", "--controls", "twin")
        assert code == 3 and "twin" in err

    def test_scaling(self, tmp_path, capsys):
        comps = decompose(RiskEstimates(0.01, 0.1, 0.2, 0.22)).to_dict()
        from riskdec.scaling import predict_risk
        from riskdec.decomposition import RiskComponents
        rc = RiskComponents.from_dict(comps)
        obs = [{"encoder": f"e{k}", "components": comps, "N": 1000, "n": n,
                "observed_risk": predict_risk(rc, 1000, n, 0.15 + 0.01 * k, 0.51), "group": f"g{k % 2}",
                "p": 100.0 * (k + 1)}
               for k in range(3) for n in (1000, 500, 300, 100, 30, 10)]
        path = tmp_path / "obs.json"
        path.write_text(json.dumps({"observations": obs}))
        jsonschema.validate(json.loads(path.read_text()), load_schema("scaling_obs"))
        code, stdout, _ = run(capsys, "scaling", "fit", "--obs", str(path), "--holdout", "iid",
                              "--n-holdout", "2")
        doc = json.loads(stdout)
        jsonschema.validate(doc, load_schema("scaling"))
        assert code == 0 and doc["result"]["decomposition"]["r2_test"] > 0.99
        assert doc["result"]["standard"]["n_params"] == 8

    def test_unseen_group_exit_zero(self, tmp_path, capsys):
        comps = decompose(RiskEstimates(0.01, 0.1, 0.2, 0.22)).to_dict()
        obs = [{"encoder": f"e{g}", "components": comps, "N": 1000, "n": n, "observed_risk": 0.2 + 1 / n,
                "group": g} for g in ("a", "b") for n in (10, 30, 100, 1000)]
        path = tmp_path / "obs.json"
        path.write_text(json.dumps(obs))
        code, stdout, _ = run(capsys, "scaling", "fit", "--obs", str(path), "--holdout", "group:b",
                              "--law", "standard")
        assert code == 0 and json.loads(stdout)["result"]["standard"]["r2_test"] is None

    def test_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "riskdec.cli", "--version"], capture_output=True, text=True)
        assert proc.returncode == 0 and proc.stdout.startswith("riskdec ")


class TestReport:
    def test_three_encoders(self, tmp_path, capsys):
        store = tmp_path / "store"
        enc = tmp_path / "enc.json"
        enc.write_text(json.dumps([{"kind": "constant"}, {"kind": "random_projection", "d_out": 8},
                                   {"kind": "identity"}]))
        code, _, _ = run(capsys, "synth", "sweep", "--encoders", str(enc), "--seeds", "2", "--n-tr", "400",
                         "--n-te", "200", "--n-pre", "100", "--fewshot", "--store", str(store),
                         "--out", str(tmp_path / "sweep.json"))
        assert code == 0
        assert read_csv((tmp_path / "sweep.frontier.csv").read_text())[0] == list(FRONTIER_COLUMNS)
        for doc in ResultStore(store).documents("decompose"):
            jsonschema.validate(doc, load_schema("decompose"))
        out_dir = tmp_path / "report"
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            assert run(capsys, "report", "--store", str(store), "--out-dir", str(out_dir))[0] == 0
        rows = read_csv((out_dir / "components.csv").read_text())
        assert tuple(rows[0]) == COMPONENT_COLUMNS + SETTING_COLUMNS + METADATA_COLUMNS
        assert len(rows) == 4
        assert all(cell != "" for r in rows[1:] for cell in r[:15])
        radar = json.loads((out_dir / "radar.json").read_text())
        jsonschema.validate(radar, load_schema("radar"))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            assert radar_normalize(radar["raw"]) == radar["normalized"]
        obs = json.loads((out_dir / "scaling_obs.json").read_text())
        jsonschema.validate(obs, load_schema("scaling_obs"))
        assert len(obs["observations"]) == 3 * 5
        frontier = read_csv((out_dir / "frontier.csv").read_text())
        assert tuple(frontier[0]) == FRONTIER_COLUMNS and len(frontier) == 4
        first = {p.name: p.read_bytes() for p in out_dir.iterdir()}
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            run(capsys, "report", "--store", str(store), "--out-dir", str(out_dir))
        assert {p.name: p.read_bytes() for p in out_dir.iterdir()} == first

    def test_report_without_store(self, tmp_path, capsys, monkeypatch):
        monkeypatch.delenv("RISKDEC_STORE", raising=False)
        assert run(capsys, "report", "--out-dir", str(tmp_path))[0] == 2
