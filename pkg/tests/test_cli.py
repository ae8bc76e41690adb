import csv
import gzip
import io
import json
from pathlib import Path

import numpy as np
import pytest

from ghz_factory.cli import EXIT_CONFIG, EXIT_DATA, EXIT_OK, config_from_dict, main
from ghz_factory.protocol import GhzLabel
from ghz_factory.quantum import DensityMatrix

from .conftest import WERNER_P


def run(*argv) -> int:
    return main([str(a) for a in argv])


def tree(root: Path) -> dict[str, bytes]:
    """All output files except the timestamped log."""
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file() and p.name != "run.log"}


def stream_files(root: Path) -> list[Path]:
    return sorted((root / "timetags").glob("*.jsonl*"))


@pytest.fixture(scope="module")
def werner_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("werner")
    cfg = root / "config.json"
    cfg.write_text(json.dumps({
        "source": {"kind": "werner", "p": WERNER_P},
        "detector": {"beta": 1.25},
        "attempts": 4000,
        "analysis": {"n_resamples": 200},
    }))
    out = root / "out"
    assert run("simulate", "--config", cfg, "--out", out) == EXIT_OK
    assert run("synthesize", "--config", cfg, "--out", out, "--seed", 11) == EXIT_OK
    assert run("analyze", *stream_files(out), "--config", cfg, "--out", out / "analysis",
               "--predictions", out / "predictions.json") == EXIT_OK
    return root, cfg, out


class TestSimulate:
    def test_ideal_populations(self, tmp_path):
        assert run("simulate", "--ideal", "--out", tmp_path) == EXIT_OK
        pred = json.loads((tmp_path / "predictions.json").read_text())["outcomes"]
        for outcome, entry in pred.items():
            label = GhzLabel.parse(entry["label"])
            j, k = label.pair
            expected = np.zeros(8)
            expected[[2 * j + k, 7 - (2 * j + k)]] = 0.5
            assert np.allclose(entry["populations"], expected, atol=1e-12)
            assert entry["probability"] == pytest.approx(1 / 8, abs=1e-12)
            assert entry["fidelity_model"] == pytest.approx(1.0, abs=1e-10)
        assert (tmp_path / "conditional_states.json").is_file()
        assert (tmp_path / "run.log").read_text().strip()

    def test_measured_source(self, tmp_path):
        bell = np.zeros((4, 4))
        bell[np.ix_([1, 2], [1, 2])] = 0.5
        path = tmp_path / "pair.json"
        path.write_text(json.dumps(DensityMatrix(bell).to_dict()))
        assert run("simulate", "--measured", path, "--out", tmp_path / "o") == EXIT_OK
        pred = json.loads((tmp_path / "o" / "predictions.json").read_text())["outcomes"]
        assert pred["uuu"]["fidelity_model"] == pytest.approx(1.0, abs=1e-10)

    def test_report_consumes_predictions(self, werner_run, tmp_path):
        _, _, out = werner_run
        before = (out / "predictions.json").read_bytes()
        assert run("report", "--predictions", out / "predictions.json", "--out", tmp_path / "r.txt") == EXIT_OK
        text = (tmp_path / "r.txt").read_text()
        pred = json.loads(before)["outcomes"]
        assert f"{pred['ddd']['fidelity_model']:.2f}" in text and "GHZ_1-" in text
        assert (out / "predictions.json").read_bytes() == before


class TestSynthesize:
    def test_one_file_per_setting(self, werner_run):
        _, _, out = werner_run
        files = stream_files(out)
        assert len(files) == 8
        manifest = json.loads((out / "timetags" / "manifest.json").read_text())
        assert [Path(s["file"]).name for s in manifest["streams"]] == [f.name for f in files]

    def test_idempotent_and_seed_sensitive(self, werner_run, tmp_path):
        _, cfg, out = werner_run
        assert run("synthesize", "--config", cfg, "--out", tmp_path / "a", "--seed", 11) == EXIT_OK
        assert tree(tmp_path / "a") == {k: v for k, v in tree(out).items() if k.startswith("timetags")}
        assert run("synthesize", "--config", cfg, "--out", tmp_path / "b", "--seed", 12) == EXIT_OK
        a, b = stream_files(tmp_path / "a"), stream_files(tmp_path / "b")
        assert [p.name for p in a] == [p.name for p in b]
        assert all(x.read_bytes() != y.read_bytes() for x, y in zip(a, b))
        # same schema: identical header lines
        assert all(x.read_text().splitlines()[0] == y.read_text().splitlines()[0] for x, y in zip(a, b))

    def test_parallel_jobs_match_serial(self, werner_run, tmp_path):
        _, cfg, out = werner_run
        assert run("synthesize", "--config", cfg, "--out", tmp_path, "--seed", 11, "--jobs", 2) == EXIT_OK
        assert tree(tmp_path) == {k: v for k, v in tree(out).items() if k.startswith("timetags")}

    def test_gzip_streams_analyze_identically(self, werner_run, tmp_path):
        _, cfg, out = werner_run
        assert run("synthesize", "--config", cfg, "--out", tmp_path, "--seed", 11, "--gzip") == EXIT_OK
        gz = stream_files(tmp_path)
        assert all(p.suffix == ".gz" for p in gz)
        assert gzip.decompress(gz[0].read_bytes()) == stream_files(out)[0].read_bytes()
        assert run("analyze", *gz, "--config", cfg, "--out", tmp_path / "an",
                   "--predictions", out / "predictions.json") == EXIT_OK
        assert tree(tmp_path / "an") == tree(out / "analysis")

    def test_full_scale_attempts(self, tmp_path):
        total_attempts, eff = 1_032_565, (0.2318, 0.2095, 0.1889)
        per_setting = total_attempts // 8
        assert run("synthesize", "--ideal", "--out", tmp_path, "--seed", 3, "--attempts", per_setting,
                   "--efficiencies", *eff, "--jobs", 4) == EXIT_OK
        manifest = json.loads((tmp_path / "timetags" / "manifest.json").read_text())
        total = sum(s["coincidences"] for s in manifest["streams"])
        p = float(np.prod(eff))
        n = 8 * per_setting
        assert abs(total - n * p) < 3 * np.sqrt(n * p * (1 - p))
        # same order as the 10037 coincidences of the measured run
        assert 0.5 < total / 10_037 < 2

    def test_requires_seed(self, tmp_path):
        assert run("synthesize", "--ideal", "--out", tmp_path) == EXIT_CONFIG
        assert not any(tmp_path.iterdir())

    def test_zero_attempts_rejected(self, tmp_path):
        assert run("synthesize", "--ideal", "--out", tmp_path / "o", "--seed", 1, "--attempts", 0) == EXIT_CONFIG
        assert not (tmp_path / "o").exists()


class TestAnalyze:
    def test_ideal_pipeline_bounds_are_one(self, tmp_path):
        assert run("synthesize", "--ideal", "--out", tmp_path, "--seed", 5, "--attempts", 1500) == EXIT_OK
        assert run("analyze", *stream_files(tmp_path), "--out", tmp_path / "an", "--n-resamples", 100) == EXIT_OK
        report = json.loads((tmp_path / "an" / "report.json").read_text())
        for o in report["beta_corrected"]["outcomes"]:
            value, sigma = o["lower_bound"]
            assert abs(value - 1.0) <= 3 * sigma + 1e-12
            assert o["gme_flag"] is True

    def test_werner_bounds_below_exact_fidelity(self, werner_run):
        _, _, out = werner_run
        report = json.loads((out / "analysis" / "report.json").read_text())
        pred = json.loads((out / "predictions.json").read_text())["outcomes"]
        for o in report["beta_corrected"]["outcomes"]:
            value, sigma = o["lower_bound"]
            assert value <= pred[o["outcome"]]["fidelity_model"] + 3 * sigma
            assert o["fidelity_model"] == pred[o["outcome"]]["fidelity_model"]

    def test_outputs_and_alpha_difference(self, werner_run):
        _, _, out = werner_run
        an = out / "analysis"
        report = json.loads((an / "report.json").read_text())
        assert report["beta_corrected"]["alpha_difference"] is not None
        assert report["beta_one"]["beta"] == 1.0
        assert "alpha(uuu) - alpha(ddd)" in (an / "report.txt").read_text()
        rows = list(csv.DictReader(io.StringIO((an / "report.csv").read_text())))
        assert len(rows) == 16
        assert len(list((an / "counts").glob("*.csv"))) == 8

    def test_idempotent(self, werner_run, tmp_path):
        _, cfg, out = werner_run
        assert run("analyze", *stream_files(out), "--config", cfg, "--out", tmp_path,
                   "--predictions", out / "predictions.json") == EXIT_OK
        assert tree(tmp_path) == tree(out / "analysis")

    def test_partial_inputs_report_gaps(self, werner_run, tmp_path):
        _, _, out = werner_run
        parity_only = [f for f in stream_files(out) if f.name.endswith("varphi+0.jsonl")]
        assert len(parity_only) == 6
        assert run("analyze", *parity_only, "--out", tmp_path, "--n-resamples", 20) == EXIT_OK
        gaps = json.loads((tmp_path / "report.json").read_text())["beta_corrected"]["gaps"]
        assert any("populations" in g for g in gaps)

    def test_corrupt_stream_is_data_error(self, werner_run, tmp_path):
        _, _, out = werner_run
        bad = tmp_path / "bad.jsonl"
        lines = stream_files(out)[0].read_text().splitlines()
        lines[3] = '{"kind": "DETECTION", "time_ns": 5'
        bad.write_text("\n".join(lines) + "\n")
        assert run("analyze", bad, "--out", tmp_path / "o") == EXIT_DATA
        assert not (tmp_path / "o").exists()

    def test_duplicate_settings_are_data_error(self, werner_run, tmp_path):
        _, _, out = werner_run
        f = stream_files(out)[0]
        assert run("analyze", f, f, "--out", tmp_path / "o") == EXIT_DATA

    def test_missing_file(self, tmp_path):
        assert run("analyze", tmp_path / "nope.jsonl", "--out", tmp_path / "o") == EXIT_DATA
        assert run("analyze", "--out", tmp_path / "o") == EXIT_CONFIG


class TestConfig:
    @pytest.mark.parametrize("body", [
        "{not json",
        json.dumps({"attempts": 100, "colour": "blue"}),
        json.dumps({"source": {"kind": "werner"}}),
        json.dumps({"source": {"kind": "werner", "p": 1.5}}),
        json.dumps({"efficiencies": [1, 1]}),
        json.dumps({"detector": {"eta_t": 0}}),
        json.dumps({"source": {"kind": "measured", "path": "/nonexistent.json"}}),
        json.dumps([1, 2]),
    ])
    def test_malformed_config_writes_nothing(self, tmp_path, body):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(body)
        out = tmp_path / "out"
        assert run("simulate", "--config", cfg, "--out", out) == EXIT_CONFIG
        assert not out.exists()

    def test_unknown_command_and_missing_config(self, tmp_path):
        assert run("transmogrify") == EXIT_CONFIG
        assert run("simulate", "--config", tmp_path / "absent.json") == EXIT_CONFIG

    def test_fidelity_shorthand(self):
        cfg = config_from_dict({"source": {"kind": "werner", "fidelity": 0.94}})
        assert cfg.source.werner_p == pytest.approx(WERNER_P)

    def test_command_line_overrides_config(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"source": {"kind": "werner", "p": 0.5}, "output_dir": str(tmp_path / "a")}))
        assert run("simulate", "--config", cfg, "--ideal", "--out", tmp_path / "b") == EXIT_OK
        assert not (tmp_path / "a").exists()
        pred = json.loads((tmp_path / "b" / "predictions.json").read_text())
        assert pred["source"]["kind"] == "ideal"

    def test_corrupt_measured_states_are_data_error(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text(json.dumps({"dim": 4, "entries": [[1, 0]] * 16}))
        assert run("simulate", "--measured", path, "--out", tmp_path / "o") == EXIT_DATA


class TestRatesAndReport:
    def test_rates_csv(self, tmp_path):
        out = tmp_path / "rates.csv"
        assert run("rates", "--n", "1,3", "--p", "0.5", "--out", out) == EXIT_OK
        rows = list(csv.DictReader(io.StringIO(out.read_text())))
        assert [float(r["direct_mean"]) for r in rows] == [2.0, 8.0]

    def test_rates_monte_carlo_is_deterministic(self, tmp_path):
        args = ("rates", "--n", "2", "--p", "0.3", "--mc-trials", 2000, "--seed", 4, "--cutoff", 3)
        assert run(*args, "--out", tmp_path / "a.csv") == EXIT_OK
        assert run(*args, "--out", tmp_path / "b.csv") == EXIT_OK
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
        assert "mc_mean" in (tmp_path / "a.csv").read_text()

    def test_rates_bad_input(self):
        assert run("rates", "--n", "x") == EXIT_CONFIG
        assert run("rates", "--p", "1.5") == EXIT_CONFIG

    def test_report_needs_input(self):
        assert run("report") == EXIT_CONFIG

    def test_report_from_analysis(self, werner_run, tmp_path):
        _, _, out = werner_run
        assert run("report", "--analysis", out / "analysis" / "report.json", "--out", tmp_path / "r.txt") == EXIT_OK
        text = (tmp_path / "r.txt").read_text()
        assert "Lower bound beta=1" in text and "alpha(uuu) - alpha(ddd)" in text

    def test_report_rejects_foreign_json(self, tmp_path):
        p = tmp_path / "x.json"
        p.write_text(json.dumps({"something": 1}))
        assert run("report", "--analysis", p) == EXIT_DATA
