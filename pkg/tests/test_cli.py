import numpy as np
import pytest

from twophase_ate.cli import EXIT_CONFIG_ERROR, EXIT_ESTIMATOR_FAILURE, EXIT_OK, main
from twophase_ate.data_model import CsvSchema, write_csv

from util import fulldata_tmle, make_full_dataset, make_twophase_dataset

SCHEMA = CsvSchema(treatment="a", outcome="y", delta="d", w1=("u1",), w2=("v1", "v2"))

SCHEMA_LINES = [
    "schema.treatment = a",
    "schema.outcome = y",
    "schema.delta = d",
    "schema.w1 = u1",
    "schema.w2 = v1, v2",
]


def write_cfg(path, lines):
    path.write_text("\n".join(lines) + "\n")
    return str(path)


def read_rows(path):
    import csv

    with open(path) as fh:
        return list(csv.DictReader(fh))


class TestEstimateMode:
    def test_toy_dataset_produces_sane_row(self, tmp_path):
        ds = make_twophase_dataset(np.random.default_rng(0), n=120)
        data = tmp_path / "toy.csv"
        write_csv(ds, data, SCHEMA)
        cfg = write_cfg(tmp_path / "run.cfg", [
            "mode = estimate",
            f"data.path = {data}",
            *SCHEMA_LINES,
            "estimators = ipcw_tmle",
        ])
        code = main(["--config", cfg, "--out", str(tmp_path / "out")])
        assert code == EXIT_OK
        rows = read_rows(tmp_path / "out" / "estimates.csv")
        assert len(rows) == 1
        row = rows[0]
        psi, lo, hi = float(row["psi_hat"]), float(row["ci_lo"]), float(row["ci_hi"])
        assert np.isfinite(psi) and lo < psi < hi
        assert row["converged"] == "true"

    def test_known_pi_one_matches_fulldata_fixture(self, tmp_path):
        ds = make_full_dataset(np.random.default_rng(1), n=200)
        data = tmp_path / "full.csv"
        write_csv(ds, data, SCHEMA)
        cfg = write_cfg(tmp_path / "run.cfg", [
            "mode = estimate",
            f"data.path = {data}",
            *SCHEMA_LINES,
            "estimators = ipcw_tmle",
            "nuisance.known_pi = 1.0",
        ])
        code = main(["--config", cfg, "--out", str(tmp_path / "out")])
        assert code == EXIT_OK
        row = read_rows(tmp_path / "out" / "estimates.csv")[0]
        assert float(row["psi_hat"]) == pytest.approx(fulldata_tmle(ds), abs=1e-8)

    def test_missing_delta_column_is_config_error(self, tmp_path):
        ds = make_twophase_dataset(np.random.default_rng(2), n=60)
        data = tmp_path / "toy.csv"
        write_csv(ds, data, SCHEMA)
        cfg = write_cfg(tmp_path / "run.cfg", [
            "mode = estimate",
            f"data.path = {data}",
            "schema.treatment = a",
            "schema.outcome = y",
            "schema.w1 = u1",
        ])
        assert main(["--config", cfg, "--out", str(tmp_path)]) == EXIT_CONFIG_ERROR

    def test_unknown_key_rejected(self, tmp_path):
        cfg = write_cfg(tmp_path / "run.cfg", ["mode = estimate", "sim.banana = 3"])
        assert main(["--config", cfg]) == EXIT_CONFIG_ERROR

    def test_estimator_failure_exits_one(self, tmp_path):
        # single-arm phase-2 data: the outcome regression is unidentifiable
        lines = ["u1,v1,v2,a,y,d"]
        rng = np.random.default_rng(3)
        for i in range(30):
            a = 1 if i < 25 else 0
            d = 1 if a == 1 else 0
            v1 = f"{rng.normal():.3f}" if d else ""
            v2 = f"{rng.normal():.3f}" if d else ""
            lines.append(f"{rng.normal():.3f},{v1},{v2},{a},{i % 2},{d}")
        data = tmp_path / "bad.csv"
        data.write_text("\n".join(lines) + "\n")
        cfg = write_cfg(tmp_path / "run.cfg", [
            "mode = estimate",
            f"data.path = {data}",
            *SCHEMA_LINES,
            "estimators = aipcw",
        ])
        assert main(["--config", cfg, "--out", str(tmp_path / "out")]) == EXIT_ESTIMATOR_FAILURE
        row = read_rows(tmp_path / "out" / "estimates.csv")[0]
        assert row["converged"] == "false"


class TestBundledExample:
    def test_example_cohort_estimates(self, tmp_path, repro_dir, monkeypatch):
        monkeypatch.chdir(repro_dir.parent)  # config uses a repo-relative path
        out = tmp_path / "out"
        code = main(["--config", str(repro_dir / "example_estimate.cfg"), "--out", str(out)])
        assert code == EXIT_OK
        rows = read_rows(out / "estimates.csv")
        assert [r["estimator"] for r in rows] == ["aipcw", "ipcw_tmle", "raking"]
        for r in rows:
            psi, lo, hi = float(r["psi_hat"]), float(r["ci_lo"]), float(r["ci_hi"])
            assert np.isfinite(psi) and lo < psi < hi
            assert r["converged"] == "true"


class TestSimulateMode:
    def test_smoke_config_runs_and_is_deterministic(self, tmp_path, repro_dir):
        cfg = repro_dir / "smoke_n300.cfg"
        out1, out2 = tmp_path / "o1", tmp_path / "o2"
        assert main(["--config", str(cfg), "--out", str(out1), "--parallelism", "1"]) == EXIT_OK
        assert main(["--config", str(cfg), "--out", str(out2), "--parallelism", "1"]) == EXIT_OK
        r1 = (out1 / "report.csv").read_bytes()
        r2 = (out2 / "report.csv").read_bytes()
        assert r1 == r2
        assert (out1 / "report.meta.json").exists()

    def test_mode_mixing_rejected(self, tmp_path):
        cfg = write_cfg(tmp_path / "run.cfg", [
            "mode = simulate",
            "data.path = nope.csv",
            "sim.dgp = kang_dr",
            "sim.n = 100",
            "sim.n_runs = 1",
        ])
        assert main(["--config", cfg, "--out", str(tmp_path)]) == EXIT_CONFIG_ERROR

    def test_unknown_dgp_rejected(self, tmp_path):
        cfg = write_cfg(tmp_path / "run.cfg", [
            "mode = simulate",
            "sim.dgp = mystery",
            "sim.n = 100",
            "sim.n_runs = 1",
        ])
        assert main(["--config", cfg, "--out", str(tmp_path)]) == EXIT_CONFIG_ERROR


class TestConfigParsing:
    def test_duplicate_key_rejected(self, tmp_path):
        cfg = write_cfg(tmp_path / "run.cfg", ["mode = estimate", "mode = simulate"])
        assert main(["--config", cfg]) == EXIT_CONFIG_ERROR

    def test_comments_and_blank_lines_ignored(self):
        from twophase_ate.cli import parse_config_text

        cfg = parse_config_text("# header\n\nmode = simulate  # trailing\n")
        assert cfg == {"mode": "simulate"}

    def test_mode_flag_overrides_config(self, tmp_path):
        # config says estimate but is otherwise a simulate config; the
        # --mode flag must win
        cfg = write_cfg(tmp_path / "run.cfg", [
            "mode = estimate",
            "sim.dgp = missing_rate",
            "sim.n = 200",
            "sim.n_runs = 1",
            "estimators = aipcw",
        ])
        out = tmp_path / "out"
        code = main(["--config", cfg, "--mode", "simulate", "--out", str(out),
                     "--parallelism", "1"])
        assert code == EXIT_OK
        assert (out / "report.csv").exists()

    def test_missing_config_file(self, tmp_path):
        assert main(["--config", str(tmp_path / "nope.cfg")]) == EXIT_CONFIG_ERROR

    def test_env_var_parallelism_fallback(self, tmp_path, monkeypatch):
        monkeypatch.setenv("TWOPHASE_THREADS", "1")
        cfg = write_cfg(tmp_path / "run.cfg", [
            "mode = simulate",
            "sim.dgp = missing_rate",
            "sim.n = 200",
            "sim.n_runs = 2",
            "estimators = aipcw",
        ])
        out = tmp_path / "out"
        assert main(["--config", cfg, "--out", str(out)]) == EXIT_OK
        assert (out / "report.csv").exists()


@pytest.fixture()
def repro_dir():
    from pathlib import Path

    return Path(__file__).resolve().parent.parent / "repro"
