import json
import os

import pandas as pd
import pytest

from src.commands import (
    METADATA_NAME,
    base_parser,
    cmd_efficiency_sweep,
    cmd_simulate,
    cmd_table2,
    cmd_validate,
    cmd_value,
    cmd_variance,
    config_from_args,
    run_command,
)
from src.config import dump_config, parse_config
from src.integrity import MANIFEST_NAME, verify_manifest
from src.market_model import reference_params
from src.reporting import render_table2
from src.run_context import config_digest
from src.valuation import table2_rows, value


HEADER = "         N" + "       V^E" + "       V^C" + "   rho^E %" + "   rho^C %" + "\n"
F_ROW = "         F" + "    1.3533" + "          " + "    100.00" + "          " + "\n"
TABLE2_TXT = (
    HEADER
    + "         R" + "    0.3211" + "          " + "     35.62" + "          " + "\n"
    + "        10" + "    0.5208" + "    0.6008" + "     43.49" + "     47.12" + "\n"
    + "       100" + "    0.9957" + "    1.0017" + "     69.94" + "     70.36" + "\n"
    + F_ROW
)
TABLE2_CSV = (
    b"label,regime,value,efficiency_percent\n"
    b"R,R,0.321065,35.6198\n"
    b"10,E,0.520751,43.4925\n"
    b"10,C,0.600837,47.1189\n"
    b"100,E,0.995744,69.936\n"
    b"100,C,1.00174,70.3568\n"
    b"F,F,1.35333,100\n"
)


def make_cfg(out, **sections):
    raw = {"output": {"dir": str(out)}}
    raw.update(sections)
    return parse_config(raw)


def read(path):
    with open(path, "rb") as f:
        return f.read()


class TestTable2:
    def test_text_layout(self, tmp_path):
        cfg = make_cfg(tmp_path, table2={"n_list": [10, 100]})
        cmd_table2(cfg)
        with open(tmp_path / "table2.txt", encoding="utf-8") as f:
            lines = f.readlines()
        assert lines[0] == HEADER
        assert lines[-1] == F_ROW
        assert [line.split()[0] for line in lines[1:]] == ["R", "10", "100", "F"]
        v_r, rho_r = (float(x) for x in lines[1].split()[1:])
        assert v_r == pytest.approx(0.3213, abs=5e-4)
        assert rho_r == pytest.approx(35.63, abs=0.05)

    def test_golden_bytes(self, tmp_path):
        cmd_table2(make_cfg(tmp_path, table2={"n_list": [10, 100]}))
        assert read(tmp_path / "table2.txt") == TABLE2_TXT.encode("utf-8")
        assert read(tmp_path / "table2.csv") == TABLE2_CSV

    def test_csv_layout(self, tmp_path):
        cmd_table2(make_cfg(tmp_path, table2={"n_list": [10]}))
        df = pd.read_csv(tmp_path / "table2.csv")
        assert list(df.columns) == ["label", "regime", "value", "efficiency_percent"]
        assert list(df["regime"]) == ["R", "E", "C", "F"]
        assert read(tmp_path / "table2.csv").splitlines()[-1] == b"F,F,1.35333,100"

    def test_outputs_identical_across_workers(self, tmp_path):
        a = make_cfg(tmp_path / "a", table2={"n_list": [10, 1000]}, sim={"workers": 1})
        b = make_cfg(tmp_path / "b", table2={"n_list": [10, 1000]}, sim={"workers": 2})
        cmd_table2(a)
        cmd_table2(b)
        for name in ("table2.csv", "table2.txt"):
            assert read(tmp_path / "a" / name) == read(tmp_path / "b" / name)

    def test_render_matches_rows(self):
        text = render_table2(table2_rows(reference_params(), [10], 0.25))
        row_10 = text.splitlines()[2].split()
        assert row_10[0] == "10"
        assert float(row_10[1]) == pytest.approx(0.5208, abs=1e-4)
        assert float(row_10[2]) == pytest.approx(0.6008, abs=1e-4)


class TestRunRecords:
    def test_metadata_and_manifest(self, tmp_path):
        cfg = make_cfg(tmp_path, table2={"n_list": [10]}, sim={"seed": 77})
        paths = cmd_table2(cfg)
        assert os.path.basename(paths[-1]) == MANIFEST_NAME
        with open(tmp_path / METADATA_NAME, encoding="utf-8") as f:
            meta = json.load(f)
        assert meta["command"] == "table2"
        assert meta["seed"] == 77
        assert meta["config_sha256"] == config_digest(dump_config(cfg))
        assert "numpy" in meta["versions"]
        assert verify_manifest(str(tmp_path)) == []

    def test_manifest_detects_tampering(self, tmp_path):
        cmd_table2(make_cfg(tmp_path, table2={"n_list": [10]}))
        with open(tmp_path / "table2.csv", "a", encoding="utf-8") as f:
            f.write("extra\n")
        os.remove(tmp_path / "table2.txt")
        assert verify_manifest(str(tmp_path)) == ["table2.csv", "table2.txt"]

    def test_errors_become_exit_messages(self, tmp_path):
        cfg = make_cfg(tmp_path, table2={"n_list": [0]})
        with pytest.raises(SystemExit, match=r"\[ERR\] n_dates_must_be_positive"):
            run_command(cmd_table2, cfg)


class TestVariance:
    def test_curves_and_envelope(self, tmp_path):
        cmd_variance(make_cfg(tmp_path))
        frames = {r: pd.read_csv(tmp_path / f"variance_{r}.csv") for r in "RECF"}
        assert (frames["F"]["gamma"] == 0).all()
        assert (frames["C"]["gamma"] <= frames["R"]["gamma"]).all()
        assert (frames["C"]["gamma"] <= frames["E"]["gamma"]).all()
        assert frames["E"]["is_information_date"].sum() == 10
        env = pd.read_csv(tmp_path / "envelope.csv")
        assert list(env["regime"]) == ["E", "C"]
        assert (env["L"] <= env["U"]).all()
        with open(tmp_path / METADATA_NAME, encoding="utf-8") as f:
            meta = json.load(f)
        assert "transient_index_C" in meta

    def test_no_dates_means_no_envelope(self, tmp_path):
        cmd_variance(make_cfg(tmp_path, schedule={"n_dates": 0}))
        assert not (tmp_path / "envelope.csv").exists()
        r = pd.read_csv(tmp_path / "variance_R.csv")
        c = pd.read_csv(tmp_path / "variance_C.csv")
        assert list(c["gamma"]) == list(r["gamma"])

    def test_envelope_grid_export(self, tmp_path):
        cmd_variance(make_cfg(tmp_path, variance={"grid_spacings": [0.05, 0.1], "grid_gammas": [0.25, 1.0]}))
        grid = pd.read_csv(tmp_path / "envelope_grid.csv")
        assert len(grid) == 8
        assert list(grid["regime"].unique()) == ["E", "C"]
        assert (grid["L"] <= grid["U"]).all()

    def test_envelope_grid_is_optional(self, tmp_path):
        cmd_variance(make_cfg(tmp_path))
        assert not (tmp_path / "envelope_grid.csv").exists()

    def test_svg_written(self, tmp_path):
        cmd_variance(make_cfg(tmp_path, output={"dir": str(tmp_path), "svg": True}, variance={"step": 0.01}))
        assert (tmp_path / "variance.svg").stat().st_size > 0


class TestValueAndSweep:
    def test_value_table(self, tmp_path):
        cmd_value(make_cfg(tmp_path), x0=1.0)
        df = pd.read_csv(tmp_path / "value.csv").set_index("regime")
        assert list(df.index) == ["R", "E", "C", "F"]
        assert df.loc["F", "efficiency_percent"] == 100
        assert df.loc["C", "V"] == pytest.approx(0.6008, abs=5e-4)

    def test_value_with_monte_carlo(self, tmp_path):
        cfg = make_cfg(tmp_path, sim={"n_paths": 200, "dt": 0.01, "batch_size": 100})
        cmd_value(cfg, monte_carlo=True)
        mc = pd.read_csv(tmp_path / "value_mc.csv")
        assert list(mc["regime"]) == ["R", "E", "C", "F"]
        assert (mc["n_paths"] == 200).all()

    def test_efficiency_sweep(self, tmp_path):
        cfg = make_cfg(tmp_path, sweep={"kind": "n", "values": [1, 10, 100], "regimes": ["R", "C"]})
        cmd_efficiency_sweep(cfg)
        df = pd.read_csv(tmp_path / "efficiency_n.csv")
        assert set(df["start"]) == {"unknown", "known"}
        known = df[(df["start"] == "known") & (df["regime"] == "C")]["efficiency_percent"].to_numpy()
        unknown = df[(df["start"] == "unknown") & (df["regime"] == "C")]["efficiency_percent"].to_numpy()
        assert (known >= unknown).all()


class TestSimulate:
    def test_reproducible_panels(self, tmp_path):
        schedule = {"n_dates": 6, "gamma": 0.04}
        cmd_simulate(make_cfg(tmp_path / "a", schedule=schedule))
        cmd_simulate(make_cfg(tmp_path / "b", schedule=schedule))
        for name in ("simulate_unknown.csv", "simulate_known.csv", "expert_views_known.csv"):
            assert read(tmp_path / "a" / name) == read(tmp_path / "b" / name)

    def test_known_start_panel(self, tmp_path):
        cmd_simulate(make_cfg(tmp_path, schedule={"n_dates": 6, "gamma": 0.04}))
        known = pd.read_csv(tmp_path / "simulate_known.csv")
        assert known["gamma_R"].iloc[0] == 0
        assert known["drift"].iloc[0] == pytest.approx(0.05)
        cum = known["cumulative_drift"].to_numpy()
        assert cum[0] == 0
        assert cum[1] == pytest.approx(0.05 * 1e-3, rel=1e-5)
        views = pd.read_csv(tmp_path / "expert_views_known.csv")
        assert len(views) == 6
        with open(tmp_path / METADATA_NAME, encoding="utf-8") as f:
            assert 0 < json.load(f)["snap_error"] <= 5e-4 + 1e-15


class TestValidate:
    def test_clean_run_passes(self, tmp_path):
        paths, passed = cmd_validate(make_cfg(tmp_path), include_monte_carlo=False)
        assert passed
        with open(paths[0], encoding="utf-8") as f:
            report = json.load(f)
        names = {c["name"] for c in report["checks"]}
        assert {"variance_dominance", "update_contraction", "merton_value"} <= names

    def test_broken_update_is_caught(self, tmp_path):
        paths, passed = cmd_validate(make_cfg(tmp_path), variance_update=lambda g, G: 2.0 * g, include_monte_carlo=False)
        assert not passed
        with open(paths[0], encoding="utf-8") as f:
            report = json.load(f)
        failed = {c["name"] for c in report["checks"] if not c["passed"]}
        assert {"variance_dominance", "update_contraction"} <= failed

    def test_configured_market_reaches_monte_carlo_checks(self, tmp_path):
        cfg = make_cfg(
            tmp_path,
            model={"alpha": 2.0, "beta": 0.5, "sigma": 0.3},
            schedule={"n_dates": 4, "gamma": 0.5},
            sim={"n_paths": 200, "dt": 0.01, "batch_size": 100},
        )
        paths, _ = cmd_validate(cfg)
        with open(paths[0], encoding="utf-8") as f:
            checks = {c["name"]: c for c in json.load(f)["checks"]}
        closed = float(checks["mc_value_F"]["detail"].split()[3])
        assert closed == pytest.approx(value("F", 1.0, cfg.model_params()), abs=1e-5)
        moments = [c for name, c in checks.items() if name.startswith("filter_second_moment_")]
        assert {name.split("_")[3] for name in checks if name.startswith("filter_second_moment_")} == set("RECF")
        assert all(c["tolerance"] == 3.0 for c in moments)


class TestCli:
    def test_bad_model_exits_with_reason(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("model:\n  alpha: 0.0\n", encoding="utf-8")
        args = base_parser("test").parse_args(["--config", str(path)])
        with pytest.raises(SystemExit, match=r"\[ERR\] alpha_must_be_positive"):
            config_from_args(args)
