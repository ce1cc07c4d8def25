import csv
import json
import subprocess
import sys
from pathlib import Path

import pytest

from sghmc import cli

# small but complete runs of each subcommand
SMALL = {
    "quantile": ["--dist", "L(0,1)", "--q", "0.95", "--iters", "3000", "--seeds", "2"],
    "quadratic": ["--iters", "2000", "--seeds", "2"],
    "rate": ["--chains", "20", "--ref-chains", "4", "--horizon", "5", "--ref-burn", "5", "--n-boot", "10"],
    "certify": ["--samples", "2000", "--pairs", "2"],
    "transfer": ["--samples", "300", "--pre-iters", "40", "--iters", "40", "--eval-every", "20", "--width", "6"],
    "hedge": ["--steps", "2", "--samples-per-step", "256", "--n-test", "100", "--K", "3"],
}


def run(tmp_path: Path, *args) -> tuple[int, Path]:
    out = tmp_path / "out"
    return cli.main([*args, "--out", str(out)]), out


def csv_bodies(out: Path) -> dict:
    return {p.relative_to(out).as_posix(): p.read_bytes() for p in sorted(out.rglob("*.csv"))}


class TestSubcommands:
    @pytest.mark.parametrize("cmd", sorted(SMALL))
    def test_rerun_is_byte_identical(self, tmp_path, cmd):
        code_a, a = run(tmp_path / "a", cmd, *SMALL[cmd])
        code_b, b = run(tmp_path / "b", cmd, *SMALL[cmd])
        assert code_a == code_b == 0
        bodies = csv_bodies(a)
        assert bodies and bodies == csv_bodies(b)
        for name in ("config.json", "summary.json"):
            assert (a / name).exists()

    def test_config_echo_reproduces_run(self, tmp_path):
        _, a = run(tmp_path / "a", "quantile", *SMALL["quantile"])
        code, b = run(tmp_path / "b", "quantile", "--config", str(a / "config.json"))
        assert code == 0
        assert csv_bodies(a) == csv_bodies(b)

    def test_zero_iterations(self, tmp_path):
        code, out = run(tmp_path, "quantile", "--dist", "G(0,1)", "--iters", "0", "--seeds", "1")
        assert code == 0
        traj = list(csv.DictReader(open(out / "traj_G_0_1__q0.95_sghmc_seed0.csv")))
        assert [r["iteration"] for r in traj] == ["0"]

    def test_algo_switch(self, tmp_path):
        _, a = run(tmp_path / "a", "quantile", "--dist", "L(0,1)", "--iters", "500", "--seeds", "1", "--algo", "sgld")
        rows = list(csv.DictReader(open(a / "table.csv")))
        assert [r["algo"] for r in rows] == ["sgld"]

    def test_defaults_are_benchmark_settings(self):
        d = cli.DEFAULTS["quantile"]
        assert (d["eta"], d["gamma"], d["beta"], d["lambda_r"]) == (1e-3, 0.5, 1e10, 1e-5)
        assert d["epsilon"] == 1e-4

    def test_certify_reports_eta_max(self, tmp_path):
        _, out = run(tmp_path, "certify", *SMALL["certify"])
        summary = json.loads((out / "summary.json").read_text())
        assert 0 < summary["result"]["constants"]["eta_max"] < 1e-3
        assert any("eta_max" in w for w in summary["warnings"])

    def test_floats_round_trip(self, tmp_path):
        _, out = run(tmp_path, "quantile", *SMALL["quantile"])
        for row in csv.DictReader(open(out / "table.csv")):
            for key in ("estimate", "mse", "true_quantile"):
                assert repr(float(row[key])) == row[key]

    def test_config_file_metadata(self, tmp_path):
        _, out = run(tmp_path, "quadratic", "--iters", "10")
        cfg = json.loads((out / "config.json").read_text())
        assert cfg["schema_version"] == cli.SCHEMA_VERSION
        assert len(cfg["build_id"]) == 40
        assert cfg["params"]["iters"] == 10
        summary = json.loads((out / "summary.json").read_text())
        assert summary["wall_time_s"] >= 0 and "started_utc" in summary


class TestPrecedence:
    def test_flags_beat_file_beat_defaults(self, tmp_path):
        f = tmp_path / "c.json"
        f.write_text(json.dumps({"iters": 50, "seeds": 3, "gamma": 0.7}))
        ns = cli.make_parser().parse_args(["quadratic", "--out", "x", "--config", str(f), "--iters", "20"])
        cfg = cli.resolve("quadratic", ns)
        assert cfg["iters"] == 20
        assert cfg["seeds"] == 3
        assert cfg["gamma"] == 0.7
        assert cfg["beta"] == cli.DEFAULTS["quadratic"]["beta"]

    def test_unknown_key(self, tmp_path):
        f = tmp_path / "c.json"
        f.write_text(json.dumps({"nonsense": 1}))
        code, _ = run(tmp_path, "quadratic", "--config", str(f))
        assert code == 2


class TestExitCodes:
    @pytest.mark.parametrize("args", [
        ["quantile", "--eta", "-1"],
        ["quantile", "--dist", "Q(0,1)"],
        ["quantile", "--q", "1.5", "--dist", "L(0,1)"],
        ["quadratic", "--iters", "-5"],
        ["hedge", "--steps", "-1"],
    ])
    def test_config_errors(self, tmp_path, args):
        code, _ = run(tmp_path, *args)
        assert code == 2

    def test_divergence(self, tmp_path):
        code, _ = run(tmp_path, "quadratic", "--a", "1e200", "--eta", "0.5", "--iters", "100", "--beta", "1")
        assert code == 3

    def test_argparse_error_is_config_error(self):
        with pytest.raises(SystemExit) as ei:
            cli.main(["quantile", "--out", "x", "--algo", "adam"])
        assert ei.value.code == 2

    def test_module_entry_point(self, tmp_path):
        r = subprocess.run([sys.executable, "-m", "sghmc", "quantile", "--out", str(tmp_path / "o"),
                            "--eta", "0"], capture_output=True, text=True)
        assert r.returncode == 2
        assert "eta" in r.stderr


class TestHelp:
    @pytest.mark.parametrize("cmd", sorted(SMALL))
    def test_documents_csv_columns(self, cmd, capsys):
        with pytest.raises(SystemExit):
            cli.main([cmd, "--help"])
        out = capsys.readouterr().out
        assert "CSV columns" in out
        for flag in ("--eta", "--gamma", "--beta", "--lambda-r", "--iters", "--seeds", "--seed-base", "--algo",
                     "--out", "--stride", "--batch"):
            assert flag in out
