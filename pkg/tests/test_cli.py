import json
import subprocess
import sys

import numpy as np
import pytest

from otar.cli import build_parser, main
from otar.storage import read_curve_series, read_fit, read_map_series


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_simulate_then_fit_noiseless(tmp_path, capsys):
    stem = str(tmp_path / "chain")
    code, out, _ = run(capsys, "simulate", "--alpha", "0.5", "--s", "zeta:-2", "--steps", "201",
                       "--burn-in", "0", "--noise", "none", "--out", stem)
    assert code == 0 and json.loads(out)["n"] == 201
    code, out, _ = run(capsys, "fit", "--input", stem + ".json", "--out", str(tmp_path / "fit"))
    assert code == 0
    res = read_fit(tmp_path / "fit.json")
    assert abs(res.alpha_hat - 0.5) <= 1e-3


def test_simulate_protocol_and_determinism(tmp_path, capsys):
    args = ["simulate", "--alpha", "0.5", "--s", "zeta:-2", "--steps", "300", "--burn-in", "100",
            "--seed", "7", "--m", "200"]
    assert run(capsys, *args, "--out", str(tmp_path / "a"))[0] == 0
    assert run(capsys, *args, "--out", str(tmp_path / "b"))[0] == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert len(read_map_series(tmp_path / "a.json")) == 200


def test_simulate_alpha_zero_noiseless_is_constant(tmp_path, capsys):
    run(capsys, "simulate", "--alpha", "0", "--s", "zeta:-4", "--noise", "none", "--m", "100",
        "--steps", "10", "--burn-in", "2", "--out", str(tmp_path / "c"))
    v = read_map_series(tmp_path / "c.json").values
    assert np.allclose(v, v[0], atol=1e-15)


def test_seed_env_override(tmp_path, capsys, monkeypatch):
    base = ["simulate", "--alpha", "0.3", "--m", "50", "--steps", "20", "--burn-in", "0"]
    run(capsys, *base, "--seed", "9", "--out", str(tmp_path / "a"))
    monkeypatch.setenv("WAR_SEED", "9")
    run(capsys, *base, "--seed", "1", "--out", str(tmp_path / "b"))
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    monkeypatch.setenv("WAR_SEED", "x")
    code, _, err = run(capsys, *base, "--out", str(tmp_path / "c"))
    assert code == 2 and json.loads(err)["error"] == "ConfigError"


def test_error_exit_codes(tmp_path, capsys):
    code, _, err = run(capsys, "simulate", "--alpha", "1.5", "--out", str(tmp_path / "x"))
    assert code == 2 and json.loads(err)["exit_code"] == 2
    code, _, err = run(capsys, "simulate", "--alpha", "0.5", "--out", "x", "--bogus")
    assert code == 2 and json.loads(err)["error"] == "UsageError"
    code, _, err = run(capsys, "fit", "--input", str(tmp_path / "none.json"), "--out", "y")
    assert code == 2
    # a steep S with strongly negative alpha about S leaves the set of increasing maps
    code, _, err = run(capsys, "simulate", "--alpha", "-0.95", "--s", "steps", "--system",
                       "contract-about", "--m", "100", "--steps", "200", "--burn-in", "0",
                       "--out", str(tmp_path / "z"))
    assert code in (0, 3)
    if code == 3:
        assert json.loads(err)["error"] == "DegenerateMapError"


def test_numeric_error_exit_code(tmp_path, capsys, monkeypatch):
    from otar import cli
    from otar.errors import DegenerateMapError

    def boom(args):
        raise DegenerateMapError("flat segment")

    monkeypatch.setattr(cli, "cmd_check", boom)
    code, _, err = run(capsys, "check", "--alpha", "0.1")
    assert code == 3 and json.loads(err)["error"] == "DegenerateMapError"


def test_help_lists_flags(capsys):
    parser = build_parser()
    text = parser.format_help()
    for name in ("simulate", "fit", "transform", "ingest", "check", "grid", "rate", "compare"):
        assert name in text
    with pytest.raises(SystemExit) as exc:
        main(["simulate", "--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    for flag in ("--alpha", "--s", "--system", "--noise", "--seed", "--steps", "--burn-in", "--out"):
        assert flag in out


def test_distributions_transform_and_fit_dispatch(tmp_path, capsys):
    stem = str(tmp_path / "d")
    code, out, _ = run(capsys, "simulate", "--alpha", "0.4", "--s", "zeta:-2", "--m", "100",
                       "--steps", "60", "--burn-in", "10", "--distributions", "uniform-quantile",
                       "--out", stem)
    assert code == 0
    curves = read_curve_series(stem + "_curves.json")
    assert len(curves) == 50
    code, out, _ = run(capsys, "transform", "--input", stem + "_curves.json", "--model",
                       "increment", "--out", str(tmp_path / "inc"))
    assert code == 0 and json.loads(out)["n"] == 49
    code, out, _ = run(capsys, "fit", "--input", stem + "_curves.json", "--model", "increment",
                       "--alpha-step", "0.1", "--out", str(tmp_path / "fi"))
    assert code == 0 and json.loads(out)["n_used"] == 48
    code, _, err = run(capsys, "fit", "--input", stem + "_curves.json", "--out", str(tmp_path / "f"))
    assert code == 2
    code, out, _ = run(capsys, "fit", "--input", stem + ".json", "--system", "contract-about",
                       "--alpha-step", "0.1", "--out", str(tmp_path / "fa"))
    assert code == 0 and json.loads(out)["system"] == "contract-about"
    code, out, _ = run(capsys, "transform", "--input", stem + ".json", "--model",
                       "generalized-quantile", "--reference", "zeta:3", "--out", str(tmp_path / "g"))
    assert code == 0


def test_ingest_and_compare(tmp_path, capsys):
    rng = np.random.default_rng(0)
    lines = ["DATE,TMIN"]
    for year in range(2000, 2008):
        for day in range(1, 29):
            for month in (6, 7, 8, 9, 12):
                lines.append(f"{year}-{month:02d}-{day:02d},{rng.normal(15, 3):.1f}")
    lines.append("2001-07-30,")
    (tmp_path / "st.csv").write_text("\n".join(lines) + "\n")
    code, out, _ = run(capsys, "ingest", "--input", str(tmp_path / "st.csv"), "--value-col", "TMIN",
                       "--date-col", "DATE", "--months", "6,7,8,9", "--years", "2000-2007",
                       "--m", "100", "--out", str(tmp_path / "curves"))
    info = json.loads(out)
    assert code == 0 and info["periods"] == 8 and info["n_dropped"] == 1
    code, out, _ = run(capsys, "compare", "--input", str(tmp_path / "curves.json"),
                       "--alpha-step", "0.1")
    assert code == 0 and "verdict" in json.loads(out)


def test_check_grid_rate_sweep(tmp_path, capsys):
    code, out, _ = run(capsys, "check", "--alpha", "0.4", "--s", "id")
    assert code == 0 and json.loads(out)["satisfied"] is True
    code, out, _ = run(capsys, "--threads", "2", "grid", "--alphas", "0,0.5", "--s-names",
                       "zeta:-2,kinked", "--m", "50", "--steps", "40", "--burn-in", "10",
                       "--replicates", "1", "--alpha-step", "0.1", "--out", str(tmp_path / "g"))
    assert code == 0 and len(json.loads(out)["cells"]) == 4
    assert (tmp_path / "g.csv").read_text().startswith("cell,")
    code, out, _ = run(capsys, "rate", "--alpha", "0.3", "--s", "zeta:-2", "--m", "50",
                       "--ns", "20,40,80", "--replicates", "2", "--alpha-step", "0.1",
                       "--out", str(tmp_path / "r"))
    assert code == 0 and len(json.loads(out)["alpha_rmse"]) == 3
    code, out, _ = run(capsys, "sweep", "--pairs", "20", "--m", "100")
    assert code == 0 and json.loads(out)["all_satisfied"] is True


def test_map_file_and_noise_file(tmp_path, capsys):
    from otar.noise import NoiseSpec, zeta_map
    zeta_map(-2, 100).to_csv(tmp_path / "s.csv")
    NoiseSpec(k_max=2).to_json(tmp_path / "noise.json")
    code, _, _ = run(capsys, "simulate", "--alpha", "0.2", "--s", str(tmp_path / "s.csv"),
                     "--m", "100", "--noise", str(tmp_path / "noise.json"), "--steps", "20",
                     "--burn-in", "0", "--out", str(tmp_path / "o"))
    assert code == 0
    code, _, err = run(capsys, "simulate", "--alpha", "0.2", "--s", str(tmp_path / "s.csv"),
                       "--out", str(tmp_path / "o2"))
    assert code == 2  # grid size mismatch with the default M


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "otar.cli", "check", "--alpha", "0.9",
                           "--s", "zeta:-4"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["satisfied"] is False
