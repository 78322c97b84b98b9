import json

import pytest

from fbcap.cli import CSV_HEADER, main


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture
def cfg_dir(tmp_path):
    (tmp_path / "awgn.json").write_text(json.dumps({"a": [], "c": [], "sigma_w2": 1.0}))
    (tmp_path / "arma.json").write_text(json.dumps({"a": [0.5], "c": [0.95], "sigma_w2": 1.0}))
    (tmp_path / "ar1.json").write_text(json.dumps({"a": [0.0], "c": [0.95], "sigma_w2": 1.0}))
    return tmp_path


def test_first_order(capsys):
    code, out, _ = run(capsys, "first-order", "--a", "0", "--c", "0.95", "--sigma-w2", "1", "--power", "1")
    assert code == 0
    doc = json.loads(out)
    assert doc["result"]["I_max_bits"] == pytest.approx(0.8646, abs=1e-4)
    assert doc["config"]["channel"] == {"a": [0.0], "c": [0.95], "sigma_w2": 1.0}
    assert doc["version"]


def test_butman(capsys):
    code, out, _ = run(capsys, "butman", "--c", "0.95", "--sigma-w2", "1", "--power", "1")
    doc = json.loads(out)
    assert code == 0 and doc["result"]["chi"] == pytest.approx(1.8209, abs=1e-4)


def test_waterfill_white(capsys, cfg_dir):
    code, out, _ = run(capsys, "waterfill", "--config", str(cfg_dir / "awgn.json"), "--n", "8", "--power", "1")
    assert code == 0
    assert json.loads(out)["result"]["rate_bits"] == pytest.approx(0.5, abs=1e-10)


def test_stationary(capsys, cfg_dir):
    code, out, _ = run(capsys, "stationary", "--config", str(cfg_dir / "arma.json"), "--power", "1")
    assert code == 0
    assert json.loads(out)["result"]["I_max_bits"] == pytest.approx(1.0944477, abs=1e-6)


def test_nblock_gamma_and_power(capsys, cfg_dir, tmp_path):
    out_file = tmp_path / "nb.json"
    code, _, _ = run(capsys, "nblock", "--config", str(cfg_dir / "awgn.json"), "--n", "3", "--power", "1",
                     "--solver", "trajectory", "-o", str(out_file))
    assert code == 0
    doc = json.loads(out_file.read_text())
    assert doc["result"]["gamma"] == pytest.approx(0.25, rel=1e-6)
    code, out, _ = run(capsys, "nblock", "--config", str(cfg_dir / "arma.json"), "--n", "2", "--gamma", "0.3")
    assert code == 0 and json.loads(out)["result"]["n"] == 2


def test_simulate(capsys, cfg_dir, tmp_path):
    pol = tmp_path / "pol.json"
    pol.write_text(json.dumps({"stationary": {"d": [1.8208900383850641], "e": 0.0}}))
    code, out, _ = run(capsys, "simulate", "--config", str(cfg_dir / "ar1.json"), "--policy", str(pol),
                       "--steps", "20000", "--seed", "1")
    assert code == 0
    assert json.loads(out)["result"]["empirical_rate_bits"] == pytest.approx(0.8646, abs=0.03)
    pol.write_text(json.dumps({"stages": [{"d": [0.0], "e": 1.0}]}))
    code, _, _ = run(capsys, "simulate", "--config", str(cfg_dir / "ar1.json"), "--policy", str(pol),
                     "--steps", "1000", "--seed", "1")
    assert code == 0


@pytest.mark.parametrize(
    "policy, field",
    [({"stages": [{"d": [0.0]}]}, "stages[0].e"), ({"stationary": {"d": 1, "e": 0}}, "stationary.d"), ({}, "stages")],
)
def test_bad_policy_names_field(capsys, cfg_dir, tmp_path, policy, field):
    pol = tmp_path / "pol.json"
    pol.write_text(json.dumps(policy))
    code, _, err = run(capsys, "simulate", "--config", str(cfg_dir / "ar1.json"), "--policy", str(pol),
                       "--steps", "1000", "--seed", "1")
    assert code == 2
    assert field in err


def test_config_errors(capsys, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"a": [0.1], "c": "x", "sigma_w2": 1}')
    code, _, err = run(capsys, "stationary", "--config", str(bad), "--power", "1")
    assert code == 2 and "'c'" in err
    bad.write_text("{not json")
    assert run(capsys, "stationary", "--config", str(bad), "--power", "1")[0] == 2
    assert run(capsys, "stationary", "--config", str(tmp_path / "missing.json"), "--power", "1")[0] == 2
    assert run(capsys, "first-order", "--a", "0", "--c", "1.5", "--sigma-w2", "1", "--power", "1")[0] == 2
    assert run(capsys, "first-order", "--a", "0", "--c", "0.5", "--sigma-w2", "1", "--power", "-1")[0] == 2
    assert run(capsys, "bogus")[0] == 2


def test_solver_failure_exit_code(capsys, cfg_dir):
    code, _, err = run(capsys, "stationary", "--config", str(cfg_dir / "arma.json"), "--power", "1", "--restarts", "0")
    assert code == 3
    assert "solver failure" in err


def test_sweep_csv(capsys, cfg_dir, tmp_path):
    spec = {
        "channel": {"a": [0.5], "c": [0.95], "sigma_w2": 1.0},
        "powers": [1.0],
        "solvers": [
            "stationary",
            "nblock(n=1,solver=trajectory)",
            "nblock(n=5,solver=trajectory)",
            "nblock(n=10,solver=trajectory)",
            {"name": "nblock", "n": 20, "solver": "trajectory"},
            "waterfill(n=20)",
        ],
    }
    path = tmp_path / "sweep.json"
    path.write_text(json.dumps(spec))
    code, out, _ = run(capsys, "sweep", "--spec", str(path))
    assert code == 0
    lines = out.strip().split("\n")
    assert lines[0] == ",".join(CSV_HEADER)
    rows = {ln.split(",")[2]: ln.split(",") for ln in lines[1:]}
    rates = [float(rows[f"nblock(n={n})"][3]) for n in (1, 5, 10, 20)]
    stat = float(rows["stationary"][3])
    assert rates == sorted(rates) and rates[-1] < stat
    assert rates[0] == pytest.approx(0.5, abs=1e-6)
    code2, out2, _ = run(capsys, "sweep", "--spec", str(path), "--jobs", "2")
    assert code2 == 0 and out2 == out


def test_sweep_snr_grid(capsys, tmp_path):
    spec = {"channel": {"a": [0.0], "c": [0.95], "sigma_w2": 2.0}, "snr_db": [0.0, 10.0], "solvers": ["butman", "first_order"]}
    path = tmp_path / "sweep.json"
    path.write_text(json.dumps(spec))
    code, out, _ = run(capsys, "sweep", "--spec", str(path))
    rows = [ln.split(",") for ln in out.strip().split("\n")[1:]]
    assert code == 0 and len(rows) == 4
    assert [float(r[0]) for r in rows] == [2.0, 2.0, 20.0, 20.0]
    assert float(rows[0][3]) == pytest.approx(float(rows[1][3]), abs=1e-9)


def test_sweep_bad_spec(capsys, tmp_path):
    path = tmp_path / "sweep.json"
    path.write_text(json.dumps({"channel": {"a": [], "c": [], "sigma_w2": 1}, "powers": [1], "solvers": ["magic"]}))
    code, _, err = run(capsys, "sweep", "--spec", str(path))
    assert code == 2 and "magic" in err
