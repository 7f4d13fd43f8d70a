"""Command-line surface: exit codes, reproducibility, report contents."""

import json
import math
import subprocess
import sys

import pytest


CONFIG = """\
# small tagged run with every optional stream on
beta = 1
offspring = 2:1
rho = 0
x0 = 1
frame = standard
barrier_mode = tag
replicas = 80
master_seed = 4242
checkpoints = 1, 2
segment_dt = 0.25
upper_line_z = 4
s_cuts = 0.5, 1
phis = canonical
"""


@pytest.fixture(scope="module")
def sim(tmp_path_factory):
    """One simulated dataset shared by the read-only CLI tests."""
    from bbmlab import cli

    root = tmp_path_factory.mktemp("cli")
    cfg = root / "run.cfg"
    cfg.write_text(CONFIG)
    out = root / "dataset.jsonl"
    code = cli.main(["simulate", str(cfg), "--output", str(out)])
    assert code == 0
    return root, cfg, out


def test_simulate_reports_and_reruns_identically(sim, run_cli, tmp_path):
    root, cfg, out = sim
    out2 = tmp_path / "again.jsonl"
    code, stdout, _ = run_cli("simulate", cfg, "--output", out2,
                              "--threads", "2")
    assert code == 0
    assert "80 replicas x 2 checkpoints" in stdout
    # independent of output path and thread count, byte for byte
    assert out2.read_bytes() == out.read_bytes()


def test_simulate_header_identity(sim):
    _, _, out = sim
    header = json.loads(out.read_text().splitlines()[0])
    assert header["kind"] == "header"
    assert header["tool_version"]
    assert len(header["config_hash"]) == 16
    assert header["master_seed"] == 4242
    assert header["config"]["checkpoints"] == "1,2"
    assert "output" not in header["config"]
    assert "threads" not in header["config"]


def test_simulate_summary_output(sim, run_cli, tmp_path):
    _, cfg, out = sim
    table = tmp_path / "summary.csv"
    code, _, _ = run_cli("simulate", cfg, "--output", tmp_path / "d.jsonl",
                         "--summary-output", table)
    assert code == 0
    header = json.loads(out.read_text().splitlines()[0])
    lines = table.read_text().splitlines()
    assert f"# config_hash={header['config_hash']}" in lines


def test_simulate_bad_config_exits_2(run_cli, tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("checkpoints = 1\nbetta = 2\n")
    code, _, err = run_cli("simulate", cfg)
    assert code == 2
    assert "unknown key 'betta'" in err


def test_simulate_cap_overflow_exits_3(run_cli, tmp_path):
    cfg = tmp_path / "cap.cfg"
    cfg.write_text("checkpoints = 4\nreplicas = 20\nmaster_seed = 7\n"
                   "population_cap = 4\nsegment_dt = 0.5\n")
    code, _, err = run_cli("simulate", cfg, "--output", tmp_path / "d.jsonl")
    assert code == 3
    assert "population cap" in err


def test_missing_input_exits_3(run_cli, tmp_path):
    code, _, err = run_cli("analyze", tmp_path / "nope.jsonl")
    assert code == 3
    assert "error:" in err


def test_analyze_default_report(sim, run_cli, tmp_path):
    _, _, out = sim
    rep = tmp_path / "rep.json"
    code, stdout, _ = run_cli("analyze", out, "--report", rep)
    assert code == 0
    assert "wrote analysis report" in stdout
    rec = json.loads(rep.read_text())
    assert rec["kind"] == "analysis"
    assert rec["n_replicas"] == 80
    assert [r["t"] for r in rec["survival"]] == [1.0, 2.0]
    for r in rec["survival"]:
        assert set(r) == {"t", "value", "se", "n"}
        assert r["n"] == 80
    assert "alive" in rec["means"]
    assert "W_tilde" in rec["means"]


def test_analyze_rerun_is_byte_identical(sim, run_cli, tmp_path):
    _, _, out = sim
    a = tmp_path / "a.json"
    b = tmp_path / "b.json"
    for rep in (a, b):
        code, _, _ = run_cli("analyze", out, "--report", rep,
                             "--do", "survival", "--do", "laplace")
        assert code == 0
    assert a.read_bytes() == b.read_bytes()


def test_analyze_tokens(sim, run_cli, tmp_path):
    _, _, out = sim
    rep = tmp_path / "rep.json"
    code, _, _ = run_cli("analyze", out, "--report", rep,
                         "--do", "growth:1:2", "--do", "late_touch:2:0.5:3",
                         "--do", "laplace")
    assert code == 0
    rec = json.loads(rep.read_text())
    assert rec["growth"]["t0"] == 1.0 and rec["growth"]["t1"] == 2.0
    lt = rec["late_touch"][0]
    assert (lt["t"], lt["s"], lt["window"]) == (2.0, 0.5, 3.0)
    assert 0.0 <= lt["value"] <= 1.0
    assert set(rec["laplace"]) == {"step:0", "tent:1:1", "plateau:-1:0.5"}


def test_analyze_bad_token_exits_2(sim, run_cli, tmp_path):
    _, _, out = sim
    code, _, err = run_cli("analyze", out, "--report", tmp_path / "r.json",
                           "--do", "growth:1")
    assert code == 2
    assert "bad analysis token" in err


def test_oracle_frozen_values(run_cli):
    code, out, _ = run_cli("oracle", "lambda_star")
    assert code == 0
    assert float(out) == pytest.approx(math.sqrt(2.0), rel=1e-15)

    code, out, _ = run_cli("oracle", "hit_prob_line", "y=1", "mu=1")
    assert code == 0
    assert out.strip() == "0.8646647167633873"

    code, out, _ = run_cli("oracle", "ever_hit_line", "y=1", "mu=1")
    assert code == 0
    assert float(out) == pytest.approx(math.exp(-2.0), rel=1e-15)

    code, out, _ = run_cli("oracle", "centering", "t=1")
    assert code == 0
    assert float(out) == pytest.approx(math.sqrt(2.0), rel=1e-15)

    code, out, _ = run_cli("oracle", "hit_time_mean", "x=2", "mu=0.5")
    assert code == 0
    assert float(out) == pytest.approx(4.0, rel=1e-15)


def test_oracle_wave_to_stdout(run_cli):
    code, out, _ = run_cli("oracle", "wave", "rho=0", "x_max=20")
    assert code == 0
    lines = out.splitlines()
    assert any(ln.startswith("# residual=") for ln in lines)
    assert "x,g" in lines


def test_oracle_errors(run_cli):
    code, _, err = run_cli("oracle", "no_such_thing")
    assert code == 2
    assert "catalog:" in err and "lambda_star" in err

    code, _, err = run_cli("oracle", "hit_prob_line", "y=1")
    assert code == 2
    assert "missing oracle parameter" in err

    code, _, err = run_cli("oracle", "hit_prob_line", "y=1", "mu=1", "q=2")
    assert code == 2
    assert "unknown oracle parameter" in err

    # domain violations from the oracle itself surface as config errors
    code, _, err = run_cli("oracle", "abk_tail_bound", "y=0.5", "t=9")
    assert code == 2


def test_fit_report(sim, run_cli, tmp_path):
    _, _, out = sim
    rep = tmp_path / "fit.json"
    code, stdout, _ = run_cli("fit", out, "--t", "2", "--proxy-time", "1",
                              "--synthetic-check", "--out", rep)
    assert code == 0
    assert "c_hat=" in stdout
    rec = json.loads(rep.read_text())
    assert rec["kind"] == "fit"
    assert rec["t"] == 2.0 and rec["proxy_time"] == 1.0
    assert rec["proxy_column"] == "Z_tilde"
    assert rec["c_hat"] > 0.0
    assert 0.0 <= rec["ks"] <= 1.0
    assert rec["n"] + rec["n_dropped"] == 80
    assert len(rec["empirical"]["z"]) == len(rec["fitted"]["p"])
    assert rec["synthetic_check"]["c_recovered"] > 0.0


def test_fit_missing_column_exits_2(sim, run_cli, tmp_path):
    _, _, out = sim
    code, _, err = run_cli("fit", out, "--proxy-column", "Z_cut_9",
                           "--out", tmp_path / "f.json")
    assert code == 2
    assert "available columns" in err


@pytest.fixture(scope="module")
def decoration_file(tmp_path_factory):
    from bbmlab import cli

    out = tmp_path_factory.mktemp("dec") / "dec.json"
    code = cli.main(["decorate", "--t", "1.5", "--samples", "6",
                     "--seed", "99", "--out", str(out)])
    assert code == 0
    return out


def test_decorate_report(decoration_file, run_cli, tmp_path):
    rec = json.loads(decoration_file.read_text())
    assert rec["kind"] == "decoration"
    assert rec["n"] == 6
    assert 0.0 < rec["acceptance"] <= 1.0
    for cloud in rec["atoms"]:
        assert cloud[0] == 0.0
        assert all(a <= 0.0 for a in cloud)
    assert sum(rec["histogram"]["counts"]) == sum(len(c) for c in rec["atoms"])
    # deterministic rerun
    again = tmp_path / "again.json"
    code, _, _ = run_cli("decorate", "--t", "1.5", "--samples", "6",
                         "--seed", "99", "--out", again)
    assert code == 0
    assert again.read_bytes() == decoration_file.read_bytes()


def test_dppp_plain(run_cli, tmp_path):
    rep = tmp_path / "dppp.json"
    code, stdout, _ = run_cli("dppp", "--z-value", "2", "--c", "0.8",
                              "--z-min", "-1", "--n", "4000",
                              "--seed", "11", "--out", rep)
    assert code == 0
    rec = json.loads(rep.read_text())
    assert rec["kind"] == "dppp"
    assert len(rec["maxima"]) == 4000
    assert len(rec["counts"]) == 4000
    assert rec["n_empty"] == sum(1 for c in rec["counts"] if c == 0)
    mass = 0.8 * 2 * math.exp(math.sqrt(2.0))
    mean_count = sum(rec["counts"]) / 4000
    assert mean_count == pytest.approx(mass, rel=0.05)
    assert "realizations" not in rec


def test_dppp_decorated(decoration_file, run_cli, tmp_path):
    rep = tmp_path / "dppp.json"
    code, _, _ = run_cli("dppp", "--z-value", "1.5", "--c", "0.8",
                         "--z-min", "-2", "--n", "200", "--seed", "12",
                         "--decorations", decoration_file, "--out", rep)
    assert code == 0
    rec = json.loads(rep.read_text())
    assert len(rec["realizations"]) == 200
    for atoms, mx, cnt in zip(rec["realizations"], rec["maxima"],
                              rec["counts"]):
        if cnt == 0:
            assert atoms == []
        else:
            assert max(atoms) == mx


def test_dppp_decoration_guard(decoration_file, run_cli, tmp_path):
    code, _, err = run_cli("dppp", "--z-value", "1", "--c", "0.5",
                           "--z-min", "0", "--n", "5000", "--seed", "1",
                           "--decorations", decoration_file,
                           "--out", tmp_path / "x.json")
    assert code == 2
    assert "n <= 1000" in err


def test_dppp_rejects_non_decoration_file(run_cli, tmp_path):
    bogus = tmp_path / "bogus.json"
    bogus.write_text(json.dumps({"kind": "report", "schema_version": 1}))
    code, _, err = run_cli("dppp", "--z-value", "1", "--c", "0.5",
                           "--z-min", "0", "--n", "10", "--seed", "1",
                           "--decorations", bogus,
                           "--out", tmp_path / "x.json")
    assert code == 2
    assert "not a decoration report" in err


def test_entry_point_subprocess(tmp_path):
    # one true end-to-end pass through the installed console script path
    proc = subprocess.run(
        [sys.executable, "-m", "bbmlab.cli", "oracle", "lambda_star",
         "beta=2"],
        capture_output=True, text=True)
    assert proc.returncode == 0
    assert float(proc.stdout) == pytest.approx(2.0, rel=1e-15)
