"""Command-line harness: every subcommand, exit codes, artifacts, and
config-file handling."""

import json

import pytest

from ccxtrust import cli, protocol


def run(argv):
    return cli.main(argv)


# ---------------------------------------------------------------------------
# init / attest / independent
# ---------------------------------------------------------------------------

def test_init_writes_trace_and_summary(tmp_path, capsys):
    out = tmp_path / "init"
    assert run(["init", "--seed", "11", "--nodes", "2",
                "--out", str(out)]) == 0
    printed = capsys.readouterr().out
    assert "initialized 2 node(s)" in printed
    trace = protocol.ProtocolTrace.read(out / "trace.log")
    assert len(trace.events) > 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["nodes"] == 2
    assert summary["trace_digest"] == trace.digest().hex()
    assert set(summary["theorems"]) == {
        "cert-provenance", "token-provenance", "attest-order"}
    assert all(" pass " in line for line in summary["theorems"].values())


def test_attest_writes_token_and_passes_checks(tmp_path, capsys):
    out = tmp_path / "attest"
    assert run(["attest", "--seed", "11", "--direction", "tee-tpm",
                "--out", str(out)]) == 0
    token_text = (out / "token.txt").read_text().strip()
    assert token_text.count(".") >= 2  # one compact token per line
    summary = json.loads((out / "summary.json").read_text())
    assert summary["direction"] == "tee-tpm"
    assert "attested" in capsys.readouterr().out


def test_independent_issues_two_tokens(tmp_path, capsys):
    out = tmp_path / "indep"
    assert run(["independent", "--seed", "11", "--out", str(out)]) == 0
    tokens = [line for line in (out / "token.txt").read_text().splitlines()
              if line.strip()]
    assert len(tokens) == 2
    assert "2 tokens" in capsys.readouterr().out


def test_same_seed_same_digest(tmp_path):
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    run(["init", "--seed", "21", "--out", str(out_a)])
    run(["init", "--seed", "21", "--out", str(out_b)])
    digest_a = json.loads((out_a / "summary.json").read_text())["trace_digest"]
    digest_b = json.loads((out_b / "summary.json").read_text())["trace_digest"]
    assert digest_a == digest_b


# ---------------------------------------------------------------------------
# attack
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("name", ["replay", "stale-token", "seed-rollback",
                                  "image-forge"])
def test_live_attacks_defended(tmp_path, name):
    assert run(["attack", "--name", name, "--seed", "31",
                "--out", str(tmp_path / name)]) == 0


@pytest.mark.parametrize("name", ["spoof-id", "token-pairing"])
def test_two_node_attacks_defended(tmp_path, name):
    assert run(["attack", "--name", name, "--seed", "31", "--nodes", "2",
                "--out", str(tmp_path / name)]) == 0


@pytest.mark.parametrize("name,theorem", [
    ("forged-cert", "cert-provenance"),
    ("forged-token", "token-provenance"),
    ("reordered-sign", "attest-order"),
])
def test_fault_traces_trip_their_theorem(tmp_path, capsys, name, theorem):
    out = tmp_path / name
    assert run(["attack", "--name", name, "--seed", "31",
                "--out", str(out)]) == 0
    printed = capsys.readouterr().out
    assert f"violated {theorem}" in printed
    assert (out / "trace.log").exists()


def test_unknown_attack_name_rejected(tmp_path):
    with pytest.raises(SystemExit):
        run(["attack", "--name", "nonsense", "--out", str(tmp_path)])


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------

def test_bench_writes_json(tmp_path, capsys):
    out = tmp_path / "bench"
    assert run(["bench", "--seed", "41", "--nodes", "4",
                "--concurrency", "2", "--out", str(out)]) == 0
    bench = json.loads((out / "bench.json").read_text())
    assert bench["successes"] == 4
    assert bench["unique_token_serials"] == 4
    assert "enroll" in capsys.readouterr().out


# ---------------------------------------------------------------------------
# check-trace
# ---------------------------------------------------------------------------

def test_check_trace_pass_and_fail(tmp_path, capsys):
    out = tmp_path / "run"
    run(["attest", "--seed", "51", "--out", str(out)])
    assert run(["check-trace", str(out / "trace.log")]) == 0
    assert "cert-provenance pass" in capsys.readouterr().out

    fault = tmp_path / "fault"
    run(["attack", "--name", "forged-token", "--seed", "51",
         "--out", str(fault)])
    capsys.readouterr()
    assert run(["check-trace", str(fault / "trace.log")]) == 1
    assert "token-provenance FAIL" in capsys.readouterr().out


# ---------------------------------------------------------------------------
# config file
# ---------------------------------------------------------------------------

def test_config_file_fills_defaults_flags_win(tmp_path):
    config = tmp_path / "run.conf"
    config.write_text("# cluster defaults\nseed = 99\nnodes = 3\n")
    out = tmp_path / "cfg"
    assert run(["init", "--config", str(config), "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["seed"] == 99
    assert summary["nodes"] == 3

    out2 = tmp_path / "cfg2"
    assert run(["init", "--config", str(config), "--nodes", "1",
                "--out", str(out2)]) == 0
    summary2 = json.loads((out2 / "summary.json").read_text())
    assert summary2["seed"] == 99
    assert summary2["nodes"] == 1  # explicit flag beats the file
