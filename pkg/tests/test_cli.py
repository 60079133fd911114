import json

import pytest

from crowdrank.cli import EXIT_BACKEND, EXIT_CONFIG, EXIT_DIVERGED, EXIT_MISMATCH, EXIT_OK, main
from crowdrank.sim import equally_spaced_population


@pytest.fixture
def workspace(tmp_path):
    pop = equally_spaced_population(8, dimensions=("d1", "d2"))
    cfg = {
        "models": [p.model for p in pop[:7]],
        "dimensions": ["d1", "d2"],
        "question_count": 3,
        "backend": {"kind": "simulated", "seed": 1, "profiles": [p.to_dict() for p in pop]},
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return tmp_path, path


def run(capsys, *args):
    code = main(list(args))
    out = capsys.readouterr()
    return code, out.out, out.err


def _machine(out):
    return [json.loads(line) for line in out.splitlines()]


def test_rank_on_six_models(tmp_path, capsys):
    pop = equally_spaced_population(6)
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"models": [p.model for p in pop], "question_count": 2,
                               "backend": {"profiles": [p.to_dict() for p in pop]}}))
    code, out, _ = run(capsys, "rank", "--config", str(cfg), "--run-dir", str(tmp_path / "run"))
    assert code == EXIT_OK
    assert "15 pair comparisons" in out
    code, out, _ = run(capsys, "leaderboard", "--config", str(cfg), "--run-dir", str(tmp_path / "run"),
                       "--format", "machine")
    assert len(_machine(out)) == 6


def test_full_workflow(workspace, capsys):
    tmp, cfg = workspace
    common = ["--config", str(cfg), "--run-dir", str(tmp / "run")]
    code, out, _ = run(capsys, "rank", *common, "--format", "machine")
    assert code in (EXIT_OK, EXIT_DIVERGED)
    rows = _machine(out)
    assert list(rows[0]) == ["dimension", "rank", "model", "elo", "weight"]
    assert len(rows) == 14

    # a second invocation changes nothing
    votes = (tmp / "run" / "d1" / "votes.jsonl").read_bytes()
    code2, out2, _ = run(capsys, "rank", *common, "--format", "machine")
    assert (code2, out2) == (code, out)
    assert (tmp / "run" / "d1" / "votes.jsonl").read_bytes() == votes

    code, out, _ = run(capsys, "leaderboard", *common, "--dimensions", "d1,d2", "--format", "machine")
    board = _machine(out)
    assert list(board[0]) == ["model", "elo:d1", "elo:d2", "avg_rank"]
    ranks = [r["avg_rank"] for r in board]
    assert ranks == sorted(ranks)

    code, out, _ = run(capsys, "export-matrices", *common, "--out-dir", str(tmp / "mats"), "--format", "machine")
    assert code == EXIT_OK
    for r in _machine(out):
        assert r["compared_pair_distance"] < r["all_pair_distance"]
    assert (tmp / "mats" / "d1.winrate.tsv").exists() and (tmp / "mats" / "d2.counts.tsv").exists()

    assert run(capsys, "replay-verify", *common)[0] == EXIT_OK

    code, out, _ = run(capsys, "insert", *common, "--model", "m7", "--dimensions", "d1", "--format", "machine")
    assert code in (EXIT_OK, EXIT_DIVERGED)
    assert _machine(out)[0]["model"] == "m7"
    assert run(capsys, "insert", *common, "--model", "m7", "--dimensions", "d1")[0] != EXIT_OK
    assert run(capsys, "replay-verify", *common)[0] == EXIT_OK


def test_replay_verify_detects_tampering(workspace, capsys):
    tmp, cfg = workspace
    common = ["--config", str(cfg), "--run-dir", str(tmp / "run"), "--dimensions", "d1"]
    run(capsys, "rank", *common)
    log = tmp / "run" / "d1" / "votes.jsonl"
    lines = log.read_text().splitlines()
    flipped = []
    for line in lines:
        rec = json.loads(line)
        rec["verdict"] = {"A": "B", "B": "A", "TIE": "TIE"}[rec["verdict"]]
        flipped.append(json.dumps(rec))
    log.write_text("\n".join(flipped) + "\n")
    assert run(capsys, "replay-verify", *common)[0] == EXIT_MISMATCH


def test_select_questions(workspace, capsys):
    tmp, cfg = workspace
    pool = tmp / "pool.jsonl"
    pool.write_text("".join(json.dumps({"id": f"p{i}", "dimension": "d1", "text": f"t{i}"}) + "\n" for i in range(6)))
    code, out, _ = run(capsys, "select-questions", "--config", str(cfg), "--run-dir", str(tmp / "run"),
                       "--top-k", "4", "--pool", str(pool), "--output", str(tmp / "sel.jsonl"), "--format", "machine")
    assert code == EXIT_OK
    rows = _machine(out)
    assert len(rows) == 4 and [r["rho"] for r in rows] == sorted((r["rho"] for r in rows), reverse=True)
    assert len((tmp / "sel.jsonl").read_text().splitlines()) == 4


def test_select_questions_requires_top_k(workspace):
    tmp, cfg = workspace
    with pytest.raises(SystemExit):
        main(["select-questions", "--config", str(cfg), "--run-dir", str(tmp), "--pool", "x"])


def test_simulate(workspace, capsys):
    tmp, cfg = workspace
    raw = json.loads(cfg.read_text())
    raw["experiment"] = {"study": "fidelity", "question_count": 2, "dimensions": ["d1"]}
    cfg.write_text(json.dumps(raw))
    code, out, _ = run(capsys, "simulate", "--config", str(cfg), "--run-dir", str(tmp / "sim"), "--repetitions", "2",
                       "--format", "machine")
    assert code == EXIT_OK
    rows = _machine(out)
    assert rows[-1]["kind"] == "aggregate" and len(rows) == 3
    assert (tmp / "sim" / "simulate-fidelity.jsonl").read_text() == out


def test_config_errors_exit_2(workspace, capsys):
    tmp, cfg = workspace
    bad = tmp / "bad.json"
    bad.write_text(json.dumps({"models": ["a"], "colour": "blue"}))
    assert run(capsys, "rank", "--config", str(bad), "--run-dir", str(tmp / "r"))[0] == EXIT_CONFIG
    assert run(capsys, "rank", "--config", str(tmp / "missing.json"), "--run-dir", str(tmp / "r"))[0] == EXIT_CONFIG
    assert run(capsys, "leaderboard", "--config", str(cfg), "--run-dir", str(tmp / "empty"))[0] == EXIT_CONFIG
    assert run(capsys, "rank", "--config", str(cfg), "--run-dir", str(tmp / "r"), "--dimensions", "zz")[0] == EXIT_CONFIG


def test_config_drift_exit_2(workspace, capsys):
    tmp, cfg = workspace
    common = ["--config", str(cfg), "--run-dir", str(tmp / "run"), "--dimensions", "d1"]
    run(capsys, "rank", *common)
    assert run(capsys, "rank", *common, "--seed", "99")[0] == EXIT_CONFIG


def test_backend_error_exit_3(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"models": [f"m{i}" for i in range(6)], "question_count": 1,
                               "backend": {"kind": "replay", "log_path": str(tmp_path / "none.jsonl")}}))
    assert run(capsys, "rank", "--config", str(cfg), "--run-dir", str(tmp_path / "r"))[0] == EXIT_BACKEND


def test_lock_blocks_second_writer(workspace, capsys):
    tmp, cfg = workspace
    (tmp / "run").mkdir()
    (tmp / "run" / ".lock").write_text("1")
    code, _, err = run(capsys, "rank", "--config", str(cfg), "--run-dir", str(tmp / "run"))
    assert code != EXIT_OK and "in use" in err


def test_replay_verify_detects_single_edited_vote(workspace, capsys):
    tmp, cfg = workspace
    common = ["--config", str(cfg), "--run-dir", str(tmp / "run"), "--dimensions", "d1"]
    run(capsys, "rank", *common)
    log = tmp / "run" / "d1" / "votes.jsonl"
    lines = log.read_text().splitlines()
    rec = json.loads(lines[0])
    rec["verdict"] = "TIE" if rec["verdict"] != "TIE" else "A"
    lines[0] = json.dumps(rec)
    log.write_text("\n".join(lines) + "\n")
    assert run(capsys, "replay-verify", *common)[0] == EXIT_MISMATCH
