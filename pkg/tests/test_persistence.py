import json

import pytest

from crowdrank.core import CostLedger, RankingState, Verdict, VoteRecord
from crowdrank.errors import ConfigDrift, CorruptCheckpoint, RunLocked, VersionMismatch
from crowdrank.persistence import (
    ResponseStore,
    RunCheckpoint,
    RunLock,
    VoteStore,
    checkpoint_load,
    checkpoint_save,
    config_hash,
    read_jsonl,
)
from crowdrank.core import ResponseRecord


def _checkpoint(**over):
    led = CostLedger()
    led.add_votes("a", "b", 4)
    led.add_comparison()
    cp = dict(run_id="run/general", state=RankingState(["a", "b"], {"a": 100.0, "b": 0.0}, {"a": 0.99, "b": 0.01}),
              ledger=led, remaining=["c", "d"], config_hash=config_hash({"x": 1}),
              report=[{"event": "seed", "models": ["a", "b"]}])
    cp.update(over)
    return RunCheckpoint(**cp)


def test_checkpoint_roundtrip_is_byte_identical(tmp_path):
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    checkpoint_save(_checkpoint(), p1)
    loaded = checkpoint_load(p1)
    assert loaded == _checkpoint()
    checkpoint_save(loaded, p2)
    assert p1.read_bytes() == p2.read_bytes()
    assert not (tmp_path / "a.json.tmp").exists()


@pytest.mark.parametrize("offset", [10, 80, -5])
def test_tampered_checkpoint_is_detected(tmp_path, offset):
    p = tmp_path / "cp.json"
    checkpoint_save(_checkpoint(), p)
    data = bytearray(p.read_bytes())
    i = offset if offset >= 0 else len(data) + offset
    data[i] = ord("0") if data[i] != ord("0") else ord("1")
    p.write_bytes(bytes(data))
    with pytest.raises(CorruptCheckpoint):
        checkpoint_load(p)


def test_checkpoint_version_and_drift(tmp_path):
    p = tmp_path / "cp.json"
    checkpoint_save(_checkpoint(version=99), p)
    with pytest.raises(VersionMismatch):
        checkpoint_load(p)
    checkpoint_save(_checkpoint(), p)
    with pytest.raises(ConfigDrift):
        checkpoint_load(p, expected_hash=config_hash({"x": 2}))
    assert checkpoint_load(p, expected_hash=config_hash({"x": 1})).remaining == ["c", "d"]


def test_config_hash_is_key_order_independent():
    assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})


def test_torn_final_line_is_dropped(tmp_path):
    p = tmp_path / "votes.jsonl"
    store = VoteStore(p)
    store.append(VoteRecord("j", "q1", "a", "b", Verdict.WIN_A))
    store.append(VoteRecord("j", "q2", "a", "b", Verdict.WIN_B))
    store.close()
    text = p.read_text()
    p.write_text(text[: len(text) - 7])  # crash in the middle of the second record
    reopened = VoteStore(p)
    assert len(reopened) == 1
    assert reopened.append(VoteRecord("j", "q2", "a", "b", Verdict.WIN_B)) is True
    reopened.close()
    assert len(read_jsonl(p)) == 2


def test_logical_timestamps_and_custom_clock(tmp_path):
    p = tmp_path / "v.jsonl"
    store = VoteStore(p)
    for i in range(3):
        store.append(VoteRecord("j", f"q{i}", "a", "b", Verdict.TIE))
    store.close()
    assert [r["timestamp"] for r in read_jsonl(p)] == [0, 1, 2]
    p2 = tmp_path / "w.jsonl"
    store = VoteStore(p2, clock=lambda: 1700000000.5)
    store.append(VoteRecord("j", "q", "a", "b", Verdict.TIE))
    store.close()
    assert read_jsonl(p2)[0]["timestamp"] == 1700000000.5


def test_response_store_roundtrip(tmp_path):
    p = tmp_path / "r.jsonl"
    rs = ResponseStore(p)
    r = ResponseRecord.build("a", "q1", "# Head\n- item **b**", 0.25)
    assert rs.put(r) is True and rs.put(r) is False
    rs.close()
    assert ResponseStore(p).get("a", "q1") == r


def test_run_lock_is_exclusive(tmp_path):
    with RunLock(tmp_path):
        with pytest.raises(RunLocked):
            RunLock(tmp_path).acquire()
    with RunLock(tmp_path):
        pass
    assert not (tmp_path / ".lock").exists()


def test_vote_log_lines_are_canonical_json(tmp_path):
    p = tmp_path / "v.jsonl"
    store = VoteStore(p)
    store.append(VoteRecord("j", "q", "b", "a", Verdict.WIN_A))
    store.close()
    line = p.read_text().splitlines()[0]
    assert line == json.dumps(json.loads(line), sort_keys=True, separators=(",", ":"), ensure_ascii=False)
