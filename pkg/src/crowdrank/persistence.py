"""Append-only logs, checkpoints and run-directory layout.

The vote log is the source of truth for a run.  Checkpoints only speed up
resumption; anything they hold can be rebuilt by replaying the log.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator

from .core import CostLedger, RankingState, ResponseRecord, VoteRecord
from .errors import ConfigDrift, CorruptCheckpoint, RunLocked, StorageError, VersionMismatch

FORMAT_VERSION = 1

VOTES_FILE = "votes.jsonl"
RESPONSES_FILE = "responses.jsonl"
CHECKPOINT_FILE = "checkpoint.json"
REPORT_FILE = "report.jsonl"
LOCK_FILE = ".lock"


def dumps(obj) -> str:
    """Canonical one-line JSON used for every file we write."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def _read_jsonl(path: Path) -> list[dict]:
    """Read a JSONL file, dropping (and truncating) a torn final line."""
    if not path.exists():
        return []
    raw = path.read_bytes()
    rows = []
    lines = raw.split(b"\n")
    good_len = 0
    for i, line in enumerate(lines):
        if not line:
            good_len += 1
            continue
        try:
            rows.append(json.loads(line))
        except json.JSONDecodeError:
            if i == len(lines) - 1:
                # writer died mid-line
                with path.open("r+b") as fh:
                    fh.truncate(good_len)
                break
            raise StorageError(f"{path}: unparsable record on line {i + 1}") from None
        good_len += len(line) + 1
    return rows


class _JsonlWriter:
    def __init__(self, path: Path | None):
        self.path = path
        self._fh = None

    def write(self, line: str) -> None:
        if self.path is None:
            return
        try:
            if self._fh is None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                self._fh = self.path.open("a", encoding="utf-8")
            self._fh.write(line + "\n")
            self._fh.flush()
        except OSError as exc:
            raise StorageError(f"cannot append to {self.path}: {exc}") from exc

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


class VoteStore:
    """Deduplicating, append-only store of :class:`VoteRecord`.

    With ``path=None`` the store lives in memory only.  Each stored line holds
    the vote fields plus ``timestamp``; by default that is a logical sequence
    number, which keeps logs from identical runs byte-identical.
    """

    def __init__(self, path: str | os.PathLike | None = None, clock: Callable[[], float] | None = None):
        self.path = Path(path) if path is not None else None
        self._clock = clock
        self._lock = threading.Lock()
        self._records: dict[tuple, VoteRecord] = {}
        self._order: list[tuple] = []
        if self.path is not None:
            for row in _read_jsonl(self.path):
                v = VoteRecord.from_dict(row)
                if v.key not in self._records:
                    self._records[v.key] = v
                    self._order.append(v.key)
        self._writer = _JsonlWriter(self.path)

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self) -> Iterator[VoteRecord]:
        return (self._records[k] for k in list(self._order))

    def __contains__(self, key: tuple) -> bool:
        return key in self._records

    def get(self, key: tuple) -> VoteRecord | None:
        return self._records.get(key)

    def append(self, v: VoteRecord) -> bool:
        """Store ``v``; returns False (and writes nothing) for a known key."""
        with self._lock:
            if v.key in self._records:
                return False
            if self.path is not None:
                row = v.to_dict()
                row["timestamp"] = self._clock() if self._clock else len(self._order)
                self._writer.write(dumps(row))
            self._records[v.key] = v
            self._order.append(v.key)
            return True

    def votes(self) -> list[VoteRecord]:
        return list(self)

    def close(self) -> None:
        self._writer.close()


class ResponseStore:
    """Cache of model responses keyed by ``(model, question_id)``."""

    def __init__(self, path: str | os.PathLike | None = None):
        self.path = Path(path) if path is not None else None
        self._lock = threading.Lock()
        self._records: dict[tuple[str, str], ResponseRecord] = {}
        if self.path is not None:
            for row in _read_jsonl(self.path):
                r = ResponseRecord.from_dict(row)
                self._records.setdefault((r.model, r.question_id), r)
        self._writer = _JsonlWriter(self.path)

    def __len__(self) -> int:
        return len(self._records)

    def get(self, model: str, question_id: str) -> ResponseRecord | None:
        return self._records.get((model, question_id))

    def put(self, r: ResponseRecord) -> bool:
        with self._lock:
            key = (r.model, r.question_id)
            if key in self._records:
                return False
            self._writer.write(dumps(r.to_dict()))
            self._records[key] = r
            return True

    def close(self) -> None:
        self._writer.close()


def config_hash(config: dict) -> str:
    return hashlib.sha256(dumps(config).encode()).hexdigest()


@dataclass
class RunCheckpoint:
    run_id: str
    state: RankingState
    ledger: CostLedger
    remaining: list[str]
    config_hash: str
    report: list[dict] = field(default_factory=list)
    version: int = FORMAT_VERSION

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "state": self.state.to_dict(),
            "ledger": self.ledger.to_dict(),
            "remaining": list(self.remaining),
            "config_hash": self.config_hash,
            "report": self.report,
            "version": self.version,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunCheckpoint":
        return cls(
            run_id=d["run_id"],
            state=RankingState.from_dict(d["state"]),
            ledger=CostLedger.from_dict(d["ledger"]),
            remaining=list(d["remaining"]),
            config_hash=d["config_hash"],
            report=list(d.get("report", [])),
            version=int(d["version"]),
        )


def checkpoint_save(cp: RunCheckpoint, path: str | os.PathLike) -> Path:
    """Write ``cp`` atomically (temp file + rename).

    The file is two lines: a sha256 of the payload, then the payload.
    """
    path = Path(path)
    payload = dumps(cp.to_dict())
    digest = hashlib.sha256(payload.encode()).hexdigest()
    tmp = path.with_name(path.name + ".tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with tmp.open("w", encoding="utf-8") as fh:
            fh.write(f"sha256:{digest}\n{payload}\n")
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except OSError as exc:
        raise StorageError(f"cannot write checkpoint {path}: {exc}") from exc
    return path


def checkpoint_load(path: str | os.PathLike, expected_hash: str | None = None) -> RunCheckpoint:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError:
        raise CorruptCheckpoint(f"{path}: not valid UTF-8") from None
    header, _, rest = text.partition("\n")
    payload = rest.rstrip("\n")
    if not header.startswith("sha256:") or hashlib.sha256(payload.encode()).hexdigest() != header[7:]:
        raise CorruptCheckpoint(f"{path}: checksum mismatch")
    try:
        data = json.loads(payload)
    except json.JSONDecodeError:
        raise CorruptCheckpoint(f"{path}: payload is not JSON") from None
    if data.get("version") != FORMAT_VERSION:
        raise VersionMismatch(f"{path}: format version {data.get('version')} != {FORMAT_VERSION}")
    cp = RunCheckpoint.from_dict(data)
    if expected_hash is not None and cp.config_hash != expected_hash:
        raise ConfigDrift(f"{path}: run was started with a different configuration")
    return cp


class RunLock:
    """Advisory single-writer lock on a run directory."""

    def __init__(self, run_dir: str | os.PathLike):
        self.path = Path(run_dir) / LOCK_FILE
        self._held = False

    def acquire(self) -> "RunLock":
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise RunLocked(f"{self.path.parent} is in use (remove {self.path} if stale)") from None
        with os.fdopen(fd, "w") as fh:
            fh.write(str(os.getpid()))
        self._held = True
        return self

    def release(self) -> None:
        if self._held:
            self.path.unlink(missing_ok=True)
            self._held = False

    def __enter__(self) -> "RunLock":
        return self.acquire()

    def __exit__(self, *exc) -> None:
        self.release()


@dataclass
class RunPaths:
    root: Path

    @property
    def votes(self) -> Path:
        return self.root / VOTES_FILE

    @property
    def responses(self) -> Path:
        return self.root / RESPONSES_FILE

    @property
    def checkpoint(self) -> Path:
        return self.root / CHECKPOINT_FILE

    @property
    def report(self) -> Path:
        return self.root / REPORT_FILE


def write_report(rows: list[dict], path: str | os.PathLike) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp.write_text("".join(dumps(r) + "\n" for r in rows), encoding="utf-8")
    os.replace(tmp, path)


def read_jsonl(path: str | os.PathLike) -> list[dict]:
    return _read_jsonl(Path(path))
