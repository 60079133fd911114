"""Checkpointed ranking runs on disk.

A run directory holds one sub-directory per evaluation dimension::

    run_dir/
      config.json
      <dimension>/votes.jsonl
      <dimension>/responses.jsonl
      <dimension>/checkpoint.json
      <dimension>/report.jsonl

The vote log is authoritative; on resume the ledger's vote counters are
recomputed from it.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

from .core import CostLedger, Question, RankingState, check_unique, pair_key
from .elo import EloFitConfig
from .engine import RankingEngine, RankingRunConfig, RunReport, continue_ranking, insertion_order
from .errors import AlreadyRanked, BackendUnavailable, TooFewSeeds
from .judges import JudgeBackend, JudgeBackendConfig, JudgeGateway, ReplayBackend
from .persistence import (
    ResponseStore,
    RunCheckpoint,
    RunPaths,
    VoteStore,
    checkpoint_load,
    checkpoint_save,
    config_hash,
    dumps,
    read_jsonl,
    write_report,
)

CONFIG_KEYS = {
    "models", "dimensions", "questions", "backend", "ranking", "gateway",
    "probe_models", "experiment", "question_count",
}
GATEWAY_KEYS = {"position_mode", "order_seed"}


@dataclass
class RunConfig:
    """Parsed configuration file.

    ``questions`` is either a list of question records or the path of a
    JSONL file (relative paths resolve against the config file).  When it is
    absent, ``question_count`` synthetic questions per dimension are made.
    """

    models: list[str]
    dimensions: list[str] = field(default_factory=lambda: ["general"])
    questions: list[Question] = field(default_factory=list)
    backend: JudgeBackendConfig = field(default_factory=JudgeBackendConfig)
    ranking: RankingRunConfig = field(default_factory=RankingRunConfig)
    gateway: dict = field(default_factory=dict)
    probe_models: list[str] = field(default_factory=list)
    experiment: dict | None = None
    raw: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path | None = None) -> "RunConfig":
        unknown = set(d) - CONFIG_KEYS
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        gw = dict(d.get("gateway", {}))
        if set(gw) - GATEWAY_KEYS:
            raise ValueError(f"unknown gateway keys: {sorted(set(gw) - GATEWAY_KEYS)}")
        dims = list(d.get("dimensions", ["general"]))
        qspec = d.get("questions")
        if isinstance(qspec, str):
            path = Path(qspec)
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            questions = [Question.from_dict(r) for r in read_jsonl(path)]
        elif qspec is not None:
            questions = [Question.from_dict(r) for r in qspec]
        else:
            from .sim import make_questions

            k = int(d.get("question_count", 20))
            questions = [
                Question(f"{dim}-{q.id}", dim, f"{q.text} ({dim})") for dim in dims for q in make_questions(k)
            ]
        ranking = d.get("ranking", {})
        known = set(RankingRunConfig.__dataclass_fields__)
        if set(ranking) - known:
            raise ValueError(f"unknown ranking keys: {sorted(set(ranking) - known)}")
        if set(ranking.get("fit", {})) - set(EloFitConfig.__dataclass_fields__):
            raise ValueError(f"unknown fit keys: {sorted(set(ranking['fit']) - set(EloFitConfig.__dataclass_fields__))}")
        backend = JudgeBackendConfig.from_dict(d.get("backend", {"kind": "simulated"}))
        if backend.kind == "simulated":
            skills = {p.model: p.skill for p in backend.profiles}
            missing = [m for m in d.get("models", []) + d.get("probe_models", [])
                       if m not in skills or set(dims) - set(skills[m])]
            if missing:
                raise ValueError(f"simulated backend lacks profiles or skills for {sorted(set(missing))}")
        return cls(
            models=check_unique(d.get("models", [])),
            dimensions=dims,
            questions=questions,
            backend=backend,
            ranking=RankingRunConfig.from_dict(ranking),
            gateway=gw,
            probe_models=list(d.get("probe_models", [])),
            experiment=d.get("experiment"),
            raw=dict(d),
        )

    @classmethod
    def load(cls, path: str | Path, seed: int | None = None) -> "RunConfig":
        path = Path(path)
        d = json.loads(path.read_text(encoding="utf-8"))
        if seed is not None:
            d = apply_seed(d, seed)
        return cls.from_dict(d, base_dir=path.parent)

    def questions_for(self, dimension: str) -> list[Question]:
        return [q for q in self.questions if q.dimension == dimension]

    def hash(self) -> str:
        # the model list grows with `insert`, so it is not part of the identity
        return config_hash({k: v for k, v in self.raw.items() if k not in ("models", "experiment")})


def apply_seed(d: dict, seed: int) -> dict:
    d = json.loads(json.dumps(d))
    d.setdefault("ranking", {})["order_seed"] = seed
    if d.get("backend", {}).get("kind", "simulated") == "simulated":
        d.setdefault("backend", {})["seed"] = seed
    d.setdefault("gateway", {})["order_seed"] = seed
    return d


def ledger_from_store(store: VoteStore, pair_comparisons: int) -> CostLedger:
    per_pair = Counter(pair_key(v.model_a, v.model_b) for v in store)
    return CostLedger(len(store), pair_comparisons, per_pair)


class DimensionRun:
    """Ranking of one dimension inside a run directory."""

    def __init__(self, cfg: RunConfig, run_dir: str | Path, dimension: str, backend: JudgeBackend | None = None):
        if dimension not in cfg.dimensions:
            raise ValueError(f"dimension {dimension!r} is not configured")
        self.cfg = cfg
        self.dimension = dimension
        self.paths = RunPaths(Path(run_dir) / dimension)
        self.run_id = f"{Path(run_dir).name}/{dimension}"
        self.questions = cfg.questions_for(dimension)
        self.store = VoteStore(self.paths.votes)
        self.responses = ResponseStore(self.paths.responses)
        self.gateway = JudgeGateway(
            backend if backend is not None else cfg.backend.build(),
            self.store,
            self.responses,
            order_seed=int(cfg.gateway.get("order_seed", 0)),
            position_mode=cfg.gateway.get("position_mode", "random"),
        )
        self.remaining: list[str] = []
        self.engine: RankingEngine | None = None

    @property
    def has_checkpoint(self) -> bool:
        return self.paths.checkpoint.exists()

    def _save(self, engine: RankingEngine, remaining: Sequence[str]) -> None:
        cp = RunCheckpoint(
            run_id=self.run_id,
            state=engine.state,
            ledger=engine.ledger,
            remaining=list(remaining),
            config_hash=self.cfg.hash(),
            report=engine.report.rows(),
        )
        checkpoint_save(cp, self.paths.checkpoint)
        write_report(engine.report.rows(), self.paths.report)

    def load(self) -> RankingEngine:
        cp = checkpoint_load(self.paths.checkpoint, expected_hash=self.cfg.hash())
        ledger = ledger_from_store(self.store, cp.ledger.pair_comparisons)
        engine = RankingEngine(self.gateway, self.questions, self.cfg.ranking, ledger, cp.state)
        engine.report = RunReport.from_rows(cp.report)
        self.engine, self.remaining = engine, list(cp.remaining)
        return engine

    def run(self, models: Sequence[str] | None = None, max_insertions: int | None = None):
        """Rank from scratch, or resume from the checkpoint if one exists.

        ``max_insertions`` stops early (the checkpoint allows resuming).
        """
        if self.has_checkpoint:
            engine = self.load()
        else:
            models = check_unique(models if models is not None else self.cfg.models)
            rcfg = self.cfg.ranking
            if len(models) < rcfg.seed_model_count:
                raise TooFewSeeds(f"{len(models)} models but seed_model_count={rcfg.seed_model_count}")
            order = insertion_order(models, rcfg.order_seed)
            # votes left by a run that crashed before its first checkpoint are reused, and counted
            engine = RankingEngine(self.gateway, self.questions, rcfg, ledger_from_store(self.store, 0))
            engine.seed_rank(order[: rcfg.seed_model_count])
            self.engine, self.remaining = engine, order[rcfg.seed_model_count :]
            self._save(engine, self.remaining)
        todo = self.remaining if max_insertions is None else self.remaining[:max_insertions]
        rest = self.remaining[len(todo) :]
        continue_ranking(engine, todo, lambda e, r: self._save(e, r + rest))
        self.remaining = rest
        return engine.state, engine.ledger, engine.report

    def insert(self, model: str):
        engine = self.load()
        if self.remaining:
            raise ValueError(f"run {self.run_id} is unfinished; resume it before inserting")
        if model in engine.state:
            raise AlreadyRanked(f"{model} is already ranked")
        continue_ranking(engine, [model], lambda e, r: self._save(e, r))
        return engine.state, engine.ledger, engine.report

    def verify(self) -> tuple[bool, RankingState, RankingState | None]:
        """Recompute the ranking from the vote log alone and compare."""
        engine = self.load()
        # a replay backend never produces new responses, so sharing the cache is safe
        replay = ReplayBackend(list(self.store), [])
        gw = JudgeGateway(replay, VoteStore(), self.responses,
                          order_seed=self.gateway.order_seed, position_mode=self.gateway.position_mode)
        fresh = RankingEngine(gw, self.questions, replace(self.cfg.ranking, order_seed=None))
        rep = engine.report
        try:
            fresh.seed_rank(rep.seed_models)
            continue_ranking(fresh, [r.model for r in rep.insertions])
        except BackendUnavailable:
            # the log lacks a vote the recorded run must have used
            return False, engine.state, None
        a, b = engine.state, fresh.state
        same = a.order == b.order and dumps(a.to_dict()) == dumps(b.to_dict())
        return same, a, b

    def close(self) -> None:
        self.store.close()
        self.responses.close()
