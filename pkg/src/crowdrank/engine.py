"""Coarse-to-fine incremental ranking.

A handful of seed models is ranked by full pairwise comparison.  Every other
model is then inserted one at a time: a binary search over the current list
finds a rough position, and a sliding window around that position refines
it.  The models already in the list act as judges throughout, weighted by
their fitted scores, which are refreshed after every insertion.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from itertools import combinations
from typing import Callable, Iterable, Sequence

import numpy as np

from .compare import PairOutcome, Winner, compare_pair, winner
from .core import CostLedger, ModelId, Question, RankingState, VoteRecord, check_unique
from .elo import EloFitConfig, fit_bt, fit_with_dynamic_weights, sort_by_score
from .errors import AlreadyRanked, EmptyJudgePanel, TooFewSeeds
from .judges import JudgeGateway, hash_unit

log = logging.getLogger(__name__)

WEIGHT_MODES = ("uniform", "elo")


@dataclass(frozen=True)
class RankingRunConfig:
    """Knobs of the ranking algorithm.

    ``order_seed`` shuffles the insertion order (None keeps the given order).
    ``judge_pool`` replaces the in-list judges by a fixed set of judges, and
    ``judge_panel_limit`` caps each panel at a deterministic subset.
    """

    seed_model_count: int = 6
    window_half_width: int = 1
    max_rerank_rounds: int = 10
    judge_weight_mode: str = "elo"
    dead_band: float = 0.0
    order_seed: int | None = None
    judge_panel_limit: int | None = None
    judge_pool: tuple[str, ...] | None = None
    parallelism: int = 1
    fit: EloFitConfig = field(default_factory=EloFitConfig)

    def __post_init__(self) -> None:
        if self.seed_model_count < 2:
            raise ValueError("seed_model_count must be >= 2")
        if self.window_half_width < 1:
            raise ValueError("window_half_width must be >= 1")
        if self.max_rerank_rounds < 1:
            raise ValueError("max_rerank_rounds must be >= 1")
        if self.judge_weight_mode not in WEIGHT_MODES:
            raise ValueError(f"judge_weight_mode must be one of {WEIGHT_MODES}")
        if self.dead_band < 0:
            raise ValueError("dead_band must be >= 0")
        if self.judge_panel_limit is not None and self.judge_panel_limit < 1:
            raise ValueError("judge_panel_limit must be >= 1")
        if self.judge_pool is not None:
            object.__setattr__(self, "judge_pool", tuple(self.judge_pool))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fit"] = self.fit.to_dict()
        if self.judge_pool is not None:
            d["judge_pool"] = list(self.judge_pool)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RankingRunConfig":
        d = dict(d)
        fit = d.pop("fit", {}) or {}
        if "style_control" in fit:
            fit = {**fit, "style_control": tuple(fit["style_control"])}
        if d.get("judge_pool") is not None:
            d["judge_pool"] = tuple(d["judge_pool"])
        return cls(fit=EloFitConfig(**fit), **d)


def max_probes(t: int) -> int:
    """Upper bound on binary-search probes into a list of ``t`` models."""
    return math.ceil(math.log2(t + 1))


@dataclass
class WindowResult:
    rounds: int = 0
    diverged: bool = False
    moved: bool = False


@dataclass
class InsertionRecord:
    model: str
    list_size: int
    binary_index: int
    probes: int
    window_rounds: int
    diverged: bool
    votes_spent: int
    comparisons_spent: int
    final_position: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RunReport:
    seed_models: list[str] = field(default_factory=list)
    insertions: list[InsertionRecord] = field(default_factory=list)

    @property
    def diverged(self) -> bool:
        return any(r.diverged for r in self.insertions)

    def rows(self) -> list[dict]:
        rows = [{"event": "seed", "models": list(self.seed_models)}] if self.seed_models else []
        rows += [{"event": "insert", **r.to_dict()} for r in self.insertions]
        return rows

    @classmethod
    def from_rows(cls, rows: Iterable[dict]) -> "RunReport":
        rep = cls()
        for r in rows:
            r = dict(r)
            if r.pop("event") == "seed":
                rep.seed_models = list(r["models"])
            else:
                rep.insertions.append(InsertionRecord(**r))
        return rep


class RankingEngine:
    """Single writer over a :class:`RankingState`.

    The engine remembers every vote its comparisons relied on; those votes
    feed each refit.
    """

    def __init__(
        self,
        gateway: JudgeGateway,
        questions: Sequence[Question],
        cfg: RankingRunConfig = RankingRunConfig(),
        ledger: CostLedger | None = None,
        state: RankingState | None = None,
    ):
        self.gateway = gateway
        self.questions = list(questions)
        self.cfg = cfg
        self.ledger = ledger if ledger is not None else CostLedger()
        self.state = state if state is not None else RankingState()
        self.report = RunReport()
        self.votes: dict[tuple, VoteRecord] = {}
        self.outcomes: list[PairOutcome] = []
        if self.state.order:
            self._recover_votes()

    def _recover_votes(self) -> None:
        ranked = set(self.state.order)
        qids = {q.id for q in self.questions}
        for v in self.gateway.store:
            if v.model_a in ranked and v.model_b in ranked and v.question_id in qids:
                self.votes[v.key] = v

    # -- judges -----------------------------------------------------------

    def judge_weight(self, m: str) -> float:
        if self.cfg.judge_weight_mode == "uniform" or not self.state.weights:
            return 1.0
        # unrated judges get the weakest voice until the next refit
        return self.state.weights.get(m, min(self.state.weights.values()))

    def panel(self, a: str, b: str, exclude: Iterable[str] = ()) -> list[tuple[str, float]]:
        banned = {a, b, *exclude}
        pool = self.cfg.judge_pool if self.cfg.judge_pool is not None else self.state.order
        judges = [j for j in pool if j not in banned]
        limit = self.cfg.judge_panel_limit
        if limit is not None and len(judges) > limit:
            lo, hi = sorted((a, b))
            seed = self.cfg.order_seed or 0
            keep = set(sorted(judges, key=lambda j: hash_unit(seed, "panel", lo, hi, j))[:limit])
            judges = [j for j in judges if j in keep]
        return [(j, self.judge_weight(j)) for j in judges]

    def compare(self, a: str, b: str, judges: list[tuple[str, float]]) -> PairOutcome:
        out = compare_pair(a, b, self.questions, judges, self.ledger, self.gateway, self.cfg.parallelism)
        for v in out.votes:
            self.votes.setdefault(v.key, v.canonical())
        self.outcomes.append(out)
        return out

    # -- scoring ----------------------------------------------------------

    def refit(self) -> None:
        votes = [self.votes[k] for k in sorted(self.votes)]
        fcfg = self.cfg.fit
        if self.cfg.judge_weight_mode == "elo":
            res = fit_with_dynamic_weights(votes, fcfg)
            if not res.converged:
                log.warning("judge reweighting did not converge in %d rounds", res.iterations)
        else:
            res = fit_bt(votes, None, fcfg)
        # models never compared (cannot happen after seeding) sit at the bottom
        lo = min(res.elo.values())
        elo = {m: res.elo.get(m, lo) for m in self.state.order}
        order = sort_by_score(elo, prior=self.state.order)
        if self.cfg.judge_weight_mode == "elo":
            w = {m: res.weights.get(m, fcfg.weight_floor) for m in order}
        else:
            w = {m: 1.0 for m in order}
        total = math.fsum(w.values())
        self.state = RankingState(order, elo, {m: v / total for m, v in w.items()})
        self.last_fit = res

    # -- algorithm steps --------------------------------------------------

    def seed_rank(self, models: Sequence[str]) -> RankingState:
        models = check_unique(models)
        if len(models) < 2:
            raise TooFewSeeds(f"need at least 2 seed models, got {len(models)}")
        self.state = RankingState(list(models))
        for a, b in combinations(models, 2):
            judges = self.panel(a, b)
            if not judges:
                raise EmptyJudgePanel(f"no judge available for seed pair {a} vs {b}")
            self.compare(a, b, [(j, 1.0) for j, _ in judges])
        self.refit()
        self.report.seed_models = list(models)
        return self.state

    def binary_insert(self, new: str) -> tuple[int, int]:
        """Rough 1-based position of ``new``; also returns the probe count."""
        if new in self.state:
            raise AlreadyRanked(f"{new} is already ranked")
        order = self.state.order
        t = len(order)
        if t < 1:
            raise ValueError("cannot insert into an empty ranking")
        lo, hi, probes = 0, t - 1, 0
        while lo <= hi:
            mid = (lo + hi) // 2
            incumbent = order[mid]
            out = self.compare(new, incumbent, self.panel(new, incumbent))
            probes += 1
            if winner(out, self.cfg.dead_band) is Winner.A:
                hi = mid - 1
            else:
                # ties descend: the newcomer has not shown it is better
                lo = mid + 1
        assert probes <= max_probes(t), (probes, t)
        return lo + 1, probes

    def in_window_rerank(self, focus: str, index: int) -> WindowResult:
        """Place ``focus`` at ``index`` and refine it against its window.

        Each round compares the focus with every other window member, judged
        by the models outside the window, and reorders the window by Copeland
        score (prior position breaks ties).  If the focus moved, the window
        follows it; after ``max_rerank_rounds`` rounds the result is flagged
        as diverged.
        """
        order = self.state.order
        if focus not in order:
            order.insert(index - 1, ModelId(focus))
        res = WindowResult()
        w = self.cfg.window_half_width
        while True:
            pos = order.index(focus)
            lo, hi = max(0, pos - w), min(len(order) - 1, pos + w)
            window = order[lo : hi + 1]
            if len(window) == 1:
                return res
            res.rounds += 1
            # peers are not compared with each other; their prior order stands in
            # for that game, so the focus gains nothing from ties alone
            score = {m: float(len(window) - 2 - i) for i, m in enumerate(m for m in window if m != focus)}
            score[focus] = 0.0
            for peer in window:
                if peer == focus:
                    continue
                judges = self.panel(focus, peer, exclude=window)
                if not judges:
                    # window spans the whole list: fall back to everyone else
                    judges = self.panel(focus, peer)
                outcome = winner(self.compare(focus, peer, judges), self.cfg.dead_band)
                s = {Winner.A: 1.0, Winner.B: 0.0, Winner.TIE: 0.5}[outcome]
                score[focus] += s
                score[peer] += 1.0 - s
            prior = {m: i for i, m in enumerate(window)}
            order[lo : hi + 1] = sorted(window, key=lambda m: (-score[m], prior[m]))
            if order.index(focus) == pos:
                return res
            res.moved = True
            if res.rounds >= self.cfg.max_rerank_rounds:
                res.diverged = True
                log.info("window reranking of %s hit %d rounds", focus, res.rounds)
                return res

    def insert(self, new: str) -> InsertionRecord:
        votes0, comps0 = self.ledger.judge_votes, self.ledger.pair_comparisons
        t = len(self.state)
        index, probes = self.binary_insert(new)
        wres = self.in_window_rerank(new, index)
        self.refit()
        rec = InsertionRecord(
            model=new,
            list_size=t,
            binary_index=index,
            probes=probes,
            window_rounds=wres.rounds,
            diverged=wres.diverged,
            votes_spent=self.ledger.judge_votes - votes0,
            comparisons_spent=self.ledger.pair_comparisons - comps0,
            final_position=self.state.order.index(new) + 1,
        )
        self.report.insertions.append(rec)
        return rec


def insertion_order(models: Sequence[str], order_seed: int | None) -> list[str]:
    models = list(models)
    if order_seed is None:
        return models
    perm = np.random.default_rng(order_seed).permutation(len(models))
    return [models[i] for i in perm]


def rank_all(
    models: Sequence[str],
    questions: Sequence[Question],
    gateway: JudgeGateway,
    cfg: RankingRunConfig = RankingRunConfig(),
    on_step: Callable[[RankingEngine, list[str]], None] | None = None,
) -> tuple[RankingState, CostLedger, RunReport]:
    """Rank ``models`` from scratch.

    ``on_step(engine, remaining)`` runs after the seed ranking and after each
    insertion; it is where checkpoints are written.
    """
    models = check_unique(models)
    if len(models) < cfg.seed_model_count:
        raise TooFewSeeds(f"{len(models)} models but seed_model_count={cfg.seed_model_count}")
    order = insertion_order(models, cfg.order_seed)
    engine = RankingEngine(gateway, questions, cfg)
    engine.seed_rank(order[: cfg.seed_model_count])
    remaining = order[cfg.seed_model_count :]
    if on_step:
        on_step(engine, remaining)
    return continue_ranking(engine, remaining, on_step)


def continue_ranking(
    engine: RankingEngine,
    remaining: Sequence[str],
    on_step: Callable[[RankingEngine, list[str]], None] | None = None,
) -> tuple[RankingState, CostLedger, RunReport]:
    remaining = list(remaining)
    while remaining:
        engine.insert(remaining.pop(0))
        if on_step:
            on_step(engine, remaining)
    return engine.state, engine.ledger, engine.report
