"""One model-vs-model comparison across a question set and judge panel."""

from __future__ import annotations

import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

from .core import CostLedger, ModelId, Question, VoteRecord
from .errors import EmptyJudgePanel, EmptyQuestionSet
from .judges import JudgeGateway


class Winner(str, enum.Enum):
    A = "A"
    B = "B"
    TIE = "TIE"


@dataclass
class PairOutcome:
    model_a: ModelId
    model_b: ModelId
    weighted_wins_a: float = 0.0
    weighted_wins_b: float = 0.0
    votes: list[VoteRecord] = field(default_factory=list)
    new_votes: int = 0

    @property
    def vote_count(self) -> int:
        return len(self.votes)

    def mirrored(self) -> "PairOutcome":
        return PairOutcome(
            self.model_b, self.model_a, self.weighted_wins_b, self.weighted_wins_a,
            [v.oriented(self.model_b, self.model_a) for v in self.votes], self.new_votes,
        )


def winner(outcome: PairOutcome, dead_band: float = 0.0) -> Winner:
    """``A`` only if its weighted wins exceed B's by more than ``dead_band``."""
    if outcome.weighted_wins_a > outcome.weighted_wins_b + dead_band:
        return Winner.A
    if outcome.weighted_wins_b > outcome.weighted_wins_a + dead_band:
        return Winner.B
    return Winner.TIE


def compare_pair(
    a: str,
    b: str,
    questions: Sequence[Question],
    judges: Sequence[tuple[str, float]],
    ledger: CostLedger,
    gateway: JudgeGateway,
    parallelism: int = 1,
) -> PairOutcome:
    """Collect one vote per (judge, question) on ``a`` vs ``b`` and tally them.

    Stored votes are reused and do not count as cost.  Fresh votes are only
    written to the store (and the ledger) once every vote of the comparison
    has been obtained, so a backend failure leaves no partial trace.
    """
    if a == b:
        raise ValueError(f"cannot compare {a!r} with itself")
    if not questions:
        raise EmptyQuestionSet(f"no questions for {a} vs {b}")
    if not judges:
        raise EmptyJudgePanel(f"no judges for {a} vs {b}")
    names = [j for j, _ in judges]
    if a in names or b in names:
        raise ValueError(f"contestants {a}, {b} cannot sit on their own panel")
    if len(set(names)) != len(names):
        raise ValueError("duplicate judges in panel")
    if any(w < 0 for _, w in judges):
        raise ValueError("judge weights must be non-negative")
    weight = dict(judges)

    responses = {}
    for q in questions:
        responses[q.id] = (gateway.get_response(a, q), gateway.get_response(b, q))

    votes: list[VoteRecord] = []
    missing: list[tuple[str, Question]] = []
    for q in questions:
        for j in names:
            v = gateway.cached_vote(j, q, a, b)
            if v is None:
                missing.append((j, q))
            else:
                votes.append(v)

    def fetch(task):
        j, q = task
        ra, rb = responses[q.id]
        return gateway.request_vote(j, q, ra, rb)

    if parallelism > 1 and len(missing) > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            fresh = list(pool.map(fetch, missing))
    else:
        fresh = [fetch(t) for t in missing]

    stored = sum(gateway.store.append(v) for v in fresh)
    if stored:
        ledger.add_votes(a, b, stored)
    ledger.add_comparison()

    votes.extend(fresh)
    votes.sort(key=lambda v: v.key)
    out = PairOutcome(ModelId(a), ModelId(b), votes=votes, new_votes=stored)
    for v in votes:
        w = weight[v.judge]
        s = v.verdict.score_a
        out.weighted_wins_a += w * s
        out.weighted_wins_b += w * (1.0 - s)
    return out
