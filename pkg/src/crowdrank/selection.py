"""Representative question selection.

Each candidate question gets its own small ranking of a fixed probe set of
models.  Questions whose ranking agrees best with the average ranking over
the whole pool are kept.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

from .core import Question
from .engine import RankingRunConfig, rank_all
from .errors import DegenerateLength, InconsistentModelSets, TopKExceedsPool
from .judges import JudgeGateway
from .persistence import dumps, read_jsonl


@dataclass(frozen=True)
class QuestionScore:
    question: Question
    rho: float
    order: tuple[str, ...]

    @property
    def question_id(self) -> str:
        return self.question.id

    def to_dict(self) -> dict:
        return {**self.question.to_dict(), "rho": self.rho}


def spearman(L: Sequence[str], L_hat: Sequence[str]) -> float:
    """Spearman's rho between two rankings of the same models (no ties)."""
    n = len(L)
    if len(set(L)) != n or len(set(L_hat)) != len(L_hat) or set(L) != set(L_hat):
        raise InconsistentModelSets("rankings must be permutations of the same models")
    if n < 2:
        raise DegenerateLength("need at least two models")
    pos = {m: i for i, m in enumerate(L_hat)}
    d2 = sum((i - pos[m]) ** 2 for i, m in enumerate(L))
    return 1.0 - 6.0 * d2 / (n * (n * n - 1))


def average_ranking(orders: Sequence[Sequence[str]]) -> list[str]:
    """Sort models by summed position across ``orders`` (ties by name)."""
    if not orders:
        raise ValueError("need at least one ranking")
    models = set(orders[0])
    totals = dict.fromkeys(models, 0)
    for o in orders:
        if len(o) != len(models) or set(o) != models:
            raise InconsistentModelSets("all rankings must cover the same models")
        for i, m in enumerate(o, start=1):
            totals[m] += i
    return sorted(totals, key=lambda m: (totals[m], m))


def per_question_ranking(
    q: Question, probe_models: Sequence[str], gateway: JudgeGateway, cfg: RankingRunConfig = RankingRunConfig()
) -> list[str]:
    """Rank ``probe_models`` on question ``q`` alone, with uniform judge weights."""
    if len(probe_models) < 3:
        raise DegenerateLength("need at least three probe models")
    cfg = replace(cfg, judge_weight_mode="uniform", seed_model_count=min(cfg.seed_model_count, len(probe_models)))
    state, _, _ = rank_all(probe_models, [q], gateway, cfg)
    return list(state.order)


def select_representative(
    candidates: Sequence[Question],
    probe_models: Sequence[str],
    top_k: int,
    gateway: JudgeGateway,
    cfg: RankingRunConfig = RankingRunConfig(),
    leave_one_out: bool = False,
    preprocess: Callable[[Question], Question] | None = None,
) -> list[QuestionScore]:
    """Score every candidate and return the ``top_k`` best, by rho descending.

    ``preprocess`` may rewrite questions (for example into open-ended form)
    before ranking; by default questions pass through unchanged.
    """
    if top_k > len(candidates):
        raise TopKExceedsPool(f"top_k={top_k} but only {len(candidates)} candidates")
    if top_k < 0:
        raise ValueError("top_k must be >= 0")
    if len({q.dimension for q in candidates}) > 1:
        raise ValueError("candidates must share one dimension")
    if preprocess is not None:
        candidates = [preprocess(q) for q in candidates]
    orders = {q.id: per_question_ranking(q, probe_models, gateway, cfg) for q in candidates}
    rho = score_orders(orders, leave_one_out)
    scores = [QuestionScore(q, rho[q.id], tuple(orders[q.id])) for q in candidates]
    scores.sort(key=lambda s: (-s.rho, s.question_id))
    return scores[:top_k]


def score_orders(orders: dict[str, Sequence[str]], leave_one_out: bool = False) -> dict[str, float]:
    """Spearman's rho of each order against the average of all orders.

    With ``leave_one_out`` each order is scored against the average of the
    others instead.
    """
    aggregate = average_ranking(list(orders.values()))
    rho = {}
    for qid, order in orders.items():
        ref = aggregate
        if leave_one_out and len(orders) > 1:
            ref = average_ranking([o for k, o in orders.items() if k != qid])
        rho[qid] = spearman(order, ref)
    return rho


def read_pool(path: str | Path) -> list[Question]:
    return [Question.from_dict(r) for r in read_jsonl(path)]


def write_selection(scores: Sequence[QuestionScore], path: str | Path) -> None:
    Path(path).write_text("".join(dumps(s.to_dict()) + "\n" for s in scores), encoding="utf-8")
