"""Domain types and ranking-list primitives.

Models are identified by plain strings (``ModelId``).  Everything else in the
package passes these around; the helpers here only enforce that they are
non-empty and unique where it matters.
"""

from __future__ import annotations

import enum
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NewType

from .errors import SelfJudgeRejected, UnknownModel

ModelId = NewType("ModelId", str)

STYLE_FEATURES = ("length", "header_count", "list_count", "bold_count")

_HEADER_RE = re.compile(r"^\s*#+\s")
_LIST_RE = re.compile(r"^\s*(?:[-*+]|\d+\.)\s")
_BOLD_RE = re.compile(r"\*\*(.+?)\*\*")


def check_model_id(name: str) -> ModelId:
    if not isinstance(name, str) or not name.strip():
        raise ValueError(f"model id must be a non-empty string, got {name!r}")
    return ModelId(name)


def check_unique(models: Iterable[str]) -> list[ModelId]:
    out = [check_model_id(m) for m in models]
    dupes = [m for m, c in Counter(out).items() if c > 1]
    if dupes:
        raise ValueError(f"duplicate model ids: {sorted(dupes)}")
    return out


@dataclass(frozen=True)
class Question:
    id: str
    dimension: str
    text: str

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("question id must be non-empty")
        if not self.text or not self.text.strip():
            raise ValueError(f"question {self.id!r} has empty text")

    def to_dict(self) -> dict:
        return {"id": self.id, "dimension": self.dimension, "text": self.text}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Question":
        return cls(id=str(d["id"]), dimension=str(d["dimension"]), text=str(d["text"]))


@dataclass(frozen=True)
class StyleFeatures:
    """Markdown/length counts of a response.

    ``length`` counts whitespace-delimited tokens.  A header is a line that
    starts with one or more ``#`` followed by whitespace, a list item a line
    starting with ``-``, ``*``, ``+`` or ``<digits>.`` followed by
    whitespace, and a bold span a non-overlapping ``**...**`` pair on one line.
    """

    length: int = 0
    header_count: int = 0
    list_count: int = 0
    bold_count: int = 0

    def __post_init__(self) -> None:
        for name in STYLE_FEATURES:
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    @classmethod
    def from_text(cls, text: str) -> "StyleFeatures":
        lines = text.splitlines()
        return cls(
            length=len(text.split()),
            header_count=sum(1 for ln in lines if _HEADER_RE.match(ln)),
            list_count=sum(1 for ln in lines if _LIST_RE.match(ln)),
            bold_count=sum(len(_BOLD_RE.findall(ln)) for ln in lines),
        )

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.length, self.header_count, self.list_count, self.bold_count)

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in STYLE_FEATURES}

    @classmethod
    def from_dict(cls, d: Mapping) -> "StyleFeatures":
        return cls(**{name: int(d[name]) for name in STYLE_FEATURES})


@dataclass(frozen=True)
class ResponseRecord:
    model: ModelId
    question_id: str
    text: str
    style: StyleFeatures
    # latent quality, only known to the simulated backend
    quality: float | None = None

    @classmethod
    def build(cls, model: str, question_id: str, text: str, quality: float | None = None):
        return cls(ModelId(model), question_id, text, StyleFeatures.from_text(text), quality)

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "question_id": self.question_id,
            "text": self.text,
            "style": self.style.to_dict(),
            "quality": self.quality,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ResponseRecord":
        style = StyleFeatures.from_text(d["text"])
        if "style" in d and StyleFeatures.from_dict(d["style"]) != style:
            raise ValueError(f"stored style of {d['model']}/{d['question_id']} does not match its text")
        return cls(ModelId(d["model"]), d["question_id"], d["text"], style, d.get("quality"))


class Verdict(str, enum.Enum):
    WIN_A = "A"
    WIN_B = "B"
    TIE = "TIE"

    @property
    def score_a(self) -> float:
        """Actual score of the first contestant: 1, 0 or 0.5."""
        return {Verdict.WIN_A: 1.0, Verdict.WIN_B: 0.0, Verdict.TIE: 0.5}[self]

    def flipped(self) -> "Verdict":
        return {Verdict.WIN_A: Verdict.WIN_B, Verdict.WIN_B: Verdict.WIN_A, Verdict.TIE: Verdict.TIE}[self]


def pair_key(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a <= b else (b, a)


@dataclass(frozen=True)
class VoteRecord:
    judge: ModelId
    question_id: str
    model_a: ModelId
    model_b: ModelId
    verdict: Verdict
    style_a: StyleFeatures = field(default_factory=StyleFeatures)
    style_b: StyleFeatures = field(default_factory=StyleFeatures)
    # True when model_b's answer was shown to the judge first
    swapped: bool = False

    def __post_init__(self) -> None:
        if self.model_a == self.model_b:
            raise ValueError(f"vote compares {self.model_a!r} with itself")
        if self.judge in (self.model_a, self.model_b):
            raise SelfJudgeRejected(f"judge {self.judge!r} is a contestant")

    @property
    def key(self) -> tuple[str, str, str, str]:
        return (self.judge, self.question_id, *pair_key(self.model_a, self.model_b))

    def oriented(self, a: str, b: str) -> "VoteRecord":
        """Return the same vote with contestants in the order ``(a, b)``."""
        if (self.model_a, self.model_b) == (a, b):
            return self
        if (self.model_a, self.model_b) != (b, a):
            raise ValueError(f"vote is not about ({a}, {b})")
        return VoteRecord(
            self.judge, self.question_id, self.model_b, self.model_a,
            self.verdict.flipped(), self.style_b, self.style_a, not self.swapped,
        )

    def canonical(self) -> "VoteRecord":
        if self.model_a <= self.model_b:
            return self
        return self.oriented(self.model_b, self.model_a)

    def to_dict(self) -> dict:
        return {
            "judge": self.judge,
            "question_id": self.question_id,
            "model_a": self.model_a,
            "model_b": self.model_b,
            "verdict": self.verdict.value,
            "style_a": self.style_a.to_dict(),
            "style_b": self.style_b.to_dict(),
            "swapped": self.swapped,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "VoteRecord":
        return cls(
            judge=ModelId(d["judge"]),
            question_id=d["question_id"],
            model_a=ModelId(d["model_a"]),
            model_b=ModelId(d["model_b"]),
            verdict=Verdict(d["verdict"]),
            style_a=StyleFeatures.from_dict(d["style_a"]),
            style_b=StyleFeatures.from_dict(d["style_b"]),
            swapped=bool(d.get("swapped", False)),
        )


@dataclass
class RankingState:
    """Ordered ranking (best first) with fitted scores and judge weights."""

    order: list[ModelId] = field(default_factory=list)
    elo: dict[ModelId, float] = field(default_factory=dict)
    weights: dict[ModelId, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if len(set(self.order)) != len(self.order):
            raise ValueError("ranking order contains duplicates")

    def __len__(self) -> int:
        return len(self.order)

    def __contains__(self, m: object) -> bool:
        return m in self.order

    def copy(self) -> "RankingState":
        return RankingState(list(self.order), dict(self.elo), dict(self.weights))

    def to_dict(self) -> dict:
        return {
            "order": list(self.order),
            "elo": {m: self.elo[m] for m in self.order if m in self.elo},
            "weights": {m: self.weights[m] for m in self.order if m in self.weights},
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "RankingState":
        return cls(
            [ModelId(m) for m in d["order"]],
            {ModelId(k): float(v) for k, v in d.get("elo", {}).items()},
            {ModelId(k): float(v) for k, v in d.get("weights", {}).items()},
        )


def rank_position(state: RankingState, m: str) -> int:
    """1-based position of ``m`` in ``state.order``."""
    try:
        return state.order.index(m) + 1
    except ValueError:
        raise UnknownModel(m) from None


@dataclass
class CostLedger:
    judge_votes: int = 0
    pair_comparisons: int = 0
    per_pair_votes: Counter = field(default_factory=Counter)

    def add_votes(self, a: str, b: str, n: int = 1) -> None:
        if n < 0:
            raise ValueError("ledger counters are monotone")
        self.judge_votes += n
        self.per_pair_votes[pair_key(a, b)] += n

    def add_comparison(self) -> None:
        self.pair_comparisons += 1

    def copy(self) -> "CostLedger":
        return CostLedger(self.judge_votes, self.pair_comparisons, Counter(self.per_pair_votes))

    def to_dict(self) -> dict:
        return {
            "judge_votes": self.judge_votes,
            "pair_comparisons": self.pair_comparisons,
            "per_pair_votes": [[a, b, n] for (a, b), n in sorted(self.per_pair_votes.items())],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "CostLedger":
        per_pair = Counter({(a, b): int(n) for a, b, n in d.get("per_pair_votes", [])})
        return cls(int(d["judge_votes"]), int(d["pair_comparisons"]), per_pair)


def normalize_weights(elo: Mapping[str, float], floor: float = 1.0) -> dict[str, float]:
    """Turn scores into judge weights that sum to one.

    Scores are shifted so the minimum sits at ``floor`` and then divided by
    their total, so the weakest judge keeps a small positive weight.  When
    every score is equal the result is uniform.
    """
    if not elo:
        raise ValueError("need at least one model")
    values = list(elo.values())
    if not all(math.isfinite(v) for v in values):
        raise ValueError("scores must be finite")
    lo = min(values)
    if max(values) == lo:
        return _uniform(elo)
    shifted = {m: s - lo + floor for m, s in elo.items()}
    total = math.fsum(shifted.values())
    return {m: v / total for m, v in shifted.items()}


def _uniform(models: Iterable[str]) -> dict[str, float]:
    models = list(models)
    return {m: 1.0 / len(models) for m in models}

