"""Simulation studies against a latent-skill oracle.

Every study builds a population of :class:`LatentProfile`, lets the engine
rank it through a :class:`SimulatedBackend`, and scores the output against
the order of the true skills.  Each repetition owns its own vote store, and
all randomness is derived from the listed seeds, so a report is a pure
function of its spec.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import CostLedger, Question, RankingState, VoteRecord
from .engine import RankingEngine, RankingRunConfig, rank_all
from .judges import JudgeGateway, LatentProfile, SimulatedBackend
from .persistence import dumps
from .selection import spearman

STUDIES = ("fidelity", "cost", "stability", "judge_pool", "bias", "window_sweep", "seed_sweep")


def equally_spaced_population(
    n: int, dimensions: Sequence[str] = ("general",), low: float = -3.0, high: float = 3.0, prefix: str = "m"
) -> list[LatentProfile]:
    """``n`` profiles with skills evenly spread over ``[low, high]``, best first."""
    width = len(str(n - 1))
    skills = np.linspace(high, low, n)
    return [
        LatentProfile(f"{prefix}{i:0{width}d}", {d: float(s) for d in dimensions})
        for i, s in enumerate(skills)
    ]


def make_questions(k: int, dimensions: Sequence[str] = ("general",)) -> list[Question]:
    width = len(str(k - 1))
    return [
        Question(f"q{i:0{width}d}", dimensions[i % len(dimensions)], f"Synthetic question {i}.")
        for i in range(k)
    ]


def planted_pool(
    n_faithful: int = 50, n_noise: int = 50, faithful_sd: float = 0.2, noise_sd: float = 5.0,
    dimension: str = "general", seed: int = 0,
) -> tuple[list[Question], dict[str, float], set[str]]:
    """Candidate questions of two kinds, shuffled under neutral ids.

    Returns the questions, the per-question noise level to hand to
    :class:`SimulatedBackend` and the ids of the faithful questions.
    """
    n = n_faithful + n_noise
    width = len(str(n - 1))
    kinds = np.random.default_rng(seed).permutation([True] * n_faithful + [False] * n_noise)
    questions, noise, faithful = [], {}, set()
    for i, is_faithful in enumerate(kinds):
        qid = f"c{i:0{width}d}"
        questions.append(Question(qid, dimension, f"Candidate question {i}."))
        noise[qid] = faithful_sd if is_faithful else noise_sd
        if is_faithful:
            faithful.add(qid)
    return questions, noise, faithful


def latent_order(population: Sequence[LatentProfile], dimensions: Sequence[str] | None = None) -> list[str]:
    def score(p: LatentProfile) -> float:
        dims = dimensions or sorted(p.skill)
        return float(np.mean([p.skill[d] for d in dims]))

    return [p.model for p in sorted(population, key=lambda p: (-score(p), p.model))]


def mean_abs_rank_diff(order: Sequence[str], reference: Sequence[str]) -> float:
    pos = {m: i for i, m in enumerate(reference)}
    return float(np.mean([abs(i - pos[m]) for i, m in enumerate(order)]))


def full_pairwise_baseline(
    models: Sequence[str],
    questions: Sequence[Question],
    gateway: JudgeGateway,
    ledger: CostLedger | None = None,
    cfg: RankingRunConfig = RankingRunConfig(),
) -> RankingState:
    """Compare every pair with all other models as judges, then fit once."""
    engine = RankingEngine(gateway, questions, cfg, ledger)
    return engine.seed_rank(models)


def export_matrices(
    votes: Sequence[VoteRecord], state: RankingState, judge_weights: dict[str, float] | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Win-rate and vote-count matrices in ranking order.

    ``winrate[i, j]`` is the weighted share of votes between models ``i`` and
    ``j`` won by ``i`` (NaN where no votes exist, including the diagonal);
    ``count[i, j]`` is the raw number of such votes.
    """
    if not votes:
        raise ValueError("no votes to export")
    idx = {m: i for i, m in enumerate(state.order)}
    n = len(idx)
    won = np.zeros((n, n))
    mass = np.zeros((n, n))
    count = np.zeros((n, n), dtype=np.int64)
    default = min(judge_weights.values()) if judge_weights else 1.0
    for v in votes:
        if v.model_a not in idx or v.model_b not in idx:
            continue
        i, j = idx[v.model_a], idx[v.model_b]
        w = judge_weights.get(v.judge, default) if judge_weights else 1.0
        s = v.verdict.score_a
        won[i, j] += w * s
        won[j, i] += w * (1.0 - s)
        mass[i, j] += w
        mass[j, i] += w
        count[i, j] += 1
        count[j, i] += 1
    with np.errstate(invalid="ignore", divide="ignore"):
        winrate = np.where(mass > 0, won / mass, np.nan)
    return winrate, count


def count_concentration(count: np.ndarray) -> tuple[float, float]:
    """Mean rank distance over compared pairs and over all pairs."""
    n = count.shape[0]
    iu = np.triu_indices(n, k=1)
    dist = (iu[1] - iu[0]).astype(float)
    compared = count[iu] > 0
    return float(dist[compared].mean()), float(dist.mean())


def write_grid(matrix: np.ndarray, labels: Sequence[str], path: str | Path, delimiter: str = "\t") -> None:
    """Write a labelled matrix as delimited text; NaN cells are left blank."""
    lines = [delimiter.join(["", *labels])]
    for label, row in zip(labels, matrix):
        cells = ["" if (isinstance(x, float) and math.isnan(x)) else repr(x.item()) for x in row]
        lines.append(delimiter.join([label, *cells]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass
class ExperimentSpec:
    """One simulation study.

    ``engine`` holds :class:`RankingRunConfig` overrides.  Study-specific
    sweeps live in ``panel_sizes`` (judge_pool), ``model_counts`` (cost),
    ``window_sizes`` and ``seed_counts``; the bias study marks
    ``biased_judge`` with ``self_bias`` toward its family.
    """

    study: str
    population: list[LatentProfile]
    dimensions: list[str] = field(default_factory=lambda: ["general"])
    question_count: int = 20
    repetitions: int = 5
    seeds: list[int] | None = None
    noise_sd: float = 0.5
    temperature: float = 1.0
    engine: dict = field(default_factory=dict)
    panel_sizes: list[int] = field(default_factory=lambda: [8, 16, 26])
    model_counts: list[int] = field(default_factory=lambda: [10, 20, 40, 80])
    cost_question_count: int = 5
    window_sizes: list[int] = field(default_factory=lambda: [1, 2, 3])
    seed_counts: list[int] = field(default_factory=lambda: [4, 6, 8])
    biased_judge: str | None = None

    def __post_init__(self) -> None:
        if self.study not in STUDIES:
            raise ValueError(f"unknown study {self.study!r}; expected one of {STUDIES}")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if self.seeds is None:
            self.seeds = list(range(self.repetitions))
        if len(self.seeds) != self.repetitions:
            raise ValueError("need one seed per repetition")
        for p in self.population:
            missing = set(self.dimensions) - set(p.skill)
            if missing:
                raise ValueError(f"{p.model} lacks skills for {sorted(missing)}")
        if self.study == "bias" and self.biased_judge not in {p.model for p in self.population}:
            raise ValueError("bias study needs biased_judge from the population")

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["population"] = [p.to_dict() for p in self.population]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        d = dict(d)
        d["population"] = [LatentProfile.from_dict(p) for p in d["population"]]
        return cls(**d)


@dataclass
class ExperimentReport:
    study: str
    rows: list[dict]
    aggregate: dict

    def to_text(self) -> str:
        lines = [dumps({"study": self.study, "kind": "repetition", **r}) for r in self.rows]
        lines.append(dumps({"study": self.study, "kind": "aggregate", **self.aggregate}))
        return "\n".join(lines) + "\n"


def _mean_std(xs: Sequence[float]) -> dict:
    a = np.asarray(xs, dtype=float)
    return {"mean": float(a.mean()), "std": float(a.std(ddof=1)) if len(a) > 1 else 0.0}


def _run_once(spec: ExperimentSpec, population: Sequence[LatentProfile], seed: int, cfg: RankingRunConfig,
              models: Sequence[str] | None = None, question_count: int | None = None) -> dict:
    backend = SimulatedBackend(population, seed=seed, noise_sd=spec.noise_sd, temperature=spec.temperature)
    gateway = JudgeGateway(backend, order_seed=seed)
    questions = make_questions(question_count or spec.question_count, spec.dimensions)
    models = list(models) if models is not None else [p.model for p in population]
    state, ledger, report = rank_all(models, questions, gateway, cfg)
    truth = [m for m in latent_order(population, spec.dimensions) if m in set(models)]
    binary_gap, final_gap = [], []
    inserted = list(report.seed_models)
    for rec in report.insertions:
        inserted.append(rec.model)
        true_pos = [m for m in truth if m in set(inserted)].index(rec.model) + 1
        binary_gap.append(abs(rec.binary_index - true_pos))
        final_gap.append(abs(rec.final_position - true_pos))
    return {
        "seed": seed,
        "spearman": spearman(state.order, truth),
        "mean_abs_rank_diff": mean_abs_rank_diff(state.order, truth),
        "judge_votes": ledger.judge_votes,
        "pair_comparisons": ledger.pair_comparisons,
        "binary_rank_gap": float(np.mean(binary_gap)) if binary_gap else 0.0,
        "final_rank_gap": float(np.mean(final_gap)) if final_gap else 0.0,
        "diverged_insertions": sum(r.diverged for r in report.insertions),
        "order": list(state.order),
    }


def _family_inflation(order: Sequence[str], truth: Sequence[str], family: set[str]) -> float:
    pos = {m: i for i, m in enumerate(order)}
    tpos = {m: i for i, m in enumerate(truth)}
    return float(np.mean([tpos[m] - pos[m] for m in family]))


def run_experiment(spec: ExperimentSpec) -> ExperimentReport:
    cfg = RankingRunConfig.from_dict({**RankingRunConfig().to_dict(), **spec.engine})
    rows: list[dict] = []
    agg: dict = {}
    pop = spec.population
    if spec.study == "fidelity":
        rows = [_run_once(spec, pop, s, replace(cfg, order_seed=s)) for s in spec.seeds]
        agg = {k: _mean_std([r[k] for r in rows]) for k in ("spearman", "mean_abs_rank_diff", "judge_votes")}
    elif spec.study == "stability":
        base = spec.seeds[0]
        rows = [{**_run_once(spec, pop, base, replace(cfg, order_seed=s)), "order_seed": s} for s in spec.seeds]
        orders = [r["order"] for r in rows]
        pairwise = [spearman(a, b) for i, a in enumerate(orders) for b in orders[i + 1 :]]
        agg = {"spearman": _mean_std([r["spearman"] for r in rows]), "min_pairwise_spearman": min(pairwise, default=1.0)}
    elif spec.study == "cost":
        for n in spec.model_counts:
            sub = equally_spaced_population(n, spec.dimensions)
            for s in spec.seeds:
                r = _run_once(spec, sub, s, replace(cfg, order_seed=s), question_count=spec.cost_question_count)
                rows.append({"n": n, **r})
        ns = np.array(spec.model_counts, dtype=float)
        pcs = np.array([np.mean([r["pair_comparisons"] for r in rows if r["n"] == n]) for n in spec.model_counts])
        slope = float(np.polyfit(np.log(ns), np.log(pcs), 1)[0]) if len(ns) > 1 else float("nan")
        # full-pairwise baseline on the study population
        base_rows = []
        for s in spec.seeds:
            backend = SimulatedBackend(pop, seed=s, noise_sd=spec.noise_sd, temperature=spec.temperature)
            questions = make_questions(spec.question_count, spec.dimensions)
            inc = _run_once(spec, pop, s, replace(cfg, order_seed=s))
            ledger = CostLedger()
            state = full_pairwise_baseline([p.model for p in pop], questions, JudgeGateway(backend, order_seed=s),
                                           ledger, cfg)
            truth = latent_order(pop, spec.dimensions)
            base_rows.append({
                "seed": s,
                "incremental_votes": inc["judge_votes"],
                "baseline_votes": ledger.judge_votes,
                "vote_ratio": inc["judge_votes"] / ledger.judge_votes,
                "incremental_spearman": inc["spearman"],
                "baseline_spearman": spearman(state.order, truth),
            })
        rows.extend({"n": len(pop), "kind_detail": "baseline", **b} for b in base_rows)
        agg = {"pair_comparison_exponent": slope, "vote_ratio": _mean_std([b["vote_ratio"] for b in base_rows])}
    elif spec.study == "judge_pool":
        for size in spec.panel_sizes:
            for s in spec.seeds:
                rows.append({"panel_size": size, **_run_once(spec, pop, s, replace(cfg, order_seed=s, judge_panel_limit=size))})
        agg = {
            str(size): _mean_std([r["spearman"] for r in rows if r["panel_size"] == size])
            for size in spec.panel_sizes
        }
    elif spec.study == "bias":
        judge = spec.biased_judge
        jprof = next(p for p in pop if p.model == judge)
        family = {p.model for p in pop if p.family_tag == jprof.family_tag and p.model != judge}
        others = [p.model for p in pop if p.model != judge]
        truth = [m for m in latent_order(pop, spec.dimensions) if m != judge]
        for s in spec.seeds:
            single = _run_once(spec, pop, s, replace(cfg, order_seed=s, judge_pool=(judge,)), models=others)
            full = _run_once(spec, pop, s, replace(cfg, order_seed=s))
            full_order = [m for m in full["order"] if m != judge]
            rows.append({
                "seed": s,
                "single_judge_inflation": _family_inflation(single["order"], truth, family),
                "all_judges_inflation": _family_inflation(full_order, truth, family),
                "single_judge_spearman": spearman(single["order"], truth),
                "all_judges_spearman": spearman(full_order, truth),
            })
        agg = {k: _mean_std([r[k] for r in rows]) for k in rows[0] if k != "seed"}
    elif spec.study == "window_sweep":
        for w in spec.window_sizes:
            for s in spec.seeds:
                rows.append({"window_half_width": w, **_run_once(spec, pop, s, replace(cfg, order_seed=s, window_half_width=w))})
        agg = {
            str(w): {k: _mean_std([r[k] for r in rows if r["window_half_width"] == w]) for k in ("spearman", "judge_votes")}
            for w in spec.window_sizes
        }
    elif spec.study == "seed_sweep":
        for c in spec.seed_counts:
            for s in spec.seeds:
                rows.append({"seed_model_count": c, **_run_once(spec, pop, s, replace(cfg, order_seed=s, seed_model_count=c))})
        agg = {
            str(c): {k: _mean_std([r[k] for r in rows if r["seed_model_count"] == c]) for k in ("spearman", "judge_votes")}
            for c in spec.seed_counts
        }
    return ExperimentReport(spec.study, rows, agg)
