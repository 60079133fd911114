"""Incremental pairwise ranking of language models judged by their peers."""

from .compare import PairOutcome, Winner, compare_pair, winner
from .core import (
    CostLedger,
    ModelId,
    Question,
    RankingState,
    ResponseRecord,
    StyleFeatures,
    Verdict,
    VoteRecord,
    normalize_weights,
    rank_position,
)
from .elo import EloFitConfig, FitResult, elo_update, fit_bt, fit_with_dynamic_weights
from .engine import RankingEngine, RankingRunConfig, RunReport, rank_all
from .judges import JudgeGateway, LatentProfile, RemoteBackend, ReplayBackend, SimulatedBackend
from .persistence import VoteStore, checkpoint_load, checkpoint_save
from .selection import average_ranking, per_question_ranking, select_representative, spearman

__version__ = "0.1.0"

__all__ = [
    "CostLedger", "ModelId", "Question", "RankingState", "ResponseRecord", "StyleFeatures",
    "Verdict", "VoteRecord", "normalize_weights", "rank_position",
    "PairOutcome", "Winner", "compare_pair", "winner",
    "EloFitConfig", "FitResult", "elo_update", "fit_bt", "fit_with_dynamic_weights",
    "RankingEngine", "RankingRunConfig", "RunReport", "rank_all",
    "JudgeGateway", "LatentProfile", "RemoteBackend", "ReplayBackend", "SimulatedBackend",
    "VoteStore", "checkpoint_load", "checkpoint_save",
    "average_ranking", "per_question_ranking", "select_representative", "spearman",
]
