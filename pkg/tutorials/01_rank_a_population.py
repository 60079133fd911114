"""Ranking a simulated population, one insertion at a time.

Thirty models with evenly spaced skills are ranked by peer judging.  Six seed
models are compared exhaustively; every later model is placed by binary search
and then settled by a small re-rank around where it landed.
"""

# %%
import numpy as np

from crowdrank import JudgeGateway, RankingRunConfig, SimulatedBackend, rank_all, spearman
from crowdrank.core import CostLedger
from crowdrank.sim import equally_spaced_population, full_pairwise_baseline, latent_order, make_questions

population = equally_spaced_population(30)
models = [p.model for p in population]
questions = make_questions(20)
truth = latent_order(population)
print("best three by latent skill:", truth[:3])

# %%
# Answers carry per-question noise, so a judge can prefer the weaker model on
# a single question.  The gateway caches every answer and every vote.
gateway = JudgeGateway(SimulatedBackend(population, seed=0, noise_sd=0.5), order_seed=0)
state, ledger, report = rank_all(models, questions, gateway, RankingRunConfig(order_seed=0))

print("Spearman against the latent order:", round(spearman(state.order, truth), 4))
print("judge votes:", ledger.judge_votes, "pair comparisons:", ledger.pair_comparisons)

# %%
# Each insertion records how far binary search went and how many re-rank
# rounds it took before the window stopped moving.
probes = np.array([r.probes for r in report.insertions])
rounds = np.array([r.window_rounds for r in report.insertions])
print("probes per insertion: mean %.2f, max %d" % (probes.mean(), probes.max()))
print("re-rank rounds: mean %.2f, max %d" % (rounds.mean(), rounds.max()))

# %%
# For comparison, every pair judged by every other model.
baseline_gateway = JudgeGateway(SimulatedBackend(population, seed=0, noise_sd=0.5), order_seed=0)
baseline_ledger = CostLedger()
baseline = full_pairwise_baseline(models, questions, baseline_gateway, baseline_ledger)
print("full pairwise votes:", baseline_ledger.judge_votes)
print("vote ratio: %.3f" % (ledger.judge_votes / baseline_ledger.judge_votes))
print("full pairwise Spearman:", round(spearman(baseline.order, truth), 4))

# %%
# Top of the leaderboard, with the judge weight each model earned.
for rank, m in enumerate(state.order[:8], 1):
    print(f"{rank:2d}  {m}  elo {state.elo[m]:6.2f}  weight {state.weights[m]:.4f}")
