"""Choosing questions that agree with the consensus.

A candidate pool mixes faithful questions, whose answers track skill closely,
with noisy ones.  Each question ranks a set of probe models on its own; the
questions whose ranking agrees best with the average of all rankings are kept.
"""

# %%
import numpy as np

from crowdrank import JudgeGateway, SimulatedBackend, select_representative
from crowdrank.sim import equally_spaced_population, planted_pool

probes = equally_spaced_population(15)
questions, noise, faithful = planted_pool(n_faithful=50, n_noise=50, seed=0)
print(len(questions), "candidates,", len(faithful), "of them faithful")

# %%
gateway = JudgeGateway(SimulatedBackend(probes, seed=0, noise_by_question=noise), order_seed=0)
selected = select_representative(questions, [p.model for p in probes], 50, gateway)

hits = sum(s.question_id in faithful for s in selected)
print("precision of the top 50: %.2f" % (hits / 50))

# %%
rho = np.array([s.rho for s in selected])
print("agreement of kept questions: min %.3f, median %.3f" % (rho.min(), np.median(rho)))
for s in selected[:5]:
    print(s.question_id, "%.3f" % s.rho, "faithful" if s.question_id in faithful else "noisy")
