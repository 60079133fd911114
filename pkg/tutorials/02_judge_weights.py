"""How judge weights react to an unreliable judge.

Six models judge every pair they are not part of.  One of them answers at
random.  Scores are fitted and judges reweighted in alternation.  A judge's
weight follows its own fitted score, so the random judge loses influence
because it is itself a weak contestant; its coin flips only add noise.
"""

# %%
import itertools

import numpy as np

from crowdrank.core import StyleFeatures, Verdict, VoteRecord
from crowdrank.elo import EloFitConfig, fit_bt, fit_with_dynamic_weights

rng = np.random.default_rng(0)
beta = [2.0, 1.0, 0.0, -0.5, -1.0, -2.0]
names = [f"m{i}" for i in range(len(beta))]
noisy_judge = "m4"

votes = []
for (i, a), (j, b) in itertools.combinations(enumerate(names), 2):
    p = 1.0 / (1.0 + np.exp(-(beta[i] - beta[j])))
    for judge in names:
        if judge in (a, b):
            continue
        for q in range(20):
            win = rng.random() < (0.5 if judge == noisy_judge else p)
            verdict = Verdict.WIN_A if win else Verdict.WIN_B
            votes.append(VoteRecord(judge, f"q{q}", a, b, verdict, StyleFeatures(), StyleFeatures()))
print(len(votes), "votes")

# %%
# A single fit with uniform judge weights.
plain = fit_bt(votes, cfg=EloFitConfig(anchor="none"))
print("uniform-weight order:", plain.order())

# %%
# Alternating fit and reweight until the weights settle.
fit = fit_with_dynamic_weights(votes)
print("converged after", fit.iterations, "iterations")
for m in fit.order():
    flag = "  <- random judge" if m == noisy_judge else ""
    print(f"{m}  score {fit.elo[m]:6.2f}  weight {fit.weights[m]:.4f}{flag}")
print("uniform weight would be %.4f" % (1 / len(names)))
