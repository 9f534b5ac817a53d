"""
Accuracy against the number of known ratings
============================================

Sweep the rating budget for test items and compare plain MF with the
visually regularised model. Budget 0 uses the cold-start path.
"""

import numpy as np

from visreg import Hyperparams
from visreg.evaluation import report_csv, run_experiment
from visreg.features import build_similarity_graph
from visreg.synthetic import make_synthetic

hp = Hyperparams(alpha1=0.1, alpha2=0.1, learning_rate=0.01, epochs=500, dim=5)
rows = []
for seed in range(3):
    data = make_synthetic(400, 200, rank=3, density=0.6, feature_noise=1.25, label_noise=0.1, seed=seed)
    graph = build_similarity_graph(data.features, hp.neighbor_k)
    for budget in (0, 10, 100, "full"):
        for method in ("MF", "MF+VisReg"):
            cold = budget == 0 and method == "MF+VisReg"
            res = run_experiment(data.ratings, data.features, hp, budget, method, coldstart=cold,
                                 seed=seed, graph=graph)
            rows.append(res.row())

print(report_csv(rows))

# Mean accuracy per method and budget.
for method in ("MF", "MF+VisReg"):
    means = [np.mean([r["accuracy"] for r in rows if r["method"] == method and r["budget"] == b])
             for b in (0, 10, 100, "full")]
    print(f"{method:10s}", "  ".join(f"{m:6.2f}" for m in means))
