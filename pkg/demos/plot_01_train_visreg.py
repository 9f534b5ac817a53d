"""
Training latent factors with a visual similarity term
=====================================================

Fit plain matrix factorisation and the visually regularised variant on a
small synthetic rating set, and compare the loss terms.
"""

import numpy as np

from visreg import Hyperparams, build_similarity_graph, train
from visreg.synthetic import make_synthetic

# Binary ratings from rank-3 ground-truth factors. Item features are a noisy
# linear image of the true item factors, so feature similarity carries
# information about how items are rated.
data = make_synthetic(300, 150, rank=3, density=0.4, feature_noise=0.5, seed=1)
print(f"{len(data.ratings)} ratings, {data.features.num_items} items, feature dim {data.features.dim}")

# The visual term pulls Q_f . Q_g toward the cosine similarity of the item
# features, over each item's 30 most similar items.
graph = build_similarity_graph(data.features, k=30)
print(f"similarity graph: {graph.num_edges} directed edges")

hp = Hyperparams(alpha1=0.1, alpha2=0.1, learning_rate=0.01, epochs=300, dim=5, seed=0)
plain, plain_report = train(data.ratings, None, hp)
visual, visual_report = train(data.ratings, graph, hp)

for name, rep in (("plain MF", plain_report), ("MF+VisReg", visual_report)):
    t = rep.final_loss
    print(f"{name:10s} total {t.total:9.2f}  data {t.data:9.2f}  l2 {t.l2:7.2f}  visual {t.visual:7.2f}")

# Training loss drops monotonically with a small enough step.
print("monotone descent:", bool(np.all(np.diff(visual_report.losses) <= 0)))

# How well do the learned item factors agree with feature similarity?
src, dst, sims = graph.edges()
for name, model in (("plain MF", plain), ("MF+VisReg", visual)):
    dots = np.einsum("dk,dk->k", model.Q[:, src], model.Q[:, dst])
    print(f"{name:10s} corr(Q_f.Q_g, S_fg) = {np.corrcoef(dots, sims)[0, 1]:.3f}")
