"""
Cold-start prediction from a feature vector
===========================================

Build per-anchor projection matrices from a trained model and use them to
predict ratings for items that were never rated.
"""

import numpy as np

from visreg import Hyperparams, build_projections, build_similarity_graph, train
from visreg.anchored import regress_queries
from visreg.core import LatentModel
from visreg.evaluation import accuracy, baseline_majority
from visreg.synthetic import make_synthetic

data = make_synthetic(400, 200, rank=3, density=0.6, feature_noise=1.25, label_noise=0.1, seed=3)

# Hide the last 50 items entirely: their ratings are the test set.
cold = np.arange(150, 200)
seen = np.flatnonzero(~np.isin(data.ratings.items, cold))
train_ratings = data.ratings.subset(seen)

hp = Hyperparams(alpha1=0.1, alpha2=0.1, learning_rate=0.01, epochs=500, dim=5)
warm_feats = data.features.take(np.arange(150))
graph = build_similarity_graph(data.features, k=50)
model, _ = train(train_ratings, graph, hp)

# Each of the 150 warm items is an anchor with its own projection matrix.
proj = build_projections(LatentModel(model.P, model.Q[:, :150]), warm_feats, hp)
print(f"{proj.num_anchors} anchors, projection matrices of shape {proj.matrices.shape[1:]}")

# Map the hidden items' features into the latent space.
q_hat = regress_queries(data.features.vectors[cold], proj, warm_feats)

held = np.flatnonzero(np.isin(data.ratings.items, cold))
r, f = data.ratings.raters[held], data.ratings.items[held]
col = np.searchsorted(cold, f)
pred = np.where(np.einsum("dk,dk->k", model.P[:, r], q_hat[:, col]) >= 0, 1.0, -1.0)
truth = data.ratings.values[held]

majority = baseline_majority(train_ratings)
print(f"majority baseline : {accuracy(np.full(len(truth), majority), truth):.2f}%")
print(f"cold-start        : {accuracy(pred, truth):.2f}%")

# A query identical to a warm item's features lands on that item's own anchor.
q = regress_queries(warm_feats.vectors[:1], proj, warm_feats)[:, 0]
print(f"distance to the item's own factor: {np.linalg.norm(q - model.Q[:, 0]):.3f}")
