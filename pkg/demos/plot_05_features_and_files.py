"""
Feature reduction, neighbour graphs and file formats
====================================================

Reduce features with PCA, build the exact cosine k-NN graph, and write the
on-disk formats used by the command line tools.
"""

import tempfile
from pathlib import Path

import numpy as np

from visreg import FeatureStore, Hyperparams, build_projections, fit_pca
from visreg.anchored import load_projections, save_projections
from visreg.core import LatentModel
from visreg.features import apply_pca, build_similarity_graph, read_features, write_features
from visreg.training import load_model, save_model

rng = np.random.default_rng(5)

# 500 items whose 64-D features really live near a 6-D subspace.
latent = rng.standard_normal((500, 6))
mixing = rng.standard_normal((6, 64))
features = FeatureStore(latent @ mixing + 0.01 * rng.standard_normal((500, 64)))

reducer = fit_pca(features, energy=0.99)
print(f"PCA keeps {reducer.n_components} components ({reducer.energy_kept:.4f} of the variance)")
reduced = apply_pca(reducer, features)

graph = build_similarity_graph(reduced, k=10)
f = 0
print(f"item {f} nearest neighbours:", [(j, round(s, 3)) for j, s in graph.neighbors(f)[:5]])

# Rows are processed in fixed blocks, so threads change nothing.
serial = build_similarity_graph(reduced, k=10, chunk=128)
threaded = build_similarity_graph(reduced, k=10, chunk=128, threads=4)
print("thread-invariant:", np.array_equal(serial.indices, threaded.indices)
      and np.array_equal(serial.sims, threaded.sims))

with tempfile.TemporaryDirectory() as tmp:
    tmp = Path(tmp)
    write_features(tmp / "features.tsv", reduced)
    write_features(tmp / "features.bin", reduced)
    print("text features :", (tmp / "features.tsv").read_text().splitlines()[1][:60], "...")
    print("binary header :", (tmp / "features.bin").read_bytes()[:4])
    back = read_features(tmp / "features.bin")
    print("binary stores float32, max error:", float(np.abs(back.vectors - reduced.vectors).max()))

    model = LatentModel(rng.standard_normal((4, 20)), rng.standard_normal((4, 500)))
    save_model(tmp / "model.vmf", model)
    proj = build_projections(model, reduced, Hyperparams())
    save_projections(tmp / "proj.vanr", proj)
    print("model round trip exact:", np.array_equal(load_model(tmp / "model.vmf").Q, model.Q))
    print("projections round trip exact:",
          np.array_equal(load_projections(tmp / "proj.vanr", reduced).matrices, proj.matrices))
