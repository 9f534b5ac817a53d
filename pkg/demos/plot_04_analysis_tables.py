"""
Preference tables, the hotness paradox and latent maps
======================================================

Produce the plot-ready analysis tables from a synthetic rating set with
planted age preferences.
"""

import numpy as np

from visreg import Hyperparams, train
from visreg.analysis import (DemographicTable, age_table_csv, compute_hotness, export_latent_2d,
                             hotness_paradox_curve, latent_csv, paradox_csv, preference_by_age)
from visreg.core import RatingMatrix

rng = np.random.default_rng(0)
n_raters, n_subjects = 300, 200
rater_age = rng.integers(18, 37, n_raters).astype(float)
subject_age = rng.integers(18, 37, n_subjects).astype(float)
appearance = rng.standard_normal((n_subjects, 8))

# Raters like subjects close to their own age, and subjects whose appearance
# vector points along the first axis.
mask = rng.random((n_raters, n_subjects)) < 0.3
r, s = np.nonzero(mask)
score = 1.5 - np.abs(rater_age[r] - subject_age[s]) / 6 + appearance[s, 0]
values = np.where(rng.random(len(r)) < 1 / (1 + np.exp(-score)), 1.0, -1.0)
ratings = RatingMatrix(n_raters, n_subjects, r, s, values)

bins = [18, 22, 26, 30, 37]
pct, counts = preference_by_age(ratings, DemographicTable(rater_age), DemographicTable(subject_age), bins)
print("positive rate by (rater bin, subject bin):")
print(np.round(pct, 1))
print(age_table_csv(pct, counts, bins).splitlines()[:3])

# Hotness paradox over feature similarity and over learned latent factors.
hot = compute_hotness(ratings)
model, _ = train(ratings, None, Hyperparams(dim=5, epochs=300, learning_rate=0.01))
sizes = [1, 10, 100]
rows = [("feature", n, p) for n, p in zip(sizes, hotness_paradox_curve(hot, appearance, sizes))]
rows += [("latent", n, p) for n, p in zip(sizes, hotness_paradox_curve(hot, model.Q.T, sizes))]
print(paradox_csv(rows))

# Two-dimensional map of the item factors, labelled by hotness.
table = export_latent_2d(model, labels=hot)
print(latent_csv(table[:5]))
