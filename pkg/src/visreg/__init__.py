"""Visually regularised matrix factorisation with anchored cold-start regression."""
from .anchored import (AnchorProjections, SingularSystemError, build_projections, load_projections,
                       predict_cold, regress_queries, regress_query, save_projections, solve_anchor_weights)
from .core import FeatureStore, Hyperparams, LatentModel, RatingMatrix, Scale, decode_prediction, predict_rating
from .evaluation import (EvalPlan, accuracy, baseline_majority, baseline_random, make_plan, mae, pearson,
                         run_experiment)
from .features import (PcaReducer, SimilarityGraph, apply_pca, build_similarity_graph, cosine_similarity,
                       fit_pca)
from .training import LossTerms, TrainReport, TrainingDiverged, gradients, init_model, load_model, loss, save_model, train

__version__ = "0.1.0"
