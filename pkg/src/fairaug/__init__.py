"""Graph-augmentation mitigation of consumer-group unfairness in top-k
recommendation.

The package trains a linear graph-convolutional recommender on a bipartite
user-item graph, measures the NDCG gap between two demographic user groups,
and then learns a minimal set of new user-item edges — added only on the
worse-served group's side — that closes the gap when the frozen model runs
on the re-normalized augmented graph.
"""

from .augment import (AugmentConfig, AugmentationResult, PerturbationVector,
                      build_augmented, continuous_weights, discretize, finalize,
                      make_objective, optimize)
from .dataset import (GroupPartition, Interaction, InteractionDataset, SplitDataset,
                      group_partition, load_interactions, relevants_by_user,
                      temporal_split)
from .graph import (BipartiteGraph, CandidateEdgeSpace, NormalizedOperator,
                    build_candidate_space, build_graph, normalized_adjacency)
from .lightgcn import (ModelParams, TrainConfig, load_checkpoint, predict_scores,
                       propagate, save_checkpoint, topk, train_bpr)
from .metrics import (GroupUtility, approx_ndcg, delta_ndcg, designate_groups,
                      dist_loss, fairness_loss, ndcg_at_k, relative_difference)
from .policies import PolicyContext, PolicySpec, apply_policy, parse_policy
from .report import EvaluationReport, baseline_report, evaluate, policy_table, tradeoff_table

__version__ = "0.1.0"
