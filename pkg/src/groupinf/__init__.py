"""Interaction-aware group influence estimation and data selection.

Estimate how removing or adding a group of training examples changes a
target quantity by combining the classical linear influence term with a
pairwise interaction correction, select data greedily under the same
estimator, and verify both against exact retraining oracles.
"""

from .curvature import (DampedCurvature, TargetCurvature, damp_and_factor,
                        exact_hessian, gauss_newton, target_hessian)
from .data import (Dataset, GroupSpec, SyntheticConfig, build_random_groups,
                   build_similar_groups, dump_idx, load_idx, load_idx_dataset,
                   load_regression_csv, make_synthetic_blobs, split, standardize)
from .influence import (GroupEstimate, MBilinear, ShiftSet, class_pair_kappa_matrix,
                        compute_shifts, estimate_addition, estimate_removal,
                        factorized_kappa_lr, first_order, interaction, kappa,
                        multiclass_kappa_factorized, residual_alignment,
                        self_cross_split, spectral_kappa)
from .model import (Arch, ModelParams, TargetSpec, TrainConfig, grad_example,
                    load_params, loss, predict, save_params, target_grad,
                    target_value, train)
from .oracle import (BenchmarkReport, SelectionReport, ground_truth_addition,
                     ground_truth_removal, reweighting_path_check,
                     run_attribution_benchmark, run_selection_benchmark, spearman)
from .selection import (CandidateCache, SelectionState, class_entropy,
                        greedy_select, marginal, precompute, top_k_first_order)

__version__ = "0.1.0"
