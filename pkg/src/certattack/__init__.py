"""Certificate-guided evasion and poisoning attacks on graph networks.

The package trains a small dense GCN, certifies per-node robustness via
randomized smoothing over binary edge noise (evasion and poisoning threat
models), converts certified perturbation sizes into node weights, and runs
weighted PGD evasion and Minmax poisoning attacks under an edge-flip
budget, with sweep/reporting plumbing on top.
"""
from .attacks import (AttackConfig, AttackReport, WeightScheme, cr_loss,
                      discretize, eigenvector_centrality, evaluate_attack,
                      minmax_poisoning, node_weights, pgd_evasion,
                      project_budget, read_delta_edges, top_delta_binary,
                      write_delta_edges, write_report_csv)
from .errors import (CapacityError, CertAttackError, CertificationError,
                     DimensionError, DomainError, GraphLoadError,
                     NumericError, ParameterError, TrainingError)
from .gcn import (CROSS_ENTROPY, GCNParams, LossKind, TrainConfig, forward,
                  gradients, init_params, load_params, node_loss,
                  normalize_adjacency, param_gradients, predict_all,
                  save_params, train, train_arrays, weighted_loss)
from .graph import (DataSplit, Graph, classification_accuracy, load_graph,
                    split_nodes, synth_sbm)
from .experiment import (DatasetConfig, ExperimentConfig, ResultRow,
                         build_dataset, low_size_fraction, parse_config,
                         report_distribution, run_sweep, runtime_profile)
from .perturb import (Perturbation, apply_perturbation, matrix_to_vector,
                      num_pairs, relax_perturbation, triu_pairs,
                      vector_to_matrix)
from .smoothing import (Certificate, NoiseSpec, SmoothingConfig,
                        certified_size, certify_nodes, exact_smoothed_prob,
                        exact_smoothed_probs, lower_bound_prob,
                        mc_counts_evasion, mc_counts_poisoning, mix_seed,
                        sample_noise, worst_case_retained,
                        write_certificates_csv)

__version__ = "0.1.0"
