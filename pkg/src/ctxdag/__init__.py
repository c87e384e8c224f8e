"""Context-specific DAG learning with a differentiable acyclicity projection."""

from .acyclic import ProjectionConfig, grad_h_s, h_s, project_logdet, project_logdet_batch
from .errors import ConfigError, ContractError, DomainError, SolverError, TrainingError
from .evaluation import RecoveryReport, evaluate_method, f1, select_lambda, shd
from .graph import is_acyclic, spectral_radius_squared, threshold_to_dag, topological_order
from .l1 import INFERENCE, TRAIN, SparsityBudget, compute_kappa, project_l1
from .network import DataBatch, MaskSpec, NetworkWeights, model_backward, model_forward, net_forward
from .synthetic import GeneratorSpec, make_generator, sample_dataset, sample_fixed_dataset
from .trainer import (TrainConfig, fit_clustered_dag, fit_fixed_dag, fit_path, fit_sorted_dag,
                      pretrain_unprojected)

__version__ = "0.1.0"

__all__ = [
    "ProjectionConfig",
    "grad_h_s",
    "h_s",
    "project_logdet",
    "project_logdet_batch",
    "ConfigError",
    "ContractError",
    "DomainError",
    "SolverError",
    "TrainingError",
    "RecoveryReport",
    "evaluate_method",
    "f1",
    "select_lambda",
    "shd",
    "is_acyclic",
    "spectral_radius_squared",
    "threshold_to_dag",
    "topological_order",
    "INFERENCE",
    "TRAIN",
    "SparsityBudget",
    "compute_kappa",
    "project_l1",
    "DataBatch",
    "MaskSpec",
    "NetworkWeights",
    "model_backward",
    "model_forward",
    "net_forward",
    "GeneratorSpec",
    "make_generator",
    "sample_dataset",
    "sample_fixed_dataset",
    "TrainConfig",
    "fit_clustered_dag",
    "fit_fixed_dag",
    "fit_path",
    "fit_sorted_dag",
    "pretrain_unprojected",
]
