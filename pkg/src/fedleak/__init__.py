"""Privacy leakage of federated learning updates: FedAvg simulation, update
Jacobian analysis, gradient-inversion attacks and leakage bounds."""

from . import attack, fedcore, jacobian, kernels, models, privacy
from .attack import AttackConfig, ReconstructionTrace, reconstruct
from .fedcore import ClientDataset, TrainConfig, client_update, fedavg_round, run_training
from .jacobian import UpdateJacobian, construct_collision, update_jacobian_analytic_e1, update_jacobian_fd
from .models import ModelKind, ModelSpec
from .privacy import BoundInputs, leakage_upper_bound, privacy_leakage

__version__ = "0.1.0"

__all__ = [
    "AttackConfig",
    "BoundInputs",
    "ClientDataset",
    "ModelKind",
    "ModelSpec",
    "ReconstructionTrace",
    "TrainConfig",
    "UpdateJacobian",
    "attack",
    "client_update",
    "construct_collision",
    "fedavg_round",
    "fedcore",
    "jacobian",
    "kernels",
    "leakage_upper_bound",
    "models",
    "privacy",
    "privacy_leakage",
    "reconstruct",
    "run_training",
    "update_jacobian_analytic_e1",
    "update_jacobian_fd",
]
