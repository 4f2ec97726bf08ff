"""Focused adversarial invariance regularization: estimators, simulators and identification oracles."""

from .estimators import (LinearFit, SelectionResult, fit_fair_bf, fit_fair_gb, fit_pooled_ls, refit_ls,
                         select_variables)
from .objective import MultiEnvDataset, fair_objective, fair_penalty, linear_sup_penalty, pooled_risk
from .trainer import Arch, FairConfig, TrainedModel, train_fair

__all__ = [
    "Arch", "FairConfig", "LinearFit", "MultiEnvDataset", "SelectionResult", "TrainedModel",
    "fair_objective", "fair_penalty", "fit_fair_bf", "fit_fair_gb", "fit_pooled_ls",
    "linear_sup_penalty", "pooled_risk", "refit_ls", "select_variables", "train_fair",
]
