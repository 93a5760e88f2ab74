"""Computation services for the Lindblad Learner."""

from services.propagator import LindbladGenerator, SolverConfig, evolve, integrate
from services.likelihood import total_ll, ll_gradient, ll_and_gradient, predict_probabilities
from services.estimator import OptimizerConfig, FitResult, fit, init_params, hessian_uncertainty
from services.selection import explanatory_power, wilks_pvalue, aic_bic, greedy_path
