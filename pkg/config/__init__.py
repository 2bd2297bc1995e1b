"""
Configuration package for BayesBoost.

This package contains environment settings and the validated run-time models
(hyperparameters, simulation and command configuration).
"""
