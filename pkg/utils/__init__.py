"""
Utility package for BayesBoost.

This package contains the numerical helpers (linear algebra, samplers and
mode estimators) and the ambient plumbing: errors, logging and timing.
"""
