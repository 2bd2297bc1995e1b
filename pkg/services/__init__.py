"""
Services package for BayesBoost.

This package contains the core services: data loading and validation, the
boosting engine, model selection, simulation and artifact files.
"""
