"""
Domain types for BayesBoost.

This package contains the plain data types shared by the services:
datasets, fit state and traces, selection results and evaluation metrics.
"""
