"""Disparate impact in lending markets with partially observed repayment outcomes.

A discrete-time hazard model imputes the return rate of unfunded loans; the
completed data then give binned funding-rate differences between genders,
OLS decompositions, and a Bayesian threshold test of the funding decision.
"""

__version__ = "0.1.0"
