"""Stochastic block models fitted by belief propagation, with cavity-based
leave-one-out cross-validation for choosing the number of clusters."""

__version__ = "0.1.0"
