"""Perturbation bounds for approximate Markov chains and subsampled MCMC."""

__version__ = "0.1.0"
