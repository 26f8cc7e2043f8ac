"""Multi-view representation learning toolkit.

Linear, kernel, and deep canonical correlation analysis, multi-view
autoencoder objectives, stochastic trainers, a clustering/classification
evaluation harness, synthetic two-view generators, and an empirical
validator for the minibatch covariance-estimation error bound.
"""

__version__ = "0.1.0"
