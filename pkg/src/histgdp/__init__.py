"""Historical GDP per capita estimation from structured biography records.

A numpy-based library that turns records of where notable historical
figures were born and died into per-location features (popularity-weighted
occupation counts, complexity indices, SVD factors), fits per-period
elastic-net models against known GDP per capita observations, and produces
gated, rescaled out-of-sample estimates with bootstrap confidence
intervals, plus an evaluation harness and Shapley-value attribution.
"""

__version__ = "0.1.0"
