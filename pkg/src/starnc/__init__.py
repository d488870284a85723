"""Joint channel and network coding for star networks.

Analytic expected-cost models for RLNC and TDMA/ARQ, throughput-maximizing
choices of block count and code rate, and a Monte Carlo simulator that
cross-checks the analytics.
"""

__version__ = "0.1.0"
