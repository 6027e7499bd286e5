"""Differentially private contact tracing with Factorized Neighbors.

Subpackages: ``model`` (SEIR model), ``fn`` (inference), ``privacy``
(accounting and the log-normal mechanism), ``baselines``, ``simulator``
and ``harness`` (experiment sweeps).
"""

__version__ = "0.1.0"
