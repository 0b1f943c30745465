"""Toolkit for analysing origin-destination mobility flows in urban transit networks.

Submodules
----------
ingest      tap pairing, period assignment, working-day filtering
flowgraph   directed station-to-station flow matrices
community   directed Louvain, consensus partitions, snapshot variability, GMM day clustering
activity    daily trip chains and NxEy activity-pattern mining
spatial     sigmoid attraction model, gravity baseline, correlation evaluation
temporal    volume recurrence simulation and parameter estimation
gam         penalized-spline generalized additive models
synth       seeded synthetic generators with ground truth
cli         pipeline orchestration (``transitflow`` executable)
"""

__version__ = "0.1.0"
