"""Robust multi-period economic dispatch with flexible demand.

Co-optimizes generator set-points, flexible-load schedules, and an
adjustable wind-uncertainty box.  Tail risk of wind curtailment and power
deficiency enters through sample-based CVaR terms; the adjustable-box
robust constraints are made deterministic with a surrogate affine policy,
and the resulting convex QP is solved by the in-repo interior-point
solver.
"""

__version__ = "0.1.0"
