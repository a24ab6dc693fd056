"""Load aggregators with multi-dimensional flexibility (MDF).

An aggregator's feasible consumption region over T hourly slots is a box
on per-slot power draw combined with envelope bounds on cumulative
energy: x_min <= x <= x_max and l <= Lx <= u, where L is the
lower-triangular all-ones prefix-sum matrix.  Slot length is 1 h, so
cumulative sums of MW are numerically MWh.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FEASIBILITY_TOL = 1e-9  # absolute, MW / MWh scale


class InfeasibleEnvelopeError(ValueError):
    """No schedule satisfies the power box together with the energy envelope."""


def cumulative_matrix(t_horizon: int) -> np.ndarray:
    """T x T lower-triangular matrix of ones: (Lx)_t = sum_{t'<=t} x_t'."""
    return np.tril(np.ones((t_horizon, t_horizon)))


@dataclass
class FlexibleLoadSpec:
    """Envelope of one aggregator: bus, cumulative bounds l/u, power bounds."""

    bus: int
    l: np.ndarray  # MWh, cumulative lower bounds
    u: np.ndarray  # MWh, cumulative upper bounds
    x_min: np.ndarray  # MW
    x_max: np.ndarray  # MW

    def __post_init__(self):
        self.l = np.asarray(self.l, dtype=float).ravel()
        self.u = np.asarray(self.u, dtype=float).ravel()
        self.x_min = np.asarray(self.x_min, dtype=float).ravel()
        self.x_max = np.asarray(self.x_max, dtype=float).ravel()
        t = self.l.size
        if t < 1 or any(v.size != t for v in (self.u, self.x_min, self.x_max)):
            raise ValueError("l, u, x_min, x_max must share one length >= 1")
        if np.any(self.l > self.u + FEASIBILITY_TOL):
            raise InfeasibleEnvelopeError(f"l > u at slot {int(np.argmax(self.l - self.u)) + 1}")
        if np.any(self.x_min > self.x_max + FEASIBILITY_TOL):
            raise InfeasibleEnvelopeError(
                f"x_min > x_max at slot {int(np.argmax(self.x_min - self.x_max)) + 1}")
        ok, slot = _envelope_feasible(self)
        if not ok:
            raise InfeasibleEnvelopeError(
                f"power bounds cannot track the cumulative envelope (slot {slot})")

    @property
    def horizon(self) -> int:
        return self.l.size


def _envelope_feasible(spec: FlexibleLoadSpec):
    """Exact feasibility test by propagating the reachable cumulative interval.

    Walk t = 1..T keeping the interval of cumulative energies reachable
    under the power box and clip it to [l_t, u_t]; an empty intersection
    pins down the first infeasible slot.  For a chain of interval
    constraints this greedy propagation is necessary and sufficient.
    """
    lo = hi = 0.0
    for t in range(spec.horizon):
        lo += spec.x_min[t]
        hi += spec.x_max[t]
        lo = max(lo, spec.l[t])
        hi = min(hi, spec.u[t])
        if lo > hi + FEASIBILITY_TOL:
            return False, t + 1
    return True, None


@dataclass
class EnvelopeRows:
    """4T inequality rows a_mat @ x <= rhs over the T power variables.

    Canonical order (each block by slot ascending): cumulative-lower,
    cumulative-upper, power-lower, power-upper.  The assembler and every
    checker index rows in this order.
    """

    a_mat: np.ndarray
    rhs: np.ndarray
    labels: list[str]


def envelope_rows(spec: FlexibleLoadSpec) -> EnvelopeRows:
    """All MDF constraints of one aggregator as `<=` rows."""
    ok, slot = _envelope_feasible(spec)
    if not ok:
        raise InfeasibleEnvelopeError(
            f"power bounds cannot track the cumulative envelope (slot {slot})")
    t = spec.horizon
    lmat = cumulative_matrix(t)
    eye = np.eye(t)
    a_mat = np.vstack([-lmat, lmat, -eye, eye])
    rhs = np.concatenate([-spec.l, spec.u, -spec.x_min, spec.x_max])
    labels = ([f"cum_lower[t={i + 1}]" for i in range(t)]
              + [f"cum_upper[t={i + 1}]" for i in range(t)]
              + [f"power_lower[t={i + 1}]" for i in range(t)]
              + [f"power_upper[t={i + 1}]" for i in range(t)])
    return EnvelopeRows(a_mat, rhs, labels)


def check_schedule(spec: FlexibleLoadSpec, x: np.ndarray,
                   tol: float = FEASIBILITY_TOL):
    """(ok, first violated row label) for a candidate schedule.

    Violations are checked in the canonical row order with prefix sums
    computed directly, so the check does not depend on envelope_rows.
    """
    x = np.asarray(x, dtype=float).ravel()
    if x.size != spec.horizon:
        raise ValueError("schedule length does not match the spec horizon")
    cum = np.cumsum(x)
    for name, lhs, bound in (("cum_lower", -cum, -spec.l),
                             ("cum_upper", cum, spec.u),
                             ("power_lower", -x, -spec.x_min),
                             ("power_upper", x, spec.x_max)):
        over = lhs - bound
        if np.any(over > tol):
            return False, f"{name}[t={int(np.argmax(over > tol)) + 1}]"
    return True, None
