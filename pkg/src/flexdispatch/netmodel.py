"""Transmission network model and DC power-flow sensitivities.

Buses are numbered 1..N.  Line flows follow the lossless DC approximation:
with nodal susceptance matrix B (built from 1/reactance) and a slack bus
absorbing the angle reference, flows respond linearly to balanced nodal
injections through the PTDF matrix.  Reactances only enter through
ratios, so flow limits in MW pair directly with injections in MW and no
explicit MVA base is needed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DisconnectedNetworkError(ValueError):
    """Reduced susceptance matrix is singular: the network graph is not connected."""


@dataclass(frozen=True)
class Bus:
    id: int  # 1-based
    has_generator: bool = False
    has_fixed_load: bool = False
    has_wind: bool = False
    has_flex_load: bool = False


@dataclass(frozen=True)
class Line:
    from_bus: int
    to_bus: int
    reactance: float  # per unit, > 0
    flow_limit: float  # MW, > 0


class NetworkModel:
    """Immutable network: buses, lines, PTDF and device incidence maps.

    Construction validates the data, runs a connectivity check, and
    precomputes the PTDF matrix `ptdf` (M x N, slack column zero) and the
    0/1 bus-incidence matrices `h_g`, `h_d`, `h_w`, `h_f` (one column per
    device, devices ordered by bus id).  All arrays are frozen; instances
    are safe to share across concurrent solves.
    """

    def __init__(self, buses: list[Bus], lines: list[Line], slack_bus: int = 1):
        if not buses:
            raise ValueError("network needs at least one bus")
        ids = sorted(b.id for b in buses)
        if ids != list(range(1, len(buses) + 1)):
            raise ValueError("bus ids must be unique and contiguous 1..N")
        self.buses = tuple(sorted(buses, key=lambda b: b.id))
        n = len(self.buses)
        for ln in lines:
            if not (1 <= ln.from_bus <= n and 1 <= ln.to_bus <= n):
                raise ValueError(f"line endpoint out of range: {ln}")
            if ln.from_bus == ln.to_bus:
                raise ValueError(f"line endpoints coincide: {ln}")
            if ln.reactance <= 0:
                raise ValueError(f"line reactance must be > 0: {ln}")
            if ln.flow_limit <= 0:
                raise ValueError(f"line flow limit must be > 0: {ln}")
        self.lines = tuple(lines)
        if not (1 <= slack_bus <= n):
            raise ValueError(f"slack bus {slack_bus} not in 1..{n}")
        self.slack_bus = slack_bus
        self.ptdf = compute_ptdf(self, slack_bus)
        self.h_g, self.h_d, self.h_w, self.h_f = build_incidence(self)
        self.flow_limits = np.array([ln.flow_limit for ln in self.lines])
        for arr in (self.ptdf, self.h_g, self.h_d, self.h_w, self.h_f,
                    self.flow_limits):
            arr.flags.writeable = False

    @property
    def n_buses(self) -> int:
        return len(self.buses)

    @property
    def n_lines(self) -> int:
        return len(self.lines)

    def buses_with(self, kind: str) -> list[int]:
        """1-based bus ids carrying devices of the given kind flag."""
        return [b.id for b in self.buses if getattr(b, "has_" + kind)]

    def line_flows(self, injections: np.ndarray) -> np.ndarray:
        """Flows (MW, from->to positive) for a balanced injection vector."""
        return self.ptdf @ np.asarray(injections, dtype=float)


def compute_ptdf(network, slack: int) -> np.ndarray:
    """Generation-shift-factor matrix of a connected network.

    Returns the M x N matrix mapping balanced nodal injections to line
    flows (positive in the from->to direction).  The slack column is
    zero.  Built by factorizing the slack-reduced nodal susceptance
    matrix; dense solves are fine at the tens-of-buses scale this
    targets.
    """
    n = network.n_buses
    lines = network.lines
    if not (1 <= slack <= n):
        raise ValueError(f"slack bus {slack} not in 1..{n}")
    _check_connected(n, lines)
    m = len(lines)
    b_bus = np.zeros((n, n))
    b_flow = np.zeros((m, n))
    for k, ln in enumerate(lines):
        f, t = ln.from_bus - 1, ln.to_bus - 1
        b = 1.0 / ln.reactance
        b_bus[f, f] += b
        b_bus[t, t] += b
        b_bus[f, t] -= b
        b_bus[t, f] -= b
        b_flow[k, f] = b
        b_flow[k, t] = -b
    keep = [i for i in range(n) if i != slack - 1]
    if not keep:  # single-bus network: no flows to resolve
        return np.zeros((m, n))
    b_red = b_bus[np.ix_(keep, keep)]
    try:
        gamma_red = np.linalg.solve(b_red, b_flow[:, keep].T).T
    except np.linalg.LinAlgError as exc:
        raise DisconnectedNetworkError(
            "reduced susceptance matrix is singular") from exc
    gamma = np.zeros((m, n))
    gamma[:, keep] = gamma_red
    return gamma


def build_incidence(network):
    """Device-to-bus 0/1 incidence matrices (H_g, H_d, H_w, H_f).

    Each matrix is N x n_devices with exactly one 1 per column; columns
    follow ascending bus id, matching the device ordering used
    throughout.
    """
    n = network.n_buses
    mats = []
    for kind in ("generator", "fixed_load", "wind", "flex_load"):
        mats.append(incidence_matrix(n, network.buses_with(kind)))
    return tuple(mats)


def incidence_matrix(n_buses: int, device_buses: list[int]) -> np.ndarray:
    h = np.zeros((n_buses, len(device_buses)))
    for j, bus in enumerate(device_buses):
        h[bus - 1, j] = 1.0
    return h


def _check_connected(n: int, lines) -> None:
    if n == 1:
        return
    adj: list[list[int]] = [[] for _ in range(n)]
    for ln in lines:
        adj[ln.from_bus - 1].append(ln.to_bus - 1)
        adj[ln.to_bus - 1].append(ln.from_bus - 1)
    seen = {0}
    stack = [0]
    while stack:
        for nb in adj[stack.pop()]:
            if nb not in seen:
                seen.add(nb)
                stack.append(nb)
    if len(seen) != n:
        raise DisconnectedNetworkError(
            f"network is not connected ({n - len(seen)} unreachable buses); "
            "the reduced susceptance matrix would be singular")
