"""Wind forecast/sample data and sample-based CVaR building blocks.

Two loss channels per wind bus and slot: curtailment when the realized
output exceeds the admissible upper bound w_bar + d_plus, and deficiency
when it falls below w_bar - d_minus.  The beta-CVaR of each channel is
the Rockafellar-Uryasev minimum of

    F(gamma) = gamma + (1 / (K (1-beta))) * sum_k [loss_k - gamma]^+

over the K historical samples.  `empirical_cvar` evaluates that minimum
directly from the sorted samples and serves as the independent oracle;
`CvarBlock` carries the (gamma, v, mu) linear-programming form that the
dispatch QP embeds, with mu coupling the losses to the decision
variables d_plus / d_minus.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .qp_solver import QpProblem, VarMap


@dataclass
class WindModel:
    """Forecast and per-slot sample sets for each wind bus.

    forecast: (n_w, T) MW.  samples[i][t]: 1-D array of K_{i,t} >= 1
    historical outputs (MW) for wind bus i at slot t.
    """

    buses: list[int]
    forecast: np.ndarray
    samples: list[list[np.ndarray]]

    def __post_init__(self):
        self.forecast = np.asarray(self.forecast, dtype=float)
        if self.forecast.ndim != 2 or self.forecast.shape[0] != len(self.buses):
            raise ValueError("forecast must be (n_wind_buses, T)")
        if np.any(self.forecast < 0):
            raise ValueError("forecast values must be nonnegative")
        if len(self.samples) != len(self.buses):
            raise ValueError("one sample list per wind bus required")
        clean = []
        for i, per_bus in enumerate(self.samples):
            if len(per_bus) != self.horizon:
                raise ValueError(f"wind bus {self.buses[i]}: need samples for every slot")
            row = []
            for t, arr in enumerate(per_bus):
                arr = np.asarray(arr, dtype=float).ravel()
                if arr.size < 1:
                    raise ValueError(f"wind bus {self.buses[i]}, slot {t + 1}: empty sample set")
                if np.any(arr < 0):
                    raise ValueError(f"wind bus {self.buses[i]}, slot {t + 1}: negative sample")
                row.append(arr)
            clean.append(row)
        self.samples = clean

    @property
    def n_wind(self) -> int:
        return len(self.buses)

    @property
    def horizon(self) -> int:
        return self.forecast.shape[1]


def synthetic_samples(forecast: np.ndarray, k: int = 31, noise: float = 0.4,
                      seed: int = 0) -> list[list[np.ndarray]]:
    """Seeded stand-in sample generator: forecast with bounded multiplicative noise.

    Each sample is forecast * (1 + U[-noise, +noise]), clipped at zero.
    K defaults to 31, one draw per day of a one-month record.
    """
    forecast = np.asarray(forecast, dtype=float)
    rng = np.random.default_rng(seed)
    factors = 1.0 + rng.uniform(-noise, noise, size=(forecast.shape[0], forecast.shape[1], k))
    draws = np.clip(forecast[:, :, None] * factors, 0.0, None)
    return [[draws[i, t].copy() for t in range(forecast.shape[1])]
            for i in range(forecast.shape[0])]


def read_samples_csv(path, buses: list[int], horizon: int) -> list[list[np.ndarray]]:
    """Load samples from a CSV with columns bus, slot, k, value_MW (1-based ids)."""
    table: dict[tuple[int, int], dict[int, float]] = {}
    with open(path, newline="", encoding="utf-8") as f:
        for row in csv.DictReader(f):
            key = (int(row["bus"]), int(row["slot"]))
            table.setdefault(key, {})[int(row["k"])] = float(row["value_MW"])
    out = []
    for bus in buses:
        per_bus = []
        for t in range(1, horizon + 1):
            cell = table.get((bus, t))
            if not cell:
                raise ValueError(f"sample CSV is missing (bus={bus}, slot={t})")
            per_bus.append(np.array([cell[k] for k in sorted(cell)]))
        out.append(per_bus)
    return out


def loss_curtail(w, w_bar, d_plus):
    """Curtailed wind power [w - (w_bar + d_plus)]^+."""
    return np.maximum(np.asarray(w, dtype=float) - (w_bar + d_plus), 0.0)


def loss_deficit(w, w_bar, d_minus):
    """Power deficiency [(w_bar - d_minus) - w]^+."""
    return np.maximum((w_bar - d_minus) - np.asarray(w, dtype=float), 0.0)


def empirical_cvar(losses, beta: float) -> float:
    """Sample beta-CVaR by direct minimization over the breakpoints.

    F(gamma) is convex piecewise linear with breakpoints at the sample
    values, so its minimum is attained at one of them (any gamma below
    the smallest sample gives the same value when beta = 0).  This is the
    oracle the LP blocks are validated against; it shares no machinery
    with the QP path.
    """
    if not 0.0 <= beta < 1.0:
        raise ValueError(f"risk level beta must lie in [0, 1), got {beta}")
    losses = np.asarray(losses, dtype=float).ravel()
    if losses.size == 0:
        raise ValueError("need at least one loss sample")
    k = losses.size
    gammas = losses[:, None]
    f_vals = gammas[:, 0] + np.sum(np.maximum(losses[None, :] - gammas, 0.0),
                                   axis=1) / (k * (1.0 - beta))
    return float(np.min(f_vals))


def empirical_var(losses, beta: float) -> float:
    """Sample beta-VaR: the smallest loss value with cdf >= beta."""
    if not 0.0 <= beta < 1.0:
        raise ValueError(f"risk level beta must lie in [0, 1), got {beta}")
    srt = np.sort(np.asarray(losses, dtype=float).ravel())
    idx = int(np.ceil(beta * srt.size)) - 1
    return float(srt[max(idx, 0)])


CURTAIL, DEFICIT = 1, 2  # loss sides


@dataclass
class CvarBlock:
    """LP block of one (wind bus, slot, side): variables gamma, v_k, mu_k.

    The block's contribution to the objective is
    weight-free F_hat = gamma + coeff * sum_k v_k with
    coeff = 1 / (K (1-beta)); constraints per sample k:

        v_k >= 0,  mu_k >= 0,  v_k + gamma >= mu_k,
        mu_k >= w_k - w_bar - d_plus      (curtailment side)
        mu_k >= w_bar - d_minus - w_k     (deficiency side)

    mu is kept explicit rather than folded into the rhs because the rhs
    contains the decision variable d_plus / d_minus.
    """

    wind_index: int  # 0-based position within the WindModel
    bus: int
    slot: int  # 0-based
    side: int  # CURTAIL or DEFICIT
    beta: float
    forecast: float
    samples: np.ndarray

    @property
    def k(self) -> int:
        return self.samples.size

    @property
    def coeff(self) -> float:
        return 1.0 / (self.k * (1.0 - self.beta))

    def losses(self, delta: float) -> np.ndarray:
        """Realized losses of this side at a fixed box half-width."""
        if self.side == CURTAIL:
            return loss_curtail(self.samples, self.forecast, delta)
        return loss_deficit(self.samples, self.forecast, delta)

    def value(self, gamma: float, v: np.ndarray) -> float:
        return float(gamma) + self.coeff * float(np.sum(v))


def build_cvar_blocks(wind: WindModel, beta: float,
                      sides=(CURTAIL, DEFICIT)) -> list[CvarBlock]:
    if not 0.0 <= beta < 1.0:
        raise ValueError(f"risk level beta must lie in [0, 1), got {beta}")
    blocks = []
    for side in sides:
        for i in range(wind.n_wind):
            for t in range(wind.horizon):
                blocks.append(CvarBlock(
                    wind_index=i, bus=wind.buses[i], slot=t, side=side,
                    beta=beta, forecast=float(wind.forecast[i, t]),
                    samples=wind.samples[i][t]))
    return blocks


def allocate_block_vars(blocks: list[CvarBlock], vm: VarMap) -> None:
    """Reserve gamma / v / mu columns for every block in the global map."""
    for b in blocks:
        key = (b.side, b.wind_index, b.slot)
        vm.add(("gamma",) + key, 1)
        vm.add(("v",) + key, b.k)
        vm.add(("mu",) + key, b.k)


def block_rows(blocks: list[CvarBlock], vm: VarMap, n_wind: int,
               delta_keys=("dminus", "dplus")):
    """Inequality rows of all blocks against a global variable map.

    Returns (row_idx, col_idx, coeffs, rhs, labels) in COO form, rows
    expressed as `<=`.  The mu rows couple to the box variables named by
    delta_keys (slot-major layout, index t * n_wind + wind_index).
    """
    rows_i: list[int] = []
    cols: list[int] = []
    vals: list[float] = []
    rhs: list[float] = []
    labels: list[str] = []

    def put(cols_vals, bound, label):
        r = len(rhs)
        for cidx, v in cols_vals:
            rows_i.append(r)
            cols.append(cidx)
            vals.append(v)
        rhs.append(bound)
        labels.append(label)

    for b in blocks:
        key = (b.side, b.wind_index, b.slot)
        g0 = vm.start(("gamma",) + key)
        v0 = vm.start(("v",) + key)
        m0 = vm.start(("mu",) + key)
        d_key = delta_keys[1] if b.side == CURTAIL else delta_keys[0]
        d_col = vm.start((d_key,)) + b.slot * n_wind + b.wind_index
        tag = f"s{b.side},i={b.bus},t={b.slot + 1}"
        for k in range(b.k):
            put([(v0 + k, -1.0)], 0.0, f"cvar_v[{tag},k={k + 1}]")
            put([(m0 + k, -1.0)], 0.0, f"cvar_mu[{tag},k={k + 1}]")
            put([(m0 + k, 1.0), (v0 + k, -1.0), (g0, -1.0)], 0.0,
                f"cvar_link[{tag},k={k + 1}]")
            # mu >= |sample - admissible bound|^+ rhs, linear in delta
            if b.side == CURTAIL:
                bound = -(float(b.samples[k]) - b.forecast)
            else:
                bound = float(b.samples[k]) - b.forecast
            put([(m0 + k, -1.0), (d_col, -1.0)], bound,
                f"cvar_tail[{tag},k={k + 1}]")
    return rows_i, cols, vals, np.array(rhs), labels


def objective_terms(blocks: list[CvarBlock], vm: VarMap, eta1: float, eta2: float,
                    c: np.ndarray) -> None:
    """Add eta^s * F_hat^s linear coefficients into the objective vector."""
    for b in blocks:
        eta = eta1 if b.side == CURTAIL else eta2
        key = (b.side, b.wind_index, b.slot)
        c[vm.start(("gamma",) + key)] += eta
        c[vm.sl(("v",) + key)] += eta * b.coeff


def block_lp(block: CvarBlock, delta: float) -> QpProblem:
    """Standalone LP of one block at a fixed box half-width.

    Variables [gamma, v_1..v_K, mu_1..m_K]; minimizing it reproduces the
    empirical CVaR of the clipped losses, which is how the LP
    transcription is validated against the sort-based oracle.
    """
    k = block.k
    n = 1 + 2 * k
    c = np.zeros(n)
    c[0] = 1.0
    c[1:1 + k] = block.coeff
    rows = []
    rhs = []
    for j in range(k):
        r = np.zeros(n)
        r[1 + j] = -1.0
        rows.append(r)
        rhs.append(0.0)
        r = np.zeros(n)
        r[1 + k + j] = -1.0
        rows.append(r)
        rhs.append(0.0)
        r = np.zeros(n)
        r[1 + k + j] = 1.0
        r[1 + j] = -1.0
        r[0] = -1.0
        rows.append(r)
        rhs.append(0.0)
        r = np.zeros(n)
        r[1 + k + j] = -1.0
        rows.append(r)
        if block.side == CURTAIL:
            rhs.append(-(float(block.samples[j]) - block.forecast - delta))
        else:
            rhs.append(-(block.forecast - delta - float(block.samples[j])))
    return QpProblem(q_mat=np.zeros((n, n)), c=c, g_mat=np.array(rows),
                     h=np.array(rhs))
