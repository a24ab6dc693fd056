"""Adjustable-box robust constraints via surrogate affine approximation.

Every constraint that must hold for all wind deviations delta in the box
[-d_minus, d_plus] is collected as a row of

    A y + B dx(delta) + D delta <= J.

The box is reparameterized onto the fixed unit cube Omega through
delta_t = -diag(d_minus_t) eps_minus_t + diag(d_plus_t) eps_plus_t, and
the load recourse is an affine map of the cube coordinates,
dx_t = E_minus_t eps_minus_t + E_plus_t eps_plus_t, block diagonal in t
so adjustments at a slot react only to that slot's deviation.  Because
Omega is fixed, LP duality turns each robust row into finitely many
linear rows over (y, E, d_minus, d_plus) and one nonnegative dual vector
pi per row -- even though the box half-widths are themselves decision
variables.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .qp_solver import VarMap


class AssemblyError(ValueError):
    """Dimension mismatch while assembling the robust system."""


@dataclass(frozen=True)
class RowTag:
    kind: str  # cum_lower | cum_upper | power_lower | power_upper | flow_pos | flow_neg | gen_lower | gen_upper
    index: int  # aggregator / line / generator position (0-based)
    slot: int  # 0-based

    def __str__(self):
        return f"{self.kind}[{self.index + 1},t={self.slot + 1}]"


@dataclass
class RecoursePolicy:
    """Per-slot affine recourse of the adjustable devices.

    e_minus / e_plus: (T, n_dev, n_w) MW of adjustment per unit of the
    corresponding cube coordinate.  No intercept: dx(0) = 0, so
    set-points and robust rows share the same base variables.
    """

    e_minus: np.ndarray
    e_plus: np.ndarray

    def __post_init__(self):
        self.e_minus = np.asarray(self.e_minus, dtype=float)
        self.e_plus = np.asarray(self.e_plus, dtype=float)
        if self.e_minus.shape != self.e_plus.shape or self.e_minus.ndim != 3:
            raise AssemblyError("recourse tensors must share shape (T, n_dev, n_w)")

    def adjustment(self, eps_minus: np.ndarray, eps_plus: np.ndarray) -> np.ndarray:
        """(T, n_dev) adjustment at cube coordinates of shape (T, n_w)."""
        return (np.einsum("tfj,tj->tf", self.e_minus, eps_minus)
                + np.einsum("tfj,tj->tf", self.e_plus, eps_plus))


@dataclass
class BoxScaling:
    """Half-widths of the admissible deviation box, (T, n_w), >= 0."""

    d_minus: np.ndarray
    d_plus: np.ndarray

    def __post_init__(self):
        self.d_minus = np.asarray(self.d_minus, dtype=float)
        self.d_plus = np.asarray(self.d_plus, dtype=float)
        if self.d_minus.shape != self.d_plus.shape or self.d_minus.ndim != 2:
            raise AssemblyError("box arrays must share shape (T, n_w)")

    def deviation(self, eps_minus: np.ndarray, eps_plus: np.ndarray) -> np.ndarray:
        """delta(eps): (T, n_w) wind deviation at cube coordinates."""
        return -self.d_minus * eps_minus + self.d_plus * eps_plus


class RobustSystem:
    """Rows A y + B dx + D delta <= J with slot-major dx / delta columns.

    `a` is kept per row as (cols, vals) over the global variable map; B
    and D are dense (rows are few and dx/delta spaces are small).  Every
    row carries a RowTag.
    """

    def __init__(self, n_dev: int, n_wind: int, horizon: int):
        self.n_dev = n_dev
        self.n_wind = n_wind
        self.horizon = horizon
        self.a_cols: list[np.ndarray] = []
        self.a_vals: list[np.ndarray] = []
        self.b_mat = np.zeros((0, horizon * n_dev))
        self.d_mat = np.zeros((0, horizon * n_wind))
        self.rhs = np.zeros(0)
        self.tags: list[RowTag] = []
        self._b_rows: list[np.ndarray] = []
        self._d_rows: list[np.ndarray] = []
        self._rhs: list[float] = []

    def add_row(self, a_cols, a_vals, b_row, d_row, rhs: float, tag: RowTag):
        b_row = np.asarray(b_row, dtype=float)
        d_row = np.asarray(d_row, dtype=float)
        if b_row.size != self.horizon * self.n_dev or d_row.size != self.horizon * self.n_wind:
            raise AssemblyError(f"row {tag}: B/D width mismatch")
        self.a_cols.append(np.asarray(a_cols, dtype=int))
        self.a_vals.append(np.asarray(a_vals, dtype=float))
        self._b_rows.append(b_row)
        self._d_rows.append(d_row)
        self._rhs.append(float(rhs))
        self.tags.append(tag)

    def finalize(self):
        self.b_mat = np.array(self._b_rows) if self._b_rows else self.b_mat
        self.d_mat = np.array(self._d_rows) if self._d_rows else self.d_mat
        self.rhs = np.array(self._rhs)
        return self

    @property
    def n_rows(self) -> int:
        return len(self.tags)

    def nominal_value(self, r: int, z: np.ndarray) -> float:
        return float(z[self.a_cols[r]] @ self.a_vals[r])


def assemble_robust_system(network, flexspecs, wind, fixed_loads: np.ndarray,
                           vm: VarMap) -> RobustSystem:
    """Robust rows of the dispatch problem: MDF envelopes under recourse
    and line-flow limits under wind deviation.

    The balance equality is not placed here; it is enforced exactly by
    coefficient matching (see balance_coefficient_match).  fixed_loads is
    (n_d, T) aligned with the network's fixed-load incidence columns.
    """
    n_f = len(flexspecs)
    n_w = wind.n_wind
    t_horizon = wind.horizon
    sys = RobustSystem(n_f, n_w, t_horizon)
    xbar0 = vm.start(("xbar",))
    g0 = vm.start(("g",))
    n_g = network.h_g.shape[1]
    if any(s.horizon != t_horizon for s in flexspecs):
        raise AssemblyError("flexible-load horizons disagree with the wind model")
    fixed_loads = np.asarray(fixed_loads, dtype=float)
    if fixed_loads.shape != (network.h_d.shape[1], t_horizon):
        raise AssemblyError("fixed_loads must be (n_d, T)")

    # MDF rows, canonical envelope order per aggregator.
    for f, spec in enumerate(flexspecs):
        for kind, sgn, bounds in (("cum_lower", -1.0, -spec.l),
                                  ("cum_upper", 1.0, spec.u)):
            for t in range(t_horizon):
                cols = [xbar0 + tp * n_f + f for tp in range(t + 1)]
                vals = [sgn] * (t + 1)
                b_row = np.zeros(t_horizon * n_f)
                b_row[[tp * n_f + f for tp in range(t + 1)]] = sgn
                sys.add_row(cols, vals, b_row, np.zeros(t_horizon * n_w),
                            bounds[t], RowTag(kind, f, t))
        for kind, sgn, bounds in (("power_lower", -1.0, -spec.x_min),
                                  ("power_upper", 1.0, spec.x_max)):
            for t in range(t_horizon):
                b_row = np.zeros(t_horizon * n_f)
                b_row[t * n_f + f] = sgn
                sys.add_row([xbar0 + t * n_f + f], [sgn], b_row,
                            np.zeros(t_horizon * n_w), bounds[t],
                            RowTag(kind, f, t))

    # Line-flow limits in both directions under deviation and recourse.
    gamma_g = network.ptdf @ network.h_g
    gamma_d = network.ptdf @ network.h_d
    gamma_w = network.ptdf @ network.h_w
    gamma_f = network.ptdf @ network.h_f
    q = network.flow_limits
    for t in range(t_horizon):
        base = gamma_w @ wind.forecast[:, t] - gamma_d @ fixed_loads[:, t]
        for m in range(network.n_lines):
            for kind, sgn in (("flow_pos", 1.0), ("flow_neg", -1.0)):
                cols = [g0 + t * n_g + i for i in range(n_g)]
                vals = [sgn * gamma_g[m, i] for i in range(n_g)]
                cols += [xbar0 + t * n_f + f for f in range(n_f)]
                vals += [-sgn * gamma_f[m, f] for f in range(n_f)]
                b_row = np.zeros(t_horizon * n_f)
                b_row[t * n_f:(t + 1) * n_f] = -sgn * gamma_f[m]
                d_row = np.zeros(t_horizon * n_w)
                d_row[t * n_w:(t + 1) * n_w] = sgn * gamma_w[m]
                sys.add_row(cols, vals, b_row, d_row,
                            q[m] - sgn * base[m], RowTag(kind, m, t))
    return sys.finalize()


def balance_coefficient_match(n_g: int, n_f: int, n_w: int, horizon: int,
                              wind_total: np.ndarray, load_total: np.ndarray,
                              vm: VarMap):
    """Equality rows enforcing power balance for every point of the box.

    Per slot: (a) the nominal balance 1'(g + w_bar - d - x_bar) = 0, and
    (b) columnwise coefficient matching 1'E_minus_t = -(d_minus_t)' and
    1'E_plus_t = (d_plus_t)'.  An affine function vanishes on a
    full-dimensional box iff all its coefficients vanish, so (a)+(b) is
    equivalent to the robust equality -- exact, not conservative.
    Returns (row_idx, col_idx, vals, rhs, labels) in COO form.
    """
    rows_i: list[int] = []
    cols: list[int] = []
    vals: list[float] = []
    rhs: list[float] = []
    labels: list[str] = []
    g0 = vm.start(("g",))
    xbar0 = vm.start(("xbar",))
    em0 = vm.start(("eminus",))
    ep0 = vm.start(("eplus",))
    dm0 = vm.start(("dminus",))
    dp0 = vm.start(("dplus",))

    def put(cv, b, label):
        r = len(rhs)
        for cidx, v in cv:
            rows_i.append(r)
            cols.append(cidx)
            vals.append(v)
        rhs.append(b)
        labels.append(label)

    for t in range(horizon):
        cv = [(g0 + t * n_g + i, 1.0) for i in range(n_g)]
        cv += [(xbar0 + t * n_f + f, -1.0) for f in range(n_f)]
        put(cv, float(load_total[t] - wind_total[t]), f"balance[t={t + 1}]")
    for t in range(horizon):
        for j in range(n_w):
            cv = [(em0 + t * n_f * n_w + f * n_w + j, 1.0) for f in range(n_f)]
            cv.append((dm0 + t * n_w + j, 1.0))
            put(cv, 0.0, f"match_minus[j={j + 1},t={t + 1}]")
            cv = [(ep0 + t * n_f * n_w + f * n_w + j, 1.0) for f in range(n_f)]
            cv.append((dp0 + t * n_w + j, -1.0))
            put(cv, 0.0, f"match_plus[j={j + 1},t={t + 1}]")
    return rows_i, cols, vals, np.array(rhs), labels


@dataclass
class DualizedRows:
    """Deterministic `<=` rows equivalent to the robust system."""

    rows_i: list[int]
    cols: list[int]
    vals: list[float]
    rhs: np.ndarray
    labels: list[str]
    pi_support: list[list[tuple[int, int, int]]]  # per robust row: (t, j, sign)


def saa_dualize(system: RobustSystem, vm: VarMap,
                e_keys=("eminus", "eplus"), box_keys=("dminus", "dplus"),
                box_values=None) -> DualizedRows:
    """Dual-form rows of every robust row over the unit cube.

    Per robust row r with cube-coordinate coefficients c (linear in the
    recourse and box variables) the emitted system is

        c_q - pi_{r,q} <= 0         (one per supported coordinate q)
        -pi_{r,q}      <= 0
        A_r y + sum_q pi_{r,q} <= J_r

    which is feasible iff the row holds for every point of the cube.
    Coordinates whose slot carries no recourse or deviation coefficient
    are structurally zero and get no dual entry; cumulative rows at slot
    t keep entries for all slots <= t.  When box_values is given (pinned
    (d_minus, d_plus) arrays of shape (T, n_w)) the box term becomes a
    constant on the right-hand side instead of a coupling to box_keys.
    """
    n_f, n_w, horizon = system.n_dev, system.n_wind, system.horizon
    rows_i: list[int] = []
    cols: list[int] = []
    vals: list[float] = []
    rhs: list[float] = []
    labels: list[str] = []
    support: list[list[tuple[int, int, int]]] = []
    em0 = vm.start((e_keys[0],))
    ep0 = vm.start((e_keys[1],))
    if box_values is None:
        dm0 = vm.start((box_keys[0],))
        dp0 = vm.start((box_keys[1],))
    else:
        dm_val = np.asarray(box_values[0], dtype=float)
        dp_val = np.asarray(box_values[1], dtype=float)

    def put(cv, b, label):
        r = len(rhs)
        for cidx, v in cv:
            if v != 0.0:
                rows_i.append(r)
                cols.append(cidx)
                vals.append(v)
        rhs.append(b)
        labels.append(label)

    for r in range(system.n_rows):
        b_row = system.b_mat[r]
        d_row = system.d_mat[r]
        sup: list[tuple[int, int, int]] = []
        for t in range(horizon):
            b_blk = b_row[t * n_f:(t + 1) * n_f]
            has_b = np.any(b_blk != 0.0)
            for j in range(n_w):
                if has_b or d_row[t * n_w + j] != 0.0:
                    sup.append((t, j, -1))
                    sup.append((t, j, +1))
        pi_sl = vm.add(("pi", r), len(sup))
        tag = str(system.tags[r])
        for q, (t, j, sign) in enumerate(sup):
            b_blk = b_row[t * n_f:(t + 1) * n_f]
            d_coef = d_row[t * n_w + j]
            e0 = em0 if sign < 0 else ep0
            cv = [(e0 + t * n_f * n_w + f * n_w + j, b_blk[f])
                  for f in range(n_f)]
            bound = 0.0
            if box_values is None:
                if sign < 0:
                    cv.append((dm0 + t * n_w + j, -d_coef))
                else:
                    cv.append((dp0 + t * n_w + j, d_coef))
            else:
                bound = d_coef * dm_val[t, j] if sign < 0 else -d_coef * dp_val[t, j]
            cv.append((pi_sl.start + q, -1.0))
            sgn = "-" if sign < 0 else "+"
            put(cv, bound, f"saa_coef[{tag},t={t + 1},j={j + 1},{sgn}]")
            put([(pi_sl.start + q, -1.0)], 0.0,
                f"saa_pi_nonneg[{tag},t={t + 1},j={j + 1},{sgn}]")
        cv = list(zip(system.a_cols[r].tolist(), system.a_vals[r].tolist()))
        cv += [(pi_sl.start + q, 1.0) for q in range(len(sup))]
        put(cv, float(system.rhs[r]), f"saa_row[{tag}]")
        support.append(sup)
    return DualizedRows(rows_i, cols, vals, np.array(rhs), labels, support)


def worst_case_row(system: RobustSystem, r: int, z: np.ndarray,
                   policy: RecoursePolicy, box: BoxScaling):
    """Analytic maximum of row r over the unit cube, with its argmax vertex.

    The cube-coordinate coefficients are c_minus = B E_minus - D Theta_minus
    and c_plus = B E_plus + D Theta_plus per slot; the maximum adds every
    positive coefficient (coordinate at 1) to the nominal value.
    Returns (max_value, (eps_minus, eps_plus)) with 0/1 vertex arrays of
    shape (T, n_w).
    """
    n_f, n_w, horizon = system.n_dev, system.n_wind, system.horizon
    b_row = system.b_mat[r].reshape(horizon, n_f)
    d_row = system.d_mat[r].reshape(horizon, n_w)
    c_minus = np.einsum("tf,tfj->tj", b_row, policy.e_minus) - d_row * box.d_minus
    c_plus = np.einsum("tf,tfj->tj", b_row, policy.e_plus) + d_row * box.d_plus
    value = (system.nominal_value(r, z)
             + float(np.sum(np.maximum(c_minus, 0.0)))
             + float(np.sum(np.maximum(c_plus, 0.0))))
    return value, ((c_minus > 0).astype(float), (c_plus > 0).astype(float))
