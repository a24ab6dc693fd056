"""Problem assembly and solve orchestration for the robust dispatch model.

Builds one deterministic convex QP out of the component modules --
quadratic generation cost plus CVaR objective terms, nominal balance and
flow constraints, MDF set-point envelopes, the CVaR linear blocks, and
the dualized robust rows with coefficient-matched balance -- solves it
with the interior-point solver, and extracts a structured solution with
an attached verification report.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import flexload, robust_saa, wind_cvar
from .netmodel import NetworkModel
from .qp_solver import QpProblem, QpSolution, VarMap, solve as qp_solve
from .robust_saa import BoxScaling, RecoursePolicy, RobustSystem, RowTag
from .wind_cvar import CURTAIL, DEFICIT


class DispatchSolveError(RuntimeError):
    """Solver finished without an optimality certificate."""

    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution


class InfeasibleRecourseError(RuntimeError):
    """Generator recourse cannot cover the pinned uncertainty box."""


@dataclass(frozen=True)
class GeneratorSpec:
    bus: int
    g_min: float  # MW
    g_max: float  # MW
    c2: float  # $/MW^2 h
    c1: float  # $/MWh
    c0: float  # $/h


def generation_cost(g, coeffs) -> float:
    """Quadratic generator cost c2 g^2 + c1 g + c0 ($/h)."""
    g = np.asarray(g, dtype=float)
    out = coeffs.c2 * g ** 2 + coeffs.c1 * g + coeffs.c0
    return float(out) if out.ndim == 0 else out


@dataclass
class DispatchCase:
    """One dispatch instance: network, devices, profiles and risk weights."""

    network: NetworkModel
    generators: list[GeneratorSpec]
    fixed_loads: np.ndarray  # (n_d, T) MW
    flexspecs: list[flexload.FlexibleLoadSpec]
    wind: wind_cvar.WindModel
    eta1: float
    eta2: float
    beta: float
    horizon: int
    name: str = "case"

    def __post_init__(self):
        self.fixed_loads = np.atleast_2d(np.asarray(self.fixed_loads, dtype=float))
        t = self.horizon
        if t < 1:
            raise ValueError("horizon must be >= 1")
        if self.eta1 < 0 or self.eta2 < 0:
            raise ValueError("risk weights must be nonnegative")
        if not 0.0 <= self.beta < 1.0:
            raise ValueError("beta must lie in [0, 1)")
        for gen in self.generators:
            if gen.g_min > gen.g_max:
                raise ValueError(f"generator at bus {gen.bus}: g_min > g_max")
        net = self.network
        if [g.bus for g in self.generators] != net.buses_with("generator"):
            raise ValueError("generator buses must match the network flags, ascending")
        if [s.bus for s in self.flexspecs] != net.buses_with("flex_load"):
            raise ValueError("flexible-load buses must match the network flags, ascending")
        if list(self.wind.buses) != net.buses_with("wind"):
            raise ValueError("wind buses must match the network flags, ascending")
        n_d = len(net.buses_with("fixed_load"))
        if self.fixed_loads.shape != (n_d, t) and not (n_d == 0 and self.fixed_loads.size == 0):
            raise ValueError(f"fixed_loads must be ({n_d}, {t})")
        if self.wind.horizon != t or any(s.horizon != t for s in self.flexspecs):
            raise ValueError("all series must cover the same horizon")

    @property
    def n_gen(self):
        return len(self.generators)

    @property
    def n_flex(self):
        return len(self.flexspecs)

    @property
    def n_wind(self):
        return self.wind.n_wind

    def total_generation_cost(self, g: np.ndarray) -> float:
        """Sum of C^G over generators and slots; g is (n_gen, T)."""
        return float(sum(np.sum(generation_cost(g[i], gen))
                         for i, gen in enumerate(self.generators)))


@dataclass
class BuildInfo:
    varmap: VarMap
    robust_system: RobustSystem
    dualized: robust_saa.DualizedRows
    cvar_blocks: list[wind_cvar.CvarBlock]
    sides: tuple[int, ...]
    eq_labels: list[str]
    ineq_labels: list[str]


@dataclass
class ObjectiveBreakdown:
    cost_gen: float  # $ over the horizon
    phi1: float  # MW, total curtailment CVaR
    phi2: float  # MW, total deficiency CVaR
    total: float  # cost_gen + eta1*phi1 + eta2*phi2


@dataclass
class DispatchSolution:
    case_name: str
    g: np.ndarray  # (n_gen, T)
    xbar: np.ndarray  # (n_flex, T)
    dminus: np.ndarray  # (n_wind, T)
    dplus: np.ndarray  # (n_wind, T)
    eminus: np.ndarray  # (T, n_flex, n_wind)
    eplus: np.ndarray  # (T, n_flex, n_wind)
    gamma: dict  # side -> (n_wind, T)
    v: dict  # side -> nested [i][t] arrays
    mu: dict
    pi: list  # per robust row
    breakdown: ObjectiveBreakdown
    solver_status: str
    solver_iterations: int
    solver_residuals: tuple[float, float, float]
    verification: dict | None = None

    @property
    def policy(self) -> RecoursePolicy:
        return RecoursePolicy(self.eminus, self.eplus)

    @property
    def box(self) -> BoxScaling:
        return BoxScaling(self.dminus.T.copy(), self.dplus.T.copy())

    def to_dict(self) -> dict:
        n_g, t_hor = self.g.shape
        d = {
            "case_name": self.case_name,
            "dims": {"n_gen": n_g, "n_flex": self.xbar.shape[0],
                     "n_wind": self.dminus.shape[0], "horizon": t_hor},
            "g": self.g.tolist(),
            "xbar": self.xbar.tolist(),
            "dminus": self.dminus.tolist(),
            "dplus": self.dplus.tolist(),
            "eminus": self.eminus.tolist(),
            "eplus": self.eplus.tolist(),
            "gamma": {str(s): a.tolist() for s, a in self.gamma.items()},
            "v": {str(s): [[a.tolist() for a in row] for row in per]
                  for s, per in self.v.items()},
            "mu": {str(s): [[a.tolist() for a in row] for row in per]
                   for s, per in self.mu.items()},
            "pi": [a.tolist() for a in self.pi],
            "breakdown": {"cost_gen": self.breakdown.cost_gen,
                          "phi1": self.breakdown.phi1,
                          "phi2": self.breakdown.phi2,
                          "total": self.breakdown.total},
            "solver_status": self.solver_status,
            "solver_iterations": self.solver_iterations,
            "solver_residuals": list(self.solver_residuals),
            "verification": self.verification,
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DispatchSolution":
        br = d["breakdown"]
        dims = d["dims"]
        n_g, n_f = dims["n_gen"], dims["n_flex"]
        n_w, t_hor = dims["n_wind"], dims["horizon"]

        def arr(lst, shape):
            return np.array(lst, dtype=float).reshape(shape)

        return cls(
            case_name=d["case_name"],
            g=arr(d["g"], (n_g, t_hor)),
            xbar=arr(d["xbar"], (n_f, t_hor)),
            dminus=arr(d["dminus"], (n_w, t_hor)),
            dplus=arr(d["dplus"], (n_w, t_hor)),
            eminus=arr(d["eminus"], (t_hor, n_f, n_w)),
            eplus=arr(d["eplus"], (t_hor, n_f, n_w)),
            gamma={int(s): np.array(a, dtype=float) for s, a in d["gamma"].items()},
            v={int(s): [[np.array(a, dtype=float) for a in row] for row in per]
               for s, per in d["v"].items()},
            mu={int(s): [[np.array(a, dtype=float) for a in row] for row in per]
                for s, per in d["mu"].items()},
            pi=[np.array(a, dtype=float) for a in d["pi"]],
            breakdown=ObjectiveBreakdown(br["cost_gen"], br["phi1"], br["phi2"],
                                         br["total"]),
            solver_status=d["solver_status"],
            solver_iterations=d["solver_iterations"],
            solver_residuals=tuple(d["solver_residuals"]),
            verification=d.get("verification"),
        )


class _RowStack:
    """COO accumulator for stacked `<=` or `=` rows."""

    def __init__(self, n_cols_fn):
        self.rows: list[int] = []
        self.cols: list[int] = []
        self.vals: list[float] = []
        self.rhs: list[float] = []
        self.labels: list[str] = []
        self._n_cols_fn = n_cols_fn

    def put(self, cols_vals, bound: float, label: str):
        r = len(self.rhs)
        for c, v in cols_vals:
            if v != 0.0:
                self.rows.append(r)
                self.cols.append(c)
                self.vals.append(v)
        self.rhs.append(float(bound))
        self.labels.append(label)

    def extend_coo(self, rows_i, cols, vals, rhs, labels):
        base = len(self.rhs)
        self.rows.extend(base + r for r in rows_i)
        self.cols.extend(cols)
        self.vals.extend(vals)
        self.rhs.extend(float(b) for b in rhs)
        self.labels.extend(labels)

    def matrix(self):
        n = self._n_cols_fn()
        return sp.csr_matrix((self.vals, (self.rows, self.cols)),
                             shape=(len(self.rhs), n))


def build_problem(case: DispatchCase, pin_box_to_zero: bool = False):
    """Assemble the deterministic QP of a case.

    Returns (QpProblem, BuildInfo).  CVaR blocks for a loss side are
    included only when its weight is positive; with a zero weight the
    block variables would sit on a flat objective face and their solved
    values would be meaningless.
    """
    net = case.network
    t_hor, n_g, n_f, n_w = case.horizon, case.n_gen, case.n_flex, case.n_wind

    vm = VarMap()
    vm.add(("g",), t_hor * n_g)
    vm.add(("xbar",), t_hor * n_f)
    vm.add(("dminus",), t_hor * n_w)
    vm.add(("dplus",), t_hor * n_w)
    vm.add(("eminus",), t_hor * n_f * n_w)
    vm.add(("eplus",), t_hor * n_f * n_w)

    sides = tuple(s for s, eta in ((CURTAIL, case.eta1), (DEFICIT, case.eta2))
                  if eta > 0)
    blocks = wind_cvar.build_cvar_blocks(case.wind, case.beta, sides=sides)
    wind_cvar.allocate_block_vars(blocks, vm)

    robust = robust_saa.assemble_robust_system(net, case.flexspecs, case.wind,
                                               case.fixed_loads, vm)
    dual = robust_saa.saa_dualize(robust, vm)

    # Objective: quadratic generation cost + linear CVaR terms.
    q_diag = np.zeros(vm.n)
    c = np.zeros(vm.n)
    g0 = vm.start(("g",))
    for t in range(t_hor):
        for i, gen in enumerate(case.generators):
            q_diag[g0 + t * n_g + i] = 2.0 * gen.c2
            c[g0 + t * n_g + i] = gen.c1
    wind_cvar.objective_terms(blocks, vm, case.eta1, case.eta2, c)
    obj_const = t_hor * sum(gen.c0 for gen in case.generators)

    # Equalities: nominal balance + coefficient matching (+ optional pin).
    eq = _RowStack(lambda: vm.n)
    wind_total = case.wind.forecast.sum(axis=0) if n_w else np.zeros(t_hor)
    load_total = case.fixed_loads.sum(axis=0) if case.fixed_loads.size else np.zeros(t_hor)
    eq.extend_coo(*robust_saa.balance_coefficient_match(
        n_g, n_f, n_w, t_hor, wind_total, load_total, vm))
    if pin_box_to_zero:
        for key in ("dminus", "dplus"):
            base = vm.start((key,))
            for idx in range(t_hor * n_w):
                eq.put([(base + idx, 1.0)], 0.0, f"pin_{key}[{idx}]")

    ineq = _RowStack(lambda: vm.n)
    for t in range(t_hor):
        for i, gen in enumerate(case.generators):
            col = g0 + t * n_g + i
            ineq.put([(col, 1.0)], gen.g_max, f"gen_upper[i={i + 1},t={t + 1}]")
            ineq.put([(col, -1.0)], -gen.g_min, f"gen_lower[i={i + 1},t={t + 1}]")
    xbar0 = vm.start(("xbar",))
    for f, spec in enumerate(case.flexspecs):
        env = flexload.envelope_rows(spec)
        for r in range(env.a_mat.shape[0]):
            cols_vals = [(xbar0 + tp * n_f + f, env.a_mat[r, tp])
                         for tp in np.nonzero(env.a_mat[r])[0]]
            ineq.put(cols_vals, env.rhs[r], f"setpoint_{env.labels[r]}@agg{f + 1}")
    for key in ("dminus", "dplus"):
        base = vm.start((key,))
        for t in range(t_hor):
            for j in range(n_w):
                ineq.put([(base + t * n_w + j, -1.0)], 0.0,
                         f"{key}_nonneg[j={j + 1},t={t + 1}]")
    _nominal_flow_rows(case, vm, ineq)
    ineq.extend_coo(*wind_cvar.block_rows(blocks, vm, n_w))
    ineq.extend_coo(dual.rows_i, dual.cols, dual.vals, dual.rhs, dual.labels)

    problem = QpProblem(q_mat=sp.diags(q_diag), c=c,
                        g_mat=ineq.matrix(), h=np.array(ineq.rhs),
                        aeq=eq.matrix(), beq=np.array(eq.rhs),
                        varmap=vm, obj_const=obj_const)
    info = BuildInfo(vm, robust, dual, blocks, sides, eq.labels, ineq.labels)
    return problem, info


def _nominal_flow_rows(case: DispatchCase, vm: VarMap, ineq: _RowStack):
    net = case.network
    if net.n_lines == 0:
        return
    t_hor, n_g, n_f = case.horizon, case.n_gen, case.n_flex
    gamma_g = net.ptdf @ net.h_g
    gamma_d = net.ptdf @ net.h_d
    gamma_w = net.ptdf @ net.h_w
    gamma_f = net.ptdf @ net.h_f
    g0 = vm.start(("g",))
    xbar0 = vm.start(("xbar",))
    for t in range(t_hor):
        wbar_t = case.wind.forecast[:, t] if case.n_wind else np.zeros(0)
        d_t = case.fixed_loads[:, t] if case.fixed_loads.size else np.zeros(0)
        base = gamma_w @ wbar_t - gamma_d @ d_t
        for m in range(net.n_lines):
            for kind, sgn in (("pos", 1.0), ("neg", -1.0)):
                cols_vals = [(g0 + t * n_g + i, sgn * gamma_g[m, i])
                             for i in range(n_g)]
                cols_vals += [(xbar0 + t * n_f + f, -sgn * gamma_f[m, f])
                              for f in range(n_f)]
                ineq.put(cols_vals, net.flow_limits[m] - sgn * base[m],
                         f"flow_{kind}[m={m + 1},t={t + 1}]")


def solve_case(case: DispatchCase, tol: float = 1e-9, max_iter: int = 200,
               pin_box_to_zero: bool = False, verify: bool = True,
               verbose: bool = False) -> DispatchSolution:
    """Build, solve, extract, and (optionally) verify one case."""
    problem, info = build_problem(case, pin_box_to_zero=pin_box_to_zero)
    qsol = qp_solve(problem, tol=tol, max_iter=max_iter, verbose=verbose)
    if qsol.status != "optimal":
        raise DispatchSolveError(
            f"{case.name}: solver returned {qsol.status} after "
            f"{qsol.iterations} iterations "
            f"(residuals p={qsol.residual_primal:.2e} d={qsol.residual_dual:.2e} "
            f"gap={qsol.residual_gap:.2e})")
    sol = _extract_solution(case, info, qsol)
    if verify:
        from . import oracle  # local import: oracle depends on this module's types
        sol.verification = oracle.verify_solution(case, sol).to_dict()
    return sol


def _extract_solution(case: DispatchCase, info: BuildInfo,
                      qsol: QpSolution) -> DispatchSolution:
    vm = info.varmap
    t_hor, n_g, n_f, n_w = case.horizon, case.n_gen, case.n_flex, case.n_wind
    z = qsol.z
    g = z[vm.sl(("g",))].reshape(t_hor, n_g).T.copy()
    xbar = z[vm.sl(("xbar",))].reshape(t_hor, n_f).T.copy()
    dminus = z[vm.sl(("dminus",))].reshape(t_hor, n_w).T.copy()
    dplus = z[vm.sl(("dplus",))].reshape(t_hor, n_w).T.copy()
    eminus = z[vm.sl(("eminus",))].reshape(t_hor, n_f, n_w).copy()
    eplus = z[vm.sl(("eplus",))].reshape(t_hor, n_f, n_w).copy()

    # Interior-point iterates satisfy the equalities only to solver
    # tolerance; restore exact balance and coefficient matching so the
    # vertex-enumeration checks see residuals at float precision.
    dminus = np.clip(dminus, 0.0, None)
    dplus = np.clip(dplus, 0.0, None)
    wind_total = case.wind.forecast.sum(axis=0) if n_w else np.zeros(t_hor)
    load_total = case.fixed_loads.sum(axis=0) if case.fixed_loads.size else np.zeros(t_hor)
    for t in range(t_hor):
        resid = g[:, t].sum() + wind_total[t] - load_total[t] - xbar[:, t].sum()
        if n_g:
            margins = np.minimum(g[:, t] - [gn.g_min for gn in case.generators],
                                 [gn.g_max for gn in case.generators] - g[:, t])
            g[int(np.argmax(margins)), t] -= resid
        for j in range(n_w):
            if n_f:
                eminus[t, 0, j] -= eminus[t, :, j].sum() + dminus[j, t]
                eplus[t, 0, j] -= eplus[t, :, j].sum() - dplus[j, t]

    gamma: dict = {}
    v: dict = {}
    mu: dict = {}
    for side in info.sides:
        gamma[side] = np.zeros((n_w, t_hor))
        v[side] = [[None] * t_hor for _ in range(n_w)]
        mu[side] = [[None] * t_hor for _ in range(n_w)]
    for b in info.cvar_blocks:
        key = (b.side, b.wind_index, b.slot)
        gamma[b.side][b.wind_index, b.slot] = z[vm.start(("gamma",) + key)]
        v[b.side][b.wind_index][b.slot] = z[vm.sl(("v",) + key)].copy()
        mu[b.side][b.wind_index][b.slot] = z[vm.sl(("mu",) + key)].copy()
    pi = [z[vm.sl(("pi", r))].copy() for r in range(info.robust_system.n_rows)]

    phi = {}
    for side, eta in ((CURTAIL, case.eta1), (DEFICIT, case.eta2)):
        if side in info.sides:
            total = 0.0
            for b in info.cvar_blocks:
                if b.side == side:
                    total += b.value(gamma[side][b.wind_index, b.slot],
                                     v[side][b.wind_index][b.slot])
            phi[side] = total
        else:
            phi[side] = _oracle_phi(case, side, dminus, dplus)
    cost_gen = case.total_generation_cost(g)
    breakdown = ObjectiveBreakdown(
        cost_gen=cost_gen, phi1=phi[CURTAIL], phi2=phi[DEFICIT],
        total=cost_gen + case.eta1 * phi[CURTAIL] + case.eta2 * phi[DEFICIT])

    return DispatchSolution(
        case_name=case.name, g=g, xbar=xbar, dminus=dminus, dplus=dplus,
        eminus=eminus, eplus=eplus, gamma=gamma, v=v, mu=mu, pi=pi,
        breakdown=breakdown, solver_status=qsol.status,
        solver_iterations=qsol.iterations,
        solver_residuals=(qsol.residual_primal, qsol.residual_dual,
                          qsol.residual_gap))


def _oracle_phi(case: DispatchCase, side: int, dminus, dplus) -> float:
    """Total CVaR of one side at a fixed box, via the sort-based oracle."""
    total = 0.0
    for i in range(case.n_wind):
        for t in range(case.horizon):
            wbar = case.wind.forecast[i, t]
            smp = case.wind.samples[i][t]
            if side == CURTAIL:
                losses = wind_cvar.loss_curtail(smp, wbar, dplus[i, t])
            else:
                losses = wind_cvar.loss_deficit(smp, wbar, dminus[i, t])
            total += wind_cvar.empirical_cvar(losses, case.beta)
    return total


@dataclass
class WorstCaseCost:
    value: float  # $: worst-case generation cost over the pinned box
    nominal_cost: float  # $ at the re-optimized set-points
    g: np.ndarray  # (n_gen, T)
    eg_minus: np.ndarray  # (T, n_gen, n_wind)
    eg_plus: np.ndarray


def worst_case_generation_cost(case: DispatchCase,
                               reference: DispatchSolution,
                               tol: float = 1e-9) -> WorstCaseCost:
    """Generation cost when generators, not loads, absorb the pinned box.

    The flexible consumption is frozen at the reference set-points and
    the reference box is kept; generators get the affine recourse instead
    (same SAA machinery, with the box constant).  Set-points are chosen
    to minimize nominal cost subject to robust feasibility; the reported
    value is the exact per-slot vertex maximum of the realized quadratic
    cost under that policy.
    """
    net = case.network
    t_hor, n_g, n_w, n_f = case.horizon, case.n_gen, case.n_wind, case.n_flex
    xbar = reference.xbar
    dm = reference.dminus.T.copy()  # (T, n_w)
    dp = reference.dplus.T.copy()

    vm = VarMap()
    vm.add(("g",), t_hor * n_g)
    vm.add(("eg_minus",), t_hor * n_g * n_w)
    vm.add(("eg_plus",), t_hor * n_g * n_w)
    g0 = vm.start(("g",))

    sys2 = RobustSystem(n_dev=n_g, n_wind=n_w, horizon=t_hor)
    for t in range(t_hor):
        for i, gen in enumerate(case.generators):
            b_row = np.zeros(t_hor * n_g)
            b_row[t * n_g + i] = 1.0
            sys2.add_row([g0 + t * n_g + i], [1.0], b_row,
                         np.zeros(t_hor * n_w), gen.g_max,
                         RowTag("gen_upper", i, t))
            sys2.add_row([g0 + t * n_g + i], [-1.0], -b_row,
                         np.zeros(t_hor * n_w), -gen.g_min,
                         RowTag("gen_lower", i, t))
    if net.n_lines:
        gamma_g = net.ptdf @ net.h_g
        gamma_d = net.ptdf @ net.h_d
        gamma_w = net.ptdf @ net.h_w
        gamma_f = net.ptdf @ net.h_f
        for t in range(t_hor):
            wbar_t = case.wind.forecast[:, t] if n_w else np.zeros(0)
            d_t = case.fixed_loads[:, t] if case.fixed_loads.size else np.zeros(0)
            base = gamma_w @ wbar_t - gamma_d @ d_t - gamma_f @ xbar[:, t]
            for m in range(net.n_lines):
                for kind, sgn in (("flow_pos", 1.0), ("flow_neg", -1.0)):
                    cols = [g0 + t * n_g + i for i in range(n_g)]
                    vals = [sgn * gamma_g[m, i] for i in range(n_g)]
                    b_row = np.zeros(t_hor * n_g)
                    b_row[t * n_g:(t + 1) * n_g] = sgn * gamma_g[m]
                    d_row = np.zeros(t_hor * n_w)
                    d_row[t * n_w:(t + 1) * n_w] = sgn * gamma_w[m]
                    sys2.add_row(cols, vals, b_row, d_row,
                                 net.flow_limits[m] - sgn * base[m],
                                 RowTag(kind, m, t))
    sys2.finalize()
    dual = robust_saa.saa_dualize(sys2, vm, e_keys=("eg_minus", "eg_plus"),
                                  box_values=(dm, dp))

    q_diag = np.zeros(vm.n)
    c = np.zeros(vm.n)
    for t in range(t_hor):
        for i, gen in enumerate(case.generators):
            q_diag[g0 + t * n_g + i] = 2.0 * gen.c2
            c[g0 + t * n_g + i] = gen.c1
    eq = _RowStack(lambda: vm.n)
    wind_total = case.wind.forecast.sum(axis=0) if n_w else np.zeros(t_hor)
    load_total = case.fixed_loads.sum(axis=0) if case.fixed_loads.size else np.zeros(t_hor)
    em0 = vm.start(("eg_minus",))
    ep0 = vm.start(("eg_plus",))
    for t in range(t_hor):
        cv = [(g0 + t * n_g + i, 1.0) for i in range(n_g)]
        eq.put(cv, float(load_total[t] + xbar[:, t].sum() - wind_total[t]),
               f"balance[t={t + 1}]")
        for j in range(n_w):
            # generation recourse offsets the deviation: when wind drops by
            # d_minus the generators ramp up by the same amount, and vice
            # versa (opposite sign to the load-recourse convention).
            cv = [(em0 + t * n_g * n_w + i * n_w + j, 1.0) for i in range(n_g)]
            eq.put(cv, float(dm[t, j]), f"match_minus[j={j + 1},t={t + 1}]")
            cv = [(ep0 + t * n_g * n_w + i * n_w + j, 1.0) for i in range(n_g)]
            eq.put(cv, -float(dp[t, j]), f"match_plus[j={j + 1},t={t + 1}]")
    ineq = _RowStack(lambda: vm.n)
    ineq.extend_coo(dual.rows_i, dual.cols, dual.vals, dual.rhs, dual.labels)

    problem = QpProblem(q_mat=sp.diags(q_diag), c=c, g_mat=ineq.matrix(),
                        h=np.array(ineq.rhs), aeq=eq.matrix(),
                        beq=np.array(eq.rhs), varmap=vm,
                        obj_const=t_hor * sum(g.c0 for g in case.generators))
    qsol = qp_solve(problem, tol=tol)
    if qsol.status == "infeasible":
        raise InfeasibleRecourseError(
            f"{case.name}: generator capacity cannot cover the pinned box")
    if qsol.status != "optimal":
        raise DispatchSolveError(f"{case.name}: worst-case resolve returned "
                                 f"{qsol.status}")
    g = qsol.z[vm.sl(("g",))].reshape(t_hor, n_g).T.copy()
    eg_minus = qsol.z[vm.sl(("eg_minus",))].reshape(t_hor, n_g, n_w).copy()
    eg_plus = qsol.z[vm.sl(("eg_plus",))].reshape(t_hor, n_g, n_w).copy()

    # Worst realized cost: slots decouple, so enumerate each slot's cube
    # vertices exactly.
    worst = 0.0
    vertices = list(itertools.product((0.0, 1.0), repeat=2 * n_w))
    for t in range(t_hor):
        best_t = -np.inf
        for vtx in vertices:
            em = np.array(vtx[:n_w])
            ep = np.array(vtx[n_w:])
            adj = eg_minus[t] @ em + eg_plus[t] @ ep
            cost_t = sum(generation_cost(g[i, t] + adj[i], gen)
                         for i, gen in enumerate(case.generators))
            best_t = max(best_t, cost_t)
        worst += best_t
    nominal = case.total_generation_cost(g)
    return WorstCaseCost(value=float(worst), nominal_cost=nominal, g=g,
                         eg_minus=eg_minus, eg_plus=eg_plus)
