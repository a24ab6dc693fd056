"""Independent brute-force verifiers for dispatch solutions.

Every check recomputes its quantity from the raw case data -- prefix
sums, PTDF flow evaluations, cube-vertex enumeration, the sort-based
CVaR -- without touching the assembler's row builders, so agreement is
evidence rather than tautology.  Vertex enumeration is per slot
(4^n_wind points), never over the whole horizon.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import wind_cvar
from .qp_solver import QpProblem, VarMap, solve as qp_solve
from .wind_cvar import CURTAIL, DEFICIT

FLOW_DRAW_SEED = 0  # fixed seed for the random-deviation flow check


@dataclass
class CheckResult:
    name: str
    passed: bool
    worst_slack: float  # most negative margin seen (>= 0 is clean)
    detail: str = ""


@dataclass
class VerificationReport:
    checks: list[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, name, passed, worst_slack, detail=""):
        self.checks.append(CheckResult(name, bool(passed), float(worst_slack), detail))

    def to_dict(self) -> dict:
        return {"passed": self.passed,
                "checks": [{"name": c.name, "passed": c.passed,
                            "worst_slack": c.worst_slack, "detail": c.detail}
                           for c in self.checks]}

    def __str__(self):
        lines = [f"verification: {'PASS' if self.passed else 'FAIL'}"]
        for c in self.checks:
            lines.append(f"  [{'ok' if c.passed else 'FAIL'}] {c.name}: "
                         f"worst slack {c.worst_slack:.3e} {c.detail}")
        return "\n".join(lines)


def verify_solution(case, sol, tol_row: float = 1e-6,
                    tol_balance: float = 1e-9, tol_cvar: float = 1e-3,
                    n_flow_draws: int = 100) -> VerificationReport:
    """Run the full oracle suite against a solved case.

    tol_row bounds the allowed violation of any robust or set-point row
    (absolute, MW/MWh); tol_balance applies to the per-vertex balance
    identity; tol_cvar to the LP-block-vs-oracle CVaR agreement, which is
    limited by the solver's duality gap rather than float precision.
    """
    rep = VerificationReport()
    t_hor, n_w, n_f = case.horizon, case.n_wind, case.n_flex
    em, ep = sol.eminus, sol.eplus  # (T, n_f, n_w)
    dm, dp = sol.dminus.T, sol.dplus.T  # (T, n_w)

    # (a) analytic worst case of every robust constraint family
    up = np.maximum(em, 0.0).sum(axis=2) + np.maximum(ep, 0.0).sum(axis=2)  # (T, n_f)
    down = np.maximum(-em, 0.0).sum(axis=2) + np.maximum(-ep, 0.0).sum(axis=2)
    worst = np.inf
    for f, spec in enumerate(case.flexspecs):
        x = sol.xbar[f]
        worst = min(worst, float(np.min(spec.x_max - (x + up[:, f]))))
        worst = min(worst, float(np.min((x - down[:, f]) - spec.x_min)))
        worst = min(worst, float(np.min(spec.u - (np.cumsum(x) + np.cumsum(up[:, f])))))
        worst = min(worst, float(np.min((np.cumsum(x) - np.cumsum(down[:, f])) - spec.l)))
    if case.network.n_lines:
        worst = min(worst, _worst_flow_slack(case, sol, dm, dp))
    rep.add("robust_worst_case", worst >= -tol_row, worst,
            f"(tol {tol_row:g})")

    # (b) balance at every per-slot cube vertex
    wind_total = case.wind.forecast.sum(axis=0) if n_w else np.zeros(t_hor)
    load_total = case.fixed_loads.sum(axis=0) if case.fixed_loads.size else np.zeros(t_hor)
    worst_bal = 0.0
    vertices = list(itertools.product((0.0, 1.0), repeat=2 * n_w))
    for t in range(t_hor):
        base = sol.g[:, t].sum() + wind_total[t] - load_total[t] - sol.xbar[:, t].sum()
        for vtx in vertices:
            e_m = np.array(vtx[:n_w])
            e_p = np.array(vtx[n_w:])
            delta_sum = float(-dm[t] @ e_m + dp[t] @ e_p)
            dx_sum = float((em[t] @ e_m + ep[t] @ e_p).sum()) if n_f else 0.0
            worst_bal = max(worst_bal, abs(base + delta_sum - dx_sum))
    rep.add("balance_vertices", worst_bal <= tol_balance, tol_balance - worst_bal,
            f"max residual {worst_bal:.3e}")

    # (c) CVaR blocks against the sort-based oracle at the solved box
    worst_cvar = 0.0
    checked = 0
    for side, eta in ((CURTAIL, case.eta1), (DEFICIT, case.eta2)):
        if side not in sol.gamma:
            continue
        for i in range(n_w):
            for t in range(t_hor):
                smp = case.wind.samples[i][t]
                wbar = case.wind.forecast[i, t]
                if side == CURTAIL:
                    losses = wind_cvar.loss_curtail(smp, wbar, dp[t, i])
                else:
                    losses = wind_cvar.loss_deficit(smp, wbar, dm[t, i])
                ora = wind_cvar.empirical_cvar(losses, case.beta)
                k = smp.size
                block_val = (sol.gamma[side][i, t]
                             + float(np.sum(sol.v[side][i][t])) / (k * (1 - case.beta)))
                worst_cvar = max(worst_cvar, abs(block_val - ora))
                checked += 1
    rep.add("cvar_blocks", worst_cvar <= tol_cvar, tol_cvar - worst_cvar,
            f"{checked} blocks, max |block - oracle| {worst_cvar:.3e}")

    # (d) set-point residuals
    worst_sp = np.inf
    worst_sp = min(worst_sp, tol_row - float(np.max(np.abs(
        sol.g.sum(axis=0) + wind_total - load_total - sol.xbar.sum(axis=0)))))
    for i, gen in enumerate(case.generators):
        worst_sp = min(worst_sp, float(np.min(gen.g_max - sol.g[i])),
                       float(np.min(sol.g[i] - gen.g_min)))
    for f, spec in enumerate(case.flexspecs):
        cum = np.cumsum(sol.xbar[f])
        worst_sp = min(worst_sp, float(np.min(spec.u - cum)),
                       float(np.min(cum - spec.l)),
                       float(np.min(spec.x_max - sol.xbar[f])),
                       float(np.min(sol.xbar[f] - spec.x_min)))
    if case.network.n_lines:
        flows = _nominal_flows(case, sol)
        worst_sp = min(worst_sp, float(np.min(
            case.network.flow_limits[:, None] - np.abs(flows))))
    worst_sp = min(worst_sp, float(np.min(sol.dminus, initial=np.inf)) + 1e-9,
                   float(np.min(sol.dplus, initial=np.inf)) + 1e-9)
    rep.add("setpoint_residuals", worst_sp >= -tol_row, worst_sp,
            f"(tol {tol_row:g})")

    # (e) flow limits at random deviations, fixed seed
    if case.network.n_lines and n_w:
        rng = np.random.default_rng(FLOW_DRAW_SEED)
        worst_draw = np.inf
        net = case.network
        for _ in range(n_flow_draws):
            e_m = rng.uniform(size=(t_hor, n_w))
            e_p = rng.uniform(size=(t_hor, n_w))
            w = case.wind.forecast + (-dm * e_m + dp * e_p).T
            if n_f:
                dx = (np.einsum("tfj,tj->tf", em, e_m)
                      + np.einsum("tfj,tj->tf", ep, e_p)).T
                x = sol.xbar + dx
            else:
                x = sol.xbar
            inj = (net.h_g @ sol.g + net.h_w @ w - net.h_f @ x)
            if case.fixed_loads.size:
                inj = inj - net.h_d @ case.fixed_loads
            flows = net.ptdf @ inj
            worst_draw = min(worst_draw, float(np.min(
                net.flow_limits[:, None] - np.abs(flows))))
        rep.add("flow_random_draws", worst_draw >= -tol_row, worst_draw,
                f"{n_flow_draws} draws, seed {FLOW_DRAW_SEED}")
    return rep


def _worst_flow_slack(case, sol, dm, dp) -> float:
    """Smallest slack of the line limits over per-slot cube vertices."""
    net = case.network
    gamma_w = net.ptdf @ net.h_w
    gamma_f = net.ptdf @ net.h_f
    flows = _nominal_flows(case, sol)  # (M, T)
    worst = np.inf
    for t in range(case.horizon):
        # cube-coordinate coefficients of each line's flow
        c_m = -gamma_w * dm[t][None, :] - gamma_f @ sol.eminus[t]  # (M, n_w)
        c_p = gamma_w * dp[t][None, :] + gamma_f @ sol.eplus[t]
        gain_up = np.maximum(c_m, 0).sum(axis=1) + np.maximum(c_p, 0).sum(axis=1)
        gain_dn = np.maximum(-c_m, 0).sum(axis=1) + np.maximum(-c_p, 0).sum(axis=1)
        worst = min(worst,
                    float(np.min(net.flow_limits - (flows[:, t] + gain_up))),
                    float(np.min(net.flow_limits - (-flows[:, t] + gain_dn))))
    return worst


def _nominal_flows(case, sol) -> np.ndarray:
    net = case.network
    inj = net.h_g @ sol.g + net.h_w @ case.wind.forecast - net.h_f @ sol.xbar
    if case.fixed_loads.size:
        inj = inj - net.h_d @ case.fixed_loads
    return net.ptdf @ inj


@dataclass
class NominalReference:
    objective: float  # $ incl. constant cost terms
    g: np.ndarray  # (n_gen, T)
    xbar: np.ndarray  # (n_flex, T)
    status: str


def nominal_ed_reference(case, tol: float = 1e-9) -> NominalReference:
    """Deterministic multi-period economic dispatch, no uncertainty, no CVaR.

    Minimizes total generation cost subject to nominal balance, flow
    limits, generator bounds and the MDF set-point envelopes.  Rows are
    assembled here from scratch (plain loops over prefix sums and PTDF
    products) as the eta = 0 comparison anchor for the full model.
    """
    net = case.network
    t_hor, n_g, n_f = case.horizon, case.n_gen, case.n_flex
    n = t_hor * (n_g + n_f)

    def gcol(t, i):
        return t * n_g + i

    def xcol(t, f):
        return t_hor * n_g + t * n_f + f

    q_diag = np.zeros(n)
    c = np.zeros(n)
    for t in range(t_hor):
        for i, gen in enumerate(case.generators):
            q_diag[gcol(t, i)] = 2.0 * gen.c2
            c[gcol(t, i)] = gen.c1

    wind_total = case.wind.forecast.sum(axis=0) if case.n_wind else np.zeros(t_hor)
    load_total = case.fixed_loads.sum(axis=0) if case.fixed_loads.size else np.zeros(t_hor)
    aeq = np.zeros((t_hor, n))
    beq = np.zeros(t_hor)
    for t in range(t_hor):
        for i in range(n_g):
            aeq[t, gcol(t, i)] = 1.0
        for f in range(n_f):
            aeq[t, xcol(t, f)] = -1.0
        beq[t] = load_total[t] - wind_total[t]

    rows = []
    rhs = []
    for t in range(t_hor):
        for i, gen in enumerate(case.generators):
            r = np.zeros(n)
            r[gcol(t, i)] = 1.0
            rows.append(r)
            rhs.append(gen.g_max)
            rows.append(-r)
            rhs.append(-gen.g_min)
    for f, spec in enumerate(case.flexspecs):
        for t in range(t_hor):
            r = np.zeros(n)
            for tp in range(t + 1):
                r[xcol(tp, f)] = 1.0
            rows.append(r)
            rhs.append(spec.u[t])
            rows.append(-r)
            rhs.append(-spec.l[t])
            r = np.zeros(n)
            r[xcol(t, f)] = 1.0
            rows.append(r)
            rhs.append(spec.x_max[t])
            rows.append(-r)
            rhs.append(-spec.x_min[t])
    if net.n_lines:
        gamma_g = net.ptdf @ net.h_g
        gamma_d = net.ptdf @ net.h_d
        gamma_w = net.ptdf @ net.h_w
        gamma_f = net.ptdf @ net.h_f
        for t in range(t_hor):
            wbar_t = case.wind.forecast[:, t] if case.n_wind else np.zeros(0)
            d_t = case.fixed_loads[:, t] if case.fixed_loads.size else np.zeros(0)
            base = gamma_w @ wbar_t - gamma_d @ d_t
            for m in range(net.n_lines):
                r = np.zeros(n)
                for i in range(n_g):
                    r[gcol(t, i)] = gamma_g[m, i]
                for f in range(n_f):
                    r[xcol(t, f)] = -gamma_f[m, f]
                rows.append(r)
                rhs.append(net.flow_limits[m] - base[m])
                rows.append(-r)
                rhs.append(net.flow_limits[m] + base[m])

    problem = QpProblem(q_mat=np.diag(q_diag), c=c,
                        g_mat=np.array(rows), h=np.array(rhs),
                        aeq=aeq, beq=beq,
                        obj_const=t_hor * sum(g.c0 for g in case.generators))
    qsol = qp_solve(problem, tol=tol)
    if qsol.status != "optimal":
        raise RuntimeError(f"nominal dispatch reference: {qsol.status}")
    g = qsol.z[:t_hor * n_g].reshape(t_hor, n_g).T.copy()
    xbar = qsol.z[t_hor * n_g:].reshape(t_hor, n_f).T.copy()
    return NominalReference(objective=qsol.objective, g=g, xbar=xbar,
                            status=qsol.status)
