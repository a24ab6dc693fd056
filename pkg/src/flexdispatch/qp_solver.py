"""Convex quadratic programming with a primal-dual interior-point solver.

Problems are stated as

    min  0.5 z'Qz + c'z        (+ fixed offset, tracked separately)
    s.t. Aeq z  = beq
         G z   <= h

with Q symmetric positive semidefinite.  The solver is a Mehrotra
predictor-corrector method: at each iteration the inequality block is
eliminated against its slacks and the reduced KKT system

    [ Q + G' W G + r*I   Aeq' ] [dz]   [rhs_d]
    [ Aeq               -r*I  ] [dy] = [rhs_p]

is factorized once (sparse LU) and reused for the predictor and the
corrector solves.  `r` is a tiny static regularization; one step of
iterative refinement against the unregularized system keeps its effect
below the reported tolerances.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class QpModelError(ValueError):
    """Malformed problem data (dimension mismatch, non-PSD quadratic, ...)."""


class VarMap:
    """Name -> column range map for assembling block-structured QPs.

    Keys are arbitrary hashables (tuples work well for indexed blocks).
    Allocation order fixes the global column layout.
    """

    def __init__(self):
        self._slices: dict = {}
        self.n = 0

    def add(self, key, size: int) -> slice:
        if key in self._slices:
            raise KeyError(f"variable block {key!r} already allocated")
        if size < 0:
            raise ValueError("block size must be nonnegative")
        s = slice(self.n, self.n + size)
        self._slices[key] = s
        self.n += size
        return s

    def sl(self, key) -> slice:
        return self._slices[key]

    def start(self, key) -> int:
        return self._slices[key].start

    def size(self, key) -> int:
        s = self._slices[key]
        return s.stop - s.start

    def __contains__(self, key) -> bool:
        return key in self._slices

    def keys(self):
        return self._slices.keys()


@dataclass
class QpProblem:
    """Data of one convex QP. Matrices may be dense or scipy.sparse."""

    q_mat: sp.spmatrix | np.ndarray
    c: np.ndarray
    g_mat: sp.spmatrix | np.ndarray | None = None
    h: np.ndarray | None = None
    aeq: sp.spmatrix | np.ndarray | None = None
    beq: np.ndarray | None = None
    varmap: VarMap | None = None
    obj_const: float = 0.0

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        n = self.c.size
        self.q_mat = sp.csr_matrix(self.q_mat)
        if self.q_mat.shape != (n, n):
            raise QpModelError(f"Q must be {n}x{n}, got {self.q_mat.shape}")
        asym = abs(self.q_mat - self.q_mat.T)
        if asym.nnz and asym.max() > 1e-10 * (1.0 + abs(self.q_mat).max()):
            raise QpModelError("Q must be symmetric")
        if self.g_mat is None or (hasattr(self.g_mat, "shape") and self.g_mat.shape[0] == 0):
            self.g_mat = sp.csr_matrix((0, n))
            self.h = np.zeros(0)
        else:
            self.g_mat = sp.csr_matrix(self.g_mat)
            self.h = np.asarray(self.h, dtype=float).ravel()
            if self.g_mat.shape != (self.h.size, n):
                raise QpModelError("G/h dimensions inconsistent with c")
        if self.aeq is None or (hasattr(self.aeq, "shape") and self.aeq.shape[0] == 0):
            self.aeq = sp.csr_matrix((0, n))
            self.beq = np.zeros(0)
        else:
            self.aeq = sp.csr_matrix(self.aeq)
            self.beq = np.asarray(self.beq, dtype=float).ravel()
            if self.aeq.shape != (self.beq.size, n):
                raise QpModelError("Aeq/beq dimensions inconsistent with c")

    @property
    def n(self) -> int:
        return self.c.size

    @property
    def n_ineq(self) -> int:
        return self.g_mat.shape[0]

    @property
    def n_eq(self) -> int:
        return self.aeq.shape[0]

    def objective(self, z: np.ndarray) -> float:
        return 0.5 * float(z @ (self.q_mat @ z)) + float(self.c @ z) + self.obj_const


@dataclass
class QpSolution:
    z: np.ndarray
    objective: float
    y_eq: np.ndarray
    lam_ineq: np.ndarray
    slacks: np.ndarray
    status: str  # "optimal" | "infeasible" | "max-iter"
    iterations: int
    residual_primal: float
    residual_dual: float
    residual_gap: float

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


def kkt_residuals(problem: QpProblem, z, y_eq=None, lam_ineq=None):
    """Relative primal / dual / complementarity residuals at a candidate point.

    Primal: worst violation of the equality and inequality systems.
    Dual: stationarity of the Lagrangian.  Gap: complementarity |lam'(h-Gz)|.
    All three are scaled by the problem data so they are dimensionless.
    """
    z = np.asarray(z, dtype=float).ravel()
    y = np.zeros(problem.n_eq) if y_eq is None else np.asarray(y_eq, float).ravel()
    lam = np.zeros(problem.n_ineq) if lam_ineq is None else np.asarray(lam_ineq, float).ravel()
    sc_p = 1.0 + max(_inf(problem.h), _inf(problem.beq))
    sc_d = 1.0 + _inf(problem.c)
    r_eq = problem.aeq @ z - problem.beq if problem.n_eq else np.zeros(0)
    viol = problem.g_mat @ z - problem.h if problem.n_ineq else np.zeros(0)
    primal = max(_inf(r_eq), float(np.max(viol, initial=0.0))) / sc_p
    r_d = problem.q_mat @ z + problem.c + problem.aeq.T @ y + problem.g_mat.T @ lam
    dual = _inf(r_d) / sc_d
    gap = abs(float(lam @ (problem.h - problem.g_mat @ z))) if problem.n_ineq else 0.0
    gap /= 1.0 + abs(problem.objective(z))
    return primal, dual, gap


def solve(problem: QpProblem, tol: float = 1e-8, max_iter: int = 200,
          verbose: bool = False) -> QpSolution:
    """Solve a convex QP. Deterministic: fixed pivoting and step rules."""
    n, m, p = problem.n, problem.n_ineq, problem.n_eq
    if m == 0:
        return _solve_equality_qp(problem, tol)

    Q, G, A = problem.q_mat, sp.csc_matrix(problem.g_mat), problem.aeq
    c, h, beq = problem.c, problem.h, problem.beq
    sc_p = 1.0 + max(_inf(h), _inf(beq))
    sc_d = 1.0 + _inf(c)
    reg = 1e-11

    # Starting point: equality-respecting least-squares guess, then
    # Mehrotra's shift to center the slack/multiplier pair.
    kkt = _KktFactor(Q, G, A, reg)
    z, y = kkt.solve(np.ones(m), -c + G.T @ h, beq.copy())
    s_raw = h - G @ z
    lam_raw = np.ones(m)
    ds0 = max(-1.5 * float(np.min(s_raw)), 0.0)
    s_hat = s_raw + ds0
    cross = 0.5 * float(s_hat @ lam_raw)
    s0_shift = ds0 + cross / float(np.sum(lam_raw))
    l0_shift = cross / max(float(np.sum(s_hat)), 1e-12)
    s = np.maximum(s_raw + s0_shift, 1e-8)
    lam = np.maximum(lam_raw + l0_shift, 1e-8)

    best = None
    stall = 0
    prev_mu = np.inf
    for it in range(1, max_iter + 1):
        r_d = Q @ z + c + A.T @ y + G.T @ lam
        r_p = A @ z - beq if p else np.zeros(0)
        r_g = G @ z + s - h
        mu = float(s @ lam) / m
        obj = problem.objective(z)
        rel_p = max(_inf(r_p), _inf(r_g)) / sc_p
        rel_d = _inf(r_d) / sc_d
        rel_g = mu / (1.0 + abs(obj))
        if verbose:
            print(f"iter {it:3d}  rp {rel_p:9.2e}  rd {rel_d:9.2e}  gap {rel_g:9.2e}")
        score = max(rel_p, rel_d, rel_g)
        if best is None or score < best[0]:
            best = (score, z.copy(), y.copy(), lam.copy(), s.copy(),
                    it, rel_p, rel_d, rel_g)
        if rel_p <= tol and rel_d <= tol and rel_g <= tol:
            return QpSolution(z, obj, y, lam, s, "optimal", it, rel_p, rel_d, rel_g)

        # Heuristic infeasibility certificate: complementarity collapsed
        # or multipliers diverging while primal residual is stuck.
        if (rel_g < 1e-12 and rel_p > max(1e4 * tol, 1e-6)) or \
                float(np.sum(lam)) > 1e12 * sc_d:
            return QpSolution(z, obj, y, lam, s, "infeasible", it, rel_p, rel_d, rel_g)
        if mu > 0.9 * prev_mu:
            stall += 1
            if stall > 30:
                break
        else:
            stall = 0
        prev_mu = mu

        w = lam / s
        kkt.refactor(w)
        # Predictor (affine scaling) direction.
        rhs_d = -r_d + G.T @ (lam - w * r_g)
        dz, dy = kkt.solve(None, rhs_d, -r_p)
        ds = -r_g - G @ dz
        dlam = -lam - w * ds
        alpha_aff = min(_max_step(s, ds), _max_step(lam, dlam))
        mu_aff = float((s + alpha_aff * ds) @ (lam + alpha_aff * dlam)) / m
        sigma = min(max((mu_aff / mu) ** 3, 0.0), 1.0)

        # Corrector: recentered complementarity with the Mehrotra
        # second-order term from the affine direction.
        r_comp = s * lam + ds * dlam - sigma * mu
        rhs_d = -r_d + G.T @ (r_comp / s - w * r_g)
        dz, dy = kkt.solve(None, rhs_d, -r_p)
        ds = -r_g - G @ dz
        dlam = -(r_comp / s) - w * ds
        alpha_max = min(_max_step(s, ds), _max_step(lam, dlam))
        frac = max(0.995, 1.0 - 10.0 * rel_g)
        alpha = min(1.0, min(frac, 0.99995) * alpha_max)

        z = z + alpha * dz
        y = y + alpha * dy
        s = s + alpha * ds
        lam = lam + alpha * dlam

    _, z, y, lam, s, it, rel_p, rel_d, rel_g = best
    return QpSolution(z, problem.objective(z), y, lam, s, "max-iter",
                      max_iter, rel_p, rel_d, rel_g)


class _KktFactor:
    """Sparse LU of the reduced KKT matrix, rebuilt per iteration.

    Holds the fixed blocks so only G'WG changes between refactorizations.
    """

    def __init__(self, Q, G, A, reg):
        self.G = G
        self.n = Q.shape[1]
        self.p = A.shape[0]
        self.reg = reg
        self.Q = sp.csc_matrix(Q)
        self.A = sp.csc_matrix(A)
        self._lu = None
        self.refactor(np.ones(G.shape[0]))

    def refactor(self, w: np.ndarray):
        H = self.Q + (self.G.T @ sp.diags(w) @ self.G)
        H = H + self.reg * sp.eye(self.n)
        if self.p:
            M = sp.bmat([[H, self.A.T], [self.A, -self.reg * sp.eye(self.p)]],
                        format="csc")
        else:
            M = sp.csc_matrix(H)
        self._m = M
        try:
            # the KKT matrix is structurally symmetric and quasidefinite
            # after regularization, so a symmetric minimum-degree ordering
            # with relaxed pivoting beats the default by a wide margin
            self._lu = spla.splu(M, permc_spec="MMD_AT_PLUS_A",
                                 diag_pivot_thresh=0.01,
                                 options={"SymmetricMode": True})
        except RuntimeError as exc:  # singular factor: bad model or lost rank
            raise QpModelError(f"KKT factorization failed: {exc}") from exc

    def solve(self, w, rhs_d, rhs_p):
        if w is not None:
            self.refactor(w)
        rhs = np.concatenate([rhs_d, rhs_p]) if self.p else rhs_d
        x = self._lu.solve(rhs)
        # one refinement step against the factored (regularized) matrix
        r = rhs - self._m @ x
        if _inf(r) > 1e-13 * (1.0 + _inf(rhs)):
            x = x + self._lu.solve(r)
        return x[:self.n], x[self.n:]


def _solve_equality_qp(problem: QpProblem, tol: float) -> QpSolution:
    """Equality-constrained (or unconstrained) QP: one KKT solve."""
    n, p = problem.n, problem.n_eq
    Q, A = problem.q_mat, problem.aeq
    reg = 1e-12
    if p:
        M = sp.bmat([[Q + reg * sp.eye(n), A.T], [A, -reg * sp.eye(p)]], format="csc")
        rhs = np.concatenate([-problem.c, problem.beq])
    else:
        M = sp.csc_matrix(Q + reg * sp.eye(n))
        rhs = -problem.c
    try:
        lu = spla.splu(M, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.01,
                       options={"SymmetricMode": True})
    except RuntimeError as exc:
        raise QpModelError(f"KKT factorization failed: {exc}") from exc
    x = lu.solve(rhs)
    x = x + lu.solve(rhs - M @ x)
    z, y = x[:n], x[n:]
    rel_p, rel_d, rel_g = kkt_residuals(problem, z, y, None)
    status = "optimal" if max(rel_p, rel_d) <= max(tol, 1e-9) else "max-iter"
    return QpSolution(z, problem.objective(z), y, np.zeros(0), np.zeros(0),
                      status, 1, rel_p, rel_d, rel_g)


def dump_problem(problem: QpProblem, path) -> None:
    """Write the QP to a plain-text sparse dump for external cross-checks.

    Format: one header line per section `name rows cols nnz`, then nnz
    lines `i j value` (0-based), then `end`.  Vectors use cols=1.
    """
    def mat_lines(name, mat):
        coo = sp.coo_matrix(mat)
        yield f"{name} {coo.shape[0]} {coo.shape[1]} {coo.nnz}"
        for i, j, v in zip(coo.row, coo.col, coo.data):
            yield f"{i} {j} {v!r}"

    def vec_lines(name, vec):
        yield f"{name} {vec.size} 1 {vec.size}"
        for i, v in enumerate(vec):
            yield f"{i} 0 {v!r}"

    with open(path, "w", encoding="utf-8") as f:
        f.write("flexdispatch-qp-dump v1\n")
        for chunk in (mat_lines("Q", problem.q_mat), vec_lines("c", problem.c),
                      mat_lines("G", problem.g_mat), vec_lines("h", problem.h),
                      mat_lines("Aeq", problem.aeq), vec_lines("beq", problem.beq)):
            for line in chunk:
                f.write(line + "\n")
        f.write(f"const 1 1 1\n0 0 {problem.obj_const!r}\n")
        f.write("end\n")


def _inf(v) -> float:
    return float(np.max(np.abs(v))) if np.size(v) else 0.0


def _max_step(x: np.ndarray, dx: np.ndarray) -> float:
    neg = dx < 0
    if not np.any(neg):
        return 1.0
    return min(1.0, float(np.min(-x[neg] / dx[neg])))
