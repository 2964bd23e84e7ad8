"""Thin wrapper around the Clarabel interior-point solver for convex QPs."""

from __future__ import annotations

import clarabel
import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class QPResult:
    __slots__ = ("status", "x", "obj")

    def __init__(self, status, x, obj):
        self.status = status
        self.x = x
        self.obj = obj

    @property
    def ok(self):
        return self.status in ("Solved", "AlmostSolved")

    @property
    def infeasible(self):
        return "Infeasible" in self.status


def _settings(tight):
    st = clarabel.DefaultSettings()
    st.verbose = False
    if tight:
        st.tol_feas = 1e-10
        st.tol_gap_abs = 1e-10
        st.tol_gap_rel = 1e-10
    st.max_iter = 100
    return st


def solve_qp(P, q, G=None, h=None, Aeq=None, beq=None, tight=True, polish=False) -> QPResult:
    """minimize 0.5 x'Px + q'x  s.t.  G x <= h,  Aeq x = beq.

    ``P`` is symmetric; only its upper triangle is passed to the solver.
    Dense or sparse inputs are accepted. With ``polish`` the interior-point
    answer is replaced by the exact KKT solution on its active set when that
    solution is primal and dual feasible, so constraints with slack have no
    influence at all on the result.
    """
    n = len(q)
    P = sp.triu(sp.csc_matrix(P), format="csc")
    blocks, rhs, cones = [], [], []
    if Aeq is not None and len(beq):
        blocks.append(sp.csc_matrix(Aeq))
        rhs.append(np.asarray(beq, dtype=float))
        cones.append(clarabel.ZeroConeT(len(beq)))
    if G is not None and len(h):
        blocks.append(sp.csc_matrix(G))
        rhs.append(np.asarray(h, dtype=float))
        cones.append(clarabel.NonnegativeConeT(len(h)))
    if not blocks:
        A = sp.csc_matrix((0, n))
        b = np.zeros(0)
    else:
        A = sp.vstack(blocks, format="csc")
        b = np.concatenate(rhs)
    solver = clarabel.DefaultSolver(P, np.asarray(q, dtype=float), A, b, cones, _settings(tight))
    res = solver.solve()
    out = QPResult(str(res.status), np.array(res.x), res.obj_val)
    if polish and out.ok and G is not None and len(h):
        x = _polish(P, np.asarray(q, float), sp.csc_matrix(G), np.asarray(h, float),
                    None if Aeq is None else sp.csc_matrix(Aeq),
                    None if beq is None else np.asarray(beq, float), out.x)
        if x is not None:
            out.x = x
            Pf = P + sp.triu(P, k=1).T
            out.obj = float(0.5 * x @ (Pf @ x) + np.asarray(q, float) @ x)
    return out


def _polish(P_upper, q, G, h, Aeq, beq, x, act_tol=1e-7, feas_tol=1e-9):
    n = len(q)
    P = P_upper + sp.triu(P_upper, k=1).T
    active = np.flatnonzero(G @ x >= h - act_tol)
    rows = [G[active]]
    rhs = [h[active]]
    if Aeq is not None and Aeq.shape[0]:
        rows.insert(0, Aeq)
        rhs.insert(0, beq)
    C = sp.vstack(rows, format="csc")
    d = np.concatenate(rhs)
    m = C.shape[0]
    # tiny regularization keeps the system solvable when active rows repeat
    K = sp.bmat([[P, C.T], [C, -1e-14 * sp.identity(m)]], format="csc")
    try:
        sol = spla.spsolve(K, np.concatenate([-q, d]))
    except RuntimeError:
        return None
    if not np.all(np.isfinite(sol)):
        return None
    xp = sol[:n]
    lam = sol[n:]
    n_eq = m - len(active)
    if np.max(G @ xp - h) > feas_tol or (Aeq is not None and Aeq.shape[0] and
                                          np.max(np.abs(Aeq @ xp - beq)) > feas_tol):
        return None
    if len(active) and np.min(lam[n_eq:]) < -1e-7:
        return None
    return xp
