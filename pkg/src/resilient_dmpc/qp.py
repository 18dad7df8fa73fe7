"""Dense primal active-set solver for strictly convex quadratic programs.

Problems have the standard form::

    minimize    0.5 u'Hu + g'u
    subject to  A u <= b
                E u  = d

and multipliers follow the stationarity convention
``H u + g + A' mu + E' nu = 0`` with ``mu >= 0``.

The solver is written for the small dense problems that appear in the
microgrid negotiation (tens to a few hundred variables). A solver object keeps
its constraint set fixed and caches KKT factorizations per working set, so a
sequence of solves that only changes the linear term (one negotiation round
after another) usually costs a single matrix-vector product.
"""

from __future__ import annotations

import io
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, TextIO, Tuple, Union

import numpy as np
import scipy.linalg

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
ITERATION_LIMIT = "iteration-limit"


class QpError(ValueError):
    """Raised for malformed problems (shape mismatch, indefinite H)."""


def _as_matrix(M, n_cols: int) -> np.ndarray:
    if M is None:
        return np.zeros((0, n_cols))
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        return np.zeros((0, n_cols))
    return M


def _as_vector(v, n: int) -> np.ndarray:
    if v is None:
        return np.zeros(n)
    return np.asarray(v, dtype=float).reshape(-1)


@dataclass
class QpProblem:
    """Strictly convex QP ``min 0.5 u'Hu + g'u  s.t.  A u <= b,  E u = d``."""

    H: np.ndarray
    g: np.ndarray
    A: Optional[np.ndarray] = None
    b: Optional[np.ndarray] = None
    E: Optional[np.ndarray] = None
    d: Optional[np.ndarray] = None

    def __post_init__(self):
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        n = self.H.shape[0]
        if self.H.shape != (n, n):
            raise QpError(f"H must be square, got shape {self.H.shape}")
        if not np.allclose(self.H, self.H.T, rtol=1e-12, atol=1e-12):
            raise QpError("H must be symmetric")
        self.g = _as_vector(self.g, n)
        self.A = _as_matrix(self.A, n)
        self.b = _as_vector(self.b, self.A.shape[0])
        self.E = _as_matrix(self.E, n)
        self.d = _as_vector(self.d, self.E.shape[0])
        if self.g.shape != (n,):
            raise QpError(f"g has length {self.g.size}, expected {n}")
        if self.A.shape[1] != n or self.b.shape != (self.A.shape[0],):
            raise QpError("inequality rows A, b have inconsistent dimensions")
        if self.E.shape[1] != n or self.d.shape != (self.E.shape[0],):
            raise QpError("equality rows E, d have inconsistent dimensions")

    @property
    def n(self) -> int:
        return self.H.shape[0]

    def objective(self, u: np.ndarray) -> float:
        return float(0.5 * u @ self.H @ u + self.g @ u)


@dataclass
class QpSolution:
    u_star: np.ndarray
    ineq_duals: np.ndarray
    eq_duals: np.ndarray
    status: str
    kkt_residual: float
    iterations: int = 0
    working_set: tuple = ()

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


@dataclass
class WarmStart:
    """Starting information for :meth:`ActiveSetSolver.solve`.

    ``u`` is used only if it is feasible; ``working_set`` is filtered down to
    the rows active at the starting point.
    """

    u: Optional[np.ndarray] = None
    working_set: Sequence[int] = ()


@dataclass
class KktReport:
    """Absolute KKT residuals plus the magnitudes used to scale them."""

    stationarity: float
    primal_feasibility: float
    dual_feasibility: float
    complementarity: float
    scales: dict = field(default_factory=dict)

    @property
    def max_residual(self) -> float:
        return max(self.stationarity, self.primal_feasibility,
                   self.dual_feasibility, self.complementarity)

    @property
    def relative(self) -> float:
        """Largest residual relative to ``1 + magnitude`` of its terms."""
        return max(
            self.stationarity / (1.0 + self.scales.get("stationarity", 0.0)),
            self.primal_feasibility / (1.0 + self.scales.get("primal", 0.0)),
            self.dual_feasibility / (1.0 + self.scales.get("dual", 0.0)),
            self.complementarity / (1.0 + self.scales.get("complementarity", 0.0)),
        )

    @property
    def dual_feasible(self) -> bool:
        return self.dual_feasibility == 0.0


def check_kkt(p: QpProblem, s: QpSolution) -> KktReport:
    """Evaluate KKT residuals of ``s`` for ``p`` directly from the data.

    Nothing from the solve path is reused apart from the returned primal and
    dual vectors, so this is an independent certificate of optimality.
    """
    u = np.asarray(s.u_star, dtype=float)
    mu = np.asarray(s.ineq_duals, dtype=float)
    nu = np.asarray(s.eq_duals, dtype=float)
    Hu = p.H @ u
    At_mu = p.A.T @ mu if mu.size else np.zeros(p.n)
    Et_nu = p.E.T @ nu if nu.size else np.zeros(p.n)
    r_stat = Hu + p.g + At_mu + Et_nu
    Au = p.A @ u
    Eu = p.E @ u
    slack = p.b - Au
    viol = max(float(np.max(-slack, initial=0.0)),
               float(np.max(np.abs(Eu - p.d), initial=0.0)))
    primal_scale = max(float(np.max(np.abs(p.b), initial=0.0)),
                       float(np.max(np.abs(p.d), initial=0.0)),
                       float(np.max(np.abs(Au), initial=0.0)),
                       float(np.max(np.abs(Eu), initial=0.0)))
    mu_scale = float(np.max(np.abs(mu), initial=0.0))
    return KktReport(
        stationarity=float(np.max(np.abs(r_stat), initial=0.0)),
        primal_feasibility=viol,
        dual_feasibility=float(np.max(-mu, initial=0.0)),
        complementarity=float(np.max(np.abs(mu * slack), initial=0.0)),
        scales={
            "stationarity": max(float(np.max(np.abs(v), initial=0.0))
                                for v in (Hu, p.g, At_mu, Et_nu)),
            "primal": primal_scale,
            "dual": mu_scale,
            "complementarity": mu_scale * (1.0 + primal_scale),
        },
    )


class _Face:
    """Affine solution map of the equality-constrained QP on one working set."""

    __slots__ = ("u_of_g", "u_const", "lam_of_g", "lam_const")

    def __init__(self, u_of_g, u_const, lam_of_g, lam_const):
        self.u_of_g = u_of_g
        self.u_const = u_const
        self.lam_of_g = lam_of_g
        self.lam_const = lam_const


class ActiveSetSolver:
    """Primal active-set solver bound to one Hessian and constraint set.

    Parameters
    ----------
    problem : QpProblem
        Supplies ``H``, the constraints and the default linear term.
    tol : float
        Relative KKT tolerance required for an ``optimal`` status.
    max_iter : int, optional
        Iteration cap; defaults to ``200 + 10 * (number of rows)``.
    cache_size : int
        Number of working-set factorizations kept. Factorizations are only
        cached for systems of at most ``cache_dim`` unknowns.

    Internally the variables are rescaled so that ``H`` has a unit diagonal
    and every constraint row has unit norm; all public inputs and outputs are
    in the original coordinates.
    """

    def __init__(self, problem: QpProblem, tol: float = 1e-8,
                 max_iter: Optional[int] = None, cache_size: int = 64,
                 cache_dim: int = 160):
        if tol <= 0:
            raise QpError("tol must be positive")
        self.problem = problem
        self.tol = tol
        self.n = problem.n
        try:
            np.linalg.cholesky(problem.H)
        except np.linalg.LinAlgError:
            raise QpError("H is not positive definite") from None
        s = 1.0 / np.sqrt(np.diag(problem.H))
        self.col_scale = s
        self.H = problem.H * s[:, None] * s[None, :]
        A = problem.A * s[None, :]
        norms = np.linalg.norm(A, axis=1) if A.size else np.zeros(0)
        self._zero_rows = norms == 0.0
        self.row_norm = np.where(self._zero_rows, 1.0, norms)
        self.A = A / self.row_norm[:, None]
        self.b = problem.b / self.row_norm
        E = problem.E * s[None, :]
        enorm = np.linalg.norm(E, axis=1) if E.size else np.zeros(0)
        if np.any(enorm == 0.0):
            zero = enorm == 0.0
            if np.any(np.abs(problem.d[zero]) > 0):
                self._eq_inconsistent = True
            enorm = np.where(zero, 1.0, enorm)
        self._eq_inconsistent = getattr(self, "_eq_inconsistent", False)
        self.eq_norm = enorm
        self.E = E / enorm[:, None]
        self.d = problem.d / enorm
        self.m_in = self.A.shape[0]
        self.m_eq = self.E.shape[0]
        self.max_iter = max_iter if max_iter is not None else 200 + 10 * (self.m_in + self.m_eq)
        self._cache: "OrderedDict[tuple, _Face]" = OrderedDict()
        self._cache_size = cache_size
        self._cache_dim = cache_dim
        self._scale_b = 1.0 + max(float(np.max(np.abs(self.b), initial=0.0)),
                                  float(np.max(np.abs(self.d), initial=0.0)))

    # -- linear algebra (scaled coordinates) ----------------------------

    def _kkt_matrix(self, W: tuple) -> np.ndarray:
        n = self.n
        C = np.vstack([self.E, self.A[list(W)]]) if W else self.E
        m = C.shape[0]
        K = np.zeros((n + m, n + m))
        K[:n, :n] = self.H
        K[:n, n:] = C.T
        K[n:, :n] = C
        return K

    def _rhs_const(self, W: tuple) -> np.ndarray:
        return np.concatenate([self.d, self.b[list(W)]]) if W else self.d.copy()

    def _face(self, W: tuple) -> Optional[_Face]:
        face = self._cache.get(W)
        if face is not None:
            self._cache.move_to_end(W)
            return face
        n = self.n
        if self._cache_size == 0 or n + self.m_eq + len(W) > self._cache_dim:
            return None
        K = self._kkt_matrix(W)
        try:
            Kinv = np.linalg.inv(K)
        except np.linalg.LinAlgError:
            return None
        c = self._rhs_const(W)
        face = _Face(-Kinv[:n, :n], Kinv[:n, n:] @ c, -Kinv[n:, :n], Kinv[n:, n:] @ c)
        self._cache[W] = face
        if len(self._cache) > self._cache_size:
            self._cache.popitem(last=False)
        return face

    def face_map(self, W: Sequence[int]) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Affine maps of the working-set minimizer in original coordinates.

        Returns ``(Fu, cu, Fl, cl)`` with ``u = Fu @ g + cu`` and, for the
        normalized rows in ``W``, multipliers ``Fl @ g + cl``.
        """
        W = tuple(W)
        face = self._face(W)
        if face is None:
            n = self.n
            Kinv = np.linalg.inv(self._kkt_matrix(W))
            c = self._rhs_const(W)
            face = _Face(-Kinv[:n, :n], Kinv[:n, n:] @ c, -Kinv[n:, :n], Kinv[n:, n:] @ c)
        s = self.col_scale
        Fu = s[:, None] * face.u_of_g * s[None, :]
        cu = s * face.u_const
        Fl = face.lam_of_g[self.m_eq:] * s[None, :]
        cl = face.lam_const[self.m_eq:]
        return Fu, cu, Fl, cl

    def _solve_face(self, W: tuple, g: np.ndarray):
        """Minimizer of the QP restricted to the working set ``W``."""
        face = self._face(W)
        if face is not None:
            u = face.u_of_g @ g + face.u_const
            lam = face.lam_of_g @ g + face.lam_const
        else:
            K = self._kkt_matrix(W)
            rhs = np.concatenate([-g, self._rhs_const(W)])
            try:
                sol = np.linalg.solve(K, rhs)
            except np.linalg.LinAlgError:
                sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
            u, lam = sol[:self.n], sol[self.n:]
        return u, lam[:self.m_eq], lam[self.m_eq:]

    def _independent(self, candidates: Iterable[int], base: Sequence[int] = ()) -> list:
        """Greedy subset of ``candidates`` linearly independent of E and ``base``."""
        basis = []

        def _push(row) -> bool:
            r = row.copy()
            for q in basis:
                r -= (q @ r) * q
            nr = np.linalg.norm(r)
            if nr > 1e-9 * (1.0 + np.linalg.norm(row)):
                basis.append(r / nr)
                return True
            return False

        for row in self.E:
            _push(row)
        chosen = []
        for i in base:
            if _push(self.A[i]):
                chosen.append(i)
        for i in candidates:
            if i in chosen:
                continue
            if _push(self.A[i]):
                chosen.append(i)
        return chosen

    # -- phases (scaled coordinates) -------------------------------------

    def _feas_tol(self) -> float:
        return self.tol * self._scale_b

    def _is_feasible(self, u: np.ndarray) -> bool:
        ft = self._feas_tol()
        if self.m_in and np.max(self.A @ u - self.b) > ft:
            return False
        if self.m_eq and np.max(np.abs(self.E @ u - self.d)) > ft:
            return False
        return True

    def _phase1(self, u0: np.ndarray):
        """Projection of ``u0`` onto the feasible set; ``None`` if it is empty.

        Dual active-set iterations (Goldfarb-Idnani with an identity
        Hessian): start from the projection onto ``E u = d``, repeatedly add
        the most violated row, stepping in the primal and dual spaces and
        dropping rows whose multipliers would turn negative. A violated row
        that no step can reduce certifies infeasibility.
        """
        n = self.n
        ft = self._feas_tol()
        if self._eq_inconsistent or np.any(self._zero_rows & (self.b < -ft)):
            return None
        u = np.array(u0, dtype=float)
        eq_rows: list = []
        if self.m_eq:
            _, R, piv = scipy.linalg.qr(self.E.T, mode="economic", pivoting=True)
            rank = int(np.sum(np.abs(np.diag(R)) > 1e-10 * max(1.0, abs(R[0, 0]))))
            eq_rows = sorted(piv[:rank].tolist())
            Er = self.E[eq_rows]
            u = u + np.linalg.lstsq(Er, self.d[eq_rows] - Er @ u, rcond=None)[0]
            if np.max(np.abs(self.E @ u - self.d)) > ft:
                return None
        if not self.m_in:
            return u
        # active normals stored as rows; inequalities in the form A u <= b
        active: list = []
        mult = np.zeros(0)
        N_eq = self.E[eq_rows] if eq_rows else np.zeros((0, n))
        limit = 50 * (n + self.m_in)
        for _ in range(limit):
            viol = self.A @ u - self.b
            p = int(np.argmax(viol))
            if viol[p] <= 0.1 * ft:
                return u if self._is_feasible(u) else None
            a_p = self.A[p]
            mult_p = 0.0
            while True:
                N = np.vstack([N_eq, self.A[active]]) if active else N_eq
                if N.shape[0]:
                    Q, R = np.linalg.qr(N.T)
                    proj = Q.T @ a_p
                    z = a_p - Q @ proj
                    r = np.linalg.solve(R, proj) if R.size else np.zeros(0)
                else:
                    z = a_p.copy()
                    r = np.zeros(0)
                r_in = r[len(eq_rows):]
                zz = float(z @ z)
                t2 = np.inf if zz <= 1e-14 * float(a_p @ a_p) else float(viol[p]) / zz
                t1, k = np.inf, -1
                for q in range(len(active)):
                    if r_in[q] > 1e-14:
                        ratio = mult[q] / r_in[q]
                        if ratio < t1:
                            t1, k = ratio, q
                if not np.isfinite(t1) and not np.isfinite(t2):
                    return None
                t = min(t1, t2)
                if np.isfinite(t2):
                    # moving along -z lowers row p's violation at unit rate per zz
                    u = u - t * z
                    viol[p] -= t * zz
                mult = mult - t * r_in
                mult_p += t
                if t2 <= t1:
                    active.append(p)
                    mult = np.append(mult, mult_p)
                    break
                active.pop(k)
                mult = np.delete(mult, k)
        return u if self._is_feasible(u) else None

    def _mult_tol(self, g: np.ndarray, u: np.ndarray) -> float:
        return 1e-3 * self.tol * (1.0 + float(np.max(np.abs(g), initial=0.0))
                           + float(np.max(np.abs(self.H @ u), initial=0.0)))

    def _phase2(self, g: np.ndarray, u: np.ndarray, W: list, max_iter: int):
        """Primal active-set iterations from the feasible point ``u``.

        Returns ``(u, mu, nu, status, iterations, working_set)`` with
        multipliers of the normalized rows.
        """
        n = self.n
        W = list(W)
        mult_tol = self._mult_tol(g, u)
        zero_steps = 0
        status = ITERATION_LIMIT
        nu = np.zeros(self.m_eq)
        muW = np.zeros(0)
        it = 0
        for it in range(1, max_iter + 1):
            u_new, nu, muW = self._solve_face(tuple(W), g)
            p = u_new - u
            step_norm = float(np.max(np.abs(p), initial=0.0))
            if step_norm > 1e-13 * (1.0 + float(np.max(np.abs(u), initial=0.0))):
                alpha = 1.0
                block = -1
                if self.m_in:
                    Ap = self.A @ p
                    # rows already satisfied to rounding along p are not blocking
                    cand = Ap > 1e-12 * (step_norm + float(np.max(np.abs(u), initial=0.0)))
                    if W:
                        cand[W] = False
                    tiny = step_norm <= 1e-6 * (1.0 + float(np.max(np.abs(u), initial=0.0)))
                    while np.any(cand):
                        idx = np.nonzero(cand)[0]
                        slack = np.maximum(self.b[idx] - self.A[idx] @ u, 0.0)
                        ratios = slack / Ap[idx]
                        rmin = float(ratios.min())
                        if rmin >= 1.0:
                            break
                        ties = idx[ratios <= rmin + 1e-14]
                        block = int(ties.min())
                        # a rounding-size step must not pull in a row that
                        # depends on the working set (degenerate vertex)
                        if tiny and block not in self._independent([block], base=W):
                            cand[block] = False
                            block = -1
                            continue
                        alpha = rmin
                        break
                if block >= 0:
                    u = u + alpha * p
                    W.append(block)
                    zero_steps = zero_steps + 1 if alpha == 0.0 else 0
                    continue
            u = u_new
            if muW.size == 0 or float(muW.min()) >= -mult_tol:
                status = OPTIMAL
                break
            neg = np.nonzero(muW < -mult_tol)[0]
            if zero_steps > 2 * n:
                # smallest-index rule once degenerate steps pile up
                pos = int(min(neg, key=lambda q: W[q]))
            else:
                pos = int(neg[np.argmin(muW[neg])])
            W.pop(pos)
        mu = np.zeros(self.m_in)
        if status == OPTIMAL and W:
            mu[W] = np.maximum(muW, 0.0)
        return u, mu, nu, status, it, tuple(W)

    def _to_solution(self, u, mu, nu, status, it, W) -> QpSolution:
        return QpSolution(u_star=u * self.col_scale, ineq_duals=mu / self.row_norm,
                          eq_duals=nu / self.eq_norm, status=status, kkt_residual=np.inf,
                          iterations=it, working_set=tuple(W))

    # -- public ----------------------------------------------------------

    def minimize(self, g: np.ndarray, u_prev: Optional[np.ndarray] = None,
                 working_set: Sequence[int] = ()) -> Tuple[np.ndarray, tuple]:
        """Minimizer for linear term ``g``, warm-started from a previous optimum.

        When the previous working set is still optimal for the new ``g`` the
        answer is a single affine evaluation. Raises :class:`QpError` if the
        problem cannot be solved to optimality.
        """
        W = tuple(working_set)
        if u_prev is not None:
            face = self._face(W)
            if face is not None:
                gs = self.col_scale * g
                u = face.u_of_g @ gs + face.u_const
                ok = not self.m_in or float(np.max(self.A @ u - self.b)) <= self._feas_tol()
                if ok and W:
                    lam = face.lam_of_g[self.m_eq:] @ gs + face.lam_const[self.m_eq:]
                    ok = float(lam.min()) >= -self._mult_tol(gs, u)
                if ok:
                    return u * self.col_scale, W
        sol = self.solve(g, WarmStart(u_prev, W))
        if not sol.optimal:
            raise QpError(f"local problem not solved: {sol.status}")
        return sol.u_star, tuple(sol.working_set)

    def solve(self, g: Optional[np.ndarray] = None,
              warm_start: Optional[WarmStart] = None) -> QpSolution:
        """Solve with linear term ``g`` (defaults to the problem's own)."""
        g = self.problem.g if g is None else np.asarray(g, dtype=float)
        gs = self.col_scale * g
        n = self.n
        u = None
        W: list = []
        ft = self._feas_tol()
        u0 = np.zeros(n)
        if warm_start is not None and warm_start.working_set:
            u, W = self._from_working_set(gs, warm_start.working_set)
        if u is None and warm_start is not None and warm_start.u is not None:
            u0 = np.asarray(warm_start.u, dtype=float).reshape(n) / self.col_scale
            if self._is_feasible(u0):
                u = u0
                if self.m_in:
                    active = set(np.nonzero(np.abs(self.b - self.A @ u) <= ft)[0].tolist())
                    W = self._independent([i for i in warm_start.working_set if i in active])
        if u is None:
            u = self._phase1(u0)
            if u is None:
                return QpSolution(u_star=u0 * self.col_scale, ineq_duals=np.zeros(self.m_in),
                                  eq_duals=np.zeros(self.m_eq), status=INFEASIBLE,
                                  kkt_residual=np.inf)
            if self.m_in:
                active = np.nonzero(np.abs(self.b - self.A @ u) <= ft)[0]
                W = self._independent(active.tolist())
        sol = self._to_solution(*self._phase2(gs, u, W, self.max_iter))
        if sol.status == OPTIMAL:
            p = self.problem if g is self.problem.g else QpProblem(
                self.problem.H, g, self.problem.A, self.problem.b,
                self.problem.E, self.problem.d)
            sol.kkt_residual = check_kkt(p, sol).relative
            if sol.kkt_residual > self.tol:
                sol = self._refine(p, gs, sol)
        return sol

    def _from_working_set(self, gs: np.ndarray, guess: Sequence[int]):
        """Feasible start from a guessed working set, or ``(None, [])``.

        The guess is reduced to linearly independent rows; if the minimizer
        on that face is feasible it becomes the starting point of phase 2.
        """
        rows = [int(i) for i in guess if 0 <= int(i) < self.m_in]
        W = self._independent(rows)
        u, _, _ = self._solve_face(tuple(W), gs)
        if np.all(np.isfinite(u)) and self._is_feasible(u):
            return u, W
        return None, []

    def _refine(self, p: QpProblem, gs: np.ndarray, sol: QpSolution) -> QpSolution:
        """Iterative refinement on the final working-set system."""
        W = tuple(sol.working_set)
        Wl = list(W)
        K = self._kkt_matrix(W)
        x = np.concatenate([sol.u_star / self.col_scale, sol.eq_duals * self.eq_norm,
                            sol.ineq_duals[Wl] * self.row_norm[Wl]])
        rhs = np.concatenate([-gs, self._rhs_const(W)])
        for _ in range(2):
            x = x + np.linalg.lstsq(K, rhs - K @ x, rcond=None)[0]
        mu = np.zeros(self.m_in)
        if W:
            mu[Wl] = np.maximum(x[self.n + self.m_eq:], 0.0)
        refined = self._to_solution(x[:self.n], mu, x[self.n:self.n + self.m_eq],
                                    OPTIMAL, sol.iterations, W)
        refined.kkt_residual = check_kkt(p, refined).relative
        if refined.kkt_residual > self.tol:
            refined.status = ITERATION_LIMIT
        return refined


def solve_qp(p: QpProblem, tol: float = 1e-8, warm_start: Optional[WarmStart] = None,
             max_iter: Optional[int] = None) -> QpSolution:
    """Solve ``p`` with the primal active-set method.

    Returns a :class:`QpSolution` whose status is ``"optimal"``,
    ``"infeasible"`` (phase 1 could not reach the feasible set) or
    ``"iteration-limit"``.
    """
    return ActiveSetSolver(p, tol=tol, max_iter=max_iter, cache_size=0).solve(
        warm_start=warm_start)


# -- diagnostics ---------------------------------------------------------------

def dump_qp(p: QpProblem, out: Union[str, TextIO, None] = None) -> str:
    """Write ``p`` as plain-text matrix blocks (``name rows cols`` + rows)."""
    buf = io.StringIO()
    for name, M in (("H", p.H), ("g", p.g[None, :]), ("A", p.A), ("b", p.b[None, :]),
                    ("E", p.E), ("d", p.d[None, :])):
        M = np.atleast_2d(M)
        buf.write(f"{name} {M.shape[0]} {M.shape[1]}\n")
        for row in M:
            buf.write(" ".join(repr(float(x)) for x in row) + "\n")
    text = buf.getvalue()
    if isinstance(out, str):
        with open(out, "w") as fh:
            fh.write(text)
    elif out is not None:
        out.write(text)
    return text


def load_qp(text: str) -> QpProblem:
    lines = iter(text.splitlines())
    blocks = {}
    for header in lines:
        if not header.strip():
            continue
        name, r, c = header.split()
        rows = [next(lines) for _ in range(int(r))]
        data = [[float(x) for x in row.split()] for row in rows]
        blocks[name] = np.array(data, dtype=float).reshape(int(r), int(c))
    n = blocks["H"].shape[0]
    return QpProblem(blocks["H"], blocks["g"].reshape(-1),
                     blocks["A"] if blocks["A"].size else np.zeros((0, n)),
                     blocks["b"].reshape(-1),
                     blocks["E"] if blocks["E"].size else np.zeros((0, n)),
                     blocks["d"].reshape(-1))
