"""Price-based negotiation of energy transfers between neighboring agents.

Every agent solves its local problem with a linear price on the transfers it
receives, exchanges the planned transfers with its neighbors and raises the
price on each edge in proportion to the disagreement
``psi = p_ji + p_ij`` (dual ascent on the coupling ``p_ji + p_ij = 0``).
Rounds are synchronous: all local solves of a round finish before any
multiplier changes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

import numpy as np

from .model import N_LOCAL, HorizonProblem
from .qp import ActiveSetSolver, QpError, QpProblem


class NegotiationError(RuntimeError):
    """Protocol failure: a message needed for a local solve is missing."""


@dataclass
class MessageRecord:
    round: int
    sender: int
    receiver: int
    kind: str  # "lambda" or "u_c"
    values: np.ndarray

    def as_row(self) -> list:
        return [self.round, self.sender, self.receiver, self.kind] + [float(x) for x in self.values]


@dataclass
class NegotiationState:
    """Multipliers of every agent, laid out ``(h_p, |N_i|)`` in neighbor order."""

    lam: Dict[int, np.ndarray]
    gamma_step: float = 0.05
    eps: float = 1e-3
    max_iter: int = 5000
    diminishing: bool = False
    iteration: int = 0
    psi: Dict[int, np.ndarray] = field(default_factory=dict)
    working_sets: Dict[int, tuple] = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 < self.gamma_step < 1.0:
            raise ValueError("gamma_step must lie in (0, 1)")

    @classmethod
    def zeros(cls, problems: Mapping[int, HorizonProblem], **kw) -> "NegotiationState":
        return cls({i: np.zeros((p.h_p, len(p.agent.neighbors))) for i, p in problems.items()}, **kw)

    def shifted(self) -> "NegotiationState":
        """Warm start for the next sampling instant: drop step 0, repeat the last step."""
        lam = {}
        for i, L in self.lam.items():
            if L.shape[0] == 0:
                lam[i] = L.copy()
            else:
                lam[i] = np.vstack([L[1:], L[-1:]])
        return NegotiationState(lam, self.gamma_step, self.eps, self.max_iter, self.diminishing,
                                working_sets=dict(self.working_sets))


@dataclass
class NegotiationResult:
    u: Dict[int, np.ndarray]
    state: NegotiationState
    converged: bool
    iterations: int
    residual_norms: Dict[int, float]
    fallback: bool = False
    messages: List[MessageRecord] = field(default_factory=list)


def coupling_residual(u_c_self: np.ndarray, u_c_neighbors: np.ndarray) -> np.ndarray:
    """``psi[l, j] = p_ji + p_ij``: transfer agent i plans to receive from j plus
    the transfer j plans to receive from i."""
    return np.asarray(u_c_self, dtype=float) + np.asarray(u_c_neighbors, dtype=float)


def multiplier_update(lam: np.ndarray, psi: np.ndarray, gamma_step: float) -> np.ndarray:
    if not 0.0 < gamma_step < 1.0:
        raise ValueError("gamma_step must lie in (0, 1)")
    return np.asarray(lam, dtype=float) + gamma_step * np.asarray(psi, dtype=float)


def coupling_price(lam_self: np.ndarray, lam_neighbors: Mapping[int, np.ndarray],
                   problem: HorizonProblem, active: Iterable[int]) -> np.ndarray:
    """``y[l, j] = lam_i[l, j] + lam_j[l, i]`` for active neighbors, zero elsewhere.

    ``lam_neighbors[j]`` is neighbor ``j``'s multiplier entry for the edge to
    this agent, one value per horizon step.
    """
    y = np.zeros((problem.h_p, len(problem.agent.neighbors)))
    for j in active:
        if j not in lam_neighbors:
            raise NegotiationError(f"agent {problem.agent.index}: no multiplier from neighbor {j}")
        pos = problem.agent.neighbor_pos(j)
        y[:, pos] = lam_self[:, pos] + np.asarray(lam_neighbors[j], dtype=float)
    return y


def build_local_subproblem(problem: HorizonProblem, lam_self: np.ndarray,
                           lam_neighbors: Mapping[int, np.ndarray],
                           active: Optional[Iterable[int]] = None) -> QpProblem:
    """Local QP with the coupling price added to the transfer entries of the linear term."""
    active = problem.agent.neighbors if active is None else tuple(active)
    y = coupling_price(lam_self, lam_neighbors, problem, active)
    g = np.zeros(problem.n)
    for pos in range(len(problem.agent.neighbors)):
        g[problem.transfer_indices(pos)] = y[:, pos]
    return problem.to_qp(g)


class _Layout:
    """Flat indexing of all directed coupled entries across agents."""

    def __init__(self, problems: Mapping[int, HorizonProblem], edges: Set[Tuple[int, int]]):
        self.agents = sorted(problems)
        self.offset = {}
        off = 0
        for i in self.agents:
            self.offset[i] = off
            off += problems[i].n
        self.total = off
        u_idx, lam_pos, owner = [], [], []
        key = {}
        for i in self.agents:
            p = problems[i]
            for pos, j in enumerate(p.agent.neighbors):
                if (min(i, j), max(i, j)) not in edges:
                    continue
                for l in range(p.h_p):
                    key[(i, j, l)] = len(u_idx)
                    u_idx.append(self.offset[i] + p.transfer_index(l, pos))
                    lam_pos.append((i, l, pos))
                    owner.append(i)
        self.key = key
        self.u_idx = np.array(u_idx, dtype=int)
        self.rev = np.array([key[(j, i, l)] for (i, j, l) in key], dtype=int)
        self.lam_pos = lam_pos
        owner = np.array(owner, dtype=int)
        # per agent: directed entries and where they sit in the local vector
        self.local = {}
        for i in self.agents:
            sel = np.nonzero(owner == i)[0]
            self.local[i] = (sel, self.u_idx[sel] - self.offset[i])

    def gather_lam(self, lam: Mapping[int, np.ndarray]) -> np.ndarray:
        return np.array([lam[i][l, pos] for (i, l, pos) in self.lam_pos], dtype=float)

    def scatter_lam(self, flat: np.ndarray, lam: Dict[int, np.ndarray]) -> None:
        for k, (i, l, pos) in enumerate(self.lam_pos):
            lam[i][l, pos] = flat[k]


def active_mask(problem: HorizonProblem, edges: Set[Tuple[int, int]]) -> Tuple[int, ...]:
    i = problem.agent.index
    return tuple(int((min(i, j), max(i, j)) in edges) for j in problem.agent.neighbors)


class _Face:
    """Affine response of one agent's local optimum to its coupling prices.

    Valid as long as the working set ``W`` stays optimal, i.e. all slacks
    and working-set multipliers remain nonnegative.
    """

    def __init__(self, solver: ActiveSetSolver, loc: np.ndarray, W: tuple):
        Fu, cu, Fl, cl = solver.face_map(W)
        self.W = W
        self.Pu = Fu[:, loc]
        self.cu = cu
        Ao = solver.A / solver.col_scale[None, :]
        self.Ps = -(Ao @ self.Pu)
        self.cs = solver.b - Ao @ cu
        self.Pl = Fl[:, loc]
        self.cl = cl
        self.Pc = self.Pu[loc]
        self.cc = cu[loc]
        self.feas_tol = solver._feas_tol()
        self.smax = float(solver.col_scale.max())


def negotiate(problems: Mapping[int, HorizonProblem], effective_edges: Iterable[Tuple[int, int]],
              state: Optional[NegotiationState] = None, eps: Optional[float] = None,
              gamma_step: Optional[float] = None, max_iter: Optional[int] = None,
              record_messages: bool = False, executor=None, block: int = 64) -> NegotiationResult:
    """Run synchronous negotiation rounds until every agent's stacked residual is at most ``eps``.

    ``problems`` are the agents' local problems (already tightened where
    required). Transfers on edges outside ``effective_edges`` are pinned to 0
    and carry no multiplier. If ``max_iter`` rounds do not reach agreement,
    each agent falls back to its local solution with all transfers at 0 and
    the result is flagged ``fallback``.

    Each round, every agent's local optimum is an affine function of its
    prices as long as its optimal working set does not change. Rounds are
    therefore evaluated ``block`` at a time through these affine maps, and
    each agent's map is checked for optimality (primal slack and multiplier
    signs) at every round; an agent whose working set stops being optimal
    re-solves its local problem at that round. ``executor`` (e.g. a
    ``concurrent.futures.ThreadPoolExecutor``) runs those local solves
    concurrently; results do not depend on it.
    """
    edges = {(min(i, j), max(i, j)) for (i, j) in effective_edges}
    state = NegotiationState.zeros(problems) if state is None else state
    eps = state.eps if eps is None else eps
    gamma = state.gamma_step if gamma_step is None else gamma_step
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma_step must lie in (0, 1)")
    max_iter = state.max_iter if max_iter is None else max_iter

    masks = {i: active_mask(p, edges) for i, p in problems.items()}
    masked = {i: p.with_transfer_mask(masks[i]) for i, p in problems.items()}
    solvers = {i: ActiveSetSolver(masked[i].to_qp()) for i in masked}
    lay = _Layout(masked, edges)
    agents = lay.agents
    lam = {i: np.array(state.lam.get(i, np.zeros((p.h_p, len(p.agent.neighbors)))), dtype=float)
           for i, p in masked.items()}
    for i, p in masked.items():
        if lam[i].shape != (p.h_p, len(p.agent.neighbors)):
            raise NegotiationError(f"agent {i}: multiplier layout does not match the problem")
        lam[i][:, np.array(active_mask(p, edges), dtype=bool) == False] = 0.0  # noqa: E712
    L = lay.gather_lam(lam)
    D = L.size
    rev = lay.rev
    sel = {i: lay.local[i][0] for i in agents}
    loc = {i: lay.local[i][1] for i in agents}

    def local_solve(i: int, y: np.ndarray, u_prev):
        g = np.zeros(masked[i].n)
        g[loc[i]] = y[sel[i]]
        if i in faces:
            guess = faces[i].W
        else:
            # a working set only carries over if the row layout is unchanged
            prev_mask, guess = state.working_sets.get(i, (None, ()))
            if prev_mask != masks[i]:
                guess = ()
        u_new, W = solvers[i].minimize(g, u_prev, guess)
        return i, u_new, W

    def run(jobs):
        if executor is None:
            return [local_solve(*job) for job in jobs]
        return list(executor.map(lambda job: local_solve(*job), jobs))

    faces: Dict[int, _Face] = {}
    y0 = L + L[rev] if D else L
    for i, _, W in run([(i, y0, masked[i].feasible_point()) for i in agents]):
        faces[i] = _Face(solvers[i], loc[i], W)

    def assemble():
        Qc = np.zeros((D, D))
        qc = np.zeros(D)
        s_rows, s_c, s_tol, l_rows, l_c, l_smax = [], [], [], [], [], []
        for i in agents:
            f = faces[i]
            si = sel[i]
            if si.size:
                Qc[np.ix_(si, si)] = f.Pc
                qc[si] = f.cc
            S = np.zeros((f.Ps.shape[0], D))
            S[:, si] = f.Ps
            s_rows.append(S)
            s_c.append(f.cs)
            s_tol.append(np.full(f.cs.size, f.feas_tol))
            Lr = np.zeros((f.Pl.shape[0], D))
            Lr[:, si] = f.Pl
            l_rows.append(Lr)
            l_c.append(f.cl)
            l_smax.append(np.full(f.cl.size, f.smax))
        return (Qc, qc, np.vstack(s_rows), np.concatenate(s_c), np.concatenate(s_tol),
                np.vstack(l_rows), np.concatenate(l_c), np.concatenate(l_smax))

    def psi_map(Qc, qc):
        IP = np.eye(D) + np.eye(D)[rev]
        return IP @ Qc @ IP, IP @ qc

    def row_owners():
        s_own, l_own = [], []
        for i in agents:
            s_own.append(np.full(faces[i].cs.size, i))
            l_own.append(np.full(faces[i].cl.size, i))
        return np.concatenate(s_own), np.concatenate(l_own)

    Qc, qc, Sg, cs, stol, Lg, cl, lsmax = assemble()
    s_own, l_own = row_owners()
    Mpsi, mpsi = psi_map(Qc, qc)
    # owners of directed entries are contiguous in agent order
    bounds = [(i, sel[i][0], sel[i][-1] + 1) for i in agents if sel[i].size]

    def agent_norms(P: np.ndarray) -> np.ndarray:
        sq = P * P
        if not bounds:
            return np.zeros((P.shape[0], 1))
        return np.sqrt(np.stack([sq[:, a:b].sum(axis=1) for (_, a, b) in bounds], axis=1))

    messages: List[MessageRecord] = []
    r = 0
    converged = False
    y_final = y0
    last_psi = np.zeros(D)
    forced: Optional[np.ndarray] = None  # round whose faces were just re-solved
    while r < max_iter:
        B = min(block, max_iter - r)
        Lh = np.empty((B, D))
        Ph = np.empty((B, D))
        Lc = L
        # psi = (I + P) Qc (I + P) lam + (I + P) qc, P swapping edge directions
        for t in range(B):
            psi = Mpsi @ Lc + mpsi
            Lh[t] = Lc
            Ph[t] = psi
            step = gamma / np.sqrt(r + t + 1) if state.diminishing else gamma
            Lc = Lc + step * psi
        Yh = Lh + Lh[:, rev]
        # optimality of every agent's working set at every simulated round
        Sv = Yh @ Sg.T + cs
        bad = (Sv < -stol).any(axis=1) if Sv.size else np.zeros(B, dtype=bool)
        if cl.size:
            ymax = np.abs(Yh).max(axis=1, initial=0.0)
            Mv = Yh @ Lg.T + cl
            mtol = 1e-3 * solvers[agents[0]].tol * (1.0 + ymax[:, None] * lsmax[None, :])
            bad |= (Mv < -mtol).any(axis=1)
        if forced is not None:
            bad[0] = False
            forced = None
        if D:
            ok = (agent_norms(Ph) <= eps).all(axis=1)
        else:
            ok = np.ones(B, dtype=bool)
        first_bad = int(np.argmax(bad)) if bad.any() else B
        first_ok = int(np.argmax(ok)) if ok.any() else B
        if first_ok < B and first_ok < first_bad:
            t = first_ok
            if record_messages:
                messages.extend(_block_messages(r, Lh[:t + 1], Yh[:t + 1], Qc, qc, lay, masked))
            r += t + 1
            L = Lh[t]
            y_final = Yh[t]
            last_psi = Ph[t]
            converged = True
            break
        if first_bad == B:
            if record_messages:
                messages.extend(_block_messages(r, Lh, Yh, Qc, qc, lay, masked))
            r += B
            L = Lc
            y_final = Yh[-1]
            last_psi = Ph[-1]
            continue
        t = first_bad
        if record_messages and t:
            messages.extend(_block_messages(r, Lh[:t], Yh[:t], Qc, qc, lay, masked))
        r += t
        L = Lh[t]
        y = Yh[t]
        y_prev = Yh[t - 1] if t else y_final
        broken = set()
        if Sv.size:
            broken |= set(s_own[(Sv[t] < -stol)].tolist())
        if cl.size:
            mt_row = 1e-3 * solvers[agents[0]].tol * (1.0 + np.abs(y).max(initial=0.0) * lsmax)
            broken |= set(l_own[(Lg @ y + cl) < -mt_row].tolist())
        jobs = []
        for i in sorted(broken):
            f = faces[i]
            u_prev = f.Pu @ y_prev[sel[i]] + f.cu
            jobs.append((i, y, u_prev))
        try:
            solved = run(jobs)
        except QpError:
            # prices ran away (step size too large); give up on agreement
            break
        for i, _, W in solved:
            faces[i] = _Face(solvers[i], loc[i], W)
        Qc, qc, Sg, cs, stol, Lg, cl, lsmax = assemble()
        s_own, l_own = row_owners()
        Mpsi, mpsi = psi_map(Qc, qc)
        forced = y
        y_final = y

    lay.scatter_lam(L, lam)
    u_out = {i: faces[i].Pu @ y_final[sel[i]] + faces[i].cu for i in agents}
    for i in agents:
        masked[i].snap_fixed(u_out[i])
    uc = Qc @ y_final + qc if D else np.zeros(0)
    psi = uc + uc[rev] if D else uc
    norms = {i: float(np.linalg.norm(psi[sel[i]])) for i in agents}
    psi_out = {}
    for i in agents:
        p = masked[i]
        arr = np.zeros((p.h_p, len(p.agent.neighbors)))
        for k in sel[i]:
            _, l, pos = lay.lam_pos[k]
            arr[l, pos] = psi[k]
        psi_out[i] = arr
    new_state = NegotiationState(lam, state.gamma_step, state.eps, state.max_iter,
                                 state.diminishing, r, psi_out,
                                 {i: (masks[i], faces[i].W) for i in agents})
    if converged:
        return NegotiationResult(u_out, new_state, True, r, norms, False, messages)
    islanded = {}
    for i in agents:
        p = masked[i].with_transfer_mask((0,) * len(masked[i].agent.neighbors))
        islanded[i] = ActiveSetSolver(p.to_qp(), cache_size=0).minimize(np.zeros(p.n))[0]
        p.snap_fixed(islanded[i])
    zeroed = NegotiationState({i: np.zeros_like(v) for i, v in lam.items()}, state.gamma_step,
                              state.eps, state.max_iter, state.diminishing, r, psi_out)
    return NegotiationResult(islanded, zeroed, False, r, norms, True, messages)


def _block_messages(r0: int, Lh, Yh, Qc, qc, lay: _Layout, problems) -> List[MessageRecord]:
    out = []
    for t in range(Lh.shape[0]):
        uc = Qc @ Yh[t] + qc
        for i in lay.agents:
            p = problems[i]
            for pos, j in enumerate(p.agent.neighbors):
                if (i, j, 0) not in lay.key:
                    continue
                ks = [lay.key[(i, j, l)] for l in range(p.h_p)]
                out.append(MessageRecord(r0 + t + 1, i, j, "lambda", Lh[t][ks].copy()))
                out.append(MessageRecord(r0 + t + 1, i, j, "u_c", uc[ks].copy()))
    return out
