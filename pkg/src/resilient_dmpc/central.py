"""Centralized reference solve of the coupled dispatch problem.

All agents' local problems are merged into one QP. The coupling
``p_ji + p_ij = 0`` is eliminated by giving each active edge ``(i, j)`` with
``i < j`` a single flow variable ``f``: agent ``i`` receives ``f`` from ``j``
and agent ``j`` receives ``-f`` from ``i``. Rows that become identical after
the substitution (each edge's transfer limits appear on both sides) are kept
once.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterable, Mapping, Optional, Tuple

import numpy as np

from .model import N_LOCAL, HorizonProblem
from .negotiation import active_mask
from .qp import ActiveSetSolver, QpProblem, QpSolution, WarmStart


@dataclass
class CentralSolution:
    u: Dict[int, np.ndarray]
    solution: QpSolution

    @property
    def optimal(self) -> bool:
        return self.solution.optimal

    def cost(self, problems: Mapping[int, HorizonProblem]) -> float:
        return float(sum(problems[i].cost(self.u[i]) for i in self.u))


def _dedupe(A: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    if A.shape[0] == 0:
        return A, b
    norms = np.linalg.norm(A, axis=1)
    keep_nz = norms > 0
    A, b, norms = A[keep_nz], b[keep_nz], norms[keep_nz]
    An = A / norms[:, None]
    bn = b / norms
    rows = np.round(np.hstack([An, bn[:, None]]), 12)
    _, first = np.unique(rows, axis=0, return_index=True)
    first = np.sort(first)
    return A[first], b[first]


def centralized_solve(problems: Mapping[int, HorizonProblem], effective_edges: Iterable[Tuple[int, int]],
                      warm_u: Optional[Mapping[int, np.ndarray]] = None, tol: float = 1e-8) -> CentralSolution:
    edges = sorted({(min(i, j), max(i, j)) for (i, j) in effective_edges})
    masked = {i: p.with_transfer_mask(active_mask(p, set(edges))) for i, p in problems.items()}
    agents = sorted(masked)
    offset, n_total = {}, 0
    for i in agents:
        offset[i] = n_total
        n_total += masked[i].n
    # reduced variables: local entries of each agent, then one flow per edge and step
    cols = {}
    n_z = 0
    for i in agents:
        p = masked[i]
        for l in range(p.h_p):
            for c in range(N_LOCAL):
                cols[(i, l, c)] = n_z
                n_z += 1
    flow_col = {}
    for (i, j) in edges:
        h = masked[i].h_p
        for l in range(h):
            flow_col[(i, j, l)] = n_z
            n_z += 1
    T = np.zeros((n_total, n_z))
    for i in agents:
        p = masked[i]
        for l in range(p.h_p):
            for c in range(N_LOCAL):
                T[offset[i] + p.idx(l, c), cols[(i, l, c)]] = 1.0
    for (i, j) in edges:
        pi, pj = masked[i], masked[j]
        for l in range(pi.h_p):
            col = flow_col[(i, j, l)]
            T[offset[i] + pi.transfer_index(l, pi.agent.neighbor_pos(j)), col] = 1.0
            T[offset[j] + pj.transfer_index(l, pj.agent.neighbor_pos(i)), col] = -1.0

    qps = {i: masked[i].to_qp() for i in agents}
    H = np.zeros((n_total, n_total))
    A_blocks, b_blocks, E_blocks, d_blocks = [], [], [], []
    for i in agents:
        q = qps[i]
        sl = slice(offset[i], offset[i] + q.n)
        H[sl, sl] = q.H
        Ai = np.zeros((q.A.shape[0], n_total))
        Ai[:, sl] = q.A
        A_blocks.append(Ai)
        b_blocks.append(q.b)
        Ei = np.zeros((q.E.shape[0], n_total))
        Ei[:, sl] = q.E
        E_blocks.append(Ei)
        d_blocks.append(q.d)
    Hz = T.T @ H @ T
    Az, bz = _dedupe(np.vstack(A_blocks) @ T, np.concatenate(b_blocks))
    Ez, dz = _dedupe(np.vstack(E_blocks) @ T, np.concatenate(d_blocks))
    qp = QpProblem(0.5 * (Hz + Hz.T), np.zeros(n_z), Az, bz, Ez, dz)
    start = None
    if warm_u is not None:
        U = np.concatenate([np.asarray(warm_u[i], dtype=float) for i in agents])
        start = WarmStart(np.linalg.lstsq(T, U, rcond=None)[0])
    sol = ActiveSetSolver(qp, tol=tol, cache_size=0).solve(warm_start=start)
    U = T @ sol.u_star
    return CentralSolution({i: U[offset[i]:offset[i] + masked[i].n] for i in agents}, sol)
