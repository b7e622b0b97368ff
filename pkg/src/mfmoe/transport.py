"""Exact Wasserstein distances between uniform empirical measures on the torus.

The ground metric is the geodesic l1 distance of :mod:`mfmoe.torus`, not the
Euclidean distance of an embedding. Two exact solvers are provided:

* equal atom counts reduce to an assignment problem, solved with the
  Jonker-Volgenant variant of the Hungarian method in
  :func:`scipy.optimize.linear_sum_assignment`;
* unequal counts are solved as a balanced transportation problem by a
  network simplex: POT's ``ot.emd`` when it is installed, otherwise the
  numba implementation in :func:`network_simplex`.

:func:`w2_squared_bruteforce` and :func:`w2_squared_vertex_enumeration` are
slow, independent oracles for small instances.
"""

from __future__ import annotations

import csv
import itertools
import math
import os
from dataclasses import dataclass

import numba
import numpy as np
from scipy.optimize import linear_sum_assignment

from .torus import pairwise_l1


def _atoms(measure):
    atoms = getattr(measure, "atoms", measure)
    atoms = np.asarray(atoms, dtype=float)
    if atoms.ndim == 1:
        atoms = atoms[None, :]
    if atoms.ndim != 2 or len(atoms) == 0:
        raise ValueError("an empirical measure needs at least one atom")
    return atoms


def cost_matrix(a, b, p: int = 2) -> np.ndarray:
    """Ground cost ``d(a_i, b_j) ** p`` between the atoms of two measures."""
    if p not in (1, 2):
        raise ValueError("only p = 1 and p = 2 are supported")
    A, B = _atoms(a), _atoms(b)
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"dimension mismatch: {A.shape[1]} != {B.shape[1]}")
    D = pairwise_l1(A, B)
    return D * D if p == 2 else D


@dataclass
class TransportPlan:
    """Sparse optimal coupling: mass ``mass[k]`` moves from atom ``rows[k]`` to ``cols[k]``."""

    rows: np.ndarray
    cols: np.ndarray
    mass: np.ndarray
    cost: np.ndarray
    n_a: int
    n_b: int

    @property
    def value(self) -> float:
        return float(np.dot(self.mass, self.cost))

    def marginals(self):
        ra = np.bincount(self.rows, weights=self.mass, minlength=self.n_a)
        cb = np.bincount(self.cols, weights=self.mass, minlength=self.n_b)
        return ra, cb

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["i", "j", "mass", "cost"])
            for i, j, m, c in zip(self.rows, self.cols, self.mass, self.cost):
                w.writerow([int(i), int(j), repr(float(m)), repr(float(c))])


# --------------------------------------------------------------------------
# equal sizes: assignment
# --------------------------------------------------------------------------


def _assignment_plan(C):
    rows, cols = linear_sum_assignment(C)
    n = C.shape[0]
    return TransportPlan(rows, cols, np.full(n, 1.0 / n), C[rows, cols], n, n)


def w2_squared_equal(a, b) -> float:
    """Squared W2 between two uniform measures with the same number of atoms."""
    A, B = _atoms(a), _atoms(b)
    if len(A) != len(B):
        raise ValueError(
            f"atom counts differ ({len(A)} vs {len(B)}); use w2_squared_general"
        )
    C = cost_matrix(A, B)
    rows, cols = linear_sum_assignment(C)
    return float(C[rows, cols].sum() / len(A))


# --------------------------------------------------------------------------
# unequal sizes: network simplex on the transportation problem
# --------------------------------------------------------------------------


@numba.njit(cache=True)
def _simplex_core(C, supply, demand, max_iter):
    """Primal network simplex for a nondegenerate transportation problem.

    Basis cells are kept as three parallel arrays; the spanning tree is
    re-rooted at source 0 after every pivot to refresh potentials and parents.
    Entering cells are chosen by block search on reduced costs
    ``c_ij - u_i - v_j``.
    """
    na, nb = C.shape
    nv = na + nb
    nbasis = nv - 1
    bi = np.empty(nbasis, np.int64)
    bj = np.empty(nbasis, np.int64)
    bf = np.empty(nbasis, np.int64)

    # least-cost start: fill cells in increasing cost order; with
    # nondegenerate supplies each fill exhausts exactly one row or column
    # (both only on the last fill), leaving a spanning tree of nv - 1 cells
    s = supply.copy()
    t = demand.copy()
    order = np.argsort(C.ravel(), kind="mergesort")
    k = 0
    for c in order:
        i = c // nb
        j = c - i * nb
        if s[i] == 0 or t[j] == 0:
            continue
        q = min(s[i], t[j])
        bi[k] = i
        bj[k] = j
        bf[k] = q
        k += 1
        s[i] -= q
        t[j] -= q
        if k == nbasis:
            break

    pot = np.empty(nv)
    parent = np.empty(nv, np.int64)
    pslot = np.empty(nv, np.int64)
    depth = np.empty(nv, np.int64)
    deg = np.empty(nv + 1, np.int64)
    adj_node = np.empty(2 * nbasis, np.int64)
    adj_slot = np.empty(2 * nbasis, np.int64)
    fill = np.empty(nv, np.int64)
    queue = np.empty(nv, np.int64)
    inbasis = np.zeros((na, nb), np.bool_)
    for k in range(nbasis):
        inbasis[bi[k], bj[k]] = True

    scale = 0.0
    for i in range(na):
        for j in range(nb):
            if abs(C[i, j]) > scale:
                scale = abs(C[i, j])
    eps = 1e-13 * (scale + 1.0)
    ncells = na * nb
    block = max(int(math.sqrt(ncells)), 16)
    cursor = 0
    path_slots = np.empty(nv, np.int64)
    path_sign = np.empty(nv, np.int64)

    it = 0
    while it < max_iter:
        it += 1
        # rebuild tree adjacency (CSR) and potentials by BFS from source 0
        deg[:] = 0
        for k in range(nbasis):
            deg[bi[k] + 1] += 1
            deg[na + bj[k] + 1] += 1
        for v in range(nv):
            deg[v + 1] += deg[v]
        for v in range(nv):
            fill[v] = deg[v]
        for k in range(nbasis):
            u = bi[k]
            w = na + bj[k]
            adj_node[fill[u]] = w
            adj_slot[fill[u]] = k
            fill[u] += 1
            adj_node[fill[w]] = u
            adj_slot[fill[w]] = k
            fill[w] += 1
        for v in range(nv):
            parent[v] = -2
        parent[0] = -1
        pot[0] = 0.0
        depth[0] = 0
        head = 0
        tail = 1
        queue[0] = 0
        while head < tail:
            v = queue[head]
            head += 1
            for e in range(deg[v], deg[v + 1]):
                w = adj_node[e]
                if parent[w] == -2:
                    parent[w] = v
                    k = adj_slot[e]
                    pslot[w] = k
                    depth[w] = depth[v] + 1
                    # u_i + v_j = c_ij on every basic cell
                    pot[w] = C[bi[k], bj[k]] - pot[v]
                    queue[tail] = w
                    tail += 1

        # block search for the entering cell
        best = -eps
        ei = -1
        ej = -1
        scanned = 0
        while scanned < ncells:
            stop = min(scanned + block, ncells)
            while scanned < stop:
                c = cursor
                cursor += 1
                if cursor == ncells:
                    cursor = 0
                scanned += 1
                i = c // nb
                j = c - i * nb
                if inbasis[i, j]:
                    continue
                r = C[i, j] - pot[i] - pot[na + j]
                if r < best:
                    best = r
                    ei = i
                    ej = j
            if ei >= 0:
                break
        if ei < 0:
            return bi, bj, bf, it

        # cycle: entering cell (+), then the tree path from sink back to source
        # alternates -, +, -, ...
        u = na + ej
        w = ei
        nu = 0
        nw = 0
        # climb from both ends to the common ancestor, recording slots
        up_u = np.empty(depth[u] + 1, np.int64)
        up_w = np.empty(depth[w] + 1, np.int64)
        while depth[u] > depth[w]:
            up_u[nu] = pslot[u]
            nu += 1
            u = parent[u]
        while depth[w] > depth[u]:
            up_w[nw] = pslot[w]
            nw += 1
            w = parent[w]
        while u != w:
            up_u[nu] = pslot[u]
            nu += 1
            u = parent[u]
            up_w[nw] = pslot[w]
            nw += 1
            w = parent[w]
        npath = 0
        for a in range(nu):
            path_slots[npath] = up_u[a]
            npath += 1
        for a in range(nw - 1, -1, -1):
            path_slots[npath] = up_w[a]
            npath += 1
        theta = -1
        leave = -1
        for a in range(npath):
            sign = -1 if a % 2 == 0 else 1
            path_sign[a] = sign
            if sign < 0:
                f = bf[path_slots[a]]
                if theta < 0 or f < theta:
                    theta = f
                    leave = a
        for a in range(npath):
            bf[path_slots[a]] += path_sign[a] * theta
        ks = path_slots[leave]
        inbasis[bi[ks], bj[ks]] = False
        bi[ks] = ei
        bj[ks] = ej
        bf[ks] = theta
        inbasis[ei, ej] = True
    return bi, bj, bf, -1


def network_simplex(C, n_a: int | None = None, n_b: int | None = None, max_iter: int = 50_000_000):
    """Optimal plan between uniform measures of sizes ``C.shape`` for cost ``C``.

    Masses are scaled to integers (``lcm(n_a, n_b)`` total) and perturbed as
    ``S * supply_i + 1`` / ``S * demand_j`` (plus ``n_a`` on the last sink), which
    makes every basic solution nondegenerate, so the simplex cannot cycle. The
    optimal basis of the perturbed problem is optimal for the original one and
    the unperturbed flows are recovered by rounding.
    """
    C = np.ascontiguousarray(C, dtype=float)
    na, nb = C.shape
    L = math.lcm(na, nb)
    S = 2 * na + 2
    supply = np.full(na, S * (L // na) + 1, dtype=np.int64)
    demand = np.full(nb, S * (L // nb), dtype=np.int64)
    demand[-1] += na
    if na == 1 or nb == 1:
        rows = np.repeat(np.arange(na), nb)
        cols = np.tile(np.arange(nb), na)
        mass = np.full(na * nb, 1.0 / (na * nb))
        return TransportPlan(rows, cols, mass, C[rows, cols], na, nb)
    bi, bj, bf, iters = _simplex_core(C, supply, demand, max_iter)
    if iters < 0:
        raise RuntimeError("network simplex hit the iteration limit")
    flows = np.rint(bf / S).astype(np.int64)
    keep = flows > 0
    rows, cols, flows = bi[keep], bj[keep], flows[keep]
    if not (np.all(np.bincount(rows, weights=flows, minlength=na) == L // na)
            and np.all(np.bincount(cols, weights=flows, minlength=nb) == L // nb)):
        raise RuntimeError("recovered plan violates the marginals")
    order = np.lexsort((cols, rows))
    rows, cols, flows = rows[order], cols[order], flows[order]
    return TransportPlan(rows, cols, flows / L, C[rows, cols], na, nb)


def _load_pot():
    for backend in ("PYTORCH", "JAX", "TENSORFLOW", "CUPY"):
        os.environ.setdefault(f"POT_BACKEND_DISABLE_{backend}", "1")
    try:
        import ot
    except ImportError:
        return None
    return ot


_POT = _load_pot()


def pot_network_simplex(C) -> TransportPlan:
    """Same contract as :func:`network_simplex`, solved by POT's C++ network simplex."""
    if _POT is None:
        raise RuntimeError("POT is not installed")
    C = np.ascontiguousarray(C, dtype=float)
    na, nb = C.shape
    G, log = _POT.emd(np.full(na, 1.0 / na), np.full(nb, 1.0 / nb), C,
                      numItermax=50_000_000, log=True)
    if log["result_code"] != 1:
        raise RuntimeError(f"network simplex failed: {log['warning']}")
    rows, cols = np.nonzero(G > 0)
    return TransportPlan(rows, cols, G[rows, cols], C[rows, cols], na, nb)


def solve_transport(C, solver: str = "auto") -> TransportPlan:
    """Dispatch an unequal-size problem: ``"pot"``, ``"native"`` or ``"auto"``."""
    if solver == "native" or (solver == "auto" and _POT is None):
        return network_simplex(C)
    if solver in ("pot", "auto"):
        return pot_network_simplex(C)
    raise ValueError(f"unknown solver {solver!r}")


def transport_plan(a, b, p: int = 2, solver: str = "auto") -> TransportPlan:
    """Optimal plan for ground cost ``d ** p``; assignment fast path for equal sizes."""
    C = cost_matrix(a, b, p)
    if C.shape[0] == C.shape[1]:
        return _assignment_plan(C)
    return solve_transport(C, solver)


def w2_squared_general(a, b, solver: str = "auto") -> float:
    """Squared W2 between uniform measures of any sizes (network simplex)."""
    return solve_transport(cost_matrix(a, b), solver).value


def w2_squared(a, b) -> float:
    A, B = _atoms(a), _atoms(b)
    if len(A) == len(B):
        return w2_squared_equal(A, B)
    return w2_squared_general(A, B)


def w2(a, b) -> float:
    return math.sqrt(max(w2_squared(a, b), 0.0))


def w1(a, b) -> float:
    """W1 with the same exact solvers and ground cost ``d``."""
    return transport_plan(a, b, p=1).value


# --------------------------------------------------------------------------
# oracles for small instances
# --------------------------------------------------------------------------


def w2_squared_bruteforce(a, b) -> float:
    """Minimum over all ``n!`` matchings; equal sizes, n <= 8."""
    C = cost_matrix(a, b)
    n = C.shape[0]
    if C.shape[1] != n or n > 8:
        raise ValueError("brute force needs equal sizes and at most 8 atoms")
    idx = np.arange(n)
    best = min(C[idx, list(perm)].sum() for perm in itertools.permutations(range(n)))
    return float(best / n)


def w2_squared_vertex_enumeration(a, b) -> float:
    """Minimum of the LP over every vertex of the transportation polytope.

    Vertices are basic feasible solutions: choose ``n_a + n_b - 1`` cells,
    solve the marginal equations restricted to them, keep nonnegative
    solutions. Exponential; meant for n_a * n_b <= 16 or so.
    """
    C = cost_matrix(a, b)
    na, nb = C.shape
    cells = [(i, j) for i in range(na) for j in range(nb)]
    rhs = np.concatenate([np.full(na, 1.0 / na), np.full(nb, 1.0 / nb)])
    best = math.inf
    for basis in itertools.combinations(range(len(cells)), na + nb - 1):
        A = np.zeros((na + nb, len(basis)))
        for col, c in enumerate(basis):
            i, j = cells[c]
            A[i, col] = 1.0
            A[na + j, col] = 1.0
        if np.linalg.matrix_rank(A) < len(basis):
            continue
        x, *_ = np.linalg.lstsq(A, rhs, rcond=None)
        if np.max(np.abs(A @ x - rhs)) > 1e-12 or np.min(x) < -1e-12:
            continue
        best = min(best, sum(x[col] * C[cells[c]] for col, c in enumerate(basis)))
    return float(best)
