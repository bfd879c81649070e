"""Steady-state pressures, branch-aware volumes, and equilibrium enumeration."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.sparse.csgraph import connected_components

from . import stability
from .errors import EnumerationTooLargeError, SingularSystemError, UnbalancedInjectionError
from .law import BistableLaw, State

MAX_ENUM_NODES = 14


def pseudo_inverse(W, rtol=1e-12) -> np.ndarray:
    """Moore-Penrose inverse of a symmetric matrix by eigendecomposition.

    Eigenvalues below ``rtol * max|lambda|`` (the Laplacian's zero mode)
    are dropped.
    """
    lam, U = np.linalg.eigh(np.asarray(W, dtype=np.float64))
    keep = np.abs(lam) > rtol * max(np.abs(lam).max(initial=0.0), 1e-300)
    return (U[:, keep] / lam[keep]) @ U[:, keep].T


def pressures_flux_bc(W, q_ss) -> np.ndarray:
    """Particular steady pressures ``W^+ q`` for balanced flux injections.

    Every ``W^+ q + alpha * 1`` is also a steady state; ``alpha`` is fixed by
    the total volume and the law, not by this linear problem.
    """
    W = np.asarray(W, dtype=np.float64)
    q = np.asarray(q_ss, dtype=np.float64)
    if abs(q.sum()) > 1e-10 * max(1.0, np.abs(q).sum()):
        raise UnbalancedInjectionError(f"unbalanced injections: sum(q) = {q.sum():.3g}")
    return pseudo_inverse(W) @ q


@dataclass
class MixedSolution:
    p: np.ndarray
    q_clamped: np.ndarray
    clamped: np.ndarray


def _as_index_values(bc, n):
    if bc is None:
        return np.zeros(0, np.int64), np.zeros(0)
    if isinstance(bc, Mapping):
        idx = np.array(list(bc.keys()), dtype=np.int64)
        val = np.array(list(bc.values()), dtype=np.float64)
    else:
        idx, val = bc
        idx = np.asarray(idx, dtype=np.int64).reshape(-1)
        val = np.asarray(val, dtype=np.float64).reshape(-1)
    if len(idx) != len(val):
        raise ValueError("boundary indices and values differ in length")
    if len(idx) and (idx.min() < 0 or idx.max() >= n):
        raise ValueError("boundary index out of range")
    return idx, val


def pressures_mixed_bc(W, p_bc, q_bc=None) -> MixedSolution:
    """Steady pressures with ``b1 >= 1`` pressure-clamped nodes.

    ``p_bc`` and ``q_bc`` map node index to prescribed pressure / injected
    flux (a dict or an ``(indices, values)`` pair). Nodes in neither set
    receive no injection. Returns the full pressure vector and the fluxes
    the clamps must supply.
    """
    W = np.asarray(W, dtype=np.float64)
    n = W.shape[0]
    P, p1 = _as_index_values(p_bc, n)
    F, q2 = _as_index_values(q_bc, n)
    if len(P) == 0:
        raise ValueError("at least one pressure-clamped node is required")
    if np.intersect1d(P, F).size:
        raise ValueError("a node cannot be both pressure- and flux-constrained")
    U = np.setdiff1d(np.arange(n), np.concatenate([P, F]))

    adj = (np.abs(W) > 0) & ~np.eye(n, dtype=bool)
    ncomp, comp = connected_components(adj, directed=False)
    if len(np.setdiff1d(np.arange(ncomp), comp[P])):
        raise SingularSystemError("singular reduced system: a component has no pressure-clamped node")

    W21, W22, W23 = W[np.ix_(F, P)], W[np.ix_(F, F)], W[np.ix_(F, U)]
    W31, W32, W33 = W[np.ix_(U, P)], W[np.ix_(U, F)], W[np.ix_(U, U)]
    try:
        if len(F):
            X = np.linalg.solve(W22, np.column_stack([W23, W21, q2]))
            W22i_W23 = X[:, : len(U)]
            W22i_W21 = X[:, len(U): len(U) + len(P)]
            W22i_q = X[:, -1]
            A = W32 @ W22i_W23 - W33
            rhs = (W31 - W32 @ W22i_W21) @ p1 + W32 @ W22i_q
            p_bar = np.linalg.solve(A, rhs) if len(U) else np.zeros(0)
            p_ext = W22i_q - W22i_W21 @ p1 - W22i_W23 @ p_bar
        else:
            p_bar = -np.linalg.solve(W33, W31 @ p1) if len(U) else np.zeros(0)
            p_ext = np.zeros(0)
    except np.linalg.LinAlgError:
        raise SingularSystemError("singular reduced system") from None
    p = np.empty(n)
    p[P], p[F], p[U] = p1, p_ext, p_bar
    return MixedSolution(p, W[P] @ p, P)


def volumes_from_pressures(p_ss, law: BistableLaw, previous_binary, fold_tol=1e-12):
    """Steady volumes from pressures and the previous binary labels.

    A node takes the branch-0 inverse when it was 0 and ``p < p_max`` or
    was 1 and ``p < p_min``; otherwise it takes the branch-1 inverse.
    Pressures within ``fold_tol`` of the relevant fold keep the incumbent
    branch and are flagged.

    Returns
    -------
    v, binary, fold_flags : arrays of shape (n,)
    """
    p = np.atleast_1d(np.asarray(p_ss, dtype=np.float64))
    prev = np.atleast_1d(np.asarray(previous_binary)).astype(np.int64)
    if prev.shape != p.shape:
        raise ValueError("one previous label per node required")
    prev = np.where(prev == int(State.ONE), 1, 0)
    fold = np.where(prev == 0, p - law.p_max, p - law.p_min)
    ambiguous = np.abs(fold) <= fold_tol * max(1.0, abs(law.p_max))
    threshold = np.where(prev == 0, law.p_max, law.p_min)
    new = np.where(p < threshold, 0, 1)
    new = np.where(ambiguous, prev, new)
    v = np.empty_like(p)
    if np.any(new == 0):
        v[new == 0] = law.inverse_branch(p[new == 0], 0)
    if np.any(new == 1):
        v[new == 1] = law.inverse_branch(p[new == 1], 1)
    return v, new, ambiguous


# -- enumeration ----------------------------------------------------------------

_BRANCHES = (State.ZERO, State.SPINODAL, State.ONE)


@dataclass
class Equilibrium:
    p: np.ndarray
    v: np.ndarray
    assignment: tuple
    stability: stability.StabilityReport

    @property
    def label(self) -> str:
        return self.stability.label

    def to_dict(self) -> dict:
        return {"p": self.p.tolist(), "v": self.v.tolist(),
                "assignment": "".join(State(a).symbol for a in self.assignment),
                "stability": self.stability.to_dict()}


def _clamped_volumes(law, p, idx, reference_v):
    if reference_v is not None:
        prev = law.binary(np.asarray(reference_v)[idx])
        return volumes_from_pressures(p[idx], law, prev)[0]
    out = np.empty(len(idx))
    for k, pk in enumerate(p[idx]):
        out[k] = law.inverse_branch(pk, 0) if law.p_floor <= pk <= law.p_max else law.inverse_branch(pk, 1)
    return out


def _admissible(law, pk, tol=1e-12):
    out = []
    for b in _BRANCHES:
        lo, hi = law.branch_range(b)
        if lo - tol <= pk <= hi + tol:
            out.append(b)
    return out


def enumerate_equilibria(law: BistableLaw, *, W=None, p_bc=None, q_bc=None, total_volume=None,
                         n=None, reference_v=None, max_nodes=MAX_ENUM_NODES):
    """All equilibria of a pressure-driven or closed network.

    Pressure-driven (``W`` and ``p_bc`` given): steady pressures are solved
    once and every free node may sit on any branch whose pressure range
    contains its pressure. Closed (``total_volume`` and ``n`` given): for
    each branch assignment a uniform pressure with ``sum_i f_b_i^-1(p) = V``
    is root-found.

    Each equilibrium carries a stability report from
    :func:`stability.assess`.
    """
    if p_bc is not None:
        W = np.asarray(W, dtype=np.float64)
        sol = pressures_mixed_bc(W, p_bc, q_bc)
        P = sol.clamped
        free = np.setdiff1d(np.arange(W.shape[0]), P)
        if len(free) > max_nodes:
            raise EnumerationTooLargeError(f"enumeration too large: {len(free)} free nodes > {max_nodes}")
        v_clamped = _clamped_volumes(law, sol.p, P, reference_v)
        options = [_admissible(law, sol.p[k]) for k in free]
        out = []
        for combo in itertools.product(*options):
            v = np.empty(W.shape[0])
            v[P] = v_clamped
            for k, b in zip(free, combo):
                v[k] = law.inverse_branch(sol.p[k], b)
            full = [law.classify(v[k]) for k in range(W.shape[0])]
            for k, b in zip(free, combo):
                full[k] = b
            out.append(Equilibrium(sol.p.copy(), v, tuple(full), stability.assess(v, law, clamped=P)))
        return out

    if total_volume is None or n is None:
        raise ValueError("give either (W, p_bc) or (total_volume, n)")
    if n > max_nodes:
        raise EnumerationTooLargeError(f"enumeration too large: {n} nodes > {max_nodes}")
    return _enumerate_closed(law, int(n), float(total_volume))


def _uniform_pressure_roots(law, counts, V, samples=257):
    """Roots ``p`` of ``sum_b counts[b] * f_b^-1(p) = V`` on the shared branch range."""
    lo, hi = -np.inf, np.inf
    for b, c in zip(_BRANCHES, counts):
        if c:
            a, z = law.branch_range(b)
            lo, hi = max(lo, a), min(hi, z)
    if not np.isfinite(hi):
        hi = max(lo, float(law._p(V)), law.p_max) + 1.0
    if lo > hi:
        return []

    def g(p):
        return sum(c * law.inverse_branch(p, b) for b, c in zip(_BRANCHES, counts) if c) - V

    grid = np.linspace(lo, hi, samples)
    vals = np.array([g(x) for x in grid])
    roots = []
    for k in range(len(grid)):
        if vals[k] == 0.0:
            roots.append(grid[k])
        elif k + 1 < len(grid) and vals[k] * vals[k + 1] < 0:
            roots.append(brentq(g, grid[k], grid[k + 1], xtol=1e-13, rtol=4 * np.finfo(float).eps))
    return roots


def _enumerate_closed(law, n, V):
    out = []
    for n0 in range(n + 1):
        for ns in range(n - n0 + 1):
            n1 = n - n0 - ns
            counts = (n0, ns, n1)
            for p_star in _uniform_pressure_roots(law, counts, V):
                vol = {b: law.inverse_branch(p_star, b) for b, c in zip(_BRANCHES, counts) if c}
                if any(x < 0 for x in vol.values()):
                    continue
                rep = None
                # assignments with equal counts share pressure and stability
                for pos in itertools.combinations(range(n), n0 + ns):
                    for spin in itertools.combinations(pos, ns):
                        assign = [State.ONE] * n
                        for k in pos:
                            assign[k] = State.ZERO
                        for k in spin:
                            assign[k] = State.SPINODAL
                        v = np.array([vol[b] for b in assign])
                        if rep is None:
                            rep = stability.assess(v, law)
                        out.append(Equilibrium(np.full(n, p_star), v, tuple(assign),
                                               stability.StabilityReport(**rep.to_dict())))
    return out


def phase_portrait(W, law: BistableLaw, p_bc, nodes, v_range, num=25):
    """Sample ``(v_a, v_b, dv_a/dt, dv_b/dt)`` on a grid for a network with two free nodes."""
    W = np.asarray(W, dtype=np.float64)
    P, pv = _as_index_values(p_bc, W.shape[0])
    a, b = nodes
    free = np.setdiff1d(np.arange(W.shape[0]), P)
    if set(free) != {a, b}:
        raise ValueError("phase portrait needs exactly the two listed nodes free")
    grid = np.linspace(v_range[0], v_range[1], num)
    rows = []
    p = np.zeros(W.shape[0])
    p[P] = pv
    for va in grid:
        for vb in grid:
            p[a], p[b] = law._p(va), law._p(vb)
            dv = -W @ p
            rows.append((va, vb, dv[a], dv[b]))
    return np.array(rows)
