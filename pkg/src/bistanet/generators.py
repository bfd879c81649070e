"""Network builders: lattices, disordered point clouds and small fixtures."""

from __future__ import annotations

from itertools import combinations

import numpy as np
from scipy.spatial import cKDTree

from .errors import BistanetError, DisconnectedNetworkError
from .network import BOUNDARY_FLUX, BOUNDARY_PRESSURE, HIDDEN, OUTPUT, FlowNetwork


def make_rng(seed) -> np.random.Generator:
    """Counter-based Philox generator; the same seed gives the same stream on every platform."""
    return np.random.Generator(np.random.Philox(seed))


def gen_lattice(rows: int, cols: int, full_connect: bool = False, unit_conductance: float = 1.0,
                roles=None) -> FlowNetwork:
    """Grid of ``rows x cols`` nodes numbered row-major.

    Edges join 4-neighbours, or every pair when ``full_connect``.
    """
    if rows < 1 or cols < 1:
        raise ValueError("rows and cols must be at least 1")
    n = rows * cols
    pos = np.array([(c, -r) for r in range(rows) for c in range(cols)], dtype=np.float64)
    if full_connect:
        edges = list(combinations(range(n), 2))
    else:
        edges = []
        for r in range(rows):
            for c in range(cols):
                k = r * cols + c
                if c + 1 < cols:
                    edges.append((k, k + 1))
                if r + 1 < rows:
                    edges.append((k, k + cols))
    edges = np.array(edges, dtype=np.int64).reshape(-1, 2)
    return FlowNetwork(n, edges, np.full(len(edges), float(unit_conductance)), roles, pos)


class PackingError(BistanetError, ValueError):
    """Could not place the requested points at the minimum spacing."""


def _pack(rng, n, r_min, box, max_tries):
    pts = []
    tries = 0
    while len(pts) < n:
        tries += 1
        if tries > max_tries:
            raise PackingError(f"packing infeasible: placed {len(pts)} of {n} points")
        x = rng.uniform(0.0, box, size=2)
        if all((x[0] - p[0]) ** 2 + (x[1] - p[1]) ** 2 >= r_min ** 2 for p in pts):
            pts.append(x)
    return np.array(pts)


def gen_disordered(n: int, seed: int, r_min: float = 1.0, r_connect: float = 3.0, k_max: int = 5,
                   resistance_scale: float = 1.0, box=None, max_tries: int = 200_000,
                   max_resamples: int = 50) -> FlowNetwork:
    """Random planar network.

    Points are rejection-sampled in a square with spacing at least
    ``r_min``; each node links to at most ``k_max`` nearest neighbours
    within ``r_connect`` (a link counts towards both endpoints, so no degree
    exceeds ``k_max``). Conductance is ``1 / (resistance_scale * distance)``.
    Disconnected draws are resampled from the same generator.

    ``box`` defaults to a side giving a packing density of about 0.25
    points per ``r_min**2``.
    """
    if n < 2:
        raise ValueError("need at least two nodes")
    rng = make_rng(seed)
    box = float(box) if box is not None else r_min * np.sqrt(n / 0.25)
    for _ in range(max_resamples):
        pts = _pack(rng, n, r_min, box, max_tries)
        tree = cKDTree(pts)
        dist, nbr = tree.query(pts, k=min(k_max + 1, n), distance_upper_bound=r_connect)
        cand = {}
        for i in range(n):
            for d, j in zip(dist[i, 1:], nbr[i, 1:]):
                if np.isfinite(d):
                    cand[(min(i, j), max(i, j))] = d
        degree = np.zeros(n, dtype=np.int64)
        edges, lengths = [], []
        for (i, j), d in sorted(cand.items(), key=lambda kv: (kv[1], kv[0])):
            if degree[i] < k_max and degree[j] < k_max:
                edges.append((i, j))
                lengths.append(d)
                degree[i] += 1
                degree[j] += 1
        cond = 1.0 / (resistance_scale * np.array(lengths))
        try:
            return FlowNetwork(n, np.array(edges, dtype=np.int64).reshape(-1, 2), cond, None, pts)
        except DisconnectedNetworkError:
            continue
    raise PackingError("could not draw a connected network; enlarge r_connect")


def four_node(r1: float, r2: float, r3: float, r4: float) -> FlowNetwork:
    """Inlet (node 0), two middle chambers (1, 2) and a grounded outlet (3).

    ``r1``/``r2`` join the inlet to chambers 1/2, ``r3``/``r4`` join
    chambers 1/2 to the outlet.
    """
    edges = np.array([[0, 1], [0, 2], [1, 3], [2, 3]])
    cond = 1.0 / np.array([r1, r2, r3, r4], dtype=np.float64)
    roles = (BOUNDARY_PRESSURE, OUTPUT, OUTPUT, BOUNDARY_PRESSURE)
    pos = np.array([[0.0, 0.0], [1.0, 1.0], [1.0, -1.0], [2.0, 0.0]])
    return FlowNetwork(4, edges, cond, roles, pos)


def gradient_fixture() -> FlowNetwork:
    """Four chambers, five tubes of unequal conductance; node 0 receives the pulse."""
    C = np.array([[0.0, 1.0, 0.5, 0.8],
                  [1.0, 0.0, 0.7, 0.0],
                  [0.5, 0.7, 0.0, 1.2],
                  [0.8, 0.0, 1.2, 0.0]])
    return FlowNetwork.from_matrix(C, (BOUNDARY_FLUX, HIDDEN, HIDDEN, HIDDEN))
