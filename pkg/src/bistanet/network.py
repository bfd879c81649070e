"""Flow-network representation: node roles, tube conductances, Laplacian.

Conductance is the stored primitive. Each tube is stored once as an
``(i, j)`` pair with ``i < j``; dense matrices are derived on demand.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import (
    AsymmetricConductanceError,
    DisconnectedNetworkError,
    NegativeConductanceError,
    SchemaError,
)

HIDDEN = "hidden"
BOUNDARY_PRESSURE = "boundary_pressure"
BOUNDARY_FLUX = "boundary_flux"
OUTPUT = "output"
ROLES = (HIDDEN, BOUNDARY_PRESSURE, BOUNDARY_FLUX, OUTPUT)


def _frozen(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TubeGeometry:
    """Cylindrical tube; conductance follows Hagen-Poiseuille."""

    length: float
    radius: float
    viscosity: float

    def __post_init__(self):
        if not (self.length > 0 and self.radius > 0 and self.viscosity > 0):
            raise ValueError("tube length, radius and viscosity must be strictly positive")

    @property
    def resistance(self) -> float:
        return 8.0 * self.viscosity * self.length / (np.pi * self.radius**4)

    @property
    def conductance(self) -> float:
        return np.pi * self.radius**4 / (8.0 * self.viscosity * self.length)


def _components(n: int, edges: np.ndarray, weights: np.ndarray) -> int:
    if n == 0:
        return 0
    mask = weights > 0
    e = edges[mask]
    g = coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n, n)) if len(e) else coo_matrix((n, n))
    ncomp, _ = connected_components(g, directed=False)
    return ncomp


@dataclass(frozen=True, eq=False)
class FlowNetwork:
    """Immutable network of chambers (nodes) joined by tubes (edges).

    Parameters
    ----------
    n : int
        Number of nodes.
    edges : array of shape (m, 2)
        Tube endpoints with ``i < j``; no self-loops, no parallel tubes.
    conductance : array of shape (m,)
        Tube conductances ``C_ij >= 0``.
    roles : sequence of str
        One of ``hidden``, ``boundary_pressure``, ``boundary_flux``,
        ``output`` per node.
    positions : array of shape (n, 2), optional
        Layout coordinates; not used by the physics.
    """

    n: int
    edges: np.ndarray
    conductance: np.ndarray
    roles: Optional[tuple] = None
    positions: Optional[np.ndarray] = None

    def __post_init__(self):
        n = int(self.n)
        edges = np.array(self.edges, dtype=np.int64).reshape(-1, 2)
        cond = np.array(self.conductance, dtype=np.float64).reshape(-1)
        if len(cond) != len(edges):
            raise SchemaError("edges and conductance lengths differ")
        if n < 1:
            raise SchemaError("network needs at least one node")
        if len(edges) and (edges.min() < 0 or edges.max() >= n):
            raise SchemaError("edge endpoint out of range")
        if np.any(edges[:, 0] == edges[:, 1]):
            raise SchemaError("self-loop tubes are not permitted")
        swap = edges[:, 0] > edges[:, 1]
        edges[swap] = edges[swap][:, ::-1]
        order = np.lexsort((edges[:, 1], edges[:, 0]))
        edges, cond = edges[order], cond[order]
        if len(edges) > 1 and np.any(np.all(np.diff(edges, axis=0) == 0, axis=1)):
            raise SchemaError("parallel tubes are not permitted")
        if np.any(~np.isfinite(cond)):
            raise SchemaError("conductances must be finite")
        if np.any(cond < 0):
            raise NegativeConductanceError("negative conductance")
        roles = tuple(self.roles) if self.roles is not None else (HIDDEN,) * n
        if len(roles) != n:
            raise SchemaError("one role per node required")
        bad = [r for r in roles if r not in ROLES]
        if bad:
            raise SchemaError(f"unknown node role {bad[0]!r}")
        pos = self.positions
        if pos is not None:
            pos = np.asarray(pos, dtype=np.float64)
            if pos.shape != (n, 2):
                raise SchemaError("positions must have shape (n, 2)")
            pos = _frozen(pos)
        if _components(n, edges, cond) != 1:
            raise DisconnectedNetworkError()
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "edges", _frozen(edges))
        object.__setattr__(self, "conductance", _frozen(cond))
        object.__setattr__(self, "roles", roles)
        object.__setattr__(self, "positions", pos)

    # -- constructors -------------------------------------------------
    @classmethod
    def from_matrix(cls, C, roles=None, positions=None) -> "FlowNetwork":
        """Build from a dense symmetric conductance matrix (zero = no tube)."""
        C = np.asarray(C, dtype=np.float64)
        if C.ndim != 2 or C.shape[0] != C.shape[1]:
            raise SchemaError("conductance matrix must be square")
        if not np.allclose(C, C.T, rtol=0, atol=1e-12 * max(1.0, np.abs(C).max(initial=0))):
            raise AsymmetricConductanceError("asymmetric conductance matrix")
        if np.any(np.diag(C) != 0):
            raise SchemaError("conductance matrix must have a zero diagonal")
        i, j = np.nonzero(np.triu(C != 0, k=1))
        return cls(C.shape[0], np.column_stack([i, j]), C[i, j], roles, positions)

    @classmethod
    def from_laplacian(cls, W, roles=None, positions=None, tol=0.0) -> "FlowNetwork":
        """Recover the network whose Laplacian is ``W``; off-diagonals above ``-tol`` are dropped."""
        W = np.asarray(W, dtype=np.float64)
        C = -W.copy()
        np.fill_diagonal(C, 0.0)
        C = 0.5 * (C + C.T)
        C[C <= tol] = 0.0
        return cls.from_matrix(C, roles, positions)

    # -- views -------------------------------------------------------------
    @property
    def m(self) -> int:
        return len(self.edges)

    def conductance_matrix(self) -> np.ndarray:
        C = np.zeros((self.n, self.n))
        i, j = self.edges[:, 0], self.edges[:, 1]
        C[i, j] = self.conductance
        C[j, i] = self.conductance
        return C

    def resistance(self) -> np.ndarray:
        """Per-edge resistance ``1/C`` (``inf`` for zero-conductance entries)."""
        with np.errstate(divide="ignore"):
            return 1.0 / self.conductance

    def laplacian(self) -> np.ndarray:
        return laplacian_from_conductance(self)

    def nodes_with_role(self, *roles: str) -> np.ndarray:
        return np.array([k for k, r in enumerate(self.roles) if r in roles], dtype=np.int64)

    def counts(self) -> dict:
        """Node-set sizes: hidden ``d``, boundary ``b`` (``b1`` pressure, ``b2`` flux), output ``t``."""
        b1 = self.roles.count(BOUNDARY_PRESSURE)
        b2 = self.roles.count(BOUNDARY_FLUX)
        return {"n": self.n, "d": self.roles.count(HIDDEN), "b": b1 + b2, "b1": b1, "b2": b2,
                "t": self.roles.count(OUTPUT)}

    def with_conductance(self, conductance) -> "FlowNetwork":
        return FlowNetwork(self.n, self.edges, conductance, self.roles, self.positions)

    def with_roles(self, roles: Sequence[str]) -> "FlowNetwork":
        return FlowNetwork(self.n, self.edges, self.conductance, tuple(roles), self.positions)

    def edge_index(self, i: int, j: int) -> int:
        a, b = min(i, j), max(i, j)
        hit = np.nonzero((self.edges[:, 0] == a) & (self.edges[:, 1] == b))[0]
        if not len(hit):
            raise KeyError(f"no tube between {i} and {j}")
        return int(hit[0])

    def __eq__(self, other):
        if not isinstance(other, FlowNetwork):
            return NotImplemented
        same_pos = (self.positions is None and other.positions is None) or (
            self.positions is not None and other.positions is not None
            and np.array_equal(self.positions, other.positions))
        return (self.n == other.n and self.roles == other.roles
                and np.array_equal(self.edges, other.edges)
                and np.array_equal(self.conductance, other.conductance) and same_pos)

    __hash__ = None


# -- Laplacian --------------------------------------------------------------

def is_connected(C) -> bool:
    """Graph traversal over entries with ``C_ij > 0``."""
    C = np.asarray(C)
    i, j = np.nonzero(np.triu(C > 0, k=1))
    return _components(C.shape[0], np.column_stack([i, j]), np.ones(len(i))) == 1


def laplacian_from_conductance(net: FlowNetwork) -> np.ndarray:
    """Weighted graph Laplacian ``W_ij = -C_ij``, ``W_ii = sum_k C_ik``."""
    C = net.conductance_matrix()
    if not is_connected(C):
        raise DisconnectedNetworkError()
    W = -C
    W[np.diag_indices(net.n)] = C.sum(axis=1)
    return W


def project_laplacian(W) -> np.ndarray:
    """Project a square matrix onto the set of valid Laplacians.

    Off-diagonals are clamped to ``min(0, W_ij)``, the result is symmetrized
    as ``(W + W.T)/2`` and each diagonal entry is set to minus the sum of the
    off-diagonal entries of its row.
    """
    W = np.array(W, dtype=np.float64)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise ValueError("W must be square")
    off = ~np.eye(W.shape[0], dtype=bool)
    W[off] = np.minimum(0.0, W[off])
    W = 0.5 * (W + W.T)
    np.fill_diagonal(W, 0.0)
    np.fill_diagonal(W, -W.sum(axis=1))
    return W


def check_laplacian(W, tol=1e-10) -> None:
    """Raise ``ValueError`` unless ``W`` satisfies the Laplacian invariants."""
    W = np.asarray(W, dtype=np.float64)
    scale = max(1.0, np.abs(W).max(initial=0.0))
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise ValueError("Laplacian must be square")
    if not np.allclose(W, W.T, rtol=0, atol=tol * scale):
        raise ValueError("Laplacian must be symmetric")
    off = W[~np.eye(W.shape[0], dtype=bool)]
    if np.any(off > tol * scale):
        raise ValueError("Laplacian off-diagonals must be non-positive")
    if np.any(np.abs(W.sum(axis=1)) > tol * scale * W.shape[0]):
        raise ValueError("Laplacian rows must sum to zero")


def reduced_laplacian(W, drop: int | Sequence[int] = -1) -> np.ndarray:
    """``W`` with the given rows/columns removed."""
    W = np.asarray(W)
    drop = np.atleast_1d(drop) % W.shape[0]
    keep = np.setdiff1d(np.arange(W.shape[0]), drop)
    return W[np.ix_(keep, keep)]


# -- serialization -----------------------------------------------------------

def network_to_dict(net: FlowNetwork, law=None) -> dict:
    nodes = []
    for k, role in enumerate(net.roles):
        node = {"id": k, "role": role}
        if net.positions is not None:
            node["x"] = float(net.positions[k, 0])
            node["y"] = float(net.positions[k, 1])
        nodes.append(node)
    tubes = [{"i": int(i), "j": int(j), "conductance": float(c)}
             for (i, j), c in zip(net.edges, net.conductance)]
    doc = {"n": net.n, "nodes": nodes, "tubes": tubes}
    if law is not None:
        doc["law"] = law.to_dict()
    return doc


def serialize_network(net: FlowNetwork, law=None) -> str:
    """JSON document ``{n, nodes, tubes[, law]}`` with a fixed field order."""
    return json.dumps(network_to_dict(net, law), indent=2)


def network_from_dict(doc: dict) -> FlowNetwork:
    if not isinstance(doc, dict):
        raise SchemaError("network document must be an object")
    for key in ("n", "nodes", "tubes"):
        if key not in doc:
            raise SchemaError(f"missing field {key!r}")
    n = doc["n"]
    if not isinstance(n, int) or isinstance(n, bool) or n < 1:
        raise SchemaError("field 'n' must be a positive integer")
    nodes = doc["nodes"]
    if not isinstance(nodes, list) or len(nodes) != n:
        raise SchemaError("'nodes' must list exactly n entries")
    roles = [None] * n
    xy = [None] * n
    for node in nodes:
        try:
            k, role = node["id"], node["role"]
        except (TypeError, KeyError):
            raise SchemaError("node entries need 'id' and 'role'") from None
        if not isinstance(k, int) or not 0 <= k < n or roles[k] is not None:
            raise SchemaError(f"bad or duplicate node id {k!r}")
        roles[k] = role
        if "x" in node or "y" in node:
            xy[k] = (float(node["x"]), float(node["y"]))
    if any(p is not None for p in xy) and any(p is None for p in xy):
        raise SchemaError("positions must be given for all nodes or none")
    positions = np.array(xy) if xy[0] is not None else None

    seen = {}
    for tube in doc["tubes"]:
        try:
            i, j, c = tube["i"], tube["j"], tube["conductance"]
        except (TypeError, KeyError):
            raise SchemaError("tube entries need 'i', 'j' and 'conductance'") from None
        if not all(isinstance(x, int) for x in (i, j)) or not isinstance(c, (int, float)):
            raise SchemaError("tube fields have wrong types")
        if c < 0:
            raise NegativeConductanceError(f"negative conductance on tube ({i}, {j})")
        if (i, j) in seen:
            raise SchemaError(f"parallel tube ({i}, {j})")
        if (j, i) in seen:
            if seen[(j, i)] != c:
                raise AsymmetricConductanceError(f"asymmetric conductance on tube ({i}, {j})")
            continue
        seen[(i, j)] = float(c)
    edges = np.array(list(seen.keys()), dtype=np.int64).reshape(-1, 2)
    cond = np.array(list(seen.values()), dtype=np.float64)
    return FlowNetwork(n, edges, cond, tuple(roles), positions)


def deserialize_network(text: str) -> FlowNetwork:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"malformed JSON: {exc}") from None
    return network_from_dict(doc)


def read_network_file(path):
    """Load ``(network, law)`` from a JSON file; ``law`` is ``None`` if absent."""
    from .law import law_from_dict

    with open(path) as fh:
        doc = json.load(fh)
    net = network_from_dict(doc)
    law = law_from_dict(doc["law"]) if "law" in doc else None
    return net, law


def write_network_file(path, net: FlowNetwork, law=None) -> None:
    with open(path, "w") as fh:
        fh.write(serialize_network(net, law))
        fh.write("\n")
