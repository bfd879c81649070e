"""Time integration of ``dv/dt = -W p(v) + q`` with mixed boundary conditions.

Pressure-clamped nodes are removed from the unknowns; their volume is held
at the branch inverse of the prescribed pressure and the flux they supply
is integrated alongside the volumes so the total-volume balance can be
checked at every accepted step.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy import integrate

from .errors import IntegrationError, LawDomainError
from .law import BistableLaw
from .network import FlowNetwork
from .steady import volumes_from_pressures


@dataclass(frozen=True)
class Pulse:
    """Constant injection ``rate`` into ``node`` on ``[t_start, t_end)``."""

    node: int
    t_start: float
    t_end: float
    rate: float

    def __post_init__(self):
        if not self.t_end > self.t_start:
            raise ValueError("pulse must end after it starts")

    def volume(self, t: float) -> float:
        return self.rate * max(0.0, min(t, self.t_end) - self.t_start)


@dataclass(frozen=True)
class DriveSchedule:
    """Boundary conditions for one phase.

    ``clamps`` maps node -> prescribed pressure (held for the whole phase);
    ``pulses`` are piecewise-constant flux injections.
    """

    clamps: Mapping[int, float] = field(default_factory=dict)
    pulses: Sequence[Pulse] = ()

    def __post_init__(self):
        object.__setattr__(self, "clamps", {int(k): float(v) for k, v in dict(self.clamps).items()})
        object.__setattr__(self, "pulses", tuple(self.pulses))
        by_node = {}
        for pl in self.pulses:
            if pl.node in self.clamps:
                raise ValueError(f"node {pl.node} is both pressure-clamped and flux-driven")
            by_node.setdefault(pl.node, []).append(pl)
        for node, pls in by_node.items():
            pls = sorted(pls, key=lambda x: x.t_start)
            for a, b in zip(pls, pls[1:]):
                if b.t_start < a.t_end:
                    raise ValueError(f"overlapping pulses on node {node}")

    def validate(self, n: int) -> None:
        nodes = list(self.clamps) + [pl.node for pl in self.pulses]
        if any(not 0 <= k < n for k in nodes):
            raise ValueError("schedule references a node outside the network")

    def breakpoints(self) -> list:
        ts = set()
        for pl in self.pulses:
            ts.update(x for x in (pl.t_start, pl.t_end) if np.isfinite(x) and x > 0)
        return sorted(ts)

    @property
    def settle_from(self) -> float:
        """Earliest time after which the drive no longer changes."""
        bps = self.breakpoints()
        return bps[-1] if bps else 0.0

    def q(self, t: float, n: int) -> np.ndarray:
        q = np.zeros(n)
        for pl in self.pulses:
            if pl.t_start <= t < pl.t_end:
                q[pl.node] += pl.rate
        return q

    def injected(self, t: float) -> float:
        """``int_0^t 1.q dtau`` for the flux pulses."""
        return sum(pl.volume(t) for pl in self.pulses)


@dataclass
class NetworkState:
    t: float
    v: np.ndarray
    p: np.ndarray
    states: np.ndarray

    @property
    def binary(self) -> np.ndarray:
        return (self.states == 1).astype(np.int64)


SOLVERS = ("RK45", "RK23", "DOP853", "Radau", "BDF", "LSODA")
EXPLICIT = ("RK45", "RK23", "DOP853")


@dataclass
class SimOptions:
    """Integrator and steady-detection settings.

    ``dwell`` defaults to 5% of ``t_max``. ``method`` names any scipy
    ``OdeSolver`` class; the explicit ones get the stability step cap.
    """

    t_max: float = 2000.0
    rtol: float = 1e-6
    atol: float = 1e-8
    tol_flux: float = 1e-6
    dwell: Optional[float] = None
    stop_at_steady: bool = True
    max_step: Optional[float] = None
    first_step: Optional[float] = None
    method: str = "RK45"

    def __post_init__(self):
        if self.method not in SOLVERS:
            raise ValueError(f"unknown integrator {self.method!r}; choose from {', '.join(SOLVERS)}")

    @property
    def dwell_time(self) -> float:
        return 0.05 * self.t_max if self.dwell is None else self.dwell


@dataclass
class Trajectory:
    t: np.ndarray
    v: np.ndarray
    p: np.ndarray
    V_total: np.ndarray
    injected: np.ndarray
    residual: np.ndarray
    clamped: np.ndarray
    steady_time: Optional[float]
    settle_from: float
    status: str = "ok"
    p_integral: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.t)

    def state(self, k: int, law: BistableLaw) -> NetworkState:
        return NetworkState(float(self.t[k]), self.v[k].copy(), self.p[k].copy(), law.classify(self.v[k]))

    def final(self, law: BistableLaw) -> NetworkState:
        return self.state(-1, law)

    def steady_index(self) -> Optional[int]:
        if self.steady_time is None:
            return None
        return int(np.searchsorted(self.t, self.steady_time))

    def edge_flux(self, net: FlowNetwork, k: int = -1) -> np.ndarray:
        """``Q_ij = C_ij (p_j - p_i)`` for every tube at sample ``k``."""
        p = self.p[k]
        i, j = net.edges[:, 0], net.edges[:, 1]
        return net.conductance * (p[j] - p[i])

    def pressure_integral(self, t_end: Optional[float] = None) -> np.ndarray:
        """``int_0^t_end p dt``.

        Taken from the integrated quadrature state when present (linear in
        time between samples), otherwise by the trapezoid rule.
        """
        t_end = self.t[-1] if t_end is None else t_end
        if self.p_integral is not None:
            return np.array([np.interp(t_end, self.t, col) for col in self.p_integral.T])
        k = int(np.searchsorted(self.t, t_end, side="right"))
        t, p = self.t[:k], self.p[:k]
        if len(t) < 2:
            return np.zeros(self.p.shape[1])
        return np.trapezoid(p, t, axis=0) if hasattr(np, "trapezoid") else np.trapz(p, t, axis=0)

    def conservation_error(self) -> np.ndarray:
        """``|V(t) - V(0) - injected(t)|`` per sample."""
        return np.abs(self.V_total - self.V_total[0] - self.injected)

    def to_csv(self, path) -> None:
        n = self.v.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"v_{i + 1}" for i in range(n)] + [f"p_{i + 1}" for i in range(n)] + ["V_total"])
            for k in range(len(self.t)):
                w.writerow([repr(float(self.t[k]))] + [repr(float(x)) for x in self.v[k]]
                           + [repr(float(x)) for x in self.p[k]] + [repr(float(self.V_total[k]))])

    def flux_to_csv(self, path, net: FlowNetwork) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "i", "j", "Q_ij"])
            for k in range(len(self.t)):
                for (i, j), q in zip(net.edges, self.edge_flux(net, k)):
                    w.writerow([repr(float(self.t[k])), int(i), int(j), repr(float(q))])


def rhs(net: FlowNetwork, law: BistableLaw, v, schedule: DriveSchedule = DriveSchedule(), t: float = 0.0,
        W=None) -> np.ndarray:
    """``dv/dt`` for every node; clamped nodes report zero.

    ``(dv/dt)_i = q_i + sum_j C_ij (p_j - p_i)`` with ``p = f(v)`` except at
    clamped nodes, where the prescribed pressure is used.
    """
    W = net.laplacian() if W is None else W
    v = np.asarray(v, dtype=np.float64)
    p = law.pressure(v)
    for k, pk in schedule.clamps.items():
        p[k] = pk
    dv = schedule.q(t, net.n) - W @ p
    for k in schedule.clamps:
        dv[k] = 0.0
    return dv


def spectral_bound(W_free, law: BistableLaw) -> float:
    """Upper bound on the spectral radius of the linearized dynamics."""
    slopes = np.abs(np.append(np.diff(law.knots_p) / np.diff(law.knots_v), law.ext_slope))
    return float(np.linalg.eigvalsh(W_free).max(initial=0.0)) * float(slopes.max())


def initial_clamped_volumes(law, v0, clamps):
    idx = np.array(sorted(clamps), dtype=np.int64)
    if not len(idx):
        return idx, np.zeros(0)
    pc = np.array([clamps[k] for k in idx])
    vc, _, _ = volumes_from_pressures(pc, law, law.binary(np.asarray(v0)[idx]))
    return idx, vc


def simulate(net: FlowNetwork, law: BistableLaw, schedule: DriveSchedule, v0, opts: Optional[SimOptions] = None,
             W=None) -> Trajectory:
    """Integrate the network from ``v0`` (adaptive Dormand-Prince RK45 by default).

    Integration restarts at every pulse edge so piecewise-constant drives are
    integrated exactly. With ``opts.stop_at_steady`` the run ends once the
    largest free-node ``|dv/dt|`` has stayed below ``opts.tol_flux`` for
    ``opts.dwell_time`` (only after the last drive change); otherwise it runs
    to ``opts.t_max``.

    Raises
    ------
    IntegrationError
        Step-size underflow; ``.trajectory`` holds the samples so far.
    LawDomainError
        A volume went negative.
    """
    opts = opts or SimOptions()
    schedule.validate(net.n)
    W = net.laplacian() if W is None else np.asarray(W, dtype=np.float64)
    n = net.n
    v0 = np.asarray(v0, dtype=np.float64)
    if v0.shape != (n,):
        raise ValueError("v0 must have one volume per node")
    if np.any(v0 < 0):
        raise ValueError("initial volumes must be non-negative")

    cidx, vc = initial_clamped_volumes(law, v0, schedule.clamps)
    pc = np.array([schedule.clamps[k] for k in cidx])
    free = np.setdiff1d(np.arange(n), cidx)
    nf = len(free)
    W_free = W[free]
    W_clamp = W[cidx]
    v_start = v0.copy()
    v_start[cidx] = vc

    p_buf = np.zeros(n)
    p_buf[cidx] = pc

    def make_fun(q_free):
        q_total = q_free.sum()

        def fun(_t, y):
            p_buf[free] = law._p(y[:nf])
            flow = W_free @ p_buf
            out = np.empty(nf + 1 + n)
            out[:nf] = q_free - flow
            out[nf] = q_total + (W_clamp @ p_buf).sum()
            out[nf + 1:] = p_buf
            return out

        return fun

    vol_scale = max(1.0, float(np.abs(v_start).max(initial=0.0)))
    neg_tol = -1e-9 * vol_scale
    dwell = opts.dwell_time
    settle_from = schedule.settle_from
    max_step = opts.max_step if opts.max_step is not None else max(dwell / 10.0, 1e-6)
    if not np.isfinite(max_step) or max_step <= 0:
        max_step = np.inf
    # stay inside the real-axis stability interval of the 5th-order pair (about -3.3);
    # at its edge the step controller chatters and the residual flux never settles
    if nf and opts.method in EXPLICIT:
        rho = spectral_bound(W[np.ix_(free, free)], law)
        if rho > 0:
            max_step = min(max_step, 2.0 / rho)

    # state: free volumes, injected volume, running pressure integral of every node
    ts, vs, Is, Ps, res = [0.0], [v_start.copy()], [0.0], [np.zeros(n)], []
    y = np.concatenate([v_start[free], [0.0], np.zeros(n)])
    res.append(float(np.abs(make_fun(schedule.q(0.0, n)[free])(0.0, y)[:nf]).max(initial=0.0)))

    steady_time = None
    candidate = 0.0 if (res[0] < opts.tol_flux and settle_from == 0.0) else None
    status = "t_max"

    def build():
        V = np.array(vs)
        P = law._p(V)
        P[:, cidx] = pc
        return Trajectory(np.array(ts), V, P, V.sum(axis=1), np.array(Is), np.array(res), cidx,
                          steady_time, settle_from, status, np.array(Ps))

    segments = [0.0] + [b for b in schedule.breakpoints() if b < opts.t_max] + [opts.t_max]
    t = 0.0
    done = False
    for seg_end in segments[1:]:
        if done:
            break
        q_free = schedule.q(t, n)[free]
        if nf == 0:
            ts.append(seg_end)
            vs.append(v_start.copy())
            Is.append(Is[-1])
            Ps.append(Ps[-1] + p_buf * (seg_end - t))
            res.append(0.0)
            t = seg_end
            continue
        kw = {"first_step": opts.first_step} if opts.first_step else {}
        fun = make_fun(q_free)
        solver = getattr(integrate, opts.method)(fun, t, y, seg_end, max_step=max_step, rtol=opts.rtol,
                                                 atol=opts.atol, **kw)
        while solver.status == "running":
            msg = solver.step()
            if solver.status == "failed":
                status = "failed"
                raise IntegrationError(f"stiff/failed at t={solver.t:.6g}: {msg}", build())
            t, y = solver.t, solver.y
            v = v_start.copy()
            v[free] = y[:nf]
            if np.any(y[:nf] < neg_tol):
                status = "domain"
                ts.append(t)
                vs.append(v)
                Is.append(y[nf])
                Ps.append(y[nf + 1:].copy())
                res.append(float(np.abs(fun(t, y)[:nf]).max()))
                raise LawDomainError(f"law domain exit: negative volume at t={t:.6g}")
            # RK solvers keep the derivative at the accepted point; the implicit ones do not
            f = solver.f if hasattr(solver, "f") else fun(t, y)
            r = float(np.abs(f[:nf]).max())
            ts.append(t)
            vs.append(v)
            Is.append(y[nf])
            Ps.append(y[nf + 1:].copy())
            res.append(r)
            if t >= settle_from and r < opts.tol_flux:
                if candidate is None:
                    candidate = t
                if steady_time is None and t - candidate >= dwell:
                    steady_time = candidate
                    status = "steady"
                    if opts.stop_at_steady:
                        done = True
                        break
            else:
                candidate = None
    if nf == 0:
        steady_time, status = 0.0 if settle_from == 0.0 else settle_from, "steady"
    return build()


def detect_steady(traj: Trajectory, tol_flux: float, dwell: float) -> Optional[float]:
    """First sample time after the last drive change from which the residual
    flux stays below ``tol_flux`` for at least ``dwell``; ``None`` otherwise."""
    start = None
    for k, (t, r) in enumerate(zip(traj.t, traj.residual)):
        if t >= traj.settle_from and r < tol_flux:
            if start is None:
                start = t
            if t - start >= dwell:
                return start
        else:
            start = None
    return None


def simulate_phases(net, law, phases, v0, opts=None):
    """Run consecutive schedules, each starting from the previous final volumes."""
    out = []
    v = np.asarray(v0, dtype=np.float64)
    for sched in phases:
        traj = simulate(net, law, sched, v, opts)
        out.append(traj)
        v = traj.v[-1]
    return out
