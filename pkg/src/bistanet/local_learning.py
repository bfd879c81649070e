"""Local free/clamped coupled learning for pressure-driven bistable networks.

Every iteration settles the network twice per task: a free phase with only
the inlet pressures imposed, then a clamped phase that also pins the output
nodes. Outputs already in their target binary state are nudged towards the
target pressure; outputs in the wrong state are pushed past the relevant
fold so they snap. Each tube then changes its conductance using only the
pressure drops across it in the two phases.

The network carries its state between phases: the clamped phase starts from
the free steady state, and the next free phase starts from the clamped one.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dynamics import DriveSchedule, SimOptions, simulate
from .errors import InfeasibleTargetError, TrajectoryNotConvergedError
from .law import BistableLaw
from .network import FlowNetwork
from .steady import pressures_mixed_bc, volumes_from_pressures


@dataclass(frozen=True)
class LocalTask:
    """Inlet pressures plus per-output target pressure and binary state."""

    inlets: tuple
    inlet_pressures: tuple
    outputs: tuple
    target_pressures: tuple
    target_binary: tuple

    def __post_init__(self):
        for name in ("inlets", "outputs", "target_binary"):
            object.__setattr__(self, name, tuple(int(x) for x in getattr(self, name)))
        for name in ("inlet_pressures", "target_pressures"):
            object.__setattr__(self, name, tuple(float(x) for x in getattr(self, name)))
        if len(self.inlets) != len(self.inlet_pressures):
            raise ValueError("one pressure per inlet required")
        if not (len(self.outputs) == len(self.target_pressures) == len(self.target_binary)):
            raise ValueError("one target pressure and binary state per output required")
        if set(self.inlets) & set(self.outputs):
            raise ValueError("a node cannot be both inlet and output")
        if any(b not in (0, 1) for b in self.target_binary):
            raise ValueError("binary targets must be 0 or 1")

    def check(self, law: BistableLaw) -> None:
        for p, b in zip(self.target_pressures, self.target_binary):
            if (b == 0 and p > law.p_max) or (b == 1 and p < law.p_min) or (b == 0 and p < law.p_floor):
                raise InfeasibleTargetError(f"infeasible target: pressure {p} with binary state {b}")

    def target_volumes(self, law: BistableLaw) -> np.ndarray:
        self.check(law)
        return np.array([law.inverse_branch(p, b) for p, b in zip(self.target_pressures, self.target_binary)])

    @property
    def free_bc(self) -> dict:
        return dict(zip(self.inlets, self.inlet_pressures))


@dataclass
class LocalConfig:
    eta: float = 0.25
    gamma: float = 0.01
    eps: float = 0.1
    alpha1: float = 1.2
    alpha2: float = 0.8
    c_min: float = 1e-6
    c_max: float = 1e6
    max_iter: int = 500
    fast_path: bool = True
    v0: float = 1.0
    sim: SimOptions = field(default_factory=lambda: SimOptions(t_max=1e5, dwell=50.0, stop_at_steady=True))

    def __post_init__(self):
        if not 0 < self.eta <= 1:
            raise ValueError("eta must lie in (0, 1]")
        if self.alpha1 <= 1 or not 0 < self.alpha2 < 1:
            raise ValueError("need alpha1 > 1 and 0 < alpha2 < 1")


@dataclass
class PhaseState:
    """Steady state of one phase: pressures, volumes and binary labels."""

    p: np.ndarray
    v: np.ndarray
    binary: np.ndarray


def snap_down_pressure(law: BistableLaw, alpha2: float) -> float:
    """``alpha2 * p_min``; for ``p_min <= 0`` the drop below ``p_min`` is
    ``|alpha2 - 1| * (p_max - p_min)`` instead, which keeps it below the fold."""
    if law.p_min > 0:
        return alpha2 * law.p_min
    return law.p_min - abs(alpha2 - 1.0) * (law.p_max - law.p_min)


def clamped_target_pressures(free: PhaseState, task: LocalTask, law: BistableLaw, config: LocalConfig):
    """Pressures to impose on the outputs in the clamped phase.

    Returns ``(p_clamp, output_binary)``. An output in its target state
    gets ``p_f + eta (p_t - p_f)``; one stuck in state 0 gets
    ``alpha1 * p_max``; one stuck in state 1 gets the snap-down pressure.
    """
    task.check(law)
    out = np.asarray(task.outputs)
    bs = np.asarray(free.binary)[out]
    pf = np.asarray(free.p)[out]
    pt = np.asarray(task.target_pressures)
    want = np.asarray(task.target_binary)
    pc = np.where(bs == want, pf + config.eta * (pt - pf),
                  np.where(bs == 0, config.alpha1 * law.p_max, snap_down_pressure(law, config.alpha2)))
    return pc, bs


def conductance_update(net: FlowNetwork, p_free, p_clamped, config: LocalConfig) -> np.ndarray:
    """``dC_ij = gamma/(2 eta) [(p_i^f - p_j^f)^2 - (p_i^c - p_j^c)^2]`` per existing tube."""
    pf, pc = np.asarray(p_free), np.asarray(p_clamped)
    i, j = net.edges[:, 0], net.edges[:, 1]
    return config.gamma / (2 * config.eta) * ((pf[i] - pf[j]) ** 2 - (pc[i] - pc[j]) ** 2)


def conductance_update_matrix(p_free, p_clamped, config: LocalConfig) -> np.ndarray:
    """Dense form of :func:`conductance_update` over every node pair."""
    pf, pc = np.asarray(p_free), np.asarray(p_clamped)
    D = config.gamma / (2 * config.eta) * ((pf[:, None] - pf[None, :]) ** 2 - (pc[:, None] - pc[None, :]) ** 2)
    np.fill_diagonal(D, 0.0)
    return D


def apply_update(net: FlowNetwork, dC, config: LocalConfig):
    """Add ``dC`` to every tube, clip to ``[c_min, c_max]``; returns ``(net, clip count)``."""
    raw = net.conductance + dC
    clipped = np.clip(raw, config.c_min, config.c_max)
    return net.with_conductance(clipped), int(np.sum(raw != clipped))


def _ode_phase(net, law, bc: dict, v_start, opts) -> PhaseState:
    tr = simulate(net, law, DriveSchedule(bc), v_start, opts)
    if tr.steady_time is None:
        raise TrajectoryNotConvergedError("trajectory not converged")
    v = tr.v[-1].copy()
    return PhaseState(tr.p[-1].copy(), v, law.binary(v))


def fast_steady_update(W, bc: dict, previous_binary, law: BistableLaw) -> PhaseState:
    """Steady state from the linear pressure solve and the snap rules, without integration."""
    p = pressures_mixed_bc(W, bc).p
    v, binary, _ = volumes_from_pressures(p, law, previous_binary)
    return PhaseState(p, v, binary)


def free_phase(net, law, task: LocalTask, start: PhaseState, config: LocalConfig, use_ode: bool) -> PhaseState:
    bc = task.free_bc
    if use_ode:
        return _ode_phase(net, law, bc, start.v, config.sim)
    return fast_steady_update(net.laplacian(), bc, start.binary, law)


def clamped_phase(net, law, task: LocalTask, p_out, start: PhaseState, config: LocalConfig,
                  use_ode: bool) -> PhaseState:
    bc = task.free_bc
    bc.update(zip(task.outputs, (float(x) for x in p_out)))
    if use_ode:
        return _ode_phase(net, law, bc, start.v, config.sim)
    return fast_steady_update(net.laplacian(), bc, start.binary, law)


def task_error(free: PhaseState, task: LocalTask, law: BistableLaw) -> float:
    """Squared distance between output volumes and target volumes."""
    return float(np.sum((free.v[list(task.outputs)] - task.target_volumes(law)) ** 2))


@dataclass
class IterationRecord:
    iteration: int
    error: float
    snapped: bool
    clip_events: int
    output_binary: list
    output_pressure: list


@dataclass
class LocalResult:
    net: FlowNetwork
    best_net: FlowNetwork
    errors: list
    status: str
    iterations: int
    history: list
    free_states: list

    @property
    def final_error(self) -> float:
        return self.errors[-1]

    @property
    def clip_events(self) -> int:
        return sum(r.clip_events for r in self.history)

    def write_error_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "error", "snapped", "clip_events"])
            for r in self.history:
                w.writerow([r.iteration, repr(r.error), int(r.snapped), r.clip_events])


def initial_state(net: FlowNetwork, law: BistableLaw, v0) -> PhaseState:
    v = np.broadcast_to(np.asarray(v0, dtype=np.float64), (net.n,)).copy()
    return PhaseState(law.pressure(v), v, law.binary(v))


def train_local(net0: FlowNetwork, law: BistableLaw, tasks: Sequence[LocalTask],
                config: Optional[LocalConfig] = None, v0=None, callback=None) -> LocalResult:
    """Coupled learning with snap handling.

    One iteration is a pass over all tasks; the applied conductance change
    is the task average. The first free phase of every task is integrated;
    later phases use :func:`fast_steady_update` when ``config.fast_path``.
    Stops at mean error ``<= config.eps`` (``"converged"``) or after
    ``config.max_iter`` updates (``"max_iter"``, best-so-far network kept).
    """
    config = config or LocalConfig()
    for task in tasks:
        task.check(law)
    v0 = config.v0 if v0 is None else v0
    net = net0
    memory = [initial_state(net, law, v0) for _ in tasks]
    errors, history, frees = [], [], []
    best = (np.inf, net)
    prev_bits = None
    status = "max_iter"
    s = 0
    while True:
        use_ode = s == 0 or not config.fast_path
        frees = [free_phase(net, law, t, m, config, use_ode) for t, m in zip(tasks, memory)]
        err = float(np.mean([task_error(f, t, law) for f, t in zip(frees, tasks)]))
        bits = [f.binary[list(t.outputs)].tolist() for f, t in zip(frees, tasks)]
        snapped = prev_bits is not None and bits != prev_bits
        prev_bits = bits
        errors.append(err)
        if err < best[0]:
            best = (err, net)
        rec = IterationRecord(s, err, snapped, 0, bits, [f.p[list(t.outputs)].tolist() for f, t in zip(frees, tasks)])
        history.append(rec)
        if callback is not None:
            callback(s, net, frees)
        if err <= config.eps:
            status = "converged"
            break
        if s >= config.max_iter:
            break
        dC = np.zeros(net.m)
        for h, (task, free) in enumerate(zip(tasks, frees)):
            p_out, _ = clamped_target_pressures(free, task, law, config)
            clamped = clamped_phase(net, law, task, p_out, free, config, use_ode)
            dC += conductance_update(net, free.p, clamped.p, config)
            memory[h] = clamped
        net, clips = apply_update(net, dC / len(tasks), config)
        rec.clip_events = clips
        s += 1
    return LocalResult(net, best[1], errors, status, s, history, frees)
