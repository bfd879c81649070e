"""Supervised training of the Laplacian by projected gradient descent.

Each task drives the closed network with flux pulses from a common initial
volume vector; the loss is the mean squared distance between the settled
volumes and the task targets. The gradient uses the time integral of the
node pressures, truncated at the detected settling time.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .dynamics import DriveSchedule, SimOptions, Trajectory, simulate
from .errors import (DisconnectedNetworkError, IntegrationError, LawDomainError,
                     TrajectoryNotConvergedError)
from .law import BistableLaw
from .network import FlowNetwork, is_connected, network_to_dict, project_laplacian


@dataclass(frozen=True)
class GlobalTask:
    """Flux drive paired with the volumes the network should settle to."""

    schedule: DriveSchedule
    target: np.ndarray

    def __post_init__(self):
        if self.schedule.clamps:
            raise ValueError("global tasks are flux-driven; pressure clamps are not allowed")
        object.__setattr__(self, "target", np.asarray(self.target, dtype=np.float64))

    def check_volume(self, v0, rtol=1e-9) -> None:
        """Targets must hold the initial volume plus everything injected."""
        expected = float(np.sum(v0)) + self.schedule.injected(np.inf)
        if abs(self.target.sum() - expected) > rtol * max(1.0, abs(expected)):
            raise ValueError(f"target volume {self.target.sum():.12g} does not match "
                             f"initial plus injected volume {expected:.12g}")


@dataclass
class GlobalConfig:
    eta: float = 0.1
    beta: float = 1e-5
    eps: float = 0.1
    max_iter: int = 300
    guard: float = 10.0
    guard_window: int = 10
    tail_time: float = 0.0
    checkpoint_every: int = 0
    sim: SimOptions = field(default_factory=lambda: SimOptions(t_max=200.0, dwell=2.0))


@dataclass
class GlobalResult:
    W: np.ndarray
    losses: list
    status: str
    iterations: int
    v_ss: list

    @property
    def final_loss(self) -> float:
        return self.losses[-1]

    def network(self, roles=None, positions=None) -> FlowNetwork:
        return FlowNetwork.from_laplacian(self.W, roles, positions)

    def write_loss_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "loss"])
            for s, L in enumerate(self.losses):
                w.writerow([s, repr(float(L))])


def loss(v_ss: Sequence[np.ndarray], targets: Sequence[np.ndarray]) -> float:
    """``(1/k) sum_h ||v_ss_h - v_t_h||^2``."""
    if len(v_ss) != len(targets) or not len(v_ss):
        raise ValueError("need one steady state per target and at least one task")
    total = 0.0
    for a, b in zip(v_ss, targets):
        a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
        if a.shape != b.shape:
            raise ValueError("steady state and target lengths differ")
        total += float(np.sum((a - b) ** 2))
    return total / len(v_ss)


def loss_gradient(v_ss, targets, trajectories: Sequence[Trajectory], tail_time: float = 0.0) -> np.ndarray:
    """``(2/k) sum_h (v_t - v_ss) (int_0^T p dt)^T`` with ``T`` the settling time.

    ``tail_time`` extends every integral by that long at the settled pressure.
    """
    k = len(trajectories)
    if len(v_ss) != k or len(targets) != k:
        raise ValueError("need one trajectory per task")
    n = len(np.asarray(targets[0]))
    G = np.zeros((n, n))
    for vs, vt, tr in zip(v_ss, targets, trajectories):
        if tr.steady_time is None:
            raise TrajectoryNotConvergedError("trajectory not converged")
        P = tr.pressure_integral(tr.steady_time)
        if tail_time:
            P = P + tail_time * tr.p[tr.steady_index()]
        G += np.outer(np.asarray(vt) - np.asarray(vs), P)
    return 2.0 / k * G


def pgd_step(W, grad, config: GlobalConfig) -> np.ndarray:
    """``proj[W - eta (grad + beta W^T)]`` onto valid Laplacians."""
    W = np.asarray(W, dtype=np.float64)
    return project_laplacian(W - config.eta * (np.asarray(grad) + config.beta * W.T))


def settle(net: FlowNetwork, law: BistableLaw, tasks, v0, opts: SimOptions, W=None):
    """Run every task to steady state; returns ``(v_ss list, trajectories)``."""
    trajs, v_ss = [], []
    for task in tasks:
        tr = simulate(net, law, task.schedule, v0, opts, W=W)
        if tr.steady_time is None:
            raise TrajectoryNotConvergedError("trajectory not converged")
        trajs.append(tr)
        v_ss.append(tr.v[tr.steady_index()].copy())
    return v_ss, trajs


def evaluate(W, law, tasks, v0, opts, roles=None):
    """Loss and gradient at ``W``."""
    net = FlowNetwork.from_laplacian(W, roles)
    v_ss, trajs = settle(net, law, tasks, v0, opts, W=np.asarray(W))
    targets = [t.target for t in tasks]
    return loss(v_ss, targets), v_ss, trajs


def train_global(net0: FlowNetwork, law: BistableLaw, tasks: Sequence[GlobalTask], v0,
                 config: Optional[GlobalConfig] = None, out_dir=None) -> GlobalResult:
    """Projected gradient descent on the Laplacian.

    Stops when the loss reaches ``config.eps`` (status ``"converged"``), at
    ``config.max_iter`` (``"max_iter"``), when the loss has exceeded
    ``guard`` times the initial loss for ``guard_window`` consecutive
    iterations (``"diverged"``), or when a task simulation fails
    (``"simulation failed at iteration s"``).

    Raises
    ------
    DisconnectedNetworkError
        A projection removed every tube across some cut; ``.iteration`` is set.
    """
    config = config or GlobalConfig()
    v0 = np.asarray(v0, dtype=np.float64)
    for task in tasks:
        task.check_volume(v0)
    targets = [t.target for t in tasks]
    W = net0.laplacian()
    out = Path(out_dir) if out_dir is not None else None
    losses, over = [], 0
    status = "max_iter"
    v_ss = []
    s = 0
    while True:
        try:
            v_ss, trajs = settle(net0, law, tasks, v0, config.sim, W=W)
        except (IntegrationError, LawDomainError, TrajectoryNotConvergedError):
            status = f"simulation failed at iteration {s}"
            break
        L = loss(v_ss, targets)
        losses.append(L)
        if out is not None and config.checkpoint_every and s % config.checkpoint_every == 0:
            _checkpoint(out, s, W, net0.roles)
        if L <= config.eps:
            status = "converged"
            break
        over = over + 1 if L > config.guard * losses[0] else 0
        if over >= config.guard_window:
            status = "diverged"
            break
        if s >= config.max_iter:
            break
        grad = loss_gradient(v_ss, targets, trajs, config.tail_time)
        W_next = pgd_step(W, grad, config)
        if not is_connected(-W_next + np.diag(np.diag(W_next))):
            raise DisconnectedNetworkError(iteration=s + 1)
        W = W_next
        s += 1
    result = GlobalResult(W, losses, status, s, v_ss)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        result.write_loss_csv(out / "loss_history.csv")
    return result


def _checkpoint(out: Path, s: int, W, roles) -> None:
    out.mkdir(parents=True, exist_ok=True)
    doc = network_to_dict(FlowNetwork.from_laplacian(W, roles))
    (out / f"W_{s:05d}.json").write_text(json.dumps(doc, indent=2))


def pair_direction(n: int, i: int, j: int) -> np.ndarray:
    """Laplacian change from raising ``C_ij`` by one: symmetric off-diagonal pair plus diagonal compensation."""
    E = np.zeros((n, n))
    E[i, j] = E[j, i] = -1.0
    E[i, i] = E[j, j] = 1.0
    return E


def finite_difference_gradient(W, law, tasks, v0, opts: SimOptions, delta=1e-4, roles=None) -> np.ndarray:
    """Central differences of the loss along :func:`pair_direction` for every pair.

    Entry ``(i, j)`` is ``[L(W + delta E_ij) - L(W - delta E_ij)] / (2 delta)``.
    """
    W = np.asarray(W, dtype=np.float64)
    n = W.shape[0]
    D = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            E = pair_direction(n, i, j)
            lp = evaluate(W + delta * E, law, tasks, v0, opts, roles)[0]
            lm = evaluate(W - delta * E, law, tasks, v0, opts, roles)[0]
            D[i, j] = D[j, i] = (lp - lm) / (2 * delta)
    return D


def project_gradient(G, i: int, j: int) -> float:
    """Directional derivative ``<G, E_ij>`` predicted by a full gradient matrix."""
    return float(np.sum(G * pair_direction(G.shape[0], i, j)))
