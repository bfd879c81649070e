"""Stability of network equilibria.

For a closed (volume-conserving) network the relevant Hessian is the one of
the elastic energy restricted to ``sum(v) = V``; eliminating a pivot node
gives ``H = diag(f'_others) + f'_pivot * ones``. Nodes held at a prescribed
pressure act as reservoirs of zero stiffness, which removes the volume
constraint and leaves ``H = diag(f'_free)``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import BistanetError
from .law import BistableLaw, State

STABLE = "stable"
UNSTABLE = "unstable"
MARGINAL = "marginal"

MARGINAL_RTOL = 1e-10


class MarginalInputError(BistanetError, ValueError):
    """A volume sits exactly on a fold point, where stiffness is one-sided."""


@dataclass
class StabilityReport:
    label: str
    spinodal_count: int
    minors: list = field(default_factory=list)
    min_eigenvalue: Optional[float] = None
    spinodal_sum: Optional[float] = None
    on_fold: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def _split(v, clamped):
    v = np.asarray(v, dtype=np.float64)
    clamped = np.unique(np.asarray(clamped, dtype=np.int64)) if len(clamped) else np.zeros(0, np.int64)
    free = np.setdiff1d(np.arange(len(v)), clamped)
    return v, free, clamped


def reduced_hessian(v, law: BistableLaw, pivot: int = -1, clamped: Sequence[int] = (),
                    allow_fold: bool = False) -> np.ndarray:
    """Hessian of the constrained elastic energy.

    Parameters
    ----------
    v : array of shape (n,)
        Node volumes.
    pivot : int
        Node eliminated through the volume constraint (closed networks only).
    clamped : sequence of int
        Pressure-clamped nodes; when present they absorb volume changes and
        the returned matrix is ``diag(f')`` over the remaining nodes.
    """
    v, free, clamped = _split(v, clamped)
    if not allow_fold and np.any(law.is_fold(v[free])):
        raise MarginalInputError("marginal input: volume on a fold point")
    if len(clamped):
        return np.diag(law.stiffness(v[free]))
    pivot = pivot % len(v)
    if pivot in clamped:
        raise ValueError("pivot must not be pressure-clamped")
    others = np.delete(np.arange(len(v)), pivot)
    k = law.stiffness(v)
    return np.diag(k[others]) + k[pivot] * np.ones((len(others), len(others)))


def _minors(k_others, k_pivot):
    out = []
    prod = 1.0
    inv_sum = 0.0
    scales = []
    for y, ky in enumerate(k_others, start=1):
        prod *= ky
        inv_sum += 1.0 / ky
        out.append(prod * (1.0 + k_pivot * inv_sum))
        scales.append(abs(prod) * (1.0 + abs(k_pivot) * sum(1.0 / abs(x) for x in k_others[:y])))
    return out, scales


def _minors_label(minors, scales) -> str:
    """Sylvester's test with a relative band around zero.

    The first clearly negative minor after positive ones implies a negative
    eigenvalue (interlacing). A vanishing determinant after positive minors
    is marginal; a vanishing intermediate minor with a non-vanishing
    determinant means indefinite.
    """
    for m, s in zip(minors, scales):
        if m > MARGINAL_RTOL * s:
            continue
        if m < -MARGINAL_RTOL * s:
            return UNSTABLE
        last = abs(minors[-1]) < MARGINAL_RTOL * scales[-1]
        return MARGINAL if last else UNSTABLE
    return STABLE


def minors_criterion(v, law: BistableLaw, pivot: int = -1, clamped: Sequence[int] = ()) -> StabilityReport:
    """Leading principal minors ``M_y = prod(f'_i) * (1 + f'_pivot * sum 1/f'_i)``."""
    v, free, clamped = _split(v, clamped)
    on_fold = bool(np.any(law.is_fold(v[free])))
    n_spin = int(np.sum(law.classify(v[free]) == State.SPINODAL))
    k = law.stiffness(v)
    if len(clamped):
        k_others, k_pivot = k[free], 0.0
    else:
        pivot = pivot % len(v)
        k_others, k_pivot = np.delete(k, pivot), k[pivot]
    minors, scales = _minors(list(k_others), k_pivot)
    H = np.diag(k_others) + k_pivot * np.ones((len(k_others),) * 2)
    min_eig = float(np.linalg.eigvalsh(H).min()) if len(k_others) else None
    label = _minors_label(minors, scales) if not on_fold else MARGINAL
    return StabilityReport(label, n_spin, [float(m) for m in minors], min_eig, None, on_fold)


def spinodal_rule(v, law: BistableLaw, clamped: Sequence[int] = ()) -> StabilityReport:
    """Label by counting spinodal nodes.

    No spinodal node: stable. Two or more: unstable. Exactly one: stable
    iff ``sum_i 1/f'_i < 0`` over all nodes; a reservoir (pressure-clamped
    node) contributes ``+inf`` to that sum.
    """
    v, free, clamped = _split(v, clamped)
    on_fold = bool(np.any(law.is_fold(v[free])))
    n_spin = int(np.sum(law.classify(v[free]) == State.SPINODAL))
    total = None
    if n_spin == 0:
        label = STABLE
    elif n_spin >= 2:
        label = UNSTABLE
    elif len(free) <= 1 and not len(clamped):
        label = STABLE  # no degrees of freedom left
    else:
        inv = 1.0 / law.stiffness(v[free])
        total = float(np.inf) if len(clamped) else float(inv.sum())
        if np.isfinite(total) and abs(total) < MARGINAL_RTOL * np.abs(inv).sum():
            label = MARGINAL
        else:
            label = STABLE if total < 0 else UNSTABLE
    if on_fold:
        label = MARGINAL
    return StabilityReport(label, n_spin, [], None, total, on_fold)


def eigen_label(v, law: BistableLaw, pivot: int = -1, clamped: Sequence[int] = (), rtol=MARGINAL_RTOL) -> str:
    """Label from the minimum eigenvalue of :func:`reduced_hessian`."""
    H = reduced_hessian(v, law, pivot, clamped, allow_fold=True)
    if H.size == 0:
        return STABLE
    lam = np.linalg.eigvalsh(H)
    if np.any(law.is_fold(np.asarray(v)[_split(v, clamped)[1]])) or abs(lam.min()) < rtol * np.abs(lam).max():
        return MARGINAL
    return STABLE if lam.min() > 0 else UNSTABLE


def jacobian(W, v, law: BistableLaw, clamped: Sequence[int] = (), pivot: int = -1) -> np.ndarray:
    """Linearization of the network dynamics at ``v``.

    With clamps: ``-W_ff diag(f'_f)`` over the free nodes. Without clamps
    the volume constraint is eliminated through ``pivot``, giving
    ``-W_reduced @ H``.
    """
    W = np.asarray(W, dtype=np.float64)
    v, free, clamped = _split(v, clamped)
    if len(clamped):
        return -W[np.ix_(free, free)] @ np.diag(law.stiffness(v[free]))
    pivot = pivot % len(v)
    others = np.delete(np.arange(len(v)), pivot)
    return -W[np.ix_(others, others)] @ reduced_hessian(v, law, pivot, allow_fold=True)


def assess(v, law: BistableLaw, clamped: Sequence[int] = ()) -> StabilityReport:
    """Minors report with the single-spinodal sum attached."""
    rep = minors_criterion(v, law, clamped=clamped)
    rep.spinodal_sum = spinodal_rule(v, law, clamped).spinodal_sum
    return rep
