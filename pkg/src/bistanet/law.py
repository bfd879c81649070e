"""Bistable pressure-volume law of a chamber.

Both supported variants (trilinear and tabulated) are continuous piecewise
linear curves ``p = f(v)`` on ``v >= 0``: increasing on branch 0
(``[0, v_max]``), decreasing on the spinodal (``(v_max, v_min)``) and
increasing on branch 1 (``[v_min, inf)``, extended linearly past the last
knot).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import IntEnum
from importlib import resources

import numpy as np

from .errors import BranchInfeasibleError, LawDomainError, SchemaError


class State(IntEnum):
    ZERO = 0
    ONE = 1
    SPINODAL = 2

    @property
    def symbol(self) -> str:
        return {0: "0", 1: "1", 2: "s"}[int(self)]


SPINODAL = "s"


def _norm_branch(branch):
    if branch in (0, State.ZERO, "0"):
        return 0
    if branch in (1, State.ONE, "1"):
        return 1
    if branch in (2, State.SPINODAL, "s", "spinodal"):
        return 2
    raise ValueError(f"unknown branch {branch!r}")


@dataclass(frozen=True, eq=False)
class BistableLaw:
    """Continuous piecewise-linear bistable law.

    Use :meth:`trilinear` or :meth:`from_table` rather than the raw
    constructor.
    """

    kind: str
    knots_v: np.ndarray
    knots_p: np.ndarray
    ext_slope: float
    i_max: int
    i_min: int
    spec: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.knots_v, dtype=np.float64)
        p = np.asarray(self.knots_p, dtype=np.float64)
        if v[0] != 0.0:
            raise SchemaError("law must start at v = 0")
        if np.any(np.diff(v) <= 0):
            raise SchemaError("law knots must have strictly increasing volume")
        dp = np.diff(p)
        if not (0 < self.i_max < self.i_min < len(v)):
            raise SchemaError("law needs branch 0, spinodal and branch 1")
        if np.any(dp[: self.i_max] <= 0) or np.any(dp[self.i_min:] <= 0) or self.ext_slope <= 0:
            raise SchemaError("stable branches must be strictly increasing")
        if np.any(dp[self.i_max: self.i_min] >= 0):
            raise SchemaError("spinodal branch must be strictly decreasing")
        for a in (v, p):
            a.setflags(write=False)
        object.__setattr__(self, "knots_v", v)
        object.__setattr__(self, "knots_p", p)
        object.__setattr__(self, "ext_slope", float(self.ext_slope))

    # -- constructors ----------------------------------------------------------
    @classmethod
    def trilinear(cls, v_max=5.0, p_max=5.0, v_min=9.0, p_min=2.0, slope0=1.0, slope1=0.5):
        """Three straight segments through the fold points.

        The defaults give ``p = v`` on ``[0, 5]``, ``p = 5 - 0.75 (v - 5)``
        on ``(5, 9)`` and ``p = 2 + 0.5 (v - 9)`` beyond.
        """
        if not (0 < v_max < v_min and p_max > p_min):
            raise SchemaError("trilinear law needs 0 < v_max < v_min and p_max > p_min")
        spec = {"type": "trilinear", "v_max": float(v_max), "p_max": float(p_max),
                "v_min": float(v_min), "p_min": float(p_min),
                "slope0": float(slope0), "slope1": float(slope1)}
        return cls("trilinear", [0.0, v_max, v_min], [p_max - slope0 * v_max, p_max, p_min],
                   slope1, 1, 2, spec)

    @classmethod
    def from_table(cls, branch0, spinodal, branch1):
        """Tabulated law from three ``[[v, p], ...]`` lists.

        Consecutive lists must share their junction point, i.e.
        ``branch0[-1] == spinodal[0]`` and ``spinodal[-1] == branch1[0]``.
        Branch 1 is extended with the slope of its last segment.
        """
        b0, sp, b1 = (np.asarray(x, dtype=np.float64).reshape(-1, 2) for x in (branch0, spinodal, branch1))
        if len(b0) < 2 or len(sp) < 2 or len(b1) < 2:
            raise SchemaError("each table branch needs at least two points")
        if not (np.array_equal(b0[-1], sp[0]) and np.array_equal(sp[-1], b1[0])):
            raise SchemaError("table branches must join at the fold points")
        pts = np.vstack([b0, sp[1:], b1[1:]])
        i_max = len(b0) - 1
        i_min = i_max + len(sp) - 1
        slope = (b1[-1, 1] - b1[-2, 1]) / (b1[-1, 0] - b1[-2, 0])
        spec = {"type": "table", "branch0": b0.tolist(), "spinodal": sp.tolist(), "branch1": b1.tolist()}
        return cls("table", pts[:, 0], pts[:, 1], slope, i_max, i_min, spec)

    @classmethod
    def balloon(cls):
        """Tabulated balloon-like law shipped with the package (window 0.8-1.1 Pa)."""
        text = resources.files("bistanet").joinpath("data/balloon_law.json").read_text()
        return law_from_dict(json.loads(text))

    # -- fold points -------------------------------------------------------------
    @property
    def v_max(self) -> float:
        return float(self.knots_v[self.i_max])

    @property
    def p_max(self) -> float:
        return float(self.knots_p[self.i_max])

    @property
    def v_min(self) -> float:
        return float(self.knots_v[self.i_min])

    @property
    def p_min(self) -> float:
        return float(self.knots_p[self.i_min])

    @property
    def p_floor(self) -> float:
        """Pressure at zero volume, the lower end of branch 0."""
        return float(self.knots_p[0])

    def branch_range(self, branch) -> tuple:
        b = _norm_branch(branch)
        if b == 0:
            return (self.p_floor, self.p_max)
        if b == 1:
            return (self.p_min, np.inf)
        return (self.p_min, self.p_max)

    # -- evaluation ----------------------------------------------------------------
    def _p(self, v):
        """Pressure without the domain check; linear extension on both ends."""
        v = np.asarray(v, dtype=np.float64)
        kv, kp = self.knots_v, self.knots_p
        p = np.interp(v, kv, kp)
        hi = v > kv[-1]
        if np.any(hi):
            p = np.where(hi, kp[-1] + self.ext_slope * (v - kv[-1]), p)
        lo = v < 0
        if np.any(lo):
            s0 = (kp[1] - kp[0]) / (kv[1] - kv[0])
            p = np.where(lo, kp[0] + s0 * v, p)
        return p

    def pressure(self, v):
        """``f(v)``; raises :class:`LawDomainError` for negative volume."""
        va = np.asarray(v, dtype=np.float64)
        if np.any(va < 0):
            raise LawDomainError("volume must be non-negative")
        p = self._p(va)
        return float(p) if np.ndim(v) == 0 else p

    def inverse_branch(self, p, branch):
        """Volume on ``branch`` (0, 1 or ``'s'``) whose pressure is ``p``."""
        b = _norm_branch(branch)
        pa = np.asarray(p, dtype=np.float64)
        lo, hi = self.branch_range(b)
        tol = 1e-12 * max(1.0, abs(lo), abs(hi) if np.isfinite(hi) else 0.0)
        if np.any(pa < lo - tol) or np.any(pa > hi + tol):
            raise BranchInfeasibleError(f"pressure outside branch {b if b < 2 else 's'} range [{lo}, {hi}]")
        pa = np.clip(pa, lo, hi)
        kv, kp = self.knots_v, self.knots_p
        if b == 0:
            v = np.interp(pa, kp[: self.i_max + 1], kv[: self.i_max + 1])
        elif b == 2:
            seg = slice(self.i_max, self.i_min + 1)
            v = np.interp(pa, kp[seg][::-1], kv[seg][::-1])
        else:
            v = np.interp(pa, kp[self.i_min:], kv[self.i_min:])
            over = pa > kp[-1]
            if np.any(over):
                v = np.where(over, kv[-1] + (pa - kp[-1]) / self.ext_slope, v)
        return float(v) if np.ndim(p) == 0 else v

    def classify(self, v):
        """State per volume: ZERO iff ``v <= v_max``, ONE iff ``v >= v_min``, else SPINODAL."""
        va = np.asarray(v, dtype=np.float64)
        s = np.full(va.shape, int(State.SPINODAL), dtype=np.int64)
        s[va <= self.v_max] = int(State.ZERO)
        s[va >= self.v_min] = int(State.ONE)
        return State(int(s)) if np.ndim(v) == 0 else s

    def binary(self, v):
        """Binary label used by the learning rules: 1 iff ``v >= v_min``."""
        return (np.asarray(v) >= self.v_min).astype(np.int64)

    def stiffness(self, v):
        """``df/dv``; at a fold the stable-branch side is used."""
        va = np.atleast_1d(np.asarray(v, dtype=np.float64))
        kv, kp = self.knots_v, self.knots_p
        slopes = np.diff(kp) / np.diff(kv)
        k = np.empty(va.shape, dtype=np.int64)
        st = self.classify(va)
        z = st == State.ZERO
        k[z] = np.searchsorted(kv, va[z], side="left") - 1
        rest = ~z
        k[rest] = np.searchsorted(kv, va[rest], side="right") - 1
        k = np.clip(k, 0, len(slopes))
        out = np.where(k >= len(slopes), self.ext_slope, slopes[np.minimum(k, len(slopes) - 1)])
        return float(out[0]) if np.ndim(v) == 0 else out

    def is_fold(self, v, tol=1e-12):
        va = np.asarray(v, dtype=np.float64)
        scale = tol * max(1.0, self.v_min)
        return (np.abs(va - self.v_max) <= scale) | (np.abs(va - self.v_min) <= scale)

    def energy(self, v):
        """Elastic energy ``psi(v) = int_0^v f(u) du``."""
        va = np.asarray(v, dtype=np.float64)
        if np.any(va < 0):
            raise LawDomainError("volume must be non-negative")
        kv, kp = self.knots_v, self.knots_p
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (kp[1:] + kp[:-1]) * np.diff(kv))])
        k = np.clip(np.searchsorted(kv, va, side="right") - 1, 0, len(kv) - 1)
        pk = kp[k]
        dv = va - kv[k]
        slope = np.append(np.diff(kp) / np.diff(kv), self.ext_slope)[k]
        e = cum[k] + pk * dv + 0.5 * slope * dv**2
        return float(e) if np.ndim(v) == 0 else e

    # -- serialization -------------------------------------------------------------
    def to_dict(self) -> dict:
        return dict(self.spec)

    def __eq__(self, other):
        if not isinstance(other, BistableLaw):
            return NotImplemented
        return self.spec == other.spec

    __hash__ = None


def law_from_dict(doc: dict) -> BistableLaw:
    if not isinstance(doc, dict) or "type" not in doc:
        raise SchemaError("law block needs a 'type'")
    kind = doc["type"]
    if kind == "trilinear":
        keys = ("v_max", "p_max", "v_min", "p_min", "slope0", "slope1")
        missing = [k for k in keys if k not in doc]
        if missing:
            raise SchemaError(f"trilinear law missing {missing}")
        return BistableLaw.trilinear(**{k: float(doc[k]) for k in keys})
    if kind == "table":
        try:
            return BistableLaw.from_table(doc["branch0"], doc["spinodal"], doc["branch1"])
        except KeyError as exc:
            raise SchemaError(f"table law missing {exc}") from None
    raise SchemaError(f"unknown law type {kind!r}")


DEFAULT_LAW = BistableLaw.trilinear()
