"""ODE integration with exact function-evaluation accounting.

``solve`` integrates a plain-array vector field with fixed-step Euler/RK4 or
adaptive Dormand-Prince 5(4); every call to the field increments the NFE
counter. ``solve_with_grad`` unrolls a fixed-step solve on the autodiff tape
so gradients of the discretized solution are exact (discretize-then-optimize).

NFE identities (tested exactly): Euler with n steps costs n evaluations, RK4
costs 4n, and dopri5 with first-same-as-last stage reuse costs
1 + 6 * (accepted + rejected).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .tensor import Tensor, add, as_tensor, scale

__all__ = ["SolverSpec", "SolveResult", "SolverError", "solve", "solve_with_grad"]


class SolverError(RuntimeError):
    """Integration failure: step underflow or non-finite state."""


@dataclass(frozen=True)
class SolverSpec:
    """One of Euler(n), RK4(n), Dopri5(rtol, atol)."""

    kind: str
    n_steps: int | None = None
    rtol: float | None = None
    atol: float | None = None

    def __post_init__(self):
        if self.kind in ("euler", "rk4"):
            if self.n_steps is None or self.n_steps < 1:
                raise ValueError(f"{self.kind} needs n_steps >= 1, got {self.n_steps}")
        elif self.kind == "dopri5":
            if self.rtol is None or self.atol is None or self.rtol <= 0 or self.atol <= 0:
                raise ValueError("dopri5 needs rtol > 0 and atol > 0")
        else:
            raise ValueError(f"unknown solver kind {self.kind!r}")

    @classmethod
    def euler(cls, n: int) -> "SolverSpec":
        return cls("euler", n_steps=n)

    @classmethod
    def rk4(cls, n: int) -> "SolverSpec":
        return cls("rk4", n_steps=n)

    @classmethod
    def dopri5(cls, rtol: float = 1e-3, atol: float = 1e-3) -> "SolverSpec":
        return cls("dopri5", rtol=rtol, atol=atol)

    @classmethod
    def parse(cls, text: str) -> "SolverSpec":
        """Parse "euler:N", "rk4:N", "dopri5:rtol,atol" (or bare "dopri5")."""
        head, _, rest = text.strip().partition(":")
        try:
            if head in ("euler", "rk4"):
                return cls(head, n_steps=int(rest))
            if head == "dopri5":
                if not rest:
                    return cls.dopri5()
                rtol_s, _, atol_s = rest.partition(",")
                atol_s = atol_s or rtol_s
                return cls.dopri5(float(rtol_s), float(atol_s))
        except ValueError as exc:
            raise ValueError(f"invalid solver spec {text!r}: {exc}") from None
        raise ValueError(f"invalid solver spec {text!r}")

    def label(self) -> str:
        if self.kind == "dopri5":
            return f"dopri5:{self.rtol:g},{self.atol:g}"
        return f"{self.kind}:{self.n_steps}"


@dataclass
class SolveResult:
    z_final: Tensor
    nfe: int
    accepted_steps: int
    rejected_steps: int
    trajectory: list[tuple[float, np.ndarray]] | None = None


# Dormand-Prince 5(4) tableau. B5 is the propagating 5th-order weight row
# (identical to the last stage row: first-same-as-last), ERR = B5 - B4.
_DP_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_DP_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_DP_ERR = (71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40)

_MIN_STEP_FRACTION = 1e-12
_SAFETY = 0.9
_FACTOR_MIN = 0.2
_FACTOR_MAX = 5.0
_ERR_EXPONENT = -0.2  # 1/5 for a 5(4) pair


def _rms(v: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.square(v))))


def _check_state(z: np.ndarray) -> None:
    if np.isnan(z).any():
        raise SolverError("NaN state encountered during integration")


def solve(f: Callable[[np.ndarray, float], np.ndarray], z0, t0: float, t1: float,
          spec: SolverSpec, record_stride: int | None = None) -> SolveResult:
    """Integrate dz/dt = f(z, t) from t0 to t1.

    ``f`` maps (state array, time) to a velocity array of the same shape and
    must be pure. With ``record_stride`` set, every stride-th accepted step
    (plus the endpoints) is snapshotted into the trajectory.
    """
    if not t0 < t1:
        raise ValueError(f"need t0 < t1, got {t0} >= {t1}")
    z = np.ascontiguousarray(z0, dtype=np.float64).copy()
    if spec.kind == "euler":
        return _fixed_step(f, z, t0, t1, spec.n_steps, record_stride, stages=1)
    if spec.kind == "rk4":
        return _fixed_step(f, z, t0, t1, spec.n_steps, record_stride, stages=4)
    return _dopri5(f, z, t0, t1, spec.rtol, spec.atol, record_stride)


def _fixed_step(f, z, t0, t1, n, record_stride, stages):
    h = (t1 - t0) / n
    nfe = 0
    traj = [(t0, z.copy())] if record_stride else None
    for i in range(n):
        t = t0 + i * h
        if stages == 1:
            z = z + h * f(z, t)
            nfe += 1
        else:
            k1 = f(z, t)
            k2 = f(z + 0.5 * h * k1, t + 0.5 * h)
            k3 = f(z + 0.5 * h * k2, t + 0.5 * h)
            k4 = f(z + h * k3, t + h)
            z = z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            nfe += 4
        _check_state(z)
        if traj is not None and ((i + 1) % record_stride == 0 or i + 1 == n):
            traj.append((t0 + (i + 1) * h, z.copy()))
    return SolveResult(Tensor(z), nfe, accepted_steps=n, rejected_steps=0, trajectory=traj)


def _initial_step(z, k1, t0, t1, rtol, atol) -> float:
    # First-derivative heuristic only: a trial-step refinement would cost an
    # extra field evaluation and break the NFE identity.
    span = t1 - t0
    sc = atol + rtol * np.abs(z)
    d0 = _rms(z / sc)
    d1 = _rms(k1 / sc)
    if d0 < 1e-5 or d1 < 1e-5:
        h = 1e-6 * span
    else:
        h = 0.01 * d0 / d1
    return float(min(max(h, 1e-9 * span), span))


def _dopri5(f, z, t0, t1, rtol, atol, record_stride):
    t = t0
    k = [None] * 7
    k[0] = np.asarray(f(z, t), dtype=np.float64)
    nfe = 1
    h = _initial_step(z, k[0], t0, t1, rtol, atol)
    accepted = rejected = 0
    traj = [(t0, z.copy())] if record_stride else None
    span = t1 - t0

    while t < t1:
        remaining = t1 - t
        if remaining < _MIN_STEP_FRACTION * span:
            break  # within roundoff of the endpoint
        h = min(h, remaining)
        if h < _MIN_STEP_FRACTION * span:
            raise SolverError(
                f"stiff or invalid field: step size underflow at t={t:.6g}"
            )
        for s in range(1, 7):
            zs = z + h * sum(a * k[j] for j, a in enumerate(_DP_A[s]) if a != 0.0)
            k[s] = np.asarray(f(zs, t + _DP_C[s] * h), dtype=np.float64)
        nfe += 6
        z_new = z + h * sum(a * k[j] for j, a in enumerate(_DP_A[6]) if a != 0.0)
        err_vec = h * sum(e * k[j] for j, e in enumerate(_DP_ERR) if e != 0.0)
        sc = atol + rtol * np.maximum(np.abs(z), np.abs(z_new))
        err = _rms(err_vec / sc)
        if np.isnan(z_new).any() or np.isnan(err):
            raise SolverError("NaN state encountered during integration")

        if err <= 1.0:
            t_new = t1 if h >= (t1 - t) else t + h
            t, z = t_new, z_new
            k[0] = k[6]  # first-same-as-last reuse
            accepted += 1
            if traj is not None and (accepted % record_stride == 0 or t >= t1):
                traj.append((t, z.copy()))
        else:
            rejected += 1
        factor = _FACTOR_MAX if err == 0.0 else _SAFETY * err ** _ERR_EXPONENT
        h = h * min(max(factor, _FACTOR_MIN), _FACTOR_MAX)

    return SolveResult(Tensor(z), nfe, accepted, rejected, trajectory=traj)


def solve_with_grad(f: Callable[[Tensor, float], Tensor], z0, t0: float, t1: float,
                    n_steps: int, method: str = "euler") -> tuple[Tensor, int]:
    """Fixed-step solve unrolled on the autodiff tape.

    Gradients w.r.t. the field's parameters and z0 are the exact gradients of
    the discretized solution. Adaptive stepping is rejected: backpropagation
    through step-size control is not supported.
    """
    if method not in ("euler", "rk4"):
        raise ValueError(
            f"solve_with_grad supports fixed-step euler/rk4 only, got {method!r}"
        )
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    if not t0 < t1:
        raise ValueError(f"need t0 < t1, got {t0} >= {t1}")
    z = as_tensor(z0)
    h = (t1 - t0) / n_steps
    nfe = 0
    for i in range(n_steps):
        t = t0 + i * h
        if method == "euler":
            z = add(z, scale(f(z, t), h))
            nfe += 1
        else:
            k1 = f(z, t)
            k2 = f(add(z, scale(k1, 0.5 * h)), t + 0.5 * h)
            k3 = f(add(z, scale(k2, 0.5 * h)), t + 0.5 * h)
            k4 = f(add(z, scale(k3, h)), t + h)
            incr = add(add(k1, scale(add(k2, k3), 2.0)), k4)
            z = add(z, scale(incr, h / 6.0))
            nfe += 4
    return z, nfe
