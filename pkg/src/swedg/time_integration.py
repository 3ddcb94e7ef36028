"""Explicit SSPRK(3,3) stepping with CFL or fixed step sizes."""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .physics import velocity


class StageFailure(FloatingPointError):
    def __init__(self, step, stage, msg="non-finite values"):
        self.step = step
        self.stage = stage
        super().__init__(f"{msg} in step {step}, stage {stage}")


@dataclass(frozen=True)
class TimeControls:
    t_end: float
    dt: Optional[float] = None
    cfl: Optional[float] = None
    max_steps: int = 10**9

    def __post_init__(self):
        if self.t_end < 0:
            raise ValueError("t_end must be non-negative")
        if (self.dt is None) == (self.cfl is None):
            raise ValueError("give exactly one of dt (fixed mode) or cfl")
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.cfl is not None and not self.cfl > 0:
            raise ValueError("CFL number must be positive")

    @property
    def mode(self):
        return "fixed-dt" if self.dt is not None else "cfl"


def ssprk33_step(rhs, u, t, dt, step=0, stage_filter=None):
    """One Shu-Osher SSPRK(3,3) step; ``rhs(u, t, dt)`` receives the step size for stage limiting.

    ``stage_filter(u)``, if given, is applied to every stage value.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")

    def finish(v, stage):
        if not np.all(np.isfinite(v)):
            raise StageFailure(step, stage)
        return v if stage_filter is None else stage_filter(v)

    k = rhs(u, t, dt)
    u1 = finish(u + dt * k, 1)
    k = rhs(u1, t + dt, dt)
    # u + c (v - u) equals (1 - c) u + c v and returns u bitwise when L = 0
    u2 = finish(u + 0.25 * ((u1 + dt * k) - u), 2)
    k = rhs(u2, t + 0.5 * dt, dt)
    return finish(u + 2.0 / 3.0 * ((u2 + dt * k) - u), 3)


def compute_dt(u, mesh, params, cfl):
    """CFL time step on the subcell grid.

    ``dt = CFL * min J w_i w_j / (lam1 |Ja1| w_j + lam2 |Ja2| w_i)`` with nodal
    speeds ``lam_k = |v . n_k| + sqrt(g h)`` along the unit contravariant
    directions.  Depths are floored at ``h_partial_dry`` so dry regions still
    give a finite step.
    """
    if not cfl > 0:
        raise ValueError("CFL number must be positive")
    w = mesh.ops.weights
    h = u[..., 0]
    v1 = velocity(h, u[..., 1], params)
    v2 = velocity(h, u[..., 2], params)
    c = np.sqrt(params.g * np.maximum(h, params.h_partial_dry))
    wi = w[None, :, None]
    wj = w[None, None, :]
    n1 = np.linalg.norm(mesh.ja1, axis=-1)
    lam1 = np.abs(v1 * mesh.ja1[..., 0] + v2 * mesh.ja1[..., 1]) / n1 + c
    denom = lam1 * n1 * wj
    if mesh.dim == 2:
        n2 = np.linalg.norm(mesh.ja2, axis=-1)
        lam2 = np.abs(v1 * mesh.ja2[..., 0] + v2 * mesh.ja2[..., 1]) / n2 + c
        denom = denom + lam2 * n2 * wi
    return float(cfl * np.min(mesh.jac * wi * wj / denom))


@dataclass
class RunResult:
    u: np.ndarray
    t: float
    steps: int


def integrate(rhs, u0, controls, dt_fn=None, callback: Optional[Callable] = None, t0=0.0, stage_filter=None):
    """Advance ``u0`` to ``controls.t_end``; the last step is shortened to land on it.

    ``dt_fn(u)`` supplies CFL steps; ``callback(step, t, u)`` runs after each step
    and may return True to stop early.  ``stage_filter`` is passed to every step.
    """
    u = np.array(u0, dtype=float, copy=True)
    t = float(t0)
    step = 0
    if controls.mode == "cfl" and dt_fn is None:
        raise ValueError("CFL mode needs dt_fn")
    while t < controls.t_end and step < controls.max_steps:
        dt = controls.dt if controls.mode == "fixed-dt" else dt_fn(u)
        if not dt > 0 or not np.isfinite(dt):
            raise StageFailure(step + 1, 0, f"invalid time step {dt}")
        # avoid a tiny trailing step caused by roundoff in t
        if t + dt >= controls.t_end - 1e-12 * max(1.0, abs(controls.t_end)):
            dt = controls.t_end - t
        u = ssprk33_step(rhs, u, t, dt, step + 1, stage_filter)
        step += 1
        t = controls.t_end if t + dt >= controls.t_end else t + dt
        if callback is not None and callback(step, t, u):
            break
    return RunResult(u, t, step)
