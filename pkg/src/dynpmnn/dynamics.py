"""ODE vector fields, the explicit Euler block, and an RK4 reference solver.

States are vectors ``(d,)`` or row batches ``(B, d)``; every field acts on the
last axis. Fields are written with plain arithmetic so they run on numpy
arrays and on :class:`~dynpmnn.tape.TapeNode` values alike.

For FitzHugh-Nagumo layers of ``K`` units the state is laid out as
``[v_1..v_K, w_1..w_K]``.
"""

import csv
import math
from abc import ABC, abstractmethod
from dataclasses import asdict, dataclass
from numbers import Real

import numpy as np

from . import tape as T
from .exceptions import GridError, NonFiniteStateError, ShapeError

__all__ = [
    "ConstantField",
    "FhnParams",
    "FitzHughNagumo",
    "IntegrationGrid",
    "LinearField",
    "Trajectory",
    "VectorField",
    "ZeroField",
    "euler_block",
    "euler_step",
    "fhn_field",
    "integrate",
    "nullclines",
    "reference_solve",
    "write_trajectory_csv",
]


@dataclass(frozen=True)
class FhnParams:
    """FitzHugh-Nagumo coefficients (dimensionless).

    The defaults put a single unit in the excitable regime: rest at the
    origin, a spike for ``v0 > a``. Entries may be scalar tape nodes when the
    coefficients themselves are differentiated; bounds are only checked for
    real numbers.
    """

    a: float = 0.25
    b: float = 0.002
    g: float = 2.5
    I: float = 0.0  # noqa: E741

    def __post_init__(self):
        checks = {
            "a": lambda x: 0.0 < x < 1.0,
            "b": lambda x: x > 0.0,
            "g": lambda x: x >= 0.0,
            "I": lambda x: x >= 0.0,
        }
        for name, ok in checks.items():
            val = getattr(self, name)
            if isinstance(val, Real) and not ok(val):
                raise ValueError(f"FitzHugh-Nagumo parameter {name}={val!r} out of range")

    def to_dict(self):
        return {k: float(v) for k, v in asdict(self).items()}


def fhn_field(v, w, params):
    """FitzHugh-Nagumo right-hand side for ``K`` independent units."""
    if T.value_of(v).shape != T.value_of(w).shape:
        raise ShapeError(
            f"v {T.value_of(v).shape} and w {T.value_of(w).shape} must match"
        )
    dv = params.I - v * (v - params.a) * (v - 1.0) - w
    dw = params.b * (v - params.g * w)
    return dv, dw


class VectorField(ABC):
    """Right-hand side ``g(x, t)`` of ``dx/dt = g(x, t)``; must be pure."""

    state_dim: int

    @abstractmethod
    def __call__(self, state, t=0.0):
        ...


class FitzHughNagumo(VectorField):
    def __init__(self, params=None, units=1):
        self.params = params if params is not None else FhnParams()
        self.units = units
        self.state_dim = 2 * units

    def __call__(self, state, t=0.0):
        K = self.units
        if T.value_of(state).shape[-1] != 2 * K:
            raise ShapeError(f"expected state width {2 * K}, got {T.value_of(state).shape}")
        dv, dw = fhn_field(state[..., :K], state[..., K:], self.params)
        return T.concat([dv, dw], axis=-1)


class LinearField(VectorField):
    """``dx/dt = rate * x`` with a scalar rate, or ``A @ x`` for a matrix."""

    def __init__(self, rate, state_dim=1):
        self.rate = rate
        self.state_dim = state_dim

    def __call__(self, state, t=0.0):
        if np.ndim(self.rate) == 2:
            A = np.asarray(self.rate, dtype=np.float64)
            return T.affine(A, np.zeros(A.shape[0]), state)
        return self.rate * state


class ConstantField(VectorField):
    def __init__(self, derivative):
        self.derivative = np.asarray(derivative, dtype=np.float64)
        self.state_dim = self.derivative.shape[-1]

    def __call__(self, state, t=0.0):
        return np.broadcast_to(self.derivative, T.value_of(state).shape).copy()


class ZeroField(VectorField):
    def __init__(self, state_dim=1):
        self.state_dim = state_dim

    def __call__(self, state, t=0.0):
        return np.zeros(T.value_of(state).shape)


@dataclass(frozen=True)
class IntegrationGrid:
    """Uniform time grid; the step count must come out integral."""

    t_end: float
    dt: float
    t_start: float = 0.0

    def __post_init__(self):
        if self.t_start < 0:
            raise GridError(f"t_start must be >= 0, got {self.t_start}")
        if not self.dt > 0:
            raise GridError(f"dt must be positive, got {self.dt}")
        if not self.t_end > self.t_start:
            raise GridError(f"t_end ({self.t_end}) must exceed t_start ({self.t_start})")
        span = self.t_end - self.t_start
        steps = round(span / self.dt)
        if steps < 1 or abs(steps * self.dt - span) > 1e-9 * max(1.0, span):
            raise GridError(
                f"(t_end - t_start) / dt = {span / self.dt:g} is not a positive integer"
            )

    @property
    def steps(self):
        return round((self.t_end - self.t_start) / self.dt)

    def times(self):
        return self.t_start + self.dt * np.arange(self.steps + 1)

    def to_dict(self):
        return {"t_start": float(self.t_start), "t_end": float(self.t_end), "dt": float(self.dt)}


def euler_step(state, field, dt, t=0.0):
    """One explicit Euler update; the bare ``state`` term is the residual path."""
    if dt < 0:
        raise ValueError(f"dt must be non-negative, got {dt}")
    return state + dt * field(state, t)


def _check_finite(state, step):
    if not np.all(np.isfinite(T.value_of(state))):
        raise NonFiniteStateError(step)


def euler_block(state0, field, grid):
    """Final state after ``grid.steps`` Euler updates (the hidden-layer output)."""
    state = state0
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(grid.steps):
            state = euler_step(state, field, grid.dt, grid.t_start + k * grid.dt)
            _check_finite(state, k + 1)
    return state


@dataclass
class Trajectory:
    times: np.ndarray
    states: list

    @property
    def final(self):
        return self.states[-1]

    def as_array(self):
        return np.stack([np.asarray(T.value_of(s)) for s in self.states])


def integrate(state0, field, grid):
    """Euler trajectory with all ``grid.steps + 1`` states retained."""
    states = [state0]
    state = state0
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(grid.steps):
            state = euler_step(state, field, grid.dt, grid.t_start + k * grid.dt)
            _check_finite(state, k + 1)
            states.append(state)
    return Trajectory(grid.times(), states)


def reference_solve(state0, field, t_end, oracle_dt, t_start=0.0, return_trajectory=False):
    """Classical fixed-step RK4 on plain arrays; a test oracle for the Euler path.

    The last step is shortened implicitly by spreading the span over
    ``ceil(span / oracle_dt)`` equal steps.
    """
    n = max(1, math.ceil((t_end - t_start) / oracle_dt - 1e-9))
    h = (t_end - t_start) / n
    x = np.array(state0, dtype=np.float64)
    out = [x.copy()] if return_trajectory else None
    t = t_start
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n):
            k1 = np.asarray(field(x, t))
            k2 = np.asarray(field(x + 0.5 * h * k1, t + 0.5 * h))
            k3 = np.asarray(field(x + 0.5 * h * k2, t + 0.5 * h))
            k4 = np.asarray(field(x + h * k3, t + h))
            x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            t = t_start + (k + 1) * h
            if not np.all(np.isfinite(x)):
                raise NonFiniteStateError(k + 1)
            if out is not None:
                out.append(x)
    if return_trajectory:
        return Trajectory(t_start + h * np.arange(n + 1), out)
    return x


def nullclines(params, v):
    """Sample the v-nullcline and (when ``g > 0``) the w-nullcline at ``v``."""
    v = np.asarray(v, dtype=np.float64)
    w_v = params.I - v * (v - params.a) * (v - 1.0)
    w_w = v / params.g if params.g > 0 else None
    return w_v, w_w


def write_trajectory_csv(path, trajectory, units=None):
    """Write ``t,v_1..v_K,w_1..w_K`` rows (single trajectory, vector states)."""
    states = trajectory.as_array()
    if states.ndim != 2:
        raise ShapeError("trajectory CSV export expects vector states")
    K = units or states.shape[1] // 2
    header = ["t"] + [f"v_{i + 1}" for i in range(K)] + [f"w_{i + 1}" for i in range(K)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for t, row in zip(trajectory.times, states):
            writer.writerow([repr(float(t))] + [repr(float(x)) for x in row])
