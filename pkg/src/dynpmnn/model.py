"""Forward passes: the FitzHugh-Nagumo PMNN, stacked dynamical layers, and baselines.

Every model is described by a config dataclass exposing ``layout()``, an
ordered list of ``(name, shape, init)`` parameter blocks. Parameters live in
one flat float64 vector (:class:`ModelParams`) in that order, weight matrices
row-major, which is also the checkpoint order.

Forward functions take ``params`` as a mapping from block name to either
numpy arrays (plain evaluation) or tape nodes (differentiation).
"""

from dataclasses import asdict, dataclass, field, fields
from typing import Callable, ClassVar, Optional

import numpy as np

from . import tape as T
from .dynamics import (
    FhnParams,
    FitzHughNagumo,
    IntegrationGrid,
    VectorField,
    euler_block,
    integrate,
)
from .exceptions import NonMonotonicTimesError, ShapeError

__all__ = [
    "LayerSpec",
    "MLPConfig",
    "MODEL_KINDS",
    "ModelParams",
    "NODEConfig",
    "NeuralField",
    "PMNNConfig",
    "compose_layers",
    "config_from_dict",
    "forward",
    "init_params",
    "mlp_baseline_forward",
    "node_baseline_forward",
    "param_count",
    "pmnn_forward",
    "pmnn_layers",
]


def _coerce(cfg):
    """Normalise numeric field types so configs serialise identically."""
    for f in fields(cfg):
        val = getattr(cfg, f.name)
        if f.type in ("float", float) and isinstance(val, (int, float)) and not isinstance(val, bool):
            object.__setattr__(cfg, f.name, float(val))
        elif f.type in ("int", int) and isinstance(val, float) and val.is_integer():
            object.__setattr__(cfg, f.name, int(val))


def _positive(cfg, *names):
    for name in names:
        if getattr(cfg, name) < 1:
            raise ValueError(f"{name} must be >= 1, got {getattr(cfg, name)}")


@dataclass
class PMNNConfig:
    """Single dynamical hidden layer of ``fhn_units`` FitzHugh-Nagumo units."""

    kind: ClassVar[str] = "pmnn"

    input_dim: int = 8
    fhn_units: int = 1
    dt: float = 20.0
    t_end: float = 500.0
    t_start: float = 0.0
    use_layer_norm: bool = True
    use_pre_activation: bool = True
    output_dim: int = 1
    fhn: FhnParams = field(default_factory=FhnParams)
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.fhn, dict):
            self.fhn = FhnParams(**self.fhn)
        _coerce(self)
        _positive(self, "input_dim", "fhn_units", "output_dim")
        self.grid  # validates dt / t_end

    @property
    def hidden_dim(self):
        return 2 * self.fhn_units

    @property
    def grid(self):
        return IntegrationGrid(self.t_end, self.dt, self.t_start)

    def layout(self):
        n, d, o = self.input_dim, self.hidden_dim, self.output_dim
        blocks = [("W_h", (d, n), "uniform"), ("b_h", (d,), "zeros")]
        if self.use_layer_norm:
            blocks += [("ln_gain", (d,), "ones"), ("ln_bias", (d,), "zeros")]
        blocks += [("W_out", (o, d), "uniform"), ("b_out", (o,), "zeros")]
        return blocks

    def to_dict(self):
        out = asdict(self)
        out["fhn"] = self.fhn.to_dict()
        out["kind"] = self.kind
        return out


@dataclass
class NODEConfig:
    """Discretised neural ODE: affine lift, learned tanh field, affine readout.

    The field sees the time as an extra input column on each of its layers.
    """

    kind: ClassVar[str] = "node"

    input_dim: int = 8
    hidden_dim: int = 15
    num_layers: int = 2
    dt: float = 0.1
    t_end: float = 1.0
    t_start: float = 0.0
    output_dim: int = 1
    seed: int = 0

    def __post_init__(self):
        _coerce(self)
        _positive(self, "input_dim", "hidden_dim", "num_layers", "output_dim")
        self.grid

    @property
    def grid(self):
        return IntegrationGrid(self.t_end, self.dt, self.t_start)

    def layout(self):
        n, h, o = self.input_dim, self.hidden_dim, self.output_dim
        blocks = [("W_in", (h, n), "uniform"), ("b_in", (h,), "zeros")]
        for i in range(self.num_layers):
            blocks += [(f"field_W{i}", (h, h + 1), "uniform"), (f"field_b{i}", (h,), "zeros")]
        blocks += [("W_out", (o, h), "uniform"), ("b_out", (o,), "zeros")]
        return blocks

    def to_dict(self):
        return {**asdict(self), "kind": self.kind}


@dataclass
class MLPConfig:
    """Static one-hidden-layer network (SiLU), optionally LayerNorm-ed.

    With ``hidden_dim=2`` and LayerNorm it has the same 25-parameter budget as
    the default PMNN on eight features.
    """

    kind: ClassVar[str] = "mlp"

    input_dim: int = 8
    hidden_dim: int = 2
    use_layer_norm: bool = True
    output_dim: int = 1
    seed: int = 0

    def __post_init__(self):
        _coerce(self)
        _positive(self, "input_dim", "hidden_dim", "output_dim")

    def layout(self):
        n, h, o = self.input_dim, self.hidden_dim, self.output_dim
        blocks = [("W_h", (h, n), "uniform"), ("b_h", (h,), "zeros")]
        if self.use_layer_norm:
            blocks += [("ln_gain", (h,), "ones"), ("ln_bias", (h,), "zeros")]
        blocks += [("W_out", (o, h), "uniform"), ("b_out", (o,), "zeros")]
        return blocks

    def to_dict(self):
        return {**asdict(self), "kind": self.kind}


MODEL_KINDS = {"pmnn": PMNNConfig, "node": NODEConfig, "mlp": MLPConfig}


def config_from_dict(data):
    data = dict(data)
    kind = data.pop("kind", "pmnn")
    try:
        cls = MODEL_KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown model kind {kind!r}; expected one of {sorted(MODEL_KINDS)}") from None
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown {kind} config keys: {sorted(unknown)}")
    return cls(**data)


@dataclass
class ModelParams:
    """Flat trainable vector plus the block layout that names its slices."""

    layout: list
    flat: np.ndarray

    def __post_init__(self):
        self.flat = np.asarray(self.flat, dtype=np.float64)
        if self.flat.shape != (self.size,):
            raise ShapeError(f"expected {self.size} parameters, got {self.flat.shape}")

    @property
    def size(self):
        return sum(int(np.prod(shape)) for _, shape, _ in self.layout)

    def views(self):
        out, offset = {}, 0
        for name, shape, _ in self.layout:
            k = int(np.prod(shape))
            out[name] = self.flat[offset:offset + k].reshape(shape)
            offset += k
        return out

    def __getitem__(self, name):
        return self.views()[name]

    @classmethod
    def from_blocks(cls, layout, blocks):
        return cls(layout, np.concatenate([np.ravel(blocks[name]) for name, _, _ in layout]))

    def copy(self):
        return ModelParams(self.layout, self.flat.copy())


def param_count(config):
    return sum(int(np.prod(shape)) for _, shape, _ in config.layout())


def init_params(config):
    """Seeded init: weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases 0, gains 1."""
    rng = np.random.default_rng(config.seed)
    blocks = {}
    for name, shape, how in config.layout():
        if how == "uniform":
            s = 1.0 / np.sqrt(shape[1])
            blocks[name] = rng.uniform(-s, s, size=shape)
        elif how == "ones":
            blocks[name] = np.ones(shape)
        else:
            blocks[name] = np.zeros(shape)
    return ModelParams.from_blocks(config.layout(), blocks)


def unflatten_node(node, layout):
    """Slice a flat parameter node into named blocks (for gradient checks)."""
    out, offset = {}, 0
    for name, shape, _ in layout:
        k = int(np.prod(shape))
        out[name] = node[offset:offset + k].reshape(shape)
        offset += k
    return out


# ---------------------------------------------------------------- PMNN


def _pre_dynamics(params, z, use_layer_norm, use_pre_activation):
    if use_layer_norm:
        z = T.layer_norm(z, params["ln_gain"], params["ln_bias"])
    if use_pre_activation:
        z = T.silu(z)
    return z


def pmnn_forward(params, x, config, field=None, return_trajectory=False):
    """``W_out . EulerBlock(phi(W_h x + b_h)) + b_out`` with phi = LayerNorm -> SiLU.

    ``field`` overrides the FitzHugh-Nagumo dynamics (e.g. a zero field);
    with ``return_trajectory`` the full hidden trajectory is returned too.
    """
    field = field if field is not None else FitzHughNagumo(config.fhn, config.fhn_units)
    h0 = T.affine(params["W_h"], params["b_h"], x)
    h0 = _pre_dynamics(params, h0, config.use_layer_norm, config.use_pre_activation)
    if return_trajectory:
        traj = integrate(h0, field, config.grid)
        hidden = traj.final
    else:
        hidden = euler_block(h0, field, config.grid)
    y = T.affine(params["W_out"], params["b_out"], hidden)
    return (y, traj) if return_trajectory else y


@dataclass
class LayerSpec:
    """One dynamical layer: affine entry map, optional pre-map, flow until ``t_exit``."""

    weight: object
    bias: object
    field: VectorField
    t_exit: float
    dt: float
    pre: Optional[Callable] = None


def compose_layers(x, layers, readout=None, t_start=0.0):
    """Stack dynamical layers; layer k+1 flows on ``[t_k, t_{k+1}]``.

    ``readout`` is an optional ``(W_out, b_out)`` applied to the last state.
    """
    if not layers:
        raise ValueError("need at least one layer")
    prev = t_start
    for spec in layers:
        if not spec.t_exit > prev:
            raise NonMonotonicTimesError(
                f"exit times must be strictly increasing, got {spec.t_exit} after {prev}"
            )
        prev = spec.t_exit

    state, prev = x, t_start
    for spec in layers:
        z = T.affine(spec.weight, spec.bias, state)
        if spec.pre is not None:
            z = spec.pre(z)
        state = euler_block(z, spec.field, IntegrationGrid(spec.t_exit, spec.dt, prev))
        prev = spec.t_exit
    if readout is not None:
        state = T.affine(readout[0], readout[1], state)
    return state


def pmnn_layers(params, config):
    """Express a PMNN as a one-layer stack: ``(layers, readout)`` for :func:`compose_layers`."""
    pre = lambda z: _pre_dynamics(params, z, config.use_layer_norm, config.use_pre_activation)
    spec = LayerSpec(
        params["W_h"], params["b_h"], FitzHughNagumo(config.fhn, config.fhn_units),
        config.t_end, config.dt, pre,
    )
    return [spec], (params["W_out"], params["b_out"])


# ---------------------------------------------------------------- baselines


class NeuralField(VectorField):
    """``f(h, t) = L_last([... tanh(L_0([h, t])) ..., t])`` with affine ``L_i``."""

    def __init__(self, weights, biases):
        self.weights = list(weights)
        self.biases = list(biases)
        self.state_dim = T.value_of(self.weights[-1]).shape[0]

    def __call__(self, state, t=0.0):
        shape = T.value_of(state).shape
        t_col = np.full(shape[:-1] + (1,), float(t))
        z = state
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = T.affine(W, b, T.concat([z, t_col], axis=-1))
            if i < last:
                z = T.tanh(z)
        return z


def node_baseline_forward(params, x, config):
    """Lift, evolve with the learned field by explicit Euler, project."""
    L = config.num_layers
    field = NeuralField(
        [params[f"field_W{i}"] for i in range(L)],
        [params[f"field_b{i}"] for i in range(L)],
    )
    h0 = T.affine(params["W_in"], params["b_in"], x)
    hidden = euler_block(h0, field, config.grid)
    return T.affine(params["W_out"], params["b_out"], hidden)


def mlp_baseline_forward(params, x, config):
    z = T.affine(params["W_h"], params["b_h"], x)
    z = _pre_dynamics(params, z, config.use_layer_norm, True)
    return T.affine(params["W_out"], params["b_out"], z)


_FORWARDS = {
    "pmnn": pmnn_forward,
    "node": node_baseline_forward,
    "mlp": mlp_baseline_forward,
}


def forward(params, x, config):
    """Dispatch on ``config.kind``; ``params`` may be ModelParams or a block mapping."""
    if isinstance(params, ModelParams):
        params = params.views()
    return _FORWARDS[config.kind](params, x, config)
