"""Adam, mini-batch training with early stopping, evaluation, and grid search."""

import csv
import itertools
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import tape as T
from .checkpoint import Checkpoint, dumps
from .exceptions import DimMismatchError, ShapeError, EmptySpaceError, GridError, NonFiniteStateError
from .model import ModelParams, forward, init_params, param_count

log = logging.getLogger(__name__)


# ---------------------------------------------------------------- optimiser


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: np.ndarray = None
    v: np.ndarray = None
    t: int = 0


def adam_step(params, grads, state):
    """One bias-corrected Adam update on flat arrays; returns ``(params, state)``."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape:
        raise ShapeError(f"params {params.shape} vs grads {grads.shape}")
    if state.m is None:
        state.m = np.zeros_like(params)
        state.v = np.zeros_like(params)
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = state.m / (1.0 - state.beta1 ** state.t)
    v_hat = state.v / (1.0 - state.beta2 ** state.t)
    return params - state.lr * (m_hat / (np.sqrt(v_hat) + state.eps)), state


class EarlyStopping:
    """Stop after ``patience`` consecutive epochs without a ``min_delta`` improvement.

    An epoch improves when ``loss < reference - min_delta``; the reference is
    reset to that loss and the counter to zero.
    """

    def __init__(self, patience=10, min_delta=5e-2):
        self.patience = patience
        self.min_delta = min_delta
        self.reference = math.inf
        self.wait = 0

    def update(self, loss):
        if loss < self.reference - self.min_delta:
            self.reference = loss
            self.wait = 0
        else:
            self.wait += 1
        return self.wait >= self.patience


# ---------------------------------------------------------------- configs / records


@dataclass
class TrainConfig:
    max_epochs: int = 100
    patience: int = 10
    min_delta: float = 5e-2
    batch_size: int = 32
    lr: float = 5e-4
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        self.min_delta = float(self.min_delta)
        self.lr = float(self.lr)
        if self.max_epochs < 0 or self.patience < 1 or self.batch_size < 1:
            raise ValueError("need max_epochs >= 0, patience >= 1, batch_size >= 1")
        if self.min_delta < 0 or not self.lr >= 0:
            raise ValueError("need min_delta >= 0 and lr >= 0")

    def to_dict(self):
        return asdict(self)


@dataclass
class FitResult:
    params: ModelParams
    train_losses: list
    val_losses: list
    best_epoch: int
    stopped_epoch: int
    diverged: bool = False
    diverged_reason: str = ""

    @property
    def best_val_mse(self):
        finite = [v for v in self.val_losses if math.isfinite(v)]
        return min(finite) if finite else math.inf


@dataclass
class RunRecord:
    kind: str
    seed: int
    config: dict
    train_config: dict
    param_count: int
    train_losses: list = field(default_factory=list)
    val_losses: list = field(default_factory=list)
    best_epoch: int = 0
    stopped_epoch: int = 0
    best_val_mse: float = math.inf
    test_mse: float = math.inf
    test_rmse: float = math.inf
    test_rmse_raw: float = math.inf
    diverged: bool = False
    diverged_reason: str = ""
    wall_seconds: float = 0.0

    @property
    def epochs_run(self):
        return len(self.train_losses)

    def to_dict(self):
        return {**asdict(self), "epochs_run": self.epochs_run}

    def to_json(self):
        return dumps(self.to_dict())


def loss_curve_csv(record, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_loss"])
        for epoch, (tr, va) in enumerate(zip(record.train_losses, record.val_losses), start=1):
            writer.writerow([epoch, repr(float(tr)), repr(float(va))])


# ---------------------------------------------------------------- core loop


def loss_and_grad(config, params, X, Y):
    """Batch MSE and its gradient w.r.t. the flat parameter vector."""
    tape = T.Tape()
    nodes = {name: tape.parameter(view, name=name) for name, view in params.views().items()}
    loss = T.mse_loss(forward(nodes, X, config), Y)
    grads = T.backward(loss)
    return float(loss.value), np.concatenate([grads[name].ravel() for name, _, _ in params.layout])


def predict(config, params, X):
    """Plain numpy forward over a batch; returns ``(B, output_dim)``."""
    with np.errstate(over="ignore", invalid="ignore"):
        return np.asarray(forward(params, np.asarray(X, dtype=np.float64), config))


def _mse(config, params, X, Y):
    resid = predict(config, params, X) - Y
    return float(np.mean(resid * resid))


def _as_2d(y):
    y = np.asarray(y, dtype=np.float64)
    return y.reshape(len(y), -1)


def fit_params(config, X, y, X_val=None, y_val=None, train_config=None, params=None):
    """Mini-batch Adam with early stopping; returns the best-validation weights.

    Without a validation set the training loss is monitored. A non-finite
    loss or state ends the run as diverged, with ``inf`` appended to the
    loss curves.
    """
    tc = train_config or TrainConfig()
    X = np.asarray(X, dtype=np.float64)
    Y = _as_2d(y)
    if X.shape[1] != config.input_dim or Y.shape[1] != config.output_dim:
        raise DimMismatchError(
            f"data ({X.shape[1]} -> {Y.shape[1]}) vs model ({config.input_dim} -> {config.output_dim})"
        )
    if X_val is not None:
        X_val, Y_val = np.asarray(X_val, dtype=np.float64), _as_2d(y_val)
    params = (params or init_params(config)).copy()
    result = FitResult(params.copy(), [], [], 0, 0)
    if tc.max_epochs == 0:
        return result

    rng = np.random.default_rng(tc.seed)
    adam = AdamState(tc.lr)
    stopper = EarlyStopping(tc.patience, tc.min_delta)
    best_val = math.inf
    n = len(X)
    for epoch in range(1, tc.max_epochs + 1):
        order = rng.permutation(n) if tc.shuffle else np.arange(n)
        total = 0.0
        try:
            for start in range(0, n, tc.batch_size):
                idx = order[start:start + tc.batch_size]
                loss, grad = loss_and_grad(config, params, X[idx], Y[idx])
                if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
                    raise NonFiniteStateError(-1, "non-finite training loss")
                total += loss * len(idx)
                params.flat, adam = adam_step(params.flat, grad, adam)
            train_loss = total / n
            val_loss = _mse(config, params, X_val, Y_val) if X_val is not None else train_loss
            if not math.isfinite(val_loss):
                raise NonFiniteStateError(-1, "non-finite validation loss")
        except NonFiniteStateError as exc:
            log.info("epoch %d diverged: %s", epoch, exc)
            result.train_losses.append(math.inf)
            result.val_losses.append(math.inf)
            result.diverged = True
            result.diverged_reason = f"epoch {epoch}: {exc}"
            result.stopped_epoch = epoch
            break
        result.train_losses.append(train_loss)
        result.val_losses.append(val_loss)
        log.debug("epoch %d train %.6f val %.6f", epoch, train_loss, val_loss)
        if val_loss < best_val:
            best_val = val_loss
            result.best_epoch = epoch
            result.params = params.copy()
        result.stopped_epoch = epoch
        if stopper.update(val_loss):
            break
    return result


def evaluate(checkpoint, X, y):
    """MSE/RMSE of a checkpoint on already standardised data."""
    config = checkpoint.config if isinstance(checkpoint, Checkpoint) else checkpoint[0]
    params = checkpoint.params if isinstance(checkpoint, Checkpoint) else checkpoint[1]
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != config.input_dim:
        raise DimMismatchError(f"model expects {config.input_dim} features, data has {X.shape[-1]}")
    try:
        mse = _mse(config, params, X, _as_2d(y))
    except NonFiniteStateError:
        mse = math.inf
    return {"mse": mse, "rmse": math.sqrt(mse)}


def train(config, dataset, train_config=None):
    """Fit on ``dataset``'s train split, select on val, score on test.

    Returns ``(RunRecord, Checkpoint)``; the checkpoint carries the
    best-validation weights and the fitted scalers.
    """
    tc = train_config or TrainConfig()
    if dataset.n_features != config.input_dim:
        raise DimMismatchError(f"model expects {config.input_dim} features, dataset has {dataset.n_features}")
    started = time.perf_counter()
    X_tr, y_tr = dataset.part("train")
    X_va, y_va = dataset.part("val")
    fit = fit_params(config, X_tr, y_tr, X_va, y_va, tc)
    checkpoint = Checkpoint(
        config, fit.params, dataset.x_scaler, dataset.y_scaler,
        {"seed": int(dataset.indices.seed), "fractions": [float(f) for f in dataset.fractions]},
    )
    X_te, y_te = dataset.part("test")
    metrics = evaluate(checkpoint, X_te, y_te)
    record = RunRecord(
        kind=config.kind,
        seed=config.seed,
        config=config.to_dict(),
        train_config=tc.to_dict(),
        param_count=param_count(config),
        train_losses=fit.train_losses,
        val_losses=fit.val_losses,
        best_epoch=fit.best_epoch,
        stopped_epoch=fit.stopped_epoch,
        best_val_mse=fit.best_val_mse,
        test_mse=metrics["mse"],
        test_rmse=metrics["rmse"],
        test_rmse_raw=metrics["rmse"] * float(dataset.y_scaler.scale_[0]),
        diverged=fit.diverged,
        diverged_reason=fit.diverged_reason,
        wall_seconds=time.perf_counter() - started,
    )
    return record, checkpoint


# ---------------------------------------------------------------- grid search


def apply_overrides(config, train_config, overrides):
    """Apply ``{"model.dt": 20, "train.lr": 1e-3, "model.fhn.a": 0.3}``-style keys."""
    model_changes, train_changes, fhn_changes = {}, {}, {}
    for key, value in overrides.items():
        section, _, name = key.partition(".")
        if section == "model" and name.startswith("fhn."):
            fhn_changes[name[4:]] = value
        elif section == "model":
            model_changes[name] = value
        elif section == "train":
            train_changes[name] = value
        else:
            raise ValueError(f"override key {key!r} must start with 'model.' or 'train.'")
    if fhn_changes:
        model_changes["fhn"] = replace(config.fhn, **fhn_changes)
    return replace(config, **model_changes), replace(train_config, **train_changes)


@dataclass
class GridSearchResult:
    rows: list
    ranked: list
    skipped: list
    records: dict

    @property
    def best(self):
        return self.ranked[0] if self.ranked else None

    def write_csv(self, path):
        if not self.rows:
            return
        keys = list(self.rows[0])
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=keys)
            writer.writeheader()
            for row in self.rows:
                writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def grid_cells(space):
    if not space or any(len(v) == 0 for v in space.values()):
        raise EmptySpaceError("grid search space is empty")
    keys = list(space)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(space[k] for k in keys))]


def _run_cell(args):
    index, cell, config, tc, dataset = args
    started = time.perf_counter()
    row = {"cell": index, **cell}
    try:
        record, _ = train(config, dataset, tc)
    except Exception as exc:  # a failed cell is recorded, never fatal
        log.warning("cell %d failed: %s", index, exc)
        row.update(best_val_mse=math.inf, test_rmse=math.inf, epochs_run=0,
                   diverged=False, status=f"failed: {type(exc).__name__}",
                   seconds=time.perf_counter() - started)
        return row, None
    row.update(
        best_val_mse=record.best_val_mse,
        test_rmse=record.test_rmse,
        epochs_run=record.epochs_run,
        diverged=record.diverged,
        status="diverged" if record.diverged else "ok",
        seconds=record.wall_seconds,
    )
    return row, record


def grid_search(space, dataset, config, train_config=None, workers=1):
    """Train every valid cell of ``space`` (dotted keys -> value lists).

    Cells whose time grid is not integral are skipped and logged. Rows are
    ranked by best validation MSE; diverged and failed cells rank last.
    """
    tc = train_config or TrainConfig()
    tasks, skipped = [], []
    for index, cell in enumerate(grid_cells(space)):
        try:
            cfg, cell_tc = apply_overrides(config, tc, cell)
        except GridError as exc:
            log.info("skipping cell %d %s: %s", index, cell, exc)
            skipped.append((index, cell, str(exc)))
            continue
        tasks.append((index, cell, cfg, cell_tc, dataset))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_cell, tasks))
    else:
        outcomes = [_run_cell(t) for t in tasks]
    rows = [row for row, _ in outcomes]
    records = {row["cell"]: rec for row, rec in outcomes if rec is not None}
    ranked = sorted(rows, key=lambda r: (r["status"] != "ok", r["best_val_mse"], r["cell"]))
    return GridSearchResult(rows, ranked, skipped, records)


def divergence_map(config, X, dts, t_ends):
    """Probe each ``(dt, t_end)`` cell by a forward pass of the initialised model.

    Returns ``{(dt, t_end): status}`` with status ``"stable"``,
    ``"diverged@<step>"`` or ``"skipped"`` (non-integral step count).
    """
    params = init_params(config)
    out = {}
    for dt in dts:
        for t_end in t_ends:
            try:
                cfg = replace(config, dt=float(dt), t_end=float(t_end))
            except GridError:
                out[(dt, t_end)] = "skipped"
                continue
            try:
                predict(cfg, params, X)
                out[(dt, t_end)] = "stable"
            except NonFiniteStateError as exc:
                out[(dt, t_end)] = f"diverged@{exc.step}"
    return out


def densest_stable_cell(dmap, target_steps):
    """Smallest stable ``dt``; among its cells the step count nearest ``target_steps``."""
    stable = [cell for cell, status in dmap.items() if status == "stable"]
    if not stable:
        return None
    dt = min(c[0] for c in stable)
    return min(
        (c for c in stable if c[0] == dt),
        key=lambda c: (abs(round(c[1] / c[0]) - target_steps), -c[1]),
    )


__all__ = [
    "AdamState",
    "EarlyStopping",
    "FitResult",
    "GridSearchResult",
    "RunRecord",
    "TrainConfig",
    "adam_step",
    "densest_stable_cell",
    "divergence_map",
    "apply_overrides",
    "evaluate",
    "fit_params",
    "grid_cells",
    "grid_search",
    "loss_and_grad",
    "loss_curve_csv",
    "predict",
    "train",
]
