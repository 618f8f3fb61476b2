"""Command-line entry point: ``dynpmnn {train,evaluate,grid-search,simulate,gradcheck}``.

Configuration is JSON, merged in the order: built-in defaults, ``--config``
file, ``--set key=value`` overrides, then dedicated flags (``--seed``,
``--data``, ``--model``). The resolved configuration is written to
``<out>/config.json`` before any work starts; feeding it back through
``--config`` reproduces the run.

Exit codes: 0 success (diverged training included), 1 usage/config error,
2 data error, 3 failed check or internal invariant violation.
"""

import argparse
import copy
import csv
import json
import logging
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import tape as T
from .checkpoint import Checkpoint, dumps
from .data import Dataset, load_csv, sample_csv_path
from .dynamics import FhnParams, FitzHughNagumo, IntegrationGrid, integrate, nullclines, write_trajectory_csv
from .exceptions import (
    BadFractionsError,
    DimMismatchError,
    DynPMNNError,
    EmptySpaceError,
    GridError,
    LeakageError,
    NonFiniteStateError,
    ParseError,
    SchemaMismatchError,
)
from .model import MODEL_KINDS, ModelParams, config_from_dict, init_params, unflatten_node
from .model import forward as model_forward
from .train import TrainConfig, evaluate, grid_cells, grid_search, loss_curve_csv, train

log = logging.getLogger("dynpmnn")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CHECK = 0, 1, 2, 3

DATA_ERRORS = (
    FileNotFoundError,
    SchemaMismatchError,
    ParseError,
    DimMismatchError,
    BadFractionsError,
    LeakageError,
)

DEFAULTS = {
    "seed": 0,
    "model": {"kind": "pmnn"},
    "train": TrainConfig().to_dict(),
    "data": {"path": None, "schema": "california", "fractions": [0.7, 0.2, 0.1], "split_seed": 0},
    "simulate": {
        "fhn": FhnParams().to_dict(),
        "dt": 0.05,
        "t_end": 500.0,
        "init": [[0.1, 0.0], [0.4, 0.0]],
        "nullcline_points": 201,
    },
    "gradcheck": {"h": 1e-5, "tolerance": 1e-5, "batch": 4},
}

GRADCHECK_MODEL = {"kind": "pmnn", "dt": 0.5, "t_end": 2.5}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _set_dotted(cfg, key, value):
    parts = key.split(".")
    node = cfg
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise UsageError(f"cannot set {key}: {part} is not a section")
    node[parts[-1]] = value


def _merge(base, extra):
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _merge(base[key], value)
        else:
            base[key] = value
    return base


def resolve_config(args, command):
    """Build the effective configuration dictionary for ``command``."""
    user = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                user = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
    for item in args.set or []:
        key, sep, raw = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {item!r}")
        _set_dotted(user, key.strip(), _parse_value(raw))
    if args.seed is not None:
        user["seed"] = args.seed
    if getattr(args, "data", None):
        _set_dotted(user, "data.path", args.data)
    if getattr(args, "model", None):
        _set_dotted(user, "model.kind", args.model)

    cfg = copy.deepcopy(DEFAULTS)
    user_model = dict(user.pop("model", {}))
    if command == "gradcheck":
        user_model = {**({} if user_model.get("kind", "pmnn") != "pmnn" else GRADCHECK_MODEL), **user_model}
    _merge(cfg, user)
    kind = user_model.get("kind", "pmnn")
    if kind not in MODEL_KINDS:
        raise UsageError(f"unknown model kind {kind!r}")
    model = MODEL_KINDS[kind]().to_dict()
    _merge(model, user_model)
    model["seed"] = cfg["seed"]
    cfg["model"] = model
    cfg["train"]["seed"] = cfg["seed"]
    return cfg


def _model_and_train(cfg):
    try:
        model = config_from_dict(cfg["model"])
        tc = TrainConfig(**cfg["train"])
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from None
    return model, tc


def _load_table(cfg):
    path = cfg["data"].get("path")
    if not path:
        path = sample_csv_path()
        log.warning("no --data given; using the bundled 200-row sample")
    if cfg["data"].get("schema", "california") == "california":
        return load_csv(path)
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
    if len(header) < 2:
        raise SchemaMismatchError(f"{path}: need at least one feature and a target column")
    return load_csv(path, features=header[:-1], target=header[-1])


def _dataset(cfg):
    d = cfg["data"]
    return Dataset.build(_load_table(cfg), tuple(d["fractions"]), d["split_seed"])


def _write(path, text):
    Path(path).write_text(text, encoding="utf-8")


# ---------------------------------------------------------------- commands


def cmd_train(cfg, out):
    model, tc = _model_and_train(cfg)
    dataset = _dataset(cfg)
    record, checkpoint = train(model, dataset, tc)
    checkpoint.save(out / "checkpoint.json")
    loss_curve_csv(record, out / "loss_curve.csv")
    _write(out / "run_record.json", record.to_json())
    state = "DIVERGED" if record.diverged else "ok"
    print(
        f"{model.kind}: {state}; epochs {record.epochs_run} (best {record.best_epoch}); "
        f"val MSE {record.best_val_mse:.6g}; test RMSE {record.test_rmse:.6g} "
        f"({record.test_rmse_raw:.6g} x $100k); {record.param_count} params; {record.wall_seconds:.1f}s"
    )
    return EXIT_OK


def cmd_evaluate(cfg, out, checkpoint_path, split_name):
    try:
        checkpoint = Checkpoint.load(checkpoint_path)
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise FileNotFoundError(f"cannot load checkpoint {checkpoint_path}: {exc}") from None
    table = _load_table(cfg)
    if table.X.shape[1] != checkpoint.config.input_dim:
        raise DimMismatchError(
            f"checkpoint expects {checkpoint.config.input_dim} features, data has {table.X.shape[1]}"
        )
    split = checkpoint.split or {}
    fractions = tuple(split.get("fractions", cfg["data"]["fractions"]))
    dataset = Dataset.build(table, fractions, split.get("seed", cfg["data"]["split_seed"]))
    if checkpoint.x_scaler is not None:
        dataset.x_scaler, dataset.y_scaler = checkpoint.x_scaler, checkpoint.y_scaler
    X, y = dataset.part(split_name)
    metrics = evaluate(checkpoint, X, y)
    metrics["rmse_raw"] = metrics["rmse"] * float(dataset.y_scaler.scale_[0])
    metrics.update(split=split_name, n=int(len(y)), kind=checkpoint.kind)
    _write(out / "metrics.json", dumps(metrics))
    print(f"{split_name}: MSE {metrics['mse']:.6g}  RMSE {metrics['rmse']:.6g}  (n={len(y)})")
    return EXIT_OK


def default_space_path():
    return resources.files("dynpmnn") / "resources" / "pmnn_search_space.json"


def load_space(path):
    with open(path, encoding="utf-8") as fh:
        space = json.load(fh)
    if not isinstance(space, dict) or not all(isinstance(v, list) for v in space.values()):
        raise UsageError("space file must map dotted keys to value lists")
    return space


def cmd_grid_search(cfg, out, space_path, workers, dry_run=False):
    space = load_space(space_path or default_space_path())
    model, tc = _model_and_train(cfg)
    if dry_run:
        cells = grid_cells(space)
        print(f"{len(cells)} candidate cells")
        return EXIT_OK
    dataset = _dataset(cfg)
    result = grid_search(space, dataset, model, tc, workers=workers)
    result.write_csv(out / "grid_results.csv")
    _write(out / "skipped_cells.json", dumps([{"cell": i, **c, "reason": r} for i, c, r in result.skipped]))
    best = result.best
    if best is not None:
        overrides = {k: best[k] for k in space}
        _write(out / "best_config.json", dumps({"cell": best["cell"], "overrides": overrides,
                                                "best_val_mse": best["best_val_mse"],
                                                "status": best["status"]}))
    print(f"{len(result.rows)} cells trained, {len(result.skipped)} skipped; best: {best}")
    return EXIT_OK


def cmd_simulate(cfg, out):
    sim = cfg["simulate"]
    try:
        params = FhnParams(**sim["fhn"])
        grid = IntegrationGrid(float(sim["t_end"]), float(sim["dt"]))
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid simulate settings: {exc}") from None
    for i, init in enumerate(sim["init"]):
        state0 = np.asarray(init, dtype=np.float64)
        if state0.ndim != 1 or state0.size % 2:
            raise UsageError(f"initial state {init} must list v_1..v_K then w_1..w_K")
        units = state0.size // 2
        traj = integrate(state0, FitzHughNagumo(params, units), grid)
        write_trajectory_csv(out / f"trajectory_{i}.csv", traj, units)
        v = traj.as_array()[:, :units]
        print(f"trajectory {i}: start {init}, max v {v.max():.6g}, final v {v[-1].tolist()}")
    v_grid = np.linspace(-0.5, 1.5, int(sim["nullcline_points"]))
    w_v, w_w = nullclines(params, v_grid)
    if w_w is None:
        log.warning("g = 0: the w-nullcline is the vertical line v = 0; not emitted")
    with open(out / "nullclines.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["v", "w_v_nullcline", "w_w_nullcline"])
        for k, v in enumerate(v_grid):
            writer.writerow([repr(float(v)), repr(float(w_v[k])), "" if w_w is None else repr(float(w_w[k]))])
    return EXIT_OK


def gradcheck_report(model, h=1e-5, batch=4, seed=0):
    """Per-block max relative error of tape vs central-difference gradients."""
    rng = np.random.default_rng(seed)
    params = init_params(model)
    theta = params.flat + 0.1 * rng.standard_normal(params.flat.shape)
    X = rng.standard_normal((batch, model.input_dim))
    Y = rng.standard_normal((batch, model.output_dim))

    def loss(p):
        if isinstance(p, T.TapeNode):
            blocks = unflatten_node(p, model.layout())
        else:
            blocks = ModelParams(model.layout(), p).views()
        return T.mse_loss(model_forward(blocks, X, model), Y)

    errors, _, _ = T.gradient_errors(loss, theta, h)
    table, offset = {}, 0
    for name, shape, _ in model.layout():
        k = int(np.prod(shape))
        table[name] = float(np.max(errors[offset:offset + k]))
        offset += k
    return table


def cmd_gradcheck(cfg, out, tolerance=None):
    model, _ = _model_and_train(cfg)
    gc = cfg["gradcheck"]
    tol = gc["tolerance"] if tolerance is None else tolerance
    table = gradcheck_report(model, gc["h"], gc["batch"], cfg["seed"])
    worst = max(table.values())
    for name, err in table.items():
        print(f"{name:>12s}  {err:.3e}")
    passed = worst < tol
    print(f"{model.kind}: max relative error {worst:.3e} (tolerance {tol:g}) -> {'PASS' if passed else 'FAIL'}")
    _write(out / "gradcheck.json", dumps({"blocks": table, "max": worst, "tolerance": tol, "passed": passed}))
    return EXIT_OK if passed else EXIT_CHECK


# ---------------------------------------------------------------- entry point


def build_parser():
    parser = _Parser(prog="dynpmnn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="dotted-key override (repeatable)")
        p.add_argument("--out", default="runs/latest", help="output directory")
        p.add_argument("--seed", type=int, help="seed for initialisation and shuffling")
        p.add_argument("-v", "--verbose", action="count", default=0)
        return p

    p = common(sub.add_parser("train", help="train a model"))
    p.add_argument("--data", help="CSV dataset")
    p.add_argument("--model", choices=sorted(MODEL_KINDS))

    p = common(sub.add_parser("evaluate", help="score a checkpoint on a split"))
    p.add_argument("--data", help="CSV dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])

    p = common(sub.add_parser("grid-search", help="train every cell of a hyperparameter grid"))
    p.add_argument("--data", help="CSV dataset")
    p.add_argument("--model", choices=sorted(MODEL_KINDS))
    p.add_argument("--space", help="JSON space file (default: the PMNN space shipped with the package)")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--dry-run", action="store_true", help="only count candidate cells")

    common(sub.add_parser("simulate", help="integrate FitzHugh-Nagumo trajectories to CSV"))

    p = common(sub.add_parser("gradcheck", help="compare tape gradients with finite differences"))
    p.add_argument("--model", choices=sorted(MODEL_KINDS))
    p.add_argument("--tolerance", type=float)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = resolve_config(args, args.command)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write(out / "config.json", dumps(cfg))
        if args.command == "train":
            return cmd_train(cfg, out)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, out, args.checkpoint, args.split)
        if args.command == "grid-search":
            return cmd_grid_search(cfg, out, args.space, args.workers, args.dry_run)
        if args.command == "simulate":
            return cmd_simulate(cfg, out)
        return cmd_gradcheck(cfg, out, args.tolerance)
    except (UsageError, GridError, EmptySpaceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NonFiniteStateError as exc:
        print(f"error: integration blew up: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DATA_ERRORS as exc:
        print(f"data error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DynPMNNError as exc:
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CHECK


if __name__ == "__main__":
    sys.exit(main())
