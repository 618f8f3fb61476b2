"""Acceptance gate: one recorded PASS/FAIL line per criterion.

Verdicts are collected through ``conftest.record_criterion`` and printed in
the pytest terminal summary under "acceptance criteria".
"""

import json
import math
import time

import numpy as np
import pytest

from conftest import record_criterion
from dynpmnn import tape as T
from dynpmnn.cli import main
from dynpmnn.data import Dataset, split_sizes
from dynpmnn.dynamics import (
    FitzHughNagumo,
    IntegrationGrid,
    LinearField,
    ZeroField,
    euler_block,
    integrate,
    reference_solve,
)
from dynpmnn.model import MLPConfig, PMNNConfig, init_params, param_count, pmnn_forward
from dynpmnn.train import EarlyStopping, TrainConfig, densest_stable_cell, divergence_map, train

SEEDS = (0, 1, 2)
RMSE_BAND = (0.58, 0.78)
RUN_BUDGET_S = 300.0
GRADCHECK_BUDGET_S = 30.0
GRADCHECK_TOL = 1e-5
SEARCH_DTS = (1, 2, 5, 10, 20, 50, 100, 500)
SEARCH_T_ENDS = (10, 20, 50, 100, 200, 500, 1000, 10000)
TARGET_STEPS = 25  # 500 / 20 at the reported optimum

# PMNN results shared with the baseline report
_PMNN = {}


@pytest.fixture(scope="module")
def full_dataset(full_table):
    return Dataset.build(full_table, seed=0)


def test_criterion_01_parameter_count():
    count = param_count(PMNNConfig(input_dim=8, fhn_units=1, output_dim=1, use_layer_norm=True))
    ok = count == 25
    record_criterion(1, "parameter count (n=8, K=1, out=1, LayerNorm) == 25", ok, f"got {count}")
    assert ok


def _combined_divergence_map(X):
    """A cell counts as stable only if it is stable for every seed."""
    maps = [divergence_map(PMNNConfig(seed=s), X, SEARCH_DTS, SEARCH_T_ENDS) for s in SEEDS]
    combined = {}
    for cell in maps[0]:
        statuses = {m[cell] for m in maps}
        combined[cell] = "stable" if statuses == {"stable"} else sorted(statuses - {"stable"})[0]
    return combined


def _format_map(dmap):
    lines = ["dt \\ t_end " + " ".join(f"{t:>10}" for t in SEARCH_T_ENDS)]
    for dt in SEARCH_DTS:
        lines.append(f"{dt:>10} " + " ".join(f"{dmap[(dt, t)]:>10}" for t in SEARCH_T_ENDS))
    return "\n".join(lines)


@pytest.mark.slow
def test_criterion_02_rmse_reproduction(full_dataset):
    tc = lambda s: TrainConfig(batch_size=32, lr=5e-4, seed=s)
    optimal = [train(PMNNConfig(dt=20.0, t_end=500.0, seed=s), full_dataset, tc(s))[0] for s in SEEDS]
    cell = (20.0, 500.0)
    runs = optimal
    note = "optimal cell trained"
    if all(r.diverged for r in optimal):
        X_train, _ = full_dataset.part("train")
        dmap = _combined_divergence_map(X_train)
        print("\nEuler divergence map at initialisation (all seeds):\n" + _format_map(dmap))
        cell = densest_stable_cell(dmap, TARGET_STEPS)
        assert cell is not None, "no stable cell in the searched grid"
        runs = [train(PMNNConfig(dt=float(cell[0]), t_end=float(cell[1]), seed=s), full_dataset, tc(s))[0]
                for s in SEEDS]
        reasons = "; ".join(r.diverged_reason for r in optimal)
        note = f"dt=20/t_end=500 diverged for all seeds ({reasons}); fallback cell dt={cell[0]}, t_end={cell[1]}"
    rmses = [r.test_rmse for r in runs]
    secs = [r.wall_seconds for r in runs]
    _PMNN.update(cell=cell, rmses=rmses)
    ok = all(not r.diverged for r in runs) \
        and all(RMSE_BAND[0] <= x <= RMSE_BAND[1] for x in rmses) \
        and all(s < RUN_BUDGET_S for s in secs)
    detail = (f"{note}; test RMSE {', '.join(f'{x:.4f}' for x in rmses)}; "
              f"seconds {', '.join(f'{s:.0f}' for s in secs)}")
    record_criterion(2, f"PMNN test RMSE in [{RMSE_BAND[0]}, {RMSE_BAND[1]}] over 3 seeds, < 5 min each", ok, detail)
    assert ok, detail


def test_criterion_03_gradient_oracle(tmp_path, capsys):
    started = time.perf_counter()
    reports = {}
    for label, args in {
        "pmnn H=25 dt=0.5": ["--model", "pmnn", "--set", "model.dt=0.5", "--set", "model.t_end=12.5"],
        "node": ["--model", "node"],
    }.items():
        out = tmp_path / label.split()[0]
        code = main(["gradcheck", *args, "--set", "gradcheck.h=1e-5",
                     "--tolerance", str(GRADCHECK_TOL), "--out", str(out)])
        reports[label] = (code, json.loads((out / "gradcheck.json").read_text())["max"])
    elapsed = time.perf_counter() - started
    capsys.readouterr()
    ok = all(code == 0 and err < GRADCHECK_TOL for code, err in reports.values()) and elapsed < GRADCHECK_BUDGET_S
    detail = ", ".join(f"{k}: {e:.2e}" for k, (_, e) in reports.items()) + f"; {elapsed:.1f}s"
    record_criterion(3, "tape gradients vs central differences < 1e-5 (PMNN, NODE), < 30 s", ok, detail)
    assert ok, detail


def test_criterion_04_integrator_order():
    exact = math.exp(-1.0)
    errors = [abs(euler_block(np.array([1.0]), LinearField(-1.0), IntegrationGrid(1.0, dt))[0] - exact)
              for dt in (0.1, 0.05, 0.025)]
    ratios = [errors[i] / errors[i + 1] for i in range(2)]
    rk4_err = abs(reference_solve(np.array([1.0]), LinearField(-1.0), 1.0, 1e-3)[0] - exact)
    ok = all(abs(r - 2.0) <= 0.2 for r in ratios) and rk4_err < 1e-8
    detail = f"halving ratios {ratios[0]:.4f}, {ratios[1]:.4f}; RK4 error {rk4_err:.1e}"
    record_criterion(4, "Euler first order (ratio 2 +/- 10%), RK4 within 1e-8", ok, detail)
    assert ok, detail


def test_criterion_05_dynamics_fidelity():
    field = FitzHughNagumo()
    grid = IntegrationGrid(500.0, 0.05)
    rest = integrate(np.zeros(2), field, grid).as_array()
    fixed = rest.tobytes() == np.zeros_like(rest).tobytes()

    euler_sub = integrate(np.array([0.1, 0.0]), field, grid).as_array()[:, 0]
    euler_sup = integrate(np.array([0.4, 0.0]), field, grid).as_array()[:, 0]
    rk_sub = reference_solve(np.array([0.1, 0.0]), field, 500.0, 0.05, return_trajectory=True).as_array()[:, 0]
    rk_sup = reference_solve(np.array([0.4, 0.0]), field, 500.0, 0.05, return_trajectory=True).as_array()[:, 0]
    excitable = all(
        sub.max() < 0.3 and sup.max() > 0.5 and abs(sup[-1]) < 0.05
        for sub, sup in ((euler_sub, euler_sup), (rk_sub, rk_sup))
    )
    ok = fixed and excitable
    detail = (f"rest bitwise {fixed}; peak v (Euler/RK4) sub {euler_sub.max():.3f}/{rk_sub.max():.3f}, "
              f"sup {euler_sup.max():.3f}/{rk_sup.max():.3f}; final v sup {euler_sup[-1]:.2e}/{rk_sup[-1]:.2e}")
    record_criterion(5, "FitzHugh-Nagumo fixed point and spike/recovery vs RK4", ok, detail)
    assert ok, detail


def test_criterion_06_zero_field_reduction():
    cfg = PMNNConfig(dt=20.0, t_end=500.0, seed=11)
    params = init_params(cfg).views()
    X = np.random.default_rng(6).normal(size=(100, 8))
    dynamic = pmnn_forward(params, X, cfg, field=ZeroField(2))
    hidden = T.silu(T.layer_norm(T.affine(params["W_h"], params["b_h"], X), params["ln_gain"], params["ln_bias"]))
    static = T.affine(params["W_out"], params["b_out"], hidden)
    ok = dynamic.tobytes() == static.tobytes()
    record_criterion(6, "zero vector field reduces to the static network bitwise (100 inputs)", ok)
    assert ok


def test_criterion_07_early_stopping():
    sequence = [1.0, 0.96, 0.95, 0.97, 0.955, 0.99, 0.951, 0.96, 0.98, 0.952, 0.97, 0.5]
    stopper = EarlyStopping(patience=10, min_delta=5e-2)
    stopped = next((epoch for epoch, loss in enumerate(sequence, start=1) if stopper.update(loss)), None)
    ok = stopped == 11
    record_criterion(7, "early stopping (patience 10, min_delta 0.05) stops at epoch 11", ok, f"stopped at {stopped}")
    assert ok


def test_criterion_08_data_protocol(full_dataset):
    sizes = full_dataset.indices.sizes()
    X, _ = full_dataset.part("train")
    mean_err = float(np.max(np.abs(X.mean(axis=0))))
    std_err = float(np.max(np.abs(X.std(axis=0) - 1.0)))
    ok = sizes == (14448, 4128, 2064) == split_sizes(20640) and mean_err < 1e-9 and std_err < 1e-9
    detail = f"sizes {sizes}; max |mean| {mean_err:.1e}; max |std-1| {std_err:.1e}"
    record_criterion(8, "split (14448, 4128, 2064) and train features standardised to 1e-9", ok, detail)
    assert ok, detail


def test_criterion_09_reproducibility(tmp_path, capsys):
    args = ["train", "--set", "train.max_epochs=3", "--set", "model.dt=1", "--set", "model.t_end=20", "--seed", "7"]
    outs = []
    for name in ("first", "second"):
        out = tmp_path / name
        assert main(args + ["--out", str(out)]) == 0
        outs.append(out)
    capsys.readouterr()
    same = {f: (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes() for f in ("loss_curve.csv", "checkpoint.json")}
    ok = all(same.values())
    record_criterion(9, "identical runs give byte-identical loss curves and checkpoints", ok, str(same))
    assert ok


@pytest.mark.slow
def test_criterion_10_baseline_sanity(full_dataset):
    records = [train(MLPConfig(seed=s), full_dataset, TrainConfig(batch_size=32, lr=5e-4, seed=s))[0] for s in SEEDS]
    counts = {r.param_count for r in records}
    ok = counts == {25} and not any(r.diverged for r in records) \
        and all(math.isfinite(r.test_rmse) for r in records)
    pmnn = _PMNN.get("rmses")
    pmnn_txt = (f"PMNN (dt={_PMNN['cell'][0]}, t_end={_PMNN['cell'][1]}) "
                + ", ".join(f"{x:.4f}" for x in pmnn)) if pmnn else "PMNN not run in this session"
    detail = f"MLP test RMSE {', '.join(f'{r.test_rmse:.4f}' for r in records)} vs {pmnn_txt}"
    record_criterion(10, "iso-parameter MLP (25 params) trains without divergence", ok, detail)
    assert ok, detail
