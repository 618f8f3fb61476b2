import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dynpmnn.data import (
    CALIFORNIA_FEATURES,
    CALIFORNIA_TARGET,
    Dataset,
    Standardizer,
    fit_standardizer,
    load_csv,
    sample_csv_path,
    split,
    split_sizes,
    synthetic_dataset,
)
from dynpmnn.exceptions import BadFractionsError, LeakageError, ParseError, SchemaMismatchError

HEADER = ",".join(CALIFORNIA_FEATURES + (CALIFORNIA_TARGET,))


def write_rows(path, rows, header=HEADER):
    path.write_text(header + "\n" + "".join(r + "\n" for r in rows))
    return path


# ---------------------------------------------------------------- loading


def test_full_export_shape(full_table):
    assert full_table.X.shape == (20640, 8)
    assert full_table.y.shape == (20640,)
    assert full_table.rejected_lines == []


def test_bundled_sample(sample_table):
    assert sample_table.X.shape == (200, 8)
    assert sample_table.feature_names == CALIFORNIA_FEATURES


def test_malformed_row_is_skipped_with_line_number(tmp_path, caplog):
    good = ",".join(["1.0"] * 9)
    path = write_rows(tmp_path / "t.csv", [good, "1.0,oops," + ",".join(["1"] * 7), good])
    with caplog.at_level(logging.WARNING):
        table = load_csv(path)
    assert table.n_rows == 2
    assert table.rejected_lines == [3]
    assert "line 3" in caplog.text


def test_malformed_row_strict_raises(tmp_path):
    path = write_rows(tmp_path / "t.csv", [",".join(["1.0"] * 8)])
    with pytest.raises(ParseError) as info:
        load_csv(path, strict=True)
    assert info.value.line == 2


@pytest.mark.parametrize("value", ["nan", "inf", ""])
def test_missing_or_nonfinite_rejected(tmp_path, value):
    good = ",".join(["1.0"] * 9)
    path = write_rows(tmp_path / "t.csv", [good, ",".join(["1.0"] * 8 + [value])])
    assert load_csv(path).n_rows == 1


def test_empty_file(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("")
    with pytest.raises(SchemaMismatchError):
        load_csv(path)


def test_header_only(tmp_path):
    with pytest.raises(SchemaMismatchError):
        load_csv(write_rows(tmp_path / "t.csv", []))


def test_wrong_header(tmp_path):
    with pytest.raises(SchemaMismatchError):
        load_csv(write_rows(tmp_path / "t.csv", [",".join(["1"] * 9)], header="a,b,c"))


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_csv(tmp_path / "nope.csv")


# ---------------------------------------------------------------- split


def test_split_sizes():
    assert split_sizes(20640) == (14448, 4128, 2064)
    assert split_sizes(10) == (7, 2, 1)
    assert split(10, seed=0).sizes() == (7, 2, 1)


def test_split_is_seeded():
    a, b = split(100, seed=4), split(100, seed=4)
    assert all(np.array_equal(x, y) for x, y in zip((a.train, a.val, a.test), (b.train, b.val, b.test)))
    assert not np.array_equal(a.train, split(100, seed=5).train)


@pytest.mark.parametrize("fractions", [(0.7, 0.2), (0.7, 0.2, 0.2), (1.1, -0.1, 0.0)])
def test_bad_fractions(fractions):
    with pytest.raises(BadFractionsError):
        split(10, fractions)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 3000), st.integers(0, 2**31 - 1))
def test_split_is_partition(n, seed):
    idx = split(n, seed=seed)
    everything = np.concatenate([idx.train, idx.val, idx.test])
    assert len(everything) == n
    np.testing.assert_array_equal(np.sort(everything), np.arange(n))


# ---------------------------------------------------------------- standardisation


def test_standardizer_hand_value():
    out = Standardizer().fit(np.array([[-1.0], [0.0], [1.0]])).transform(np.array([[-1.0], [0.0], [1.0]]))
    expected = 1.0 / np.sqrt(2.0 / 3.0)
    np.testing.assert_allclose(out.ravel(), [-expected, 0.0, expected], rtol=0, atol=1e-15)
    np.testing.assert_allclose(out.ravel(), [-1.224745, 0.0, 1.224745], atol=1e-6)


def test_standardizer_constant_column(caplog):
    X = np.column_stack([np.full(5, 3.0), np.arange(5.0)])
    with caplog.at_level(logging.WARNING):
        s = Standardizer().fit(X)
    assert "zero-variance" in caplog.text
    np.testing.assert_array_equal(s.transform(X)[:, 0], 0.0)
    assert s.scale_[0] == 1.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 1000))
def test_standardizer_round_trip(seed):
    X = np.random.default_rng(seed).normal(3.0, 5.0, size=(20, 4))
    s = Standardizer().fit(X)
    np.testing.assert_allclose(s.inverse_transform(s.transform(X)), X, rtol=0, atol=1e-12)


def test_standardizer_target_keeps_rank():
    y = np.array([1.0, 2.0, 4.0])
    s = Standardizer().fit(y)
    assert s.transform(y).shape == (3,)
    d = Standardizer.from_dict(s.to_dict())
    assert d.transform(y).tobytes() == s.transform(y).tobytes()


def test_leakage_guard(sample_table):
    idx = split(sample_table.n_rows, seed=0)
    with pytest.raises(LeakageError):
        fit_standardizer(sample_table, np.concatenate([idx.train, idx.val[:1]]), idx.train)
    fit_standardizer(sample_table, idx.val, idx.train, strict=False)


def test_training_part_is_standardised(sample_table):
    ds = Dataset.build(sample_table, seed=0)
    X, y = ds.part("train")
    assert np.all(np.abs(X.mean(axis=0)) < 1e-9)
    assert np.all(np.abs(X.std(axis=0) - 1) < 1e-9)
    assert abs(y.mean()) < 1e-9 and abs(y.std() - 1) < 1e-9


def test_shifted_validation_is_not_recentred():
    table = synthetic_dataset(n_rows=400, n_features=2, seed=1)
    ds = Dataset.build(table, seed=0)
    table.X[ds.indices.val] += 5.0
    Xv, _ = ds.part("val")
    # scalers are frozen on train rows, so the shift survives the transform
    assert np.all(Xv.mean(axis=0) > 3.0)


def test_full_split_statistics(full_table):
    ds = Dataset.build(full_table, seed=0)
    assert ds.indices.sizes() == (14448, 4128, 2064)
    X, _ = ds.part("train")
    assert np.all(np.abs(X.mean(axis=0)) < 1e-9)
    assert np.all(np.abs(X.std(axis=0) - 1) < 1e-9)


# ---------------------------------------------------------------- synthetic


def test_synthetic_linear_exact():
    table = synthetic_dataset("linear", 50, 4, noise=0.0, seed=2)
    np.testing.assert_allclose(table.X @ table.true_weights - table.y, 0.0, atol=1e-14)


def test_synthetic_noise_level():
    table = synthetic_dataset("linear", 20000, 3, noise=0.1, seed=3)
    resid = table.y - table.X @ table.true_weights
    assert abs(resid.std() - 0.1) < 0.005


def test_synthetic_is_seeded():
    for kind in ("linear", "fhn"):
        a, b = synthetic_dataset(kind, 30, 3, 0.1, 9), synthetic_dataset(kind, 30, 3, 0.1, 9)
        assert a.X.tobytes() == b.X.tobytes() and a.y.tobytes() == b.y.tobytes()


def test_synthetic_rejects_bad_sizes():
    with pytest.raises(ValueError):
        synthetic_dataset(n_rows=0)
    with pytest.raises(ValueError):
        synthetic_dataset(kind="cubic")


def test_sample_path_exists():
    assert sample_csv_path().is_file()
