import numpy as np
import pytest

from transportlab.data import (
    ColumnSchema,
    DataError,
    Dataset,
    concat,
    design_matrix,
    impute,
    kfold,
    load_csv,
    split_by_membership,
    write_csv,
)

NUM = (ColumnSchema("x"),)


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def ds(rows, membership=None, outcome=None, schema=NUM):
    rows = np.asarray(rows, dtype=float).reshape(len(rows), -1)
    n = rows.shape[0]
    membership = np.ones(n) if membership is None else membership
    return Dataset(schema, rows, membership, tuple(str(i) for i in range(n)), outcome)


# ---- load_csv


def test_empty_cell_is_missing(tmp_path):
    p = write(tmp_path, "x,y\n1,10\n,20\n3,30\n")
    d = load_csv(p, NUM, outcome_col="y")
    assert np.isnan(d.rows[1, 0])
    assert d.rows[0, 0] == 1 and d.rows[2, 0] == 3
    assert d.outcome.tolist() == [10, 20, 30]


def test_na_token_is_missing(tmp_path):
    p = write(tmp_path, "x\nNA\n2\n")
    assert np.isnan(load_csv(p, NUM).rows[0, 0])


def test_membership_must_be_binary(tmp_path):
    p = write(tmp_path, "x,S\n1,1\n2,2\n")
    with pytest.raises(DataError, match="membership must be 0 or 1"):
        load_csv(p, NUM, membership_col="S")


def test_missing_schema_column_is_named(tmp_path):
    p = write(tmp_path, "a,b\n1,2\n")
    with pytest.raises(DataError, match="'x'"):
        load_csv(p, NUM)


def test_membership_defaults_to_source(tmp_path):
    d = load_csv(write(tmp_path, "x\n1\n2\n"), NUM)
    assert d.membership.tolist() == [1, 1]


def test_header_order_insensitive(tmp_path):
    schema = (ColumnSchema("a"), ColumnSchema("b"))
    d = load_csv(write(tmp_path, "b,a\n2,1\n"), schema)
    assert d.rows.tolist() == [[1.0, 2.0]]


@pytest.mark.parametrize(
    "text, match",
    [
        ("x\n1,2\n", "expected 1 fields"),
        ("x\nabc\n", "non-numeric"),
        ("x,id\n1,a\n2,a\n", "duplicate row_ids"),
    ],
)
def test_load_errors(tmp_path, text, match):
    with pytest.raises(DataError, match=match):
        load_csv(write(tmp_path, text), NUM, id_col="id" if "id" in text else None)


def test_unknown_category(tmp_path):
    schema = (ColumnSchema("c", "categorical", ("a", "b")),)
    with pytest.raises(DataError, match="unknown category"):
        load_csv(write(tmp_path, "c\na\nz\n"), schema)


def test_comment_lines_skipped(tmp_path):
    d = load_csv(write(tmp_path, "# header comment\nx\n5\n"), NUM)
    assert d.rows.tolist() == [[5.0]]


def test_write_then_load_roundtrip(tmp_path):
    schema = (ColumnSchema("x"), ColumnSchema("c", "categorical", ("lo", "hi")))
    rows = np.array([[0.1, 0.0], [np.nan, 1.0], [1e-17, np.nan]])
    d = Dataset(schema, rows, [1, 0, 1], ("r1", "r2", "r3"), [1.5, np.nan, -2.0])
    p = tmp_path / "rt.csv"
    write_csv(d, p, comment="test")
    back = load_csv(p, schema, "y", "S", "row_id")
    np.testing.assert_array_equal(back.rows, d.rows)
    np.testing.assert_array_equal(back.outcome, d.outcome)
    assert back.row_ids == d.row_ids
    assert back.membership.tolist() == [1, 0, 1]


# ---- impute


def test_impute_mean():
    d = impute(ds([[1], [np.nan], [3]]))
    assert d.rows[:, 0].tolist() == [1, 2, 3]


def test_impute_mode_lowest_index_on_ties():
    schema = (ColumnSchema("c", "categorical", ("a", "b")),)
    d = impute(ds([[0], [0], [1], [np.nan]], schema=schema))
    assert d.rows[:, 0].tolist() == [0, 0, 1, 0]
    tie = impute(ds([[1], [0], [np.nan]], schema=schema))
    assert tie.rows[2, 0] == 0


def test_impute_all_missing_errors():
    with pytest.raises(DataError, match="all values missing"):
        impute(ds([[np.nan], [np.nan]]))


def test_impute_constant():
    assert impute(ds([[np.nan], [1]]), "constant", 7).rows[:, 0].tolist() == [7, 1]


def test_impute_pools_source_and_target():
    d = ds([[0], [np.nan], [10]], membership=[1, 1, 0])
    assert impute(d).rows[1, 0] == 5


# ---- split


def test_split_counts_and_order():
    d = ds([[i] for i in range(5)], membership=[1, 1, 0, 1, 0], outcome=[0, 1, 2, 3, 4])
    s, t = split_by_membership(d)
    assert s.n == 3 and t.n == 2
    assert s.row_ids == ("0", "1", "3") and t.row_ids == ("2", "4")
    assert t.outcome is None and s.outcome.tolist() == [0, 1, 3]
    assert set(s.row_ids).isdisjoint(t.row_ids)
    assert set(s.row_ids) | set(t.row_ids) == set(d.row_ids)


def test_split_empty_target():
    with pytest.raises(DataError, match="empty target"):
        split_by_membership(ds([[1], [2]]))


def test_split_empty_source():
    with pytest.raises(DataError, match="empty source"):
        split_by_membership(ds([[1], [2]], membership=[0, 0]))


# ---- kfold


def test_kfold_loo():
    f = kfold(10, 10, 0)
    assert f.sizes().tolist() == [1] * 10


def test_kfold_unbalanced_by_one():
    assert sorted(kfold(11, 10, 3).sizes().tolist()) == [1] * 9 + [2]


def test_kfold_deterministic():
    np.testing.assert_array_equal(kfold(50, 7, 42).assignment, kfold(50, 7, 42).assignment)


@pytest.mark.parametrize("n, k", [(3, 4), (5, 1)])
def test_kfold_errors(n, k):
    with pytest.raises(ValueError):
        kfold(n, k, 0)


# ---- design matrix and datasets


def test_design_matrix_one_hot_drop_first():
    schema = (ColumnSchema("x"), ColumnSchema("c", "categorical", ("a", "b", "c")))
    X, names = design_matrix(ds([[1.0, 0], [2.0, 2]], schema=schema))
    assert names == ["x", "c=b", "c=c"]
    assert X.tolist() == [[1, 0, 0], [2, 0, 1]]


def test_design_matrix_ordered_keeps_codes():
    schema = (ColumnSchema("g", "categorical", ("lo", "mid", "hi"), ordered=True),)
    X, names = design_matrix(ds([[2], [0]], schema=schema))
    assert names == ["g"] and X[:, 0].tolist() == [2, 0]


def test_dataset_is_immutable():
    d = ds([[1], [2]])
    with pytest.raises(ValueError):
        d.rows[0, 0] = 5


def test_schema_validation():
    with pytest.raises(DataError):
        ColumnSchema("c", "categorical", ())
    with pytest.raises(DataError):
        ColumnSchema("c", "categorical", ("a", "a"))
    with pytest.raises(DataError, match="unique"):
        Dataset((ColumnSchema("x"), ColumnSchema("x")), np.zeros((1, 2)), [1], ("a",))


def test_concat_reconstructs_split():
    d = ds([[i] for i in range(6)], membership=[0, 1, 0, 1, 1, 0], outcome=np.arange(6.0))
    s, t = split_by_membership(d)
    back = concat([s, t])
    order = [back.row_ids.index(r) for r in d.row_ids]
    np.testing.assert_array_equal(back.rows[order], d.rows)
