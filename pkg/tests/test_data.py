import numpy as np
import pytest

from mixattack.data import (Layout, MixedDataset, MixedSample, MixedSchema, StandardizationStats,
                            decode, encode, encode_dataset, fit_standardization, generate_synthetic,
                            load_csv, load_schema, save_schema, train_test_split)
from mixattack.errors import DataError, SchemaError, UsageError


def small_schema():
    return MixedSchema(["a", "b"], [("color", ["red", "green", "blue"])], "y", ["no", "yes"])


def write(path, text):
    path.write_text(text)
    return path


def test_csv_parses_rows(tmp_path):
    p = write(tmp_path / "d.csv", "a,b,color,y\n1.5,2,green,yes\n-3,0.25,red,no\n")
    ds = load_csv(p, small_schema())
    assert len(ds) == 2
    assert ds[0] == MixedSample((1.5, 2.0), (1,), 1)
    assert ds[1] == MixedSample((-3.0, 0.25), (0,), 0)


def test_csv_column_order_and_extra_columns(tmp_path):
    p = write(tmp_path / "d.csv", "y,junk,color,b,a\nno,x,blue,2,1\n")
    assert load_csv(p, small_schema())[0] == MixedSample((1.0, 2.0), (2,), 0)


def test_csv_unknown_category_names_the_label(tmp_path):
    p = write(tmp_path / "d.csv", "a,b,color,y\n1,2,purple,no\n")
    with pytest.raises(DataError, match="purple"):
        load_csv(p, small_schema())


@pytest.mark.parametrize("body, pattern", [
    ("a,b,color,y\n1,oops,red,no\n", "oops"),
    ("a,b,color,y\n1,nan,red,no\n", "non-finite"),
    ("a,b,color,y\n1,2,red,maybe\n", "maybe"),
    ("a,b,color,y\n1,2,red\n", "expected 4 cells"),
])
def test_csv_bad_cells(tmp_path, body, pattern):
    with pytest.raises(DataError, match=pattern):
        load_csv(write(tmp_path / "d.csv", body), small_schema())


def test_csv_missing_column_and_file(tmp_path):
    with pytest.raises(SchemaError, match="color"):
        load_csv(write(tmp_path / "d.csv", "a,b,y\n1,2,no\n"), small_schema())
    with pytest.raises(DataError):
        load_csv(tmp_path / "absent.csv", small_schema())


def test_schema_validation():
    with pytest.raises(SchemaError, match="duplicate"):
        MixedSchema(["a", "a"], [], "y", ["0", "1"])
    with pytest.raises(SchemaError, match="categories"):
        MixedSchema(["a"], [("c", ["only"])], "y", ["0", "1"])
    with pytest.raises(SchemaError):
        MixedSchema(["a"], [("c", [str(i) for i in range(51)])], "y", ["0", "1"])
    with pytest.raises(SchemaError):
        MixedSchema(["a"], [], "y", ["0"])
    MixedSchema(["a"], [("c", [str(i) for i in range(50)])], "y", ["0", "1"])


def test_schema_yaml_round_trip(tmp_path):
    s = small_schema()
    save_schema(s, tmp_path / "s.yaml")
    assert load_schema(tmp_path / "s.yaml") == s
    write(tmp_path / "bad.yaml", "- just\n- a list\n")
    with pytest.raises(SchemaError):
        load_schema(tmp_path / "bad.yaml")
    write(tmp_path / "partial.yaml", "numerical_names: [a]\n")
    with pytest.raises(SchemaError):
        load_schema(tmp_path / "partial.yaml")


def test_wide_schema_round_trips_generated_file(tmp_path):
    # 108 numerical and 32 categorical columns
    ds, schema = generate_synthetic(d_n=108, cat_sizes=(6,) * 32, n_samples=50, seed=4)
    ds.to_csv(tmp_path / "wide.csv")
    save_schema(schema, tmp_path / "wide.yaml")
    back = load_csv(tmp_path / "wide.csv", load_schema(tmp_path / "wide.yaml"))
    np.testing.assert_array_equal(back.numerics, ds.numerics)
    np.testing.assert_array_equal(back.categoricals, ds.categoricals)
    np.testing.assert_array_equal(back.labels, ds.labels)


def test_standardization_examples():
    schema = MixedSchema(["a"], [], "y", ["0", "1"])
    st = fit_standardization(MixedDataset(schema, [[1.0], [2.0], [3.0]], np.zeros((3, 0)), [0, 1, 0]))
    assert st.means[0] == 2.0 and st.std_devs[0] == 1.0
    st = fit_standardization(MixedDataset(schema, [[5.0], [5.0]], np.zeros((2, 0)), [0, 1]))
    assert st.means[0] == 5.0 and st.std_devs[0] == 1e-8
    with pytest.raises(UsageError):
        fit_standardization(MixedDataset(schema, np.zeros((0, 1)), np.zeros((0, 0)), []))


def test_encoded_columns_are_standardized(rng):
    schema = MixedSchema(["a", "b"], [], "y", ["0", "1"])
    X = rng.normal(7.0, 3.0, size=(1000, 2))
    ds = MixedDataset(schema, X, np.zeros((1000, 0)), rng.integers(2, size=1000))
    Z = encode_dataset(ds, fit_standardization(ds))
    np.testing.assert_allclose(Z.mean(axis=0), 0.0, atol=1e-10)
    np.testing.assert_allclose(Z.std(axis=0, ddof=1), 1.0, atol=1e-10)


def test_encode_example():
    schema = MixedSchema(["a"], [("c", ["x", "y", "z"])], "t", ["0", "1"])
    st = StandardizationStats(np.array([2.0]), np.array([1.0]))
    np.testing.assert_array_equal(encode(MixedSample((2.0,), (1,)), st, schema), [0.0, 0.0, 1.0, 0.0])
    assert st.inverse(np.array([0.0]))[0] == 2.0
    st2 = StandardizationStats(np.array([3.0]), np.array([2.0]))
    assert st2.inverse(np.array([0.0]))[0] == 3.0


def test_encode_decode_round_trip():
    ds, schema = generate_synthetic(d_n=3, cat_sizes=(2, 5), n_samples=200, seed=1)
    st = fit_standardization(ds)
    X = encode_dataset(ds, st)
    for i in range(len(ds)):
        s = decode(X[i], st, schema)
        np.testing.assert_allclose(s.numerics, ds[i].numerics, rtol=1e-12, atol=1e-12)
        assert s.categoricals == ds[i].categoricals
    layout = schema.layout
    for i in range(layout.d_c):
        np.testing.assert_array_equal(X[:, layout.block_slice(i)].sum(axis=1), 1.0)


def test_decode_rejects_bad_vectors():
    schema = small_schema()
    st = StandardizationStats(np.zeros(2), np.ones(2))
    with pytest.raises(DataError):
        decode(np.zeros(4), st, schema)
    with pytest.raises(DataError):
        decode(np.array([np.nan, 0, 1, 0, 0]), st, schema)


def test_argmax_blocks_tie_break_and_relaxed():
    lay = Layout(0, (2, 3))
    np.testing.assert_array_equal(lay.argmax_blocks(np.array([0.5, 0.5, 0.2, 0.7, 0.1])), [0, 1])
    batch = np.array([[0.1, 0.9, 0.3, 0.3, 0.3], [1.0, 0.0, 0.0, 0.0, 1.0]])
    np.testing.assert_array_equal(lay.argmax_blocks(batch), [[1, 0], [0, 2]])


def test_layout_one_hot_and_slices():
    lay = Layout(2, (3, 2))
    assert lay.width == 7 and lay.cat_width == 5
    np.testing.assert_array_equal(lay.block_starts, [0, 3])
    assert lay.block_slice(1) == slice(5, 7)
    np.testing.assert_array_equal(lay.one_hot([2, 0]), [0, 0, 1, 1, 0])


def test_dataset_validation():
    schema = small_schema()
    with pytest.raises(DataError):
        MixedDataset(schema, [[1.0, 2.0]], [[3]], [0])
    with pytest.raises(DataError):
        MixedDataset(schema, [[1.0, np.inf]], [[0]], [0])
    with pytest.raises(DataError):
        MixedDataset(schema, [[1.0, 2.0]], [[0]], [2])
    with pytest.raises(DataError):
        MixedDataset(schema, [[1.0, 2.0, 3.0]], [[0]], [0])


def test_synthetic_is_deterministic(tmp_path):
    a, _ = generate_synthetic(seed=3, n_samples=300)
    b, _ = generate_synthetic(seed=3, n_samples=300)
    a.to_csv(tmp_path / "a.csv")
    b.to_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    c, _ = generate_synthetic(seed=4, n_samples=300)
    assert not np.array_equal(a.numerics, c.numerics)


def test_synthetic_default_shape_and_planted_rule():
    ds, schema = generate_synthetic()
    assert (schema.d_n, schema.d_c, len(ds)) == (13, 7, 5000)
    assert schema.cat_sizes == (10,) * 7
    assert np.mean(ds.planted_labels == ds.labels) > 0.85
    # numerics depend on the categories
    col = ds.numerics[:, 0]
    means = [col[ds.categoricals[:, 0] == c].mean() for c in range(10)
             if np.sum(ds.categoricals[:, 0] == c) > 20]
    assert np.ptp(means) > 0.0


def test_split_and_subsets():
    ds, _ = generate_synthetic(n_samples=100, seed=0)
    tr, te = train_test_split(ds, 0.8, 0)
    assert (len(tr), len(te)) == (80, 20)
    tr2, _ = train_test_split(ds, 0.8, 0)
    np.testing.assert_array_equal(tr.numerics, tr2.numerics)
    with pytest.raises(UsageError):
        train_test_split(ds, 1.0)
    assert len(ds[:10]) == 10 and isinstance(ds[3], MixedSample)
    assert list(ds[:2]) == [ds[0], ds[1]]
    assert len(MixedDataset.from_samples(list(ds[:5]), ds.schema)) == 5


def test_synthetic_rejects_bad_spec():
    with pytest.raises(UsageError):
        generate_synthetic(n_samples=5)
    with pytest.raises(UsageError):
        generate_synthetic(cat_sizes=(1,))
