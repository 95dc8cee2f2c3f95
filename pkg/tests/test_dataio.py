import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dynint import dataio
from dynint.dataio import (BinEdges, CTREncoder, DataError, Dataset, FieldSpec, build_vocab,
                           fit_bins, log_square, parse_schema, read_cache, read_csv, split,
                           split_indices, split_sizes, write_cache)
from dynint.ndcore import ConfigurationError, make_rng


def test_fit_bins_quartiles():
    edges = fit_bins(np.arange(1, 9), 4)
    np.testing.assert_array_equal(edges.edges, [2.5, 4.5, 6.5])


def test_fit_bins_degenerate():
    assert fit_bins(np.full(10, 3.0), 5).edges.size == 0
    assert fit_bins(np.arange(1, 9), 1).edges.size == 0
    with pytest.raises(ConfigurationError):
        fit_bins([], 3)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 8), st.integers(1, 12), st.integers(0, 2**31 - 1))
def test_fit_bins_equal_counts_on_distinct_values(b, k, seed):
    rng = np.random.default_rng(seed)
    values = rng.permutation(np.arange(b * k, dtype=float)) * 0.37 - 5.0
    edges = fit_bins(values, b)
    counts = np.bincount(edges.bucketize(values), minlength=edges.num_buckets)
    np.testing.assert_array_equal(counts, np.full(b, k))


def test_bucketize_clamps_outside_range():
    edges = BinEdges(np.array([1.0, 2.0]))
    np.testing.assert_array_equal(edges.bucketize([-100.0, 1.0, 1.5, 2.0, 100.0]), [0, 1, 1, 2, 2])


def test_log_square_values():
    assert log_square(1.0) == 0
    assert log_square(math.e) == 2
    assert log_square(0.0) == -28


def test_build_vocab_threshold():
    vocab = build_vocab(["a"] * 25 + ["b"] * 19, 20)
    assert vocab.tokens == ["a"]
    assert vocab.cardinality == 2
    assert vocab.encode("b") == vocab.oov_index == 1
    assert build_vocab(["x"] * 20, 20).tokens == ["x"]
    assert build_vocab(list("cabca"), 1).tokens == ["c", "a", "b"]


def test_split_sizes_and_determinism():
    assert split_sizes(10, (0.7, 0.1, 0.2)) == [7, 1, 2]
    a = split_indices(10, (0.7, 0.1, 0.2), make_rng(3))
    b = split_indices(10, (0.7, 0.1, 0.2), make_rng(3))
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)
    np.testing.assert_array_equal(np.sort(np.concatenate(a)), np.arange(10))
    with pytest.raises(ConfigurationError):
        split_sizes(10, (0.5, 0.1, 0.2))


def test_split_dataset_partition():
    X = np.arange(20).reshape(10, 2) % 5
    ds = Dataset(X, np.arange(10) % 2, (5, 5))
    parts = split(ds, rng=make_rng(0))
    assert [len(p) for p in parts] == [7, 1, 2]
    rows = sorted(map(tuple, np.concatenate([p.X for p in parts])))
    assert rows == sorted(map(tuple, X))


def test_dataset_rejects_out_of_range_index():
    with pytest.raises(DataError):
        Dataset(np.array([[3]]), np.array([1]), (3,))


SCHEMA = """
# toy schema
label = y
cat = categorical min_count=2
num = continuous num_bins=2
ls = continuous log_square=true min_count=1
"""


def test_parse_schema():
    schema = parse_schema(SCHEMA)
    assert schema.label == "y"
    assert schema.names == ["cat", "num", "ls"]
    assert schema.fields[0].min_count == 2
    assert schema.fields[1].num_bins == 2
    assert schema.fields[2].log_square_transform


@pytest.mark.parametrize("text", [
    "label = y\nc = categorical bogus=1\n",
    "label = y\nc = nominal\n",
    "c = categorical\n",
    "label = y\nc = categorical\nc = categorical\n",
])
def test_parse_schema_errors(text):
    with pytest.raises(ConfigurationError):
        parse_schema(text)


CSV = "y,cat,num,ls\n1,a,1.0,1\n0,a,2.0,0\n1,b,3.0,2.7\n0,c,,5\n"


def test_read_csv_and_encode():
    schema = parse_schema(SCHEMA)
    raw, y = read_csv(io.StringIO(CSV), schema)
    np.testing.assert_array_equal(y, [1, 0, 1, 0])
    enc = CTREncoder(schema.fields).fit(raw)
    # cat: only "a" kept; num: edge 1.5 plus a missing bucket; ls: tokens 0, -28, 1, 3
    assert enc.cardinalities_ == (2, 3, 5)
    X = enc.transform(raw)
    np.testing.assert_array_equal(X[:, 0], [0, 0, 1, 1])
    np.testing.assert_array_equal(X[:, 1], [0, 1, 1, 2])
    np.testing.assert_array_equal(X[:, 2], [0, 1, 2, 3])
    # re-encoding the fitting sample is idempotent and total
    np.testing.assert_array_equal(enc.transform(raw), X)
    other = np.array([["zzz", "-50", "1e9"]], dtype=object)
    np.testing.assert_array_equal(enc.transform(other), [[1, 0, 4]])


def test_encoder_state_round_trip_and_params():
    schema = parse_schema(SCHEMA)
    raw, _ = read_csv(io.StringIO(CSV), schema)
    enc = CTREncoder(schema.fields).fit(raw)
    again = CTREncoder.from_state(enc.to_state())
    np.testing.assert_array_equal(again.transform(raw), enc.transform(raw))
    assert enc.get_params()["fields"] == schema.fields


def test_read_csv_reports_line_number():
    schema = parse_schema(SCHEMA)
    bad = "y,cat,num,ls\n1,a,1,1\n0,a\n"
    with pytest.raises(DataError, match="line 3"):
        read_csv(io.StringIO(bad), schema)
    with pytest.raises(DataError, match="line 2"):
        read_csv(io.StringIO("y,cat,num,ls\n2,a,1,1\n"), schema)


def test_read_csv_unknown_schema_field():
    schema = parse_schema("label = y\nmissing = categorical\n")
    with pytest.raises(ConfigurationError):
        read_csv(io.StringIO(CSV), schema)


def _datasets(seed=0):
    rng = make_rng(seed)
    cards = (4, 7)
    out = {}
    for name, n in zip(dataio.SPLIT_NAMES, (30, 5, 0)):
        X = np.stack([rng.integers(0, c, size=n) for c in cards], axis=1).reshape(n, 2)
        out[name] = Dataset(X, rng.integers(0, 2, size=n), cards)
    return out


def test_cache_round_trip_and_determinism(tmp_path):
    ds = _datasets()
    write_cache(tmp_path / "a.dyni", ds, {"seed": 1})
    write_cache(tmp_path / "b.dyni", ds, {"seed": 1})
    raw = (tmp_path / "a.dyni").read_bytes()
    assert raw[:4] == b"DYNI"
    assert raw == (tmp_path / "b.dyni").read_bytes()
    back, meta = read_cache(tmp_path / "a.dyni")
    assert meta["seed"] == 1
    for name in dataio.SPLIT_NAMES:
        np.testing.assert_array_equal(back[name].X, ds[name].X)
        np.testing.assert_array_equal(back[name].y, ds[name].y)
        assert back[name].cardinalities == (4, 7)


def test_cache_bad_magic(tmp_path):
    (tmp_path / "x").write_bytes(b"NOPE" + b"\0" * 20)
    with pytest.raises(DataError):
        read_cache(tmp_path / "x")


def test_field_spec_validation():
    with pytest.raises(ConfigurationError):
        FieldSpec("x", kind="continuous", num_bins=0)
