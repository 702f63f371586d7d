import io
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flowsage.errors import AddressError, EmptyVocabulary, TooFewSamples
from flowsage.features import (CATEGORICAL_COLUMNS, NUMERIC_COLUMNS, FeaturePipeline, SplitSpec, encode_labels,
                               from_sequence, impute_missing, ip_feature, ip_to_int, normalize, one_hot_encode,
                               prepare_tabular, split_dataset, split_indices, split_sizes, to_sequence,
                               build_vocabulary)
from flowsage.ingest import parse_conn_log
from flowsage.synthetic import make_community_records

from conftest import iot23_text


@pytest.mark.parametrize("addr,value", [
    ("0.0.0.0", 0), ("192.168.0.1", 3232235521), ("255.255.255.255", 4294967295),
    ("::1", 1), ("2001:db8::1", 0x20010DB8000000000000000000000001),
])
def test_ip_to_int(addr, value):
    assert ip_to_int(addr) == value


@pytest.mark.parametrize("bad", ["", "1.2.3", "256.0.0.1", "host.local", "1.2.3.4.5"])
def test_ip_to_int_rejects_malformed(bad):
    with pytest.raises(AddressError):
        ip_to_int(bad)


def test_ipv6_feature_is_folded_to_64_bits():
    assert ip_feature("192.168.0.1") == 3232235521.0
    assert ip_feature("::1") == 1.0
    v = ip_feature("ffff:ffff:ffff:ffff::")
    assert v == float(0xFFFFFFFFFFFFFFFF)


def test_impute_missing():
    recs = parse_conn_log(io.StringIO(iot23_text())).records
    full, partial = impute_missing(recs)
    assert full is recs[0]  # nothing absent, unchanged
    assert partial.duration == 0.0
    assert partial.orig_bytes == 0 and partial.resp_bytes == 0
    assert partial.history == "D"
    no_history = impute_missing([recs[1].__class__(**{**vars(recs[1]), "history": None})])[0]
    assert no_history.history == "missing"


def test_encode_labels():
    vec, unlabeled = encode_labels(["Malicious  PartOfAHorizontalPortScan", "Benign", "-"])
    assert vec.tolist() == [1, 0, 0]
    assert unlabeled == 1


def test_one_hot_examples():
    vocab = ["tcp", "udp", "icmp"]
    assert one_hot_encode(["udp"], vocab).tolist() == [[0, 1, 0, 0]]
    assert one_hot_encode(["sctp"], vocab).tolist() == [[0, 0, 0, 1]]
    single = one_hot_encode(["tcp"] * 3, ["tcp"])
    assert single.shape == (3, 2)
    assert single.tolist() == [[1, 0]] * 3
    with pytest.raises(EmptyVocabulary):
        one_hot_encode(["a"], [])


def test_vocabulary_order_and_cap():
    values = ["b", "a", "c", "a", "b", "d"]
    assert build_vocabulary(values) == ["b", "a", "c", "d"]
    assert build_vocabulary(values, cap=2) == ["b", "a"]


def test_normalize_examples():
    out, stats = normalize(np.array([[0.0], [10.0]]))
    assert out.ravel().tolist() == [-1.0, 1.0]
    assert (stats[0].mean, stats[0].std) == (5.0, 5.0)
    const, _ = normalize(np.array([[7.0], [7.0], [7.0]]))
    assert const.ravel().tolist() == [0.0, 0.0, 0.0]
    x = np.random.default_rng(0).normal(size=(50, 1))
    x = (x - x.mean()) / x.std()
    again, _ = normalize(x)
    assert np.max(np.abs(again - x)) < 1e-12


def test_normalize_uses_fit_rows_only():
    table = np.array([[0.0], [10.0], [1000.0]])
    out, stats = normalize(table, fit_rows=[0, 1])
    assert (stats[0].mean, stats[0].std) == (5.0, 5.0)
    assert out[2, 0] == pytest.approx(199.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(10, 5000), st.integers(0, 2 ** 32))
def test_split_sizes_and_partition(n, seed):
    spec = SplitSpec(seed=seed)
    parts = split_indices(n, spec)
    n_train = int(np.floor(0.7 * n))
    assert len(parts.train) + len(parts.val) == n_train
    assert len(parts.val) == int(np.floor(0.2 * n_train))
    assert len(parts.test) == n - n_train
    union = np.concatenate([parts.train, parts.val, parts.test])
    assert sorted(union.tolist()) == list(range(n))


def test_split_size_examples():
    fit, val, test = split_sizes(1_008_748, SplitSpec())
    assert fit + val == 706_123
    assert test == 302_625 == 137_797 + 161_792 + 3_025 + 11
    fit, val, test = split_sizes(10, SplitSpec())
    assert (fit + val, test, val) == (7, 3, 1)
    with pytest.raises(TooFewSamples):
        split_indices(9, SplitSpec())


def test_split_is_deterministic():
    a = split_indices(1000, SplitSpec(seed=7))
    b = split_indices(1000, SplitSpec(seed=7))
    c = split_indices(1000, SplitSpec(seed=8))
    for x, y in ((a.train, b.train), (a.val, b.val), (a.test, b.test)):
        assert np.array_equal(x, y)
    assert not np.array_equal(a.test, c.test)


def test_sequence_layout():
    row = np.arange(40.0)
    assert to_sequence(row).shape == (40, 1)
    assert np.array_equal(from_sequence(to_sequence(row)), row)
    batch = np.arange(120.0).reshape(3, 40)
    assert to_sequence(batch).shape == (3, 40, 1)
    assert np.array_equal(from_sequence(to_sequence(batch)), batch)


@pytest.fixture(scope="module")
def prepared():
    records = make_community_records(n_nodes=60, seed=3)
    return records, prepare_tabular(records, SplitSpec(seed=5))


def test_feature_table_invariants(prepared):
    _, data = prepared
    pipe = data.pipeline
    m = data.train.matrix
    assert not np.isnan(m).any()
    assert m.shape[1] == pipe.n_features == len(data.train.column_meta)
    num = [i for i, c in enumerate(data.train.column_meta) if c.kind == "numeric"]
    assert len(num) == len(NUMERIC_COLUMNS)
    for j in num:
        col = m[:, j]
        if np.all(col == 0):
            continue  # constant on the fit rows
        assert abs(col.mean()) < 1e-9
        assert abs(col.std() - 1) < 1e-9
    for name in CATEGORICAL_COLUMNS:
        cols = [i for i, c in enumerate(data.train.column_meta) if c.kind == "onehot" and c.name == name]
        for part in (data.train, data.val, data.test):
            assert np.all(part.matrix[:, cols].sum(axis=1) == 1.0)


def test_no_leakage_from_held_out_rows(prepared):
    records, data = prepared
    # refitting on the training rows alone gives identical statistics
    alone = FeaturePipeline().fit([records[i] for i in data.split.train])
    assert alone.norm_stats == data.pipeline.norm_stats
    assert alone.vocabularies == data.pipeline.vocabularies
    # a wildly different held-out row does not move them
    spoiled = list(records)
    i = int(data.split.test[0])
    spoiled[i] = spoiled[i].__class__(**{**vars(spoiled[i]), "orig_bytes": 10 ** 9, "proto": "sctp"})
    again = prepare_tabular(spoiled, SplitSpec(seed=5))
    assert again.pipeline.norm_stats == data.pipeline.norm_stats
    assert again.pipeline.vocabularies == data.pipeline.vocabularies


def test_pipeline_persistence(prepared):
    records, data = prepared
    clone = FeaturePipeline.from_dict(json.loads(json.dumps(data.pipeline.to_dict())))
    again = clone.transform(records)
    full = data.pipeline.transform(records)
    assert np.array_equal(again.matrix, full.matrix)
    assert np.array_equal(again.tokens, full.tokens)


def test_tokens_are_in_vocabulary(prepared):
    _, data = prepared
    t = data.train.tokens
    assert t.shape == (data.train.n_rows, len(NUMERIC_COLUMNS) + len(CATEGORICAL_COLUMNS))
    assert t.min() >= 0 and t.max() < data.pipeline.token_vocab_size


def test_split_dataset_on_table(prepared):
    records, data = prepared
    table = data.pipeline.transform(records)
    train, val, test = split_dataset(table, SplitSpec(seed=5))
    assert np.array_equal(train.matrix, data.train.matrix)
    assert np.array_equal(test.labels, data.test.labels)
    assert val.n_rows == len(data.split.val)


@settings(max_examples=50, deadline=None)
@given(st.floats(-2e9, 2e9), st.floats(1e-2, 1e6), st.integers(5, 400), st.integers(0, 2 ** 32))
def test_normalized_fit_set_is_standard(offset, scale, n, seed):
    col = offset + scale * np.random.default_rng(seed).normal(size=(n, 1))
    out, _ = normalize(col)
    if np.all(out == 0):
        return
    assert abs(out.mean()) < 1e-9
    assert abs(out.std() - 1) < 1e-9
