import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from moofs.dataset import (
    ColumnSpec,
    DatasetError,
    FeatureSchema,
    NumericDataset,
    apply_minmax,
    binarize_labels,
    encode,
    kfold_indices,
    load_csv,
    load_encoded,
    load_schema,
    normalize_minmax,
    save_encoded,
    sidecar_dict,
    stratified_split,
    stratified_split_indices,
)
from synthetic import kdd_rows

KDD_LINE = ("0,{proto},http,SF,181,5450,0,0,0,0,0,1,0,0,0,0,0,0,0,0,0,0,8,8,0.00,0.00,0.00,0.00,"
            "1.00,0.00,0.00,9,9,1.00,0.00,0.11,0.00,0.00,0.00,0.00,0.00,{label}")


def tiny_schema(n_features=2):
    cols = tuple(ColumnSpec(f"x{i}", "continuous") for i in range(n_features))
    return FeatureSchema("tiny", cols + (ColumnSpec("y", "label"),), {"a": 1, "b": 2, "c": 3, "d": 4})


def tiny_ds(labels, n_features=2):
    labels = np.asarray(labels)
    values = np.arange(len(labels) * n_features, dtype=float).reshape(len(labels), n_features)
    return NumericDataset(values, labels, tiny_schema(n_features))


@pytest.fixture
def kdd():
    return load_schema("kdd99")


def write(tmp_path, lines, name="data.txt"):
    p = tmp_path / name
    p.write_text("\n".join(lines) + "\n")
    return p


# -- schemas -------------------------------------------------------------------

def test_builtin_schemas_shape():
    kdd = load_schema("kdd99")
    assert kdd.n_columns == 42 and len(kdd.features) == 41
    assert kdd.feature_names[4:6] == ["src_bytes", "dst_bytes"]
    nsl = load_schema("nsl_kdd")
    assert nsl.n_columns == 43 and len(nsl.features) == 41
    kyoto = load_schema("kyoto2006")
    assert kyoto.n_columns == 24 and len(kyoto.features) == 23
    assert kyoto.delimiter == "\t"


def test_schema_roundtrip_through_json(tmp_path, kdd):
    p = tmp_path / "s.json"
    p.write_text(json.dumps(kdd.to_dict()))
    assert load_schema(p) == kdd


def test_schema_rejects_two_labels():
    cols = (ColumnSpec("a", "label"), ColumnSpec("b", "label"), ColumnSpec("c", "continuous"))
    with pytest.raises(DatasetError, match="label"):
        FeatureSchema("bad", cols, {"x": 1})


def test_missing_schema_file():
    with pytest.raises(DatasetError, match="schema not found"):
        load_schema("/nonexistent/schema.json")


# -- loading -------------------------------------------------------------------

def test_three_line_excerpt(tmp_path, kdd):
    p = write(tmp_path, [KDD_LINE.format(proto=p, label="normal.") for p in ("tcp", "udp", "icmp")])
    raw = load_csv(p, kdd)
    assert raw.n_rows == 3
    assert len(raw.columns) == 42


def test_short_row_reports_line(tmp_path, kdd):
    good = KDD_LINE.format(proto="tcp", label="normal.")
    short = ",".join(good.split(",")[:40])
    p = write(tmp_path, [good, good, short])
    with pytest.raises(DatasetError, match=r":3: expected 42 columns, found 40"):
        load_csv(p, kdd)


def test_header_row_rejected(tmp_path, kdd):
    header = ",".join(c.name for c in kdd.columns)
    p = write(tmp_path, [header, KDD_LINE.format(proto="tcp", label="normal.")])
    with pytest.raises(DatasetError, match="'duration'"):
        load_csv(p, kdd)


def test_empty_and_missing_files(tmp_path, kdd):
    p = write(tmp_path, [""])
    with pytest.raises(DatasetError, match="empty"):
        load_csv(p, kdd)
    with pytest.raises(DatasetError, match="no such file"):
        load_csv(tmp_path / "nope.txt", kdd)


def test_blank_lines_skipped(tmp_path, kdd):
    line = KDD_LINE.format(proto="tcp", label="normal.")
    p = write(tmp_path, [line, "", line])
    assert load_csv(p, kdd).n_rows == 2


# -- encoding ------------------------------------------------------------------

def test_protocol_codes_and_labels(tmp_path, kdd):
    lines = [KDD_LINE.format(proto="icmp", label="smurf."),
             KDD_LINE.format(proto="tcp", label="neptune."),
             KDD_LINE.format(proto="udp", label="normal.")]
    ds = encode(load_csv(write(tmp_path, lines), kdd))
    proto = kdd.feature_index("protocol_type")
    assert ds.values[:, proto].tolist() == [3.0, 1.0, 2.0]
    assert ds.labels.tolist() == [2, 2, 1]
    assert ds.values.shape == (3, 41)


def test_categories_numbered_by_first_appearance(tmp_path, kdd):
    lines = [KDD_LINE.format(proto="tcp", label="normal.").replace(",http,", f",{s},")
             for s in ("smtp", "http", "smtp", "ftp")]
    ds = encode(load_csv(write(tmp_path, lines), kdd))
    assert ds.values[:, kdd.feature_index("service")].tolist() == [1.0, 2.0, 1.0, 3.0]
    assert dict(ds.encodings["service"]) == {"smtp": 1, "http": 2, "ftp": 3}


def test_test_file_reuses_training_codes(tmp_path, kdd):
    tr = [KDD_LINE.format(proto="tcp", label="normal.").replace(",http,", f",{s},")
          for s in ("smtp", "http")]
    te = [KDD_LINE.format(proto="tcp", label="normal.").replace(",http,", f",{s},")
          for s in ("http", "gopher")]
    train = encode(load_csv(write(tmp_path, tr, "tr"), kdd))
    with pytest.warns(UserWarning, match="gopher"):
        test = encode(load_csv(write(tmp_path, te, "te"), kdd), tables=train.encodings)
    assert test.values[:, kdd.feature_index("service")].tolist() == [2.0, 0.0]


def test_kyoto_unknown_attack_label(tmp_path):
    schema = load_schema("kyoto2006")
    row = ["1"] * 24
    for j, c in enumerate(schema.columns):
        if c.kind == "categorical":
            row[j] = "x"
    lines = []
    for lab in ("1", "-1", "-2"):
        row[schema.label_column] = lab
        lines.append("\t".join(row))
    ds = encode(load_csv(write(tmp_path, lines), schema))
    assert ds.labels.tolist() == [1, 2, 3]
    assert ds.class_names[3] == "unknown_attack"
    assert ds.n_features == 23


def test_kdd_unlisted_attack_dropped(tmp_path, kdd, caplog):
    lines = [KDD_LINE.format(proto="tcp", label="normal."),
             KDD_LINE.format(proto="tcp", label="mailbomb.")]
    ds = encode(load_csv(write(tmp_path, lines), kdd))
    assert ds.n_samples == 1
    assert "mailbomb" in caplog.text


def test_unknown_label_raises_with_line(tmp_path):
    schema = tiny_schema()
    p = write(tmp_path, ["1,2,a", "3,4,zzz"])
    with pytest.raises(DatasetError, match=r":2.*zzz"):
        encode(load_csv(p, schema))


def test_bad_number_reports_line(tmp_path):
    p = write(tmp_path, ["1,2,a", "3,oops,b"])
    with pytest.raises(DatasetError, match=r":2"):
        encode(load_csv(p, tiny_schema()))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.sampled_from(["aol", "auth", "bgp", "http", "x.y"]), min_size=1, max_size=30))
def test_encoding_injective(services):
    import tempfile
    from pathlib import Path
    schema = load_schema("kdd99")
    with tempfile.TemporaryDirectory() as d:
        lines = [KDD_LINE.format(proto="tcp", label="normal.").replace(",http,", f",{s},")
                 for s in services]
        ds = encode(load_csv(write(Path(d), lines), schema))
    codes = ds.values[:, schema.feature_index("service")]
    mapping = {}
    for s, c in zip(services, codes.tolist()):
        assert mapping.setdefault(s, c) == c
    assert len(set(mapping.values())) == len(mapping)


# -- normalization -------------------------------------------------------------

def test_minmax_examples():
    view = normalize_minmax(np.array([[0.0, 7.0], [5.0, 7.0], [10.0, 7.0]]))
    assert view.values[:, 0].tolist() == [0.0, 0.5, 1.0]
    assert view.values[:, 1].tolist() == [0.0, 0.0, 0.0]
    assert apply_minmax(np.array([[3.0]]), np.array([2.0]), np.array([4.0]))[0, 0] == 0.5


def test_minmax_clamps_test_values():
    out = apply_minmax(np.array([[-1.0], [9.0]]), np.array([0.0]), np.array([4.0]))
    assert out.ravel().tolist() == [0.0, 1.0]


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=2, max_size=20))
def test_minmax_roundtrip(col):
    x = np.array(col)[:, None]
    view = normalize_minmax(x)
    back = view.denormalize()
    if np.ptp(x) > 0:
        np.testing.assert_allclose(back, x, rtol=1e-9, atol=1e-9 * max(1.0, np.abs(x).max()))


# -- splits --------------------------------------------------------------------

def test_stratified_split_proportions():
    ds = tiny_ds([1] * 90 + [2] * 10)
    train, test = stratified_split(ds, 0.2, seed=5)
    assert np.bincount(test.labels).tolist()[1:] == [18, 2]
    assert train.n_samples == 80
    a = stratified_split_indices(ds.labels, 0.2, 5)
    b = stratified_split_indices(ds.labels, 0.2, 5)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_split_half_of_four():
    tr, te = stratified_split_indices(np.ones(4, int), 0.5, 0)
    assert len(tr) == len(te) == 2


def test_split_singleton_class_goes_to_train():
    with pytest.warns(UserWarning, match="single sample"):
        tr, te = stratified_split_indices(np.array([1, 1, 1, 1, 2]), 0.5, 0)
    assert 4 in tr


def test_kfold_singletons_and_sizes():
    folds = kfold_indices(np.ones(10, int), 10, 0)
    assert all(len(va) == 1 for _, va in folds)
    folds = kfold_indices(np.arange(103) % 3, 10, 0)
    assert {len(va) for _, va in folds} <= {10, 11}


def test_kfold_rejects_bad_k():
    with pytest.raises(ValueError):
        kfold_indices(np.ones(5, int), 1, 0)
    with pytest.raises(ValueError):
        kfold_indices(np.ones(5, int), 6, 0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(1, 4), min_size=2, max_size=60), st.integers(2, 10), st.integers(0, 99))
def test_kfold_is_partition(labels, k, seed):
    labels = np.array(labels)
    k = min(k, len(labels))
    folds = kfold_indices(labels, k, seed)
    seen = np.zeros(len(labels), int)
    for tr, va in folds:
        assert len(np.intersect1d(tr, va)) == 0
        assert len(tr) + len(va) == len(labels)
        seen[va] += 1
    assert (seen == 1).all()
    again = kfold_indices(labels, k, seed)
    assert all(np.array_equal(a[1], b[1]) for a, b in zip(folds, again))


def test_binarize_examples():
    assert binarize_labels(tiny_ds([1, 2, 2, 3]), 2).labels.tolist() == [0, 1, 1, 0]
    assert binarize_labels(tiny_ds([4, 4]), 4).labels.tolist() == [1, 1]
    with pytest.warns(UserWarning, match="does not occur"):
        out = binarize_labels(tiny_ds([1, 2]), 3)
    assert out.labels.tolist() == [0, 0]
    with pytest.raises(ValueError):
        binarize_labels(tiny_ds([1, 2]), 99)


# -- persistence ---------------------------------------------------------------

def test_encoded_roundtrip(tmp_path, kdd):
    p = write(tmp_path, kdd_rows(50, 3))
    ds = encode(load_csv(p, kdd))
    save_encoded(ds, tmp_path / "enc.csv")
    side = json.loads(json.dumps(sidecar_dict(ds)))
    back = load_encoded(tmp_path / "enc.csv", side)
    assert np.array_equal(back.values, ds.values)
    assert np.array_equal(back.labels, ds.labels)
    assert back.content_hash() == ds.content_hash()
    first = (tmp_path / "enc.csv").read_bytes()
    save_encoded(back, tmp_path / "enc.csv")
    assert (tmp_path / "enc.csv").read_bytes() == first
    assert len(first.splitlines()[0].split(b",")) == 42


def test_dataset_is_read_only():
    ds = tiny_ds([1, 2])
    with pytest.raises(ValueError):
        ds.values[0, 0] = 5.0


def test_no_warnings_on_clean_file(tmp_path, kdd):
    p = write(tmp_path, kdd_rows(30, 4))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        encode(load_csv(p, kdd))


def test_subsample_exact_size_and_strata():
    from moofs.dataset import subsample_stratified
    ds = tiny_ds([1] * 70 + [2] * 25 + [3] * 4 + [4] * 1)
    sub = subsample_stratified(ds, 20, seed=0)
    assert sub.n_samples == 20
    counts = np.bincount(sub.labels, minlength=5)[1:]
    assert counts.tolist() == [13, 5, 1, 1]  # min-one bumps are paid by the largest class
    assert np.array_equal(sub.values, subsample_stratified(ds, 20, seed=0).values)
