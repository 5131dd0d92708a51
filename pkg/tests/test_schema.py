import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mcrage.schema import (
    ColumnSchema,
    Dataset,
    GroupIndexMap,
    IngestionError,
    destandardize,
    group_stats,
    load_csv,
    make_imbalanced,
    standardize,
    train_test_split,
)


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_load_csv_first_appearance_codes(tmp_path):
    p = write(tmp_path, "a,sex,source\n1.5,M,in\n2.0,F,out\n-3,M,out\n")
    ds = load_csv(p, ColumnSchema(("a",), ("sex",), "source"))
    assert ds.d == 1 and ds.attributes.shape == (3, 1)
    assert ds.schema.attribute_levels == (("M", "F"),)
    assert ds.schema.label_levels == ("in", "out")
    assert ds.attributes[:, 0].tolist() == [0, 1, 0]
    assert ds.labels.tolist() == [0, 1, 1]
    assert ds.features[:, 0].tolist() == [1.5, 2.0, -3.0]


def test_load_csv_reuses_persisted_levels(tmp_path):
    p = write(tmp_path, "a,sex,y\n1,F,1\n2,M,0\n")
    sc = ColumnSchema(("a",), ("sex",), "y", attribute_levels=(("M", "F"),), label_levels=("0", "1"))
    ds = load_csv(p, sc)
    assert ds.attributes[:, 0].tolist() == [1, 0]
    assert ds.labels.tolist() == [1, 0]


def test_load_csv_nan_cell_names_location(tmp_path):
    p = write(tmp_path, "a,sex,y\n1,M,0\nNaN,F,1\n")
    with pytest.raises(IngestionError, match=r":3: column 'a'"):
        load_csv(p, ColumnSchema(("a",), ("sex",), "y"))


def test_load_csv_missing_column(tmp_path):
    p = write(tmp_path, "a,y\n1,0\n2,1\n")
    with pytest.raises(IngestionError, match="missing column"):
        load_csv(p, ColumnSchema(("a",), ("sex",), "y"))


def test_load_csv_unparsable(tmp_path):
    p = write(tmp_path, "a,sex,y\n1,M,0\nabc,F,1\n")
    with pytest.raises(IngestionError, match="unparsable"):
        load_csv(p, ColumnSchema(("a",), ("sex",), "y"))


def test_schema_rejects_overlapping_names():
    with pytest.raises(ValueError):
        ColumnSchema(("a", "y"), (), "y")


# -- standardization ---------------------------------------------------------


def _one_col(values):
    sc = ColumnSchema(("v",), (), "y", label_levels=("0", "1"))
    n = len(values)
    return Dataset(np.array(values, float)[:, None], np.zeros((n, 0)), np.arange(n) % 2, sc)


def test_standardize_population_sigma():
    z, sp = standardize(_one_col([1, 2, 3]))
    r = math.sqrt(1.5)  # 1 / sqrt(2/3)
    np.testing.assert_allclose(z.features[:, 0], [-r, 0.0, r], atol=1e-12)
    assert sp.std[0] == pytest.approx(math.sqrt(2 / 3))


def test_standardize_idempotent(tiny_dataset):
    z, _ = standardize(tiny_dataset)
    z2, _ = standardize(z)
    np.testing.assert_allclose(z2.features, z.features, atol=1e-9)
    np.testing.assert_allclose(z.features.mean(0), 0, atol=1e-9)
    np.testing.assert_allclose(z.features.var(0), 1, atol=1e-9)
    assert np.array_equal(z.attributes, tiny_dataset.attributes)


def test_standardize_constant_column():
    with pytest.raises(ValueError, match="'v'"):
        standardize(_one_col([5, 5, 5]))


def test_destandardize_roundtrip_and_points(tiny_dataset):
    z, sp = standardize(tiny_dataset)
    back = destandardize(z, sp)
    np.testing.assert_allclose(back.features, tiny_dataset.features, atol=1e-9)
    pts = z.take([0, 1]).with_features(np.array([[0.0, 0.0], [1.0, 1.0]]))
    out = destandardize(pts, sp).features
    np.testing.assert_allclose(out[0], sp.mean)
    np.testing.assert_allclose(out[1], sp.mean + sp.std)


def test_destandardize_dimension_mismatch(tiny_dataset):
    _, sp = standardize(_one_col([1, 2, 3]))
    with pytest.raises(ValueError):
        destandardize(tiny_dataset, sp)


@settings(deadline=None, max_examples=50)
@given(st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=30))
def test_standardize_inverse_property(vals):
    arr = np.array(vals)
    if arr.std() < 1e-3:
        return
    ds = _one_col(vals)
    z, sp = standardize(ds)
    np.testing.assert_allclose(destandardize(z, sp).features, ds.features, atol=1e-9)


# -- group index map -----------------------------------------------------------


def test_encode_examples():
    assert GroupIndexMap((2,)).encode((1,)) == 1
    g = GroupIndexMap((2, 3))
    assert g.encode((1, 2)) == 5
    assert g.encode((0, 0)) == 0
    assert g.decode(5) == (1, 2)
    assert g.decode(0) == (0, 0)


def test_encode_exhaustive_bijection_2x3():
    g = GroupIndexMap((2, 3))
    ids = [g.encode(t) for t in itertools.product(range(2), range(3))]
    assert sorted(ids) == list(range(6))


def test_decode_binary_cube_in_mixed_radix_order():
    g = GroupIndexMap((2, 2, 2))
    # first component least significant
    expected = [(i & 1, (i >> 1) & 1, (i >> 2) & 1) for i in range(8)]
    assert [g.decode(i) for i in range(8)] == expected


def test_encode_out_of_range():
    g = GroupIndexMap((2, 3))
    with pytest.raises(ValueError):
        g.encode((2, 0))
    with pytest.raises(ValueError):
        g.decode(6)
    with pytest.raises(ValueError):
        GroupIndexMap((1, 3))


cards = st.lists(st.integers(2, 5), min_size=1, max_size=5)


@settings(deadline=None, max_examples=100)
@given(cards)
def test_bijection_property(card):
    g = GroupIndexMap(tuple(card))
    lattice = list(itertools.product(*(range(k) for k in card)))
    assert len(lattice) == g.group_count
    for tup in lattice:
        assert g.decode(g.encode(tup)) == tup
    for i in range(g.group_count):
        assert g.encode(g.decode(i)) == i


@settings(deadline=None, max_examples=60)
@given(cards)
def test_encode_monotone_in_mixed_radix_order(card):
    g = GroupIndexMap(tuple(card))
    # itertools.product varies the last position fastest; reversing each tuple makes
    # the last component the most significant digit, matching encode.
    order = [tuple(reversed(t)) for t in itertools.product(*(range(k) for k in reversed(card)))]
    ids = [g.encode(t) for t in order]
    assert ids == sorted(ids) == list(range(g.group_count))


def test_encode_rows_matches_scalar():
    g = GroupIndexMap((2, 3, 2))
    rows = np.array(list(itertools.product(range(2), range(3), range(2))))
    assert g.encode_rows(rows).tolist() == [g.encode(t) for t in rows]


# -- group stats / resampling ----------------------------------------------------


def _labelled(labels, sex=None):
    labels = np.asarray(labels)
    n = labels.size
    sex = np.zeros(n, int) if sex is None else np.asarray(sex)
    sc = ColumnSchema(("a",), ("sex",), "y", attribute_levels=(("M", "F"),), label_levels=("0", "1"))
    return Dataset(np.arange(n, dtype=float)[:, None], sex[:, None], labels, sc)


def test_group_stats_examples():
    ds = _labelled([0] * 90 + [1] * 10)
    st_ = group_stats(ds, GroupIndexMap((2, 2)))
    assert st_.counts.tolist() == [90, 10, 0, 0]
    np.testing.assert_allclose(st_.proportions[:2], [0.9, 0.1])
    assert st_.majority == 0

    tie = group_stats(_labelled([0] * 50 + [1] * 50), GroupIndexMap((2, 2)))
    assert tie.majority == 0


def test_group_stats_deficits_four_groups():
    labels = [0] * 40 + [1] * 30 + [0] * 20 + [1] * 10
    sex = [0] * 70 + [1] * 30
    st_ = group_stats(_labelled(labels, sex), GroupIndexMap((2, 2)))
    assert st_.counts.tolist() == [40, 30, 20, 10]
    assert st_.deficits.tolist() == [0, 10, 20, 30]


@settings(deadline=None, max_examples=30)
@given(st.permutations(list(range(60))))
def test_group_stats_permutation_invariant(perm):
    rng = np.random.default_rng(0)
    ds = _labelled(rng.integers(0, 2, 60), rng.integers(0, 2, 60))
    g = GroupIndexMap((2, 2))
    assert np.array_equal(group_stats(ds, g).counts, group_stats(ds.take(perm), g).counts)


def test_make_imbalanced_counts_and_determinism():
    ds = _labelled(np.zeros(1792, int), np.repeat([0, 1], 896))
    out = make_imbalanced(ds, "sex", 1, 0.1, seed=3)
    assert out.n == 896 + 89
    again = make_imbalanced(ds, "sex", 1, 0.1, seed=3)
    assert np.array_equal(out.features, again.features)
    full = make_imbalanced(ds, "sex", 1, 1.0, seed=3)
    assert sorted(full.features[:, 0]) == sorted(ds.features[:, 0])
    with pytest.raises(ValueError):
        make_imbalanced(ds, "sex", 1, 0.0, seed=3)


def test_train_test_split_plain_and_stratified():
    ds = _labelled(np.arange(100) % 2)
    tr, te = train_test_split(ds, 0.2, seed=1)
    assert (tr.n, te.n) == (80, 20)
    assert sorted(np.concatenate([tr.features[:, 0], te.features[:, 0]])) == list(range(100))

    ds = _labelled([0] * 90 + [1] * 10)
    gids = GroupIndexMap((2, 2)).group_ids(ds)
    tr, te = train_test_split(ds, 0.2, seed=1, stratify_by=gids)
    assert np.bincount(te.labels).tolist() == [18, 2]
    tr2, te2 = train_test_split(ds, 0.2, seed=1, stratify_by=gids)
    assert np.array_equal(te.features, te2.features)


def test_train_test_split_tiny_stratum():
    ds = _labelled([0] * 10 + [1])
    with pytest.raises(ValueError, match="at least 2"):
        train_test_split(ds, 0.2, seed=0, stratify_by=ds.labels)


PATIENT_COLUMNS = ("HAEMATOCRIT", "HAEMOGLOBINS", "ERYTHROCYTE", "LEUCOCYTE", "THROMBOCYTE", "MCH", "MCHC", "MCV")


def test_patient_csv_shape(patient_csv):
    ds = load_csv(patient_csv, ColumnSchema(PATIENT_COLUMNS, ("SEX",), "SOURCE"))
    assert (ds.n, ds.d) == (3309, 8)
    assert ds.schema.cardinalities == (2, 2)
