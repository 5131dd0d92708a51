import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mcrage.denoiser import Checkpoint, TrainConfig, init_params
from mcrage.diffusion import linear_schedule
from mcrage.rebalance import (
    EmptyGroupWarning,
    RebalancePlan,
    make_f1_probe,
    mcrage,
    smote,
    undersample_balance,
)
from mcrage.schema import ColumnSchema, Dataset, GroupIndexMap, group_stats
from oracles import in_convex_hull

SCHED = linear_schedule(12, 0.3, 0.9)
SCHEMA = ColumnSchema(("a", "b"), ("sex",), "y", attribute_levels=(("M", "F"),), label_levels=("0", "1"))
GMAP = GroupIndexMap((2, 2))


def grouped(counts, seed=0):
    """Dataset whose group g = y + 2*sex has counts[g] rows."""
    rng = np.random.default_rng(seed)
    gids = np.repeat(np.arange(4), counts)
    rng.shuffle(gids)
    n = gids.size
    X = rng.standard_normal((n, 2)) + np.c_[gids, -gids]
    return Dataset(X, (gids // 2)[:, None], gids % 2, SCHEMA)


def untrained():
    return Checkpoint(init_params(2, 4, e=4, hidden=8, seed=0, T_prime=SCHED.T_prime), epoch=0)


def test_plan_from_counts():
    plan = RebalancePlan.from_counts([40, 30, 20, 10])
    assert plan.deficits.tolist() == [0, 10, 20, 30] and plan.majority == 0
    assert plan.total == 60
    with pytest.raises(ValueError):
        RebalancePlan(np.array([1, 0]), 0)


@settings(deadline=None, max_examples=60)
@given(st.lists(st.integers(0, 50), min_size=2, max_size=8))
def test_plan_balances_every_group(counts):
    plan = RebalancePlan.from_counts(counts)
    after = np.asarray(counts) + plan.deficits
    assert np.all(after == max(counts))
    assert plan.deficits.min() == 0


def test_mcrage_fills_deficits_and_preserves_originals():
    ds = grouped([40, 30, 20, 10])
    res = mcrage(ds, GMAP, SCHED, checkpoint=untrained(), seed=1)
    out = res.dataset
    assert group_stats(out, GMAP).counts.tolist() == [40, 40, 40, 40]
    flags = out.synthetic_flags()
    assert flags.sum() == 60 and not flags[: ds.n].any()
    orig = out.originals()
    assert orig.features.tobytes() == ds.features.tobytes()
    assert np.array_equal(orig.labels, ds.labels) and np.array_equal(orig.attributes, ds.attributes)
    synth_gids = GMAP.group_ids(out)[flags]
    assert np.bincount(synth_gids, minlength=4).tolist() == [0, 10, 20, 30]
    assert np.all(np.diff(synth_gids) >= 0)


def test_mcrage_balanced_input_adds_nothing():
    ds = grouped([15, 15, 15, 15])
    res = mcrage(ds, GMAP, SCHED, checkpoint=untrained())
    assert res.dataset.n == ds.n and res.plan.total == 0


def test_mcrage_is_deterministic():
    ds = grouped([20, 5, 5, 10])
    a = mcrage(ds, GMAP, SCHED, checkpoint=untrained(), seed=7).dataset
    b = mcrage(ds, GMAP, SCHED, checkpoint=untrained(), seed=7).dataset
    assert np.array_equal(a.features, b.features)


def test_mcrage_empty_group_warns_and_still_generates():
    ds = grouped([20, 5, 0, 10])
    with pytest.warns(EmptyGroupWarning):
        res = mcrage(ds, GMAP, SCHED, checkpoint=untrained())
    assert res.empty_groups == [2]
    assert group_stats(res.dataset, GMAP).counts.tolist() == [20, 20, 20, 20]


def test_mcrage_checkpoint_shape_mismatch():
    ds = grouped([20, 5, 5, 10])
    bad = Checkpoint(init_params(3, 4, e=4, hidden=8, seed=0, T_prime=12), epoch=0)
    with pytest.raises(ValueError, match="d=3"):
        mcrage(ds, GMAP, SCHED, checkpoint=bad)
    with pytest.raises(ValueError):
        mcrage(ds, GMAP, SCHED)


def test_mcrage_trains_with_probe():
    ds = grouped([30, 20, 12, 8])
    probe = make_f1_probe(ds, GMAP, SCHED, validation_fraction=0.2, seed=0)
    cfg = TrainConfig(epochs=4, batch_size=32, hidden=8, embed_dim=4, checkpoint_every=2)
    res = mcrage(ds, GMAP, SCHED, cfg=cfg, probe=probe)
    assert [e for e, _ in res.training.probes] == [2, 4]
    assert 0.0 <= res.checkpoint.f1 <= 1.0
    assert group_stats(res.dataset, GMAP).counts.tolist() == [30] * 4


# -- SMOTE -------------------------------------------------------------------


def test_smote_rows_lie_on_witness_segments():
    ds = grouped([40, 30, 20, 10])
    gids = GMAP.group_ids(ds)
    plan = RebalancePlan.from_dataset(ds, GMAP)
    res = smote(ds, gids, 5, plan, seed=0)
    synth = res.dataset.features[ds.n :]
    assert synth.shape == (60, 2)
    assert np.all((res.lam >= 0) & (res.lam <= 1))
    want = ds.features[res.base] + res.lam[:, None] * (ds.features[res.neighbor] - ds.features[res.base])
    np.testing.assert_allclose(synth, want, atol=1e-12)
    assert np.all(gids[res.base] == gids[res.neighbor])
    assert np.all(res.base != res.neighbor)
    assert group_stats(res.dataset, GMAP).counts.tolist() == [40] * 4


def test_smote_neighbours_are_nearest():
    ds = grouped([40, 30, 20, 10], seed=4)
    gids = GMAP.group_ids(ds)
    res = smote(ds, gids, 3, RebalancePlan.from_dataset(ds, GMAP), seed=2)
    for b, j in zip(res.base, res.neighbor):
        members = np.flatnonzero(gids == gids[b])
        dist = np.linalg.norm(ds.features[members] - ds.features[b], axis=1)
        rank = np.sum(dist < np.linalg.norm(ds.features[j] - ds.features[b]) - 1e-12)
        assert rank <= 3  # self is rank 0


def test_smote_two_point_group_and_hull():
    ds = grouped([12, 2, 12, 12])
    gids = GMAP.group_ids(ds)
    res = smote(ds, gids, 5, RebalancePlan.from_dataset(ds, GMAP), seed=0)
    pts = ds.features[gids == 1]
    synth = res.dataset.features[ds.n :]
    # all new rows for the two-point group lie on the segment between its points
    d = pts[1] - pts[0]
    rel = synth - pts[0]
    cross = rel[:, 0] * d[1] - rel[:, 1] * d[0]
    np.testing.assert_allclose(cross, 0, atol=1e-10)

    big = grouped([40, 20, 20, 20], seed=1)
    g2 = GMAP.group_ids(big)
    r2 = smote(big, g2, 5, RebalancePlan.from_dataset(big, GMAP), seed=0)
    new = r2.dataset.features[big.n :]
    new_g = GMAP.group_ids(r2.dataset)[big.n :]
    for g in (1, 2, 3):
        assert in_convex_hull(new[new_g == g], big.features[g2 == g]).all()


def test_smote_single_row_group_fails():
    ds = grouped([12, 1, 12, 12])
    with pytest.raises(ValueError, match="group 1"):
        smote(ds, GMAP.group_ids(ds), 5, RebalancePlan.from_dataset(ds, GMAP), seed=0)


# -- undersampling ----------------------------------------------------------


def _by_sex(m, f):
    n = m + f
    return Dataset(np.arange(2 * n, dtype=float).reshape(n, 2), np.r_[np.zeros(m), np.ones(f)].astype(int)[:, None],
                   np.arange(n) % 2, SCHEMA)


@pytest.mark.parametrize("m,f,target", [(50, 48, 48), (30, 30, 30), (100, 10, 10)])
def test_undersample_balance(m, f, target):
    ds = _by_sex(m, f)
    out = undersample_balance(ds, "sex", seed=0)
    assert np.bincount(out.attributes[:, 0]).tolist() == [target, target]
    # a subset of the original rows, in original order
    assert np.all(np.diff(out.features[:, 0]) > 0)
    assert set(out.features[:, 0]) <= set(ds.features[:, 0])
    if m == f:
        assert out.features.tobytes() == ds.features.tobytes()
