import gzip
import struct

import numpy as np
import pytest

from poisonbench.data import (
    GaussianSpec,
    LabeledDataset,
    OrderingPlan,
    PoisonBudget,
    assemble_poisoned,
    load_csv,
    load_idx,
    make_binary_subset,
    save_csv,
    split,
    synth_gaussian,
)
from poisonbench.errors import (
    BadFractions,
    BadMagic,
    BudgetViolation,
    CountMismatch,
    EmptyClass,
    TruncatedFile,
)


def write_idx_pair(tmp_path, pixels, labels, image_magic=0x803, label_magic=0x801,
                   label_count=None, truncate=False, gz=False):
    n, rows, cols = pixels.shape
    img = struct.pack(">IIII", image_magic, n, rows, cols) + pixels.astype(np.uint8).tobytes()
    if truncate:
        img = img[:-3]
    lab = struct.pack(">II", label_magic, label_count if label_count is not None else n)
    lab += bytes(int(v) for v in labels)
    opener = gzip.open if gz else open
    suffix = ".gz" if gz else ""
    ip, lp = tmp_path / f"img{suffix}", tmp_path / f"lab{suffix}"
    with opener(ip, "wb") as f:
        f.write(img)
    with opener(lp, "wb") as f:
        f.write(lab)
    return ip, lp


@pytest.fixture
def tiny_idx(tmp_path):
    pixels = np.arange(3 * 2 * 2).reshape(3, 2, 2) * 20
    labels = [1, 7, 3]
    return tmp_path, pixels, labels


def test_load_idx_maps_bytes(tiny_idx):
    tmp_path, pixels, labels = tiny_idx
    ip, lp = write_idx_pair(tmp_path, pixels, labels)
    ds = load_idx(ip, lp)
    assert ds.n == 3 and ds.d == 4 and ds.num_classes == 10
    np.testing.assert_allclose(ds.X[0], pixels[0].ravel() / 255.0)
    np.testing.assert_array_equal(ds.y, labels)
    assert ds.unit_range


def test_load_idx_gzip(tiny_idx):
    tmp_path, pixels, labels = tiny_idx
    ip, lp = write_idx_pair(tmp_path, pixels, labels, gz=True)
    ds = load_idx(ip, lp)
    assert ds.n == 3


def test_load_idx_bad_magic(tiny_idx):
    tmp_path, pixels, labels = tiny_idx
    ip, lp = write_idx_pair(tmp_path, pixels, labels, image_magic=0x804)
    with pytest.raises(BadMagic):
        load_idx(ip, lp)


def test_load_idx_count_mismatch(tiny_idx):
    tmp_path, pixels, labels = tiny_idx
    ip, lp = write_idx_pair(tmp_path, pixels, labels + [2], label_count=4)
    with pytest.raises(CountMismatch):
        load_idx(ip, lp)


def test_load_idx_truncated(tiny_idx):
    tmp_path, pixels, labels = tiny_idx
    ip, lp = write_idx_pair(tmp_path, pixels, labels, truncate=True)
    with pytest.raises(TruncatedFile):
        load_idx(ip, lp)


def test_idx_deterministic_hash(tiny_idx):
    tmp_path, pixels, labels = tiny_idx
    ip, lp = write_idx_pair(tmp_path, pixels, labels)
    assert load_idx(ip, lp).content_hash() == load_idx(ip, lp).content_hash()


def small_ds(n=10, d=3, C=2, seed=0, unit=False):
    rng = np.random.default_rng(seed)
    X = rng.uniform(0, 1, size=(n, d)) if unit else rng.normal(size=(n, d))
    y = rng.integers(0, C, size=n)
    y[0], y[1] = 0, C - 1  # every class endpoint present
    return LabeledDataset(X, y, C, unit_range=unit)


def test_binary_subset_remaps():
    ds = small_ds(n=30, C=4, seed=1)
    sub = make_binary_subset(ds, 1, 3)
    assert sub.num_classes == 2
    assert set(np.unique(sub.y)) <= {0, 1}
    assert sub.n == int(np.sum((ds.y == 1) | (ds.y == 3)))


def test_binary_subset_empty_class():
    ds = LabeledDataset(np.zeros((4, 2)), np.array([0, 0, 1, 1]), 3)
    with pytest.raises(EmptyClass):
        make_binary_subset(ds, 0, 2)


def test_binary_subset_identity_on_binary():
    ds = small_ds(n=12, C=2, seed=2)
    sub = make_binary_subset(ds, 0, 1)
    np.testing.assert_array_equal(np.sort(sub.y), np.sort(ds.y))
    assert sub.n == ds.n


def test_synth_gaussian_deterministic():
    spec = GaussianSpec(25, 2, ((0.0, 0.0), (4.0, 4.0)), 1.0, seed=7)
    a, b = synth_gaussian(spec), synth_gaussian(spec)
    np.testing.assert_array_equal(a.X, b.X)
    assert a.n == 50


def test_synth_gaussian_zero_std():
    spec = GaussianSpec(5, 2, ((0.0, 0.0), (1.0, 1.0)), 0.0, seed=0)
    ds = synth_gaussian(spec)
    np.testing.assert_allclose(ds.X[ds.y == 0], 0.0)
    np.testing.assert_allclose(ds.X[ds.y == 1], 1.0)


def test_split_sizes_and_disjoint():
    ds = small_ds(n=100, seed=3)
    tr, va, te = split(ds, (0.8, 0.1, 0.1), seed=5)
    assert (tr.n, va.n, te.n) == (80, 10, 10)
    stacked = np.vstack([tr.X, va.X, te.X])
    assert np.unique(stacked, axis=0).shape[0] == np.unique(ds.X, axis=0).shape[0]


def test_split_all_train_is_whole_set():
    ds = small_ds(n=20, seed=4)
    tr, va, te = split(ds, (1.0, 0.0, 0.0), seed=9)
    assert tr.n == ds.n and va.n == 0 and te.n == 0
    assert sorted(map(tuple, tr.X)) == sorted(map(tuple, ds.X))


def test_split_deterministic():
    ds = small_ds(n=50, seed=5)
    a = split(ds, (0.5, 0.25, 0.25), seed=11)
    b = split(ds, (0.5, 0.25, 0.25), seed=11)
    for pa, pb in zip(a, b):
        np.testing.assert_array_equal(pa.X, pb.X)


def test_split_bad_fractions():
    with pytest.raises(BadFractions):
        split(small_ds(), (0.5, 0.2), seed=0)


def test_assemble_zero_eps_identity():
    ds = small_ds(n=40, unit=True, seed=6)
    union, plan = assemble_poisoned(ds, None, PoisonBudget(0.0, ds.n), seed=1)
    np.testing.assert_array_equal(union.X, ds.X)
    assert union.poison_mask.sum() == 0
    assert plan.reshuffle_each_epoch


def test_assemble_counts_and_mask():
    ds = small_ds(n=1000, unit=True, seed=7)
    budget = PoisonBudget(0.03, ds.n)
    poison = ds.take(np.arange(budget.count))
    union, _ = assemble_poisoned(ds, poison, budget, seed=2)
    assert union.n == 1030
    assert union.poison_mask.sum() == 30 == budget.count


def test_assemble_poison_last():
    ds = small_ds(n=50, unit=True, seed=8)
    budget = PoisonBudget(0.1, ds.n)
    poison = ds.take(np.arange(budget.count))
    union, plan = assemble_poisoned(ds, poison, budget, poison_last=True)
    assert not plan.reshuffle_each_epoch
    np.testing.assert_array_equal(plan.permutation[-budget.count:],
                                  np.arange(ds.n, ds.n + budget.count))


def test_assemble_budget_violation():
    ds = small_ds(n=50, unit=True, seed=9)
    poison = ds.take(np.arange(3))
    with pytest.raises(BudgetViolation):
        assemble_poisoned(ds, poison, PoisonBudget(0.1, ds.n))


def test_ordering_plan_bijection_check():
    with pytest.raises(ValueError):
        OrderingPlan(np.array([0, 0, 1]))


def test_csv_roundtrip(tmp_path):
    ds = small_ds(n=8, d=4, unit=True, seed=10)
    withmask = LabeledDataset(ds.X, ds.y, ds.num_classes, unit_range=True,
                              poison_mask=np.array([0, 1] * 4, dtype=bool))
    path = tmp_path / "out.csv"
    save_csv(withmask, path)
    back = load_csv(path, num_classes=2, unit_range=True)
    np.testing.assert_allclose(back.X, ds.X)
    np.testing.assert_array_equal(back.y, ds.y)
    np.testing.assert_array_equal(back.poison_mask, withmask.poison_mask)


def test_budget_floor():
    assert PoisonBudget(0.03, 13007).count == 390
    assert PoisonBudget(0.03, 1000).count == 30
    assert PoisonBudget(0.0, 500).count == 0
