import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from surropt.data import (
    Dataset,
    SplitSpec,
    generate_simulated,
    inject_group_noise,
    load_csv,
    save_csv,
    split,
    split_indices,
)


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 1)), np.array([1, 0]))
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 1)), np.array([1, -1]), groups=np.array([0]))
    with pytest.raises(ValueError):
        Dataset(np.full((2, 1), 0.5), np.array([1, -1]), binary_mask=np.array([True]))
    with pytest.raises(ValueError):
        Dataset(np.zeros((0, 1)), np.array([], dtype=int))


def test_dataset_is_read_only():
    ds = Dataset(np.zeros((2, 1)), np.array([1, -1]))
    with pytest.raises(ValueError):
        ds.features[0, 0] = 1.0


def test_simulated_defaults_and_counts():
    ds = generate_simulated()
    assert ds.n == 5000 and ds.d == 2
    assert np.sum(ds.labels == 1) == 500


@settings(max_examples=50, deadline=None)
@given(st.integers(10, 3000), st.floats(0.01, 0.99), st.integers(0, 1000))
def test_simulated_class_balance(n, frac, seed):
    ds = generate_simulated(n, frac, seed)
    assert abs(np.sum(ds.labels == 1) / n - frac) <= 1 / n


def test_simulated_positive_moments():
    ds = generate_simulated(100_000, 0.5, seed=1)
    P = ds.features[ds.labels == 1]
    np.testing.assert_allclose(P.mean(axis=0), [0, 0], atol=0.02)
    np.testing.assert_allclose(np.cov(P.T), 0.2 * np.eye(2), atol=0.02)


def test_simulated_negative_mixture():
    ds = generate_simulated(100_000, 0.1, seed=2)
    N = ds.features[ds.labels == -1]
    hi = N[N.sum(axis=1) > 0]
    lo = N[N.sum(axis=1) <= 0]
    assert abs(hi.shape[0] / N.shape[0] - 0.5) < 0.01
    np.testing.assert_allclose(hi.mean(axis=0), [1, 1], atol=0.02)
    np.testing.assert_allclose(lo.mean(axis=0), [-1, -1], atol=0.02)
    np.testing.assert_allclose(np.cov(hi.T), 0.1 * np.eye(2), atol=0.02)


def test_simulated_errors():
    with pytest.raises(ValueError):
        generate_simulated(100, 0.0)
    with pytest.raises(ValueError):
        generate_simulated(5)


def test_simulated_deterministic():
    a, b = generate_simulated(50, 0.2, 4), generate_simulated(50, 0.2, 4)
    assert a.features.tobytes() == b.features.tobytes()


def _write(tmp_path, text):
    p = tmp_path / "d.csv"
    p.write_text(text)
    return p


def test_load_csv_zero_one_labels(tmp_path):
    p = _write(tmp_path, "a,b,y\n1.5,0,1\n2,1,0\n-3,1,1\n")
    ds = load_csv(p, "y", binary_columns=["b"])
    np.testing.assert_array_equal(ds.labels, [1, -1, 1])
    np.testing.assert_array_equal(ds.binary_mask, [False, True])
    assert ds.feature_names == ("a", "b")


def test_load_csv_group_mapping(tmp_path):
    p = _write(tmp_path, "a,sex,y\n1,M,1\n2,F,-1\n3,F,1\n")
    ds = load_csv(p, "y", group_column="sex", group_map={"M": 0, "F": 1})
    np.testing.assert_array_equal(ds.groups, [0, 1, 1])
    assert ds.d == 1


def test_load_csv_header_only(tmp_path):
    with pytest.raises(ValueError, match="empty dataset"):
        load_csv(_write(tmp_path, "a,y\n"), "y")


def test_load_csv_bad_cell_names_line(tmp_path):
    with pytest.raises(ValueError, match="line 3"):
        load_csv(_write(tmp_path, "a,y\n1,1\nfoo,-1\n"), "y")


def test_load_csv_missing_column(tmp_path):
    with pytest.raises(ValueError, match="missing column"):
        load_csv(_write(tmp_path, "a,y\n1,1\n"), "label")


def test_load_csv_bad_label(tmp_path):
    with pytest.raises(ValueError, match="line 2"):
        load_csv(_write(tmp_path, "a,y\n1,2\n"), "y")


def test_csv_roundtrip(tmp_path):
    ds = Dataset(np.array([[0.1, 1.0], [1 / 3, 0.0]]), np.array([1, -1]), np.array([0, 1]),
                 np.array([False, True]), feature_names=("u", "v"))
    p = tmp_path / "rt.csv"
    save_csv(ds, p)
    back = load_csv(p, "label", group_column="group", binary_columns=["v"])
    assert back.features.tobytes() == ds.features.tobytes()
    np.testing.assert_array_equal(back.labels, ds.labels)
    np.testing.assert_array_equal(back.groups, ds.groups)


def _grouped(seed=0, n=60):
    r = np.random.default_rng(seed)
    X = np.c_[r.standard_normal((n, 2)), r.integers(0, 2, size=n)]
    return Dataset(X, np.where(r.random(n) < 0.5, 1, -1), r.integers(0, 2, size=n),
                   np.array([False, False, True]))


def test_noise_fraction_zero_unchanged():
    ds = _grouped()
    out = inject_group_noise(ds, 0, 0.0)
    assert out.features.tobytes() == ds.features.tobytes()


def test_noise_default_flip_prob():
    import inspect
    assert inspect.signature(inject_group_noise).parameters["flip_prob"].default == 0.9


def test_noise_full_flip_on_all_ones_column():
    n = 20
    g = np.r_[np.zeros(10, int), np.ones(10, int)]
    X = np.c_[np.arange(n, dtype=float), np.ones(n)]
    ds = Dataset(X, np.ones(n, int), g, np.array([False, True]))
    out = inject_group_noise(ds, 0, 1.0, 1.0, seed=3)
    np.testing.assert_array_equal(out.features[g == 0, 1], 0.0)
    np.testing.assert_array_equal(out.features[g == 1, 1], 1.0)


@settings(max_examples=40, deadline=None)
@given(st.floats(0, 1), st.integers(0, 1), st.integers(0, 10_000))
def test_noise_leaves_other_rows_and_labels(frac, group, seed):
    ds = _grouped(seed % 7)
    out = inject_group_noise(ds, group, frac, 0.9, seed)
    other = ds.groups != group
    assert out.features[other].tobytes() == ds.features[other].tobytes()
    np.testing.assert_array_equal(out.labels, ds.labels)
    np.testing.assert_array_equal(out.groups, ds.groups)
    changed = np.any(out.features != ds.features, axis=1)
    assert changed.sum() <= int(np.floor(frac * np.sum(ds.groups == group)))
    assert np.all(np.isin(out.features[:, 2], (0.0, 1.0)))


def test_noise_needs_groups():
    with pytest.raises(ValueError):
        inject_group_noise(Dataset(np.zeros((3, 1)), np.ones(3, int)), 0, 0.5)


def test_split_sizes_nine():
    ds = Dataset(np.arange(9.0)[:, None], np.ones(9, int))
    tr, va, te = split(ds, SplitSpec())
    assert (tr.n, va.n, te.n) == (4, 2, 3)


def test_split_deterministic():
    a = split_indices(100, SplitSpec(seed=5))
    b = split_indices(100, SplitSpec(seed=5))
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)


@settings(max_examples=1000, deadline=None)
@given(st.integers(9, 400), st.integers(0, 2**31 - 1))
def test_split_is_partition(n, seed):
    parts = split_indices(n, SplitSpec(seed=seed))
    allidx = np.concatenate(parts)
    assert allidx.size == n
    np.testing.assert_array_equal(np.sort(allidx), np.arange(n))


def test_split_spec_validation():
    with pytest.raises(ValueError):
        SplitSpec(0.5, 0.5, 0.1)
    with pytest.raises(ValueError):
        SplitSpec(0.0, 0.5, 0.5)


def test_split_too_small():
    with pytest.raises(ValueError):
        split(Dataset(np.zeros((2, 1)), np.ones(2, int)), SplitSpec())
