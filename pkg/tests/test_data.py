import numpy as np
import pytest

from trainstab.data import (
    IdxFormatError,
    MixtureSpec,
    augment,
    batch_indices,
    gen_mixture,
    load_idx,
    write_idx,
)
from trainstab.rng import SeedPlan


def test_mixture_determinism(tiny_mixture):
    a_train, a_test = gen_mixture(tiny_mixture)
    b_train, b_test = gen_mixture(tiny_mixture)
    assert np.array_equal(a_train.inputs, b_train.inputs)
    assert np.array_equal(a_test.inputs, b_test.inputs)
    assert np.array_equal(a_train.labels, b_train.labels)


def test_mixture_separable_task_is_learnable():
    # Logistic-regression oracle on a widely separated two-class task.
    from sklearn.linear_model import LogisticRegression

    spec = MixtureSpec(2, 2, 400, 400, 10.0, 0.1, 3)
    train, test = gen_mixture(spec)
    clf = LogisticRegression().fit(train.inputs, train.labels)
    assert clf.score(test.inputs, test.labels) >= 0.99


def test_mixture_zero_noise_collapses_to_means():
    spec = MixtureSpec(3, 5, 30, 9, 2.0, 0.0, 0)
    train, _ = gen_mixture(spec)
    for k in range(3):
        rows = train.inputs[train.labels == k]
        assert np.all(rows == rows[0])


def test_mixture_rejects_too_many_classes():
    with pytest.raises(ValueError):
        MixtureSpec(10, 2, 5, 5, 1.0, 0.1, 0)


def _write_fixture_idx(tmp_path, n=4, rows=3, cols=2):
    images = (np.arange(n * rows * cols) % 256).astype(np.uint8).reshape(n, rows, cols)
    labels = np.array([0, 1, 2, 1], dtype=np.uint8)
    ip = tmp_path / "img.idx"
    lp = tmp_path / "lab.idx"
    import struct

    with open(ip, "wb") as fh:
        fh.write(struct.pack(">BBBBIII", 0, 0, 0x08, 3, n, rows, cols))
        fh.write(images.tobytes())
    with open(lp, "wb") as fh:
        fh.write(struct.pack(">BBBBI", 0, 0, 0x08, 1, n))
        fh.write(labels.tobytes())
    return ip, lp, images, labels


def test_load_idx_fixture(tmp_path):
    ip, lp, images, labels = _write_fixture_idx(tmp_path)
    ds = load_idx(ip, lp)
    assert ds.inputs.shape == (4, 6)
    assert np.array_equal(ds.labels, labels)
    assert np.allclose(ds.inputs, images.reshape(4, 6) / 255.0)


def test_load_idx_truncated(tmp_path):
    ip, lp, _, _ = _write_fixture_idx(tmp_path)
    raw = ip.read_bytes()
    ip.write_bytes(raw[:-3])
    with pytest.raises(IdxFormatError):
        load_idx(ip, lp)


def test_load_idx_bad_magic(tmp_path):
    ip, lp, _, _ = _write_fixture_idx(tmp_path)
    raw = bytearray(ip.read_bytes())
    raw[2] = 0x99
    ip.write_bytes(bytes(raw))
    with pytest.raises(IdxFormatError):
        load_idx(ip, lp)


def test_load_idx_count_mismatch(tmp_path):
    import struct

    ip, _, _, _ = _write_fixture_idx(tmp_path)
    lp = tmp_path / "empty.idx"
    with open(lp, "wb") as fh:
        fh.write(struct.pack(">BBBBI", 0, 0, 0x08, 1, 0))
    with pytest.raises(IdxFormatError):
        load_idx(ip, lp)


def test_write_idx_roundtrip(tmp_path):
    inputs = np.random.default_rng(0).normal(size=(5, 3))
    labels = np.arange(5, dtype=np.float64)
    write_idx(inputs, tmp_path / "x.idx")
    write_idx(labels, tmp_path / "y.idx")
    ds = load_idx(tmp_path / "x.idx", tmp_path / "y.idx")
    assert np.array_equal(ds.inputs, inputs)
    assert np.array_equal(ds.labels, np.arange(5))


def test_batch_indices_full_batch_is_permutation():
    plan = SeedPlan(4)
    idx = batch_indices(10, 10, 5, plan)
    assert sorted(idx.tolist()) == list(range(10))


def test_batch_indices_new_epoch_reshuffles():
    plan = SeedPlan(4)
    n, bs = 64, 8
    spe = n // bs
    first = batch_indices(n, bs, 0, plan)
    next_epoch = batch_indices(n, bs, spe, plan)
    assert not np.array_equal(first, next_epoch)


def test_batch_indices_deterministic():
    plan = SeedPlan(11)
    a = batch_indices(100, 10, 37, plan)
    b = batch_indices(100, 10, 37, plan)
    assert np.array_equal(a, b)


def test_epoch_covers_every_index_once():
    plan = SeedPlan(2)
    n, bs = 48, 8
    seen = np.concatenate(
        [batch_indices(n, bs, s, plan) for s in range(n // bs)]
    )
    assert sorted(seen.tolist()) == list(range(n))


def test_augment_identity_at_zero():
    plan = SeedPlan(0)
    x = np.random.default_rng(0).normal(size=(8, 4))
    out = augment(x, 3, plan, 0.0)
    assert out is x


def test_augment_deterministic():
    plan = SeedPlan(0)
    x = np.zeros((10, 10))
    a = augment(x, 5, plan, 0.1)
    b = augment(x, 5, plan, 0.1)
    assert np.array_equal(a, b)


def test_augment_variance():
    plan = SeedPlan(3)
    x = np.zeros((100, 100))
    out = augment(x, 0, plan, 0.1)
    assert abs(out.var() - 0.01) < 0.001
