import struct

import numpy as np
import pytest

from lomarlab.data import (
    DataShard,
    IdxFormatError,
    PartitionPlan,
    load_idx,
    major_count,
    partition,
    synth_gaussian,
)


def write_idx_pair(tmp_path, images, labels):
    """Write a minimal IDX image/label file pair and return the paths."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    img_path = tmp_path / "imgs.idx3-ubyte"
    lab_path = tmp_path / "labs.idx1-ubyte"
    img_path.write_bytes(struct.pack(">IIII", 2051, n, rows, cols) + images.tobytes())
    lab_path.write_bytes(struct.pack(">II", 2049, len(labels)) + labels.tobytes())
    return img_path, lab_path


class TestIdx:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(4)
        images = rng.integers(0, 256, size=(5, 4, 3), dtype=np.uint8)
        labels = np.array([0, 1, 2, 1, 0], dtype=np.uint8)
        ip, lp = write_idx_pair(tmp_path, images, labels)
        x, y = load_idx(ip, lp)
        assert x.shape == (5, 12)
        assert x.dtype == np.float64
        assert np.array_equal(y, labels.astype(np.int64))
        assert np.allclose(x, images.reshape(5, 12) / 255.0)
        assert x.max() <= 1.0 and x.min() >= 0.0

    def test_bad_image_magic(self, tmp_path):
        ip, lp = write_idx_pair(tmp_path, np.zeros((1, 2, 2), dtype=np.uint8), [0])
        ip.write_bytes(struct.pack(">IIII", 1234, 1, 2, 2) + bytes(4))
        with pytest.raises(IdxFormatError):
            load_idx(ip, lp)

    def test_bad_label_magic(self, tmp_path):
        ip, lp = write_idx_pair(tmp_path, np.zeros((1, 2, 2), dtype=np.uint8), [0])
        lp.write_bytes(struct.pack(">II", 99, 1) + bytes(1))
        with pytest.raises(IdxFormatError):
            load_idx(ip, lp)

    def test_truncated_pixels(self, tmp_path):
        ip, lp = write_idx_pair(tmp_path, np.zeros((2, 2, 2), dtype=np.uint8), [0, 1])
        ip.write_bytes(struct.pack(">IIII", 2051, 2, 2, 2) + bytes(5))
        with pytest.raises(IdxFormatError):
            load_idx(ip, lp)

    def test_count_mismatch(self, tmp_path):
        ip, lp = write_idx_pair(tmp_path, np.zeros((2, 2, 2), dtype=np.uint8), [0, 1, 1])
        with pytest.raises(IdxFormatError):
            load_idx(ip, lp)


class TestSynth:
    def test_shapes_and_label_counts(self):
        x, y = synth_gaussian(3, 5, per_label_count=40, spread=1.0, seed=9)
        assert x.shape == (120, 5)
        assert y.shape == (120,)
        assert np.array_equal(np.bincount(y), [40, 40, 40])

    def test_seed_reproducibility(self):
        a = synth_gaussian(2, 4, 30, 0.5, seed=12)
        b = synth_gaussian(2, 4, 30, 0.5, seed=12)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
        c = synth_gaussian(2, 4, 30, 0.5, seed=13)
        assert not np.array_equal(a[0], c[0])

    def test_zero_spread_puts_samples_on_the_means(self):
        x, y = synth_gaussian(2, 2, 10, 0.0, seed=1, radius=2.0)
        for lab in (0, 1):
            pts = x[y == lab]
            assert np.allclose(pts, pts[0])
        d = np.linalg.norm(x[y == 0][0] - x[y == 1][0])
        assert d == pytest.approx(4.0, rel=1e-12)

    def test_class_separation_scales_with_radius(self):
        x, y = synth_gaussian(2, 3, 200, 0.1, seed=3, radius=5.0)
        m0 = x[y == 0].mean(axis=0)
        m1 = x[y == 1].mean(axis=0)
        assert np.linalg.norm(m0 - m1) == pytest.approx(10.0, rel=0.05)

    def test_validation(self):
        with pytest.raises(ValueError):
            synth_gaussian(1, 3, 10, 1.0, seed=0)
        with pytest.raises(ValueError):
            synth_gaussian(2, 3, 10, -1.0, seed=0)


class TestMajorCount:
    def test_zero_lam(self):
        assert major_count(0.0, 600) == 0

    def test_exact_fraction(self):
        assert major_count(0.5, 600) == 300
        assert major_count(0.9, 20) == 18

    def test_rounds_up(self):
        assert major_count(0.34, 10) == 4

    def test_near_integer_products_do_not_overshoot(self):
        # 0.9 * 500 is 450.00000000000006 in floats; the count must stay 450
        assert major_count(0.9, 500) == 450
        assert major_count(0.7, 10) == 7


class TestPartition:
    def make_pool(self, seed=6, per_label=50, labels=3):
        return synth_gaussian(labels, 4, per_label, 1.0, seed=seed)

    def test_counts_and_owners(self):
        x, y = self.make_pool()
        plan = PartitionPlan(num_clients=10, samples_per_client=12, lam=0.0)
        shards = partition(x, y, plan, seed=1)
        assert len(shards) == 10
        assert [s.owner for s in shards] == list(range(10))
        assert all(len(s) == 12 for s in shards)

    def test_disjoint_when_pool_is_large_enough(self):
        x, y = self.make_pool(per_label=100)
        plan = PartitionPlan(num_clients=10, samples_per_client=12, lam=0.0,
                             allow_replacement=False)
        shards = partition(x, y, plan, seed=2)
        seen = np.concatenate([s.features for s in shards])
        # all drawn rows distinct -> no sample was handed to two clients
        assert np.unique(seen, axis=0).shape[0] == seen.shape[0]
        assert not any(s.used_replacement for s in shards)

    def test_major_label_fraction(self):
        x, y = self.make_pool(per_label=200)
        plan = PartitionPlan(num_clients=6, samples_per_client=40, lam=0.8)
        shards = partition(x, y, plan, seed=3)
        for shard in shards:
            major = np.bincount(shard.labels, minlength=3).max()
            assert major >= 32  # ceil(0.8 * 40)

    def test_round_robin_major_assignment(self):
        x, y = self.make_pool(per_label=200)
        plan = PartitionPlan(num_clients=6, samples_per_client=20, lam=0.9)
        shards = partition(x, y, plan, seed=4)
        for i, shard in enumerate(shards):
            counts = np.bincount(shard.labels, minlength=3)
            assert counts.argmax() == i % 3

    def test_explicit_major_assignment(self):
        x, y = self.make_pool(per_label=100)
        plan = PartitionPlan(num_clients=4, samples_per_client=10, lam=0.9,
                             major_label_assignment=(2, 2, 0, 1))
        shards = partition(x, y, plan, seed=5)
        for want, shard in zip((2, 2, 0, 1), shards):
            assert np.bincount(shard.labels, minlength=3).argmax() == want

    def test_replacement_flagged_on_shortfall(self):
        x, y = self.make_pool(per_label=10)
        plan = PartitionPlan(num_clients=8, samples_per_client=10, lam=0.9)
        shards = partition(x, y, plan, seed=6)
        assert all(len(s) == 10 for s in shards)
        assert any(s.used_replacement for s in shards)

    def test_no_replacement_raises_on_shortfall(self):
        x, y = self.make_pool(per_label=10)
        plan = PartitionPlan(num_clients=8, samples_per_client=10, lam=0.9,
                             allow_replacement=False)
        with pytest.raises(ValueError):
            partition(x, y, plan, seed=7)

    def test_absent_major_label_raises(self):
        x, y = self.make_pool()
        plan = PartitionPlan(num_clients=2, samples_per_client=5, lam=0.5,
                             major_label_assignment=(0, 7))
        with pytest.raises(ValueError):
            partition(x, y, plan, seed=8)

    def test_seed_reproducibility(self):
        x, y = self.make_pool()
        plan = PartitionPlan(num_clients=5, samples_per_client=9, lam=0.4)
        a = partition(x, y, plan, seed=11)
        b = partition(x, y, plan, seed=11)
        for sa, sb in zip(a, b):
            assert np.array_equal(sa.features, sb.features)
            assert np.array_equal(sa.labels, sb.labels)

    def test_plan_validation(self):
        with pytest.raises(ValueError):
            PartitionPlan(num_clients=0, samples_per_client=5)
        with pytest.raises(ValueError):
            PartitionPlan(num_clients=1, samples_per_client=5, lam=1.0)
        with pytest.raises(ValueError):
            PartitionPlan(num_clients=2, samples_per_client=5,
                          major_label_assignment=(0,))

    def test_shard_validation(self):
        with pytest.raises(ValueError):
            DataShard(np.zeros((3, 2)), np.zeros(2, dtype=int), owner=0)
        with pytest.raises(ValueError):
            DataShard(np.zeros(3), np.zeros(3, dtype=int), owner=0)
