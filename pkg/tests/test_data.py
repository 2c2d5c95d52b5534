"""Tests for IDX parsing, normalization, task assembly, and batching."""

import gzip

import numpy as np
import pytest

from hslmu.data import (
    DataError,
    generate_demo_digits,
    make_task,
    minibatch_indices,
    normalize,
    parse_idx_images,
    parse_idx_labels,
    write_idx_images,
    write_idx_labels,
)


class TestIdxParsing:
    def test_single_zero_image(self):
        blob = write_idx_images(np.zeros((1, 28, 28), dtype=np.uint8))
        images = parse_idx_images(blob)
        assert images.shape == (1, 28, 28)
        assert np.all(images == 0)

    def test_round_trip_bit_exact(self):
        rng = np.random.default_rng(0)
        images = rng.integers(0, 256, size=(7, 28, 28), dtype=np.uint8)
        labels = rng.integers(0, 10, size=7, dtype=np.uint8)
        np.testing.assert_array_equal(parse_idx_images(write_idx_images(images)), images)
        np.testing.assert_array_equal(parse_idx_labels(write_idx_labels(labels)), labels)

    def test_gzip_accepted(self):
        images = np.arange(28 * 28, dtype=np.uint8).reshape(1, 28, 28)
        np.testing.assert_array_equal(
            parse_idx_images(gzip.compress(write_idx_images(images))), images
        )

    def test_bad_magic_names_offset(self):
        blob = b"\x00\x00\x09\x99" + write_idx_images(np.zeros((1, 2, 2), dtype=np.uint8))[4:]
        with pytest.raises(DataError, match="byte 0"):
            parse_idx_images(blob)

    def test_count_mismatch_rejected(self):
        blob = write_idx_images(np.zeros((3, 4, 4), dtype=np.uint8))[:-5]
        with pytest.raises(DataError, match="payload"):
            parse_idx_images(blob)

    def test_truncated_header(self):
        with pytest.raises(DataError, match="truncated"):
            parse_idx_labels(b"\x00\x00\x08")

    def test_label_out_of_range(self):
        blob = write_idx_labels(np.array([1, 2], dtype=np.uint8))
        corrupted = blob[:-1] + b"\x0b"  # second label becomes 11
        with pytest.raises(DataError, match="byte 9"):
            parse_idx_labels(corrupted)


class TestNormalize:
    def test_endpoints(self):
        assert normalize(0) == -1.0
        assert normalize(255) == 1.0

    def test_interior_value(self):
        np.testing.assert_allclose(normalize(51), -0.6)

    def test_array_stays_in_range(self):
        x = normalize(np.arange(256))
        assert x.min() == -1.0 and x.max() == 1.0
        assert np.all(np.diff(x) > 0)


def demo_raw(train=120, test=30, seed=0):
    tr_img, tr_lab = generate_demo_digits(train, seed)
    te_img, te_lab = generate_demo_digits(test, seed + 1)
    return tr_img, tr_lab, te_img, te_lab


class TestMakeTask:
    def test_row_major_flattening(self):
        tr_img, tr_lab, te_img, te_lab = demo_raw()
        ds = make_task(tr_img, tr_lab, te_img, te_lab, task="smnist")
        np.testing.assert_allclose(ds.X_train[0, 0], normalize(tr_img[0, 0, 0]), atol=1e-7)
        np.testing.assert_allclose(ds.X_train[0, 28], normalize(tr_img[0, 1, 0]), atol=1e-7)
        assert ds.seq_len == 784

    def test_positional_splits_disjoint(self):
        tr_img, tr_lab, te_img, te_lab = demo_raw(train=60)
        ds = make_task(tr_img, tr_lab, te_img, te_lab, task="smnist")
        # 1/6 of the training file validates: 50/10 here, mirroring 50k/10k
        assert len(ds.y_train) == 50 and len(ds.y_val) == 10 and len(ds.y_test) == 30
        np.testing.assert_allclose(ds.X_train[-1], normalize(tr_img[49]).reshape(-1), atol=1e-7)
        np.testing.assert_allclose(ds.X_val[0], normalize(tr_img[50]).reshape(-1), atol=1e-7)

    def test_permuted_variant_is_fixed_rearrangement(self):
        tr_img, tr_lab, te_img, te_lab = demo_raw()
        plain = make_task(tr_img, tr_lab, te_img, te_lab, task="smnist")
        permuted = make_task(tr_img, tr_lab, te_img, te_lab, task="psmnist", perm_seed=5)
        perm = permuted.permutation
        assert sorted(perm.tolist()) == list(range(784))  # bijection
        np.testing.assert_array_equal(permuted.X_train, plain.X_train[:, perm])
        np.testing.assert_array_equal(permuted.X_test, plain.X_test[:, perm])
        # undoing the permutation recovers the raster-order task
        inverse = np.argsort(perm)
        np.testing.assert_array_equal(permuted.X_train[:, inverse], plain.X_train)

    def test_permutation_seed_determinism(self):
        tr_img, tr_lab, te_img, te_lab = demo_raw()
        a = make_task(tr_img, tr_lab, te_img, te_lab, task="psmnist", perm_seed=5)
        b = make_task(tr_img, tr_lab, te_img, te_lab, task="psmnist", perm_seed=5)
        c = make_task(tr_img, tr_lab, te_img, te_lab, task="psmnist", perm_seed=6)
        np.testing.assert_array_equal(a.permutation, b.permutation)
        assert not np.array_equal(a.permutation, c.permutation)

    def test_class_subset_and_downsampling(self):
        tr_img, tr_lab, te_img, te_lab = demo_raw(train=300, test=60)
        ds = make_task(
            tr_img, tr_lab, te_img, te_lab,
            task="smnist", classes=(0, 2), image_size=14, counts=(100, 20, 20),
        )
        assert ds.seq_len == 196
        assert set(np.unique(ds.y_train)) <= {0, 1}  # remapped labels
        assert len(ds.y_train) == 100 and len(ds.y_val) == 20 and len(ds.y_test) == 20
        assert ds.X_train.min() >= -1.0 and ds.X_train.max() <= 1.0

    def test_unknown_task_rejected(self):
        tr_img, tr_lab, te_img, te_lab = demo_raw()
        with pytest.raises(DataError):
            make_task(tr_img, tr_lab, te_img, te_lab, task="rows")

    def test_overdraw_rejected(self):
        tr_img, tr_lab, te_img, te_lab = demo_raw(train=24)
        with pytest.raises(DataError):
            make_task(tr_img, tr_lab, te_img, te_lab, counts=(1000, None, None))


class TestBatching:
    def test_covers_every_index_once(self):
        rng = np.random.default_rng(0)
        seen = np.concatenate(list(minibatch_indices(103, 20, rng)))
        assert sorted(seen.tolist()) == list(range(103))

    def test_shuffle_is_seed_deterministic(self):
        a = np.concatenate(list(minibatch_indices(50, 7, np.random.default_rng(3))))
        b = np.concatenate(list(minibatch_indices(50, 7, np.random.default_rng(3))))
        c = np.concatenate(list(minibatch_indices(50, 7, np.random.default_rng(4))))
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)


class TestFetch:
    """Digest verification exercised against file:// mirrors (no network)."""

    def make_mirror(self, tmp_path, payload):
        mirror = tmp_path / "mirror"
        mirror.mkdir()
        (mirror / "train-images-idx3-ubyte.gz").write_bytes(payload)
        return f"file://{mirror}/"

    def test_verified_download_lands_on_disk(self, tmp_path):
        import gzip as gz
        import hashlib

        from hslmu.data import fetch_mnist

        payload = gz.compress(write_idx_images(np.zeros((2, 4, 4), dtype=np.uint8)))
        url = self.make_mirror(tmp_path, payload)
        out = tmp_path / "data"
        files = {"train-images-idx3-ubyte.gz": hashlib.md5(payload).hexdigest()}
        fetch_mnist(str(out), mirrors=[url], files=files)
        stored = (out / "train-images-idx3-ubyte.gz").read_bytes()
        assert stored == payload
        assert parse_idx_images(stored).shape == (2, 4, 4)

    def test_digest_mismatch_leaves_nothing(self, tmp_path):
        from hslmu.data import fetch_mnist

        url = self.make_mirror(tmp_path, b"corrupted bytes")
        out = tmp_path / "data"
        files = {"train-images-idx3-ubyte.gz": "0" * 32}
        with pytest.raises(DataError, match="digest mismatch"):
            fetch_mnist(str(out), mirrors=[url], files=files)
        assert not (out / "train-images-idx3-ubyte.gz").exists()

    def test_unreachable_mirrors_explain_manual_placement(self, tmp_path):
        from hslmu.data import fetch_mnist

        with pytest.raises(DataError, match="manually"):
            fetch_mnist(
                str(tmp_path / "data"),
                mirrors=[f"file://{tmp_path}/missing/"],
                files={"train-images-idx3-ubyte.gz": "0" * 32},
            )


class TestDemoDigits:
    def test_deterministic_and_balanced(self):
        img1, lab1 = generate_demo_digits(30, seed=5)
        img2, lab2 = generate_demo_digits(30, seed=5)
        np.testing.assert_array_equal(img1, img2)
        np.testing.assert_array_equal(lab1, lab2)
        counts = np.bincount(lab1, minlength=3)
        assert counts.min() == counts.max() == 10

    def test_classes_are_visually_distinct(self):
        # mean images of different classes should differ a lot more than
        # samples within one class differ from their own mean
        imgs, labs = generate_demo_digits(150, seed=2)
        means = np.stack([imgs[labs == c].mean(axis=0) for c in range(3)])
        between = min(
            np.abs(means[a] - means[b]).mean() for a in range(3) for b in range(a + 1, 3)
        )
        assert between > 10.0  # intensity units out of 255
