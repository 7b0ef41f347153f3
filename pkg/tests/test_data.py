"""Dataset generation, IDX/CIFAR parsing, and corrupt-file rejection."""

import struct

import numpy as np
import pytest

from ibrar.data import (CIFAR_RECORD, DataError, Dataset, DatasetSource,
                        IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC, load_cifar_binary,
                        load_dataset, load_idx_pair, read_idx, synthetic_blobs,
                        write_idx_images, write_idx_labels)


class TestSynthetic:
    def test_shapes_and_split(self):
        train, test = synthetic_blobs(classes=4, per_class=20, size=8, seed=0)
        assert train.images.shape == (80, 1, 8, 8)
        assert test.images.shape == (16, 1, 8, 8)
        assert train.classes == 4
        assert set(np.unique(train.labels)) == {0, 1, 2, 3}

    def test_same_seed_byte_identical(self):
        a, _ = synthetic_blobs(classes=3, per_class=10, size=8, seed=7)
        b, _ = synthetic_blobs(classes=3, per_class=10, size=8, seed=7)
        assert a.images.tobytes() == b.images.tobytes()
        assert a.labels.tobytes() == b.labels.tobytes()

    def test_different_seed_differs(self):
        a, _ = synthetic_blobs(classes=3, per_class=10, size=8, seed=7)
        b, _ = synthetic_blobs(classes=3, per_class=10, size=8, seed=8)
        assert a.images.tobytes() != b.images.tobytes()

    def test_zero_noise_gives_constant_distinct_patterns(self):
        train, _ = synthetic_blobs(classes=2, per_class=10, size=8, noise=0.0, seed=1)
        assert len(train) == 20
        per_class = {}
        for c in (0, 1):
            imgs = train.images[train.labels == c]
            assert (imgs == imgs[0]).all()  # constant within a class
            per_class[c] = imgs[0]
        assert not np.array_equal(per_class[0], per_class[1])

    def test_values_in_unit_range_on_8bit_grid(self):
        train, _ = synthetic_blobs(classes=3, per_class=5, size=8, seed=2)
        assert train.images.min() >= 0.0 and train.images.max() <= 1.0
        back = np.round(train.images * 255.0)
        np.testing.assert_allclose(back, train.images * 255.0, atol=1e-4)

    def test_source_validation(self):
        with pytest.raises(ValueError):
            DatasetSource(kind="synthetic", classes=1)
        with pytest.raises(ValueError):
            DatasetSource(kind="synthetic", noise=-0.1)
        with pytest.raises(ValueError):
            DatasetSource(kind="webcam")
        with pytest.raises(ValueError):
            DatasetSource(kind="idx")  # missing paths
        with pytest.raises(ValueError):
            DatasetSource(kind="cifar")  # missing path


class TestIdxRoundTrip:
    def test_images_and_labels_round_trip(self, tmp_path, rng):
        images = rng.integers(0, 256, (12, 8, 8)).astype(np.uint8)
        labels = rng.integers(0, 10, 12)
        ip, lp = tmp_path / "im.idx", tmp_path / "lb.idx"
        write_idx_images(ip, images)
        write_idx_labels(lp, labels)
        ds = load_idx_pair(ip, lp)
        np.testing.assert_array_equal(np.round(ds.images[:, 0] * 255).astype(np.uint8),
                                      images)
        np.testing.assert_array_equal(ds.labels, labels)

    def test_synthetic_survives_the_idx_path(self, tmp_path):
        train, _ = synthetic_blobs(classes=3, per_class=8, size=8, seed=3)
        u8 = np.round(train.images[:, 0] * 255.0).astype(np.uint8)
        ip, lp = tmp_path / "im.idx", tmp_path / "lb.idx"
        write_idx_images(ip, u8)
        write_idx_labels(lp, train.labels)
        ds = load_idx_pair(ip, lp, classes=3)
        np.testing.assert_array_equal(ds.images, train.images)
        np.testing.assert_array_equal(ds.labels, train.labels)

    def test_read_idx_reports_magic(self, tmp_path, rng):
        ip = tmp_path / "im.idx"
        write_idx_images(ip, rng.integers(0, 256, (3, 4, 4)).astype(np.uint8))
        _, magic = read_idx(ip)
        assert magic == IDX_IMAGES_MAGIC


class TestCifar:
    def make_file(self, path, n, rng, label_override=None):
        records = bytearray()
        for i in range(n):
            label = rng.integers(0, 10) if label_override is None else label_override
            records.append(int(label))
            records.extend(rng.integers(0, 256, CIFAR_RECORD - 1).astype(np.uint8).tobytes())
        path.write_bytes(bytes(records))

    def test_round_trip(self, tmp_path, rng):
        p = tmp_path / "batch.bin"
        self.make_file(p, 5, rng)
        ds = load_cifar_binary(p)
        assert ds.images.shape == (5, 3, 32, 32)
        assert ds.images.min() >= 0.0 and ds.images.max() <= 1.0
        assert (ds.labels < 10).all()

    def test_split_80_20(self, tmp_path, rng):
        p = tmp_path / "batch.bin"
        self.make_file(p, 10, rng)
        train, test = load_dataset(DatasetSource(kind="cifar", path=str(p)))
        assert len(train) == 8 and len(test) == 2


def corrupt_files(tmp_path, rng):
    """The ten canned corrupt datasets: (name, loader thunk) pairs."""
    good_images = rng.integers(0, 256, (6, 4, 4)).astype(np.uint8)
    good_labels = rng.integers(0, 10, 6)

    def idx_pair(name, images_bytes=None, labels_bytes=None, classes=10):
        ip, lp = tmp_path / f"{name}_im.idx", tmp_path / f"{name}_lb.idx"
        if images_bytes is None:
            write_idx_images(ip, good_images)
        else:
            ip.write_bytes(images_bytes)
        if labels_bytes is None:
            write_idx_labels(lp, good_labels)
        else:
            lp.write_bytes(labels_bytes)
        return lambda: load_idx_pair(ip, lp, classes=classes)

    def idx_images_bytes(images=None):
        images = good_images if images is None else images
        return (struct.pack(">IIII", IDX_IMAGES_MAGIC, *images.shape)
                + images.tobytes())

    cases = []
    # 1. images file with the wrong magic
    cases.append(("images_bad_magic",
                  idx_pair("c1", images_bytes=struct.pack(">IIII", 0x00000805, 6, 4, 4)
                           + good_images.tobytes())))
    # 2. labels file that is actually an images file
    cases.append(("labels_wrong_type",
                  idx_pair("c2", labels_bytes=idx_images_bytes())))
    # 3. images header cut off inside the dimension fields
    cases.append(("images_header_truncated",
                  idx_pair("c3", images_bytes=struct.pack(">II", IDX_IMAGES_MAGIC, 6))))
    # 4. images payload shorter than the declared shape
    cases.append(("images_payload_truncated",
                  idx_pair("c4", images_bytes=idx_images_bytes()[:-7])))
    # 5. labels payload with trailing bytes
    cases.append(("labels_trailing_bytes",
                  idx_pair("c5", labels_bytes=struct.pack(">II", IDX_LABELS_MAGIC, 6)
                           + good_labels.astype(np.uint8).tobytes() + b"xx")))
    # 6. image/label count mismatch
    cases.append(("count_mismatch",
                  idx_pair("c6", labels_bytes=struct.pack(">II", IDX_LABELS_MAGIC, 4)
                           + good_labels[:4].astype(np.uint8).tobytes())))
    # 7. label value outside the class range
    bad_labels = good_labels.copy()
    bad_labels[2] = 17
    cases.append(("label_out_of_range",
                  idx_pair("c7", labels_bytes=struct.pack(">II", IDX_LABELS_MAGIC, 6)
                           + bad_labels.astype(np.uint8).tobytes())))
    # 8. empty CIFAR file
    p8 = tmp_path / "c8.bin"
    p8.write_bytes(b"")
    cases.append(("cifar_empty", lambda: load_cifar_binary(p8)))
    # 9. CIFAR size not a whole number of records
    p9 = tmp_path / "c9.bin"
    p9.write_bytes(bytes(CIFAR_RECORD + 100))
    cases.append(("cifar_partial_record", lambda: load_cifar_binary(p9)))
    # 10. CIFAR record with a label byte outside the class range
    p10 = tmp_path / "c10.bin"
    rec = bytearray(CIFAR_RECORD)
    rec[0] = 11
    p10.write_bytes(bytes(rec))
    cases.append(("cifar_label_out_of_range", lambda: load_cifar_binary(p10)))
    return cases


class TestCorruptFiles:
    def test_all_ten_rejected_with_distinct_diagnostics(self, tmp_path, rng):
        messages = {}
        for name, loader in corrupt_files(tmp_path, rng):
            with pytest.raises(DataError) as err:
                loader()
            messages[name] = str(err.value)
        assert len(messages) == 10
        assert len(set(messages.values())) == 10

    def test_wrong_magic_message_names_the_observed_magic(self, tmp_path, rng):
        cases = dict(corrupt_files(tmp_path, rng))
        with pytest.raises(DataError, match="0x00000805"):
            cases["images_bad_magic"]()

    def test_out_of_range_label_is_named(self, tmp_path, rng):
        cases = dict(corrupt_files(tmp_path, rng))
        with pytest.raises(DataError, match=r"label 17"):
            cases["label_out_of_range"]()
        with pytest.raises(DataError, match=r"label 11"):
            cases["cifar_label_out_of_range"]()


class TestLoadDataset:
    def test_synthetic_dispatch(self):
        train, test = load_dataset(DatasetSource(kind="synthetic", classes=3,
                                                 per_class=6, size=8))
        assert train.classes == 3 and len(test) == 3

    def test_idx_dispatch_splits_80_20(self, tmp_path, rng):
        images = rng.integers(0, 256, (10, 4, 4)).astype(np.uint8)
        labels = rng.integers(0, 10, 10)
        ip, lp = tmp_path / "im.idx", tmp_path / "lb.idx"
        write_idx_images(ip, images)
        write_idx_labels(lp, labels)
        train, test = load_dataset(DatasetSource(kind="idx", images_path=str(ip),
                                                 labels_path=str(lp)))
        assert len(train) == 8 and len(test) == 2
        np.testing.assert_array_equal(test.labels, labels[8:])

    def test_single_record_cannot_split(self, tmp_path, rng):
        ip, lp = tmp_path / "im.idx", tmp_path / "lb.idx"
        write_idx_images(ip, rng.integers(0, 256, (1, 4, 4)).astype(np.uint8))
        write_idx_labels(lp, np.array([3]))
        with pytest.raises(DataError, match="at least 2"):
            load_dataset(DatasetSource(kind="idx", images_path=str(ip),
                                       labels_path=str(lp)))
