import numpy as np
import pytest
from PIL import Image

from voltavision.data import (FoldPlan, LabeledDataset, PreprocessConfig,
                              bilinear_resize, encode_cifar_record,
                              iterate_batches, kfold_split, load_cifar_binary,
                              load_image_folder, preprocess)
from voltavision.errors import ConfigError, DataError, DecodeError
from voltavision.rng import make_rng

import synthdata


class TestImageFolder:
    def test_loads_sorted_classes_and_counts(self, tiny_folder):
        ds = load_image_folder(tiny_folder)
        assert ds.class_names == ["bluetooth_module", "humidity_sensor", "transistor"]
        assert len(ds) == 24
        assert ds.class_counts() == [8, 8, 8]
        img, label = ds.samples[0]
        assert img.shape == (3, 40, 48)
        assert img.dtype == np.float32
        assert 0.0 <= img.min() and img.max() <= 1.0
        assert label == 0

    def test_order_stable_across_loads(self, tiny_folder):
        a = load_image_folder(tiny_folder)
        b = load_image_folder(tiny_folder)
        assert all(np.array_equal(x[0], y[0]) and x[1] == y[1]
                   for x, y in zip(a.samples, b.samples))

    def test_single_class_rejected(self, tmp_path):
        root = tmp_path / "one"
        synthdata.write_image_folder(root, {"only": 3})
        with pytest.raises(DataError, match="at least 2"):
            load_image_folder(root)

    def test_grayscale_replicated_to_rgb(self, tmp_path):
        root = tmp_path / "gray"
        for name in ("a", "b"):
            (root / name).mkdir(parents=True)
            Image.fromarray(np.full((10, 10), 128, dtype=np.uint8), mode="L").save(
                root / name / "img.png")
        ds = load_image_folder(root)
        img, _ = ds.samples[0]
        assert img.shape == (3, 10, 10)
        assert np.array_equal(img[0], img[1]) and np.array_equal(img[1], img[2])

    def test_corrupt_image_reports_path(self, tmp_path):
        root = tmp_path / "bad"
        synthdata.write_image_folder(root, {"a": 1, "b": 1})
        broken = root / "a" / "broken.png"
        broken.write_bytes(b"not a png at all")
        with pytest.raises(DecodeError, match="broken.png"):
            load_image_folder(root)

    def test_missing_root(self, tmp_path):
        with pytest.raises(DataError):
            load_image_folder(tmp_path / "nope")


class TestCifarBinary:
    def test_single_record(self, tmp_path):
        path = tmp_path / "one.bin"
        path.write_bytes(bytes([7]) + bytes([255]) * 3072)
        ds = load_cifar_binary([path])
        assert len(ds) == 1
        img, label = ds.samples[0]
        assert label == 7
        assert img.shape == (3, 32, 32)
        assert np.all(img == 1.0)

    def test_ten_thousand_record_file(self, tmp_path):
        rng = make_rng(60)
        path = tmp_path / "many.bin"
        n = 10_000
        records = rng.integers(0, 256, (n, 3073)).astype(np.uint8)
        records[:, 0] = rng.integers(0, 10, n)
        path.write_bytes(records.tobytes())
        assert len(load_cifar_binary([path])) == n

    def test_pixel_scaling(self, tmp_path):
        path = tmp_path / "half.bin"
        path.write_bytes(bytes([0]) + bytes([128]) * 3072)
        img, _ = load_cifar_binary([path]).samples[0]
        assert img[0, 0, 0] == pytest.approx(128 / 255, abs=1e-7)

    def test_bad_length_rejected(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(bytes(3072))  # one byte short of a record
        with pytest.raises(DataError, match="record size"):
            load_cifar_binary([path])

    def test_coarse_fine_records(self, tmp_path):
        path = tmp_path / "c100.bin"
        path.write_bytes(bytes([3, 42]) + bytes([10]) * 3072)
        ds = load_cifar_binary([path], coarse_fine=True)
        assert ds.samples[0][1] == 42

    def test_byte_roundtrip(self, tmp_path):
        rng = make_rng(61)
        record = bytes([5]) + rng.integers(0, 256, 3072).astype(np.uint8).tobytes()
        path = tmp_path / "rt.bin"
        path.write_bytes(record)
        img, label = load_cifar_binary([path]).samples[0]
        assert encode_cifar_record(img, label) == record


class TestPreprocess:
    def test_constant_half_maps_to_zero(self):
        img = np.full((3, 20, 17), 0.5, dtype=np.float32)
        out = preprocess(img)
        assert out.shape == (3, 32, 32)
        assert np.max(np.abs(out)) < 1e-6

    def test_already_target_size_identity_resize(self):
        img = make_rng(62).uniform(0, 1, (3, 32, 32)).astype(np.float32)
        out = preprocess(img)
        assert np.allclose(out, (img - 0.5) / 0.5, atol=1e-7)

    def test_checkerboard_corners_preserved(self):
        board = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=np.float32)
        img = np.stack([board] * 3)
        up = bilinear_resize(img, 4, 4)
        assert up[0, 0, 0] == pytest.approx(0.0)
        assert up[0, 0, 3] == pytest.approx(1.0)
        assert up[0, 3, 0] == pytest.approx(1.0)
        assert up[0, 3, 3] == pytest.approx(0.0)
        assert up.min() >= 0.0 and up.max() <= 1.0

    def test_output_range_and_finite(self):
        img = make_rng(63).uniform(0, 1, (3, 45, 37)).astype(np.float32)
        out = preprocess(img)
        assert np.isfinite(out).all()
        assert out.min() >= -1.0 - 1e-6 and out.max() <= 1.0 + 1e-6

    def test_zero_area_rejected(self):
        with pytest.raises(DataError, match="zero-area"):
            preprocess(np.zeros((3, 0, 5), dtype=np.float32))

    def test_std_must_be_positive(self):
        with pytest.raises(ConfigError):
            PreprocessConfig(std=(0.5, 0.0, 0.5))


def _labels_only_dataset(counts):
    samples = [(np.zeros((3, 1, 1), dtype=np.float32), c)
               for c, n in enumerate(counts) for _ in range(n)]
    names = [f"class_{c}" for c in range(len(counts))]
    return LabeledDataset(class_names=names, samples=samples, source="labels")


class TestKFold:
    def test_published_profile_sizes(self):
        # 328 samples split 102/116/110 over 5 folds
        ds = _labels_only_dataset([102, 116, 110])
        plan = kfold_split(ds, k=5, seed=1)
        sizes = sorted(len(f) for f in plan.folds)
        assert sizes == [65, 65, 66, 66, 66]

    def test_partition_properties(self):
        ds = _labels_only_dataset([23, 17, 31])
        plan = kfold_split(ds, k=5, seed=2)
        all_indices = [i for fold in plan.folds for i in fold]
        assert sorted(all_indices) == list(range(len(ds)))
        labels = ds.labels
        for c in range(3):
            per_fold = [sum(1 for i in fold if labels[i] == c) for fold in plan.folds]
            assert max(per_fold) - min(per_fold) <= 1

    def test_deterministic_per_seed(self):
        ds = _labels_only_dataset([10, 10, 10])
        a = kfold_split(ds, k=5, seed=3)
        b = kfold_split(ds, k=5, seed=3)
        c = kfold_split(ds, k=5, seed=4)
        assert a.folds == b.folds
        assert a.folds != c.folds
        assert sorted(len(f) for f in a.folds) == sorted(len(f) for f in c.folds)

    def test_k1_rejected(self):
        with pytest.raises(ConfigError):
            kfold_split(_labels_only_dataset([10, 10]), k=1, seed=0)

    def test_small_class_named(self):
        ds = _labels_only_dataset([10, 3])
        with pytest.raises(DataError, match="class_1"):
            kfold_split(ds, k=5, seed=0)

    def test_train_indices_complement(self):
        ds = _labels_only_dataset([10, 10])
        plan = kfold_split(ds, k=4, seed=5)
        for f in range(4):
            train = plan.train_indices(f)
            assert sorted(train + plan.folds[f]) == list(range(20))

    def test_text_export(self, tmp_path):
        plan = FoldPlan(k=2, folds=[[0, 2], [1, 3]], seed=9)
        path = tmp_path / "plan.txt"
        plan.write(path)
        text = path.read_text()
        assert "k = 2" in text
        assert "fold 0: 0 2" in text
        assert "fold 1: 1 3" in text


class TestIterateBatches:
    def test_66_indices(self):
        batches = iterate_batches(np.arange(66), 32, seed=1, epoch=0)
        assert [len(b) for b in batches] == [32, 32, 2]

    def test_65_indices_merges_short_tail(self):
        batches = iterate_batches(np.arange(65), 32, seed=1, epoch=0)
        assert [len(b) for b in batches] == [32, 33]

    def test_epoch_changes_permutation_not_multiset(self):
        a = iterate_batches(np.arange(50), 16, seed=2, epoch=0)
        b = iterate_batches(np.arange(50), 16, seed=2, epoch=1)
        flat_a = np.concatenate(a)
        flat_b = np.concatenate(b)
        assert not np.array_equal(flat_a, flat_b)
        assert np.array_equal(np.sort(flat_a), np.sort(flat_b))

    def test_single_short_batch_kept(self):
        batches = iterate_batches(np.arange(1), 32, seed=0, epoch=0)
        assert [len(b) for b in batches] == [1]

    def test_deterministic(self):
        a = iterate_batches(np.arange(40), 8, seed=3, epoch=2)
        b = iterate_batches(np.arange(40), 8, seed=3, epoch=2)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))


class TestClassFilter:
    def test_filter_remaps_indices(self, source_folder):
        ds = load_image_folder(source_folder)
        subset = ds.filter_classes(["relay", "capacitor", "solenoid"])
        assert subset.class_names == ["capacitor", "relay", "solenoid"]
        assert len(subset) == 18
        assert set(subset.labels.tolist()) == {0, 1, 2}

    def test_unknown_name_rejected(self, source_folder):
        ds = load_image_folder(source_folder)
        with pytest.raises(DataError, match="widget"):
            ds.filter_classes(["relay", "widget"])
