import numpy as np
import pytest
import torch
from PIL import Image

from styleadapt.data import (
    DomainDataset,
    ImageBatch,
    dataset_digest,
    iter_batches,
    load_image_folder,
    load_sample,
    make_synthetic_corpus,
    preprocess,
    select_targets,
)
from styleadapt.errors import DatasetError

from hypothesis import given, settings
from hypothesis import strategies as st


def _write_folder(root, classes, n=2, size=16):
    for ci, cname in enumerate(classes):
        d = root / cname
        d.mkdir(parents=True)
        for i in range(n):
            Image.new("RGB", (size, size), (ci * 40 % 255, 30, i * 50 % 255)).save(d / f"{i}.png")


class TestLoadImageFolder:
    def test_sorted_class_mapping(self, tmp_path):
        _write_folder(tmp_path, ["car", "bus"], n=2)
        ds = load_image_folder(tmp_path)
        assert ds.class_names == ("bus", "car")
        assert len(ds) == 4
        labels = {p.parent.name: lab for p, lab in ds.samples}
        assert labels == {"bus": 0, "car": 1}

    def test_deterministic_ordering(self, tmp_path):
        _write_folder(tmp_path, ["a", "b", "c"], n=3)
        ds1 = load_image_folder(tmp_path)
        ds2 = load_image_folder(tmp_path)
        assert ds1.samples == ds2.samples
        assert ds1.samples == tuple(sorted(ds1.samples, key=lambda s: str(s[0])))

    def test_missing_root(self, tmp_path):
        with pytest.raises(DatasetError, match="does not exist"):
            load_image_folder(tmp_path / "nope")

    def test_no_class_dirs(self, tmp_path):
        with pytest.raises(DatasetError, match="no class directories"):
            load_image_folder(tmp_path)

    def test_empty_class_dir_named(self, tmp_path):
        _write_folder(tmp_path, ["full"], n=1)
        (tmp_path / "hollow").mkdir()
        with pytest.raises(DatasetError, match="hollow"):
            load_image_folder(tmp_path)

    def test_undecodable_image_named_on_access(self, tmp_path):
        _write_folder(tmp_path, ["ok"], n=1)
        bad = tmp_path / "ok" / "broken.png"
        bad.write_bytes(b"this is not a png")
        ds = load_image_folder(tmp_path)
        with pytest.raises(DatasetError, match="broken.png"):
            load_sample(bad, size=16)

    def test_class_count_matches_folder_count(self, tmp_path):
        names = [f"class_{i:03d}" for i in range(17)]
        _write_folder(tmp_path, names, n=1)
        ds = load_image_folder(tmp_path)
        assert ds.num_classes == len(names)


class TestPreprocess:
    def test_resize_to_half(self):
        img = Image.new("RGB", (448, 448), (128, 128, 128))
        out = preprocess(img, size=224)
        assert out.shape == (3, 224, 224)

    def test_all_white_is_one(self):
        out = preprocess(Image.new("RGB", (10, 10), (255, 255, 255)), size=8)
        assert torch.all(out == 1.0)

    def test_all_black_is_zero(self):
        out = preprocess(Image.new("RGB", (10, 10), (0, 0, 0)), size=8)
        assert torch.all(out == 0.0)

    def test_rejects_non_rgb(self):
        with pytest.raises(DatasetError, match="3-channel"):
            preprocess(Image.new("L", (10, 10)), size=8)
        with pytest.raises(DatasetError):
            preprocess(np.zeros((10, 10, 4), dtype=np.uint8), size=8)

    @settings(max_examples=15, deadline=None)
    @given(st.integers(8, 64), st.integers(8, 64), st.integers(min_value=0, max_value=2**32 - 1))
    def test_idempotent_at_fixed_size(self, h, w, seed):
        rng = np.random.default_rng(seed)
        arr = rng.random((h, w, 3)).astype(np.float32)
        once = preprocess(arr, size=16)
        twice = preprocess(once, size=16)
        assert torch.equal(once, twice)

    def test_range_bounds(self):
        rng = np.random.default_rng(3)
        arr = (rng.random((50, 70, 3)) * 255).astype(np.uint8)
        out = preprocess(arr, size=32)
        assert float(out.min()) >= 0.0 and float(out.max()) <= 1.0


class TestSelectTargets:
    def test_one_shot(self, corpus):
        ts = select_targets(corpus["target"], k=1, seed=5, size=32)
        assert ts.images.shape == (1, 3, 32, 32)
        assert ts.k == 1

    def test_few_shot_three_distinct(self, corpus):
        ts = select_targets(corpus["target"], k=3, seed=5, size=32)
        assert ts.images.shape[0] == 3
        assert len(set(ts.paths)) == 3

    def test_same_seed_same_bytes(self, corpus):
        a = select_targets(corpus["target"], k=2, seed=7, size=32)
        b = select_targets(corpus["target"], k=2, seed=7, size=32)
        assert a.paths == b.paths
        assert torch.equal(a.images, b.images)

    def test_different_seeds_may_differ(self, corpus):
        picks = {select_targets(corpus["target"], k=1, seed=s, size=32).paths for s in range(8)}
        assert len(picks) > 1

    def test_k_too_large(self, corpus):
        with pytest.raises(DatasetError, match="cannot select"):
            select_targets(corpus["target"], k=len(corpus["target"]) + 1, seed=0)


class TestSyntheticCorpus:
    def test_counts_and_shared_classes(self, tmp_path):
        source, target = make_synthetic_corpus(tmp_path, seed=0, n_per_class=4, n_classes=4, image_size=24)
        assert len(source) == 16 and len(target) == 16
        assert source.class_names == target.class_names

    def test_byte_identical_under_seed(self, tmp_path):
        make_synthetic_corpus(tmp_path / "a", seed=11, n_per_class=4, n_classes=2, image_size=24)
        make_synthetic_corpus(tmp_path / "b", seed=11, n_per_class=4, n_classes=2, image_size=24)
        files_a = sorted((tmp_path / "a").rglob("*.png"))
        files_b = sorted((tmp_path / "b").rglob("*.png"))
        assert len(files_a) == len(files_b) > 0
        for fa, fb in zip(files_a, files_b):
            assert fa.read_bytes() == fb.read_bytes()

    def test_provenance_written(self, tmp_path):
        make_synthetic_corpus(tmp_path, seed=3, n_per_class=4, n_classes=2, image_size=24)
        import json

        prov = json.loads((tmp_path / "provenance.json").read_text())
        assert prov["seed"] == 3
        assert prov["n_per_class"] == 4
        assert "generator_version" in prov

    def test_rejects_degenerate_sizes(self, tmp_path):
        with pytest.raises(DatasetError):
            make_synthetic_corpus(tmp_path, n_classes=1)
        with pytest.raises(DatasetError):
            make_synthetic_corpus(tmp_path, n_per_class=2)

    def test_loads_via_folder_loader(self, corpus):
        reloaded = load_image_folder(corpus["root"] / "source")
        assert reloaded.samples == corpus["source"].samples


class TestBatches:
    def test_iteration_deterministic(self, corpus):
        b1 = [b.data for b in iter_batches(corpus["source"], 8, size=32)]
        b2 = [b.data for b in iter_batches(corpus["source"], 8, size=32)]
        assert all(torch.equal(x, y) for x, y in zip(b1, b2))

    def test_labels_align(self, corpus):
        ds = corpus["source"]
        batch = next(iter_batches(ds, 6, size=32))
        assert batch.labels.tolist() == [ds.samples[i][1] for i in range(6)]

    def test_image_batch_validation(self):
        with pytest.raises(DatasetError):
            ImageBatch(data=torch.rand(2, 1, 8, 8))
        with pytest.raises(DatasetError):
            ImageBatch(data=torch.full((1, 3, 4, 4), 1.5))
        with pytest.raises(DatasetError):
            ImageBatch(data=torch.rand(2, 3, 4, 4), labels=torch.tensor([1]))

    def test_digest_stable(self, corpus):
        assert dataset_digest(corpus["source"]) == dataset_digest(corpus["source"])
        assert dataset_digest(corpus["source"]) != dataset_digest(corpus["target"])
