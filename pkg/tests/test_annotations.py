import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from despur.annotations import (
    MaskStore,
    SegmentationRegistry,
    border_flood_mask,
    decode_mask_png,
    flood_fill_reference,
    range_filter_mask,
)
from despur.errors import (
    BackendFailure,
    CorruptMaskFile,
    DimensionMismatch,
    InvalidRange,
    NonBinaryMask,
    UnknownBackend,
    UnknownImageId,
)
from despur.errors import TestSplitReadOnly as SplitReadOnly  # avoid pytest collection
from despur.imgio import luminance


@pytest.fixture()
def store(dataset, tmp_path):
    return MaskStore(tmp_path / "masks", dataset)


@pytest.fixture()
def train_id(dataset):
    return dataset.split_records("train")[0].image_id


class TestMaskStore:
    def test_save_load_round_trip(self, store, train_id, dataset):
        rec = dataset.record(train_id)
        rng = np.random.default_rng(0)
        bits = (rng.random((rec.height, rec.width)) > 0.5).astype(np.uint8)
        store.save_mask(train_id, bits)
        assert np.array_equal(store.load_mask(train_id), bits)

    def test_dimension_mismatch(self, store, train_id):
        with pytest.raises(DimensionMismatch):
            store.save_mask(train_id, np.zeros((2, 2), dtype=np.uint8))

    def test_revisions_increment_and_last_write_wins(self, store, train_id, dataset):
        rec = dataset.record(train_id)
        first = np.zeros((rec.height, rec.width), dtype=np.uint8)
        second = np.ones_like(first)
        assert store.save_mask(train_id, first) == 1
        assert store.save_mask(train_id, second) == 2
        assert np.array_equal(store.load_mask(train_id), second)
        assert store.load_revision(train_id) == 2

    def test_unknown_image(self, store):
        with pytest.raises(UnknownImageId):
            store.save_mask("train/a/none.png", np.zeros((4, 4), dtype=np.uint8))

    def test_non_binary_rejected(self, store, train_id, dataset):
        rec = dataset.record(train_id)
        bits = np.full((rec.height, rec.width), 7, dtype=np.uint8)
        with pytest.raises(NonBinaryMask):
            store.save_mask(train_id, bits)

    def test_test_split_read_only(self, store, dataset):
        test_id = dataset.split_records("test")[0].image_id
        rec = dataset.record(test_id)
        with pytest.raises(SplitReadOnly):
            store.save_mask(test_id, np.zeros((rec.height, rec.width), dtype=np.uint8))

    def test_never_annotated_is_absent(self, store, train_id):
        assert store.load_mask(train_id) is None

    def test_corrupt_file_wrong_dimensions(self, store, train_id, dataset):
        rec = dataset.record(train_id)
        store.save_mask(train_id, np.zeros((rec.height, rec.width), dtype=np.uint8))
        # overwrite with a mask of the wrong size
        from PIL import Image

        path = store.path_for(train_id)
        Image.fromarray(np.zeros((2, 2), dtype=np.uint8), mode="L").save(path)
        with pytest.raises(CorruptMaskFile, match=str(path.name)):
            store.load_mask(train_id)

    def test_undecodable_file(self, store, train_id):
        path = store.path_for(train_id)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(b"not a png")
        with pytest.raises(CorruptMaskFile):
            store.load_mask(train_id)

    def test_list_annotated(self, store, dataset):
        train = dataset.split_records("train")
        rec0, rec1, rec2 = train[0], train[1], train[2]
        store.save_mask(rec0.image_id, np.zeros((rec0.height, rec0.width), dtype=np.uint8))
        ones = np.ones((rec1.height, rec1.width), dtype=np.uint8)
        store.save_mask(rec1.image_id, ones)
        store.save_mask(rec2.image_id, ones.copy())
        assert store.list_annotated() == sorted([rec1.image_id, rec2.image_id])

    @settings(max_examples=40, deadline=None,
              suppress_health_check=[HealthCheck.function_scoped_fixture])
    @given(bits=hnp.arrays(np.uint8, (8, 8), elements=st.integers(0, 1)))
    def test_round_trip_property(self, workspace_paths, bits):
        from despur.config import DatasetConfig
        from despur.datastore import ingest_dataset

        config = DatasetConfig.load(workspace_paths["config"])
        ds = ingest_dataset(workspace_paths["data_root"], config)
        store = MaskStore(workspace_paths["mask_root"], ds)
        image_id = ds.split_records("train")[0].image_id
        store.save_mask(image_id, bits)
        assert np.array_equal(store.load_mask(image_id), bits)


class TestRangeFilter:
    def test_full_range_is_all_ones(self, rng):
        img = rng.random((3, 5, 5))
        assert np.all(range_filter_mask(img, 0.0, 1.0, "luminance") == 1)

    def test_point_range_misses_everything(self):
        img = np.full((1, 4, 4), 0.3)
        assert np.all(range_filter_mask(img, 0.5, 0.5, "luminance") == 0)

    def test_known_grayscale_grid(self):
        values = np.linspace(0.0, 1.0, 16).reshape(4, 4)
        img = values[np.newaxis]
        mask = range_filter_mask(img, 0.25, 0.75, "luminance")
        expected = ((values >= 0.25) & (values <= 0.75)).astype(np.uint8)
        assert np.array_equal(mask, expected)

    def test_invalid_range(self, rng):
        with pytest.raises(InvalidRange):
            range_filter_mask(rng.random((1, 4, 4)), 0.8, 0.2)

    def test_channel_modes(self, rng):
        img = rng.random((3, 6, 6))
        any_mask = range_filter_mask(img, 0.4, 0.6, "any_channel")
        all_mask = range_filter_mask(img, 0.4, 0.6, "all_channels")
        in_range = (img >= 0.4) & (img <= 0.6)
        assert np.array_equal(any_mask, in_range.any(axis=0).astype(np.uint8))
        assert np.array_equal(all_mask, in_range.all(axis=0).astype(np.uint8))
        lum = luminance(img)
        lum_mask = range_filter_mask(img, 0.4, 0.6, "luminance")
        assert np.array_equal(lum_mask, ((lum >= 0.4) & (lum <= 0.6)).astype(np.uint8))

    @settings(max_examples=50, deadline=None)
    @given(
        img=hnp.arrays(np.float64, (1, 5, 5), elements=st.floats(0, 1)),
        lo=st.floats(0, 1),
        hi=st.floats(0, 1),
    )
    def test_idempotent_pure_per_pixel(self, img, lo, hi):
        if lo > hi:
            lo, hi = hi, lo
        first = range_filter_mask(img, lo, hi, "luminance")
        second = range_filter_mask(img, lo, hi, "luminance")
        assert np.array_equal(first, second)
        for y in range(5):
            for x in range(5):
                assert first[y, x] == (1 if lo <= img[0, y, x] <= hi else 0)


class TestBorderFlood:
    def test_uniform_background_with_dark_block(self):
        img = np.full((1, 16, 16), 0.9)
        img[0, 6:10, 6:10] = 0.1
        mask = border_flood_mask(img, tolerance=0.1)
        expected = np.ones((16, 16), dtype=np.uint8)
        expected[6:10, 6:10] = 0
        assert np.array_equal(mask, expected)

    def test_uniform_image_is_all_background(self):
        img = np.full((3, 8, 8), 0.42)
        assert np.all(border_flood_mask(img, tolerance=0.1) == 1)

    def test_matches_reference_implementation(self, rng):
        for _ in range(10):
            img = np.round(rng.random((1, 9, 9)) * 15) / 15.0
            fast = border_flood_mask(img, tolerance=0.21)
            slow = flood_fill_reference(img, tolerance=0.21)
            assert np.array_equal(fast, slow)

    def test_rotation_invariance(self, rng):
        for _ in range(10):
            img = np.round(rng.random((1, 10, 10)) * 255) / 255.0
            mask = border_flood_mask(img, tolerance=0.17)
            rotated = np.rot90(img, k=1, axes=(1, 2)).copy()
            mask_rot = border_flood_mask(rotated, tolerance=0.17)
            assert np.array_equal(np.rot90(mask, k=1), mask_rot)


class TestSegmentationRegistry:
    def test_builtin_backend(self, rng):
        registry = SegmentationRegistry()
        img = np.full((1, 6, 6), 0.8)
        mask = registry.propose("border-flood", img, None, {"tolerance": 0.05})
        assert np.all(mask == 1)

    def test_unknown_backend(self, rng):
        registry = SegmentationRegistry()
        with pytest.raises(UnknownBackend):
            registry.propose("nonexistent", rng.random((1, 4, 4)), None, {})

    def test_external_plugin_happy_path(self, tmp_path, dataset):
        plugin = tmp_path / "invert.py"
        plugin.write_text(
            "#!/usr/bin/env python3\n"
            "import sys\n"
            "from PIL import Image\n"
            "img = Image.open(sys.argv[1]).convert('L')\n"
            "out = img.point(lambda v: 255 if v < 128 else 0)\n"
            "out.save(sys.argv[2], format='PNG')\n"
        )
        plugin.chmod(0o755)
        registry = SegmentationRegistry()
        registry.register_executable("invert", str(plugin))
        rec = dataset.split_records("train")[0]
        img = dataset.image_array(rec.image_id)
        mask = registry.propose("invert", img, dataset.file_path(rec.image_id), {})
        assert mask.shape == (rec.height, rec.width)
        assert set(np.unique(mask)) <= {0, 1}

    def test_external_plugin_failure_wrapped(self, tmp_path, dataset):
        plugin = tmp_path / "broken.py"
        plugin.write_text("#!/usr/bin/env python3\nimport sys\nsys.exit(3)\n")
        plugin.chmod(0o755)
        registry = SegmentationRegistry()
        registry.register_executable("broken", str(plugin))
        rec = dataset.split_records("train")[0]
        with pytest.raises(BackendFailure):
            registry.propose("broken", dataset.image_array(rec.image_id),
                             dataset.file_path(rec.image_id), {})


class TestMaskPngDecoding:
    def test_antialiased_values_threshold(self):
        from PIL import Image
        import io

        arr = np.array([[0, 100, 127], [128, 200, 255]], dtype=np.uint8)
        buf = io.BytesIO()
        Image.fromarray(arr, mode="L").save(buf, format="PNG")
        bits, _ = decode_mask_png(buf.getvalue())
        assert np.array_equal(bits, np.array([[0, 0, 0], [1, 1, 1]], dtype=np.uint8))
