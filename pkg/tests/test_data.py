import struct

import numpy as np
import pytest

from snnbench.data import (
    DataFormatError,
    Dataset,
    IDX_IMAGES_MAGIC,
    IDX_LABELS_MAGIC,
    batches,
    encode_poisson,
    load_events_csv,
    load_idx_images,
    load_idx_labels,
    load_manifest_datasets,
    synth_pattern_dataset,
    synth_split,
    write_events_csv,
    write_idx_images,
)


class TestIdx:
    def test_two_by_two_fixture(self, tmp_path):
        p = tmp_path / "img.idx"
        p.write_bytes(struct.pack(">IIII", IDX_IMAGES_MAGIC, 1, 2, 2) + bytes([0, 255, 51, 102]))
        np.testing.assert_allclose(load_idx_images(p), [[[0.0, 1.0], [0.2, 0.4]]])

    def test_labels(self, tmp_path):
        p = tmp_path / "lab.idx"
        p.write_bytes(struct.pack(">II", IDX_LABELS_MAGIC, 3) + bytes([7, 0, 9]))
        assert load_idx_labels(p).tolist() == [7, 0, 9]

    def test_round_trip(self, tmp_path, rng):
        imgs = rng.integers(0, 256, size=(3, 4, 5)) / 255.0
        write_idx_images(tmp_path / "a.idx", imgs)
        np.testing.assert_allclose(load_idx_images(tmp_path / "a.idx"), imgs, atol=1e-15)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.idx"
        p.write_bytes(struct.pack(">IIII", 0x0803FFFF, 1, 1, 1) + b"\x00")
        with pytest.raises(DataFormatError, match="magic"):
            load_idx_images(p)
        q = tmp_path / "lab.idx"
        q.write_bytes(struct.pack(">II", IDX_IMAGES_MAGIC, 0))
        with pytest.raises(DataFormatError, match="magic"):
            load_idx_labels(q)

    def test_short_and_truncated(self, tmp_path):
        p = tmp_path / "empty.idx"
        p.write_bytes(b"")
        with pytest.raises(DataFormatError):
            load_idx_images(p)
        with pytest.raises(DataFormatError):
            load_idx_labels(p)
        p.write_bytes(struct.pack(">IIII", IDX_IMAGES_MAGIC, 2, 2, 2) + b"\x00" * 5)
        with pytest.raises(DataFormatError, match="truncated"):
            load_idx_images(p)


class TestEvents:
    def write(self, tmp_path, text):
        p = tmp_path / "ev.csv"
        p.write_text(text)
        return p

    def test_single_event(self, tmp_path):
        ds = load_events_csv(self.write(tmp_path, "t,channel,polarity,label\n2,1,1,0\n"), 4, 3)
        assert ds.x.shape == (1, 4, 6)
        assert ds.x.sum() == 1.0 and ds.x[0, 2, 1] == 1.0

    def test_negative_polarity_plane(self, tmp_path):
        ds = load_events_csv(self.write(tmp_path, "t,channel,polarity,label\n0,2,-1,1\n"), 2, 3, n_classes=2)
        assert ds.x[0, 0, 5] == 1.0 and ds.y.tolist() == [1]

    def test_counts_versus_clamp(self, tmp_path):
        p = self.write(tmp_path, "t,channel,polarity,label\n1,0,1,0\n1,0,1,0\n1,0,1,0\n")
        assert load_events_csv(p, 2, 1).x[0, 1, 0] == 3.0
        assert load_events_csv(p, 2, 1, clamp=True).x[0, 1, 0] == 1.0

    @pytest.mark.parametrize(
        "row,match",
        [("-1,0,1,0", "t=-1"), ("5,0,1,0", "t=5"), ("0,7,1,0", "channel"), ("0,0,0,0", "polarity"), ("0,0,1,x", "non-integer")],
    )
    def test_bad_rows(self, tmp_path, row, match):
        with pytest.raises(DataFormatError, match=match):
            load_events_csv(self.write(tmp_path, f"t,channel,polarity,label\n{row}\n"), 5, 3)

    def test_bad_header_and_empty(self, tmp_path):
        with pytest.raises(DataFormatError, match="header"):
            load_events_csv(self.write(tmp_path, "time,ch,pol,lab\n"), 5, 3)
        with pytest.raises(DataFormatError, match="empty"):
            load_events_csv(self.write(tmp_path, ""), 5, 3)

    def test_conflicting_labels(self, tmp_path):
        p = self.write(tmp_path, "sample,t,channel,polarity,label\n0,0,0,1,0\n0,1,0,1,1\n")
        with pytest.raises(DataFormatError, match="conflicting"):
            load_events_csv(p, 3, 2)

    def test_round_trip(self, tmp_path, rng):
        x = rng.integers(0, 3, size=(4, 5, 6)).astype(float)
        ds = Dataset(x, np.array([0, 1, 2, 1]), 3)
        write_events_csv(tmp_path / "rt.csv", ds)
        back = load_events_csv(tmp_path / "rt.csv", 5, 3, n_classes=3)
        np.testing.assert_array_equal(back.x, ds.x)
        np.testing.assert_array_equal(back.y, ds.y)

    def test_manifest(self, tmp_path):
        (tmp_path / "tr.csv").write_text("sample,t,channel,polarity,label\n0,0,0,1,0\n1,1,1,-1,1\n")
        (tmp_path / "m.json").write_text('{"train": "tr.csv", "T": 2, "channels": 2, "class_names": ["a", "b"]}')
        train, test = load_manifest_datasets(tmp_path / "m.json")
        assert train.x.shape == (2, 2, 4) and test is None
        (tmp_path / "bad.json").write_text('{"train": "tr.csv"}')
        with pytest.raises(DataFormatError, match="missing"):
            load_manifest_datasets(tmp_path / "bad.json")


class TestEncoding:
    def test_extremes(self):
        s = encode_poisson(np.array([0.0, 1.0]), 50).data
        assert s[:, 0].sum() == 0 and s[:, 1].sum() == 50

    def test_rate(self):
        s = encode_poisson(np.full(200, 0.5), 100, max_rate=0.4, seed=2).data
        assert s.mean() == pytest.approx(0.2, abs=0.01)

    def test_deterministic(self):
        img = np.linspace(0, 1, 9)
        np.testing.assert_array_equal(encode_poisson(img, 10, seed=4).data, encode_poisson(img, 10, seed=4).data)

    def test_bad_values(self):
        with pytest.raises(ValueError):
            encode_poisson(np.array([1.5]), 3)
        with pytest.raises(ValueError):
            encode_poisson(np.array([0.5]), 3, max_rate=2.0)


class TestSynthetic:
    def test_shapes_and_order(self):
        ds = synth_pattern_dataset(3, 4, 10, 8, seed=1)
        assert ds.x.shape == (12, 10, 8)
        assert ds.y.tolist() == [0] * 4 + [1] * 4 + [2] * 4
        assert set(np.unique(ds.x)) <= {0.0, 1.0}

    def test_rate_preserved(self):
        ds = synth_pattern_dataset(4, 200, 20, 64, jitter=0.3, rate=0.15, seed=0)
        assert ds.x.mean() == pytest.approx(0.15, abs=0.01)

    def test_zero_jitter_repeats_template(self):
        ds = synth_pattern_dataset(2, 3, 5, 7, jitter=0.0, seed=2)
        assert np.array_equal(ds.x[0], ds.x[2]) and not np.array_equal(ds.x[0], ds.x[3])

    def test_nearest_template_separates(self):
        train, test = synth_split(2, 100, 50, 20, 256, jitter=0.05, seed=0)
        means = np.stack([train.x[train.y == k].mean(axis=0) for k in range(2)])
        d = ((test.x[:, None] - means[None]) ** 2).sum(axis=(2, 3))
        assert np.mean(np.argmin(d, axis=1) == test.y) == 1.0

    def test_split_disjoint_sizes(self):
        train, test = synth_split(3, 5, 2, 4, 6, seed=0)
        assert len(train) == 15 and len(test) == 6
        assert np.bincount(test.y).tolist() == [2, 2, 2]

    @pytest.mark.parametrize("kw", [dict(jitter=1.5), dict(rate=0.0), dict(rate=1.0)])
    def test_validation(self, kw):
        with pytest.raises(ValueError):
            synth_pattern_dataset(2, 2, 2, 2, **kw)


class TestDataset:
    def test_validation(self):
        with pytest.raises(ValueError):
            Dataset(np.zeros((2, 3)), np.zeros(2), 2)
        with pytest.raises(ValueError):
            Dataset(np.zeros((2, 3, 4)), np.array([0, 2]), 2)
        with pytest.raises(ValueError):
            Dataset(-np.ones((1, 1, 1)), np.zeros(1), 1)

    def test_batches_cover_everything(self):
        ds = Dataset(np.zeros((10, 2, 3)), np.arange(10) % 2, 2)
        sizes = [len(y) for _, y in batches(ds, 4)]
        assert sizes == [4, 4, 2]
        assert sum(len(y) for _, y in batches(ds, 4, shuffle_seed=1)) == 10

    def test_shuffle_is_permutation(self):
        ds = Dataset(np.arange(12, dtype=float).reshape(12, 1, 1), np.zeros(12), 1)
        vals = np.concatenate([x[:, 0, 0] for x, _ in batches(ds, 5, shuffle_seed=3)])
        assert sorted(vals) == list(range(12)) and vals.tolist() != list(range(12))
        again = np.concatenate([x[:, 0, 0] for x, _ in batches(ds, 5, shuffle_seed=3)])
        np.testing.assert_array_equal(vals, again)
        with pytest.raises(ValueError):
            next(batches(ds, 0))

    def test_item_and_subset(self):
        ds = Dataset(np.ones((3, 2, 2)), np.array([0, 1, 0]), 2)
        x, y = ds[1]
        assert y == 1 and x.data.shape == (2, 2)
        assert len(ds.subset([0, 2])) == 2 and ds.t_steps == 2 and ds.channels == 2
