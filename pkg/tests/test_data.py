import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from viewpose.data import (
    ArrayFrames,
    ManifestError,
    MultiViewDataset,
    SequencePair,
    SyntheticSceneSpec,
    clip_split_16,
    datasets_equal,
    generate_synthetic,
    load_manifest,
    make_training_tuple,
    shift_image,
    subsample_16,
    write_manifest,
)
from viewpose.data.sampling import hflip, subsample_indices
from viewpose.data.synthetic import project, render, sequence_joints, world_offset_for_pixels


@pytest.fixture(scope="module")
def small_ds():
    return generate_synthetic(SyntheticSceneSpec(resolution=32, seed=7), 3, 4)


class TestGenerator:
    def test_deterministic(self):
        spec = SyntheticSceneSpec(resolution=32, seed=7)
        assert datasets_equal(generate_synthetic(spec, 3, 4), generate_synthetic(spec, 3, 4))

    def test_seed_matters(self):
        a = generate_synthetic(SyntheticSceneSpec(resolution=32, seed=7), 2, 2)
        b = generate_synthetic(SyntheticSceneSpec(resolution=32, seed=8), 2, 2)
        assert not datasets_equal(a, b)

    def test_shape_contract(self):
        ds = generate_synthetic(SyntheticSceneSpec(resolution=32), 10, 16)
        assert len(ds) == 10 and ds.views_per_scene == 2
        for s in ds.sequences:
            assert len(s.view_v) == len(s.view_w) == 16
            assert s.view_v[0].shape == (3, 32, 32)
            assert s.view_v[0].min() >= -1 and s.view_v[0].max() <= 1

    def test_labels_balanced(self):
        ds = generate_synthetic(SyntheticSceneSpec(resolution=16), 8, 1)
        assert [s.label for s in ds.sequences] == [0, 1, 2, 3, 0, 1, 2, 3]

    def test_figure_visible_in_every_view(self, small_ds):
        for s in small_ds.sequences:
            for v in s.views:
                fg = (v.stack() > -0.99).any(axis=1).mean()
                assert 0.01 < fg < 0.6

    def test_views_differ(self, small_ds):
        s = small_ds.sequences[0]
        assert not np.array_equal(s.view_v.raw(), s.view_w.raw())

    @pytest.mark.parametrize("kwargs", [dict(azimuths=(0,)), dict(resolution=30), dict(motion_classes=())])
    def test_invalid_spec(self, kwargs):
        with pytest.raises(ValueError):
            SyntheticSceneSpec(**kwargs)

    def test_invalid_counts(self):
        with pytest.raises(ValueError):
            generate_synthetic(SyntheticSceneSpec(resolution=16), 0, 4)


class TestProjection:
    def test_quarter_turn_oracle(self):
        joints = sequence_joints(SyntheticSceneSpec(), 2, 3)
        col0, row0, _ = project(joints, 0.0, 64)
        col90, row90, _ = project(joints, 90.0, 64)
        half = 32.0
        scale = (col0 / half - 1.0)
        np.testing.assert_allclose(scale, joints[..., 0] * 0.8, atol=1e-12)
        np.testing.assert_allclose(col90 / half - 1.0, -joints[..., 2] * 0.8, atol=1e-12)
        np.testing.assert_allclose(row0, row90, atol=1e-12)

    def test_world_offset_moves_projection(self):
        p = np.array([[0.1, 0.5, -0.2]])
        for az in (0.0, 90.0, 45.0, 22.5):
            off = world_offset_for_pixels(3, -2, az, 64)
            c0, r0, d0 = project(p, az, 64)
            c1, r1, d1 = project(p + off, az, 64)
            np.testing.assert_allclose([c1 - c0, r1 - r0, d1 - d0], [[3], [-2], [0]], atol=1e-9)

    @pytest.mark.parametrize("az", [0.0, 90.0, 45.0])
    def test_shift_commutes_with_rendering(self, az):
        spec = SyntheticSceneSpec(resolution=64)
        rng = np.random.default_rng(0)
        for i in range(4):
            joints = sequence_joints(spec, i, 1)[0]
            dx, dy = (int(x) for x in rng.integers(-6, 7, size=2))
            base = render(joints, az, 64, spec).astype(np.float64) / 127.5 - 1
            moved = render(joints + world_offset_for_pixels(dx, dy, az, 64), az, 64, spec)
            moved = moved.astype(np.float64) / 127.5 - 1
            assert np.abs(shift_image(base, dx, dy) - moved).mean() < 0.02


class TestShift:
    def test_column_oracle(self):
        img = np.random.default_rng(0).uniform(-1, 1, (3, 8, 8))
        out = shift_image(img, 5, 0)
        np.testing.assert_array_equal(out[..., 5:], img[..., :3])
        assert (out[..., :5] == -1).all()

    def test_row_oracle(self):
        img = np.random.default_rng(1).uniform(-1, 1, (3, 8, 8))
        out = shift_image(img, 0, -2)
        np.testing.assert_array_equal(out[:, :6], img[:, 2:])
        assert (out[:, 6:] == -1).all()

    def test_zero_and_large(self):
        img = np.random.default_rng(2).uniform(-1, 1, (3, 8, 8))
        np.testing.assert_array_equal(shift_image(img, 0, 0), img)
        assert (shift_image(img, 9, 0) == -1).all()

    @settings(max_examples=60, deadline=None)
    @given(st.integers(-7, 7), st.integers(-7, 7))
    def test_pixel_oracle(self, dx, dy):
        img = np.random.default_rng(3).uniform(-1, 1, (3, 8, 8))
        out = shift_image(img, dx, dy)
        for r in range(8):
            for c in range(8):
                r0, c0 = r - dy, c - dx
                want = img[:, r0, c0] if 0 <= r0 < 8 and 0 <= c0 < 8 else -1
                np.testing.assert_array_equal(out[:, r, c], want)


class TestTrainingTuple:
    def test_deterministic(self, small_ds):
        pair = small_ds.sequences[0]
        a = make_training_tuple(pair, 2, np.random.default_rng(3))
        b = make_training_tuple(pair, 2, np.random.default_rng(3))
        assert (a.m, a.n, a.c1, a.c2, a.flip_applied) == (b.m, b.n, b.c1, b.c2, b.flip_applied)
        for x, y in zip(a.images(), b.images()):
            np.testing.assert_array_equal(x, y)

    def test_single_frame_forces_m_n(self):
        ds = generate_synthetic(SyntheticSceneSpec(resolution=16), 1, 1)
        t = make_training_tuple(ds.sequences[0], 0, np.random.default_rng(0))
        assert t.m == t.n == t.k == 0

    def test_out_of_range(self, small_ds):
        with pytest.raises(IndexError):
            make_training_tuple(small_ds.sequences[0], 4, np.random.default_rng(0))

    def test_augmented_is_shifted_original(self, small_ds):
        pair = small_ds.sequences[1]
        for seed in range(10):
            t = make_training_tuple(pair, 1, np.random.default_rng(seed), flip=False)
            np.testing.assert_array_equal(t.aug_v, shift_image(pair.view_v[1], t.c1.dx, t.c1.dy))
            np.testing.assert_array_equal(t.aug_w, shift_image(pair.view_w[1], t.c2.dx, t.c2.dy))
            np.testing.assert_array_equal(t.Iv_m, pair.view_v[t.m])
            np.testing.assert_array_equal(t.Iw_n, pair.view_w[t.n])

    def test_shift_range(self, small_ds):
        rng = np.random.default_rng(0)
        seen = []
        for _ in range(300):
            t = make_training_tuple(small_ds.sequences[0], 0, rng)
            seen += [t.c1.dx, t.c1.dy, t.c2.dx, t.c2.dy]
        assert min(seen) == -8 and max(seen) == 8

    def test_flip_is_exact_mirror(self, small_ds):
        pair = small_ds.sequences[2]
        for seed in range(5):
            a = make_training_tuple(pair, 3, np.random.default_rng(seed), flip=False)
            b = make_training_tuple(pair, 3, np.random.default_rng(seed), flip=True)
            assert b.flip_applied and not a.flip_applied
            for x, y in zip(a.images(), b.images()):
                np.testing.assert_array_equal(hflip(x), y)
            assert (b.c1.dx, b.c1.dy) == (-a.c1.dx, a.c1.dy)

    def test_flipped_shift_consistent(self, small_ds):
        # the mirrored augmented image equals the mirrored original shifted by the negated dx
        pair = small_ds.sequences[0]
        t = make_training_tuple(pair, 0, np.random.default_rng(4), flip=True)
        np.testing.assert_array_equal(t.aug_v, shift_image(t.Iv_k, t.c1.dx, t.c1.dy))

    def test_flip_frequency(self, small_ds):
        rng = np.random.default_rng(11)
        flips = [make_training_tuple(small_ds.sequences[0], 0, rng).flip_applied for _ in range(2000)]
        assert 0.45 < np.mean(flips) < 0.55


class TestSubsample:
    def test_identity_at_16(self, rng):
        np.testing.assert_array_equal(subsample_indices(16, rng), np.arange(16))

    def test_segment_oracle_32(self, rng):
        for _ in range(50):
            idx = subsample_indices(32, rng)
            assert all(2 * i <= j <= 2 * i + 1 for i, j in enumerate(idx))

    @settings(max_examples=100, deadline=None)
    @given(st.integers(16, 500), st.integers(0, 2**32 - 1))
    def test_strictly_increasing(self, length, seed):
        idx = subsample_indices(length, np.random.default_rng(seed))
        assert len(idx) == 16
        assert (np.diff(idx) > 0).all()
        assert idx[0] >= 0 and idx[-1] < length

    def test_short_sequences_reuse_frames(self, rng):
        idx = subsample_indices(5, rng)
        assert len(idx) == 16 and (np.diff(idx) >= 0).all() and idx.max() < 5

    def test_empty(self, rng):
        with pytest.raises(ValueError):
            subsample_indices(0, rng)

    def test_frames(self, rng):
        frames = np.arange(40)[:, None]
        assert subsample_16(frames, rng).shape == (16, 1)


class TestClipSplit:
    def test_counts(self):
        assert len(clip_split_16(48)) == 3
        clips = clip_split_16(50)
        assert len(clips) == 3 and clips[-1][-1] == 47

    def test_partition(self):
        clips = clip_split_16(80)
        flat = [i for c in clips for i in c]
        assert flat == list(range(80))

    def test_too_short(self):
        with pytest.raises(ValueError):
            clip_split_16(15)


class TestContainers:
    def test_unequal_views_rejected(self):
        a = ArrayFrames(np.zeros((3, 3, 8, 8), np.uint8))
        b = ArrayFrames(np.zeros((4, 3, 8, 8), np.uint8))
        with pytest.raises(ValueError, match="scene_x"):
            SequencePair([a, b], scene_id="scene_x")

    def test_bad_modality(self):
        with pytest.raises(ValueError):
            MultiViewDataset([], 8, modality="thermal")

    def test_view_pairs_and_select(self):
        ds = generate_synthetic(SyntheticSceneSpec(resolution=16, azimuths=(0, 90, 45)), 2, 2)
        assert ds.view_pairs() == [(0, 1), (0, 2), (1, 2)]
        sel = ds.select_views([2, 0])
        assert sel.azimuths == [45, 0]
        np.testing.assert_array_equal(sel.sequences[1].view_v.raw(), ds.sequences[1].views[2].raw())
        with pytest.raises(ValueError):
            ds.select_views([1])

    def test_split_subjects(self):
        ds = generate_synthetic(SyntheticSceneSpec(resolution=16, n_subjects=3), 9, 1)
        train, test = ds.split_subjects([0])
        assert len(train) + len(test) == 9
        assert {s.subject_id for s in test.sequences} == {0}
        assert 0 not in {s.subject_id for s in train.sequences}


class TestManifest:
    def test_round_trip(self, small_ds, tmp_path):
        path = write_manifest(small_ds, tmp_path / "m")
        loaded = load_manifest(path)
        assert len(loaded) == 3
        assert datasets_equal(small_ds, loaded)
        np.testing.assert_array_equal(loaded.sequences[0].view_v[2], small_ds.sequences[0].view_v[2])

    def test_directory_argument(self, small_ds, tmp_path):
        write_manifest(small_ds, tmp_path)
        assert len(load_manifest(tmp_path)) == 3

    def _doc(self, small_ds, tmp_path):
        path = write_manifest(small_ds, tmp_path)
        return path, json.loads(path.read_text())

    def test_unequal_lengths(self, small_ds, tmp_path):
        path, doc = self._doc(small_ds, tmp_path)
        doc["sequences"][1]["views"][1].pop()
        path.write_text(json.dumps(doc))
        with pytest.raises(ManifestError, match=doc["sequences"][1]["scene_id"]):
            load_manifest(path)

    def test_missing_frame(self, small_ds, tmp_path):
        path, doc = self._doc(small_ds, tmp_path)
        (tmp_path / doc["sequences"][2]["views"][0][1]).unlink()
        with pytest.raises(ManifestError, match="scene_00002"):
            load_manifest(path)

    def test_bad_resolution(self, small_ds, tmp_path):
        path, doc = self._doc(small_ds, tmp_path)
        doc["resolution"] = 64
        path.write_text(json.dumps(doc))
        with pytest.raises(ManifestError, match="scene_00000"):
            load_manifest(path)

    def test_wrong_format_and_missing(self, tmp_path):
        with pytest.raises(ManifestError):
            load_manifest(tmp_path / "nope.json")
        (tmp_path / "bad.json").write_text(json.dumps({"format": "other"}))
        with pytest.raises(ManifestError):
            load_manifest(tmp_path / "bad.json")

    def test_depth_mask_16bit(self, tmp_path):
        from PIL import Image

        arr = np.full((8, 8), 65535, dtype=np.uint16)
        arr[:4] = 0
        for v in range(2):
            (tmp_path / f"v{v}").mkdir()
            Image.fromarray(arr).save(tmp_path / f"v{v}" / "0.png")
        doc = {"format": "viewpose-manifest-v1", "resolution": 8, "views_per_scene": 2,
               "modality": "depth-mask", "sequences": [
                   {"scene_id": "d0", "views": [["v0/0.png"], ["v1/0.png"]]}]}
        (tmp_path / "manifest.json").write_text(json.dumps(doc))
        img = load_manifest(tmp_path).sequences[0].view_v[0]
        assert img.shape == (3, 8, 8)
        assert img[:, :4].max() == -1.0 and img[:, 4:].min() == 1.0
