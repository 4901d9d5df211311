import numpy as np
import pytest

from camtraj.errors import ValidationError
from camtraj.synth import (
    DatasetManifest,
    SynthConfig,
    build_dataset,
    full_pool,
    make_rgbd_grids,
    moving_pool,
    sample_trajectory,
    single_action_pool,
)
from camtraj.tagging import TagThresholds, parse_caption, tag_frames


class TestPools:
    def test_full_pool_covers_label_space(self):
        pool = full_pool()
        assert len(pool) == 27 * 7
        assert len(set(pool)) == 27 * 7

    def test_moving_pool_drops_static(self):
        assert len(moving_pool()) == 27 * 7 - 1

    def test_single_action_pool(self):
        pool = single_action_pool()
        assert len(pool) == 8
        assert all(len(t.atomic_labels()) == 1 for t in pool)


class TestSampleTrajectory:
    def test_right_only_pool(self):
        from camtraj.tagging import MotionTag

        cfg = SynthConfig(frames=30, segments_min=1, segments_max=1,
                          label_pool=(MotionTag(trans_x="right"),))
        sample = sample_trajectory(cfg, seed=5)
        tags = tag_frames(sample.trajectory)
        plateau = [t for i, t in enumerate(tags) if i not in sample.ramp_frames]
        assert all(t.trans_x == "right" and t.trans_y == "static"
                   and t.trans_z == "static" and t.rotation == "static"
                   for t in plateau)

    def test_deterministic_per_seed(self):
        cfg = SynthConfig(frames=24)
        a = sample_trajectory(cfg, seed=9)
        b = sample_trajectory(cfg, seed=9)
        assert a.caption == b.caption
        assert np.array_equal(a.trajectory.positions(), b.trajectory.positions())
        assert a.segments == b.segments

    def test_generator_tagger_consistency(self):
        cfg = SynthConfig(frames=40)
        th = TagThresholds()
        agree = total = 0
        for seed in range(200):
            sample = sample_trajectory(cfg, seed=seed)
            got = tag_frames(sample.trajectory, th)
            want = [s.tag for s in sample.segments for _ in range(len(s))]
            ramps = set(sample.ramp_frames)
            for i, (g, w) in enumerate(zip(got, want)):
                if i in ramps:
                    continue
                agree += g == w
                total += 1
        assert agree / total >= 0.98

    def test_caption_matches_segments(self):
        for seed in range(50):
            sample = sample_trajectory(SynthConfig(frames=30), seed=seed)
            assert parse_caption(sample.caption) == [s.tag for s in sample.segments]

    def test_frame_count(self):
        sample = sample_trajectory(SynthConfig(frames=17), seed=0)
        assert len(sample.trajectory) == 17
        assert sum(len(s) for s in sample.segments) == 16


class TestBuildDataset:
    def test_split_sizes(self, tmp_path):
        manifest = build_dataset(10, SynthConfig(frames=12), seed=3,
                                 out_dir=tmp_path)
        splits = [len(manifest.of_split(s)) for s in ("train", "val", "test")]
        assert splits == [8, 1, 1]

    def test_rebuild_byte_identical(self, tmp_path):
        cfg = SynthConfig(frames=12)
        build_dataset(6, cfg, seed=7, out_dir=tmp_path / "a")
        build_dataset(6, cfg, seed=7, out_dir=tmp_path / "b")
        files_a = sorted((tmp_path / "a").rglob("*.*"))
        files_b = sorted((tmp_path / "b").rglob("*.*"))
        assert [f.name for f in files_a] == [f.name for f in files_b]
        for fa, fb in zip(files_a, files_b):
            assert fa.read_bytes() == fb.read_bytes()

    def test_restricted_pool_captions_parse_to_pool(self, tmp_path):
        pool = single_action_pool()[:3]
        manifest = build_dataset(12, SynthConfig(frames=20, label_pool=tuple(pool)),
                                 seed=1, out_dir=tmp_path)
        allowed = set(pool)
        for rec in manifest.records:
            for tag in parse_caption(rec.caption):
                assert tag in allowed

    def test_manifest_round_trip(self, tmp_path):
        manifest = build_dataset(5, SynthConfig(frames=10), seed=2,
                                 out_dir=tmp_path)
        loaded = DatasetManifest.load(tmp_path / "manifest.json")
        assert loaded.seed == manifest.seed
        assert loaded.config_hash == manifest.config_hash
        assert [r.trajectory for r in loaded.records] == \
            [r.trajectory for r in manifest.records]
        for rec in loaded.records:
            assert loaded.resolve(rec.trajectory).exists()

    def test_malformed_manifest_record_reports_index(self, tmp_path):
        import json

        from camtraj.errors import ParseError

        manifest = build_dataset(3, SynthConfig(frames=10), seed=2,
                                 out_dir=tmp_path)
        path = tmp_path / "manifest.json"
        payload = json.loads(path.read_text())
        del payload["records"][1]["caption"]
        path.write_text(json.dumps(payload))
        with pytest.raises(ParseError, match=r"records\[1\]"):
            DatasetManifest.load(path)

    def test_dedupe_captions(self, tmp_path):
        manifest = build_dataset(30, SynthConfig(frames=20), seed=4,
                                 out_dir=tmp_path, dedupe_captions=True)
        captions = [r.caption for r in manifest.records]
        assert len(set(captions)) == 30

    def test_dedupe_impossible_pool_errors(self, tmp_path):
        from camtraj.tagging import MotionTag

        cfg = SynthConfig(frames=20, segments_min=1, segments_max=1,
                          label_pool=(MotionTag(trans_x="right"),))
        with pytest.raises(ValidationError, match="pool"):
            build_dataset(5, cfg, seed=0, out_dir=tmp_path, dedupe_captions=True)

    def test_rgbd_grids_written(self, tmp_path):
        manifest = build_dataset(4, SynthConfig(frames=10, rgbd=True, rgbd_size=32),
                                 seed=5, out_dir=tmp_path)
        for rec in manifest.records:
            assert rec.image and rec.depth
            assert manifest.resolve(rec.image).exists()
            assert manifest.resolve(rec.depth).exists()

    def test_invalid_count(self, tmp_path):
        with pytest.raises(ValidationError):
            build_dataset(0, SynthConfig(frames=10), seed=0, out_dir=tmp_path)


class TestRgbdGrids:
    def test_shapes_and_determinism(self):
        img1, dep1 = make_rgbd_grids(64, seed=3)
        img2, dep2 = make_rgbd_grids(64, seed=3)
        assert img1.shape == (64, 64) and dep1.shape == (64, 64)
        assert np.array_equal(img1.pixels, img2.pixels)
        assert np.array_equal(dep1.pixels, dep2.pixels)
