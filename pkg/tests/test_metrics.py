import numpy as np
import pytest

from camtraj.errors import ValidationError
from camtraj.geometry import apply_rigid_transform
from camtraj.metrics import (
    FEATURE_DIM,
    FEATURIZER_ID,
    ContrastiveHead,
    FeatureSet,
    contrastive_score,
    coverage,
    featurize,
    featurize_set,
    fid,
    tag_f1,
    trajectory_label_set,
)
from camtraj.synth import SynthConfig, sample_trajectory, single_action_pool
from camtraj.tagging import MotionTag

from conftest import random_quaternion, random_trajectory, straight_trajectory


def synth_batch(n, seed0=0, **cfg_kwargs):
    cfg = SynthConfig(frames=30, **cfg_kwargs)
    return [sample_trajectory(cfg, seed=[seed0, i]) for i in range(n)]


class TestTagF1:
    def test_self_comparison_is_one(self):
        samples = synth_batch(20)
        trajs = [s.trajectory for s in samples]
        refs = [trajectory_label_set(t) for t in trajs]
        report = tag_f1(trajs, refs)
        assert report.f1 == 1.0
        assert report.precision == 1.0 and report.recall == 1.0

    def test_static_vs_moving_zero_recall(self):
        static = [straight_trajectory(30, (0, 0, 0)) for _ in range(5)]
        refs = [frozenset({"right"}) for _ in range(5)]
        report = tag_f1(static, refs)
        assert report.recall == 0.0
        assert report.per_label["right"]["recall"] == 0.0

    def test_half_match_confusion_counts(self):
        # 50 exact matches + 50 orthogonal single-label mismatches:
        # TP=50, FP=50, FN=50 -> P=R=F1=0.5 by direct enumeration
        pool = single_action_pool()
        right = MotionTag(trans_x="right")
        trajs, refs = [], []
        cfg = SynthConfig(frames=30, segments_min=1, segments_max=1,
                          label_pool=(right,))
        for i in range(100):
            sample = sample_trajectory(cfg, seed=[7, i])
            trajs.append(sample.trajectory)
            refs.append(frozenset({"right"} if i < 50 else {"pitch_up"}))
        report = tag_f1(trajs, refs)
        assert report.precision == pytest.approx(0.5)
        assert report.recall == pytest.approx(0.5)
        assert report.f1 == pytest.approx(0.5)

    def test_length_mismatch(self):
        with pytest.raises(ValidationError):
            tag_f1([straight_trajectory(5, (1, 0, 0))], [])


class TestFeaturize:
    def test_static_zero_velocity_stats(self):
        v = featurize(straight_trajectory(20, (0, 0, 0)))
        assert v.shape == (FEATURE_DIM,)
        assert np.abs(v[:18]).max() == 0.0  # velocity/rate stats
        assert v[18] == 0.0                 # path length

    def test_rigid_invariance(self, rng):
        traj = random_trajectory(rng, n=15)
        base = featurize(traj)
        for _ in range(100):
            moved = apply_rigid_transform(traj, random_quaternion(rng),
                                          rng.normal(size=3) * 10)
            assert np.abs(featurize(moved) - base).max() < 1e-9

    def test_locally_lipschitz(self, rng):
        from camtraj.geometry import CameraPose, Trajectory

        traj = random_trajectory(rng, n=15)
        base = featurize(traj)
        for _ in range(20):
            poses = [
                CameraPose(p.rotation,
                           tuple(np.array(p.translation) + rng.normal(size=3) * 1e-6),
                           p.intrinsics)
                for p in traj.poses]
            wobbled = Trajectory(tuple(poses), traj.fps)
            assert np.abs(featurize(wobbled) - base).max() < 1e-3

    def test_deterministic(self, rng):
        traj = random_trajectory(rng, n=10)
        assert np.array_equal(featurize(traj), featurize(traj))


class TestFid:
    def test_self_distance_zero(self, rng):
        x = FeatureSet(rng.normal(size=(200, 32)))
        assert fid(x, x) <= 1e-6

    def test_gaussian_offset_closed_form(self, rng):
        # equal covariance, mean offset delta: FID = ||delta||^2.  The
        # estimator's additive finite-sample bias (~d^2/n) stays under 2%
        # relative for this offset at n=5000.
        d = 32
        cov = np.eye(d)
        delta = np.full(d, 0.5)
        a = rng.multivariate_normal(np.zeros(d), cov, size=5000)
        b = rng.multivariate_normal(delta, cov, size=5000)
        got = fid(FeatureSet(a), FeatureSet(b))
        want = float(delta @ delta)
        assert abs(got - want) / want < 0.02

    def test_symmetry(self, rng):
        a = FeatureSet(rng.normal(size=(100, 32)))
        b = FeatureSet(rng.normal(size=(100, 32)) + 0.5)
        assert abs(fid(a, b) - fid(b, a)) < 1e-9

    def test_nonnegative_random_pairs(self, rng):
        for _ in range(50):
            a = FeatureSet(rng.normal(size=(40, 32)))
            b = FeatureSet(rng.normal(size=(40, 32)))
            assert fid(a, b) >= 0.0

    def test_too_few_samples_names_requirement(self, rng):
        a = FeatureSet(rng.normal(size=(10, 32)))
        with pytest.raises(ValidationError, match="33"):
            fid(a, a)


class TestCoverage:
    def test_self_coverage_full(self, rng):
        x = FeatureSet(rng.normal(size=(50, 8)))
        for k in (1, 3, 5, 10):
            assert coverage(x, x, k=k) == 1.0

    def test_collapsed_generation(self, rng):
        real = FeatureSet(rng.normal(size=(100, 4)) * 10)
        gen = FeatureSet(np.tile(real.vectors[0], (10, 1)))
        got = coverage(real, gen, k=5)
        # brute-force ball membership
        from scipy.spatial.distance import cdist

        d_rr = cdist(real.vectors, real.vectors)
        radii = np.sort(d_rr, axis=1)[:, 5]
        d_rg = cdist(real.vectors, gen.vectors).min(axis=1)
        want = float(np.mean(d_rg <= radii))
        assert got == want
        assert got < 0.5

    def test_shuffle_invariance(self, rng):
        real = FeatureSet(rng.normal(size=(60, 6)))
        gen = FeatureSet(rng.normal(size=(60, 6)))
        base = coverage(real, gen)
        real2 = FeatureSet(real.vectors[rng.permutation(60)])
        gen2 = FeatureSet(gen.vectors[rng.permutation(60)])
        assert coverage(real2, gen2) == base

    def test_too_few_points(self, rng):
        x = FeatureSet(rng.normal(size=(4, 3)))
        with pytest.raises(ValidationError):
            coverage(x, x, k=5)


class TestContrastive:
    def test_untrained_head_directs_to_training(self):
        head = ContrastiveHead()
        with pytest.raises(ValidationError, match="train-contrastive"):
            contrastive_score(["x"], [straight_trajectory(5, (1, 0, 0))], head)

    def test_training_separates_matched_pairs(self):
        samples = synth_batch(120, seed0=3,
                              label_pool=tuple(single_action_pool()),
                              segments_min=1, segments_max=1)
        captions = [s.caption for s in samples]
        trajs = [s.trajectory for s in samples]
        feats = np.stack([featurize(t) for t in trajs])
        head = ContrastiveHead()
        head.fit(captions, feats, epochs=30, seed=0)
        matched = contrastive_score(captions, trajs, head)
        rng = np.random.default_rng(1)
        shuffled = [captions[i] for i in rng.permutation(len(captions))]
        baseline = contrastive_score(shuffled, trajs, head)
        assert matched > baseline + 0.2

    def test_consistent_shuffle_keeps_score(self):
        samples = synth_batch(20, seed0=5)
        captions = [s.caption for s in samples]
        trajs = [s.trajectory for s in samples]
        feats = np.stack([featurize(t) for t in trajs])
        head = ContrastiveHead()
        head.fit(captions, feats, epochs=2, seed=0)
        base = contrastive_score(captions, trajs, head)
        order = np.random.default_rng(2).permutation(len(captions))
        got = contrastive_score([captions[i] for i in order],
                                [trajs[i] for i in order], head)
        assert got == pytest.approx(base, abs=1e-6)

    def test_degenerate_embeddings_guarded(self):
        import torch

        head = ContrastiveHead()
        head.trained = True
        # zero out the trajectory projection so embeddings collapse to 0
        with torch.no_grad():
            for p in head.traj_proj.parameters():
                p.zero_()
        traj = straight_trajectory(6, (1, 0, 0))
        with pytest.warns(UserWarning, match="degenerate"):
            assert contrastive_score(["x"], [traj], head) == 0.0

    def test_save_load_round_trip(self, tmp_path):
        samples = synth_batch(12, seed0=9)
        captions = [s.caption for s in samples]
        feats = np.stack([featurize(s.trajectory) for s in samples])
        head = ContrastiveHead()
        head.fit(captions, feats, epochs=1, seed=0)
        head.save(tmp_path / "head.pt")
        loaded = ContrastiveHead.load(tmp_path / "head.pt")
        assert loaded.trained
        a = contrastive_score(captions, [s.trajectory for s in samples], head)
        b = contrastive_score(captions, [s.trajectory for s in samples], loaded)
        assert a == pytest.approx(b, abs=1e-6)


def test_featurizer_id_is_stamped(rng):
    fs = featurize_set([random_trajectory(rng, n=8)])
    assert fs.featurizer == FEATURIZER_ID
