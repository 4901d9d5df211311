import math

import numpy as np
import pytest
import torch

from camtraj.errors import ValidationError
from camtraj.model import (
    CaptionTokenizer,
    ConditionalTrajectoryModel,
    ModelConfig,
    TextEncoder,
    TrainConfig,
    compute_loss,
    desk_config,
    fuse_conditions,
    generate,
    load_checkpoint,
    prepare_dataset,
    train,
)
from camtraj.model.vision import RgbdEncoder, depth_to_grid
from camtraj.synth import SynthConfig, build_dataset
from camtraj.tokenizer import CodecConfig, decode_trajectory

torch.set_num_threads(2)

TINY = ModelConfig(bins=16, traj_len=4, latent_dim=32, layers=2, heads=2,
                   m_text=8, m_image=5, m_depth=5, seed=0)


def tiny_model(modality="text", cfg=TINY):
    return ConditionalTrajectoryModel(cfg, modality=modality)


def random_tokens(cfg, batch, rng):
    ids = rng.integers(0, cfg.bins + 1, size=(batch, cfg.value_tokens))
    seqs = np.concatenate([
        np.full((batch, 1), cfg.bos), ids, np.full((batch, 1), cfg.eos)], axis=1)
    return torch.tensor(seqs, dtype=torch.long)


class TestModelConfig:
    def test_defaults_are_full_scale(self):
        cfg = ModelConfig()
        assert (cfg.latent_dim, cfg.layers, cfg.heads) == (1024, 12, 12)
        assert (cfg.m_text, cfg.m_image, cfg.m_depth) == (77, 257, 257)
        assert cfg.vocab_size == 260

    def test_desk_config(self):
        cfg = desk_config()
        assert (cfg.latent_dim, cfg.layers, cfg.traj_len) == (128, 4, 30)

    def test_heads_cannot_exceed_width(self):
        with pytest.raises(ValidationError):
            ModelConfig(latent_dim=4, heads=7)

    def test_non_divisible_heads_construct_and_run(self):
        cfg = ModelConfig(bins=16, traj_len=4, latent_dim=34, layers=1,
                          heads=4, m_text=8, m_image=5, m_depth=5)
        model = ConditionalTrajectoryModel(cfg)
        latent = torch.randn(1, 8, 34)
        tokens = torch.tensor([[cfg.bos, 3, 4, 5]])
        assert model(latent, tokens).shape == (1, 4, cfg.vocab_size)

    def test_m_total(self):
        cfg = ModelConfig()
        assert cfg.m_total("text") == 77
        assert cfg.m_total("rgbd") == 77 + 257 + 257


class TestCaptionTokenizer:
    def test_deterministic(self):
        tok = CaptionTokenizer(16)
        text = "The camera trucks right."
        assert tok.encode(text) == tok.encode(text)

    def test_known_words_distinct_from_buckets(self):
        tok = CaptionTokenizer(16)
        ids = tok.encode("the camera dollies forward")
        assert all(0 < i < tok.bucket_base for i in ids if i != tok.pad_id)

    def test_unknown_words_hash_bucketed(self):
        tok = CaptionTokenizer(16)
        ids = tok.encode("zebra quandary")
        real = [i for i in ids if i != tok.pad_id]
        assert all(i >= tok.bucket_base for i in real)

    def test_pad_and_truncate(self):
        tok = CaptionTokenizer(4)
        assert len(tok.encode("one")) == 4
        assert len(tok.encode("a b c d e f g")) == 4

    def test_empty_rejected(self):
        with pytest.raises(ValidationError):
            CaptionTokenizer(8).encode("   ")


class TestTextEncoder:
    def test_deterministic_latent(self):
        enc = TextEncoder(TINY)
        a = enc.encode_captions(["The camera trucks right."])
        b = enc.encode_captions(["The camera trucks right."])
        assert torch.equal(a, b)
        assert a.shape == (1, TINY.m_text, TINY.latent_dim)

    def test_distinct_captions_differ(self):
        enc = TextEncoder(TINY)
        a = enc.encode_captions(["The camera trucks right."])
        b = enc.encode_captions(["The camera trucks left."])
        row_diff = (a - b).abs().amax(dim=-1)
        assert (row_diff > 0).sum() >= 1


class TestRgbdEncoder:
    def test_zero_image_finite(self):
        enc = RgbdEncoder(TINY, TINY.m_image)
        grids = torch.zeros(2, 32, 32, 3)
        out = enc(grids)
        assert out.shape == (2, 5, TINY.latent_dim)
        assert torch.isfinite(out).all()

    def test_row_arithmetic_256(self):
        cfg = ModelConfig(bins=16, traj_len=4, latent_dim=32, layers=2, heads=2,
                          m_text=8, m_image=257, m_depth=257)
        enc = RgbdEncoder(cfg, cfg.m_image)
        out = enc.embed_patches(torch.zeros(1, 256, 256, 3))
        assert out.shape == (1, 257, 32)

    def test_wrong_grid_size_names_rows(self):
        enc = RgbdEncoder(TINY, TINY.m_image)
        with pytest.raises(ValidationError, match="rows"):
            enc(torch.zeros(1, 64, 64, 3))

    def test_patch_swap_locality_before_attention(self):
        enc = RgbdEncoder(TINY, TINY.m_image)
        grids = torch.rand(1, 32, 32, 3)
        swapped = grids.clone()
        # swap patch (0,0) with patch (1,1): rows 1 and 4 of the embedding
        swapped[0, :16, :16, :] = grids[0, 16:, 16:, :]
        swapped[0, 16:, 16:, :] = grids[0, :16, :16, :]
        a = enc.embed_patches(grids)[0]
        b = enc.embed_patches(swapped)[0]
        # the summary row is a mean over patches: invariant up to float
        # reassociation noise
        changed = [bool((a[i] - b[i]).abs().max() > 1e-6) for i in range(5)]
        assert changed == [False, True, False, False, True]

    def test_depth_expansion(self):
        depth = torch.rand(2, 32, 32)
        grid = depth_to_grid(depth)
        assert grid.shape == (2, 32, 32, 3)
        assert torch.equal(grid[..., 0], grid[..., 2])
        with pytest.raises(ValidationError):
            depth_to_grid(-torch.ones(1, 32, 32))


class TestFuseConditions:
    def test_text_only_rows(self):
        z = fuse_conditions(torch.zeros(2, 77, 8))
        assert z.shape == (2, 77, 8)

    def test_text_rgbd_rows(self):
        z = fuse_conditions(torch.zeros(1, 77, 8), torch.ones(1, 257, 8),
                            torch.ones(1, 257, 8))
        assert z.shape == (1, 77 + 257 + 257, 8)

    def test_depth_only_rejected(self):
        with pytest.raises(ValidationError):
            fuse_conditions(torch.zeros(1, 77, 8), None, torch.ones(1, 257, 8))
        with pytest.raises(ValidationError):
            fuse_conditions(torch.zeros(1, 77, 8), torch.ones(1, 257, 8), None)


class TestDecoderForward:
    def test_causality_exact(self, rng):
        model = tiny_model()
        latent = torch.randn(2, TINY.m_text, TINY.latent_dim)
        tokens = random_tokens(TINY, 2, rng)[:, :-1]
        base = model(latent, tokens).detach()
        for p in (0, 3, 17, tokens.shape[1] - 2):
            mutated = tokens.clone()
            mutated[:, p + 1:] = (mutated[:, p + 1:] + 1) % (TINY.bins + 1)
            out = model(latent, mutated).detach()
            assert torch.equal(out[:, : p + 1], base[:, : p + 1])

    def test_softmax_rows_normalized(self, rng):
        model = tiny_model()
        latent = torch.randn(1, TINY.m_text, TINY.latent_dim)
        tokens = random_tokens(TINY, 1, rng)[:, :-1]
        probs = model(latent, tokens).softmax(dim=-1)
        np.testing.assert_allclose(probs.sum(dim=-1).detach().numpy(), 1.0,
                                   atol=1e-6)

    def test_one_logit_row_per_token(self, rng):
        model = tiny_model()
        latent = torch.randn(1, TINY.m_text, TINY.latent_dim)
        tokens = random_tokens(TINY, 1, rng)[:, :7]
        assert model(latent, tokens).shape == (1, 7, TINY.vocab_size)

    def test_capacity_check(self, rng):
        model = tiny_model()
        latent = torch.randn(1, TINY.m_text, TINY.latent_dim)
        too_long = torch.zeros(1, TINY.value_tokens + 3, dtype=torch.long)
        with pytest.raises(ValidationError, match="capacity"):
            model(latent, too_long)

    def test_identical_condition_rows_permutation_invariant(self, rng):
        model = tiny_model()
        row = torch.randn(1, 1, TINY.latent_dim)
        latent = row.expand(1, TINY.m_text, TINY.latent_dim).contiguous()
        tokens = random_tokens(TINY, 1, rng)[:, :-1]
        base = model(latent, tokens).detach()
        perm = torch.randperm(TINY.m_text)
        out = model(latent[:, perm], tokens).detach()
        assert torch.equal(out, base)

    def test_gradients_match_finite_differences(self, rng):
        torch.manual_seed(0)
        model = tiny_model().double()
        latent = torch.randn(1, TINY.m_text, TINY.latent_dim, dtype=torch.float64)
        tokens = random_tokens(TINY, 1, rng)[:, :-1]

        def scalar():
            return model(latent, tokens).mean()

        loss = scalar()
        loss.backward()
        params = [p for p in model.decoder.parameters() if p.grad is not None]
        probe_rng = np.random.default_rng(0)
        worst = 0.0
        for _ in range(60):
            p = params[probe_rng.integers(len(params))]
            idx = tuple(probe_rng.integers(s) for s in p.shape)
            h = 1e-6
            with torch.no_grad():
                orig = float(p[idx])
                p[idx] = orig + h
                up = float(scalar())
                p[idx] = orig - h
                down = float(scalar())
                p[idx] = orig
            fd = (up - down) / (2 * h)
            an = float(p.grad[idx])
            rel = abs(an - fd) / max(abs(an), abs(fd), 1e-8)
            worst = max(worst, rel)
        assert worst <= 1e-3


class TestComputeLoss:
    def test_one_hot_logits_near_zero(self, rng):
        targets = torch.tensor(rng.integers(0, TINY.vocab_size, size=(2, 9)))
        logits = torch.full((2, 9, TINY.vocab_size), 0.0)
        logits.scatter_(-1, targets[..., None], 20.0)
        latent = torch.zeros(2, 3, 4)
        out = compute_loss(logits, targets, latent, 0.0, TINY.pad)
        assert float(out.total) <= 1e-3

    def test_uniform_logits_log_vocab(self):
        cfg = desk_config()
        logits = torch.zeros(1, 5, cfg.vocab_size)
        targets = torch.zeros(1, 5, dtype=torch.long)
        out = compute_loss(logits, targets, torch.zeros(1, 2, 2), 0.0, cfg.pad)
        assert float(out.total) == pytest.approx(math.log(260), abs=1e-6)

    def test_regularizer_arithmetic(self):
        logits = torch.zeros(1, 2, TINY.vocab_size)
        targets = torch.zeros(1, 2, dtype=torch.long)
        latent = torch.full((1, 100, 100), 10.0, dtype=torch.float64)  # ||Z||^2 = 1e6
        out = compute_loss(logits, targets, latent, 1e-8, TINY.pad)
        assert out.regularizer == pytest.approx(0.01, rel=1e-9)

    def test_pad_positions_masked(self):
        logits = torch.randn(1, 4, TINY.vocab_size)
        targets = torch.tensor([[3, TINY.pad, TINY.pad, TINY.pad]])
        out = compute_loss(logits, targets, torch.zeros(1, 1, 1), 0.0, TINY.pad)
        only_first = torch.nn.functional.cross_entropy(logits[0, :1], targets[0, :1])
        assert float(out.total) == pytest.approx(float(only_first), abs=1e-6)

    def test_misaligned_shapes(self):
        with pytest.raises(ValidationError):
            compute_loss(torch.zeros(1, 3, 10), torch.zeros(1, 4, dtype=torch.long),
                         torch.zeros(1, 1, 1), 0.0, 9)


@pytest.fixture(scope="module")
def tiny_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    cfg = SynthConfig(frames=TINY.traj_len, rgbd=True, rgbd_size=32)
    return build_dataset(16, cfg, seed=4, out_dir=out)


class TestTraining:
    def test_initial_loss_near_uniform(self, tiny_corpus):
        cfg = desk_config(traj_len=TINY.traj_len, latent_dim=32, layers=2,
                          heads=2)
        sched = TrainConfig(epochs=1, batch_size=4, lr=1e-5, seed=0)
        result = train(tiny_corpus, cfg, sched, log=None)
        assert abs(result.loss_curve[0][1] - math.log(260)) < 0.5

    def test_deterministic_given_seed(self, tiny_corpus):
        cfg = desk_config(traj_len=TINY.traj_len, latent_dim=32, layers=2,
                          heads=2)
        sched = TrainConfig(epochs=2, batch_size=4, lr=1e-3, seed=7)
        a = train(tiny_corpus, cfg, sched, log=None)
        b = train(tiny_corpus, cfg, sched, log=None)
        assert a.loss_curve == b.loss_curve

    def test_loss_decreases_every_seed(self, tiny_corpus):
        # downsized version of the overfit-task property (the full-scale
        # single-seed run lives in the acceptance suite)
        for seed in range(5):
            cfg = desk_config(traj_len=TINY.traj_len, latent_dim=32, layers=2,
                              heads=2, seed=seed)
            sched = TrainConfig(epochs=10, batch_size=4, lr=1e-3, seed=seed)
            result = train(tiny_corpus, cfg, sched, log=None)
            assert result.loss_curve[-1][1] < result.loss_curve[0][1], seed

    def test_rgbd_modality_trains(self, tiny_corpus):
        cfg = ModelConfig(bins=256, traj_len=TINY.traj_len, latent_dim=32,
                          layers=2, heads=2, m_text=8, m_image=5, m_depth=5)
        sched = TrainConfig(epochs=1, batch_size=4, lr=1e-3, seed=0)
        result = train(tiny_corpus, cfg, sched, modality="rgbd", log=None)
        assert len(result.loss_curve) == 1

    def test_checkpoint_round_trip_and_resume(self, tiny_corpus, tmp_path):
        cfg = desk_config(traj_len=TINY.traj_len, latent_dim=32, layers=2,
                          heads=2)
        sched = TrainConfig(epochs=2, batch_size=4, lr=1e-3, seed=0)
        path = tmp_path / "ckpt.pt"
        result = train(tiny_corpus, cfg, sched, checkpoint_path=path, log=None)
        bundle = load_checkpoint(path)
        assert bundle["epoch"] == 1
        assert bundle["model_config"] == cfg

        captions = ["The camera dollies forward."]
        a = result.model.encode_conditions(captions)
        b = bundle["model"].encode_conditions(captions)
        assert torch.equal(a, b)

        resumed = train(tiny_corpus, cfg,
                        TrainConfig(epochs=4, batch_size=4, lr=1e-3, seed=0),
                        resume_from=path, log=None)
        assert [row[0] for row in resumed.loss_curve] == [0, 1, 2, 3]

    def test_loss_csv_format(self, tiny_corpus, tmp_path):
        cfg = desk_config(traj_len=TINY.traj_len, latent_dim=32, layers=2,
                          heads=2)
        result = train(tiny_corpus, cfg,
                       TrainConfig(epochs=1, batch_size=8, lr=1e-4, seed=0),
                       log=None)
        out = tmp_path / "loss.csv"
        result.write_loss_csv(out)
        lines = out.read_text().splitlines()
        assert lines[0] == "epoch,mean_ce,reg_term"
        assert len(lines) == 2

    def test_invalid_records_listed(self, tiny_corpus):
        # wrong codec length for every record -> abort with a listing
        cfg = desk_config(traj_len=TINY.traj_len + 1, latent_dim=32, layers=2,
                          heads=2)
        with pytest.raises(ValidationError, match="failed to encode"):
            prepare_dataset(tiny_corpus, cfg)


class TestGenerate:
    def test_greedy_deterministic(self):
        model = tiny_model()
        latent = torch.randn(2, TINY.m_text, TINY.latent_dim)
        a = generate(model, latent, sampler="greedy", seed=1)
        b = generate(model, latent, sampler="greedy", seed=99)
        assert [s.ids for s in a] == [s.ids for s in b]

    def test_same_seed_same_samples(self):
        model = tiny_model()
        latent = torch.randn(1, TINY.m_text, TINY.latent_dim)
        a = generate(model, latent, sampler="nucleus", seed=5)
        b = generate(model, latent, sampler="nucleus", seed=5)
        assert a[0].ids == b[0].ids

    def test_structural_validity_10k_random_weight_generations(self):
        import warnings

        from camtraj.tokenizer import ScaleConsistencyWarning

        codec = CodecConfig(bins=TINY.bins, traj_len=TINY.traj_len)
        n_checked = 0
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ScaleConsistencyWarning)
            for seed in range(5):
                model = tiny_model(cfg=ModelConfig(
                    bins=16, traj_len=4, latent_dim=32, layers=2, heads=2,
                    m_text=8, m_image=5, m_depth=5, seed=seed))
                torch.manual_seed(seed)
                latent = torch.randn(500, TINY.m_text, TINY.latent_dim)
                for sampler, temp in (("greedy", 1.0), ("topk", 1.5),
                                      ("nucleus", 1.5), ("nucleus", 0.7)):
                    for ts in generate(model, latent, sampler=sampler,
                                       temperature=temp, seed=seed):
                        decode_trajectory(ts, codec)
                        n_checked += 1
        assert n_checked == 10_000

    def test_eos_only_at_decade_boundaries(self):
        model = tiny_model()
        latent = torch.randn(40, TINY.m_text, TINY.latent_dim)
        for ts in generate(model, latent, sampler="nucleus", temperature=2.0,
                           seed=3):
            assert (len(ts.payload()) % 10 == 0)
            assert len(ts.payload()) >= 10

    def test_unknown_sampler(self):
        model = tiny_model()
        latent = torch.randn(1, TINY.m_text, TINY.latent_dim)
        with pytest.raises(ValidationError):
            generate(model, latent, sampler="beam")


class TestRetrievalProbe:
    def test_trained_latents_group_same_label_captions(self, tmp_path):
        # caption -> caption nearest-neighbor retrieval over mean-pooled
        # text latents: after training, captions sharing a label set
        # should dominate each other's neighborhoods (>= 80% top-1 purity)
        from camtraj.synth import single_action_pool
        from camtraj.tagging import parse_caption

        from collections import Counter

        corpus = build_dataset(
            250, SynthConfig(frames=30, segments_min=2, segments_max=2,
                             label_pool=tuple(single_action_pool())),
            seed=17, out_dir=tmp_path)
        cfg = desk_config(traj_len=30, latent_dim=64, layers=2, heads=2)
        sched = TrainConfig(epochs=4, batch_size=16, lr=1e-3, seed=0)
        result = train(corpus, cfg, sched, log=None)
        encoder = result.model.text_encoder

        captions = sorted({r.caption for r in corpus.records})
        ids = encoder.tokenizer.encode_batch(captions)
        with torch.no_grad():
            rows = encoder(ids)
        mask = (ids != encoder.tokenizer.pad_id).float()[:, :, None]
        latents = (rows * mask).sum(dim=1) / mask.sum(dim=1)

        label_sets = [frozenset(t for tag in parse_caption(c)
                                for t in tag.atomic_labels())
                      for c in captions]
        dists = torch.cdist(latents, latents)
        dists.fill_diagonal_(float("inf"))
        nearest = dists.argmin(dim=1)
        # purity over queries that have at least one same-set partner
        counts = Counter(label_sets)
        matchable = [i for i, ls in enumerate(label_sets) if counts[ls] >= 2]
        assert len(matchable) >= 50
        purity = float(np.mean([
            label_sets[i] == label_sets[int(nearest[i])] for i in matchable]))
        assert purity >= 0.8, purity


class TestModalityContracts:
    def test_text_model_rejects_rgbd_inputs(self):
        model = tiny_model("text")
        with pytest.raises(ValidationError):
            model.encode_conditions(["x"], images=torch.zeros(1, 32, 32, 3),
                                    depths=torch.zeros(1, 32, 32))

    def test_rgbd_model_requires_both(self):
        model = tiny_model("rgbd")
        with pytest.raises(ValidationError):
            model.encode_conditions(["x"])
        with pytest.raises(ValidationError):
            model.encode_conditions(["x"], images=torch.zeros(1, 32, 32, 3))

    def test_rgbd_shapes_must_match(self):
        model = tiny_model("rgbd")
        with pytest.raises(ValidationError, match="sizes differ"):
            model.encode_conditions(["x"], images=torch.zeros(1, 32, 32, 3),
                                    depths=torch.zeros(1, 16, 16))

    def test_rgbd_latent_row_count(self):
        model = tiny_model("rgbd")
        z = model.encode_conditions(["x"], images=torch.zeros(1, 32, 32, 3),
                                    depths=torch.zeros(1, 32, 32))
        assert z.shape == (1, 8 + 5 + 5, TINY.latent_dim)
