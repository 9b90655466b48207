"""Latent codec contracts: shapes, round trips, training quality, and the
noise conditioning augmentation primitive."""

import numpy as np
import pytest

from glyphsynth.codec import (
    CodecConfig,
    CodecError,
    CodecTrainConfig,
    held_out_mae,
    make_codec,
    noise_augment,
    train_autoencoder,
)
from glyphsynth.corpus import CorpusConfig, build_corpus
from glyphsynth.data import RenderCache
from glyphsynth.schedule import make_schedule


@pytest.fixture(scope="module")
def glyph_stack():
    man = build_corpus(CorpusConfig(n_components=24, n_strokes=6, n_chars=60,
                                    n_styles=8, ref_set_size=12, seed=5))
    imgs, _, _ = RenderCache(man).stack(man.train_chars, man.train_styles, 32)
    return imgs


@pytest.fixture(scope="module")
def trained_codec(glyph_stack):
    codec, history = train_autoencoder(
        glyph_stack,
        CodecConfig(kind="conv", f=4, latent_channels=4, base_width=32, seed=0),
        CodecTrainConfig(steps=400, batch_size=16, lr=2e-3, seed=0),
    )
    return codec, history


class TestIdentityCodec:
    def test_passthrough(self):
        codec = make_codec(CodecConfig(kind="identity"))
        x = np.random.default_rng(0).random((4, 32, 32)).astype(np.float32)
        z = codec.encode(x)
        assert z.shape == (4, 32, 32, 1)
        np.testing.assert_array_equal(z[:, :, :, 0], x)
        np.testing.assert_array_equal(codec.decode(z), x)
        assert held_out_mae(codec, x) == 0.0

    def test_training_is_noop(self, glyph_stack):
        codec, history = train_autoencoder(
            glyph_stack, CodecConfig(kind="identity"), CodecTrainConfig(steps=5))
        assert history == []
        assert held_out_mae(codec, glyph_stack[:8]) == 0.0


class TestSpaceToDepth:
    def test_exact_roundtrip_and_shapes(self):
        codec = make_codec(CodecConfig(kind="space_to_depth", f=4))
        x = np.random.default_rng(1).random((3, 64, 64)).astype(np.float32)
        z = codec.encode(x)
        assert z.shape == (3, 16, 16, 16)
        np.testing.assert_array_equal(codec.decode(z), x)
        assert codec.latent_shape(128) == (32, 32, 16)

    def test_rejects_indivisible_resolution(self):
        codec = make_codec(CodecConfig(kind="space_to_depth", f=4))
        with pytest.raises(CodecError):
            codec.encode(np.zeros((2, 30, 30), np.float32))


class TestConvCodec:
    def test_latent_shape_contract(self):
        codec = make_codec(CodecConfig(kind="conv", f=4, latent_channels=4))
        x = np.zeros((2, 64, 64), np.float32)
        assert codec.encode(x).shape == (2, 16, 16, 4)
        assert codec.latent_shape(64) == (16, 16, 4)

    def test_trained_holdout_mae(self, trained_codec):
        _, history = trained_codec
        assert history[-1]["holdout_mae"] <= 0.03

    def test_train_mae_close_to_holdout(self, trained_codec, glyph_stack):
        codec, history = trained_codec
        train_mae = held_out_mae(codec, glyph_stack[:64])
        assert train_mae <= history[-1]["holdout_mae"] + 0.01

    def test_inference_deterministic(self, trained_codec, glyph_stack):
        codec, _ = trained_codec
        a = codec.decode(codec.encode(glyph_stack[:4]))
        b = codec.decode(codec.encode(glyph_stack[:4]))
        np.testing.assert_array_equal(a, b)

    def test_decode_clamped(self, trained_codec):
        codec, _ = trained_codec
        wild = np.random.default_rng(2).normal(0, 10, size=(2, 8, 8, 4)).astype(np.float32)
        out = codec.decode(wild)
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_standardized_latents_unit_scale(self, trained_codec, glyph_stack):
        codec, _ = trained_codec
        z = codec.encode_std(glyph_stack)
        assert abs(float(z.mean())) < 0.1
        assert abs(float(z.std()) - 1.0) < 0.1

    def test_divergence_aborts(self, glyph_stack):
        with pytest.raises(CodecError, match="diverged"):
            train_autoencoder(
                glyph_stack,
                CodecConfig(kind="conv", f=4, latent_channels=4, base_width=16, seed=0),
                CodecTrainConfig(steps=60, batch_size=8, lr=1e6, seed=0),
            )

    def test_empty_corpus_rejected(self):
        with pytest.raises(CodecError):
            train_autoencoder(np.zeros((1, 32, 32), np.float32),
                              CodecConfig(kind="conv", f=4, latent_channels=4),
                              CodecTrainConfig(steps=1))


class TestNoiseAugment:
    def setup_method(self):
        self.codec = make_codec(CodecConfig(kind="identity"))
        self.codec.latent_shift = 0.5
        self.codec.latent_scale = 0.5
        self.schedule = make_schedule(1000, "linear")
        self.x = np.random.default_rng(3).random((32, 32)).astype(np.float32)

    def test_s0_is_exact_roundtrip_no_rng(self):
        out = noise_augment(self.x, 0, self.codec, self.schedule, rng=None)
        np.testing.assert_allclose(out, self.x, atol=1e-6)

    def test_terminal_s_is_pure_noise(self):
        rng = np.random.default_rng(4)
        out = noise_augment(self.x, 1000, self.codec, self.schedule, rng,
                            s_max=1000)
        # alpha_T = 0: the input contributes nothing; output is clamped noise
        rng2 = np.random.default_rng(4)
        eps = rng2.standard_normal((1, 32, 32, 1)).astype(np.float32)
        expected = np.clip(eps[0, :, :, 0] * 0.5 + 0.5, 0, 1)
        np.testing.assert_allclose(out, expected, atol=1e-6)

    def test_mse_monotone_in_s(self):
        rng = np.random.default_rng(5)
        base = noise_augment(self.x, 0, self.codec, self.schedule)
        mses = []
        for s in (10, 80, 250):
            trials = [
                float(((noise_augment(self.x, s, self.codec, self.schedule, rng) - base) ** 2).mean())
                for _ in range(100)
            ]
            mses.append(np.mean(trials))
        assert mses[0] < mses[1] < mses[2]

    def test_out_of_range_rejected(self):
        with pytest.raises(CodecError):
            noise_augment(self.x, 999, self.codec, self.schedule,
                          np.random.default_rng(0))
        with pytest.raises(CodecError):
            noise_augment(self.x, -1, self.codec, self.schedule,
                          np.random.default_rng(0))
        with pytest.raises(CodecError):
            noise_augment(self.x, 5, self.codec, self.schedule, rng=None)

    def test_batched_shape(self):
        xb = np.random.default_rng(6).random((4, 32, 32)).astype(np.float32)
        out = noise_augment(xb, 0, self.codec, self.schedule)
        assert out.shape == (4, 32, 32)
