"""Metric suite contracts."""

import numpy as np
import pytest

from glyphsynth.corpus import CorpusConfig, build_corpus
from glyphsynth.data import RenderCache
from glyphsynth.metrics import (
    ClassifierConfig,
    GlyphClassifier,
    MetricError,
    accuracy,
    fid,
    metric_report,
    rmse,
    ssim,
    train_classifier,
)


class TestRmse:
    def test_identity_zero(self):
        x = np.random.default_rng(0).random((16, 16))
        assert rmse(x, x) == 0.0

    def test_zeros_vs_ones(self):
        assert rmse(np.zeros((8, 8)), np.ones((8, 8))) == 1.0

    def test_shape_mismatch(self):
        with pytest.raises(MetricError):
            rmse(np.zeros((4, 4)), np.zeros((5, 5)))


class TestSsim:
    def test_identity_one(self):
        x = np.random.default_rng(1).random((32, 32))
        assert abs(ssim(x, x) - 1.0) < 1e-12

    def test_monotone_degradation(self):
        rng = np.random.default_rng(2)
        x = rng.random((32, 32)) * 0.5 + 0.25
        small = np.clip(x + rng.uniform(0, 0.05, x.shape), 0, 1)
        large = np.clip(x + rng.uniform(0, 0.1, x.shape), 0, 1)
        assert ssim(x, large) < ssim(x, small) < 1.0

    def test_shape_mismatch(self):
        with pytest.raises(MetricError):
            ssim(np.zeros((16, 16)), np.zeros((16, 17)))


class TestFid:
    def test_identical_sets_zero(self):
        x = np.random.default_rng(3).standard_normal((200, 8))
        assert fid(x, x.copy()) <= 1e-6

    def test_mean_shift_matches_closed_form(self):
        rng = np.random.default_rng(4)
        n, d = 10_000, 6
        delta = np.array([0.6, -0.2, 0.0, 0.3, 0.1, -0.4])
        a = rng.standard_normal((n, d))
        b = rng.standard_normal((n, d)) + delta
        # closed form for equal covariances: |delta|^2
        assert abs(fid(a, b) - float(delta @ delta)) < 0.05

    def test_symmetry_exact(self):
        rng = np.random.default_rng(5)
        a = rng.standard_normal((50, 4))
        b = rng.standard_normal((60, 4)) * 1.4 + 0.3
        assert fid(a, b) == fid(b, a)

    def test_nonnegative(self):
        rng = np.random.default_rng(6)
        for seed in range(5):
            r = np.random.default_rng(seed)
            assert fid(r.standard_normal((30, 5)), r.standard_normal((40, 5))) >= 0.0

    def test_singular_covariance_regularized(self):
        a = np.zeros((10, 3))
        b = np.ones((10, 3))
        val = fid(a, b)
        assert np.isfinite(val) and abs(val - 3.0) < 1e-3

    def test_too_few_samples(self):
        with pytest.raises(MetricError):
            fid(np.zeros((1, 3)), np.zeros((5, 3)))


@pytest.fixture(scope="module")
def classifier_setup():
    man = build_corpus(CorpusConfig(n_components=24, n_strokes=6, n_chars=30,
                                    n_styles=8, ref_set_size=8, seed=11))
    cache = RenderCache(man)
    train_imgs, train_cids, train_sids = cache.stack(
        man.train_chars, man.train_styles, 32)
    test_imgs, test_cids, test_sids = cache.stack(
        man.train_chars, man.test_styles, 32)
    char_index = {c: i for i, c in enumerate(sorted(set(train_cids)))}
    y_train = np.array([char_index[c] for c in train_cids])
    y_test = np.array([char_index[c] for c in test_cids])
    clf, hist = train_classifier(
        ClassifierConfig(kind="character", n_classes=len(char_index), resolution=32,
                         steps=1200, seed=0),
        train_imgs, y_train, test_imgs, y_test)
    return man, cache, clf, hist, (train_imgs, y_train, test_imgs, y_test)


class TestClassifier:
    def test_holdout_accuracy_high(self, classifier_setup):
        _, _, clf, hist, (_, _, test_imgs, y_test) = classifier_setup
        acc, confusion = accuracy(clf, test_imgs, y_test)
        assert acc >= 0.99
        assert confusion.sum() == len(y_test)
        assert np.trace(confusion) == int(acc * len(y_test))

    def test_constant_prediction_baseline(self, classifier_setup):
        _, _, clf, _, (train_imgs, y_train, _, _) = classifier_setup
        # force constant predictions by zeroing the head
        saved_w, saved_b = clf.head.w.data.copy(), clf.head.b.data.copy()
        clf.head.w.data[:] = 0
        clf.head.b.data[:] = 0
        clf.head.b.data[3] = 10.0
        try:
            n = clf.config.n_classes
            balanced = train_imgs[: n * 4]
            labels = np.tile(np.arange(n), 4)
            acc, _ = accuracy(clf, balanced, labels)
            assert abs(acc - 1.0 / n) < 1e-9
        finally:
            clf.head.w.data[:] = saved_w
            clf.head.b.data[:] = saved_b

    def test_same_seed_same_result(self, classifier_setup):
        man, cache, _, _, (train_imgs, y_train, test_imgs, y_test) = classifier_setup
        cfg = ClassifierConfig(kind="character", n_classes=int(y_train.max()) + 1,
                               resolution=32, steps=60, seed=4)
        _, h1 = train_classifier(cfg, train_imgs, y_train, test_imgs, y_test)
        _, h2 = train_classifier(cfg, train_imgs, y_train, test_imgs, y_test)
        assert h1 == h2

    def test_label_mismatch_rejected(self, classifier_setup):
        _, _, clf, _, (train_imgs, y_train, _, _) = classifier_setup
        with pytest.raises(MetricError):
            accuracy(clf, train_imgs, y_train[:-1])

    def test_divergence_aborts(self, classifier_setup):
        _, _, _, _, (train_imgs, y_train, _, _) = classifier_setup
        poisoned = train_imgs.copy()
        poisoned[0] = np.nan
        with pytest.raises(MetricError, match="diverged"):
            train_classifier(
                ClassifierConfig(kind="character", n_classes=int(y_train.max()) + 1,
                                 resolution=32, steps=2000, seed=0),
                poisoned, y_train)


class TestMetricReport:
    def test_report_fields_and_determinism(self, classifier_setup):
        man, cache, char_clf, _, (train_imgs, y_train, _, _) = classifier_setup
        style_index = {s: i for i, s in enumerate(sorted(man.styles))}
        imgs, cids, sids = cache.stack(man.train_chars[:10], man.train_styles[:3], 32)
        char_index = {c: i for i, c in enumerate(sorted(set(man.train_chars)))}
        y_c = np.array([char_index[c] for c in cids])
        y_s = np.array([style_index[s] for s in sids])
        style_clf, _ = train_classifier(
            ClassifierConfig(kind="style", n_classes=len(style_index), resolution=32,
                             steps=300, seed=1),
            imgs, y_s)
        noisy = np.clip(imgs + 0.05, 0, 1)
        r1 = metric_report(noisy, imgs, y_c, y_s, char_clf, style_clf)
        r2 = metric_report(noisy, imgs, y_c, y_s, char_clf, style_clf)
        assert r1 == r2
        assert r1.rmse > 0 and 0 < r1.ssim < 1 and r1.fid >= 0
        assert 0 <= r1.acc_content <= 1 and 0 <= r1.acc_style <= 1
        assert r1.n_pairs == imgs.shape[0]
        assert len(r1.config_hash) == 16
        import json
        assert json.loads(r1.to_json())["fid"] == r1.fid
