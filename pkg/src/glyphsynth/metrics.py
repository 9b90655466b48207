"""Metric suite: RMSE, SSIM, feature-space Fréchet distance, and
classifier-based content/style accuracy.

The Fréchet metric's feature extractor is the penultimate (pooled) layer of
the trained style classifier; absolute values are therefore only comparable
between reports sharing a config hash, and only orderings are meaningful
across setups.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .nn import Conv2d, GroupNorm, Linear, Module, Tensor, autodiff as ad
from .nn.optim import Adam


class MetricError(ValueError):
    pass


# ---------------------------------------------------------------------------
# pairwise metrics
# ---------------------------------------------------------------------------


def rmse(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.asarray(a, np.float64), np.asarray(b, np.float64)
    if a.shape != b.shape:
        raise MetricError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.sqrt(np.mean((a - b) ** 2)))


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r**2) / (2 * sigma**2))
    k = np.outer(g, g)
    return k / k.sum()


def ssim(a: np.ndarray, b: np.ndarray, window: int = 11, sigma: float = 1.5) -> float:
    """Structural similarity with the standard Gaussian window and stability
    constants, for images valued in [0, 1]."""
    a, b = np.asarray(a, np.float64), np.asarray(b, np.float64)
    if a.shape != b.shape:
        raise MetricError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim != 2:
        raise MetricError("ssim expects single-channel 2-D images")
    k = _gaussian_window(window, sigma)
    c1, c2 = 0.01**2, 0.03**2

    def filt(x):
        return fftconvolve(x, k, mode="valid")

    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a**2
    var_b = filt(b * b) - mu_b**2
    cov = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


# ---------------------------------------------------------------------------
# Frechet distance between Gaussian feature fits
# ---------------------------------------------------------------------------


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((m + m.T) / 2.0)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def fid(features_a: np.ndarray, features_b: np.ndarray, eps: float = 1e-6) -> float:
    """Fréchet distance between Gaussian fits of two feature sets:
    |mu1-mu2|^2 + tr(S1 + S2 - 2 (S1 S2)^{1/2}), with the matrix square root
    taken through the symmetric PSD form and eigenvalues clipped at zero.
    The argument order is canonicalized so fid(a, b) == fid(b, a) exactly."""
    a = np.asarray(features_a, np.float64)
    b = np.asarray(features_b, np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise MetricError("feature sets must be (n, d) with matching d")
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise MetricError("need at least 2 samples per side")
    if a.tobytes() > b.tobytes():
        a, b = b, a
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    cov_a = np.cov(a, rowvar=False)
    cov_b = np.cov(b, rowvar=False)
    d = a.shape[1]
    cov_a = cov_a.reshape(d, d)
    cov_b = cov_b.reshape(d, d)
    for _ in range(2):
        sa = _psd_sqrt(cov_a)
        inner = _psd_sqrt(sa @ cov_b @ sa)
        if np.all(np.isfinite(inner)):
            break
        cov_a = cov_a + eps * np.eye(d)
        cov_b = cov_b + eps * np.eye(d)
    diff = mu_a - mu_b
    val = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * np.trace(inner))
    return max(val, 0.0)


# ---------------------------------------------------------------------------
# classifiers
# ---------------------------------------------------------------------------


@dataclass
class ClassifierConfig:
    kind: str  # "character" | "style"
    n_classes: int
    resolution: int = 32
    width: int = 24
    steps: int = 3000
    batch_size: int = 32
    lr: float = 1.5e-3
    weight_decay: float = 1e-4
    shift_aug: int = 2  # random training shift in pixels (breaks memorization)
    noise_aug: float = 0.015
    union_mix: float = 0.0  # prob of replacing a sample with the ink union of
    # two same-class glyphs; style cues survive, glyph identity does not
    seed: int = 0


class GlyphClassifier(Module):
    """Small conv net with dual mean+max pooling (max pooling keeps thin
    local cues like serifs and stroke edges); `features` exposes the pooled
    penultimate layer used as the Fréchet feature space."""

    def __init__(self, config: ClassifierConfig):
        super().__init__()
        self.config = config
        rng = np.random.default_rng([config.seed, 5])
        w = config.width
        extra = {16: 0, 32: 0, 64: 1, 128: 2}.get(config.resolution)
        if extra is None:
            raise MetricError(f"classifier resolution {config.resolution} unsupported")
        self.pre = []
        c_in = 1
        for i in range(extra):
            self.pre.append(self.add_module(f"pre{i}", Conv2d(c_in, 12, stride=2, rng=rng)))
            c_in = 12
        self.c1 = self.add_module("c1", Conv2d(c_in, w, stride=2, rng=rng))
        self.n1 = self.add_module("n1", GroupNorm(w))
        self.c2 = self.add_module("c2", Conv2d(w, 2 * w, stride=2, rng=rng))
        self.n2 = self.add_module("n2", GroupNorm(2 * w))
        self.c3 = self.add_module("c3", Conv2d(2 * w, 64, stride=2, rng=rng))
        self.n3 = self.add_module("n3", GroupNorm(64))
        self.head = self.add_module("head", Linear(128, config.n_classes, rng=rng))

    def _trunk(self, x: Tensor) -> Tensor:
        h = x
        for conv in self.pre:
            h = ad.silu(conv(h))
        h = ad.silu(self.n1(self.c1(h)))
        h = ad.silu(self.n2(self.c2(h)))
        h = ad.silu(self.n3(self.c3(h)))
        return ad.concat([ad.tmean(h, axis=(1, 2)), ad.spatial_max(h)], axis=1)  # (B, 128)

    def logits(self, x: Tensor) -> Tensor:
        return self.head(self._trunk(x))

    def features(self, images: np.ndarray) -> np.ndarray:
        with ad.no_grad():
            return self._trunk(Tensor(self._prep(images))).data

    def _prep(self, images: np.ndarray) -> np.ndarray:
        images = np.asarray(images, np.float32)
        if images.ndim == 2:
            images = images[None]
        if images.ndim == 3:
            images = images[..., None]
        if images.shape[1] != self.config.resolution:
            raise MetricError(
                f"classifier expects {self.config.resolution}px images, got {images.shape}")
        return images

    def predict(self, images: np.ndarray) -> np.ndarray:
        with ad.no_grad():
            lg = self.logits(Tensor(self._prep(images))).data
        return lg.argmax(axis=1)


_CLASS_INDEX_CACHE: dict = {}


def _class_index(labels: np.ndarray) -> dict:
    key = (labels.tobytes(), labels.shape)
    if key not in _CLASS_INDEX_CACHE:
        _CLASS_INDEX_CACHE[key] = {
            int(c): np.where(labels == c)[0] for c in np.unique(labels)
        }
    return _CLASS_INDEX_CACHE[key]


def train_classifier(config: ClassifierConfig, images: np.ndarray, labels: np.ndarray,
                     holdout_images: np.ndarray | None = None,
                     holdout_labels: np.ndarray | None = None,
                     log=None) -> tuple:
    """Cross-entropy training; returns (classifier, history). Aborts on a
    non-finite loss."""
    labels = np.asarray(labels)
    if images.shape[0] != labels.shape[0] or images.shape[0] < 2:
        raise MetricError("labeled corpus is empty or misaligned")
    clf = GlyphClassifier(config)
    opt = Adam(clf.params(), lr=config.lr)
    rng = np.random.default_rng([config.seed, 9])
    onehot = np.eye(config.n_classes, dtype=np.float32)
    history = []
    shift = int(round(config.shift_aug * config.resolution / 32))
    for step in range(config.steps):
        idx = rng.integers(0, images.shape[0], size=config.batch_size)
        batch = images[idx].astype(np.float32)
        if config.union_mix:
            by_class = _class_index(labels)
            for i in range(batch.shape[0]):
                if rng.random() < config.union_mix:
                    peers = by_class[int(labels[idx[i]])]
                    j = peers[int(rng.integers(len(peers)))]
                    batch[i] = np.maximum(batch[i], images[j])
        if shift:
            res = batch.shape[1]
            for i in range(batch.shape[0]):
                dy, dx = rng.integers(-shift, shift + 1, size=2)
                moved = np.zeros_like(batch[i])
                ys = slice(max(dy, 0), res + min(dy, 0))
                xs = slice(max(dx, 0), res + min(dx, 0))
                ys_s = slice(max(-dy, 0), res + min(-dy, 0))
                xs_s = slice(max(-dx, 0), res + min(-dx, 0))
                moved[ys, xs] = batch[i][ys_s, xs_s]
                batch[i] = moved
        if config.noise_aug:
            batch = np.clip(
                batch + rng.normal(0, config.noise_aug, batch.shape).astype(np.float32),
                0.0, 1.0)
        x = Tensor(batch[..., None])
        lp = ad.log_softmax(clf.logits(x), axis=1)
        loss = ad.mul(ad.tsum(ad.mul(lp, Tensor(onehot[labels[idx]]))), -1.0 / config.batch_size)
        lv = float(loss.data)
        if not np.isfinite(lv):
            raise MetricError(f"classifier training diverged at step {step}")
        clf.zero_grad()
        loss.backward()
        if config.weight_decay:
            for p in clf.params():
                if p.grad is not None and p.data.ndim > 1:
                    p.grad += config.weight_decay * p.data
        opt.step()
        if (step % 500 == 0 or step == config.steps - 1) and holdout_images is not None:
            acc, _ = accuracy(clf, holdout_images, holdout_labels)
            history.append({"step": step, "loss": lv, "holdout_acc": acc})
            if log:
                log(history[-1])
    return clf, history


def accuracy(classifier: GlyphClassifier, images: np.ndarray, labels: np.ndarray,
             batch: int = 256) -> tuple:
    """Fraction of correct predictions plus per-class confusion counts."""
    labels = np.asarray(labels)
    if images.shape[0] != labels.shape[0]:
        raise MetricError("labels misaligned with images")
    n_classes = classifier.config.n_classes
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    correct = 0
    for i in range(0, images.shape[0], batch):
        pred = classifier.predict(images[i : i + batch])
        true = labels[i : i + batch]
        correct += int((pred == true).sum())
        np.add.at(confusion, (true, pred), 1)
    return correct / images.shape[0], confusion


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


@dataclass
class MetricReport:
    rmse: float
    ssim: float
    fid: float
    acc_content: float
    acc_style: float
    n_pairs: int
    config_hash: str

    def to_json(self) -> str:
        return json.dumps(self.__dict__)


def config_hash(parts: dict) -> str:
    return hashlib.sha256(json.dumps(parts, sort_keys=True).encode()).hexdigest()[:16]


def metric_report(generated: np.ndarray, reference: np.ndarray,
                  char_labels: np.ndarray, style_labels: np.ndarray,
                  char_clf: GlyphClassifier, style_clf: GlyphClassifier,
                  extra_config: dict | None = None) -> MetricReport:
    """Aligned-pair metrics at a common resolution; the Fréchet features come
    from the style classifier's penultimate layer."""
    if generated.shape != reference.shape:
        raise MetricError("generated/reference stacks must align")
    r = float(np.mean([rmse(g, t) for g, t in zip(generated, reference)]))
    s = float(np.mean([ssim(g, t) for g, t in zip(generated, reference)]))
    f = fid(style_clf.features(reference), style_clf.features(generated))
    acc_c, _ = accuracy(char_clf, generated, char_labels)
    acc_s, _ = accuracy(style_clf, generated, style_labels)
    h = config_hash({
        "feature_extractor": "style_classifier.penultimate",
        "style_clf_seed": style_clf.config.seed,
        "char_clf_seed": char_clf.config.seed,
        "resolution": int(generated.shape[1]),
        **(extra_config or {}),
    })
    return MetricReport(rmse=r, ssim=s, fid=f, acc_content=acc_c, acc_style=acc_s,
                        n_pairs=int(generated.shape[0]), config_hash=h)
