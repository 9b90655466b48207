"""Latent codecs: the autoencoder pair defining the diffusion latent space,
plus the encode-corrupt-decode primitive used by super-resolution noise
conditioning augmentation.

Three kinds:
  identity        pixels are the latents (pixel-space diffusion, exact tests)
  space_to_depth  invertible f-fold pixel shuffle, latent_channels = f^2
  conv            trained convolutional autoencoder (downsampling factor f)

All kinds expose encode/decode on NCHW float32 batches and a global shift and
scale so the diffusion side sees approximately zero-mean, unit-variance
latents (encode_std / decode_std).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .nn import Conv2d, GroupNorm, Module, Tensor, autodiff as ad
from .nn.optim import Adam
from .schedule import NoiseSchedule


class CodecError(ValueError):
    pass


@dataclass
class CodecConfig:
    kind: str = "identity"  # identity | space_to_depth | conv
    f: int = 1
    latent_channels: int = 1
    base_width: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.kind == "identity":
            self.f = 1
            self.latent_channels = 1
        elif self.kind == "space_to_depth":
            self.latent_channels = self.f * self.f
        elif self.kind != "conv":
            raise CodecError(f"unknown codec kind {self.kind!r}")


class Codec:
    """Base interface; subclasses implement _encode/_decode on NCHW arrays."""

    kind = "base"

    def __init__(self, f: int, latent_channels: int):
        self.f = f
        self.latent_channels = latent_channels
        self.latent_shift = 0.0
        self.latent_scale = 1.0

    # -- shape plumbing ------------------------------------------------------
    # images: (H,W), (N,H,W) or NHWC (N,H,W,1); latents: NHWC (N,h,w,c)

    def _check(self, images: np.ndarray) -> np.ndarray:
        images = np.asarray(images, dtype=np.float32)
        if images.ndim == 2:
            images = images[None, :, :, None]
        elif images.ndim == 3:
            images = images[:, :, :, None]
        if images.ndim != 4 or images.shape[3] != 1:
            raise CodecError(f"expected grayscale image array, got shape {images.shape}")
        if images.shape[1] % self.f or images.shape[2] % self.f:
            raise CodecError(f"resolution {images.shape[1:3]} not divisible by f={self.f}")
        return images

    def encode(self, images: np.ndarray) -> np.ndarray:
        return self._encode(self._check(images))

    def decode(self, latents: np.ndarray) -> np.ndarray:
        latents = np.asarray(latents, dtype=np.float32)
        if latents.ndim != 4:
            raise CodecError(f"latents must be (N,h,w,c), got shape {latents.shape}")
        return np.clip(self._decode(latents), 0.0, 1.0)

    # -- standardized latent interface (what the diffusion side consumes) ----

    def fit_standardization(self, images: np.ndarray):
        z = self.encode(images)
        self.latent_shift = float(z.mean())
        self.latent_scale = float(max(z.std(), 1e-6))

    def encode_std(self, images: np.ndarray) -> np.ndarray:
        return (self.encode(images) - self.latent_shift) / self.latent_scale

    def decode_std(self, latents: np.ndarray) -> np.ndarray:
        return self.decode(latents * self.latent_scale + self.latent_shift)

    def latent_shape(self, resolution: int) -> tuple:
        return (resolution // self.f, resolution // self.f, self.latent_channels)


class IdentityCodec(Codec):
    kind = "identity"

    def __init__(self):
        super().__init__(f=1, latent_channels=1)

    def _encode(self, images):
        return images.copy()

    def _decode(self, latents):
        return latents[:, :, :, 0]


class SpaceToDepthCodec(Codec):
    """Exactly invertible pixel shuffle: (B,H,W,1) <-> (B,H/f,W/f,f^2)."""

    kind = "space_to_depth"

    def __init__(self, f: int = 4):
        super().__init__(f=f, latent_channels=f * f)

    def _encode(self, images):
        b, h, w, _ = images.shape
        f = self.f
        out = images.reshape(b, h // f, f, w // f, f).transpose(0, 1, 3, 2, 4)
        return np.ascontiguousarray(out).reshape(b, h // f, w // f, f * f)

    def _decode(self, latents):
        b, h, w, _ = latents.shape
        f = self.f
        out = latents.reshape(b, h, w, f, f).transpose(0, 1, 3, 2, 4)
        return np.ascontiguousarray(out).reshape(b, h * f, w * f)


class ConvEncoder(Module):
    def __init__(self, width, latent_channels, rng):
        super().__init__()
        self.c1 = self.add_module("c1", Conv2d(1, width, stride=2, rng=rng))
        self.n1 = self.add_module("n1", GroupNorm(width))
        self.c2 = self.add_module("c2", Conv2d(width, 2 * width, stride=2, rng=rng))
        self.n2 = self.add_module("n2", GroupNorm(2 * width))
        self.c3 = self.add_module("c3", Conv2d(2 * width, 2 * width, rng=rng))
        self.out = self.add_module("out", Conv2d(2 * width, latent_channels, k=1, pad=0, rng=rng))

    def __call__(self, x: Tensor) -> Tensor:
        h = ad.silu(self.n1(self.c1(x)))
        h = ad.silu(self.n2(self.c2(h)))
        h = ad.silu(self.c3(h))
        return self.out(h)


class ConvDecoder(Module):
    """Channel reduction happens before the final upsample so the only
    full-resolution convolution is the cheap 1-channel head."""

    def __init__(self, width, latent_channels, rng):
        super().__init__()
        self.inp = self.add_module("inp", Conv2d(latent_channels, 2 * width, k=1, pad=0, rng=rng))
        self.c1 = self.add_module("c1", Conv2d(2 * width, 2 * width, rng=rng))
        self.n1 = self.add_module("n1", GroupNorm(2 * width))
        self.c2 = self.add_module("c2", Conv2d(2 * width, width, rng=rng))
        self.n2 = self.add_module("n2", GroupNorm(width))
        self.out = self.add_module("out", Conv2d(width, 1, rng=rng))

    def __call__(self, z: Tensor) -> Tensor:
        h = ad.silu(self.n1(self.c1(ad.repeat2x(self.inp(z)))))
        h = ad.silu(self.n2(self.c2(h)))
        return ad.sigmoid(self.out(ad.repeat2x(h)))


class ConvCodec(Codec, Module):
    kind = "conv"

    def __init__(self, config: CodecConfig):
        if config.f != 4:
            raise CodecError("the conv codec is built for f=4")
        Codec.__init__(self, f=config.f, latent_channels=config.latent_channels)
        Module.__init__(self)
        rng = np.random.default_rng(config.seed)
        self.encoder = self.add_module("encoder", ConvEncoder(config.base_width, config.latent_channels, rng))
        self.decoder = self.add_module("decoder", ConvDecoder(config.base_width, config.latent_channels, rng))

    def _encode(self, images):
        with ad.no_grad():
            return self.encoder(Tensor(images)).data

    def _decode(self, latents):
        with ad.no_grad():
            return self.decoder(Tensor(latents)).data[:, :, :, 0]


def make_codec(config: CodecConfig) -> Codec:
    if config.kind == "identity":
        return IdentityCodec()
    if config.kind == "space_to_depth":
        return SpaceToDepthCodec(config.f)
    return ConvCodec(config)


@dataclass
class CodecTrainConfig:
    steps: int = 1500
    batch_size: int = 32
    lr: float = 2e-3
    holdout_fraction: float = 0.1
    seed: int = 0
    log_every: int = 100


def train_autoencoder(images: np.ndarray, codec_config: CodecConfig,
                      train_config: CodecTrainConfig, log=None):
    """Train the conv codec on (N,H,W) images with a plain reconstruction
    loss; returns (codec, history). Aborts on divergence. The identity and
    space-to-depth codecs need no training and return immediately."""
    codec = make_codec(codec_config)
    images = np.asarray(images, dtype=np.float32)
    if images.ndim != 3:
        raise CodecError("training expects an (N,H,W) image stack")
    if images.shape[0] < 2:
        raise CodecError("training corpus is empty or trivial")
    if codec_config.kind != "conv":
        codec.fit_standardization(images)
        return codec, []
    rng = np.random.default_rng(train_config.seed)
    n_hold = max(1, int(images.shape[0] * train_config.holdout_fraction))
    perm = rng.permutation(images.shape[0])
    hold, train = images[perm[:n_hold]], images[perm[n_hold:]]
    opt = Adam(codec.params(), lr=train_config.lr)
    history = []
    for step in range(train_config.steps):
        idx = rng.integers(0, train.shape[0], size=train_config.batch_size)
        batch = Tensor(train[idx][:, :, :, None])
        recon = codec.decoder(codec.encoder(batch))
        err = ad.sub(recon, batch)
        loss = ad.tmean(ad.mul(err, err))
        if not np.isfinite(loss.data):
            raise CodecError(f"autoencoder training diverged at step {step} (loss={loss.data})")
        codec.zero_grad()
        loss.backward()
        opt.step()
        if step % train_config.log_every == 0 or step == train_config.steps - 1:
            mae = held_out_mae(codec, hold)
            history.append({"step": step, "loss": float(loss.data), "holdout_mae": mae})
            if log:
                log(history[-1])
    codec.fit_standardization(train)
    return codec, history


def held_out_mae(codec: Codec, images: np.ndarray) -> float:
    recon = codec.decode(codec.encode(images))
    return float(np.abs(recon - images).mean())


def codec_checkpoint_payload(codec: Codec, config: CodecConfig) -> tuple:
    """(state arrays, manifest extra) for the shared checkpoint format."""
    state = codec.state_arrays() if isinstance(codec, Module) else {}
    extra = {
        "codec_kind": config.kind,
        "f": codec.f,
        "latent_channels": codec.latent_channels,
        "latent_shift": codec.latent_shift,
        "latent_scale": codec.latent_scale,
        "base_width": config.base_width,
        "codec_seed": config.seed,
    }
    return state, extra


def codec_from_checkpoint(manifest: dict, state: dict) -> Codec:
    config = CodecConfig(
        kind=manifest["codec_kind"],
        f=int(manifest["f"]),
        latent_channels=int(manifest["latent_channels"]),
        base_width=int(manifest.get("base_width", 32)),
        seed=int(manifest.get("codec_seed", 0)),
    )
    codec = make_codec(config)
    if isinstance(codec, Module) and state:
        codec.load_state_arrays(state)
    codec.latent_shift = float(manifest["latent_shift"])
    codec.latent_scale = float(manifest["latent_scale"])
    return codec


def noise_augment(image: np.ndarray, s: int, codec: Codec, schedule: NoiseSchedule,
                  rng: np.random.Generator | None = None,
                  s_max: int | None = None) -> np.ndarray:
    """Encode, corrupt at noise level s, decode. s = 0 is the exact codec
    round trip with no randomness; larger s feeds back increasingly corrupted
    reconstructions. Operates on (H,W) or batched (N,H,W) images."""
    if s_max is None:
        s_max = int(0.25 * schedule.T)
    if not (0 <= s <= s_max):
        raise CodecError(f"noise level {s} outside [0, {s_max}]")
    z = codec.encode_std(image)
    if s == 0:
        out = codec.decode_std(z)
    else:
        if rng is None:
            raise CodecError("rng required for s > 0")
        eps = rng.standard_normal(z.shape).astype(z.dtype)
        out = codec.decode_std(schedule.alpha[s] * z + schedule.sigma[s] * eps)
    was_2d = np.asarray(image).ndim == 2
    return out[0] if was_2d else out
