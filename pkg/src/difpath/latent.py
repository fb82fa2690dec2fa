"""Autoencoder with spatial factor 4 and the latent-diffusion pipeline.

Latents handed to the diffusion code are standardized: ``z_std = z * scale``
with ``scale`` fitted so the encoded training set has unit standard deviation.
"""
from dataclasses import dataclass, field
import logging

import numpy as np

from . import nn
from .denoiser import ConvDenoiser, train as train_denoiser
from .errors import ContractError, DivergenceError, ParameterError, SizeError
from .numerics import RngStream, gaussian
from .samplers import sample

log = logging.getLogger(__name__)

FACTOR = 4


@dataclass
class VQCodebook:
    vectors: np.ndarray
    usage: np.ndarray = None

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or self.vectors.shape[0] < 2:
            raise ParameterError("codebook needs at least 2 vectors")
        if self.usage is None:
            self.usage = np.zeros(self.vectors.shape[0], dtype=np.int64)

    def nearest(self, flat):
        d2 = ((flat[:, None, :] - self.vectors[None]) ** 2).sum(axis=-1)
        return d2.argmin(axis=1)

    def quantize(self, z, count=True):
        flat = z.reshape(-1, z.shape[-1])
        idx = self.nearest(flat)
        if count:
            self.usage += np.bincount(idx, minlength=len(self.vectors))
        return self.vectors[idx].reshape(z.shape), idx


@dataclass
class Autoencoder:
    channels: int = 3
    width: int = 32
    latent_channels: int = 4
    params: dict = field(default_factory=dict)
    codebook: VQCodebook = None
    scale: float = 1.0
    codebook_weight: float = 1.0
    commitment_weight: float = 0.25

    @classmethod
    def create(cls, rng, channels=3, width=32, latent_channels=4, vq_codes=0, dtype=np.float64):
        ae = cls(channels, width, latent_channels)
        p = ae.params
        shapes = {
            "enc0": (3, 3, channels, width),
            "enc1": (4, 4, width, width),
            "enc2": (4, 4, width, width),
            "enc3": (3, 3, width, latent_channels),
            "dec0": (3, 3, latent_channels, width),
            # transposed convs store conv layout (kh, kw, C_out, C_in)
            "dec1": (4, 4, width, width),
            "dec2": (4, 4, width, width),
            "dec3": (3, 3, width, channels),
        }
        for name, shp in shapes.items():
            fan_in = shp[0] * shp[1] * (shp[3] if name in ("dec1", "dec2") else shp[2])
            p[f"{name}.w"] = nn.he_init(rng, shp, fan_in)
            p[f"{name}.b"] = np.zeros(shp[2] if name in ("dec1", "dec2") else shp[3])
        for k in p:
            p[k] = p[k].astype(dtype)
        if vq_codes:
            ae.codebook = VQCodebook(gaussian(rng, (vq_codes, latent_channels)))
        return ae

    def config(self):
        return {"channels": self.channels, "width": self.width,
                "latent_channels": self.latent_channels, "scale": self.scale,
                "vq_codes": 0 if self.codebook is None else len(self.codebook.vectors)}

    def n_params(self):
        return int(sum(v.size for v in self.params.values()))

    @property
    def dtype(self):
        return self.params["enc0.w"].dtype

    # -- encoder ----------------------------------------------------------
    def encode_forward(self, x):
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim != 4 or x.shape[3] != self.channels:
            raise SizeError(f"expected (B, H, W, {self.channels}) images, got {x.shape}")
        if x.shape[1] % FACTOR or x.shape[2] % FACTOR:
            raise SizeError(f"spatial extents {x.shape[1:3]} not divisible by {FACTOR}")
        p = self.params
        a0, c0 = nn.conv2d(x, p["enc0.w"], p["enc0.b"])
        h0 = nn.silu(a0)
        a1, c1 = nn.conv2d(h0, p["enc1.w"], p["enc1.b"], stride=2, pad=1)
        h1 = nn.silu(a1)
        a2, c2 = nn.conv2d(h1, p["enc2.w"], p["enc2.b"], stride=2, pad=1)
        h2 = nn.silu(a2)
        z, c3 = nn.conv2d(h2, p["enc3.w"], p["enc3.b"])
        return z, (a0, c0, a1, c1, a2, c2, c3)

    def encode_backward(self, tape, dz, grads):
        a0, c0, a1, c1, a2, c2, c3 = tape
        p = self.params
        dz = np.asarray(dz, dtype=self.dtype)
        dh2, grads["enc3.w"], grads["enc3.b"] = nn.conv2d_backward(dz, c3, p["enc3.w"])
        dh1, grads["enc2.w"], grads["enc2.b"] = nn.conv2d_backward(
            nn.silu_backward(dh2, a2), c2, p["enc2.w"])
        dh0, grads["enc1.w"], grads["enc1.b"] = nn.conv2d_backward(
            nn.silu_backward(dh1, a1), c1, p["enc1.w"])
        _, grads["enc0.w"], grads["enc0.b"] = nn.conv2d_backward(
            nn.silu_backward(dh0, a0), c0, p["enc0.w"])
        return grads

    # -- decoder ----------------------------------------------------------
    def decode_forward(self, z):
        z = np.asarray(z, dtype=self.dtype)
        if z.ndim != 4 or z.shape[3] != self.latent_channels:
            raise ContractError(f"expected (B, h, w, {self.latent_channels}) latents, got {z.shape}")
        p = self.params
        a0, c0 = nn.conv2d(z, p["dec0.w"], p["dec0.b"])
        h0 = nn.silu(a0)
        a1, c1 = nn.conv_transpose2d(h0, p["dec1.w"], p["dec1.b"], stride=2, pad=1)
        h1 = nn.silu(a1)
        a2, c2 = nn.conv_transpose2d(h1, p["dec2.w"], p["dec2.b"], stride=2, pad=1)
        h2 = nn.silu(a2)
        a3, c3 = nn.conv2d(h2, p["dec3.w"], p["dec3.b"])
        out = np.tanh(a3)
        return out, (a0, c0, a1, c1, a2, c2, c3, out)

    def decode_backward(self, tape, dout, grads):
        a0, c0, a1, c1, a2, c2, c3, out = tape
        p = self.params
        dout = np.asarray(dout, dtype=self.dtype)
        da3 = dout * (1.0 - out * out)
        dh2, grads["dec3.w"], grads["dec3.b"] = nn.conv2d_backward(da3, c3, p["dec3.w"])
        dh1, grads["dec2.w"], grads["dec2.b"] = nn.conv_transpose2d_backward(
            nn.silu_backward(dh2, a2), c2, p["dec2.w"])
        dh0, grads["dec1.w"], grads["dec1.b"] = nn.conv_transpose2d_backward(
            nn.silu_backward(dh1, a1), c1, p["dec1.w"])
        dz, grads["dec0.w"], grads["dec0.b"] = nn.conv2d_backward(
            nn.silu_backward(dh0, a0), c0, p["dec0.w"])
        return dz, grads

    # -- losses -----------------------------------------------------------
    def loss_and_grads(self, x, count_usage=False):
        """Reconstruction MSE (+ codebook and commitment terms when VQ is on)."""
        z, etape = self.encode_forward(x)
        grads = {}
        extra = 0.0
        if self.codebook is not None:
            q, idx = self.codebook.quantize(z, count=count_usage)
            recon, dtape = self.decode_forward(q)
            diff = recon - x
            loss = float(np.mean(diff * diff))
            dq, grads = self.decode_backward(dtape, 2.0 * diff / diff.size, grads)
            gap = z - q
            n = gap.size
            cb = float(np.mean(gap * gap))
            extra = (self.codebook_weight + self.commitment_weight) * cb
            # straight-through: the decoder gradient flows to z unchanged
            dz = dq + self.commitment_weight * 2.0 * gap / n
            dvec = np.zeros_like(self.codebook.vectors)
            np.add.at(dvec, idx, (-self.codebook_weight * 2.0 * gap / n).reshape(-1, gap.shape[-1]))
            grads["codebook"] = dvec
        else:
            recon, dtape = self.decode_forward(z)
            diff = recon - x
            loss = float(np.mean(diff * diff))
            dz, grads = self.decode_backward(dtape, 2.0 * diff / diff.size, grads)
        grads = self.encode_backward(etape, dz, grads)
        return loss + extra, grads

    def trainable(self):
        """Parameter dict seen by the optimizer (codebook included when present)."""
        if self.codebook is None:
            return self.params
        return {**self.params, "codebook": self.codebook.vectors}


def encode(ae, x):
    z, _ = ae.encode_forward(x)
    z = z.astype(np.float64)
    if ae.codebook is not None:
        z, _ = ae.codebook.quantize(z, count=False)
    return z


def decode(ae, z):
    return ae.decode_forward(z)[0].astype(np.float64)


@dataclass
class AETrainResult:
    step_losses: list
    epoch_losses: list


def train_ae(ae, images, opt, epochs=1, rng=None, batch_size=32, max_steps=None):
    images = np.asarray(images, dtype=np.float64)
    if len(images) == 0:
        raise ParameterError("empty dataset")
    rng = RngStream(0) if rng is None else rng
    steps, per_epoch = [], []
    step = 0
    params = ae.trainable()
    for epoch in range(int(epochs)):
        order = rng.permutation(len(images))
        losses = []
        for start in range(0, len(images), batch_size):
            if max_steps is not None and step >= max_steps:
                break
            loss, grads = ae.loss_and_grads(images[order[start:start + batch_size]],
                                            count_usage=True)
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite autoencoder loss at step {step}", step=step)
            opt.step(params, grads)
            step += 1
            steps.append(loss)
            losses.append(loss)
        if losses:
            per_epoch.append(float(np.mean(losses)))
    return AETrainResult(steps, per_epoch)


def fit_latent_scale(ae, images, batch_size=64):
    z = np.concatenate([encode(ae, images[i:i + batch_size])
                        for i in range(0, len(images), batch_size)])
    ae.scale = float(1.0 / max(z.std(), 1e-8))
    return z * ae.scale


def encode_dataset(ae, images, batch_size=64):
    """Standardized latents for a whole image set."""
    return np.concatenate([encode(ae, images[i:i + batch_size]) * ae.scale
                           for i in range(0, len(images), batch_size)])


def train_latent_denoiser(ae, images, labels, s, opt, rng, net=None, p_uncond=0.1, epochs=1,
                          batch_size=32, max_steps=None, **net_kwargs):
    """Encode the dataset once, then run the epsilon objective on standardized latents."""
    latents = fit_latent_scale(ae, images)
    if net is None:
        net = ConvDenoiser.create(ae.latent_channels, int(np.max(labels)) + 1, rng.child(7),
                                  **net_kwargs)
    result = train_denoiser(net, latents, labels, s, opt, p_uncond, epochs, rng,
                            batch_size=batch_size, max_steps=max_steps)
    return net, result


def ldm_pipeline(ae, d, s, cfg, class_label=None, n=1, rng=None, batch_size=64, trace=None,
                 events=None):
    """Sample standardized latents at ``target_size / 4`` and decode them to images."""
    H, W = cfg.target_size
    if H % FACTOR or W % FACTOR:
        raise SizeError(f"target size {cfg.target_size} not divisible by {FACTOR}")
    shape = (H // FACTOR, W // FACTOR, ae.latent_channels)
    z = sample(d, s, cfg, class_label, n, rng, sample_shape=shape, batch_size=batch_size,
               trace=trace, events=events)
    if n == 0:
        return np.zeros((0, H, W, ae.channels))
    return np.concatenate([decode(ae, z[i:i + batch_size] / ae.scale)
                           for i in range(0, n, batch_size)])
