"""Noise predictors: a small fully-convolutional net and an exact mixture oracle."""
from dataclasses import dataclass, field
import logging

import numpy as np

from . import nn
from .diffusion import simple_loss
from .errors import DivergenceError, ParameterError, SizeError
from .numerics import RngStream

log = logging.getLogger(__name__)

MIN_SPATIAL = 8


def class_indices(c, batch, n_classes):
    """Normalize a class spec to an int array; ``None`` and negatives mean the NULL class."""
    null = n_classes
    if c is None:
        return np.full(batch, null, dtype=np.int64)
    arr = np.asarray(c)
    if arr.ndim == 0:
        arr = np.full(batch, int(arr), dtype=np.int64)
    arr = arr.astype(np.int64).copy()
    arr[arr < 0] = null
    if arr.shape != (batch,):
        raise ParameterError(f"class labels shape {arr.shape} does not match batch {batch}")
    if np.any(arr > null):
        raise ParameterError(f"class id out of range [0, {n_classes})")
    return arr


def _rows(a, w):
    """``a @ w`` computed row by row, so a sample's result never depends on batch size
    (BLAS switches kernels for single-row products)."""
    return np.einsum("bi,ij->bj", a, w)


@dataclass
class ConvDenoiser:
    """Plain stack of 3x3 convs with timestep and class conditioning.

    Conditioning vector = MLP(sinusoid(t)) + class_table[c]; after a SiLU it is
    projected to a per-channel bias for every hidden conv stage. The last
    conv maps back to the input channel count.
    """

    channels: int
    n_classes: int
    width: int = 32
    n_layers: int = 5
    temb_dim: int = 64
    emb_dim: int = 32
    params: dict = field(default_factory=dict)

    size_agnostic = True

    @classmethod
    def create(cls, channels, n_classes, rng, width=32, n_layers=5, temb_dim=64,
               emb_dim=None, zero_out=True, dtype=np.float64):
        if not 2 <= n_layers:
            raise ParameterError("n_layers must be at least 2")
        emb_dim = width if emb_dim is None else emb_dim
        net = cls(channels, n_classes, width, n_layers, temb_dim, emb_dim)
        p = net.params
        p["temb.w1"] = nn.he_init(rng, (temb_dim, emb_dim), temb_dim)
        p["temb.b1"] = np.zeros(emb_dim)
        p["temb.w2"] = nn.he_init(rng, (emb_dim, emb_dim), emb_dim)
        p["temb.b2"] = np.zeros(emb_dim)
        p["class_emb"] = nn.he_init(rng, (n_classes + 1, emb_dim), emb_dim) * 0.5
        c_in = channels
        for s in range(n_layers):
            last = s == n_layers - 1
            c_out = channels if last else width
            if last and zero_out:
                p[f"conv{s}.w"] = np.zeros((3, 3, c_in, c_out))
            else:
                p[f"conv{s}.w"] = nn.he_init(rng, (3, 3, c_in, c_out), 9 * c_in)
            p[f"conv{s}.b"] = np.zeros(c_out)
            if not last:
                p[f"cond{s}.w"] = nn.he_init(rng, (emb_dim, c_out), emb_dim) * 0.5
            c_in = c_out
        for k in p:
            p[k] = p[k].astype(dtype)
        return net

    @property
    def dtype(self):
        return self.params["temb.w1"].dtype

    @property
    def null_class(self):
        return self.n_classes

    def n_params(self):
        return int(sum(v.size for v in self.params.values()))

    def config(self):
        return {"channels": self.channels, "n_classes": self.n_classes, "width": self.width,
                "n_layers": self.n_layers, "temb_dim": self.temb_dim, "emb_dim": self.emb_dim}

    def _check(self, x):
        if x.ndim != 4 or x.shape[3] != self.channels:
            raise SizeError(f"expected (B, H, W, {self.channels}) input, got {x.shape}")
        if min(x.shape[1], x.shape[2]) < MIN_SPATIAL:
            raise SizeError(f"spatial extent must be >= {MIN_SPATIAL}, got {x.shape[1:3]}")

    def forward(self, x, t, c=None):
        x = np.asarray(x, dtype=self.dtype)
        self._check(x)
        p = self.params
        B = x.shape[0]
        t = np.broadcast_to(np.asarray(t), (B,))
        cidx = class_indices(c, B, self.n_classes)

        emb = nn.sinusoidal_embedding(t, self.temb_dim).astype(self.dtype)
        a1 = _rows(emb, p["temb.w1"]) + p["temb.b1"]
        h1 = nn.silu(a1)
        cond = _rows(h1, p["temb.w2"]) + p["temb.b2"] + p["class_emb"][cidx]
        g = nn.silu(cond)

        h = x
        stages = []
        for s in range(self.n_layers - 1):
            a, cache = nn.conv2d(h, p[f"conv{s}.w"], p[f"conv{s}.b"])
            a += _rows(g, p[f"cond{s}.w"])[:, None, None, :]
            stages.append((cache, a))
            h = nn.silu(a)
        last = self.n_layers - 1
        out, cache = nn.conv2d(h, p[f"conv{last}.w"], p[f"conv{last}.b"])
        tape = (emb, a1, h1, cond, g, cidx, stages, cache)
        return out, tape

    def backward(self, tape, dout):
        emb, a1, h1, cond, g, cidx, stages, cache = tape
        p = self.params
        dout = np.asarray(dout, dtype=self.dtype)
        grads = {}
        last = self.n_layers - 1
        dh, grads[f"conv{last}.w"], grads[f"conv{last}.b"] = nn.conv2d_backward(
            dout, cache, p[f"conv{last}.w"])
        dg = np.zeros_like(g)
        for s in range(self.n_layers - 2, -1, -1):
            cache_s, a = stages[s]
            da = nn.silu_backward(dh, a)
            da_sum = da.sum(axis=(1, 2))
            grads[f"cond{s}.w"] = g.T @ da_sum
            dg += da_sum @ p[f"cond{s}.w"].T
            dh, grads[f"conv{s}.w"], grads[f"conv{s}.b"] = nn.conv2d_backward(
                da, cache_s, p[f"conv{s}.w"])
        dcond = nn.silu_backward(dg, cond)
        dtable = np.zeros_like(p["class_emb"])
        np.add.at(dtable, cidx, dcond)
        grads["class_emb"] = dtable
        grads["temb.w2"] = h1.T @ dcond
        grads["temb.b2"] = dcond.sum(axis=0)
        da1 = nn.silu_backward(dcond @ p["temb.w2"].T, a1)
        grads["temb.w1"] = emb.T @ da1
        grads["temb.b1"] = da1.sum(axis=0)
        return grads

    def predict(self, x, t, c=None):
        return self.forward(x, t, c)[0].astype(np.float64)


def conv_predict(net, x_t, t, c=None):
    return net.predict(x_t, t, c)


@dataclass
class AnalyticGMMDenoiser:
    """Exact noise predictor for an isotropic Gaussian-mixture data distribution.

    Samples are flattened to vectors of length ``dim``. A class label ``k``
    restricts the target to component ``k``; NULL uses the full mixture.
    """

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    schedule: object = None

    size_agnostic = True

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        self.variances = np.broadcast_to(
            np.asarray(self.variances, dtype=np.float64), self.weights.shape).copy()
        if np.any(self.weights <= 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise ParameterError("mixture weights must be positive and sum to 1")
        if np.any(self.variances < 0):
            raise ParameterError("variances must be non-negative")

    @property
    def n_classes(self):
        return self.weights.size

    @property
    def dim(self):
        return self.means.shape[1]

    def posterior_x0(self, x_t, t, s, c=None):
        """E[x_0 | x_t] under the mixture, per row of ``x_t`` (shape (n, dim))."""
        ab = np.broadcast_to(s.alpha_bar[s.check_t(t)], (x_t.shape[0],))[:, None]
        sab = np.sqrt(ab)
        var_t = ab * self.variances[None, :] + (1.0 - ab)          # (n, K)
        diff = x_t[:, None, :] - sab[:, :, None] * self.means[None]  # (n, K, d)
        sq = np.einsum("nkd,nkd->nk", diff, diff)
        logr = np.log(self.weights)[None] - 0.5 * self.dim * np.log(var_t) - 0.5 * sq / var_t
        cidx = class_indices(c, x_t.shape[0], self.n_classes)
        cond = cidx < self.n_classes
        if np.any(cond):
            mask = np.full(logr.shape, -np.inf)
            mask[np.arange(x_t.shape[0]), np.minimum(cidx, self.n_classes - 1)] = 0.0
            logr = np.where(cond[:, None], mask, logr)
        logr -= logr.max(axis=1, keepdims=True)
        r = np.exp(logr)
        r /= r.sum(axis=1, keepdims=True)
        gain = (sab * self.variances[None, :] / var_t)[:, :, None]
        comp_mean = self.means[None] + gain * diff
        return np.einsum("nk,nkd->nd", r, comp_mean)

    def predict(self, x_t, t, c=None, s=None):
        s = self.schedule if s is None else s
        x_t = np.asarray(x_t, dtype=np.float64)
        flat = x_t.reshape(x_t.shape[0], -1)
        if flat.shape[1] != self.dim:
            raise SizeError(f"sample size {flat.shape[1]} does not match mixture dim {self.dim}")
        t = s.check_t(t)
        ab = np.broadcast_to(s.alpha_bar[t], (flat.shape[0],))[:, None]
        x0 = self.posterior_x0(flat, t, s, c)
        eps = (flat - np.sqrt(ab) * x0) / np.sqrt(1.0 - ab)
        return eps.reshape(x_t.shape)

    def sample_data(self, n, rng, c=None):
        """Direct draws from the target mixture (or one component)."""
        from .numerics import gaussian
        if c is None:
            comp = np.searchsorted(np.cumsum(self.weights), rng.uniform(n), side="right")
            comp = np.minimum(comp, self.n_classes - 1)
        else:
            comp = np.full(n, int(c))
        z = gaussian(rng, (n, self.dim))
        return self.means[comp] + np.sqrt(self.variances[comp])[:, None] * z, comp


def analytic_predict(g, x_t, t, s):
    return g.predict(x_t, t, s=s)


@dataclass
class TrainResult:
    step_losses: list
    epoch_losses: list


def train(net, images, labels, s, opt, p_uncond=0.1, epochs=1, rng=None, batch_size=32,
          max_steps=None, log_every=0):
    """Fit ``net`` to the epsilon objective with random label dropout to NULL.

    Returns per-step and per-epoch mean losses. Training stops after
    ``max_steps`` optimizer steps when given.
    """
    if len(images) == 0:
        raise ParameterError("empty dataset")
    if not 0.0 <= p_uncond < 1.0:
        raise ParameterError("p_uncond must lie in [0, 1)")
    rng = RngStream(0) if rng is None else rng
    images = np.asarray(images, dtype=np.float64)
    labels = class_indices(labels, len(images), net.n_classes)
    n = len(images)
    steps, per_epoch = [], []
    step = 0
    for epoch in range(int(epochs)):
        order = rng.permutation(n)
        epoch_losses = []
        for start in range(0, n, batch_size):
            if max_steps is not None and step >= max_steps:
                break
            idx = order[start:start + batch_size]
            c = labels[idx].copy()
            if p_uncond > 0:
                c[rng.uniform(len(idx)) < p_uncond] = net.null_class
            loss, grads = simple_loss(net, images[idx], c, s, rng)
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite loss at step {step}", step=step)
            opt.step(net.params, grads)
            step += 1
            steps.append(loss)
            epoch_losses.append(loss)
            if log_every and step % log_every == 0:
                log.info("step %d loss %.5f", step, np.mean(steps[-log_every:]))
        if epoch_losses:
            per_epoch.append(float(np.mean(epoch_losses)))
        if max_steps is not None and step >= max_steps:
            break
    return TrainResult(steps, per_epoch)
