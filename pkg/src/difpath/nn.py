"""Layer primitives with hand-written backward passes, plus Adam.

Each forward returns ``(out, cache)``; the matching backward takes the
upstream gradient and the cache and returns input and parameter gradients.
Nothing here mutates module state, so forward passes are safe to share.
"""
from dataclasses import dataclass, field

import numpy as np

from . import kernels


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def silu(x):
    return x * sigmoid(x)


def silu_backward(dout, x):
    s = sigmoid(x)
    return dout * (s * (1.0 + x * (1.0 - s)))


def linear(x, w, b=None):
    y = x @ w
    return y if b is None else y + b


def linear_backward(dout, x, w):
    return dout @ w.T, x.T @ dout, dout.sum(axis=0)


def _out_extent(n, k, stride, pad):
    return (n + 2 * pad - k) // stride + 1


def conv2d(x, w, b, stride=1, pad=None):
    """``x``: (B, H, W, C); ``w``: (kh, kw, C, O). Default padding keeps size at stride 1."""
    kh, kw, C, O = w.shape
    if pad is None:
        pad = kh // 2
    B, H, W, _ = x.shape
    Ho, Wo = _out_extent(H, kh, stride, pad), _out_extent(W, kw, stride, pad)
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else x
    out = kernels.conv_forward(xp, w.reshape(kh * kw * C, O), kh, kw, stride, Ho, Wo)
    if b is not None:
        out += b
    return out, (xp, stride, pad)


def conv2d_backward(dout, cache, w):
    xp, stride, pad = cache
    kh, kw, C, O = w.shape
    dxp = kernels.conv_grad_input(dout, w.reshape(kh * kw * C, O), kh, kw, stride,
                                  xp.shape[1], xp.shape[2])
    dw = kernels.conv_grad_weight(xp, dout, kh, kw, stride).reshape(w.shape)
    db = dout.sum(axis=(0, 1, 2))
    if pad:
        dxp = dxp[:, pad:-pad, pad:-pad, :]
    return dxp, dw, db


def conv_transpose2d(z, w, b, stride=2, pad=1):
    """Transposed convolution: the input-gradient of ``conv2d`` with weight ``w``.

    ``w`` has conv layout (kh, kw, C_out, C_in): as a forward conv it maps
    C_out -> C_in, so its transpose maps ``z`` with C_in channels to C_out.
    """
    kh, kw, Cout, Cin = w.shape
    B, Hz, Wz, _ = z.shape
    Hp, Wp = (Hz - 1) * stride + kh, (Wz - 1) * stride + kw
    out = kernels.conv_grad_input(z, w.reshape(kh * kw * Cout, Cin), kh, kw, stride, Hp, Wp)
    if pad:
        out = out[:, pad:Hp - pad, pad:Wp - pad, :]
    out = np.ascontiguousarray(out)
    if b is not None:
        out += b
    return out, (z, stride, pad, Hp, Wp)


def conv_transpose2d_backward(dout, cache, w):
    z, stride, pad, Hp, Wp = cache
    kh, kw, Cout, Cin = w.shape
    dp = np.pad(dout, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else dout
    Hz, Wz = z.shape[1], z.shape[2]
    dz = kernels.conv_forward(dp, w.reshape(kh * kw * Cout, Cin), kh, kw, stride, Hz, Wz)
    dw = kernels.conv_grad_weight(dp, z, kh, kw, stride).reshape(w.shape)
    db = dout.sum(axis=(0, 1, 2))
    return dz, dw, db


def avg_pool2(x):
    B, H, W, C = x.shape
    return x.reshape(B, H // 2, 2, W // 2, 2, C).mean(axis=(2, 4))


def avg_pool2_backward(dout):
    return np.repeat(np.repeat(dout, 2, axis=1), 2, axis=2) * 0.25


def sinusoidal_embedding(t, dim, max_period=1e4):
    """Timestep features ``[sin(t f_i), cos(t f_i)]`` with ``f_i`` geometric from 1 to 1/max_period."""
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    half = dim // 2
    if half == 1:
        freqs = np.ones(1)
    else:
        freqs = np.exp(-np.log(max_period) * np.arange(half) / (half - 1))
    args = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)


def he_init(rng, shape, fan_in):
    from .numerics import gaussian
    return gaussian(rng, shape) * np.sqrt(2.0 / fan_in)


@dataclass
class Adam:
    """Adam with bias correction; moments keyed by parameter name.

    With ``decay_steps > 0`` the step size follows a half cosine from ``lr``
    down to ``lr_final`` over that many steps and then stays there.
    """

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    lr_final: float = 0.0
    decay_steps: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def current_lr(self):
        if self.decay_steps <= 0:
            return self.lr
        frac = min(max(self.step_count - 1, 0), self.decay_steps) / self.decay_steps
        return self.lr_final + 0.5 * (self.lr - self.lr_final) * (1.0 + np.cos(np.pi * frac))

    def step(self, params, grads):
        self.step_count += 1
        c1 = 1.0 - self.beta1 ** self.step_count
        c2 = 1.0 - self.beta2 ** self.step_count
        lr = self.current_lr()
        for name, g in grads.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(params[name])
                self.v[name] = np.zeros_like(params[name])
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            if lr:
                params[name] -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
