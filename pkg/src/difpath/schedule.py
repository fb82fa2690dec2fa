"""Variance schedules.

Arrays are indexed by timestep and have length ``T + 1``. Index 0 is the
clean-data boundary: ``alpha_bar[0] == 1``, ``beta[0] == 0``.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    beta: np.ndarray
    kind: str = "linear"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=np.float64)
        if beta.ndim != 1 or beta.size < 2 or beta[0] != 0.0:
            raise ParameterError("beta must be a length T+1 array with beta[0] == 0")
        b = beta[1:]
        if not np.all((b > 0) & (b < 1)):
            raise ParameterError("every beta[t], t >= 1, must lie in (0, 1)")
        alpha = 1.0 - beta
        alpha_bar = np.cumprod(alpha)
        post = np.zeros_like(beta)
        post[1:] = (1.0 - alpha_bar[:-1]) / (1.0 - alpha_bar[1:]) * b
        for name, arr in (("beta", beta), ("alpha", alpha), ("alpha_bar", alpha_bar),
                          ("posterior_var", post)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def T(self):
        return self.beta.size - 1

    def check_t(self, t, allow_zero=False):
        t_arr = np.asarray(t)
        lo = 0 if allow_zero else 1
        if t_arr.size and (t_arr.min() < lo or t_arr.max() > self.T):
            raise ParameterError(f"timestep out of range [{lo}, {self.T}]: {t}")
        return t_arr

    def to_dict(self):
        return {"kind": self.kind, "T": self.T, **self.params}

    @classmethod
    def from_dict(cls, d):
        kind = d.get("kind", "linear")
        if kind == "linear":
            return linear_schedule(d["T"], d["beta_start"], d["beta_end"])
        if kind == "cosine":
            return cosine_schedule(d["T"], d.get("offset", 0.008))
        raise ParameterError(f"unknown schedule kind {kind!r}")


def linear_schedule(T=1000, beta_start=1e-4, beta_end=0.02):
    T = int(T)
    if T < 1:
        raise ParameterError("T must be at least 1")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ParameterError("need 0 < beta_start <= beta_end < 1")
    beta = np.zeros(T + 1)
    if T == 1:
        beta[1] = beta_start
    else:
        beta[1:] = beta_start + (beta_end - beta_start) * np.arange(T) / (T - 1)
    return NoiseSchedule(beta, "linear", {"beta_start": float(beta_start), "beta_end": float(beta_end)})


def cosine_schedule(T=1000, offset=0.008, max_beta=0.999):
    T = int(T)
    if T < 1:
        raise ParameterError("T must be at least 1")
    steps = np.arange(T + 1) / T
    f = np.cos((steps + offset) / (1 + offset) * np.pi / 2) ** 2
    ab = f / f[0]
    beta = np.zeros(T + 1)
    beta[1:] = np.clip(1.0 - ab[1:] / ab[:-1], 1e-8, max_beta)
    return NoiseSchedule(beta, "cosine", {"offset": float(offset)})


def make_schedule(kind="linear", T=1000, beta_start=1e-4, beta_end=0.02):
    if kind == "linear":
        return linear_schedule(T, beta_start, beta_end)
    if kind == "cosine":
        return cosine_schedule(T)
    raise ParameterError(f"unknown schedule kind {kind!r}")


def subsequence(s, n_steps):
    """Evenly spaced timesteps ``round(i * T / n)`` for ``i = 1..n``, ending at T."""
    T = s.T
    n_steps = int(n_steps)
    if not 1 <= n_steps <= T:
        raise ParameterError(f"n_steps must be in [1, {T}], got {n_steps}")
    i = np.arange(1, n_steps + 1)
    # integer round-half-up of i*T/n
    return ((2 * i * T + n_steps) // (2 * n_steps)).astype(np.int64)
