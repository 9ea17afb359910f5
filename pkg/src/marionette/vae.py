"""Latent-intent VAE over state sequences.

A causal-convolution encoder maps standardized state windows [N, d] to a
compact latent sequence [N/4, 32] (two stride-2 levels); the decoder
mirrors it with nearest-neighbor upsampling followed by causal convs, so
the whole autoencoder never reads future frames. The training loss is
the calibrated-reconstruction variant: a single learned log-variance
scales the reconstruction term, plus a small KL against the unit
Gaussian. After its training stage the VAE is frozen and only the
encoder is used downstream.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .nn import Linear, Module
from .tensor import Tensor


def uniform_downsample(states: np.ndarray, n: int = 16) -> np.ndarray:
    """Pick n frames evenly across the sequence (endpoints included)."""
    t = states.shape[0]
    idx = np.round(np.linspace(0, t - 1, n)).astype(int)
    return states[idx]


class Normalizer:
    """Per-dimension z-score statistics from the training split."""

    def __init__(self, state_mean, state_std, action_mean, action_std):
        self.state_mean = np.asarray(state_mean, np.float32)
        self.state_std = np.asarray(state_std, np.float32)
        self.action_mean = np.asarray(action_mean, np.float32)
        self.action_std = np.asarray(action_std, np.float32)

    @classmethod
    def fit(cls, triplets) -> "Normalizer":
        states = np.concatenate([t.states for t in triplets], axis=0)
        actions = np.concatenate([t.actions for t in triplets], axis=0)
        floor = 1e-3
        return cls(states.mean(0), np.maximum(states.std(0), floor),
                   actions.mean(0), np.maximum(actions.std(0), floor))

    def states_in(self, s: np.ndarray) -> np.ndarray:
        return ((s - self.state_mean) / self.state_std).astype(np.float32)

    def states_out(self, s: np.ndarray) -> np.ndarray:
        return s * self.state_std + self.state_mean

    def actions_in(self, a: np.ndarray) -> np.ndarray:
        return ((a - self.action_mean) / self.action_std).astype(np.float32)

    def actions_out(self, a: np.ndarray) -> np.ndarray:
        return a * self.action_std + self.action_mean

    def tensors(self) -> dict:
        return {"norm.state_mean": self.state_mean, "norm.state_std": self.state_std,
                "norm.action_mean": self.action_mean, "norm.action_std": self.action_std}

    @classmethod
    def from_tensors(cls, named: dict) -> "Normalizer":
        return cls(named["norm.state_mean"], named["norm.state_std"],
                   named["norm.action_mean"], named["norm.action_std"])


class CausalConv(Module):
    def __init__(self, rng, c_in: int, c_out: int, kernel: int = 3, stride: int = 1):
        super().__init__()
        self.stride = stride
        scale = math.sqrt(2.0 / (kernel * c_in))
        self.k = self.add_param("k", rng.normal(0.0, scale, (kernel, c_in, c_out)))
        self.b = self.add_param("b", np.zeros(c_out))

    def __call__(self, x: Tensor) -> Tensor:
        return T.add(T.causal_conv1d(x, self.k, self.stride), self.b)


class ResBlock(Module):
    def __init__(self, rng, channels: int):
        super().__init__()
        self.c1 = self.add_child("c1", CausalConv(rng, channels, channels))
        self.c2 = self.add_child("c2", CausalConv(rng, channels, channels))

    def __call__(self, x: Tensor) -> Tensor:
        h = self.c2(T.gelu(self.c1(T.gelu(x))))
        return T.add(x, T.scale(h, 0.5))


class IntentVae(Module):
    """Encoder/decoder pair; operates on standardized states."""

    RATE = 4

    def __init__(self, rng, state_dim: int, channels: int = 64,
                 latent_dim: int = 32, res_blocks: int = 2, levels: int = 2):
        super().__init__()
        self.state_dim = state_dim
        self.latent_dim = latent_dim
        self.levels = levels
        self.stem = self.add_child("stem", CausalConv(rng, state_dim, channels))
        self.enc_blocks = []
        for lv in range(levels):
            blocks = [self.add_child(f"enc{lv}_res{i}", ResBlock(rng, channels))
                      for i in range(res_blocks)]
            down = self.add_child(f"enc{lv}_down",
                                  CausalConv(rng, channels, channels, stride=2))
            self.enc_blocks.append((blocks, down))
        # zero-init posterior heads: mu = 0, logvar = 0 at start, so the
        # initial KL is exactly zero and exp(logvar) cannot blow up
        self.mu_head = self.add_child("mu", Linear(rng, channels, latent_dim,
                                                   zero_init=True))
        self.logvar_head = self.add_child("logvar", Linear(rng, channels, latent_dim,
                                                           zero_init=True))

        self.dec_in = self.add_child("dec_in", Linear(rng, latent_dim, channels))
        self.dec_blocks = []
        for lv in range(levels):
            up = self.add_child(f"dec{lv}_up", CausalConv(rng, channels, channels))
            blocks = [self.add_child(f"dec{lv}_res{i}", ResBlock(rng, channels))
                      for i in range(res_blocks)]
            self.dec_blocks.append((up, blocks))
        self.dec_out = self.add_child("dec_out", Linear(rng, channels, state_dim))
        # calibrated reconstruction: one learned log-variance
        self.log_sigma2 = self.add_param("log_sigma2", np.zeros(1))

    # -- encoder ----------------------------------------------------------

    def encode(self, s, mode: str = "mean", rng: np.random.Generator = None):
        """s: [N, d] or [B, N, d] standardized states -> (mu, logvar, I).

        mode "mean" returns I = mu (inference); "sample" draws the usual
        reparameterized latent and needs an rng.
        """
        x = s if isinstance(s, Tensor) else Tensor(np.asarray(s, np.float32))
        if x.ndim == 2:
            x = T.reshape(x, (1,) + x.shape)
        if x.shape[-2] < self.RATE:
            raise T.ShapeError(
                f"encode: need at least {self.RATE} frames, got {x.shape[-2]}")
        h = self.stem(x)
        for blocks, down in self.enc_blocks:
            for blk in blocks:
                h = blk(h)
            h = down(h)
        mu = self.mu_head(h)
        logvar = self.logvar_head(h)
        if mode == "mean":
            return mu, logvar, mu
        if mode == "sample":
            if rng is None:
                raise ValueError("sample mode needs an rng")
            eps = rng.standard_normal(mu.shape).astype(np.float32)
            std = T.exp(T.scale(logvar, 0.5))
            return mu, logvar, T.add(mu, T.mul(std, Tensor(eps)))
        raise ValueError(f"unknown encode mode '{mode}'")

    def encode_mean_np(self, s: np.ndarray) -> np.ndarray:
        """Convenience: frozen-encoder path returning plain arrays."""
        with T.no_grad():
            _, _, lat = self.encode(s, mode="mean")
        return lat.data

    # -- decoder ----------------------------------------------------------

    def decode(self, latents) -> Tensor:
        x = latents if isinstance(latents, Tensor) else Tensor(latents)
        if x.ndim == 2:
            x = T.reshape(x, (1,) + x.shape)
        h = self.dec_in(x)
        for up, blocks in self.dec_blocks:
            h = up(T.repeat_rows(h, 2))
            for blk in blocks:
                h = blk(h)
        return self.dec_out(h)

    # -- loss ----------------------------------------------------------------

    def loss(self, s_std: np.ndarray, rng: np.random.Generator,
             lambda_kl: float = 1e-5):
        """Returns (total, rec_mse, kl): rec_mse is the plain mean squared
        reconstruction error; the optimized total scales it by the learned
        calibration and adds lambda_kl * kl."""
        x = Tensor(np.asarray(s_std, np.float32))
        mu, logvar, lat = self.encode(x, mode="sample", rng=rng)
        recon = self.decode(lat)
        diff = T.sub(recon, x)
        rec_mse = T.mean(T.mul(diff, diff))
        # KL summed over latent dims, mean over batch/time
        var = T.exp(logvar)
        kl_terms = T.scale(T.sub(T.add(T.mul(mu, mu), var),
                                 T.add(logvar, Tensor(np.ones(1, np.float32)))), 0.5)
        kl = T.mean(T.sum_axis(kl_terms, -1))
        inv_sigma2 = T.exp(T.scale(self.log_sigma2, -1.0))
        calibrated = T.scale(T.add(T.mul(rec_mse, inv_sigma2), self.log_sigma2), 0.5)
        total = T.add(T.reshape(calibrated, ()), T.scale(kl, lambda_kl))
        return total, rec_mse, kl
