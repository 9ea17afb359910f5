"""Training drivers for the VAE stage and the joint policy stage."""

from __future__ import annotations

import time

import numpy as np

from .diffusion import NoiseSchedule
from .policy import (IntentCodec, IntentPolicy, PolicyConfig, sample_windows,
                     usable_triplets)
from .tensor import Adam
from .vae import IntentVae, Normalizer, uniform_downsample


def vae_batch(triplets, normalizer: Normalizer, batch: int, window: int,
              rng: np.random.Generator) -> np.ndarray:
    """Half contiguous windows, half downsampled full sequences: the same
    encoder serves both the history path and the holistic path."""
    out = []
    for i in rng.integers(0, len(triplets), size=batch):
        t = triplets[int(i)]
        states = normalizer.states_in(t.states)
        if rng.random() < 0.5 or t.frames < window:
            out.append(uniform_downsample(states, window))
        else:
            a = int(rng.integers(0, t.frames - window + 1))
            out.append(states[a:a + window])
    return np.stack(out)


def train_vae(train_triplets, seed: int, state_dim: int, steps: int = 1500,
              batch: int = 16, lr: float = 2e-4, lambda_kl: float = 1e-5,
              window: int = 16, channels: int = 64, latent_dim: int = 32,
              log_every: int = 0):
    """Returns (vae, normalizer, history of (step, total, rec, kl))."""
    rng = np.random.default_rng([seed, 0])
    normalizer = Normalizer.fit(train_triplets)
    vae = IntentVae(np.random.default_rng([seed, 1]), state_dim,
                    channels=channels, latent_dim=latent_dim)
    opt = Adam(vae.params(), lr=lr, warmup=100)
    history = []
    for step in range(1, steps + 1):
        s = vae_batch(train_triplets, normalizer, batch, window, rng)
        total, rec, kl = vae.loss(s, rng, lambda_kl)
        total.backward()
        opt.step()
        if log_every and (step % log_every == 0 or step == 1):
            history.append((step, total.item(), rec.item(), kl.item()))
    return vae, normalizer, history


def heldout_recon_mse(vae: IntentVae, normalizer: Normalizer, triplets,
                      window: int = 16, max_windows: int = 64) -> float:
    """Mean per-dim reconstruction MSE on standardized held-out windows."""
    import itertools
    from . import tensor as T

    errs = []
    count = 0
    for t in triplets:
        states = normalizer.states_in(t.states)
        starts = range(0, max(1, t.frames - window + 1), window)
        for a in itertools.islice(starts, 8):
            s = states[a:a + window]
            if len(s) < window:
                break
            with T.no_grad():
                _, _, lat = vae.encode(s[None])
                rec = vae.decode(lat)
            errs.append(float(np.mean((rec.data[0] - s) ** 2)))
            count += 1
            if count >= max_windows:
                return float(np.mean(errs))
    return float(np.mean(errs))


def train_policy(train_triplets, vae, normalizer: Normalizer, vocab,
                 cfg: PolicyConfig, seed: int, steps: int = 4000,
                 batch: int = 16, lr: float = 2e-4, warmup: int = 500,
                 state_dim: int = None, action_dim: int = None,
                 log_every: int = 0, progress=None):
    """Joint end-to-end training of the three denoisers plus text adapter."""
    rng = np.random.default_rng([seed, 2])
    codec = (IntentCodec(vae) if cfg.use_vae
             else IntentCodec(None, state_dim=state_dim))
    policy = IntentPolicy(np.random.default_rng([seed, 3]), state_dim,
                          action_dim, len(vocab), cfg, codec)
    schedule = NoiseSchedule(cfg.k_max)
    opt = Adam(policy.params(), lr=lr, warmup=warmup)
    # the holistic target per triplet never changes: encode once
    hol_cache = None
    if cfg.use_hip:
        usable = usable_triplets(train_triplets, cfg)
        downs = np.stack([uniform_downsample(normalizer.states_in(t.states),
                                             cfg.holistic_frames)
                          for t in usable])
        hol_cache = codec.encode(downs)
    history = []
    t0 = time.time()
    for step in range(1, steps + 1):
        windows = sample_windows(train_triplets, batch, cfg, normalizer,
                                 vocab, rng, holistic_latents=hol_cache)
        total, comps = policy.joint_loss(windows, schedule, rng)
        total.backward()
        opt.step()
        if log_every and (step % log_every == 0 or step == 1):
            row = (step, total.item(),
                   {k: v.item() for k, v in comps.items()}, time.time() - t0)
            history.append(row)
            if progress:
                progress(row)
    return policy, schedule, history
