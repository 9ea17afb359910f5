"""The control stack: holistic and immediate intent denoisers, the action
denoiser, their joint training loss, and the autoregressive runtime.

Training is teacher-forced: each denoiser runs one forward pass on the
ground-truth-noised target at an independently drawn step, and the
final-layer hidden tokens of the upstream predictors condition the
downstream ones inside the same graph, so action-loss gradients reach
the intent predictors. At inference the runtime keeps a FIFO buffer of
recent observations, samples a holistic intent once per command, then
alternates immediate-intent and action-chunk sampling every chunk.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .diffusion import GuidanceConfig, NoiseSchedule, sample, x0_loss
from .nn import (ADALN_GLOBAL, CROSS_ATTENTION, DiTBlock, LayerNorm, Linear,
                 Module, TextAdapter, TimestepEmbed)
from .tensor import Tensor
from .vae import IntentVae, Normalizer, uniform_downsample


class WindowError(ValueError):
    pass


class RuntimeContractError(RuntimeError):
    pass


@dataclass
class PolicyConfig:
    width: int = 128
    blocks: int = 3
    heads: int = 4
    conditioning_mode: str = CROSS_ATTENTION
    use_vae: bool = True
    use_hip: bool = True
    use_iip: bool = True
    history: int = 16                 # h, buffered frames
    immediate: int = 16               # L, future frames for the IIP target
    action_horizon: int = 4
    holistic_frames: int = 16         # full sequence downsampled to this
    latent_dim: int = 32
    k_max: int = 50
    sampler: str = "ddim"
    sample_steps: int = 10
    guidance: float = 3.5
    drop_prob: float = 0.1
    max_text_len: int = 12

    def min_window(self) -> int:
        return self.history + self.immediate + self.action_horizon


class IntentCodec:
    """Frozen mapping from standardized state windows to intent tokens."""

    def __init__(self, vae: IntentVae = None, state_dim: int = None):
        self.vae = vae
        if vae is not None:
            self.latent_dim = vae.latent_dim
            self.rate = vae.RATE
        else:
            if state_dim is None:
                raise ValueError("raw codec needs the state width")
            self.latent_dim = state_dim
            self.rate = 1

    def tokens_for(self, frames: int) -> int:
        return (frames - 1) // self.rate + 1

    def encode(self, s_std: np.ndarray) -> np.ndarray:
        """[B, T, d] -> [B, tokens, latent_dim], gradient-free."""
        if self.vae is None:
            return np.asarray(s_std, np.float32)
        return self.vae.encode_mean_np(s_std)


def _segment_param(module: Module, name: str, rng, width: int):
    return module.add_param(name, rng.normal(0.0, 0.02, (1, 1, width)))


class ConditionBuilder(Module):
    """Projects condition sources into width-space token sequences with a
    shared assembly: [text | extras...], each source tagged by a learned
    segment embedding. Dropped or empty text collapses to the null token."""

    def __init__(self, rng, width: int, sources: dict):
        """sources: name -> input width (projected with a Linear)."""
        super().__init__()
        self.width = width
        self.null_text = self.add_param("null_text",
                                        rng.normal(0.0, 0.02, (1, 1, width)))
        self.seg = {"text": _segment_param(self, "seg_text", rng, width)}
        self.projs = {}
        for name, in_width in sources.items():
            self.projs[name] = self.add_child(f"proj_{name}",
                                              Linear(rng, in_width, width))
            self.seg[name] = _segment_param(self, f"seg_{name}", rng, width)

    def __call__(self, text_tokens: Tensor, text_mask: np.ndarray,
                 drop_mask: np.ndarray, extras: dict):
        """extras: name -> Tensor [B, Tn, in_width]. Returns (cond tokens,
        additive mask [B, 1, 1, total])."""
        b, lt, _ = text_tokens.shape
        drop = np.asarray(drop_mask, bool).copy()
        all_pad = (text_mask.reshape(b, lt) < -1.0).all(axis=1)
        drop |= all_pad
        keep = Tensor((~drop).astype(np.float32).reshape(b, 1, 1))
        dropped = Tensor(drop.astype(np.float32).reshape(b, 1, 1))
        text = T.add(T.mul(text_tokens, keep), T.mul(self.null_text, dropped))
        text = T.add(text, self.seg["text"])
        # dropped rows attend only to the first (null) position
        mask = text_mask.reshape(b, lt).copy()
        null_row = np.full(lt, -1e9, np.float32)
        null_row[0] = 0.0
        mask[drop] = null_row
        parts = [text]
        masks = [mask]
        for name, value in extras.items():
            toks = T.add(self.projs[name](value), self.seg[name])
            parts.append(toks)
            masks.append(np.zeros((b, toks.shape[1]), np.float32))
        cond = T.concat(parts, axis=1)
        full_mask = np.concatenate(masks, axis=1)[:, None, None, :]
        return cond, full_mask


class Denoiser(Module):
    """A DiT stack predicting the clean signal for one target kind.

    For intents the tokens are the latent sequence itself; for actions a
    raw-state history prefix is prepended and only the chunk positions
    are decoded. Exposes the final hidden tokens for downstream use.
    """

    def __init__(self, rng, tokens: int, target_dim: int, cfg: PolicyConfig,
                 cond_sources: dict, prefix_dim: int = 0, prefix_tokens: int = 0):
        super().__init__()
        w = cfg.width
        self.tokens = tokens
        self.prefix_tokens = prefix_tokens
        self.in_proj = self.add_child("in_proj", Linear(rng, target_dim, w))
        self.pos = self.add_param("pos", rng.normal(0.0, 0.02, (tokens, w)))
        if prefix_tokens:
            self.prefix_proj = self.add_child("prefix_proj",
                                              Linear(rng, prefix_dim, w))
            self.prefix_pos = self.add_param(
                "prefix_pos", rng.normal(0.0, 0.02, (prefix_tokens, w)))
        self.t_embed = self.add_child("t_embed", TimestepEmbed(rng, w, cfg.k_max))
        self.cond = self.add_child("cond", ConditionBuilder(rng, w, cond_sources))
        self.blocks = [self.add_child(f"block{i}",
                                      DiTBlock(rng, w, cfg.heads,
                                               cfg.conditioning_mode))
                       for i in range(cfg.blocks)]
        self.final_norm = self.add_child("final_norm", LayerNorm(w, affine=False))
        self.head = self.add_child("head", Linear(rng, w, target_dim,
                                                  zero_init=True))

    def __call__(self, x_k, k, text_tokens, text_mask, drop_mask, extras,
                 prefix=None):
        """Returns (prediction [B, tokens, target_dim], hidden [B, tokens, W])."""
        x = x_k if isinstance(x_k, Tensor) else Tensor(np.asarray(x_k, np.float32))
        h = T.add(self.in_proj(x), self.pos)
        if self.prefix_tokens:
            if prefix is None:
                raise RuntimeContractError("denoiser expects a history prefix")
            p = prefix if isinstance(prefix, Tensor) else Tensor(prefix)
            p = T.add(self.prefix_proj(p), self.prefix_pos)
            h = T.concat([p, h], axis=1)
        cond, cond_mask = self.cond(text_tokens, text_mask, drop_mask, extras)
        t_emb = self.t_embed(k)
        for blk in self.blocks:
            h = blk(h, t_emb, cond, cond_mask)
        h = self.final_norm(h)
        if self.prefix_tokens:
            h = T.getitem(h, (slice(None), slice(self.prefix_tokens, None),
                              slice(None)))
        return self.head(h), h


class IntentPolicy(Module):
    """Text adapter plus the三-part denoiser stack (HIP / IIP / ADiT).

    The VAE is not a child: its parameters are frozen and never appear in
    params(), which is what the optimizer consumes.
    """

    def __init__(self, rng, state_dim: int, action_dim: int, vocab_size: int,
                 cfg: PolicyConfig, codec: IntentCodec):
        super().__init__()
        self.cfg = cfg
        self.codec = codec
        self.state_dim = state_dim
        self.action_dim = action_dim
        w = cfg.width
        self.text = self.add_child(
            "text", TextAdapter(rng, vocab_size, w, cfg.max_text_len, cfg.heads))
        hol_tokens = codec.tokens_for(cfg.holistic_frames)
        imm_tokens = codec.tokens_for(cfg.immediate)
        hist_tokens = codec.tokens_for(cfg.history)
        self.hip = None
        self.iip = None
        if cfg.use_hip:
            self.hip = self.add_child("hip", Denoiser(
                rng, hol_tokens, codec.latent_dim, cfg, {}))
        if cfg.use_iip:
            iip_sources = {"hist": codec.latent_dim}
            if cfg.use_hip:
                iip_sources["hol"] = w
            self.iip = self.add_child("iip", Denoiser(
                rng, imm_tokens, codec.latent_dim, cfg, iip_sources))
        adit_sources = {}
        if cfg.use_hip:
            adit_sources["hol"] = w
        if cfg.use_iip:
            adit_sources["imm"] = w
        self.adit = self.add_child("adit", Denoiser(
            rng, cfg.action_horizon, action_dim, cfg, adit_sources,
            prefix_dim=state_dim, prefix_tokens=cfg.history))

    # -- training --------------------------------------------------------

    def joint_loss(self, windows: dict, schedule: NoiseSchedule,
                   rng: np.random.Generator):
        """windows: s_full/s_hist/s_future standardized [B, *, d], a_chunk
        standardized [B, H, J], tokens [B, max_len]. Returns the summed
        loss tensor plus per-part components."""
        cfg = self.cfg
        b = windows["tokens"].shape[0]
        text_tokens, text_mask = self.text(windows["tokens"])
        drop = rng.random(b) < cfg.drop_prob

        comps = {}
        total = None
        hol_hidden = None
        imm_hidden = None

        if self.hip is not None:
            if "i_full" in windows:
                i_h = windows["i_full"]
            else:
                i_h = self.codec.encode(windows["s_full"])
            hip_out = {}

            def hip_model(x_k, k, drop_mask):
                pred, hid = self.hip(x_k, k, text_tokens, text_mask,
                                     drop_mask, {})
                hip_out["hidden"] = hid
                return pred

            loss_hip = x0_loss(lambda x, k, d: hip_model(x, k, drop),
                               i_h, schedule, rng, drop_prob=0.0)
            comps["hip"] = loss_hip
            total = loss_hip
            hol_hidden = hip_out["hidden"]

        if self.iip is not None:
            i_hist = self.codec.encode(windows["s_hist"])
            i_fut = self.codec.encode(windows["s_future"])
            extras = {"hist": Tensor(i_hist)}
            if hol_hidden is not None:
                extras["hol"] = hol_hidden
            iip_out = {}

            def iip_model(x_k, k, drop_mask):
                pred, hid = self.iip(x_k, k, text_tokens, text_mask,
                                     drop_mask, extras)
                iip_out["hidden"] = hid
                return pred

            loss_iip = x0_loss(lambda x, k, d: iip_model(x, k, drop),
                               i_fut, schedule, rng, drop_prob=0.0)
            comps["iip"] = loss_iip
            total = loss_iip if total is None else T.add(total, loss_iip)
            imm_hidden = iip_out["hidden"]

        extras = {}
        if hol_hidden is not None:
            extras["hol"] = hol_hidden
        if imm_hidden is not None:
            extras["imm"] = imm_hidden
        prefix = Tensor(windows["s_hist"])

        def adit_model(x_k, k, drop_mask):
            pred, _ = self.adit(x_k, k, text_tokens, text_mask, drop_mask,
                                extras, prefix=prefix)
            return pred

        loss_adit = x0_loss(lambda x, k, d: adit_model(x, k, drop),
                            windows["a_chunk"], schedule, rng, drop_prob=0.0)
        comps["adit"] = loss_adit
        total = loss_adit if total is None else T.add(total, loss_adit)
        return total, comps


def usable_triplets(triplets, cfg: PolicyConfig):
    need = cfg.min_window()
    usable = [t for t in triplets if t.frames >= need]
    if not usable:
        raise WindowError(f"no triplet is at least {need} frames long")
    return usable


def sample_windows(triplets, batch: int, cfg: PolicyConfig,
                   normalizer: Normalizer, vocab, rng: np.random.Generator,
                   holistic_latents: np.ndarray = None):
    """Draw one training window per sampled triplet.

    holistic_latents, when given, is the precomputed per-triplet encoding
    of the downsampled full sequence (aligned with usable_triplets order);
    it is constant per triplet, so callers cache it across steps.
    """
    usable = usable_triplets(triplets, cfg)
    idx = rng.integers(0, len(usable), size=batch)
    s_full, s_hist, s_future, chunks, tokens = [], [], [], [], []
    h, L, H = cfg.history, cfg.immediate, cfg.action_horizon
    for i in idx:
        t = usable[int(i)]
        # anchors may fall before a full history exists; the runtime pads
        # its buffer by repeating the earliest state, so training mirrors it
        anchor = int(rng.integers(0, t.frames - L))
        states = normalizer.states_in(t.states)
        if holistic_latents is None:
            s_full.append(uniform_downsample(states, cfg.holistic_frames))
        else:
            s_full.append(holistic_latents[int(i)])
        lo = anchor - h + 1
        if lo < 0:
            pad = np.repeat(states[:1], -lo, axis=0)
            s_hist.append(np.concatenate([pad, states[:anchor + 1]], axis=0))
        else:
            s_hist.append(states[lo:anchor + 1])
        s_future.append(states[anchor + 1:anchor + 1 + L])
        chunks.append(normalizer.actions_in(t.actions[anchor:anchor + H]))
        text = t.texts[int(rng.integers(len(t.texts)))]
        tokens.append(vocab.tokenize(text, cfg.max_text_len))
    out = {
        "s_hist": np.stack(s_hist),
        "s_future": np.stack(s_future),
        "a_chunk": np.stack(chunks),
        "tokens": np.stack(tokens),
    }
    if holistic_latents is None:
        out["s_full"] = np.stack(s_full)
    else:
        out["i_full"] = np.stack(s_full)
    return out


class PolicyRuntime:
    """One live control session: FIFO state buffer plus cached intents."""

    def __init__(self, policy: IntentPolicy, normalizer: Normalizer, vocab,
                 schedule: NoiseSchedule, joint_limits: np.ndarray,
                 guidance: GuidanceConfig = None):
        self.policy = policy
        self.cfg = policy.cfg
        self.normalizer = normalizer
        self.vocab = vocab
        self.schedule = schedule
        self.limits = np.asarray(joint_limits)
        self.guidance = guidance or GuidanceConfig(scale=self.cfg.guidance,
                                                   drop_prob=self.cfg.drop_prob)
        self.buffer = deque(maxlen=self.cfg.history)
        self.command_tokens = None
        self.command_text = None
        self.hol_hidden = None
        self.imm_hidden = None

    # -- session state ---------------------------------------------------

    def reset_session(self) -> None:
        self.buffer.clear()
        self.command_tokens = None
        self.command_text = None
        self.hol_hidden = None
        self.imm_hidden = None

    def push_state(self, obs: np.ndarray) -> None:
        self.buffer.append(np.asarray(obs, np.float32))

    def buffered_states(self) -> np.ndarray:
        """The last h observations, left-padded by repeating the earliest."""
        if not self.buffer:
            raise RuntimeContractError("history buffer is empty")
        rows = list(self.buffer)
        while len(rows) < self.cfg.history:
            rows.insert(0, rows[0])
        return np.stack(rows)

    def set_command(self, text: str, rng: np.random.Generator) -> None:
        """Store the command and recompute the holistic intent."""
        self.command_text = text
        self.command_tokens = self.vocab.tokenize(text, self.cfg.max_text_len)
        if self.policy.hip is not None:
            self.infer_holistic(rng)

    # -- conditioned prediction helpers -----------------------------------

    def _text_forward(self):
        return self.policy.text(self.command_tokens[None, :])

    def _predict_fn(self, denoiser, extras_fn, prefix=None):
        text_tokens, text_mask = self._text_forward()
        stash = {}

        def predict(x_k, k, conditioned):
            drop = np.array([not conditioned])
            with T.no_grad():
                pred, hid = denoiser(x_k[None], np.array([k]), text_tokens,
                                     text_mask, drop, extras_fn(),
                                     prefix=prefix)
            if conditioned:
                stash["hidden"] = hid.data
            return pred.data[0]

        return predict, stash

    # -- the three inference stages ---------------------------------------

    def infer_holistic(self, rng: np.random.Generator) -> np.ndarray:
        if self.policy.hip is None:
            raise RuntimeContractError("this configuration has no holistic model")
        if self.command_tokens is None:
            raise RuntimeContractError("set a command first")
        cfg = self.cfg
        tokens = self.policy.codec.tokens_for(cfg.holistic_frames)
        predict, stash = self._predict_fn(self.policy.hip, lambda: {})
        est = sample(predict, (tokens, self.policy.codec.latent_dim),
                     self.schedule, rng, cfg.sampler, cfg.sample_steps,
                     self.guidance.scale)
        self.hol_hidden = stash["hidden"]
        return est

    def infer_immediate(self, rng: np.random.Generator) -> np.ndarray:
        if self.policy.iip is None:
            raise RuntimeContractError("this configuration has no immediate model")
        if self.policy.hip is not None and self.hol_hidden is None:
            raise RuntimeContractError("holistic intent must be computed first")
        cfg = self.cfg
        hist = self.normalizer.states_in(self.buffered_states())
        i_hist = self.policy.codec.encode(hist[None])

        def extras():
            out = {"hist": Tensor(i_hist)}
            if self.hol_hidden is not None:
                out["hol"] = Tensor(self.hol_hidden)
            return out

        tokens = self.policy.codec.tokens_for(cfg.immediate)
        predict, stash = self._predict_fn(self.policy.iip, extras)
        est = sample(predict, (tokens, self.policy.codec.latent_dim),
                     self.schedule, rng, cfg.sampler, cfg.sample_steps,
                     self.guidance.scale)
        self.imm_hidden = stash["hidden"]
        return est

    def infer_actions(self, rng: np.random.Generator) -> np.ndarray:
        """Sample one standardized action chunk and map it to PD targets."""
        if self.policy.hip is not None and self.hol_hidden is None:
            raise RuntimeContractError("holistic intent must be computed first")
        if self.policy.iip is not None and self.imm_hidden is None:
            raise RuntimeContractError("immediate intent must be computed first")
        cfg = self.cfg
        hist = self.normalizer.states_in(self.buffered_states())

        def extras():
            out = {}
            if self.hol_hidden is not None:
                out["hol"] = Tensor(self.hol_hidden)
            if self.imm_hidden is not None:
                out["imm"] = Tensor(self.imm_hidden)
            return out

        predict, _ = self._predict_fn(self.policy.adit, extras,
                                      prefix=hist[None])
        est = sample(predict, (cfg.action_horizon, self.policy.action_dim),
                     self.schedule, rng, cfg.sampler, cfg.sample_steps,
                     self.guidance.scale)
        chunk = self.normalizer.actions_out(est)
        return np.clip(chunk, self.limits[:, 0], self.limits[:, 1])


def rollout(runtime: PolicyRuntime, command: str, n_steps: int, sim, rng,
            sim_steps_per_frame: int = None):
    """Autoregressive execution: observe, buffer, re-plan every chunk.

    Returns (states [T, d], actions [T, J], failed flag). The simulator is
    reset to the neutral stand first; a divergence truncates the episode
    and flags it failed.
    """
    from .sim.observe import observe

    states, actions = [], []
    failed = False
    if n_steps <= 0:
        return np.zeros((0, runtime.policy.state_dim), np.float32), \
            np.zeros((0, runtime.policy.action_dim), np.float32), failed
    if sim_steps_per_frame is None:
        sim_steps_per_frame = max(1, round(1.0 / (30.0 * sim.cfg.dt)))
    runtime.reset_session()
    state = sim.reset("neutral_stand")
    obs = observe(state, sim.top)
    runtime.push_state(obs)
    runtime.set_command(command, rng)
    chunk = None
    horizon = runtime.cfg.action_horizon
    for t in range(n_steps):
        if t % horizon == 0:
            if runtime.policy.iip is not None:
                runtime.infer_immediate(rng)
            chunk = runtime.infer_actions(rng)
        a = chunk[t % horizon]
        states.append(obs)
        actions.append(a.astype(np.float32))
        try:
            for _ in range(sim_steps_per_frame):
                state = sim.step(state, a, rng=rng)
        except Exception:
            failed = True
            break
        obs = observe(state, sim.top)
        runtime.push_state(obs)
    return np.array(states, np.float32), np.array(actions, np.float32), failed
