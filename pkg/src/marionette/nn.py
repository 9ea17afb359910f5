"""Transformer building blocks for the three denoisers.

DiT-style blocks: every sub-layer is gated by scale/shift/gate triplets
produced from the step embedding (adaLN), with gates zero-initialized so
a fresh block is the identity. Conditioning enters either as
cross-attention over condition tokens or, in the ablation mode, as a
mean-pooled vector folded into the adaLN signal.

Parameter counts (width W, vocab V, heads free):
    Linear(a, b):        a*b + b
    DiTBlock cross:      4(W^2+W) + 4(W^2+W) + (8W^2+5W) + (9W^2+9W)
    DiTBlock adaln:      4(W^2+W) + (8W^2+5W) + (6W^2+6W) + (W^2+W)
    (the last term of adaln is the condition-pool projection)
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Minimal parameter container with dotted-name flattening."""

    def __init__(self):
        self._params = {}
        self._children = {}

    def add_param(self, name: str, value: np.ndarray) -> Tensor:
        p = T.Parameter(value.astype(np.float32))
        self._params[name] = p
        return p

    def add_child(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def params(self, prefix: str = "") -> dict:
        out = {}
        for n, p in self._params.items():
            out[prefix + n] = p
        for n, c in self._children.items():
            out.update(c.params(prefix + n + "."))
        return out

    def n_params(self) -> int:
        return sum(p.size for p in self.params().values())

    def load_params(self, named: dict, prefix: str = "") -> None:
        own = self.params(prefix)
        for name, tensor in own.items():
            if name not in named:
                raise KeyError(f"checkpoint missing parameter '{name}'")
            src = named[name]
            if src.shape != tensor.data.shape:
                raise ValueError(f"shape mismatch for '{name}': "
                                 f"{src.shape} vs {tensor.data.shape}")
            tensor.data = np.asarray(src, dtype=np.float32).copy()


def xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    s = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=(fan_in, fan_out))


class Linear(Module):
    def __init__(self, rng, n_in: int, n_out: int, zero_init: bool = False):
        super().__init__()
        w = np.zeros((n_in, n_out)) if zero_init else xavier(rng, n_in, n_out)
        self.w = self.add_param("w", w)
        self.b = self.add_param("b", np.zeros(n_out))

    def __call__(self, x: Tensor) -> Tensor:
        return T.add(T.matmul(x, self.w), self.b)


class LayerNorm(Module):
    def __init__(self, dim: int, affine: bool = True):
        super().__init__()
        self.dim = dim
        if affine:
            self.g = self.add_param("g", np.ones(dim))
            self.b = self.add_param("b", np.zeros(dim))
        else:
            self.g = Tensor(np.ones(dim, np.float32))
            self.b = Tensor(np.zeros(dim, np.float32))

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.g, self.b)


class Mlp(Module):
    def __init__(self, rng, width: int, expansion: int = 4):
        super().__init__()
        self.fc1 = self.add_child("fc1", Linear(rng, width, expansion * width))
        self.fc2 = self.add_child("fc2", Linear(rng, expansion * width, width))

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(T.gelu(self.fc1(x)))


class MultiHeadAttention(Module):
    """Projected attention; q source and kv source may differ."""

    def __init__(self, rng, width: int, heads: int):
        super().__init__()
        if width % heads:
            raise T.ShapeError(f"width {width} not divisible by heads {heads}")
        self.heads = heads
        self.wq = self.add_child("wq", Linear(rng, width, width))
        self.wk = self.add_child("wk", Linear(rng, width, width))
        self.wv = self.add_child("wv", Linear(rng, width, width))
        self.wo = self.add_child("wo", Linear(rng, width, width))

    def __call__(self, q_src: Tensor, kv_src: Tensor, mask=None) -> Tensor:
        out = T.attention(self.wq(q_src), self.wk(kv_src), self.wv(kv_src),
                          self.heads, mask)
        return self.wo(out)


def modulate(x: Tensor, shift: Tensor, scale: Tensor) -> Tensor:
    one_plus = T.add(scale, Tensor(np.ones(1, np.float32)))
    return T.add(T.mul(x, one_plus), shift)


def _expand(chunk: Tensor) -> Tensor:
    # [B, W] -> [B, 1, W] so it broadcasts over tokens
    b, w = chunk.shape
    return T.reshape(chunk, (b, 1, w))


CROSS_ATTENTION = "cross_attention_tokens"
ADALN_GLOBAL = "adaln_global_token"


class DiTBlock(Module):
    """One denoiser block; `mode` picks the conditioning topology."""

    def __init__(self, rng, width: int, heads: int, mode: str = CROSS_ATTENTION):
        super().__init__()
        if mode not in (CROSS_ATTENTION, ADALN_GLOBAL):
            raise ValueError(f"unknown conditioning mode '{mode}'")
        self.mode = mode
        self.width = width
        self.norm1 = self.add_child("norm1", LayerNorm(width, affine=False))
        self.attn = self.add_child("attn", MultiHeadAttention(rng, width, heads))
        self.norm3 = self.add_child("norm3", LayerNorm(width, affine=False))
        self.mlp = self.add_child("mlp", Mlp(rng, width))
        n_tri = 3 if mode == CROSS_ATTENTION else 2
        self.mod = self.add_child(
            "mod", Linear(rng, width, 3 * n_tri * width, zero_init=True))
        if mode == CROSS_ATTENTION:
            self.norm2 = self.add_child("norm2", LayerNorm(width, affine=False))
            self.cross = self.add_child("cross",
                                        MultiHeadAttention(rng, width, heads))
        else:
            self.pool_proj = self.add_child("pool_proj",
                                            Linear(rng, width, width))

    def _chunks(self, signal: Tensor, n: int):
        w = self.width
        return [T.getitem(signal, (slice(None), slice(i * w, (i + 1) * w)))
                for i in range(n)]

    def __call__(self, x: Tensor, t_emb: Tensor, cond: Tensor = None,
                 cond_mask=None, self_mask=None) -> Tensor:
        """x [B, T, W]; t_emb [B, W]; cond [B, Tc, W] with additive mask
        broadcastable to [B, H, T, Tc]."""
        if self.mode == ADALN_GLOBAL:
            if cond is not None:
                pooled = self.pool_proj(_masked_mean(cond, cond_mask))
                t_emb = T.add(t_emb, pooled)
            sig = self.mod(T.gelu(t_emb))
            s1, b1, g1, s3, b3, g3 = self._chunks(sig, 6)
            h = modulate(self.norm1(x), _expand(b1), _expand(s1))
            x = T.add(x, T.mul(_expand(g1), self.attn(h, h, self_mask)))
            h = modulate(self.norm3(x), _expand(b3), _expand(s3))
            x = T.add(x, T.mul(_expand(g3), self.mlp(h)))
            return x

        sig = self.mod(T.gelu(t_emb))
        s1, b1, g1, s2, b2, g2, s3, b3, g3 = self._chunks(sig, 9)
        h = modulate(self.norm1(x), _expand(b1), _expand(s1))
        x = T.add(x, T.mul(_expand(g1), self.attn(h, h, self_mask)))
        if cond is None:
            raise ValueError("cross-attention mode requires condition tokens")
        h = modulate(self.norm2(x), _expand(b2), _expand(s2))
        x = T.add(x, T.mul(_expand(g2), self.cross(h, cond, cond_mask)))
        h = modulate(self.norm3(x), _expand(b3), _expand(s3))
        x = T.add(x, T.mul(_expand(g3), self.mlp(h)))
        return x


def _masked_mean(tokens: Tensor, mask) -> Tensor:
    """Mean over valid token positions; mask is additive [B, 1, 1, Tc]."""
    if mask is None:
        return T.mean_axis(tokens, 1)
    keep = (np.asarray(mask).reshape(mask.shape[0], -1) > -1.0).astype(np.float32)
    counts = np.maximum(keep.sum(axis=1, keepdims=True), 1.0)
    weights = (keep / counts)[:, :, None]                      # [B, Tc, 1]
    return T.sum_axis(T.mul(tokens, Tensor(weights)), 1)


class TimestepEmbed(Module):
    """Sinusoidal features of the diffusion step index, refined by an MLP."""

    def __init__(self, rng, width: int, k_max: int):
        super().__init__()
        self.width = width
        self.k_max = k_max
        half = width // 2
        freqs = np.exp(-math.log(200.0) * np.arange(half) / max(half - 1, 1))
        self._freqs = freqs
        self.fc1 = self.add_child("fc1", Linear(rng, 2 * half, width))
        self.fc2 = self.add_child("fc2", Linear(rng, width, width))

    def features(self, k) -> np.ndarray:
        k = np.atleast_1d(np.asarray(k, dtype=np.float64))
        if (k < 1).any() or (k > self.k_max).any():
            raise ValueError(f"step index out of range 1..{self.k_max}")
        ang = k[:, None] * self._freqs[None, :]
        return np.concatenate([np.sin(ang), np.cos(ang)], axis=1).astype(np.float32)

    def __call__(self, k) -> Tensor:
        """k scalar or [B] ints -> [B, width] embedding."""
        return self.fc2(T.gelu(self.fc1(Tensor(self.features(k)))))


class TextAdapter(Module):
    """Trainable word embeddings plus a two-layer transformer encoder.

    Returns per-token features and the additive attention mask hiding
    PAD positions. The single-sequence helper drops PAD rows entirely.
    """

    def __init__(self, rng, vocab_size: int, width: int, max_len: int,
                 heads: int = 4, layers: int = 2):
        super().__init__()
        self.width = width
        self.max_len = max_len
        self.table = self.add_param(
            "table", rng.normal(0.0, 0.02, (vocab_size, width)))
        self.pos = self.add_param("pos", rng.normal(0.0, 0.02, (max_len, width)))
        self.blocks = []
        for i in range(layers):
            blk = Module()
            blk.add_child("norm1", LayerNorm(width))
            blk.add_child("attn", MultiHeadAttention(rng, width, heads))
            blk.add_child("norm2", LayerNorm(width))
            blk.add_child("mlp", Mlp(rng, width))
            self.add_child(f"layer{i}", blk)
            self.blocks.append(blk)

    def __call__(self, token_ids: np.ndarray):
        """token_ids [B, L] ints -> (tokens [B, L, W], additive mask
        [B, 1, 1, L] with -1e9 on PAD)."""
        ids = np.atleast_2d(np.asarray(token_ids))
        pad = (ids == 0)
        mask = np.where(pad, -1e9, 0.0).astype(np.float32)[:, None, None, :]
        x = T.add(T.embedding_lookup(self.table, ids), self.pos)
        for blk in self.blocks:
            c = blk._children
            h = c["norm1"](x)
            x = T.add(x, c["attn"](h, h, mask))
            x = T.add(x, c["mlp"](c["norm2"](x)))
        return x, mask

    def encode_single(self, token_ids: np.ndarray):
        """One sequence -> only the non-PAD rows (possibly zero rows)."""
        ids = np.asarray(token_ids).reshape(1, -1)
        toks, _ = self(ids)
        keep = np.nonzero(ids[0] != 0)[0]
        return T.getitem(toks, (0, keep, slice(None)))


def count_cross_block(width: int) -> int:
    w = width
    return (4 * (w * w + w)) * 2 + (8 * w * w + 5 * w) + (9 * w * w + 9 * w)


def count_adaln_block(width: int) -> int:
    w = width
    return 4 * (w * w + w) + (8 * w * w + 5 * w) + (6 * w * w + 6 * w) + (w * w + w)
