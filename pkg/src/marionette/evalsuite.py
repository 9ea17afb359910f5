"""Evaluation: contrastive behavior/text encoders and the metric set.

The encoders map state sequences and commands into one unit-norm
embedding space (symmetric InfoNCE over in-batch negatives, one sample
per behavior per batch). Retrieval, Frechet distance, matched/pairwise
distances, and the two physics metrics (foot clearance and jerk) all
operate on recorded observation rows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .corpus.behaviors import StateView
from .nn import LayerNorm, Linear, Mlp, Module, MultiHeadAttention
from .tensor import Adam, Tensor
from .vae import Normalizer, uniform_downsample


class EvalError(ValueError):
    pass


@dataclass
class EncoderConfig:
    embed_dim: int = 32
    width: int = 64
    heads: int = 4
    layers: int = 2
    frames: int = 16
    max_text_len: int = 12
    steps: int = 700
    lr: float = 2e-4
    init_temp: float = 0.07


def _l2_normalize(x: Tensor, eps: float = 1e-8) -> Tensor:
    sq = T.sum_axis(T.mul(x, x), -1, keepdims=True)
    inv = T.exp(T.scale(T.log(T.add(sq, Tensor(np.float32(eps)))), -0.5))
    return T.mul(x, inv)


class _EncoderStack(Module):
    def __init__(self, rng, width, heads, layers):
        super().__init__()
        self.blocks = []
        for i in range(layers):
            blk = Module()
            blk.add_child("norm1", LayerNorm(width))
            blk.add_child("attn", MultiHeadAttention(rng, width, heads))
            blk.add_child("norm2", LayerNorm(width))
            blk.add_child("mlp", Mlp(rng, width))
            self.add_child(f"layer{i}", blk)
            self.blocks.append(blk)

    def __call__(self, x, mask=None):
        for blk in self.blocks:
            c = blk._children
            h = c["norm1"](x)
            x = T.add(x, c["attn"](h, h, mask))
            x = T.add(x, c["mlp"](c["norm2"](x)))
        return x


class BehaviorEncoder(Module):
    def __init__(self, rng, state_dim: int, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.proj = self.add_child("proj", Linear(rng, state_dim, cfg.width))
        self.pos = self.add_param("pos",
                                  rng.normal(0.0, 0.02, (cfg.frames, cfg.width)))
        self.stack = self.add_child("stack",
                                    _EncoderStack(rng, cfg.width, cfg.heads,
                                                  cfg.layers))
        self.out = self.add_child("out", Linear(rng, cfg.width, cfg.embed_dim))

    def __call__(self, seqs: np.ndarray) -> Tensor:
        """[B, frames, d] standardized states -> [B, e] unit-norm."""
        x = T.add(self.proj(Tensor(np.asarray(seqs, np.float32))), self.pos)
        x = self.stack(x)
        return _l2_normalize(self.out(T.mean_axis(x, 1)))


class TextEncoder(Module):
    def __init__(self, rng, vocab_size: int, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.table = self.add_param("table",
                                    rng.normal(0.0, 0.02, (vocab_size, cfg.width)))
        self.pos = self.add_param("pos",
                                  rng.normal(0.0, 0.02,
                                             (cfg.max_text_len, cfg.width)))
        self.stack = self.add_child("stack",
                                    _EncoderStack(rng, cfg.width, cfg.heads,
                                                  cfg.layers))
        self.out = self.add_child("out", Linear(rng, cfg.width, cfg.embed_dim))

    def __call__(self, token_ids: np.ndarray) -> Tensor:
        ids = np.atleast_2d(np.asarray(token_ids))
        pad = ids == 0
        mask = np.where(pad, -1e9, 0.0).astype(np.float32)[:, None, None, :]
        x = T.add(T.embedding_lookup(self.table, ids), self.pos)
        x = self.stack(x, mask)
        keep = (~pad).astype(np.float32)
        weights = keep / np.maximum(keep.sum(axis=1, keepdims=True), 1.0)
        pooled = T.sum_axis(T.mul(x, Tensor(weights[:, :, None])), 1)
        return _l2_normalize(self.out(pooled))


class EvalEncoders(Module):
    """Paired encoders plus the learned contrastive temperature."""

    def __init__(self, rng, state_dim: int, vocab_size: int,
                 cfg: EncoderConfig = None):
        super().__init__()
        self.cfg = cfg or EncoderConfig()
        self.behavior = self.add_child(
            "behavior", BehaviorEncoder(rng, state_dim, self.cfg))
        self.text = self.add_child("text", TextEncoder(rng, vocab_size, self.cfg))
        self.log_inv_temp = self.add_param(
            "log_inv_temp", np.array([math.log(1.0 / self.cfg.init_temp)]))

    def info_nce(self, seqs: np.ndarray, token_ids: np.ndarray) -> Tensor:
        """Symmetric InfoNCE over in-batch negatives (matched rows)."""
        b_emb = self.behavior(seqs)
        t_emb = self.text(token_ids)
        logits = T.mul(T.matmul(b_emb, T.swapaxes(t_emb, 0, 1)),
                       T.exp(self.log_inv_temp))
        n = logits.shape[0]
        eye = np.eye(n, dtype=np.float32)
        row_ls = T.logsoftmax_lastdim(logits)
        col_ls = T.logsoftmax_lastdim(T.swapaxes(logits, 0, 1))
        diag_sum = T.add(T.tensor_sum(T.mul(row_ls, Tensor(eye))),
                         T.tensor_sum(T.mul(col_ls, Tensor(eye))))
        return T.scale(diag_sum, -0.5 / n)

    def embed_states(self, sequences, normalizer: Normalizer) -> np.ndarray:
        """List of [T, d] raw state arrays -> [N, e] unit-norm embeddings."""
        batch = np.stack([uniform_downsample(normalizer.states_in(s),
                                             self.cfg.frames)
                          for s in sequences])
        with T.no_grad():
            return self.behavior(batch).data

    def embed_texts(self, texts, vocab) -> np.ndarray:
        ids = np.stack([vocab.tokenize(t, self.cfg.max_text_len) for t in texts])
        with T.no_grad():
            return self.text(ids).data


def train_encoders(train_triplets, vocab, normalizer: Normalizer,
                   state_dim: int, seed: int, cfg: EncoderConfig = None,
                   shuffle_labels: bool = False):
    """Contrastive training, one triplet per behavior per batch.

    shuffle_labels permutes the text/behavior pairing (negative control).
    """
    cfg = cfg or EncoderConfig()
    by_behavior = {}
    for t in train_triplets:
        by_behavior.setdefault(t.behavior_id, []).append(t)
    if len(by_behavior) < 2:
        raise EvalError("contrastive training needs at least two behaviors")
    rng = np.random.default_rng([seed, 11])
    enc = EvalEncoders(np.random.default_rng([seed, 12]), state_dim, len(vocab),
                       cfg)
    opt = Adam(enc.params(), lr=cfg.lr, warmup=50)
    behaviors = sorted(by_behavior)
    for step in range(cfg.steps):
        seqs, token_rows = [], []
        for b in behaviors:
            group = by_behavior[b]
            t = group[int(rng.integers(len(group)))]
            seqs.append(uniform_downsample(normalizer.states_in(t.states),
                                           cfg.frames))
            text = t.texts[int(rng.integers(len(t.texts)))]
            token_rows.append(vocab.tokenize(text, cfg.max_text_len))
        token_rows = np.stack(token_rows)
        if shuffle_labels:
            token_rows = token_rows[rng.permutation(len(token_rows))]
        loss = enc.info_nce(np.stack(seqs), token_rows)
        loss.backward()
        opt.step()
    return enc


def matched_gap(enc: EvalEncoders, triplets, vocab,
                normalizer: Normalizer) -> float:
    """Held-out matched-pair cosine minus mean mismatched cosine."""
    seqs = [t.states for t in triplets]
    texts = [t.texts[0] for t in triplets]
    be = enc.embed_states(seqs, normalizer)
    te = enc.embed_texts(texts, vocab)
    sims = be @ te.T
    n = len(triplets)
    matched = float(np.trace(sims) / n)
    off = (sims.sum() - np.trace(sims)) / (n * n - n)
    return matched - float(off)


# -- retrieval and distribution metrics -------------------------------------


def r_precision(motion_embs: np.ndarray, text_embs: np.ndarray, batch: int,
                rng: np.random.Generator, repeats: int = 20,
                labels=None) -> np.ndarray:
    """Top-1/2/3 retrieval of each sample's own text among `batch`
    candidates (euclidean). With labels, every batch holds one sample per
    distinct label, so candidate texts are distinct."""
    n = len(motion_embs)
    if batch < 2:
        raise EvalError("retrieval batch must be >= 2")
    if batch > n:
        raise EvalError("batch exceeds the number of samples")
    hits = np.zeros(3)
    total = 0
    for _ in range(repeats):
        if labels is None:
            order = rng.permutation(n)
            groups = [order[i:i + batch] for i in range(0, n - batch + 1, batch)]
        else:
            labels_arr = np.asarray(labels)
            uniq = np.unique(labels_arr)
            if len(uniq) != batch:
                raise EvalError("batch must equal the number of distinct labels")
            picks = [rng.choice(np.nonzero(labels_arr == u)[0]) for u in uniq]
            groups = [np.array(picks)]
        for g in groups:
            m = motion_embs[g]
            t = text_embs[g]
            d = np.linalg.norm(m[:, None, :] - t[None, :, :], axis=-1)
            rank = np.argsort(d, axis=1)
            true = np.arange(len(g))[:, None]
            for k in range(3):
                hits[k] += (rank[:, :k + 1] == true).any(axis=1).sum()
            total += len(g)
    return hits / max(total, 1)


def _shrink(cov: np.ndarray, n: int) -> np.ndarray:
    e = cov.shape[0]
    if n >= 2 * e:
        return cov
    ridge = 1e-3 * np.trace(cov) / e + 1e-8
    return cov + ridge * np.eye(e)


def _psd_sqrt(mat: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    vals, vecs = np.linalg.eigh((mat + mat.T) / 2.0)
    if vals.min() < -tol * max(1.0, abs(vals.max())):
        raise EvalError(f"matrix is not PSD (min eigenvalue {vals.min():.3e})")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T

def frechet_from_stats(mu_a, cov_a, mu_b, cov_b) -> float:
    """Frechet distance between two Gaussians given their statistics."""
    mu_a = np.atleast_1d(np.asarray(mu_a, np.float64))
    mu_b = np.atleast_1d(np.asarray(mu_b, np.float64))
    cov_a = np.atleast_2d(np.asarray(cov_a, np.float64))
    cov_b = np.atleast_2d(np.asarray(cov_b, np.float64))
    sa = _psd_sqrt(cov_a)
    inner = _psd_sqrt(sa @ cov_b @ sa)
    diff = mu_a - mu_b
    val = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b)
                - 2.0 * np.trace(inner))
    return max(val, 0.0) if val > -1e-6 else val


def fid(set_a: np.ndarray, set_b: np.ndarray) -> float:
    """Frechet distance between Gaussian fits of two embedding sets."""
    a = np.asarray(set_a, np.float64)
    b = np.asarray(set_b, np.float64)
    mu_a, mu_b = a.mean(0), b.mean(0)
    cov_a = _shrink(np.atleast_2d(np.cov(a, rowvar=False, bias=False)), len(a))
    cov_b = _shrink(np.atleast_2d(np.cov(b, rowvar=False, bias=False)), len(b))
    return frechet_from_stats(mu_a, cov_a, mu_b, cov_b)


def mm_dist(motion_embs: np.ndarray, text_embs: np.ndarray) -> float:
    """Mean euclidean distance over matched pairs."""
    m = np.asarray(motion_embs)
    t = np.asarray(text_embs)
    if m.shape != t.shape:
        raise EvalError("mm_dist needs matched sets of equal shape")
    return float(np.linalg.norm(m - t, axis=1).mean())


def diversity(embs: np.ndarray, rng: np.random.Generator,
              d_pairs: int = 32) -> float:
    """Mean distance over d_pairs random disjoint pairs."""
    n = len(embs)
    pairs = min(d_pairs, n // 2)
    if pairs < 1:
        raise EvalError("diversity needs at least two samples")
    idx = rng.permutation(n)[: 2 * pairs]
    a, b = embs[idx[:pairs]], embs[idx[pairs:]]
    return float(np.linalg.norm(a - b, axis=1).mean())


def mmodality(groups) -> float:
    """Mean pairwise distance within same-text groups, averaged over texts."""
    vals = []
    for g in groups:
        g = np.asarray(g)
        if len(g) < 2:
            raise EvalError("mmodality groups need >= 2 generations")
        d = []
        for i in range(len(g)):
            for j in range(i + 1, len(g)):
                d.append(np.linalg.norm(g[i] - g[j]))
        vals.append(np.mean(d))
    return float(np.mean(vals))


# -- physics metrics ---------------------------------------------------------


def _foot_lowest(states: np.ndarray, view: StateView) -> np.ndarray:
    """Per-frame lowest foot-surface height (m) over both feet."""
    lows = []
    for side in ("l", "r"):
        foot = f"foot_{side}"
        link = view.top.links[view.link_idx[foot]]
        spec = view.top.joints[view.joint_idx[f"ankle_{side}"]]
        ank = states[:, view.p0 + 2 * view.joint_idx[f"ankle_{side}"]:
                     view.p0 + 2 * view.joint_idx[f"ankle_{side}"] + 2]
        cs = view.orient(states, foot)
        h = states[:, view.h]
        for end in (+1.0, -1.0):
            dx = end * link.length / 2.0 - spec.child_anchor[0]
            dy = -spec.child_anchor[1]
            z = h + ank[:, 1] + cs[:, 1] * dx + cs[:, 0] * dy - link.radius
            lows.append(z)
    return np.min(np.stack(lows), axis=0)


def floating(states: np.ndarray, topology, airborne_threshold: float = 0.3):
    """Mean unwanted foot clearance in mm over grounded frames.

    Frames whose clearance exceeds the airborne threshold (jumps) are
    excluded; returns None when no frame qualifies.
    """
    view = StateView(topology)
    clear = np.maximum(_foot_lowest(states, view), 0.0)
    grounded = clear < airborne_threshold
    if not grounded.any():
        return None
    return float(clear[grounded].mean() * 1000.0)


def world_joint_positions(states: np.ndarray, topology) -> np.ndarray:
    """[T, J, 2] world anchor positions; root x is re-integrated from the
    root velocity (observations are root-relative in x)."""
    view = StateView(topology)
    t = len(states)
    root_x = np.concatenate([[0.0], np.cumsum(view.root_vx(states))[:-1] / 30.0])
    out = np.empty((t, topology.n_joints, 2))
    for j, spec in enumerate(topology.joints):
        p = view.anchor(states, spec.name)
        out[:, j, 0] = p[:, 0] + root_x
        out[:, j, 1] = p[:, 1] + states[:, view.h]
    return out


def jerk(states: np.ndarray, topology) -> float:
    """Mean third-difference magnitude of world joint positions,
    mm/frame^3."""
    if len(states) < 4:
        raise EvalError("jerk needs at least four frames")
    pos = world_joint_positions(states, topology) * 1000.0
    d3 = pos[3:] - 3 * pos[2:-1] + 3 * pos[1:-2] - pos[:-3]
    return float(np.linalg.norm(d3, axis=-1).mean())


# -- report -------------------------------------------------------------------


@dataclass
class MetricReport:
    r_top1: float = 0.0
    r_top2: float = 0.0
    r_top3: float = 0.0
    fid: float = 0.0
    mm_dist: float = 0.0
    diversity: float = 0.0
    mmodality: float = 0.0
    floating_mm: float = 0.0
    jerk_mm: float = 0.0
    n_generated: int = 0
    n_reference: int = 0
    batch: int = 0
    half_widths: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "r_precision": {"top1": self.r_top1, "top2": self.r_top2,
                            "top3": self.r_top3, "batch": self.batch},
            "fid": self.fid, "mm_dist": self.mm_dist,
            "diversity": self.diversity, "mmodality": self.mmodality,
            "floating_mm": self.floating_mm, "jerk_mm_frame3": self.jerk_mm,
            "n_generated": self.n_generated, "n_reference": self.n_reference,
            "half_widths": self.half_widths, "extras": self.extras,
        }

    def table(self) -> str:
        hw = self.half_widths
        def pm(name, v, fmt="{:.4f}"):
            s = fmt.format(v)
            if name in hw:
                s += " +/- " + fmt.format(hw[name])
            return s
        rows = [
            ("R-precision top1", pm("top1", self.r_top1)),
            ("R-precision top2", pm("top2", self.r_top2)),
            ("R-precision top3", pm("top3", self.r_top3)),
            ("FID", pm("fid", self.fid)),
            ("MM-Dist", pm("mm_dist", self.mm_dist)),
            ("Diversity", pm("diversity", self.diversity)),
            ("MModality", pm("mmodality", self.mmodality)),
            ("Floating [mm]", pm("floating", self.floating_mm)),
            ("Jerk [mm/frame^3]", pm("jerk", self.jerk_mm, "{:.6f}")),
        ]
        w = max(len(r[0]) for r in rows)
        lines = [f"{name:<{w}}  {val}" for name, val in rows]
        lines.append(f"{'generated/reference':<{w}}  "
                     f"{self.n_generated}/{self.n_reference} (batch {self.batch})")
        return "\n".join(lines)


def bootstrap_half_width(values, rng: np.random.Generator,
                         repeats: int = 1000, conf: float = 0.95) -> float:
    """Half-width of the bootstrap percentile interval of the mean."""
    values = np.asarray(values, np.float64)
    if values.size < 2:
        return 0.0
    means = np.empty(repeats)
    for i in range(repeats):
        means[i] = values[rng.integers(0, len(values), len(values))].mean()
    lo, hi = np.percentile(means, [(1 - conf) / 2 * 100, (1 + conf) / 2 * 100])
    return float((hi - lo) / 2.0)
