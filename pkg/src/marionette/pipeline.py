"""High-level stage functions behind the CLI (and the acceptance tests).

Each stage is deterministic given (config, seed) and consumes/produces
the documented artifact files; the CLI adds argument parsing and run
manifests on top.
"""

from __future__ import annotations

import hashlib
import json
import time

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import Config
from .corpus import (TEMPLATES, Vocabulary, collect, default_behaviors,
                     load_dataset, save_dataset, split_dataset)
from .diffusion import GuidanceConfig, NoiseSchedule
from .evalsuite import (EvalEncoders, MetricReport, bootstrap_half_width,
                        diversity, fid, floating, jerk, matched_gap, mm_dist,
                        mmodality, r_precision, train_encoders)
from .policy import IntentCodec, IntentPolicy, PolicyRuntime, rollout
from .sim import Simulator, default_character
from .training import heldout_recon_mse, train_policy, train_vae
from .vae import IntentVae, Normalizer


def file_digest(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def split_digest(triplets) -> str:
    ids = sorted(f"{t.behavior_id}:{t.seed}" for t in triplets)
    return hashlib.sha256("|".join(ids).encode()).hexdigest()[:16]


# -- stages -------------------------------------------------------------------


def stage_collect(config: Config, seed: int, out_path: str):
    top = default_character()
    scripts = default_behaviors(top)
    sim_cfg = config.sim_config(noise=config.corpus.noise_scale)
    triplets, report = collect(
        scripts, config.corpus.episodes_per_script, seed, top,
        sim_config=sim_cfg, attempt_factor=config.corpus.attempt_factor,
        texts_per_triplet=config.corpus.texts_per_triplet)
    save_dataset(triplets, out_path, max_len=config.corpus.max_text_len)
    return triplets, report


def load_split(config: Config, data_path: str):
    triplets, meta = load_dataset(data_path)
    train, test = split_dataset(triplets, config.corpus.test_fraction,
                                config.corpus.split_seed)
    return triplets, train, test, meta


def stage_train_vae(config: Config, data_path: str, seed: int, out_path: str):
    _, train, test, meta = load_split(config, data_path)
    v = config.vae
    vae, normalizer, _ = train_vae(
        train, seed=seed, state_dim=meta["d"], steps=v.steps, batch=v.batch,
        lr=v.lr, lambda_kl=v.lambda_kl, window=v.window, channels=v.channels,
        latent_dim=v.latent_dim)
    tensors = {f"vae.{k}": p.data for k, p in vae.params().items()}
    tensors.update(normalizer.tensors())
    recon = heldout_recon_mse(vae, normalizer, test if test else train)
    snapshot = config.to_dict()
    snapshot["_meta"] = {"d": meta["d"], "J": meta["J"],
                         "heldout_recon_mse": recon}
    save_checkpoint(out_path, tensors, snapshot)
    return recon


def build_vae_from(tensors: dict, config: Config, state_dim: int) -> IntentVae:
    rng = np.random.default_rng(0)
    vae = IntentVae(rng, state_dim, channels=config.vae.channels,
                    latent_dim=config.vae.latent_dim,
                    res_blocks=config.vae.res_blocks, levels=config.vae.levels)
    vae.load_params({k[len("vae."):]: v for k, v in tensors.items()
                     if k.startswith("vae.")})
    return vae


def stage_train_policy(config: Config, data_path: str, vae_path: str,
                       seed: int, out_path: str, steps: int = None):
    _, train, _, meta = load_split(config, data_path)
    vae_tensors, _ = load_checkpoint(vae_path)
    if not any(k.startswith("vae.") for k in vae_tensors):
        raise ValueError(f"'{vae_path}' does not contain VAE parameters")
    vae = build_vae_from(vae_tensors, config, meta["d"])
    normalizer = Normalizer.from_tensors(vae_tensors)
    vocab = Vocabulary.from_templates()
    pcfg = config.policy_config()
    policy, schedule, history = train_policy(
        train, vae if pcfg.use_vae else None, normalizer, vocab, pcfg,
        seed=seed, steps=steps or config.train.steps, batch=config.train.batch,
        lr=config.train.lr, warmup=config.train.warmup,
        state_dim=meta["d"], action_dim=meta["J"])
    tensors = {k: p.data for k, p in policy.params().items()}
    tensors.update({k: v for k, v in vae_tensors.items()
                    if k.startswith(("vae.", "norm."))})
    snapshot = config.to_dict()
    snapshot["_meta"] = {"d": meta["d"], "J": meta["J"],
                         "final_loss": history[-1][1] if history else None}
    save_checkpoint(out_path, tensors, snapshot)
    return history


class PolicyBundle:
    """Everything needed to run a trained policy."""

    def __init__(self, policy, vae, normalizer, vocab, schedule, config, meta):
        self.policy = policy
        self.vae = vae
        self.normalizer = normalizer
        self.vocab = vocab
        self.schedule = schedule
        self.config = config
        self.meta = meta

    def runtime(self, guidance: GuidanceConfig = None) -> PolicyRuntime:
        top = default_character()
        return PolicyRuntime(self.policy, self.normalizer, self.vocab,
                             self.schedule, top.joint_limits(),
                             guidance=guidance)


def load_policy_bundle(path: str) -> PolicyBundle:
    tensors, snapshot = load_checkpoint(path)
    meta = snapshot.pop("_meta", {})
    config = Config.from_dict(snapshot)
    d, j = int(meta["d"]), int(meta["J"])
    vocab = Vocabulary.from_templates()
    pcfg = config.policy_config()
    vae = build_vae_from(tensors, config, d) if pcfg.use_vae else None
    codec = IntentCodec(vae) if pcfg.use_vae else IntentCodec(None, state_dim=d)
    policy = IntentPolicy(np.random.default_rng(0), d, j, len(vocab), pcfg,
                          codec)
    policy.load_params({k: v for k, v in tensors.items()
                        if not k.startswith(("vae.", "norm."))})
    normalizer = Normalizer.from_tensors(tensors)
    schedule = NoiseSchedule(pcfg.k_max)
    return PolicyBundle(policy, vae, normalizer, vocab, schedule, config, meta)


def generate_rollouts(bundle: PolicyBundle, seed: int, per_behavior: int,
                      n_steps: int, unconditioned: bool = False):
    """One simulator per call; per-behavior rollouts with the canonical
    (first) template so same-text groups support the multimodality metric."""
    config = bundle.config
    top = default_character()
    sim = Simulator(top, config.sim_config())
    guidance = None
    if unconditioned:
        guidance = GuidanceConfig(scale=0.0, drop_prob=1.0)
    runtime = bundle.runtime(guidance)
    rng = np.random.default_rng([seed, 21])
    gens = []
    for behavior in sorted(TEMPLATES):
        text = TEMPLATES[behavior][0]
        for _ in range(per_behavior):
            states, actions, failed = rollout(runtime, text, n_steps, sim, rng)
            gens.append({"behavior": behavior, "text": text, "states": states,
                         "actions": actions, "failed": failed})
    return gens


def stage_eval(config: Config, data_path: str, policy_path: str, seed: int,
               with_uncond_fid: bool = True) -> MetricReport:
    triplets, train, test, meta = load_split(config, data_path)
    bundle = load_policy_bundle(policy_path)
    top = default_character()
    ref_set = test if len(test) >= 4 else triplets
    enc = train_encoders(train, bundle.vocab, bundle.normalizer, meta["d"],
                         seed=seed, cfg=config.encoder_config())
    gens = generate_rollouts(bundle, seed, config.eval.gens_per_behavior,
                             config.eval.rollout_steps)
    ok = [g for g in gens if len(g["states"]) >= config.eval.enc_frames]
    if len(ok) < config.eval.r_batch:
        raise RuntimeError("too few usable rollouts for evaluation")

    be = enc.embed_states([g["states"] for g in ok], bundle.normalizer)
    te = enc.embed_texts([g["text"] for g in ok], bundle.vocab)
    labels = [g["behavior"] for g in ok]
    rng = np.random.default_rng([seed, 31])

    hits = []
    for _ in range(config.eval.repeats):
        tops = r_precision(be, te, config.eval.r_batch, rng, repeats=1,
                           labels=labels)
        hits.append(tops)
    hits = np.asarray(hits)
    tops = hits.mean(axis=0)

    ref_emb = enc.embed_states([t.states for t in ref_set], bundle.normalizer)
    fid_gen = fid(be, ref_emb)
    dist = mm_dist(be, te)
    div = diversity(be, rng, min(config.eval.d_pairs, len(be) // 2))
    groups = {}
    for emb, g in zip(be, ok):
        groups.setdefault((g["behavior"], g["text"]), []).append(emb)
    mmod = mmodality([v for v in groups.values() if len(v) >= 2])

    floats, jerks = [], []
    for g in ok:
        f = floating(g["states"], top, config.eval.airborne_threshold)
        if f is not None:
            floats.append(f)
        jerks.append(jerk(g["states"], top))
    exp_floats, exp_jerks = [], []
    for t in triplets:
        f = floating(t.states, top, config.eval.airborne_threshold)
        if f is not None:
            exp_floats.append(f)
        exp_jerks.append(jerk(t.states, top))

    brng = np.random.default_rng([seed, 41])
    half = {
        "top1": bootstrap_half_width(hits[:, 0], brng, config.eval.bootstrap),
        "top2": bootstrap_half_width(hits[:, 1], brng, config.eval.bootstrap),
        "top3": bootstrap_half_width(hits[:, 2], brng, config.eval.bootstrap),
        "floating": bootstrap_half_width(floats, brng, config.eval.bootstrap),
        "jerk": bootstrap_half_width(jerks, brng, config.eval.bootstrap),
    }
    extras = {
        "expert_floating_mm": float(np.mean(exp_floats)),
        "expert_jerk_mm_frame3": float(np.mean(exp_jerks)),
        "failed_rollouts": int(sum(g["failed"] for g in gens)),
        "split_digest_test": split_digest(test),
        "split_digest_train": split_digest(train),
        "encoder_heldout_gap": matched_gap(enc, ref_set, bundle.vocab,
                                           bundle.normalizer),
        "config_digest": config.digest(),
    }
    if with_uncond_fid:
        ugens = generate_rollouts(bundle, seed, 2, config.eval.rollout_steps,
                                  unconditioned=True)
        uok = [g for g in ugens if len(g["states"]) >= config.eval.enc_frames]
        if len(uok) >= 4:
            ub = enc.embed_states([g["states"] for g in uok],
                                  bundle.normalizer)
            extras["fid_unconditioned"] = fid(ub, ref_emb)

    return MetricReport(
        r_top1=float(tops[0]), r_top2=float(tops[1]), r_top3=float(tops[2]),
        fid=float(fid_gen), mm_dist=dist, diversity=div, mmodality=mmod,
        floating_mm=float(np.mean(floats)) if floats else float("nan"),
        jerk_mm=float(np.mean(jerks)),
        n_generated=len(ok), n_reference=len(ref_set),
        batch=config.eval.r_batch, half_widths=half, extras=extras)


def write_manifest(path: str, command: str, config: Config, seed: int,
                   inputs: dict, outputs: dict, started: float) -> None:
    doc = {
        "command": command,
        "config_digest": config.digest(),
        "seed": seed,
        "inputs": {k: file_digest(v) for k, v in inputs.items()},
        "outputs": {k: file_digest(v) for k, v in outputs.items()},
        "wall_time_s": round(time.time() - started, 3),
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
