"""Hierarchical run configuration with strict key validation.

Every stage reads one Config; unknown keys are rejected so typos fail
loudly. Defaults reproduce the desk-scale setup end to end.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

import yaml


class ConfigError(ValueError):
    pass


@dataclass
class SimSection:
    dt: float = 1.0 / 60.0
    substeps: int = 8
    gravity: float = 9.81
    solver_iters: int = 8
    position_iters: int = 4
    kp: float = 60.0
    kd_scale: float = 1.0
    max_torque: float = 150.0
    friction: float = 0.9
    baumgarte: float = 0.2
    contact_slop: float = 0.002
    contact_margin: float = 0.005
    noise_scale: float = 0.0


@dataclass
class CorpusSection:
    episodes_per_script: int = 12
    noise_scale: float = 0.1
    pose_jitter: float = 0.01
    attempt_factor: int = 6
    texts_per_triplet: int = 2
    test_fraction: float = 0.1
    split_seed: int = 9
    max_text_len: int = 12


@dataclass
class VaeSection:
    channels: int = 64
    latent_dim: int = 32
    res_blocks: int = 2
    levels: int = 2
    lambda_kl: float = 1e-5
    steps: int = 1500
    batch: int = 16
    lr: float = 2e-4
    window: int = 16


@dataclass
class DiffusionSection:
    K: int = 50
    sampler: str = "ddim"
    sample_steps: int = 10
    w: float = 3.5
    drop_prob: float = 0.1


@dataclass
class ModelSection:
    width: int = 128
    blocks: int = 3
    heads: int = 4
    conditioning_mode: str = "cross_attention_tokens"
    use_hip: bool = True
    use_iip: bool = True
    use_vae: bool = True


@dataclass
class PolicySection:
    h: int = 16
    L: int = 16
    action_horizon: int = 4
    holistic_frames: int = 16


@dataclass
class TrainSection:
    steps: int = 3000
    batch: int = 16
    lr: float = 2e-4
    warmup: int = 500


@dataclass
class EvalSection:
    embed_dim: int = 32
    enc_width: int = 64
    enc_layers: int = 2
    enc_steps: int = 700
    enc_frames: int = 16
    r_batch: int = 8
    d_pairs: int = 32
    mmodality_m: int = 4
    gens_per_behavior: int = 4
    rollout_steps: int = 90
    bootstrap: int = 1000
    airborne_threshold: float = 0.3
    repeats: int = 100


@dataclass
class ServeSection:
    host: str = "127.0.0.1"
    port: int = 8765
    fps: float = 30.0
    sample_steps: int = 6
    realtime: bool = True


@dataclass
class Config:
    sim: SimSection = field(default_factory=SimSection)
    corpus: CorpusSection = field(default_factory=CorpusSection)
    vae: VaeSection = field(default_factory=VaeSection)
    diffusion: DiffusionSection = field(default_factory=DiffusionSection)
    model: ModelSection = field(default_factory=ModelSection)
    policy: PolicySection = field(default_factory=PolicySection)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)
    serve: ServeSection = field(default_factory=ServeSection)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "Config":
        if data is None:
            return cls()
        cfg = cls()
        known = {f.name: f for f in dataclasses.fields(cls)}
        for section, values in data.items():
            if section not in known:
                raise ConfigError(f"unknown config section '{section}'")
            target = getattr(cfg, section)
            fields = {f.name: f for f in dataclasses.fields(target)}
            if not isinstance(values, dict):
                raise ConfigError(f"section '{section}' must be a mapping")
            for key, val in values.items():
                if key not in fields:
                    raise ConfigError(f"unknown key '{section}.{key}'")
                current = getattr(target, key)
                if isinstance(current, bool):
                    if not isinstance(val, bool):
                        raise ConfigError(f"'{section}.{key}' must be a boolean")
                    setattr(target, key, val)
                elif isinstance(current, int) and not isinstance(val, bool):
                    setattr(target, key, int(val))
                elif isinstance(current, float):
                    setattr(target, key, float(val))
                elif isinstance(current, str):
                    setattr(target, key, str(val))
                else:
                    raise ConfigError(f"'{section}.{key}' has unsupported type")
        return cfg

    @classmethod
    def load(cls, path: str) -> "Config":
        with open(path) as f:
            return cls.from_dict(yaml.safe_load(f))

    def save(self, path: str) -> None:
        with open(path, "w") as f:
            yaml.safe_dump(self.to_dict(), f, sort_keys=True)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    # -- bridges into the module-level configs ------------------------------

    def sim_config(self, noise: float = None):
        from .sim.engine import SimConfig
        s = self.sim
        return SimConfig(dt=s.dt, substeps=s.substeps, gravity=s.gravity,
                         solver_iters=s.solver_iters,
                         position_iters=s.position_iters, kp=s.kp,
                         kd_scale=s.kd_scale, max_torque=s.max_torque,
                         friction=s.friction, baumgarte=s.baumgarte,
                         contact_slop=s.contact_slop,
                         contact_margin=s.contact_margin,
                         noise_scale=s.noise_scale if noise is None else noise)

    def policy_config(self):
        from .policy import PolicyConfig
        return PolicyConfig(
            width=self.model.width, blocks=self.model.blocks,
            heads=self.model.heads,
            conditioning_mode=self.model.conditioning_mode,
            use_vae=self.model.use_vae, use_hip=self.model.use_hip,
            use_iip=self.model.use_iip, history=self.policy.h,
            immediate=self.policy.L,
            action_horizon=self.policy.action_horizon,
            holistic_frames=self.policy.holistic_frames,
            latent_dim=self.vae.latent_dim, k_max=self.diffusion.K,
            sampler=self.diffusion.sampler,
            sample_steps=self.diffusion.sample_steps,
            guidance=self.diffusion.w, drop_prob=self.diffusion.drop_prob,
            max_text_len=self.corpus.max_text_len)

    def encoder_config(self):
        from .evalsuite import EncoderConfig
        e = self.eval
        return EncoderConfig(embed_dim=e.embed_dim, width=e.enc_width,
                             layers=e.enc_layers, steps=e.enc_steps,
                             frames=e.enc_frames,
                             max_text_len=self.corpus.max_text_len)
