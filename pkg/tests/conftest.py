import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))


@pytest.fixture(scope="session")
def mini_artifacts(tmp_path_factory):
    """A tiny end-to-end artifact chain (dataset, VAE, policy checkpoint)
    built through the real pipeline stages with a shrunken config; shared
    by the serve/CLI integration tests."""
    from marionette.config import Config
    from marionette.pipeline import (stage_collect, stage_train_policy,
                                     stage_train_vae)

    root = tmp_path_factory.mktemp("mini")
    cfg = Config.from_dict({
        "corpus": {"episodes_per_script": 2, "attempt_factor": 4},
        "vae": {"steps": 150, "channels": 16, "latent_dim": 8},
        "model": {"width": 32, "blocks": 1},
        "train": {"steps": 40, "batch": 8, "warmup": 10},
        "diffusion": {"sample_steps": 4},
        "eval": {"enc_steps": 120, "gens_per_behavior": 1,
                 "rollout_steps": 40, "repeats": 20, "bootstrap": 100},
        "serve": {"realtime": False, "sample_steps": 3},
    })
    cfg_path = root / "config.yaml"
    cfg.save(str(cfg_path))
    data = root / "data.mindds"
    vae_ck = root / "vae.mindck"
    policy_ck = root / "policy.mindck"
    stage_collect(cfg, 7, str(data))
    stage_train_vae(cfg, str(data), 7, str(vae_ck))
    stage_train_policy(cfg, str(data), str(vae_ck), 7, str(policy_ck))
    return {"config": cfg, "config_path": str(cfg_path), "data": str(data),
            "vae": str(vae_ck), "policy": str(policy_ck), "root": root}
