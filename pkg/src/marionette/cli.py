"""Command-line entry points for the full pipeline.

Stages depend on each other's artifacts: collect -> train-vae -> train ->
eval / rollout / serve. Every command writes a run manifest next to its
output; identical config+seed reruns produce byte-identical artifacts
(manifests carry wall time and are not artifacts).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from .config import Config
from .corpus import Triplet, audit_template_overlap, load_dataset, save_dataset
from .pipeline import (PolicyBundle, file_digest, load_policy_bundle,
                       stage_collect, stage_eval, stage_train_policy,
                       stage_train_vae, write_manifest, generate_rollouts)
from .sim import Simulator, default_character
from .policy import rollout as run_rollout


def _load_config(path: str) -> Config:
    return Config.load(path) if path else Config()


def _require(path: str, producer: str) -> None:
    if not path or not os.path.exists(path):
        raise SystemExit(f"error: missing artifact '{path}'; run {producer} first")


def cmd_collect(args) -> None:
    config = _load_config(args.config)
    started = time.time()
    triplets, report = stage_collect(config, args.seed, args.out)
    print(report.summary())
    print(f"wrote {len(triplets)} triplets to {args.out}")
    write_manifest(args.out + ".manifest.json", "collect", config, args.seed,
                   {}, {"dataset": args.out}, started)


def cmd_train_vae(args) -> None:
    config = _load_config(args.config)
    _require(args.data, "collect")
    started = time.time()
    recon = stage_train_vae(config, args.data, args.seed, args.out)
    print(f"held-out reconstruction mse: {recon:.4f}")
    write_manifest(args.out + ".manifest.json", "train-vae", config, args.seed,
                   {"dataset": args.data}, {"checkpoint": args.out}, started)


def cmd_train(args) -> None:
    config = _load_config(args.config)
    _require(args.data, "collect")
    _require(args.vae, "train-vae")
    started = time.time()
    history = stage_train_policy(config, args.data, args.vae, args.seed,
                                 args.out, steps=args.steps)
    if history:
        print(f"final loss: {history[-1][1]:.4f}")
    write_manifest(args.out + ".manifest.json", "train", config, args.seed,
                   {"dataset": args.data, "vae": args.vae},
                   {"checkpoint": args.out}, started)


def cmd_eval(args) -> None:
    config = _load_config(args.config)
    _require(args.data, "collect")
    _require(args.policy, "train")
    started = time.time()
    report = stage_eval(config, args.data, args.policy, args.seed)
    doc = report.to_dict()
    with open(args.out, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
    print(report.table())
    write_manifest(args.out + ".manifest.json", "eval", config, args.seed,
                   {"dataset": args.data, "policy": args.policy},
                   {"metrics": args.out}, started)


def cmd_rollout(args) -> None:
    config = _load_config(args.config)
    _require(args.policy, "train")
    started = time.time()
    bundle = load_policy_bundle(args.policy)
    top = default_character()
    sim = Simulator(top, config.sim_config())
    runtime = bundle.runtime()
    rng = np.random.default_rng(args.seed)
    states, actions, failed = run_rollout(runtime, args.command, args.steps,
                                          sim, rng)
    if failed:
        print("warning: simulation diverged; trajectory truncated",
              file=sys.stderr)
    if len(states) == 0:
        raise SystemExit("error: empty trajectory")
    t = Triplet(states, actions, (args.command,), "rollout", args.seed)
    save_dataset([t], args.out, max_len=config.corpus.max_text_len)
    print(f"wrote {len(states)} frames to {args.out}")
    write_manifest(args.out + ".manifest.json", "rollout", config, args.seed,
                   {"policy": args.policy}, {"trajectory": args.out}, started)


def cmd_serve(args) -> None:
    config = _load_config(args.config)
    _require(args.policy, "train")
    from .serve import serve_forever
    serve_forever(config, args.policy, host=args.host or config.serve.host,
                  port=args.port or config.serve.port)


def cmd_report(args) -> None:
    if args.metrics:
        with open(args.metrics) as f:
            doc = json.load(f)
        width = max(len(k) for k in doc)
        for key, val in sorted(doc.items()):
            print(f"{key:<{width}}  {val}")
    if args.data:
        triplets, meta = load_dataset(args.data)
        counts = {}
        frames = {}
        for t in triplets:
            counts[t.behavior_id] = counts.get(t.behavior_id, 0) + 1
            frames[t.behavior_id] = frames.get(t.behavior_id, 0) + t.frames
        print(f"dataset: {len(triplets)} triplets, d={meta['d']} J={meta['J']}, "
              f"{meta['total_frames']} frames")
        for b in sorted(counts):
            print(f"  {b:<18} {counts[b]:3d} triplets {frames[b]:6d} frames")
        print("template word-set overlap (jaccard):")
        overlaps = audit_template_overlap()
        worst = sorted(overlaps.items(), key=lambda kv: -kv[1])[:5]
        for (a, b), v in worst:
            print(f"  {a} / {b}: {v:.2f}")
        if not args.metrics and max(overlaps.values()) >= 1.0:
            raise SystemExit("error: two behaviors share identical word sets")


def main(argv=None) -> None:
    p = argparse.ArgumentParser(prog="marionette",
                                description="text-driven planar character "
                                            "control stack")
    sub = p.add_subparsers(dest="cmd", required=True)

    def common(sp, out=True):
        sp.add_argument("--config", help="YAML config file (defaults apply)")
        sp.add_argument("--seed", type=int, default=0)
        if out:
            sp.add_argument("--out", required=True)

    sp = sub.add_parser("collect", help="run scripted experts, keep successes")
    common(sp)
    sp.set_defaults(fn=cmd_collect)

    sp = sub.add_parser("train-vae", help="train the state-sequence VAE")
    common(sp)
    sp.add_argument("--data", required=True)
    sp.set_defaults(fn=cmd_train_vae)

    sp = sub.add_parser("train", help="train the three denoisers jointly")
    common(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--vae", required=True)
    sp.add_argument("--steps", type=int, help="override train.steps")
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("eval", help="rollout + metric suite")
    common(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--policy", required=True)
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("rollout", help="roll out one command")
    common(sp)
    sp.add_argument("--policy", required=True)
    sp.add_argument("--command", required=True)
    sp.add_argument("--steps", type=int, default=120)
    sp.set_defaults(fn=cmd_rollout)

    sp = sub.add_parser("serve", help="live control websocket service")
    common(sp, out=False)
    sp.add_argument("--policy", required=True)
    sp.add_argument("--host")
    sp.add_argument("--port", type=int)
    sp.set_defaults(fn=cmd_serve)

    sp = sub.add_parser("report", help="render metrics or audit a dataset")
    sp.add_argument("--metrics")
    sp.add_argument("--data")
    sp.set_defaults(fn=cmd_report)

    args = p.parse_args(argv)
    args.fn(args)


if __name__ == "__main__":
    main()
