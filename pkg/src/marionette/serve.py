"""Live control service: one websocket connection = one isolated session.

Protocol (UTF-8 JSON, one document per message):

    client -> server: {"type": "command", "text": ...}
                      {"type": "reset", "pose": "neutral_stand"}
                      {"type": "pause"} / {"type": "resume"}
                      {"type": "set_seed", "seed": 7}
    server -> client: {"type": "hello", "topology": {...}}
                      {"type": "frame", "t", "link_poses", "root_h",
                       "jerk_window", "floating_window"}
                      {"type": "ack", "for": ...}
                      {"type": "error", "message": ...}

Frames stream at the control rate; command changes take effect at the
next chunk boundary. Malformed messages produce an error frame but keep
the connection; a diverged simulation resets automatically.
"""

from __future__ import annotations

import asyncio
import json
from collections import deque

import numpy as np

from .config import Config
from .diffusion import GuidanceConfig
from .evalsuite import floating, jerk
from .pipeline import load_policy_bundle
from .sim import Simulator, default_character, observe

DEFAULT_COMMAND = "a person stands still"


def topology_doc(top) -> dict:
    return {
        "links": [{"name": l.name, "length": l.length, "radius": l.radius}
                  for l in top.links],
        "joints": [{"name": j.name, "parent": j.parent, "child": j.child}
                   for j in top.joints],
        "root": top.root,
        "foot_links": list(top.foot_links),
        "standing_root_height": top.standing_root_height(),
    }


class Session:
    """Simulation plus policy state for a single connection."""

    def __init__(self, bundle, config: Config, session_seed: int):
        self.config = config
        self.top = default_character()
        self.sim = Simulator(self.top, config.sim_config())
        guidance = GuidanceConfig(scale=config.diffusion.w,
                                  drop_prob=config.diffusion.drop_prob)
        self.runtime = bundle.runtime(guidance)
        self.runtime.cfg.sample_steps = config.serve.sample_steps
        self.rng = np.random.default_rng(session_seed)
        self.horizon = self.runtime.cfg.action_horizon
        self.window = deque(maxlen=30)
        self.t = 0
        self.paused = False
        self.pending_command = DEFAULT_COMMAND
        self.chunk = None
        self.phase = 0
        self.steps_per_frame = max(1, round(1.0 / (30.0 * self.sim.cfg.dt)))
        self.reset("neutral_stand")

    def reset(self, pose: str) -> None:
        # keep the active (or still pending) command across resets
        keep = self.runtime.command_text or self.pending_command
        self.state = self.sim.reset(pose)
        self.runtime.reset_session()
        obs = observe(self.state, self.top)
        self.runtime.push_state(obs)
        self.window.clear()
        self.window.append(obs)
        self.pending_command = keep or DEFAULT_COMMAND
        self.chunk = None
        self.phase = 0

    def set_seed(self, seed: int) -> None:
        self.rng = np.random.default_rng(int(seed))

    def queue_command(self, text: str) -> None:
        self.pending_command = text

    def metrics(self) -> dict:
        rows = np.array(self.window, np.float32)
        out = {"jerk_window": None, "floating_window": None}
        if len(rows) >= 4:
            out["jerk_window"] = jerk(rows, self.top)
        f = floating(rows, self.top, self.config.eval.airborne_threshold)
        out["floating_window"] = f
        return out

    def step_frame(self) -> dict:
        """Advance one control step; returns the frame document."""
        if self.phase == 0:
            if self.pending_command is not None:
                self.runtime.set_command(self.pending_command, self.rng)
                self.pending_command = None
            if self.runtime.policy.iip is not None:
                self.runtime.infer_immediate(self.rng)
            self.chunk = self.runtime.infer_actions(self.rng)
        action = self.chunk[self.phase]
        self.phase = (self.phase + 1) % self.horizon
        try:
            for _ in range(self.steps_per_frame):
                self.state = self.sim.step(self.state, action, rng=self.rng)
        except Exception:
            self.reset("neutral_stand")
            raise
        obs = observe(self.state, self.top)
        self.runtime.push_state(obs)
        self.window.append(obs)
        doc = {
            "type": "frame",
            "t": self.t,
            "link_poses": [[round(float(x), 5) for x in row]
                           for row in self.state.pos],
            "root_h": float(self.state.pos[self.top.root_index, 1]),
        }
        doc.update(self.metrics())
        self.t += 1
        return doc


async def _drain(queue: asyncio.Queue, session: Session, ws) -> None:
    while not queue.empty():
        raw = queue.get_nowait()
        try:
            msg = json.loads(raw)
            kind = msg["type"]
        except Exception:
            await ws.send(json.dumps({"type": "error",
                                      "message": "malformed message"}))
            continue
        try:
            if kind == "command":
                session.queue_command(str(msg["text"]))
            elif kind == "reset":
                session.reset(str(msg.get("pose", "neutral_stand")))
            elif kind == "pause":
                session.paused = True
            elif kind == "resume":
                session.paused = False
            elif kind == "set_seed":
                session.set_seed(int(msg["seed"]))
            else:
                raise ValueError(f"unknown message type '{kind}'")
            await ws.send(json.dumps({"type": "ack", "for": kind}))
        except Exception as exc:
            await ws.send(json.dumps({"type": "error", "message": str(exc)}))


def make_handler(bundle, config: Config):
    counter = {"n": 0}

    async def handler(ws):
        counter["n"] += 1
        session = Session(bundle, config, session_seed=counter["n"])
        await ws.send(json.dumps({"type": "hello",
                                  "topology": topology_doc(session.top)}))
        queue: asyncio.Queue = asyncio.Queue()

        async def reader():
            try:
                async for raw in ws:
                    await queue.put(raw)
            except Exception:
                pass

        reader_task = asyncio.create_task(reader())
        interval = 1.0 / config.serve.fps
        loop = asyncio.get_event_loop()
        next_t = loop.time()
        try:
            while not reader_task.done():
                await _drain(queue, session, ws)
                if session.paused:
                    await asyncio.sleep(interval)
                    next_t = loop.time()
                    continue
                try:
                    frame = await asyncio.to_thread(session.step_frame)
                except Exception as exc:
                    await ws.send(json.dumps(
                        {"type": "error",
                         "message": f"simulation reset: {exc}"}))
                    continue
                await ws.send(json.dumps(frame))
                if config.serve.realtime:
                    next_t += interval
                    delay = next_t - loop.time()
                    if delay > 0:
                        await asyncio.sleep(delay)
                    else:
                        next_t = loop.time()
                else:
                    await asyncio.sleep(0)
        except Exception:
            pass
        finally:
            reader_task.cancel()

    return handler


async def start_server(config: Config, policy_path: str, host: str = None,
                       port: int = None):
    """Returns the websockets server object (async context)."""
    import websockets

    bundle = load_policy_bundle(policy_path)
    handler = make_handler(bundle, config)
    return await websockets.serve(handler, host or config.serve.host,
                                  port or config.serve.port, max_queue=64)


def serve_forever(config: Config, policy_path: str, host: str = None,
                  port: int = None) -> None:
    async def run():
        server = await start_server(config, policy_path, host, port)
        print(f"serving on ws://{host or config.serve.host}:"
              f"{port or config.serve.port}")
        await asyncio.Future()

    asyncio.run(run())
