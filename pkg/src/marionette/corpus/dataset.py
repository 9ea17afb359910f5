"""Expert corpus: success-filtered collection, binary persistence, split.

File layout (all little-endian):

    magic "MINDDS1" | u8 version | u32 n_triplets | u32 d | u32 J
    | u32 max_len | u64 total_frames | records... | u32 crc32

Each record: u32 T | u32 n_texts | u64 seed | u16 len + behavior utf-8
| T*d f32 states | T*J f32 actions | per text: u32 len + utf-8 bytes.
The trailing CRC covers every preceding byte.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from ..sim.engine import SimConfig, Simulator, SimulationDiverged
from ..sim.observe import observe
from ..sim.topology import CharacterTopology
from .behaviors import BehaviorScript
from .text import annotate

MAGIC = b"MINDDS1"
VERSION = 1
DEFAULT_MAX_LEN = 12


class CollectionFailed(RuntimeError):
    def __init__(self, behavior: str, attempts: int):
        super().__init__(
            f"no successful episodes for '{behavior}' after {attempts} attempts")
        self.behavior = behavior


class DatasetFormatError(IOError):
    pass


@dataclass
class Triplet:
    states: np.ndarray            # [T, d] float32; row t precedes action t
    actions: np.ndarray           # [T, J] float32; action t produces state t+1
    texts: tuple                  # >= 1 annotation strings
    behavior_id: str
    seed: int

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float32)
        self.actions = np.asarray(self.actions, dtype=np.float32)
        if len(self.states) != len(self.actions):
            raise ValueError("states and actions must have equal length")
        if not self.texts:
            raise ValueError("a triplet needs at least one text annotation")

    @property
    def frames(self) -> int:
        return len(self.states)


@dataclass
class CollectionReport:
    attempts: dict = field(default_factory=dict)     # behavior -> tried
    kept: dict = field(default_factory=dict)         # behavior -> kept
    failures: dict = field(default_factory=dict)     # behavior -> rejected

    def summary(self) -> str:
        lines = ["behavior            kept  attempts"]
        for b in self.attempts:
            lines.append(f"{b:18s} {self.kept.get(b, 0):5d} {self.attempts[b]:8d}")
        return "\n".join(lines)


def _episode_rng(seed: int, script_index: int, attempt: int) -> np.random.Generator:
    return np.random.default_rng([seed, script_index, attempt])


def run_episode(sim: Simulator, script: BehaviorScript,
                rng: np.random.Generator, pose_jitter: float = 0.01):
    """Roll one scripted episode at 30 Hz; returns (states, actions)."""
    top = sim.top
    gen = script.make_targets(rng)
    jitter = rng.normal(0.0, pose_jitter, top.n_joints)
    jitter = np.clip(jitter, [j.lo for j in top.joints], [j.hi for j in top.joints])
    state = sim.assemble(jitter)
    steps_per_frame = max(1, round(1.0 / (30.0 * sim.cfg.dt)))
    states, actions = [], []
    for t in range(script.duration):
        a = np.asarray(gen(t), dtype=np.float64)
        states.append(observe(state, top))
        actions.append(a.astype(np.float32))
        for _ in range(steps_per_frame):
            state = sim.step(state, a, rng=rng)
    return np.array(states, np.float32), np.array(actions, np.float32)


def collect(scripts, episodes_per_script: int, seed: int,
            topology: CharacterTopology, sim_config: SimConfig = None,
            attempt_factor: int = 6, texts_per_triplet: int = 2):
    """Success-filtered expert collection.

    Attempts episodes per script until `episodes_per_script` pass their
    predicate (or the attempt budget runs out); a script with zero
    successes raises CollectionFailed. Deterministic given the seed.
    """
    if not scripts:
        raise ValueError("no scripts given")
    sim_config = sim_config or SimConfig(noise_scale=0.1)
    sim = Simulator(topology, sim_config)
    triplets = []
    report = CollectionReport()
    for si, script in enumerate(scripts):
        kept = 0
        attempts = 0
        budget = episodes_per_script * attempt_factor
        while kept < episodes_per_script and attempts < budget:
            rng = _episode_rng(seed, si, attempts)
            attempts += 1
            try:
                states, actions = run_episode(sim, script, rng)
            except SimulationDiverged:
                continue
            if not script.success(states, actions, topology):
                continue
            n = min(texts_per_triplet, len({t for t in _behavior_texts(script)}))
            texts = _sample_texts(script.behavior_id, rng, n)
            triplets.append(Triplet(states, actions, texts,
                                    script.behavior_id, attempts - 1))
            kept += 1
        report.attempts[script.behavior_id] = attempts
        report.kept[script.behavior_id] = kept
        report.failures[script.behavior_id] = attempts - kept
        if kept == 0:
            raise CollectionFailed(script.behavior_id, attempts)
    return triplets, report


def _behavior_texts(script):
    from .text import TEMPLATES
    return TEMPLATES.get(script.behavior_id, ["(unknown)"])


def _sample_texts(behavior_id: str, rng: np.random.Generator, n: int) -> tuple:
    texts = []
    while len(texts) < max(1, n):
        t = annotate(behavior_id, rng)
        if t not in texts:
            texts.append(t)
    return tuple(texts)


# -- persistence -----------------------------------------------------------


def save_dataset(triplets, path: str, max_len: int = DEFAULT_MAX_LEN) -> None:
    if not triplets:
        raise ValueError("refusing to save an empty dataset")
    d = triplets[0].states.shape[1]
    j = triplets[0].actions.shape[1]
    total = sum(t.frames for t in triplets)
    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<B", VERSION)
    buf += struct.pack("<IIIIQ", len(triplets), d, j, max_len, total)
    for t in triplets:
        if t.states.shape[1] != d or t.actions.shape[1] != j:
            raise ValueError("inconsistent state/action widths in dataset")
        b = t.behavior_id.encode("utf-8")
        buf += struct.pack("<IIQH", t.frames, len(t.texts), t.seed, len(b))
        buf += b
        buf += t.states.astype("<f4").tobytes()
        buf += t.actions.astype("<f4").tobytes()
        for text in t.texts:
            tb = text.encode("utf-8")
            buf += struct.pack("<I", len(tb))
            buf += tb
    buf += struct.pack("<I", zlib.crc32(bytes(buf)))
    with open(path, "wb") as f:
        f.write(buf)


def load_dataset(path: str):
    """Returns (triplets, meta dict). Verifies magic, version, CRC."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < len(MAGIC) + 1 + 24 + 4:
        raise DatasetFormatError("file truncated")
    if raw[:len(MAGIC)] != MAGIC:
        raise DatasetFormatError("bad magic bytes")
    (crc,) = struct.unpack("<I", raw[-4:])
    if zlib.crc32(raw[:-4]) != crc:
        raise DatasetFormatError("checksum mismatch")
    off = len(MAGIC)
    (version,) = struct.unpack_from("<B", raw, off); off += 1
    if version != VERSION:
        raise DatasetFormatError(f"unsupported version {version}")
    n, d, j, max_len, total = struct.unpack_from("<IIIIQ", raw, off); off += 24
    triplets = []
    for _ in range(n):
        frames, n_texts, seed, blen = struct.unpack_from("<IIQH", raw, off)
        off += 18
        behavior = raw[off:off + blen].decode("utf-8"); off += blen
        sbytes = frames * d * 4
        states = np.frombuffer(raw, dtype="<f4", count=frames * d,
                               offset=off).reshape(frames, d).copy()
        off += sbytes
        actions = np.frombuffer(raw, dtype="<f4", count=frames * j,
                                offset=off).reshape(frames, j).copy()
        off += frames * j * 4
        texts = []
        for _ in range(n_texts):
            (tlen,) = struct.unpack_from("<I", raw, off); off += 4
            texts.append(raw[off:off + tlen].decode("utf-8")); off += tlen
        triplets.append(Triplet(states, actions, tuple(texts), behavior, seed))
    if sum(t.frames for t in triplets) != total:
        raise DatasetFormatError("frame-count header disagrees with records")
    meta = {"d": d, "J": j, "max_len": max_len, "total_frames": total}
    return triplets, meta


def split_dataset(triplets, test_fraction: float = 0.1, split_seed: int = 9):
    """Deterministic disjoint train/test split by hash of (behavior, seed)."""
    train, test = [], []
    thresh = int(test_fraction * 100)
    for t in triplets:
        h = zlib.crc32(f"{t.behavior_id}:{t.seed}:{split_seed}".encode())
        (test if h % 100 < thresh else train).append(t)
    return train, test


def recheck(triplets, scripts, topology: CharacterTopology) -> bool:
    """Re-run every stored triplet's success predicate (post-load audit)."""
    by_id = {s.behavior_id: s for s in scripts}
    for t in triplets:
        script = by_id.get(t.behavior_id)
        if script is None or not script.success(t.states, t.actions, topology):
            return False
    return True
