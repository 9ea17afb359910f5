"""Scripted expert controllers, one per behavior.

Each behavior instantiates a per-episode target generator from an rng
(phase/amplitude jitter makes episodes distinct) plus a success
predicate over the recorded observation rows; only passing episodes are
kept. The constants below were tuned in simulation: the puppet balances
on a narrow margin, so crouch mixes keep the center of mass over the
feet (knee/ankle ratio), jumps land into a held crouch instead of
standing back up, and the kick counterswings the arms to absorb the leg
reaction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..sim.topology import CharacterTopology

CONTROL_HZ = 30.0

# joint order in the default character
WAIST, SH_L, SH_R, HIP_L, HIP_R, KNEE_L, KNEE_R, ANK_L, ANK_R = range(9)


@dataclass
class BehaviorScript:
    behavior_id: str
    duration: int                 # control frames
    make_targets: "callable"      # rng -> (frame -> target vector [J])
    success: "callable"           # (states [T,d], actions [T,J], topology) -> bool


class StateView:
    """Index helper over the flattened observation layout."""

    def __init__(self, top: CharacterTopology):
        self.top = top
        nj, nl = top.n_joints, top.n_links
        self.h = 0
        self.p0 = 1
        self.r0 = 1 + 2 * nj
        self.v0 = self.r0 + 2 * nl
        self.w0 = self.v0 + 2 * nl
        self.joint_idx = {j.name: i for i, j in enumerate(top.joints)}
        self.link_idx = top.link_index

    def root_height(self, states: np.ndarray) -> np.ndarray:
        return states[:, self.h]

    def anchor(self, states: np.ndarray, joint: str) -> np.ndarray:
        """Root-relative (x, z) of a joint anchor, per frame."""
        k = self.p0 + 2 * self.joint_idx[joint]
        return states[:, k:k + 2]

    def orient(self, states: np.ndarray, link: str) -> np.ndarray:
        """(cos, sin) of a link, per frame."""
        k = self.r0 + 2 * self.link_idx[link]
        return states[:, k:k + 2]

    def root_vx(self, states: np.ndarray) -> np.ndarray:
        k = self.v0 + 2 * self.top.root_index
        return states[:, k]

    def hand_height(self, states: np.ndarray, side: str) -> np.ndarray:
        """Absolute z of the hand (arm distal end)."""
        arm = f"arm_{side}"
        link = self.top.links[self.link_idx[arm]]
        sh = self.anchor(states, f"shoulder_{side}")
        cs = self.orient(states, arm)
        rel_z = sh[:, 1] + link.length * cs[:, 1]
        return states[:, self.h] + rel_z

    def shoulder_height(self, states: np.ndarray, side: str) -> np.ndarray:
        return states[:, self.h] + self.anchor(states, f"shoulder_{side}")[:, 1]

    def toe_height(self, states: np.ndarray, side: str) -> np.ndarray:
        """Absolute z of the foot tip."""
        foot = f"foot_{side}"
        link = self.top.links[self.link_idx[foot]]
        spec = self.top.joints[self.joint_idx[f"ankle_{side}"]]
        ank = self.anchor(states, f"ankle_{side}")
        cs = self.orient(states, foot)
        dx = link.length / 2.0 - spec.child_anchor[0]
        dy = -spec.child_anchor[1]
        rel_z = ank[:, 1] + cs[:, 1] * dx + cs[:, 0] * dy
        return states[:, self.h] + rel_z

    def displacement(self, states: np.ndarray) -> float:
        """Forward travel integrated from root velocity."""
        return float(self.root_vx(states).sum() / CONTROL_HZ)


def _no_fall(view: StateView, states: np.ndarray, frac: float = 0.4) -> bool:
    standing = view.top.standing_root_height()
    return bool((view.root_height(states) > frac * standing).all())


def crouch_mix(a: np.ndarray, phase: float, depth: float) -> None:
    """Balanced crouch: the knee/ankle ratio keeps the CoM over the feet."""
    a[HIP_L] = a[HIP_R] = 0.7 * depth * phase
    a[KNEE_L] = a[KNEE_R] = -1.5 * depth * phase
    a[ANK_L] = a[ANK_R] = 0.75 * depth * phase
    a[WAIST] = -0.35 * depth * phase


def default_behaviors(top: CharacterTopology) -> list:
    """The eight scripted behaviors for the default character."""
    view = StateView(top)
    standing = top.standing_root_height()
    J = top.n_joints

    # -- stand -------------------------------------------------------------
    def stand_targets(rng):
        lean = rng.uniform(-0.02, 0.02)

        def gen(t):
            a = np.zeros(J)
            a[WAIST] = lean
            return a
        return gen

    def stand_ok(states, actions, _topo):
        h = view.root_height(states)
        return _no_fall(view, states) and float(np.ptp(h)) < 0.03

    # -- walk: a few quick steps with a forward ankle bias -------------------
    def walk_targets(rng):
        freq = rng.uniform(0.75, 0.9)
        amp = rng.uniform(0.17, 0.19)
        ab = rng.uniform(0.09, 0.10)

        def gen(t):
            a = np.zeros(J)
            ts = t / CONTROL_HZ - 0.4
            if ts < 0:
                return a
            ph = 2.0 * math.pi * freq * ts
            a[WAIST] = -0.1
            a[HIP_L] = 0.06 + amp * math.sin(ph)
            a[HIP_R] = 0.06 + amp * math.sin(ph + math.pi)
            a[KNEE_L] = -0.5 * max(0.0, math.sin(ph + 0.5 * math.pi)) ** 2
            a[KNEE_R] = -0.5 * max(0.0, math.sin(ph + 1.5 * math.pi)) ** 2
            a[ANK_L] = a[ANK_R] = ab
            return a
        return gen

    def walk_ok(states, actions, _topo):
        h = view.root_height(states)
        return (_no_fall(view, states, frac=0.45)
                and view.displacement(states) > 0.10
                and float(h[-5:].mean()) > 0.45)

    # -- squat cycles --------------------------------------------------------
    def squat_targets(rng):
        depth = rng.uniform(0.95, 1.15)
        freq = rng.uniform(0.35, 0.45)

        def gen(t):
            a = np.zeros(J)
            ph = 0.5 * (1.0 - math.cos(2.0 * math.pi * freq * t / CONTROL_HZ))
            crouch_mix(a, ph, depth)
            return a
        return gen

    def squat_ok(states, actions, _topo):
        h = view.root_height(states)
        return (_no_fall(view, states) and float(h.min()) < standing - 0.10
                and float(h[-10:].mean()) > standing - 0.12)

    # -- hop in place (lands flat-footed into a held crouch) -------------------
    def jump_targets(rng):
        start = rng.uniform(0.25, 0.35)
        depth = rng.uniform(0.48, 0.55)
        push_ph = rng.uniform(0.32, 0.38)

        def gen(t):
            a = np.zeros(J)
            ts = t / CONTROL_HZ
            if ts < start:
                pass
            elif ts < start + 0.36:
                crouch_mix(a, min(1.0, (ts - start) / 0.3), depth)
            elif ts < start + 0.46:
                crouch_mix(a, push_ph, depth)
                a[ANK_L] = a[ANK_R] = 0.1   # feet level for takeoff
            else:
                crouch_mix(a, 0.5, 1.0)
            return a
        return gen

    def jump_ok(states, actions, _topo):
        h = view.root_height(states)
        return (_no_fall(view, states)
                and float(h.max()) > standing + 0.015
                and float(h[-8:].mean()) > 0.45)

    # -- waves ----------------------------------------------------------------
    def wave_targets_side(side_joint):
        def make(rng):
            freq = rng.uniform(1.1, 1.7)
            amp = rng.uniform(0.25, 0.4)
            raise_time = rng.uniform(0.3, 0.45)

            def gen(t):
                a = np.zeros(J)
                ts = t / CONTROL_HZ
                lift = min(1.0, ts / raise_time)
                a[side_joint] = 2.55 * lift
                if lift >= 1.0:
                    a[side_joint] += amp * math.sin(
                        2.0 * math.pi * freq * (ts - raise_time))
                return a
            return gen
        return make

    def wave_ok_side(side):
        def ok(states, actions, _topo):
            up = (view.hand_height(states, side)
                  > view.shoulder_height(states, side))
            return _no_fall(view, states) and float(up.mean()) >= 0.2
        return ok

    # -- kick with arm counterswing -------------------------------------------
    def kick_targets(rng):
        amp = rng.uniform(1.15, 1.3)
        arm_fwd = rng.uniform(1.7, 1.9)
        lean = rng.uniform(0.4, 0.5)
        ret = rng.uniform(0.55, 0.7)
        start = rng.uniform(0.35, 0.45)

        def gen(t):
            a = np.zeros(J)
            ts = t / CONTROL_HZ
            a[WAIST] = -0.1
            if ts < start:
                return a
            if ts < start + 0.15:                       # windup
                a[HIP_R] = -0.25
                a[KNEE_R] = -0.9
                a[SH_L] = a[SH_R] = -1.2
                return a
            if ts < start + 0.4:                        # swing through
                v = (ts - start - 0.15) / 0.25
                a[HIP_R] = amp
                a[KNEE_R] = 0.05
                a[SH_L] = a[SH_R] = -1.2 + (arm_fwd + 1.2) * v * 0.5
                return a
            u = min(1.0, (ts - start - 0.4) / ret)      # retract, arms forward
            a[HIP_R] = amp * (1.0 - u)
            a[KNEE_R] = 0.05 * (1.0 - u)
            a[SH_L] = a[SH_R] = (-1.2 + (arm_fwd + 1.2) * 0.5) * (1 - u) + arm_fwd * u
            a[WAIST] = -0.1 - lean * u * (1.0 - 0.5 * u)
            return a
        return gen

    def kick_ok(states, actions, _topo):
        toe = view.toe_height(states, "r")
        return _no_fall(view, states) and float(toe.max()) > 0.22

    # -- crouch, hold, then spring up fast --------------------------------------
    # A true flight phase after a long-held crouch lands off-balance too
    # often to keep; the "jump" here is the explosive rise, told apart from
    # the squat's slow rise by the root's peak upward speed.
    def crouch_jump_targets(rng):
        depth = rng.uniform(0.95, 1.1)
        hold = rng.uniform(0.35, 0.55)
        rise = rng.uniform(0.45, 0.6)
        ramp = 1.15

        def gen(t):
            a = np.zeros(J)
            ts = t / CONTROL_HZ
            if ts < 0.25:
                return a
            if ts < 0.25 + ramp:
                u = (ts - 0.25) / ramp
                crouch_mix(a, 0.5 * (1.0 - math.cos(math.pi * u)), depth)
                return a
            if ts < 0.25 + ramp + hold:
                crouch_mix(a, 1.0, depth)
                return a
            if ts < 0.25 + ramp + hold + rise:
                u = (ts - 0.25 - ramp - hold) / rise
                crouch_mix(a, 0.5 * (1.0 + math.cos(math.pi * u)), depth)
                a[ANK_L] = max(a[ANK_L], 0.05)
                a[ANK_R] = max(a[ANK_R], 0.05)
            return a
        return gen

    def crouch_jump_ok(states, actions, _topo):
        h = view.root_height(states)
        vz = states[:, view.v0 + 2 * top.root_index + 1]
        return (_no_fall(view, states)
                and float(h.min()) < standing - 0.10
                and float(vz.max()) > 0.32
                and float(h[-8:].mean()) > standing - 0.12)

    return [
        BehaviorScript("stand_still", 110, stand_targets, stand_ok),
        BehaviorScript("walk_forward", 55, walk_targets, walk_ok),
        BehaviorScript("jump_in_place", 100, jump_targets, jump_ok),
        BehaviorScript("squat", 140, squat_targets, squat_ok),
        BehaviorScript("wave_left", 120, wave_targets_side(SH_L), wave_ok_side("l")),
        BehaviorScript("wave_right", 120, wave_targets_side(SH_R), wave_ok_side("r")),
        BehaviorScript("kick_right", 95, kick_targets, kick_ok),
        BehaviorScript("crouch_then_jump", 115, crouch_jump_targets, crouch_jump_ok),
    ]
