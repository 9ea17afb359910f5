"""Articulated planar character description.

A character is a tree of capsule links connected by revolute joints.
Links live in the x-z plane (z up); each link is a segment of given
length along its local x axis, centered on its center of mass, with a
contact radius. The neutral standing pose is part of the topology: links
are specified by their world segment endpoints in that pose, and all
local quantities (anchors, rest angles) are derived from it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class TopologyError(ValueError):
    """Malformed character description."""


@dataclass(frozen=True)
class LinkSpec:
    name: str
    length: float
    mass: float
    radius: float
    inertia_override: float = 0.0    # > 0 replaces the capsule formula

    @property
    def inertia(self) -> float:
        if self.inertia_override > 0.0:
            return self.inertia_override
        # solid capsule about its center, floored to keep the solver sane
        return max(self.mass * (self.length ** 2 / 12.0 + self.radius ** 2 / 2.0),
                   1e-4)


@dataclass(frozen=True)
class JointSpec:
    name: str
    parent: str
    child: str
    parent_anchor: tuple          # local coords on parent link
    child_anchor: tuple           # local coords on child link
    rest: float                   # child world angle - parent world angle at neutral
    lo: float                     # angle limits relative to rest, lo < hi
    hi: float


@dataclass
class CharacterTopology:
    """Link/joint tables plus the neutral world pose they were built from."""

    links: list = field(default_factory=list)      # [LinkSpec]
    joints: list = field(default_factory=list)     # [JointSpec], parents first
    root: str = "pelvis"
    foot_links: list = field(default_factory=list)
    neutral_pose: np.ndarray = None                # [L, 3] world (x, z, theta)

    def __post_init__(self):
        self.link_index = {l.name: i for i, l in enumerate(self.links)}
        self._validate()

    @property
    def n_links(self) -> int:
        return len(self.links)

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    @property
    def root_index(self) -> int:
        return self.link_index[self.root]

    def joint_limits(self) -> np.ndarray:
        return np.array([[j.lo, j.hi] for j in self.joints], dtype=np.float64)

    def state_dim(self) -> int:
        """Observation width: h + joint anchors + per-link (r, v, omega)."""
        return 1 + 2 * self.n_joints + 2 * self.n_links + 2 * self.n_links + self.n_links

    def standing_root_height(self) -> float:
        return float(self.neutral_pose[self.root_index, 1])

    def _validate(self):
        if len(set(l.name for l in self.links)) != len(self.links):
            raise TopologyError("duplicate link names")
        if self.root not in self.link_index:
            raise TopologyError(f"root link '{self.root}' not defined")
        for f in self.foot_links:
            if f not in self.link_index:
                raise TopologyError(f"foot link '{f}' not defined")
        seen_child = set()
        reach = {self.root}
        for j in self.joints:
            if j.parent not in self.link_index or j.child not in self.link_index:
                raise TopologyError(f"joint '{j.name}' references unknown link")
            if j.child in seen_child:
                raise TopologyError(f"link '{j.child}' has two parents")
            if j.child == self.root:
                raise TopologyError("root link cannot be a joint child")
            if not j.lo < j.hi:
                raise TopologyError(f"joint '{j.name}': limits must satisfy lo < hi")
            if j.parent not in reach:
                raise TopologyError(
                    f"joint '{j.name}': parent '{j.parent}' not reachable yet "
                    "(joints must be listed parents-first)")
            seen_child.add(j.child)
            reach.add(j.child)
        if reach != set(self.link_index):
            missing = set(self.link_index) - reach
            raise TopologyError(f"links not connected to root: {sorted(missing)}")
        if self.neutral_pose is None or self.neutral_pose.shape != (self.n_links, 3):
            raise TopologyError("neutral_pose must be an [n_links, 3] array")


def _rot(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def build_topology(link_rows, joint_rows, root: str, foot_links) -> CharacterTopology:
    """Build a topology from world-layout tables.

    link_rows: name -> dict(p0=(x,z), p1=(x,z), mass, radius); the segment
    p0->p1 is the link at neutral. joint_rows: name -> dict(parent, child,
    anchor=(x,z) world at neutral, lo, hi). Snapped so the lowest contact
    point touches the ground exactly.
    """
    links, centers, angles = [], {}, {}
    order = list(link_rows)
    for name in order:
        row = link_rows[name]
        p0 = np.asarray(row["p0"], dtype=np.float64)
        p1 = np.asarray(row["p1"], dtype=np.float64)
        d = p1 - p0
        length = float(np.hypot(*d))
        if length <= 0:
            raise TopologyError(f"link '{name}' has zero length")
        links.append(LinkSpec(name, length, float(row["mass"]), float(row["radius"]),
                              float(row.get("inertia", 0.0))))
        centers[name] = (p0 + p1) / 2.0
        angles[name] = math.atan2(d[1], d[0])

    joints = []
    for name, row in joint_rows.items():
        parent, child = row["parent"], row["child"]
        anchor = np.asarray(row["anchor"], dtype=np.float64)
        pa = _rot(angles[parent]).T @ (anchor - centers[parent])
        ca = _rot(angles[child]).T @ (anchor - centers[child])
        rest = angles[child] - angles[parent]
        joints.append(JointSpec(name, parent, child, tuple(pa), tuple(ca),
                                rest, float(row["lo"]), float(row["hi"])))

    # drop the whole layout so the lowest capsule point sits at z = 0
    lowest = math.inf
    for l in links:
        half = np.array([l.length / 2.0, 0.0])
        for sign in (-1.0, 1.0):
            p = centers[l.name] + _rot(angles[l.name]) @ (sign * half)
            lowest = min(lowest, p[1] - l.radius)
    pose = np.array([[centers[l.name][0], centers[l.name][1] - lowest, angles[l.name]]
                     for l in links])

    return CharacterTopology(links=links, joints=joints, root=root,
                             foot_links=list(foot_links), neutral_pose=pose)


def default_character() -> CharacterTopology:
    """Ten links, nine actuated joints: pelvis root, torso (head mass
    folded in), two arms, and two three-segment legs with feet for ground
    contact. Shoulder range allows overhead reach; knees only bend back.
    """
    # Desk-scale puppet (~0.96 m, ~6.3 kg). PD joints act in series against
    # body pitch, so passive stance at the default gains requires the
    # stacked stiffness to beat gravity: min eig(K - G) is ~+55 here (it
    # goes negative for a human-sized build, which slowly topples).
    arm_kw = dict(mass=0.25, radius=0.03)
    link_rows = {
        # pelvis inertia set as a wide box (0.12 x 0.30): a thin-rod value
        # makes it a near-singular hub for the three motors anchored on it
        "pelvis":  dict(p0=(0.0, 0.52), p1=(0.0, 0.64), mass=1.1, radius=0.06,
                        inertia=0.009),
        "torso":   dict(p0=(0.0, 0.64), p1=(0.0, 0.96), mass=1.9, radius=0.07),
        "arm_l":   dict(p0=(0.0, 0.90), p1=(0.0, 0.60), **arm_kw),
        "arm_r":   dict(p0=(0.0, 0.90), p1=(0.0, 0.60), **arm_kw),
        "thigh_l": dict(p0=(0.0, 0.52), p1=(0.0, 0.30), mass=0.7, radius=0.04),
        "thigh_r": dict(p0=(0.0, 0.52), p1=(0.0, 0.30), mass=0.7, radius=0.04),
        "shin_l":  dict(p0=(0.0, 0.30), p1=(0.0, 0.08), mass=0.45, radius=0.035),
        "shin_r":  dict(p0=(0.0, 0.30), p1=(0.0, 0.08), mass=0.45, radius=0.035),
        "foot_l":  dict(p0=(-0.04, 0.04), p1=(0.10, 0.04), mass=0.25, radius=0.04),
        "foot_r":  dict(p0=(-0.04, 0.04), p1=(0.10, 0.04), mass=0.25, radius=0.04),
    }
    joint_rows = {
        "waist":      dict(parent="pelvis", child="torso",
                           anchor=(0.0, 0.64), lo=-0.8, hi=0.8),
        "shoulder_l": dict(parent="torso", child="arm_l",
                           anchor=(0.0, 0.90), lo=-3.1, hi=3.1),
        "shoulder_r": dict(parent="torso", child="arm_r",
                           anchor=(0.0, 0.90), lo=-3.1, hi=3.1),
        "hip_l":      dict(parent="pelvis", child="thigh_l",
                           anchor=(0.0, 0.52), lo=-0.8, hi=2.2),
        "hip_r":      dict(parent="pelvis", child="thigh_r",
                           anchor=(0.0, 0.52), lo=-0.8, hi=2.2),
        "knee_l":     dict(parent="thigh_l", child="shin_l",
                           anchor=(0.0, 0.30), lo=-2.4, hi=0.05),
        "knee_r":     dict(parent="thigh_r", child="shin_r",
                           anchor=(0.0, 0.30), lo=-2.4, hi=0.05),
        "ankle_l":    dict(parent="shin_l", child="foot_l",
                           anchor=(0.0, 0.08), lo=-1.0, hi=0.9),
        "ankle_r":    dict(parent="shin_r", child="foot_r",
                           anchor=(0.0, 0.08), lo=-1.0, hi=0.9),
    }
    return build_topology(link_rows, joint_rows, root="pelvis",
                          foot_links=["foot_l", "foot_r"])
