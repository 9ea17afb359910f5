"""Observation vector: root height, joint anchors, link orientations and
velocities, all expressed in a root-anchored axis-aligned frame.

Layout (width = 1 + 2*J + 2*L + 2*L + L, 69 for the default character):

    [0]                   root height above the ground plane
    [1 .. 2J]             joint anchor positions relative to the root, (x, z)
    [.. + 2L]             per-link orientation as (cos, sin) pairs
    [.. + 2L]             per-link linear velocity (x, z)
    [.. + L]              per-link angular velocity

Joint anchors use the parent-side attachment point. The frame removes
the root's world x only; velocities and orientations are world-frame
quantities, which are already invariant to planar translation.
"""

from __future__ import annotations

import math

import numpy as np

from .engine import SimState
from .topology import CharacterTopology


def observe(state: SimState, topology: CharacterTopology) -> np.ndarray:
    """Flatten a SimState into the float32 observation vector."""
    nl, nj = topology.n_links, topology.n_joints
    out = np.empty(topology.state_dim(), dtype=np.float32)
    ri = topology.root_index
    rx, rz = state.pos[ri, 0], state.pos[ri, 1]
    out[0] = rz
    k = 1
    for j, spec in enumerate(topology.joints):
        p = topology.link_index[spec.parent]
        th = state.pos[p, 2]
        c, s = math.cos(th), math.sin(th)
        ax, ay = spec.parent_anchor
        out[k] = state.pos[p, 0] + c * ax - s * ay - rx
        out[k + 1] = state.pos[p, 1] + s * ax + c * ay - rz
        k += 2
    for i in range(nl):
        out[k] = math.cos(state.pos[i, 2])
        out[k + 1] = math.sin(state.pos[i, 2])
        k += 2
    for i in range(nl):
        out[k] = state.vel[i, 0]
        out[k + 1] = state.vel[i, 1]
        k += 2
    for i in range(nl):
        out[k] = state.vel[i, 2]
        k += 1
    return out


def state_layout(topology: CharacterTopology) -> list:
    """Documented (name, index range) pairs for the observation vector."""
    rows = [("root_height", (0, 1))]
    k = 1
    for spec in topology.joints:
        rows.append((f"anchor[{spec.name}]", (k, k + 2)))
        k += 2
    for link in topology.links:
        rows.append((f"orient[{link.name}]", (k, k + 2)))
        k += 2
    for link in topology.links:
        rows.append((f"linvel[{link.name}]", (k, k + 2)))
        k += 2
    for link in topology.links:
        rows.append((f"angvel[{link.name}]", (k, k + 1)))
        k += 1
    return rows


def foot_clearance(state: SimState, topology: CharacterTopology) -> float:
    """Lowest point of any designated foot capsule above the ground, m."""
    best = math.inf
    for name in topology.foot_links:
        i = topology.link_index[name]
        link = topology.links[i]
        s = math.sin(state.pos[i, 2])
        for sign in (-1.0, 1.0):
            z = state.pos[i, 1] + sign * link.length / 2.0 * s - link.radius
            best = min(best, z)
    return best


def joint_world_positions(state: SimState, topology: CharacterTopology) -> np.ndarray:
    """World (x, z) of every joint anchor; used by the jerk metric."""
    out = np.empty((topology.n_joints, 2))
    for j, spec in enumerate(topology.joints):
        p = topology.link_index[spec.parent]
        th = state.pos[p, 2]
        c, s = math.cos(th), math.sin(th)
        ax, ay = spec.parent_anchor
        out[j, 0] = state.pos[p, 0] + c * ax - s * ay
        out[j, 1] = state.pos[p, 1] + s * ax + c * ay
    return out
