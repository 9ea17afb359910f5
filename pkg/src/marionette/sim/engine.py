"""Maximal-coordinate rigid body dynamics with sequential impulses.

Every link is a free planar body; revolute joints, angle limits and
ground contacts are resolved as velocity-level impulse constraints
(Gauss-Seidel sweeps with Baumgarte bias), followed by a small
nonlinear position correction pass that keeps anchor drift below the
solver tolerance. Integration is semi-implicit Euler. Ground contact is
impulse-based with zero restitution and Coulomb friction; no penalty
forces anywhere. Inner loops are scalar python on purpose: the arrays
are 10 bodies long and numpy dispatch would dominate the cost.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .topology import CharacterTopology


class SimulationDiverged(RuntimeError):
    def __init__(self, link: str, time: float):
        super().__init__(f"simulation diverged at link '{link}' (t={time:.3f}s)")
        self.link = link
        self.time = time


class UnknownPose(ValueError):
    pass


@dataclass
class SimConfig:
    dt: float = 1.0 / 60.0
    substeps: int = 8               # 4 is too coarse for the stiff motor hub
    gravity: float = 9.81
    solver_iters: int = 8
    position_iters: int = 4
    kp: float = 60.0
    kd_scale: float = 1.0            # multiplies the critical-damping kd
    max_torque: float = 150.0
    friction: float = 0.9
    baumgarte: float = 0.2
    contact_slop: float = 0.002      # m of tolerated penetration
    contact_margin: float = 0.005    # m below which contacts activate
    noise_scale: float = 0.0         # N*m std of torque noise

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")
        if self.kp < 0 or self.kd_scale < 0:
            raise ValueError("gains must be non-negative")


@dataclass
class SimState:
    """World pose (x, z, theta) and velocity per link, plus sim time.

    Angles are unwrapped (never reduced mod 2*pi) so joint angles read
    off as plain differences stay continuous across full turns.
    """

    pos: np.ndarray                  # [L, 3] float64
    vel: np.ndarray                  # [L, 3] float64
    time: float = 0.0

    def copy(self) -> "SimState":
        return SimState(self.pos.copy(), self.vel.copy(), self.time)


def _rot(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


class Simulator:
    """Binds a topology and config; step() and reset() return fresh states."""

    def __init__(self, topology: CharacterTopology, config: SimConfig = None):
        self.top = topology
        self.cfg = config or SimConfig()
        self.inv_m = [1.0 / l.mass for l in topology.links]
        self.inv_i = [1.0 / l.inertia for l in topology.links]
        self.half = [l.length / 2.0 for l in topology.links]
        self.radius = [l.radius for l in topology.links]
        self.jp = [topology.link_index[j.parent] for j in topology.joints]
        self.jc = [topology.link_index[j.child] for j in topology.joints]
        self.pax = [j.parent_anchor[0] for j in topology.joints]
        self.pay = [j.parent_anchor[1] for j in topology.joints]
        self.cax = [j.child_anchor[0] for j in topology.joints]
        self.cay = [j.child_anchor[1] for j in topology.joints]
        self.rest = [j.rest for j in topology.joints]
        self.lo = [j.lo for j in topology.joints]
        self.hi = [j.hi for j in topology.joints]
        # critical damping against the child link's inertia about the joint
        self.kd = []
        for j, spec in enumerate(topology.joints):
            child = topology.links[self.jc[j]]
            d = math.hypot(*spec.child_anchor)
            i_joint = child.inertia + child.mass * d * d
            self.kd.append(2.0 * math.sqrt(self.cfg.kp * i_joint) * self.cfg.kd_scale)

    # -- joint coordinates -------------------------------------------------

    def joint_angles(self, state: SimState) -> np.ndarray:
        th = state.pos[:, 2]
        return np.array([th[self.jc[j]] - th[self.jp[j]] - self.rest[j]
                         for j in range(self.top.n_joints)])

    def joint_rates(self, state: SimState) -> np.ndarray:
        w = state.vel[:, 2]
        return np.array([w[self.jc[j]] - w[self.jp[j]]
                         for j in range(self.top.n_joints)])

    # -- public API ----------------------------------------------------------

    def reset(self, pose: str = "neutral_stand", angles=None) -> SimState:
        """Assemble at a named preset with zero velocity, feet on ground."""
        if pose == "neutral_stand":
            q = np.zeros(self.top.n_joints)
        elif pose == "t_pose":
            q = np.zeros(self.top.n_joints)
            for j, spec in enumerate(self.top.joints):
                if spec.name.startswith("shoulder"):
                    q[j] = math.pi / 2.0
        elif pose == "custom":
            if angles is None:
                raise UnknownPose("custom pose needs a joint-angle vector")
            q = np.asarray(angles, dtype=np.float64)
            if q.shape != (self.top.n_joints,):
                raise UnknownPose(f"expected {self.top.n_joints} joint angles")
        else:
            raise UnknownPose(f"unknown pose '{pose}'")
        return self.assemble(q)

    def assemble(self, q: np.ndarray, root_x: float = 0.0) -> SimState:
        """Forward kinematics from joint angles; dropped onto the ground."""
        top = self.top
        pos = np.zeros((top.n_links, 3))
        ri = top.root_index
        pos[ri] = (root_x, top.neutral_pose[ri, 1], top.neutral_pose[ri, 2])
        for j, spec in enumerate(top.joints):
            p, c = self.jp[j], self.jc[j]
            theta_c = pos[p, 2] + spec.rest + q[j]
            anchor = pos[p, :2] + _rot(pos[p, 2]) @ [self.pax[j], self.pay[j]]
            pos[c, :2] = anchor - _rot(theta_c) @ [self.cax[j], self.cay[j]]
            pos[c, 2] = theta_c
        lowest = math.inf
        for i in range(top.n_links):
            c, s = math.cos(pos[i, 2]), math.sin(pos[i, 2])
            for sign in (-1.0, 1.0):
                zz = pos[i, 1] + sign * self.half[i] * s - self.radius[i]
                lowest = min(lowest, zz)
        pos[:, 1] -= lowest
        return SimState(pos=pos, vel=np.zeros((top.n_links, 3)), time=0.0)

    def step(self, state: SimState, action, rng=None) -> SimState:
        """Advance one dt. Deterministic given (state, action, rng stream)."""
        action = np.asarray(action, dtype=np.float64)
        if action.shape != (self.top.n_joints,):
            raise ValueError(
                f"action has shape {action.shape}, expected ({self.top.n_joints},)")
        cfg = self.cfg
        h = cfg.dt / cfg.substeps
        target = [min(max(float(a), self.lo[j]), self.hi[j])
                  for j, a in enumerate(action)]
        px = state.pos[:, 0].tolist()
        py = state.pos[:, 1].tolist()
        th = state.pos[:, 2].tolist()
        vx = state.vel[:, 0].tolist()
        vy = state.vel[:, 1].tolist()
        w = state.vel[:, 2].tolist()
        for _ in range(cfg.substeps):
            self._substep(px, py, th, vx, vy, w, target, h, rng)
        pos = np.column_stack([px, py, th])
        vel = np.column_stack([vx, vy, w])
        out = SimState(pos=pos, vel=vel, time=state.time + cfg.dt)
        bad = ~np.isfinite(pos).all(axis=1) | ~np.isfinite(vel).all(axis=1)
        if bad.any():
            raise SimulationDiverged(self.top.links[int(np.argmax(bad))].name, out.time)
        return out

    # -- solver internals ------------------------------------------------------

    def _substep(self, px, py, th, vx, vy, w, target, h, rng):
        cfg = self.cfg
        nj = self.top.n_joints
        nl = self.top.n_links
        inv_m, inv_i = self.inv_m, self.inv_i
        jp, jc = self.jp, self.jc

        # torque noise is an explicit impulse; the PD motor itself is solved
        # implicitly below (explicit PD is unstable on the light links)
        if cfg.noise_scale > 0.0 and rng is not None:
            noise = rng.normal(0.0, cfg.noise_scale, size=nj)
            for j in range(nj):
                p, c = jp[j], jc[j]
                w[c] += h * noise[j] * inv_i[c]
                w[p] -= h * noise[j] * inv_i[p]

        # gravity
        gdv = h * cfg.gravity
        for i in range(nl):
            vy[i] -= gdv

        # PD motors as soft constraints: backward Euler on the spring-damper,
        # solved inside the Gauss-Seidel sweep via the usual gamma/bias form
        motors = []
        if cfg.kp > 0.0 or any(k > 0.0 for k in self.kd):
            lam_max = cfg.max_torque * h
            for j in range(nj):
                kd = self.kd[j]
                denom = kd + h * cfg.kp
                if denom <= 0.0:
                    continue
                p, c = jp[j], jc[j]
                q = th[c] - th[p] - self.rest[j]
                gamma = 1.0 / (h * denom)
                bias = cfg.kp * (q - target[j]) / denom
                m_soft = 1.0 / (inv_i[p] + inv_i[c] + gamma)
                motors.append([j, p, c, gamma, bias, m_soft, lam_max, 0.0])

        # constraint geometry, frozen for the velocity sweep
        cth = [math.cos(t) for t in th]
        sth = [math.sin(t) for t in th]
        joints = []
        for j in range(nj):
            p, c = jp[j], jc[j]
            rpx = cth[p] * self.pax[j] - sth[p] * self.pay[j]
            rpy = sth[p] * self.pax[j] + cth[p] * self.pay[j]
            rcx = cth[c] * self.cax[j] - sth[c] * self.cay[j]
            rcy = sth[c] * self.cax[j] + cth[c] * self.cay[j]
            ex = px[c] + rcx - px[p] - rpx
            ey = py[c] + rcy - py[p] - rpy
            ms = inv_m[p] + inv_m[c]
            k00 = ms + inv_i[p] * rpy * rpy + inv_i[c] * rcy * rcy
            k01 = -(inv_i[p] * rpx * rpy + inv_i[c] * rcx * rcy)
            k11 = ms + inv_i[p] * rpx * rpx + inv_i[c] * rcx * rcx
            det = k00 * k11 - k01 * k01
            joints.append((p, c, rpx, rpy, rcx, rcy, ex, ey,
                           k11 / det, -k01 / det, k00 / det))

        contacts = []
        for i in range(nl):
            hx, hy = self.half[i] * cth[i], self.half[i] * sth[i]
            for sign in (-1.0, 1.0):
                ax, ay = sign * hx, sign * hy
                clearance = py[i] + ay - self.radius[i]
                if clearance < cfg.contact_margin:
                    kn = inv_m[i] + inv_i[i] * ax * ax
                    kt = inv_m[i] + inv_i[i] * ay * ay
                    contacts.append([i, ax, ay, clearance, 1.0 / kn, 1.0 / kt,
                                     0.0, 0.0])

        limits = []
        for j in range(nj):
            p, c = jp[j], jc[j]
            q = th[c] - th[p] - self.rest[j]
            if q < self.lo[j]:
                limits.append([j, 1.0, self.lo[j] - q, 0.0])
            elif q > self.hi[j]:
                limits.append([j, -1.0, q - self.hi[j], 0.0])
        m_lim = [1.0 / (inv_i[jp[l[0]]] + inv_i[jc[l[0]]]) for l in limits]

        # Velocity sweep with zero position bias: drift and penetration are
        # handled purely by the position pass below, so the velocity state
        # never carries phantom correction motion.
        slop = cfg.contact_slop
        mu = cfg.friction
        for _ in range(cfg.solver_iters):
            for mot in motors:
                j, p, c, gamma, bias, m_soft, lam_max, acc = mot
                qd = w[c] - w[p]
                lam = -m_soft * (qd + bias + gamma * acc)
                new_acc = min(max(acc + lam, -lam_max), lam_max)
                lam = new_acc - acc
                mot[7] = new_acc
                w[c] += inv_i[c] * lam
                w[p] -= inv_i[p] * lam

            for (p, c, rpx, rpy, rcx, rcy, ex, ey, i00, i01, i11) in joints:
                vrx = vx[c] - w[c] * rcy - vx[p] + w[p] * rpy
                vry = vy[c] + w[c] * rcx - vy[p] - w[p] * rpx
                ix = -(i00 * vrx + i01 * vry)
                iy = -(i01 * vrx + i11 * vry)
                vx[c] += inv_m[c] * ix
                vy[c] += inv_m[c] * iy
                w[c] += inv_i[c] * (rcx * iy - rcy * ix)
                vx[p] -= inv_m[p] * ix
                vy[p] -= inv_m[p] * iy
                w[p] -= inv_i[p] * (rpx * iy - rpy * ix)

            for li, lim in enumerate(limits):
                j, sgn, depth, acc = lim
                p, c = jp[j], jc[j]
                rate = sgn * (w[c] - w[p])
                lam = -m_lim[li] * rate
                new_acc = max(acc + lam, 0.0)
                lam = new_acc - acc
                lim[3] = new_acc
                w[c] += inv_i[c] * sgn * lam
                w[p] -= inv_i[p] * sgn * lam

            for con in contacts:
                i, ax, ay, clearance, mn, mt = con[0], con[1], con[2], con[3], con[4], con[5]
                vn = vy[i] + w[i] * ax
                lam = -mn * vn
                new_acc = max(con[6] + lam, 0.0)
                lam = new_acc - con[6]
                con[6] = new_acc
                vy[i] += inv_m[i] * lam
                w[i] += inv_i[i] * ax * lam
                vt = vx[i] - w[i] * ay
                lam_t = -mt * vt
                max_f = mu * con[6]
                new_t = min(max(con[7] + lam_t, -max_f), max_f)
                lam_t = new_t - con[7]
                con[7] = new_t
                vx[i] += inv_m[i] * lam_t
                w[i] -= inv_i[i] * ay * lam_t

        # integrate positions
        for i in range(nl):
            px[i] += h * vx[i]
            py[i] += h * vy[i]
            th[i] += h * w[i]

        # nonlinear position correction
        for _ in range(cfg.position_iters):
            for j in range(nj):
                p, c = jp[j], jc[j]
                cp, sp = math.cos(th[p]), math.sin(th[p])
                cc, sc = math.cos(th[c]), math.sin(th[c])
                rpx = cp * self.pax[j] - sp * self.pay[j]
                rpy = sp * self.pax[j] + cp * self.pay[j]
                rcx = cc * self.cax[j] - sc * self.cay[j]
                rcy = sc * self.cax[j] + cc * self.cay[j]
                ex = px[c] + rcx - px[p] - rpx
                ey = py[c] + rcy - py[p] - rpy
                if -1e-10 < ex < 1e-10 and -1e-10 < ey < 1e-10:
                    continue
                ms = inv_m[p] + inv_m[c]
                k00 = ms + inv_i[p] * rpy * rpy + inv_i[c] * rcy * rcy
                k01 = -(inv_i[p] * rpx * rpy + inv_i[c] * rcx * rcy)
                k11 = ms + inv_i[p] * rpx * rpx + inv_i[c] * rcx * rcx
                det = k00 * k11 - k01 * k01
                bx = -0.8 * ex
                by = -0.8 * ey
                ix = (k11 * bx - k01 * by) / det
                iy = (-k01 * bx + k00 * by) / det
                px[c] += inv_m[c] * ix
                py[c] += inv_m[c] * iy
                th[c] += inv_i[c] * (rcx * iy - rcy * ix)
                px[p] -= inv_m[p] * ix
                py[p] -= inv_m[p] * iy
                th[p] -= inv_i[p] * (rpx * iy - rpy * ix)
            for i in range(nl):
                ci, si = math.cos(th[i]), math.sin(th[i])
                hx, hy = self.half[i] * ci, self.half[i] * si
                for sign in (-1.0, 1.0):
                    ax, ay = sign * hx, sign * hy
                    pen = self.radius[i] - (py[i] + ay) - slop
                    if pen > 0.0:
                        kn = inv_m[i] + inv_i[i] * ax * ax
                        lam = 0.8 * pen / kn
                        py[i] += inv_m[i] * lam
                        th[i] += inv_i[i] * ax * lam

    # -- diagnostics -------------------------------------------------------

    def max_joint_drift(self, state: SimState) -> float:
        worst = 0.0
        for j in range(self.top.n_joints):
            p, c = self.jp[j], self.jc[j]
            rp = _rot(state.pos[p, 2]) @ [self.pax[j], self.pay[j]]
            rc = _rot(state.pos[c, 2]) @ [self.cax[j], self.cay[j]]
            err = (state.pos[c, :2] + rc) - (state.pos[p, :2] + rp)
            worst = max(worst, float(np.hypot(*err)))
        return worst

    def max_penetration(self, state: SimState) -> float:
        worst = 0.0
        for i in range(self.top.n_links):
            c, s = math.cos(state.pos[i, 2]), math.sin(state.pos[i, 2])
            for sign in (-1.0, 1.0):
                clearance = state.pos[i, 1] + sign * self.half[i] * s - self.radius[i]
                worst = max(worst, -clearance)
        return worst

    def mechanical_energy(self, state: SimState) -> float:
        ke = pe = 0.0
        for i, link in enumerate(self.top.links):
            ke += 0.5 * link.mass * (state.vel[i, 0] ** 2 + state.vel[i, 1] ** 2)
            ke += 0.5 * link.inertia * state.vel[i, 2] ** 2
            pe += link.mass * self.cfg.gravity * state.pos[i, 1]
        return ke + pe

    def consistent_velocities(self, state: SimState, root_vel, joint_rates) -> SimState:
        """Set velocities from a root twist plus per-joint rates so every
        anchor constraint is exactly satisfied (used by tests)."""
        out = state.copy()
        vx, vy, wz = float(root_vel[0]), float(root_vel[1]), float(root_vel[2])
        ri = self.top.root_index
        out.vel[:] = 0.0
        out.vel[ri] = (vx, vy, wz)
        for j in range(self.top.n_joints):
            p, c = self.jp[j], self.jc[j]
            rp = _rot(out.pos[p, 2]) @ [self.pax[j], self.pay[j]]
            rc = _rot(out.pos[c, 2]) @ [self.cax[j], self.cay[j]]
            wc = out.vel[p, 2] + float(joint_rates[j])
            # anchor velocity must match: vc + wc x rc = vp + wp x rp
            vax = out.vel[p, 0] - out.vel[p, 2] * rp[1]
            vay = out.vel[p, 1] + out.vel[p, 2] * rp[0]
            out.vel[c, 0] = vax + wc * rc[1]
            out.vel[c, 1] = vay - wc * rc[0]
            out.vel[c, 2] = wc
        return out
