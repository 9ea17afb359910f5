/** Pose interpolation: network frames arrive at 30 Hz, the canvas draws
 * at display refresh, so link poses are blended between the two most
 * recent frames. Angles interpolate along the shorter arc. */

import { FrameMsg } from "./protocol";

export function lerpAngle(a: number, b: number, u: number): number {
  let d = b - a;
  while (d > Math.PI) d -= 2 * Math.PI;
  while (d < -Math.PI) d += 2 * Math.PI;
  return a + d * u;
}

export function interpolatePoses(
  prev: FrameMsg,
  next: FrameMsg,
  u: number,
): [number, number, number][] {
  const clamped = Math.min(1, Math.max(0, u));
  return next.link_poses.map((pose, i) => {
    const p = prev.link_poses[i] ?? pose;
    return [
      p[0] + (pose[0] - p[0]) * clamped,
      p[1] + (pose[1] - p[1]) * clamped,
      lerpAngle(p[2], pose[2], clamped),
    ];
  });
}

/**
 * Pick the interpolation pair and blend factor for a draw timestamp.
 * frameInterval is the nominal server frame spacing in ms.
 */
export function blendAt(
  frames: FrameMsg[],
  receivedAt: number[],
  drawTime: number,
  frameInterval: number,
): { prev: FrameMsg; next: FrameMsg; u: number } | null {
  if (!frames.length) return null;
  if (frames.length === 1) {
    return { prev: frames[0], next: frames[0], u: 1 };
  }
  const last = frames.length - 1;
  const lastAt = receivedAt[last];
  // render one interval behind the newest frame so there is a pair to blend
  const target = drawTime - frameInterval;
  if (target >= lastAt) {
    return { prev: frames[last - 1], next: frames[last], u: 1 };
  }
  for (let i = last; i > 0; i--) {
    if (receivedAt[i - 1] <= target) {
      const span = Math.max(receivedAt[i] - receivedAt[i - 1], 1e-6);
      return {
        prev: frames[i - 1],
        next: frames[i],
        u: (target - receivedAt[i - 1]) / span,
      };
    }
  }
  return { prev: frames[0], next: frames[1], u: 0 };
}
