/** Canvas skeleton drawing: links are capsules placed from their world
 * pose; styling derives from the topology's link lengths/radii. */

import { Topology } from "./protocol";

export interface Camera {
  scale: number;   // px per meter
  cx: number;      // world x at canvas center
  floorY: number;  // canvas y of the ground plane
}

export function defaultCamera(canvas: { width: number; height: number }): Camera {
  return { scale: canvas.height / 1.6, cx: 0, floorY: canvas.height - 30 };
}

export function worldToCanvas(cam: Camera, canvasWidth: number,
                              x: number, z: number): [number, number] {
  return [canvasWidth / 2 + (x - cam.cx) * cam.scale,
          cam.floorY - z * cam.scale];
}

const LINK_COLORS: Record<string, string> = {
  pelvis: "#c2563a",
  torso: "#d98e4a",
  arm_l: "#4a90d9",
  arm_r: "#355f8f",
  thigh_l: "#58a06b",
  thigh_r: "#3c7350",
  shin_l: "#58a06b",
  shin_r: "#3c7350",
  foot_l: "#333333",
  foot_r: "#555555",
};

export function drawSkeleton(
  ctx: CanvasRenderingContext2D,
  topology: Topology,
  poses: [number, number, number][],
  cam: Camera,
): void {
  const w = ctx.canvas.width;
  const h = ctx.canvas.height;
  ctx.clearRect(0, 0, w, h);
  // ground
  ctx.strokeStyle = "#888";
  ctx.lineWidth = 2;
  ctx.beginPath();
  ctx.moveTo(0, cam.floorY);
  ctx.lineTo(w, cam.floorY);
  ctx.stroke();
  for (let x = Math.ceil(cam.cx - 3); x <= cam.cx + 3; x += 0.5) {
    const [px] = worldToCanvas(cam, w, x, 0);
    ctx.strokeStyle = "#ddd";
    ctx.beginPath();
    ctx.moveTo(px, cam.floorY);
    ctx.lineTo(px - 8, cam.floorY + 10);
    ctx.stroke();
  }
  topology.links.forEach((link, i) => {
    const pose = poses[i];
    if (!pose) return;
    const [x, z, th] = pose;
    const half = link.length / 2;
    const dx = Math.cos(th) * half;
    const dz = Math.sin(th) * half;
    const [x0, y0] = worldToCanvas(cam, w, x - dx, z - dz);
    const [x1, y1] = worldToCanvas(cam, w, x + dx, z + dz);
    ctx.strokeStyle = LINK_COLORS[link.name] ?? "#222";
    ctx.lineCap = "round";
    ctx.lineWidth = Math.max(2, link.radius * 2 * cam.scale);
    ctx.beginPath();
    ctx.moveTo(x0, y0);
    ctx.lineTo(x1, y1);
    ctx.stroke();
    if (link.name === "torso") {
      // head disc on the torso's far end
      ctx.fillStyle = "#d9b84a";
      ctx.beginPath();
      ctx.arc(x1, y1 - 0.06 * cam.scale, 0.055 * cam.scale, 0, 2 * Math.PI);
      ctx.fill();
    }
  });
}
