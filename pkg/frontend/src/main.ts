/** Browser wiring: connect form, command box, transport controls, the
 * interpolated render loop, and live metric readouts. */

import { blendAt, interpolatePoses } from "./interpolate";
import { Camera, defaultCamera, drawSkeleton } from "./render";
import { SessionView } from "./session";

const FRAME_INTERVAL_MS = 1000 / 30;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function fmt(v: number | null | undefined, digits = 4): string {
  return v === null || v === undefined ? "-" : v.toFixed(digits);
}

export function boot(): void {
  const canvas = el<HTMLCanvasElement>("view");
  const ctx = canvas.getContext("2d")!;
  const session = new SessionView((url) => new WebSocket(url));
  const receivedAt: number[] = [];
  let framesSeen = 0;
  let drawCount = 0;
  let fps = 0;
  let lastFpsAt = performance.now();

  const status = el<HTMLSpanElement>("status");
  const errorBanner = el<HTMLDivElement>("error");
  const history = el<HTMLUListElement>("history");
  const metrics = el<HTMLDivElement>("metrics");
  const commandInput = el<HTMLInputElement>("command");
  const sendBtn = el<HTMLButtonElement>("send");

  session.onChange(() => {
    status.textContent = session.state + (session.paused ? " (paused)" : "");
    errorBanner.textContent = session.lastError ?? "";
    errorBanner.style.display = session.lastError ? "block" : "none";
    sendBtn.disabled = session.topology === null;
    history.innerHTML = "";
    for (const c of session.commandHistory.slice(-8).reverse()) {
      const li = document.createElement("li");
      li.textContent = `[${c.status}] ${c.text}`;
      history.appendChild(li);
    }
    const f = session.latestFrame;
    if (f) {
      if (session.frames.length !== framesSeen) {
        framesSeen = session.frames.length;
        receivedAt.push(performance.now());
        if (receivedAt.length > session.frames.length) {
          receivedAt.splice(0, receivedAt.length - session.frames.length);
        }
      }
      // overlay shows the server-sent values verbatim
      metrics.textContent =
        `t=${f.t}  root h=${fmt(f.root_h, 3)} m  ` +
        `floating=${fmt(f.floating_window, 2)} mm  ` +
        `jerk=${fmt(f.jerk_window, 4)} mm/frame^3  draw fps=${fps.toFixed(0)}`;
    }
  });

  el<HTMLButtonElement>("connect").onclick = () => {
    session.connect(el<HTMLInputElement>("url").value);
  };
  sendBtn.onclick = () => {
    if (session.sendCommand(commandInput.value)) commandInput.value = "";
  };
  commandInput.onkeydown = (ev) => {
    if (ev.key === "Enter") sendBtn.onclick!(new MouseEvent("click"));
  };
  el<HTMLButtonElement>("pause").onclick = () => session.pause();
  el<HTMLButtonElement>("resume").onclick = () => session.resume();
  el<HTMLButtonElement>("reset").onclick = () => session.reset();
  el<HTMLButtonElement>("audit").onclick = () => {
    const blob = new Blob([session.auditLogText()], { type: "text/plain" });
    const a = document.createElement("a");
    a.href = URL.createObjectURL(blob);
    a.download = "audit.log";
    a.click();
  };

  const cam: Camera = defaultCamera(canvas);

  function draw(now: number): void {
    drawCount += 1;
    if (now - lastFpsAt >= 1000) {
      fps = (drawCount * 1000) / (now - lastFpsAt);
      drawCount = 0;
      lastFpsAt = now;
    }
    const topo = session.topology;
    const pair = blendAt(session.frames, receivedAt, now, FRAME_INTERVAL_MS);
    if (topo && pair) {
      const poses = pair.next === pair.prev
        ? pair.next.link_poses
        : interpolatePoses(pair.prev, pair.next, pair.u);
      // follow the character horizontally
      const rootIdx = topo.links.findIndex((l) => l.name === topo.root);
      if (rootIdx >= 0) cam.cx += (poses[rootIdx][0] - cam.cx) * 0.05;
      drawSkeleton(ctx, topo, poses, cam);
      if (session.paused) {
        ctx.fillStyle = "rgba(40,40,40,0.75)";
        ctx.fillRect(10, 10, 86, 26);
        ctx.fillStyle = "#fff";
        ctx.font = "14px sans-serif";
        ctx.fillText("paused", 28, 28);
      }
    }
    requestAnimationFrame(draw);
  }
  requestAnimationFrame(draw);
}

// browser entry
if (typeof window !== "undefined" && typeof document !== "undefined") {
  window.addEventListener("load", boot);
}
