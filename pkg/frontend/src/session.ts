/**
 * Client session state: connection lifecycle, a bounded rolling frame
 * buffer, command history with ack tracking, and a downloadable audit
 * log. Performs no physics or policy computation: everything rendered
 * comes verbatim from server frames.
 */

import {
  ClientMsg,
  FrameMsg,
  parseServerMsg,
  serializeClientMsg,
  Topology,
} from "./protocol";

export type ConnectionState = "idle" | "connecting" | "open" | "closed" | "error";

export interface CommandEntry {
  text: string;
  sentAt: number; // ms timestamp
  status: "pending" | "acked" | "queued";
}

export interface AuditEntry {
  at: number;
  direction: "send" | "recv";
  payload: string;
}

/** Minimal WebSocket surface so tests can inject a fake. */
export interface SocketLike {
  send(data: string): void;
  close(): void;
  onopen: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: string }) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
}

export type SocketFactory = (url: string) => SocketLike;

export const FRAME_BUFFER_LIMIT = 300;

export class SessionView {
  state: ConnectionState = "idle";
  topology: Topology | null = null;
  frames: FrameMsg[] = [];
  commandHistory: CommandEntry[] = [];
  lastError: string | null = null;
  paused = false;
  audit: AuditEntry[] = [];
  auditLimit = 2000;

  private socket: SocketLike | null = null;
  private listeners: (() => void)[] = [];

  constructor(private readonly factory: SocketFactory,
              private readonly now: () => number = () => Date.now()) {}

  onChange(fn: () => void): void {
    this.listeners.push(fn);
  }

  private emit(): void {
    for (const fn of this.listeners) fn();
  }

  get latestFrame(): FrameMsg | null {
    return this.frames.length ? this.frames[this.frames.length - 1] : null;
  }

  connect(url: string): void {
    // reconnects preserve command history and the audit log
    this.state = "connecting";
    this.topology = null;
    this.frames = [];
    this.lastError = null;
    try {
      this.socket = this.factory(url);
    } catch (err) {
      this.state = "error";
      this.lastError = String(err);
      this.emit();
      return;
    }
    this.socket.onopen = () => {
      this.state = "open";
      this.emit();
    };
    this.socket.onmessage = (ev) => this.handleMessage(ev.data);
    this.socket.onclose = () => {
      if (this.state !== "error") this.state = "closed";
      this.emit();
    };
    this.socket.onerror = () => {
      this.state = "error";
      this.lastError = this.lastError ?? "connection failed";
      this.emit();
    };
    this.emit();
  }

  disconnect(): void {
    this.socket?.close();
    this.socket = null;
    this.state = "closed";
    this.emit();
  }

  private record(direction: "send" | "recv", payload: string): void {
    this.audit.push({ at: this.now(), direction, payload });
    if (this.audit.length > this.auditLimit) {
      this.audit.splice(0, this.audit.length - this.auditLimit);
    }
  }

  private handleMessage(raw: string): void {
    this.record("recv", raw);
    const msg = parseServerMsg(raw);
    if (!msg) {
      this.lastError = "unparseable server message";
      this.emit();
      return;
    }
    switch (msg.type) {
      case "hello":
        this.topology = msg.topology;
        break;
      case "frame":
        this.frames.push(msg);
        if (this.frames.length > FRAME_BUFFER_LIMIT) {
          this.frames.splice(0, this.frames.length - FRAME_BUFFER_LIMIT);
        }
        break;
      case "ack":
        if (msg.for === "command") {
          const pending = this.commandHistory.find((c) => c.status !== "acked");
          if (pending) pending.status = "acked";
        }
        if (msg.for === "pause") this.paused = true;
        if (msg.for === "resume") this.paused = false;
        break;
      case "error":
        this.lastError = msg.message;
        break;
    }
    this.emit();
  }

  private sendRaw(msg: ClientMsg): void {
    if (!this.socket || this.state !== "open") {
      this.lastError = "not connected";
      this.emit();
      return;
    }
    const payload = serializeClientMsg(msg);
    this.record("send", payload);
    this.socket.send(payload);
  }

  /** Empty commands are blocked client-side; disabled until hello. */
  sendCommand(text: string): boolean {
    const trimmed = text.trim();
    if (!trimmed) return false;
    if (!this.topology) {
      this.lastError = "waiting for handshake";
      this.emit();
      return false;
    }
    this.commandHistory.push({
      text: trimmed,
      sentAt: this.now(),
      status: this.paused ? "queued" : "pending",
    });
    this.sendRaw({ type: "command", text: trimmed });
    return true;
  }

  pause(): void {
    this.sendRaw({ type: "pause" });
  }

  resume(): void {
    this.sendRaw({ type: "resume" });
  }

  reset(pose = "neutral_stand"): void {
    this.sendRaw({ type: "reset", pose });
  }

  setSeed(seed: number): void {
    this.sendRaw({ type: "set_seed", seed });
  }

  auditLogText(): string {
    return this.audit
      .map((e) => `${e.at} ${e.direction} ${e.payload}`)
      .join("\n");
  }
}
