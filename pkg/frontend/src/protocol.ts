/** Wire protocol for the live control service (mirrors the server). */

export interface LinkSpec {
  name: string;
  length: number;
  radius: number;
}

export interface JointSpec {
  name: string;
  parent: string;
  child: string;
}

export interface Topology {
  links: LinkSpec[];
  joints: JointSpec[];
  root: string;
  foot_links: string[];
  standing_root_height: number;
}

export interface HelloMsg {
  type: "hello";
  topology: Topology;
}

export interface FrameMsg {
  type: "frame";
  t: number;
  link_poses: [number, number, number][];
  root_h: number;
  jerk_window: number | null;
  floating_window: number | null;
}

export interface AckMsg {
  type: "ack";
  for: string;
}

export interface ErrorMsg {
  type: "error";
  message: string;
}

export type ServerMsg = HelloMsg | FrameMsg | AckMsg | ErrorMsg;

export type ClientMsg =
  | { type: "command"; text: string }
  | { type: "reset"; pose: string }
  | { type: "pause" }
  | { type: "resume" }
  | { type: "set_seed"; seed: number };

/** Parse one server message; returns null on anything malformed. */
export function parseServerMsg(raw: string): ServerMsg | null {
  let doc: unknown;
  try {
    doc = JSON.parse(raw);
  } catch {
    return null;
  }
  if (typeof doc !== "object" || doc === null) return null;
  const msg = doc as Record<string, unknown>;
  switch (msg.type) {
    case "hello":
      if (typeof msg.topology !== "object" || msg.topology === null) return null;
      return msg as unknown as HelloMsg;
    case "frame":
      if (typeof msg.t !== "number" || !Array.isArray(msg.link_poses)) return null;
      return msg as unknown as FrameMsg;
    case "ack":
      if (typeof msg.for !== "string") return null;
      return msg as unknown as AckMsg;
    case "error":
      if (typeof msg.message !== "string") return null;
      return msg as unknown as ErrorMsg;
    default:
      return null;
  }
}

export function serializeClientMsg(msg: ClientMsg): string {
  return JSON.stringify(msg);
}
