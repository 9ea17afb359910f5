import { describe, expect, it } from "vitest";

import { parseServerMsg, serializeClientMsg } from "../src/protocol";

describe("protocol parsing", () => {
  it("accepts well-formed frames", () => {
    const msg = parseServerMsg(JSON.stringify({
      type: "frame", t: 3, link_poses: [[0, 1, 2]], root_h: 0.5,
      jerk_window: null, floating_window: 1.2,
    }));
    expect(msg?.type).toBe("frame");
    if (msg?.type === "frame") {
      expect(msg.t).toBe(3);
      expect(msg.link_poses[0][2]).toBe(2);
    }
  });

  it("rejects malformed payloads", () => {
    expect(parseServerMsg("not json")).toBeNull();
    expect(parseServerMsg("42")).toBeNull();
    expect(parseServerMsg(JSON.stringify({ type: "mystery" }))).toBeNull();
    expect(parseServerMsg(JSON.stringify({ type: "frame" }))).toBeNull();
    expect(parseServerMsg(JSON.stringify({ type: "ack" }))).toBeNull();
  });

  it("serializes every client message verbatim", () => {
    expect(JSON.parse(serializeClientMsg({ type: "pause" }))).toEqual(
      { type: "pause" });
    expect(JSON.parse(serializeClientMsg(
      { type: "command", text: "a person walks forward" }))).toEqual(
      { type: "command", text: "a person walks forward" });
    expect(JSON.parse(serializeClientMsg({ type: "set_seed", seed: 9 })))
      .toEqual({ type: "set_seed", seed: 9 });
  });
});
