/**
 * End-to-end against the real session server: the brush edit made with
 * the UI's mask tools travels through the UI's PNG encoder, and the
 * server must decode it to exactly the raster the oracle predicts
 * (verified via the sha256 the server returns over its decoded 0/1
 * raster).
 */

import { createHash } from "node:crypto";
import { spawn, type ChildProcess } from "node:child_process";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { applyStroke, decodeMaskPng, encodeMaskPng, type MaskRaster } from "../src/mask.js";
import { base64ToBytes, bytesToBase64 } from "../src/png.js";
import { nodeZlib } from "./node-zlib.js";

let server: ChildProcess | null = null;
let base = "";

const SESSION_BODY = {
  config: { k: 4, K: 3, patch_size: 16, seed: 11 },
  data: { kind: "synthetic", seed: 11, count: 3, image_size: 48 },
};

beforeAll(async () => {
  server = spawn("python3", ["-m", "streamseg.cli", "serve", "--host", "127.0.0.1", "--port", "0"], {
    stdio: ["ignore", "pipe", "pipe"],
  });
  base = await new Promise<string>((resolve, reject) => {
    const timer = setTimeout(() => reject(new Error("server did not start")), 20000);
    let buffer = "";
    server!.stdout!.on("data", (chunk: Buffer) => {
      buffer += chunk.toString();
      const match = buffer.match(/serving on (http:\/\/[\d.]+:\d+)/);
      if (match) {
        clearTimeout(timer);
        resolve(match[1]);
      }
    });
    server!.stderr!.on("data", () => {});
    server!.on("exit", (code) => reject(new Error(`server exited early: ${code}`)));
  });
}, 30000);

afterAll(() => {
  server?.kill();
});

function sha256OfRaster(mask: MaskRaster): string {
  return createHash("sha256").update(Buffer.from(mask.data)).digest("hex");
}

describe("interactive round-trip", () => {
  it("submits a programmatic brush stroke the server decodes exactly", async () => {
    const api = new ApiClient(base);
    const sessionId = await api.createSession(SESSION_BODY);

    const first = await api.next(sessionId);
    expect(first.kind).toBe("step");
    if (first.kind !== "step") return;
    expect(first.payload.step).toBe(0);

    // a second fetch without a decision must be refused
    const conflicting = await api.next(sessionId);
    expect(conflicting.kind).toBe("pending");

    // start from the fused mask like the UI does, apply a brush stroke
    const edit = await decodeMaskPng(base64ToBytes(first.payload.fused_mask_b64), nodeZlib);
    const stroke: Array<[number, number]> = [[5.2, 4.1], [9.7, 20.3], [14.0, 26.5]];
    applyStroke(edit, stroke, 2.5, 1);
    applyStroke(edit, [[30.5, 30.5], [34.2, 12.8]], 1.5, 0);

    const stateBefore = await api.state(sessionId);
    const png = await encodeMaskPng(edit, nodeZlib);
    const result = await api.rectify(sessionId, bytesToBase64(png));

    // pixel-exact: the server's decoded raster hashes to our raster
    expect(result.mask_sha256).toBe(sha256OfRaster(edit));
    expect(result.record.rectified).toBe(true);
    expect(result.record.alpha_star).not.toBeNull();
    expect(result.record.batch_len).toBe(1);

    const stateAfterRectify = await api.state(sessionId);
    expect(stateAfterRectify.param_checksum).not.toBe(stateBefore.param_checksum);
    expect(stateAfterRectify.step_count).toBe(1);

    // a skipped step leaves the learner untouched
    const second = await api.next(sessionId);
    expect(second.kind).toBe("step");
    const skipRecord = await api.skip(sessionId);
    expect(skipRecord.rectified).toBe(false);
    expect(skipRecord.alpha_star).toBeNull();
    const stateAfterSkip = await api.state(sessionId);
    expect(stateAfterSkip.param_checksum).toBe(stateAfterRectify.param_checksum);

    // drain the stream: one sample left, then done
    const third = await api.next(sessionId);
    expect(third.kind).toBe("step");
    await api.skip(sessionId);
    const done = await api.next(sessionId);
    expect(done.kind).toBe("done");
  }, 60000);

  it("mask encoding survives a full server round-trip unchanged", async () => {
    const api = new ApiClient(base);
    const sessionId = await api.createSession(SESSION_BODY);
    const step = await api.next(sessionId);
    if (step.kind !== "step") throw new Error("expected a step");
    // the fused mask we received, re-encoded with the UI codec and
    // submitted untouched, must hash to the raster we decoded
    const fused = await decodeMaskPng(base64ToBytes(step.payload.fused_mask_b64), nodeZlib);
    const png = await encodeMaskPng(fused, nodeZlib);
    const result = await api.rectify(sessionId, bytesToBase64(png));
    expect(result.mask_sha256).toBe(sha256OfRaster(fused));
  }, 60000);
});
