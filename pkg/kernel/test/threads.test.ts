import { describe, expect, it } from "vitest";

import { ScanStatus, scanForward, scanForwardAsync } from "../src/index.js";
import { maxAbsDiff, randomCase } from "./util.js";

// B3: 8 concurrent callers on disjoint buffers reproduce serial results
// bit-exactly. Concurrency comes from overlapped async FFI invocations on
// the libuv pool; each call owns its buffers.
describe("thread safety", () => {
  it("8 concurrent callers match serial execution bitwise", async () => {
    const dims = { T: 256, D: 16, N: 12 };
    const cases = Array.from({ length: 8 }, (_, i) => randomCase(100 + i, dims));

    const serial = cases.map((c) => {
      const y = new Float32Array(dims.T * dims.D);
      expect(scanForward(c.dims, c.buffers, y, 1)).toBe(ScanStatus.Ok);
      return y;
    });

    const outputs = cases.map(() => new Float32Array(dims.T * dims.D));
    const statuses = await Promise.all(
      cases.map((c, i) => scanForwardAsync(c.dims, c.buffers, outputs[i], 1)),
    );
    for (const s of statuses) {
      expect(s).toBe(ScanStatus.Ok);
    }
    for (let i = 0; i < cases.length; i++) {
      expect(maxAbsDiff(outputs[i], serial[i])).toBe(0);
    }
  });

  it("repeated concurrent rounds stay deterministic", async () => {
    const dims = { T: 128, D: 8, N: 8 };
    const cs = Array.from({ length: 8 }, (_, i) => randomCase(200 + i, dims));
    const first = await Promise.all(
      cs.map(async (c) => {
        const y = new Float32Array(dims.T * dims.D);
        await scanForwardAsync(c.dims, c.buffers, y, 2);
        return y;
      }),
    );
    const second = await Promise.all(
      cs.map(async (c) => {
        const y = new Float32Array(dims.T * dims.D);
        await scanForwardAsync(c.dims, c.buffers, y, 2);
        return y;
      }),
    );
    for (let i = 0; i < cs.length; i++) {
      expect(maxAbsDiff(first[i], second[i])).toBe(0);
    }
  });
});
