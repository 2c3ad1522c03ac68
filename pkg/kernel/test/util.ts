import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

import type { ScanBuffers, ScanDims } from "../src/index.js";

export const DATA_DIR = join(
  dirname(fileURLToPath(import.meta.url)),
  "..",
  "test-data",
);
export const VECTORS_PATH = join(DATA_DIR, "vectors.bin");
export const TIMING_PATH = VECTORS_PATH + ".reference_timing.json";

/** Small deterministic PRNG (mulberry32); fine for generating test inputs. */
export function prng(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a |= 0;
    a = (a + 0x6d2b79f5) | 0;
    let t = Math.imul(a ^ (a >>> 15), 1 | a);
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t;
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

export function randomCase(
  seed: number,
  dims: ScanDims = { T: 24, D: 6, N: 5 },
): { dims: ScanDims; buffers: ScanBuffers } {
  const rand = prng(seed + 1);
  const { T, D, N } = dims;
  const fill = (len: number, fn: () => number) => {
    const a = new Float32Array(len);
    for (let i = 0; i < len; i++) a[i] = fn();
    return a;
  };
  const normal = () => {
    const u = Math.max(rand(), 1e-12);
    const v = rand();
    return Math.sqrt(-2 * Math.log(u)) * Math.cos(2 * Math.PI * v) * 0.5;
  };
  return {
    dims,
    buffers: {
      dt: fill(T * D, () => 0.05 + 0.25 * rand()),
      A: fill(D * N, () => -(0.5 + 2.0 * rand())),
      B: fill(T * N, normal),
      C: fill(T * N, normal),
      x: fill(T * D, normal),
    },
  };
}

export function maxAbsDiff(a: Float32Array, b: Float32Array): number {
  let worst = 0;
  for (let i = 0; i < a.length; i++) {
    worst = Math.max(worst, Math.abs(a[i] - b[i]));
  }
  return worst;
}
