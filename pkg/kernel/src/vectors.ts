/**
 * Reader for the shared scan test-vector files.
 *
 * Layout (little-endian): magic "FSCN", uint32 version (1), uint32 count;
 * per record a uint32 dimension header (T, D, N) followed by float32
 * arrays dt (T*D), A (D*N), B (T*N), C (T*N), x (T*D) and the expected
 * output y (T*D) as produced by the reference sequential scan.
 */
import { readFileSync } from "node:fs";

import type { ScanBuffers, ScanDims } from "./native.js";

export interface ScanCase {
  dims: ScanDims;
  buffers: ScanBuffers;
  expected: Float32Array;
}

const MAGIC = 0x4e435346; // "FSCN" little-endian

export function readTestVectors(path: string): ScanCase[] {
  const raw = readFileSync(path);
  const view = new DataView(raw.buffer, raw.byteOffset, raw.byteLength);
  if (view.getUint32(0, true) !== MAGIC) {
    throw new Error(`${path}: not a scan test-vector file`);
  }
  const version = view.getUint32(4, true);
  if (version !== 1) {
    throw new Error(`${path}: unsupported version ${version}`);
  }
  const count = view.getUint32(8, true);
  let offset = 12;
  const cases: ScanCase[] = [];

  const f32 = (len: number): Float32Array => {
    const out = new Float32Array(len);
    for (let i = 0; i < len; i++) {
      out[i] = view.getFloat32(offset, true);
      offset += 4;
    }
    return out;
  };

  for (let c = 0; c < count; c++) {
    const T = view.getUint32(offset, true);
    const D = view.getUint32(offset + 4, true);
    const N = view.getUint32(offset + 8, true);
    offset += 12;
    cases.push({
      dims: { T, D, N },
      buffers: {
        dt: f32(T * D),
        A: f32(D * N),
        B: f32(T * N),
        C: f32(T * N),
        x: f32(T * D),
      },
      expected: f32(T * D),
    });
  }
  if (offset !== raw.byteLength) {
    throw new Error(`${path}: ${raw.byteLength - offset} trailing bytes`);
  }
  return cases;
}
