/**
 * Typed bindings over the C scan kernel.
 *
 * Buffer contract (all row-major Float32Array, caller-owned):
 *   dt (T*D), A (D*N), B (T*N), C (T*N), x (T*D), y out (T*D).
 * The kernel writes only y; a status code reports null buffers, bad
 * dimensions, and (with debug checks on) non-finite inputs or state
 * invariant violations.
 */
import koffi from "koffi";
import { existsSync } from "node:fs";
import { createRequire } from "node:module";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

export interface ScanDims {
  T: number;
  D: number;
  N: number;
}

export interface ScanBuffers {
  dt: Float32Array;
  A: Float32Array;
  B: Float32Array;
  C: Float32Array;
  x: Float32Array;
}

export enum ScanStatus {
  Ok = 0,
  NullBuffer = 1,
  BadDims = 2,
  NonFinite = 3,
  BadState = 4,
  ThreadFail = 5,
}

function libraryPath(): string {
  const here = dirname(fileURLToPath(import.meta.url));
  const candidates = [
    join(here, "..", "build", "libfaptp_scan.so"),
    join(here, "..", "..", "build", "libfaptp_scan.so"),
  ];
  for (const p of candidates) {
    if (existsSync(p)) return p;
  }
  throw new Error(
    `native kernel not built (looked at ${candidates.join(", ")}); run: npm run build:native`,
  );
}

const lib = koffi.load(libraryPath());

const scanForwardNative = lib.func(
  "int faptp_scan_forward(int64_t T, int64_t D, int64_t N, const float *dt, const float *A, const float *B, const float *C, const float *x, float *y, int threads, int debug_checks)",
);
const scanVersionNative = lib.func("const char *faptp_scan_version()");

function checkLengths(dims: ScanDims, buf: ScanBuffers, y: Float32Array): void {
  const { T, D, N } = dims;
  const want: Array<[string, Float32Array, number]> = [
    ["dt", buf.dt, T * D],
    ["A", buf.A, D * N],
    ["B", buf.B, T * N],
    ["C", buf.C, T * N],
    ["x", buf.x, T * D],
    ["y", y, T * D],
  ];
  for (const [name, arr, len] of want) {
    if (arr.length !== len) {
      throw new RangeError(`${name} has length ${arr.length}, dims need ${len}`);
    }
  }
}

/** Run the kernel synchronously; returns the status code. */
export function scanForward(
  dims: ScanDims,
  buf: ScanBuffers,
  y: Float32Array,
  threads = 0,
  debugChecks = false,
): ScanStatus {
  checkLengths(dims, buf, y);
  return scanForwardNative(
    dims.T,
    dims.D,
    dims.N,
    buf.dt,
    buf.A,
    buf.B,
    buf.C,
    buf.x,
    y,
    threads,
    debugChecks ? 1 : 0,
  ) as ScanStatus;
}

/** Run the kernel on the libuv pool; callers may overlap invocations. */
export function scanForwardAsync(
  dims: ScanDims,
  buf: ScanBuffers,
  y: Float32Array,
  threads = 1,
  debugChecks = false,
): Promise<ScanStatus> {
  checkLengths(dims, buf, y);
  return new Promise((resolve, reject) => {
    scanForwardNative.async(
      dims.T,
      dims.D,
      dims.N,
      buf.dt,
      buf.A,
      buf.B,
      buf.C,
      buf.x,
      y,
      threads,
      debugChecks ? 1 : 0,
      (err: Error | null, code: number) =>
        err ? reject(err) : resolve(code as ScanStatus),
    );
  });
}

/** Semantic version string of the native kernel. */
export function scanVersion(): string {
  return scanVersionNative() as string;
}

/** Version declared by the npm package manifest (must match the kernel). */
export function packageVersion(): string {
  const require = createRequire(import.meta.url);
  const here = dirname(fileURLToPath(import.meta.url));
  for (const rel of ["../package.json", "../../package.json"]) {
    const p = join(here, rel);
    if (existsSync(p)) return (require(p) as { version: string }).version;
  }
  throw new Error("package.json not found");
}
