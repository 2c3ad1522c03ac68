/**
 * Plain TypeScript sequential scan in double precision. It exists so the
 * package can sanity-check itself without any external process; the
 * authoritative parity target stays the vector files from the reference
 * implementation.
 */
import type { ScanBuffers, ScanDims } from "./native.js";

export function scanReference(dims: ScanDims, buf: ScanBuffers): Float64Array {
  const { T, D, N } = dims;
  const y = new Float64Array(T * D);
  const h = new Float64Array(N);
  for (let d = 0; d < D; d++) {
    h.fill(0);
    for (let t = 0; t < T; t++) {
      const dt = buf.dt[t * D + d];
      const bx = dt * buf.x[t * D + d];
      let acc = 0;
      for (let n = 0; n < N; n++) {
        const hn = Math.exp(dt * buf.A[d * N + n]) * h[n] + bx * buf.B[t * N + n];
        h[n] = hn;
        acc += hn * buf.C[t * N + n];
      }
      y[t * D + d] = acc;
    }
  }
  return y;
}
