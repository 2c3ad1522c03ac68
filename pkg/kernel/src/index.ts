export {
  ScanStatus,
  packageVersion,
  scanForward,
  scanForwardAsync,
  scanVersion,
} from "./native.js";
export type { ScanBuffers, ScanDims } from "./native.js";
export { scanReference } from "./reference.js";
export { readTestVectors } from "./vectors.js";
export type { ScanCase } from "./vectors.js";
