// Editable-region overlays. RLE masks come from the API (row-major counts,
// alternating runs of 0s then 1s); tinting is non-destructive so toggling
// the overlay off restores the original pixels exactly.

import type { RleMask } from "./types.js";

export function decodeRle(mask: RleMask): Uint8Array {
  const total = mask.width * mask.height;
  const bits = new Uint8Array(total);
  let pos = 0;
  let value = 0;
  for (const run of mask.counts) {
    if (run < 0 || pos + run > total) {
      throw new Error("invalid RLE runs for mask dimensions");
    }
    if (value) bits.fill(1, pos, pos + run);
    pos += run;
    value = 1 - value;
  }
  if (pos !== total) {
    throw new Error("RLE runs do not cover the mask");
  }
  return bits;
}

export interface TintOptions {
  r: number;
  g: number;
  b: number;
  alpha: number; // 0..1 blend weight of the tint
}

const DEFAULT_TINT: TintOptions = { r: 255, g: 64, b: 64, alpha: 0.45 };

/**
 * Return a new RGBA buffer with the editable region tinted. The input buffer
 * is never mutated — the caller re-renders it untouched when the overlay is
 * toggled off.
 */
export function tintEditableRegion(
  rgba: Uint8ClampedArray,
  bits: Uint8Array,
  options: TintOptions = DEFAULT_TINT,
): Uint8ClampedArray<ArrayBuffer> {
  if (rgba.length !== bits.length * 4) {
    throw new Error("pixel buffer does not match mask dimensions");
  }
  const out = new Uint8ClampedArray(rgba);
  const { r, g, b, alpha } = options;
  for (let i = 0; i < bits.length; i++) {
    if (!bits[i]) continue;
    const o = i * 4;
    out[o] = Math.round((1 - alpha) * out[o] + alpha * r);
    out[o + 1] = Math.round((1 - alpha) * out[o + 1] + alpha * g);
    out[o + 2] = Math.round((1 - alpha) * out[o + 2] + alpha * b);
  }
  return out;
}
