/** Pixel math for the weight-map overlay pane. */

/**
 * Blend two equally sized RGBA buffers: out = (1 - opacity) * base +
 * opacity * overlay, alpha forced opaque. At opacity 0.5 every channel is
 * the exact average (rounded to nearest).
 */
export function compositeOverlay(
  base: Uint8ClampedArray,
  overlay: Uint8ClampedArray,
  opacity: number,
): Uint8ClampedArray {
  if (base.length !== overlay.length) {
    throw new Error(
      `buffer sizes differ: ${base.length} vs ${overlay.length}`,
    );
  }
  if (!(opacity >= 0 && opacity <= 1)) {
    throw new Error(`opacity must be in [0, 1], got ${opacity}`);
  }
  const out = new Uint8ClampedArray(base.length);
  for (let i = 0; i < base.length; i += 4) {
    for (let c = 0; c < 3; c++) {
      out[i + c] = Math.round(
        (1 - opacity) * base[i + c] + opacity * overlay[i + c],
      );
    }
    out[i + 3] = 255;
  }
  return out;
}
