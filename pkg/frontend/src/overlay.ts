// Pure pixel math for the mask overlay: alpha-blend a red tint over the
// image, weighted by mask value and a global opacity. Operates on RGBA
// buffers so it can be unit-tested without a canvas.

export const TINT_RGB: readonly [number, number, number] = [255, 0, 0];

/**
 * Blend a red tint over `image` (RGBA) using `mask` (RGBA, grayscale in the
 * R channel) scaled by `opacity` in [0, 1]. Returns a new buffer; inputs are
 * not modified. Alpha channel passes through unchanged.
 */
export function blendMask(
  image: Uint8ClampedArray,
  mask: Uint8ClampedArray,
  opacity: number,
): Uint8ClampedArray<ArrayBuffer> {
  if (image.length !== mask.length) {
    throw new Error(
      `image and mask buffers differ in length: ${image.length} vs ${mask.length}`,
    );
  }
  if (image.length % 4 !== 0) {
    throw new Error("buffers must be RGBA (length divisible by 4)");
  }
  if (!(opacity >= 0 && opacity <= 1)) {
    throw new Error(`opacity must be in [0, 1], got ${opacity}`);
  }
  const out = new Uint8ClampedArray(image.length);
  for (let p = 0; p < image.length; p += 4) {
    const weight = (opacity * mask[p]) / 255;
    for (let c = 0; c < 3; c++) {
      out[p + c] = Math.round(
        image[p + c] * (1 - weight) + TINT_RGB[c] * weight,
      );
    }
    out[p + 3] = image[p + 3];
  }
  return out;
}
