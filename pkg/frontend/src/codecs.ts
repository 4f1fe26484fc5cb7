/** Binary decoders for the image formats the server speaks.
 *
 * Browsers render neither PPM nor PFM, so the console decodes both into
 * typed arrays and paints them onto canvases itself.
 */

import type { Frame, ProbMap } from "./types.js";

export class CodecError extends Error {}

/** Reads ASCII header tokens (magic, dims, ...) skipping whitespace and
 * `#` comments, and returns them with the offset of the binary body. */
function headerTokens(bytes: Uint8Array, count: number): [string[], number] {
  const tokens: string[] = [];
  let i = 0;
  while (tokens.length < count) {
    while (i < bytes.length && isSpace(bytes[i])) i++;
    if (i < bytes.length && bytes[i] === 0x23 /* # */) {
      while (i < bytes.length && bytes[i] !== 0x0a) i++;
      continue;
    }
    let start = i;
    while (i < bytes.length && !isSpace(bytes[i])) i++;
    if (i === start) throw new CodecError("truncated header");
    tokens.push(String.fromCharCode(...bytes.subarray(start, i)));
  }
  if (i >= bytes.length || !isSpace(bytes[i])) {
    throw new CodecError("header not terminated");
  }
  return [tokens, i + 1];
}

function isSpace(b: number): boolean {
  return b === 0x20 || b === 0x09 || b === 0x0a || b === 0x0d;
}

function parseDim(token: string, what: string): number {
  const n = Number(token);
  if (!Number.isInteger(n) || n <= 0) {
    throw new CodecError(`bad ${what} ${JSON.stringify(token)}`);
  }
  return n;
}

/** Binary PPM (P6, maxval 255) to an RGBA frame. */
export function decodePPM(buffer: ArrayBuffer): Frame {
  const bytes = new Uint8Array(buffer);
  const [tokens, body] = headerTokens(bytes, 4);
  if (tokens[0] !== "P6") throw new CodecError(`not a P6 file: ${tokens[0]}`);
  const width = parseDim(tokens[1], "width");
  const height = parseDim(tokens[2], "height");
  if (tokens[3] !== "255") throw new CodecError(`unsupported maxval ${tokens[3]}`);
  const expected = width * height * 3;
  if (bytes.length - body !== expected) {
    throw new CodecError(`body has ${bytes.length - body} bytes, expected ${expected}`);
  }
  const rgba = new Uint8ClampedArray(width * height * 4);
  for (let p = 0; p < width * height; p++) {
    rgba[p * 4] = bytes[body + p * 3];
    rgba[p * 4 + 1] = bytes[body + p * 3 + 1];
    rgba[p * 4 + 2] = bytes[body + p * 3 + 2];
    rgba[p * 4 + 3] = 255;
  }
  return { width, height, rgba };
}

/** Grayscale PFM ("Pf") to a probability map. Negative scale means little
 * endian; rows are stored bottom-up and flipped here to top-down. */
export function decodePFM(buffer: ArrayBuffer): ProbMap {
  const bytes = new Uint8Array(buffer);
  const [tokens, body] = headerTokens(bytes, 4);
  if (tokens[0] !== "Pf") throw new CodecError(`not a Pf file: ${tokens[0]}`);
  const width = parseDim(tokens[1], "width");
  const height = parseDim(tokens[2], "height");
  const scale = Number(tokens[3]);
  if (!Number.isFinite(scale) || scale === 0) {
    throw new CodecError(`bad scale ${tokens[3]}`);
  }
  const expected = width * height * 4;
  if (bytes.length - body !== expected) {
    throw new CodecError(`body has ${bytes.length - body} bytes, expected ${expected}`);
  }
  const littleEndian = scale < 0;
  const view = new DataView(buffer, body);
  const values = new Float32Array(width * height);
  for (let row = 0; row < height; row++) {
    const src = (height - 1 - row) * width; // bottom-up storage
    for (let col = 0; col < width; col++) {
      values[row * width + col] = view.getFloat32((src + col) * 4, littleEndian);
    }
  }
  return { width, height, values };
}
