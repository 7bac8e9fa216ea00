/**
 * Fix-8 (Q2.5) quantizer, bit-identical to the simulator's arithmetic.
 *
 * A value is one byte: 1 sign, 2 integer, 5 fractional bits, two's
 * complement; real value = signed(byte) / 32. Accumulation happens in wide
 * integers with 10 fractional bits (exact for products of two Fix8 values).
 * Every rounding is to-nearest with ties away from zero, saturating.
 */

export const SCALE = 32;
export const FIX8_MIN = -4.0;
export const FIX8_MAX = 127 / 32;

export function toSigned(bits: number): number {
  return bits >= 128 ? bits - 256 : bits;
}

export function decode(bits: number): number {
  return toSigned(bits) / SCALE;
}

/** Nearest Fix8 bit pattern: round half away from zero, saturate. */
export function encode(x: number): number {
  if (!Number.isFinite(x)) throw new Error(`cannot encode non-finite value ${x}`);
  const s = x * SCALE;
  let q = s >= 0 ? Math.floor(s + 0.5) : Math.ceil(s - 0.5);
  q = Math.max(-128, Math.min(127, q));
  return q & 0xff;
}

/** Quantize a real to the nearest representable real (encode then decode). */
export function quantize(x: number): number {
  return decode(encode(x));
}

/** Exact product of two bit patterns as a wide integer (10 fractional bits). */
export function mulBits(a: number, b: number): number {
  return toSigned(a) * toSigned(b);
}

/** Wide accumulator (10 fractional bits) -> Fix8 byte, ties away from zero. */
export function requantize(acc: number): number {
  const q = acc >= 0 ? (acc + 16) >> 5 : -((-acc + 16) >> 5);
  return Math.max(-128, Math.min(127, q)) & 0xff;
}

export type ActKind = "relu" | "sigmoid" | "identity";

function actFn(kind: ActKind): (x: number) => number {
  switch (kind) {
    case "relu":
      return (x) => (x > 0 ? x : 0);
    case "sigmoid":
      return (x) => (x >= 0 ? 1 / (1 + Math.exp(-x)) : Math.exp(x) / (1 + Math.exp(x)));
    case "identity":
      return (x) => x;
  }
}

/** 256-entry table: entries[b] = encode(f(decode(b))). */
export function buildActTable(kind: ActKind): Uint8Array {
  const f = actFn(kind);
  const t = new Uint8Array(256);
  for (let b = 0; b < 256; b++) t[b] = encode(f(decode(b)));
  return t;
}
