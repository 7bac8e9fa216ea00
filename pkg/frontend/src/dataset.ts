/**
 * Synthetic raw-bytes classification task: three traffic-like classes, each
 * marked by a handful of characteristic byte positions under heavy noise;
 * all other bytes are uniform noise per sample. Samples are 64-byte windows
 * whose bytes are consumed as Fix8 bit patterns downstream.
 */

import { Rng } from "./rng";

export interface Sample {
  bytes: Uint8Array; // length 64
  label: number; // 0..2
}

export const INPUT_LEN = 64;
export const CLASSES = 3;
const MARKS_PER_CLASS = 8;

function markPositions(k: number): number[] {
  const out: number[] = [];
  for (let i = k * 2; i < INPUT_LEN && out.length < MARKS_PER_CLASS; i += 7) out.push(i);
  return out;
}

export function makeDataset(
  count: number,
  seed: number
): { train: Sample[]; test: Sample[] } {
  const rng = new Rng(seed);
  const marks = Array.from({ length: CLASSES }, (_, k) => markPositions(k));
  const samples: Sample[] = [];
  for (let n = 0; n < count; n++) {
    const label = n % CLASSES;
    const bytes = new Uint8Array(INPUT_LEN);
    for (let i = 0; i < INPUT_LEN; i++) bytes[i] = rng.int(0, 255);
    for (const pos of marks[label]) {
      const v = 60 + 26 * label + rng.int(-30, 30);
      bytes[pos] = Math.max(0, Math.min(255, v));
    }
    samples.push({ bytes, label });
  }
  rng.shuffle(samples);
  const split = Math.floor(count * 0.75);
  return { train: samples.slice(0, split), test: samples.slice(split) };
}
