/**
 * Small dense network with quantization-aware training.
 *
 * The QAT forward pass runs the exact deployed pipeline on the Fix8 grid:
 * quantized weights and biases, exact accumulation (grid values are small
 * dyadic rationals, so float64 sums are exact), one requantization per
 * output, then the activation. Gradients flow with a straight-through
 * estimator: rounding is treated as identity inside the representable
 * range and zero outside; weights are clamped back to the range after
 * every update.
 *
 * `intForward` is the pure-integer mirror of the inference hardware and is
 * what the reported quantized accuracy and exported golden labels use.
 */

import { ActKind, buildActTable, decode, encode, FIX8_MAX, FIX8_MIN, mulBits, quantize, requantize, toSigned } from "./fix8";
import { Rng } from "./rng";

export interface LayerSpec {
  inDim: number;
  outDim: number;
  act: ActKind;
}

export interface QuantLayer {
  rows: number;
  cols: number;
  weights: Uint8Array; // row-major (rows x cols)
  bias: Uint8Array; // cols
  act: ActKind;
}

export class Mlp {
  specs: LayerSpec[];
  w: Float64Array[];
  b: Float64Array[];

  constructor(specs: LayerSpec[], seed: number) {
    this.specs = specs;
    const rng = new Rng(seed);
    this.w = specs.map((s) => {
      const arr = new Float64Array(s.inDim * s.outDim);
      const std = 1 / Math.sqrt(s.inDim);
      for (let i = 0; i < arr.length; i++) arr[i] = rng.gauss(0, std);
      return arr;
    });
    this.b = specs.map((s) => new Float64Array(s.outDim));
  }

  /** Plain float forward; returns activations per layer (incl. input). */
  forwardFloat(input: Float64Array): Float64Array[] {
    const acts = [input];
    for (let l = 0; l < this.specs.length; l++) {
      const { inDim, outDim, act } = this.specs[l];
      const x = acts[l];
      const out = new Float64Array(outDim);
      for (let j = 0; j < outDim; j++) {
        let z = this.b[l][j];
        for (let i = 0; i < inDim; i++) z += x[i] * this.w[l][i * outDim + j];
        out[j] = act === "relu" ? Math.max(z, 0) : z;
      }
      acts.push(out);
    }
    return acts;
  }

  /**
   * Quantized forward for training: returns per-layer quantized activations
   * and the pre-requantization sums (needed for the STE mask).
   */
  forwardQat(input: Float64Array): { acts: Float64Array[]; sums: Float64Array[] } {
    const acts = [input];
    const sums: Float64Array[] = [];
    for (let l = 0; l < this.specs.length; l++) {
      const { inDim, outDim, act } = this.specs[l];
      const x = acts[l];
      const z = new Float64Array(outDim);
      const out = new Float64Array(outDim);
      for (let j = 0; j < outDim; j++) {
        let s = quantize(this.b[l][j]);
        for (let i = 0; i < inDim; i++) s += x[i] * quantize(this.w[l][i * outDim + j]);
        z[j] = s;
        const q = quantize(s);
        out[j] = act === "relu" ? Math.max(q, 0) : q;
      }
      sums.push(z);
      acts.push(out);
    }
    return { acts, sums };
  }

  /** One SGD step on softmax cross-entropy; returns the loss. */
  trainStep(input: Float64Array, label: number, lr: number, quantized: boolean): number {
    const fwd = quantized ? this.forwardQat(input) : { acts: this.forwardFloat(input), sums: null };
    const acts = fwd.acts;
    const logits = acts[acts.length - 1];
    const m = Math.max(...logits);
    const exps = Array.from(logits, (v) => Math.exp(v - m));
    const total = exps.reduce((a, v) => a + v, 0);
    const probs = exps.map((v) => v / total);
    const loss = -Math.log(Math.max(probs[label], 1e-12));

    let grad = new Float64Array(logits.length);
    for (let j = 0; j < logits.length; j++) grad[j] = probs[j] - (j === label ? 1 : 0);

    for (let l = this.specs.length - 1; l >= 0; l--) {
      const { inDim, outDim, act } = this.specs[l];
      const x = acts[l];
      const out = acts[l + 1];
      const dz = new Float64Array(outDim);
      for (let j = 0; j < outDim; j++) {
        let g = grad[j];
        if (act === "relu" && out[j] <= 0) g = 0;
        if (quantized && fwd.sums) {
          const s = fwd.sums[l][j];
          if (s < FIX8_MIN || s > FIX8_MAX) g = 0; // saturated requantization
        }
        dz[j] = g;
      }
      const dx = new Float64Array(inDim);
      for (let j = 0; j < outDim; j++) {
        const g = dz[j];
        if (g === 0) continue;
        for (let i = 0; i < inDim; i++) {
          dx[i] += g * this.w[l][i * outDim + j];
          this.w[l][i * outDim + j] -= lr * g * x[i];
        }
        this.b[l][j] -= lr * g;
      }
      if (quantized) {
        // projected SGD: keep parameters on the representable range
        for (let i = 0; i < this.w[l].length; i++)
          this.w[l][i] = Math.min(FIX8_MAX, Math.max(FIX8_MIN, this.w[l][i]));
        for (let j = 0; j < outDim; j++)
          this.b[l][j] = Math.min(FIX8_MAX, Math.max(FIX8_MIN, this.b[l][j]));
      }
      grad = dx;
    }
    return loss;
  }

  /** Quantized parameters as Fix8 bytes, the exported artifact. */
  quantLayers(): QuantLayer[] {
    return this.specs.map((s, l) => {
      const weights = new Uint8Array(s.inDim * s.outDim);
      for (let i = 0; i < weights.length; i++) weights[i] = encode(this.w[l][i]);
      const bias = new Uint8Array(s.outDim);
      for (let j = 0; j < s.outDim; j++) bias[j] = encode(this.b[l][j]);
      return { rows: s.inDim, cols: s.outDim, weights, bias, act: s.act };
    });
  }
}

export function decodeInput(bytes: Uint8Array): Float64Array {
  const out = new Float64Array(bytes.length);
  for (let i = 0; i < bytes.length; i++) out[i] = decode(bytes[i]);
  return out;
}

const tables = new Map<ActKind, Uint8Array>();

function actTable(kind: ActKind): Uint8Array {
  let t = tables.get(kind);
  if (!t) {
    t = buildActTable(kind);
    tables.set(kind, t);
  }
  return t;
}

/** Pure integer inference over quantized layers; mirrors the hardware. */
export function intForward(layers: QuantLayer[], input: Uint8Array): Uint8Array {
  let x = input;
  for (const layer of layers) {
    const table = actTable(layer.act);
    const out = new Uint8Array(layer.cols);
    for (let j = 0; j < layer.cols; j++) {
      let acc = mulBits(layer.bias[j], encode(1.0)); // bias rides the constant-one lane
      for (let i = 0; i < layer.rows; i++) acc += mulBits(x[i], layer.weights[i * layer.cols + j]);
      out[j] = table[requantize(acc)];
    }
    x = out;
  }
  return x;
}

/** Smallest index attaining the maximum decoded value. */
export function argmaxBits(bits: Uint8Array): number {
  let best = 0;
  for (let i = 1; i < bits.length; i++) if (toSigned(bits[i]) > toSigned(bits[best])) best = i;
  return best;
}

export function classify(layers: QuantLayer[], input: Uint8Array): number {
  return argmaxBits(intForward(layers, input));
}
