/**
 * Training entry: fits the same architecture twice (plain float and
 * quantization-aware) on the synthetic byte dataset and reports both
 * accuracies. The quantized accuracy is measured with the integer
 * inference mirror, i.e. exactly what the hardware will compute.
 */

import { CLASSES, INPUT_LEN, makeDataset, Sample } from "./dataset";
import { classify, decodeInput, LayerSpec, Mlp, QuantLayer } from "./mlp";
import { Rng } from "./rng";

export interface TrainConfig {
  hidden: number;
  epochs: number;
  lr: number;
  samples: number;
  seed: number;
}

export const DEFAULT_CONFIG: TrainConfig = {
  hidden: 16,
  epochs: 40,
  lr: 0.03,
  samples: 900,
  seed: 7,
};

export interface TrainResult {
  floatAccuracy: number;
  quantAccuracy: number;
  layers: QuantLayer[];
  inputLen: number;
  test: Sample[];
}

function specs(cfg: TrainConfig): LayerSpec[] {
  return [
    { inDim: INPUT_LEN, outDim: cfg.hidden, act: "relu" },
    { inDim: cfg.hidden, outDim: CLASSES, act: "identity" },
  ];
}

function floatAccuracy(model: Mlp, samples: Sample[]): number {
  let hit = 0;
  for (const s of samples) {
    const acts = model.forwardFloat(decodeInput(s.bytes));
    const logits = acts[acts.length - 1];
    let best = 0;
    for (let j = 1; j < logits.length; j++) if (logits[j] > logits[best]) best = j;
    if (best === s.label) hit++;
  }
  return hit / samples.length;
}

function quantAccuracy(layers: QuantLayer[], samples: Sample[]): number {
  let hit = 0;
  for (const s of samples) if (classify(layers, s.bytes) === s.label) hit++;
  return hit / samples.length;
}

function fit(cfg: TrainConfig, quantized: boolean): Mlp {
  const { train } = makeDataset(cfg.samples, cfg.seed);
  const model = new Mlp(specs(cfg), cfg.seed ^ 0xbeef);
  const order = train.map((_, i) => i);
  const rng = new Rng(cfg.seed ^ 0xf00d);
  for (let epoch = 0; epoch < cfg.epochs; epoch++) {
    rng.shuffle(order);
    let loss = 0;
    for (const i of order) {
      loss += model.trainStep(decodeInput(train[i].bytes), train[i].label, cfg.lr, quantized);
    }
    if (!Number.isFinite(loss)) throw new Error(`training diverged at epoch ${epoch}`);
  }
  return model;
}

export function train(cfg: TrainConfig = DEFAULT_CONFIG): TrainResult {
  const { test } = makeDataset(cfg.samples, cfg.seed);
  const floatModel = fit(cfg, false);
  const qatModel = fit(cfg, true);
  const layers = qatModel.quantLayers();
  return {
    floatAccuracy: floatAccuracy(floatModel, test),
    quantAccuracy: quantAccuracy(layers, test),
    layers,
    inputLen: INPUT_LEN,
    test,
  };
}

/** Untrained export path: random-init weights still produce a valid file. */
export function exportUntrained(seed = 1): QuantLayer[] {
  return new Mlp(specs({ ...DEFAULT_CONFIG, seed }), seed).quantLayers();
}
