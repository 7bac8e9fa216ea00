/**
 * Trains the classifier and writes the artifacts the compiler consumes:
 *   model.kmodel   model description text
 *   weights.kwgt   quantized weights
 *   inputs.hex     held-out sample inputs, one hex line each
 *   labels.json    this trainer's integer-inference labels for those inputs
 *   metrics.json   float vs quantized accuracy
 *
 * Usage: node dist/cli.js [outDir]
 */

import * as fs from "fs";
import * as path from "path";

import { classify } from "./mlp";
import { modelText, writeKwgt } from "./kwgt";
import { DEFAULT_CONFIG, train } from "./train";

function main(): number {
  const outDir = process.argv[2] ?? "artifacts";
  fs.mkdirSync(outDir, { recursive: true });
  const result = train(DEFAULT_CONFIG);

  fs.writeFileSync(path.join(outDir, "model.kmodel"), modelText(result.inputLen, result.layers));
  fs.writeFileSync(path.join(outDir, "weights.kwgt"), writeKwgt(result.inputLen, result.layers));

  const held = result.test.slice(0, 50);
  fs.writeFileSync(
    path.join(outDir, "inputs.hex"),
    held.map((s) => Buffer.from(s.bytes).toString("hex")).join("\n") + "\n"
  );
  fs.writeFileSync(
    path.join(outDir, "labels.json"),
    JSON.stringify(held.map((s) => classify(result.layers, s.bytes))) + "\n"
  );
  fs.writeFileSync(
    path.join(outDir, "metrics.json"),
    JSON.stringify(
      { float_accuracy: result.floatAccuracy, quant_accuracy: result.quantAccuracy },
      null,
      2
    ) + "\n"
  );
  console.log(
    `float accuracy ${(result.floatAccuracy * 100).toFixed(1)}%, ` +
      `quantized ${(result.quantAccuracy * 100).toFixed(1)}%; artifacts in ${outDir}/`
  );
  return 0;
}

process.exitCode = main();
