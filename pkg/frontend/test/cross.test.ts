/**
 * Cross-component checks: the exported model must load cleanly in the
 * simulator package and classify identically to its reference inference.
 * The simulator is reached only through its public surfaces: the KWGT and
 * model-text files and the `kscope` command line.
 */

import { execFileSync } from "child_process";
import * as fs from "fs";
import * as os from "os";
import * as path from "path";
import { beforeAll, describe, expect, it } from "vitest";

import { classify } from "../src/mlp";
import { modelText, writeKwgt } from "../src/kwgt";
import { DEFAULT_CONFIG, train, TrainResult } from "../src/train";

function kscope(args: string[], opts: { cwd?: string } = {}): string {
  return execFileSync("python3", ["-m", "kscope.cli", ...args], {
    encoding: "utf8",
    cwd: opts.cwd,
  });
}

describe("cross-component golden checks", () => {
  let dir: string;
  let result: TrainResult;

  beforeAll(() => {
    dir = fs.mkdtempSync(path.join(os.tmpdir(), "kscope-trainer-"));
    result = train({ ...DEFAULT_CONFIG, epochs: 12 });
    fs.writeFileSync(path.join(dir, "model.kmodel"), modelText(result.inputLen, result.layers));
    fs.writeFileSync(path.join(dir, "weights.kwgt"), writeKwgt(result.inputLen, result.layers));
  }, 120000);

  it("exported weights compile cleanly for the fast process element", () => {
    const out = kscope([
      "compile",
      path.join(dir, "model.kmodel"),
      "--weights",
      path.join(dir, "weights.kwgt"),
      "-o",
      path.join(dir, "model.kprg"),
    ]);
    expect(out).toContain("compiled FPE program");
    expect(fs.existsSync(path.join(dir, "model.kprg"))).toBe(true);
  });

  it("labels match the simulator's reference inference on 50 held-out samples", () => {
    const held = result.test.slice(0, 50);
    const inputsFile = path.join(dir, "inputs.hex");
    fs.writeFileSync(
      inputsFile,
      held.map((s) => Buffer.from(s.bytes).toString("hex")).join("\n") + "\n"
    );
    const out = kscope([
      "oracle",
      "--model",
      path.join(dir, "model.kmodel"),
      "--weights",
      path.join(dir, "weights.kwgt"),
      "--inputs",
      inputsFile,
      "--json",
    ]);
    const oracle = JSON.parse(out) as { label: number; logits: string }[];
    expect(oracle.length).toBe(50);
    for (let i = 0; i < held.length; i++) {
      expect(oracle[i].label).toBe(classify(result.layers, held[i].bytes));
    }
  }, 120000);
});
