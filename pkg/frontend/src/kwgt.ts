/**
 * Writers for the exchange formats the compiler consumes: the KWGT weights
 * container and the model description text. The model hash is a CRC32 of
 * the model signature string, e.g. "fpe;64;dense:64:16:relu;dense:16:3:identity".
 */

import { QuantLayer } from "./mlp";

const CRC_TABLE = (() => {
  const table = new Uint32Array(256);
  for (let n = 0; n < 256; n++) {
    let c = n;
    for (let k = 0; k < 8; k++) c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
    table[n] = c >>> 0;
  }
  return table;
})();

export function crc32(data: Uint8Array): number {
  let c = 0xffffffff;
  for (let i = 0; i < data.length; i++) c = CRC_TABLE[(c ^ data[i]) & 0xff] ^ (c >>> 8);
  return (c ^ 0xffffffff) >>> 0;
}

export function modelSignature(inputLen: number, layers: QuantLayer[]): string {
  const parts = ["fpe", String(inputLen)];
  for (const l of layers) parts.push(`dense:${l.rows}:${l.cols}:${l.act}`);
  return parts.join(";");
}

export function modelHash(inputLen: number, layers: QuantLayer[]): number {
  return crc32(Buffer.from(modelSignature(inputLen, layers), "utf8"));
}

export function modelText(inputLen: number, layers: QuantLayer[]): string {
  const lines = ["kmodel 1", "target fpe", `input_len ${inputLen}`];
  for (const l of layers) lines.push(`layer dense in=${l.rows} out=${l.cols} act=${l.act}`);
  return lines.join("\n") + "\n";
}

export function writeKwgt(inputLen: number, layers: QuantLayer[]): Buffer {
  let size = 4 + 1 + 4 + 1;
  for (const l of layers) size += 4 + l.weights.length + l.bias.length;
  const buf = Buffer.alloc(size);
  let pos = 0;
  buf.write("KWGT", pos, "ascii");
  pos += 4;
  buf.writeUInt8(1, pos);
  pos += 1;
  buf.writeUInt32LE(modelHash(inputLen, layers), pos);
  pos += 4;
  buf.writeUInt8(layers.length, pos);
  pos += 1;
  for (const l of layers) {
    buf.writeUInt16LE(l.rows, pos);
    buf.writeUInt16LE(l.cols, pos + 2);
    pos += 4;
    buf.set(l.weights, pos);
    pos += l.weights.length;
    buf.set(l.bias, pos);
    pos += l.bias.length;
  }
  return buf;
}
