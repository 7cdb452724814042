/** zlib adapters backed by the browser's CompressionStream API. */

import type { ZlibCodecs } from "./png.js";

async function pump(stream: ReadableStream<Uint8Array>): Promise<Uint8Array> {
  const chunks: Uint8Array[] = [];
  const reader = stream.getReader();
  for (;;) {
    const { done, value } = await reader.read();
    if (done) break;
    chunks.push(value);
  }
  const out = new Uint8Array(chunks.reduce((n, c) => n + c.length, 0));
  let at = 0;
  for (const c of chunks) {
    out.set(c, at);
    at += c.length;
  }
  return out;
}

function through(data: Uint8Array, transform: CompressionStream | DecompressionStream) {
  const stream = new Blob([data as BlobPart])
    .stream()
    .pipeThrough(transform as ReadableWritablePair<Uint8Array, BufferSource>);
  return pump(stream);
}

export const browserZlib: ZlibCodecs = {
  deflate: (data) => through(data, new CompressionStream("deflate")),
  inflate: (data) => through(data, new DecompressionStream("deflate")),
};
