/** Reader for the server's newline-delimited JSON event stream. */

import type { RunEvent } from "./types.js";

export interface EventStreamHandle {
  close(): void;
}

/** Parse NDJSON chunks incrementally, invoking onEvent per complete line. */
export function makeLineParser(onEvent: (event: RunEvent) => void): (chunk: string) => void {
  let buffer = "";
  return (chunk: string) => {
    buffer += chunk;
    let newline = buffer.indexOf("\n");
    while (newline !== -1) {
      const line = buffer.slice(0, newline).trim();
      buffer = buffer.slice(newline + 1);
      if (line) {
        try {
          onEvent(JSON.parse(line) as RunEvent);
        } catch {
          // tolerate partial garbage; the stream is advisory
        }
      }
      newline = buffer.indexOf("\n");
    }
  };
}

export function openEventStream(
  base: string,
  onEvent: (event: RunEvent) => void,
  onStateChange?: (connected: boolean) => void,
): EventStreamHandle {
  const controller = new AbortController();
  const parse = makeLineParser(onEvent);

  (async () => {
    try {
      const response = await fetch(`${base}/api/events`, { signal: controller.signal });
      if (!response.ok || !response.body) {
        onStateChange?.(false);
        return;
      }
      onStateChange?.(true);
      const reader = response.body.getReader();
      const decoder = new TextDecoder();
      for (;;) {
        const { done, value } = await reader.read();
        if (done) break;
        parse(decoder.decode(value, { stream: true }));
      }
    } catch {
      // aborted or network failure
    } finally {
      onStateChange?.(false);
    }
  })();

  return { close: () => controller.abort() };
}
