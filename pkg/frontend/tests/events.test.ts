/** NDJSON event-stream parsing, including chunk boundaries mid-record. */

import { describe, expect, it } from "vitest";

import { makeLineParser, openEventStream } from "../src/events.js";
import type { RunEvent } from "../src/types.js";

describe("makeLineParser", () => {
  it("parses complete lines across arbitrary chunk boundaries", () => {
    const events: RunEvent[] = [];
    const feed = makeLineParser((e) => events.push(e));
    feed('{"seq": 1, "event": "run_st');
    feed('arted", "generation": 1}\n{"seq": 2, "event": "step_finished", "index": 0}\n');
    feed('{"seq": 3, "event": "run_finished"}');
    expect(events.map((e) => e.event)).toEqual(["run_started", "step_finished"]);
    feed("\n");
    expect(events.map((e) => e.event)).toEqual(["run_started", "step_finished", "run_finished"]);
  });

  it("skips blank and malformed lines", () => {
    const events: RunEvent[] = [];
    const feed = makeLineParser((e) => events.push(e));
    feed('\n\nnot json\n{"seq": 9, "event": "heartbeat"}\n');
    expect(events.length).toBe(1);
    expect(events[0]?.event).toBe("heartbeat");
  });
});

describe("openEventStream", () => {
  it("reads a streamed NDJSON response to completion", async () => {
    const lines = [
      '{"seq": 1, "event": "run_started", "generation": 1}\n',
      '{"seq": 2, "event": "step_finished", "index": 0}\n{"seq": 3, "event": "step_finished", "index": 1}\n',
      '{"seq": 4, "event": "run_finished", "generation": 1}\n',
    ];
    const stream = new ReadableStream<Uint8Array>({
      start(controller) {
        const encoder = new TextEncoder();
        for (const line of lines) controller.enqueue(encoder.encode(line));
        controller.close();
      },
    });
    const originalFetch = globalThis.fetch;
    globalThis.fetch = (async () =>
      new Response(stream, {
        status: 200,
        headers: { "Content-Type": "application/x-ndjson" },
      })) as typeof fetch;

    try {
      const events: RunEvent[] = [];
      const states: boolean[] = [];
      openEventStream("", (e) => events.push(e), (connected) => states.push(connected));
      await new Promise((resolve) => setTimeout(resolve, 20));
      expect(events.map((e) => e.event)).toEqual([
        "run_started",
        "step_finished",
        "step_finished",
        "run_finished",
      ]);
      expect(states[0]).toBe(true);
      expect(states[states.length - 1]).toBe(false);
    } finally {
      globalThis.fetch = originalFetch;
    }
  });
});
