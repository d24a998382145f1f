/** Draft lifecycle against snapshot generations. */

import { describe, expect, it } from "vitest";

import { applySnapshot, draftFor, hasEdits, initialState } from "../src/state.js";
import type { CellView, SessionSnapshot } from "../src/types.js";

function snapshot(generation: number): SessionSnapshot {
  const cell: CellView = {
    index: 1,
    kind: "retrieve",
    title: "context",
    resolved_params: { query: "q", k: 5, chunk_size: 200, chunk_overlap: 0, method: "cosine" },
    stale: false,
    origin: "recorded",
    output: { chunks: [], warnings: [] },
  };
  return {
    session_id: "s",
    pipeline: { name: "p", defaults: {}, steps: [] },
    pipeline_digest: "d",
    generation_counter: generation,
    query_text: "q",
    cells: [cell],
  };
}

describe("draft lifecycle", () => {
  it("drafts accumulate within one generation", () => {
    const state = initialState();
    applySnapshot(state, snapshot(1));
    const cell = state.snapshot!.cells[0] as CellView;
    const draft = draftFor(state, cell);
    draft.retriever.k = 10;
    draft.manualSelections.set("c1", true);
    expect(hasEdits(draftFor(state, cell))).toBe(true);
    // refresh with the same generation keeps the draft
    applySnapshot(state, snapshot(1));
    expect(hasEdits(draftFor(state, state.snapshot!.cells[0] as CellView))).toBe(true);
  });

  it("a new generation supersedes all drafts", () => {
    const state = initialState();
    applySnapshot(state, snapshot(1));
    const draft = draftFor(state, state.snapshot!.cells[0] as CellView);
    draft.promptText = "edited";
    applySnapshot(state, snapshot(2));
    expect(state.drafts.size).toBe(0);
    expect(hasEdits(draftFor(state, state.snapshot!.cells[0] as CellView))).toBe(false);
  });

  it("progress marks reset with each snapshot", () => {
    const state = initialState();
    state.progress.add(2);
    applySnapshot(state, snapshot(1));
    expect(state.progress.size).toBe(0);
  });
});
