/** UI state: the latest server snapshot plus per-cell draft edits.
 *
 * Drafts are deliberate, unsubmitted changes (dropdown picks, checkbox
 * toggles, prompt/output text). They accumulate freely within one trace
 * generation and are cleared whenever a new snapshot supersedes it; pure
 * refreshes of the same generation keep them.
 */

import type { CellView, SessionSnapshot } from "./types.js";

export interface CellDraft {
  generation: number;
  retriever: Record<string, unknown>;
  manualSelections: Map<string, boolean>;
  promptText: string | null;
  editedOutput: string | null;
  llmParams: { max_tokens?: number; temperature?: number };
}

export interface UiState {
  snapshot: SessionSnapshot | null;
  drafts: Map<number, CellDraft>;
  runInProgress: boolean;
  streamConnected: boolean;
  banner: string | null;
  toast: string | null;
  progress: Set<number>; // cells finished during the in-flight run
  lastCheck: { similarity: number; display: string } | null;
}

export function initialState(): UiState {
  return {
    snapshot: null,
    drafts: new Map(),
    runInProgress: false,
    streamConnected: false,
    banner: null,
    toast: null,
    progress: new Set(),
    lastCheck: null,
  };
}

export function emptyDraft(generation: number): CellDraft {
  return {
    generation,
    retriever: {},
    manualSelections: new Map(),
    promptText: null,
    editedOutput: null,
    llmParams: {},
  };
}

export function draftFor(state: UiState, cell: CellView): CellDraft {
  let draft = state.drafts.get(cell.index);
  if (!draft) {
    draft = emptyDraft(state.snapshot?.generation_counter ?? -1);
    state.drafts.set(cell.index, draft);
  }
  return draft;
}

export function hasEdits(draft: CellDraft): boolean {
  return (
    Object.keys(draft.retriever).length > 0 ||
    draft.manualSelections.size > 0 ||
    draft.promptText !== null ||
    draft.editedOutput !== null ||
    Object.keys(draft.llmParams).length > 0
  );
}

/** Install a new snapshot, dropping drafts superseded by a new generation. */
export function applySnapshot(state: UiState, snapshot: SessionSnapshot): UiState {
  const previous = state.snapshot?.generation_counter;
  if (previous !== snapshot.generation_counter) {
    state.drafts.clear();
  }
  state.snapshot = snapshot;
  state.progress = new Set();
  return state;
}
