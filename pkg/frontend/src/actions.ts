/** Controller surface the cell renderers call into. */

import type { OverrideBody } from "./types.js";

export interface Actions {
  runPipeline(queryText: string): Promise<void>;
  submitOverride(index: number, body: OverrideBody, mode: "step" | "all"): Promise<void>;
  saveAnswer(answerText?: string): Promise<void>;
  checkAnswer(): Promise<void>;
  exportStep(index: number): Promise<void>;
  setChunkSearch(index: number, search: string): void;
  setChunkPage(index: number, page: number): void;
  toggleChunk(index: number, chunkId: string, selected: boolean): void;
  setRetrieverDraft(index: number, field: string, value: unknown): void;
  setPromptDraft(index: number, text: string): void;
  setOutputDraft(index: number, text: string): void;
  dismissBanner(): void;
}
