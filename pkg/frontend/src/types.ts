/** Wire types for the ragforge JSON API. The UI renders these verbatim and
 * never recomputes retrieval or similarity numbers client-side. */

export type StepKind = "query" | "retrieve" | "llm" | "answer";

export interface ScoredChunk {
  chunk_id: string;
  doc_id: string;
  start: number;
  end: number;
  text: string;
  score: number;
  score_display: string;
  rank: number;
  selected: boolean;
}

export interface QueryOutput {
  query_text: string;
}

export interface ChunksOutput {
  chunks: ScoredChunk[];
  warnings: string[];
}

export interface LlmOutput {
  prompt: string;
  text: string;
  edited: boolean;
  finish_reason?: string;
  items?: string[];
}

export interface AnswerOutput {
  answer_text: string;
  has_golden: boolean;
  similarity: number | null;
  similarity_display: string | null;
}

export type CellOutput = QueryOutput | ChunksOutput | LlmOutput | AnswerOutput;

export interface CellView {
  index: number;
  kind: StepKind;
  title: string;
  resolved_params: Record<string, unknown>;
  stale: boolean;
  origin: "recorded" | "replayed" | "overridden";
  output: CellOutput;
}

export interface SessionSnapshot {
  session_id: string;
  pipeline: { name: string; defaults: Record<string, unknown>; steps: unknown[] };
  pipeline_digest: string;
  generation_counter: number;
  query_text: string | null;
  cells: CellView[];
}

export interface ChunksPage {
  total: number;
  page: number;
  page_size: number;
  total_pages: number;
  chunks: ScoredChunk[];
}

export interface HistogramView {
  bin_edges: number[];
  counts_all: number[];
  counts_selected: number[];
}

export interface SimilarityCheck {
  similarity: number;
  display: string;
}

export interface GoldenAnswer {
  query_id: string;
  query_text: string;
  answer_text: string;
  saved_at: string;
  pipeline_digest: string;
  edited: boolean;
}

export interface ApiErrorBody {
  code: string;
  message: string;
  step_index?: number;
}

export type OverrideBody =
  | { retriever_params: Record<string, unknown> }
  | { manual_chunks: { chunk_id: string; selected: boolean }[] }
  | { prompt_text: string }
  | { llm_params: { max_tokens?: number; temperature?: number } }
  | { edited_output: string }
  | { query_text: string };

export interface RunEvent {
  seq: number;
  event: "run_started" | "step_finished" | "run_finished" | "run_failed" | "heartbeat";
  index?: number;
  generation?: number;
  mode?: string;
}

export function isChunksOutput(output: CellOutput): output is ChunksOutput {
  return Array.isArray((output as ChunksOutput).chunks);
}

export function isAnswerOutput(output: CellOutput): output is AnswerOutput {
  return typeof (output as AnswerOutput).answer_text === "string";
}
