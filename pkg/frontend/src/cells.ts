/** Cell renderers: one panel per trace step, mirroring the server snapshot.
 *
 * All scores, counts, and similarity values shown here are strings/numbers
 * taken directly from API payloads. A failed renderer yields an error
 * placeholder for that cell only.
 */

import type { Actions } from "./actions.js";
import { renderHistogram } from "./histogram.js";
import type { CellDraft, UiState } from "./state.js";
import { draftFor } from "./state.js";
import type {
  AnswerOutput,
  CellView,
  ChunksOutput,
  ChunksPage,
  HistogramView,
  LlmOutput,
  QueryOutput,
  ScoredChunk,
} from "./types.js";

export interface RetrievePanel {
  search: string;
  page: number;
  pageData: ChunksPage | null;
  histogram: HistogramView | null;
}

export const METHOD_OPTIONS = ["cosine", "tfidf", "mmr", "raptor"];
export const SIZE_OPTIONS = [100, 150, 200, 300, 400, 500, 800, 1200, 2000];
export const OVERLAP_OPTIONS = [0, 50, 100, 200, 400];
export const K_OPTIONS = [1, 2, 3, 4, 5, 8, 10, 15, 20, 30, 50];
export const LAMBDA_OPTIONS = [0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1];

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function button(label: string, className: string, disabled: boolean, onClick: () => void) {
  const b = el("button", className, label);
  b.disabled = disabled;
  b.addEventListener("click", onClick);
  return b;
}

function cellHeader(cell: CellView, state: UiState, actions: Actions): HTMLElement {
  const header = el("div", "cell-header");
  header.append(el("span", "cell-kind", cell.kind));
  header.append(el("span", "cell-title", cell.title));
  const origin = el("span", `badge badge-origin origin-${cell.origin}`, cell.origin);
  header.append(origin);
  if (cell.stale) {
    header.append(el("span", "badge badge-stale", "stale"));
  }
  if (state.progress.has(cell.index)) {
    header.append(el("span", "badge badge-progress", "done"));
  }
  header.append(
    button("copy code", "btn-export", false, () => void actions.exportStep(cell.index)),
  );
  return header;
}

function select(
  value: string,
  options: (string | number)[],
  onChange: (value: string) => void,
  name: string,
): HTMLSelectElement {
  const node = el("select", `param-${name}`);
  node.dataset.param = name;
  const seen = options.map(String);
  if (!seen.includes(value)) seen.unshift(value);
  for (const option of seen) {
    const opt = el("option", undefined, option);
    opt.value = option;
    node.append(opt);
  }
  node.value = value;
  node.addEventListener("change", () => onChange(node.value));
  return node;
}

function draftedParam(cell: CellView, draft: CellDraft, name: string): string {
  if (name in draft.retriever) return String(draft.retriever[name]);
  const resolved = cell.resolved_params[name];
  return resolved === undefined ? "" : String(resolved);
}

function renderQueryCell(cell: CellView, state: UiState, actions: Actions): HTMLElement {
  const output = cell.output as QueryOutput;
  const body = el("div", "cell-body");
  const area = el("textarea", "query-input");
  area.value = output.query_text;
  body.append(area);
  body.append(
    button("run pipeline", "btn-run-pipeline", state.runInProgress, () =>
      void actions.runPipeline(area.value),
    ),
  );
  return body;
}

function chunkRow(
  cellIndex: number,
  chunk: ScoredChunk,
  checked: boolean,
  disabled: boolean,
  actions: Actions,
): HTMLElement {
  const row = el("div", "chunk-row");
  row.dataset.chunkId = chunk.chunk_id;
  const box = el("input", "chunk-checkbox") as HTMLInputElement;
  box.type = "checkbox";
  box.checked = checked;
  box.disabled = disabled;
  box.addEventListener("change", () => actions.toggleChunk(cellIndex, chunk.chunk_id, box.checked));
  const rank = el("span", "chunk-rank", `#${chunk.rank}`);
  const score = el("span", "chunk-score", chunk.score_display);
  score.dataset.scoreDisplay = chunk.score_display;
  const text = el("span", "chunk-text", chunk.text.length > 160 ? `${chunk.text.slice(0, 160)}…` : chunk.text);
  text.title = `${chunk.chunk_id}`;
  row.append(box, rank, score, text);
  return row;
}

function renderRetrieveCell(
  cell: CellView,
  state: UiState,
  panel: RetrievePanel,
  actions: Actions,
): HTMLElement {
  const output = cell.output as ChunksOutput;
  const draft = draftFor(state, cell);
  const body = el("div", "cell-body");
  const busy = state.runInProgress;

  const queryLine = el("div", "retrieve-query");
  queryLine.append(el("span", "label", "query:"));
  queryLine.append(el("span", "retrieve-query-text", String(cell.resolved_params["query"] ?? "")));
  body.append(queryLine);

  const params = el("div", "retrieve-params");
  const set = (name: string) => (value: string) => actions.setRetrieverDraft(cell.index, name, value);
  params.append(el("label", undefined, "method"));
  params.append(select(draftedParam(cell, draft, "method"), METHOD_OPTIONS, set("method"), "method"));
  params.append(el("label", undefined, "chunk_size"));
  params.append(select(draftedParam(cell, draft, "chunk_size"), SIZE_OPTIONS, set("chunk_size"), "chunk_size"));
  params.append(el("label", undefined, "chunk_overlap"));
  params.append(
    select(draftedParam(cell, draft, "chunk_overlap"), OVERLAP_OPTIONS, set("chunk_overlap"), "chunk_overlap"),
  );
  params.append(el("label", undefined, "k"));
  params.append(select(draftedParam(cell, draft, "k"), K_OPTIONS, set("k"), "k"));
  if (draftedParam(cell, draft, "method") === "mmr") {
    params.append(el("label", undefined, "lambda"));
    params.append(
      select(draftedParam(cell, draft, "mmr_lambda") || "0.5", LAMBDA_OPTIONS, set("mmr_lambda"), "mmr_lambda"),
    );
  }
  body.append(params);

  for (const warning of output.warnings) {
    body.append(el("div", "warning", warning));
  }

  const retrieved = el("div", "retrieved-chunks");
  retrieved.append(el("div", "label", `retrieved (${output.chunks.length})`));
  for (const chunk of output.chunks) {
    const checked = draft.manualSelections.get(chunk.chunk_id) ?? chunk.selected;
    retrieved.append(chunkRow(cell.index, chunk, checked, busy, actions));
  }
  body.append(retrieved);

  const selector = el("div", "chunk-selector");
  const searchBox = el("input", "chunk-search") as HTMLInputElement;
  searchBox.type = "search";
  searchBox.placeholder = "search all chunks";
  searchBox.value = panel.search;
  searchBox.addEventListener("change", () => actions.setChunkSearch(cell.index, searchBox.value));
  selector.append(searchBox);

  if (panel.pageData) {
    const { chunks, page, total_pages, total } = panel.pageData;
    const selectedIds = new Set(
      output.chunks.filter((c) => c.selected).map((c) => c.chunk_id),
    );
    const list = el("div", "chunk-list");
    for (const chunk of chunks) {
      const checked = draft.manualSelections.get(chunk.chunk_id) ?? selectedIds.has(chunk.chunk_id);
      list.append(chunkRow(cell.index, chunk, checked, busy, actions));
    }
    selector.append(list);
    const pager = el("div", "pager");
    pager.append(
      button("prev", "btn-prev", page <= 1, () => actions.setChunkPage(cell.index, page - 1)),
    );
    pager.append(el("span", "pager-label", `page ${page}/${total_pages} (${total} chunks)`));
    pager.append(
      button("next", "btn-next", page >= total_pages, () => actions.setChunkPage(cell.index, page + 1)),
    );
    selector.append(pager);
  } else {
    selector.append(
      button("browse all chunks", "btn-browse", busy, () => actions.setChunkPage(cell.index, 1)),
    );
  }
  body.append(selector);

  if (panel.histogram) {
    body.append(renderHistogram(panel.histogram));
  }

  const controls = el("div", "cell-controls");
  controls.append(
    button("run step", "btn-run-step", busy, () =>
      void actions.submitOverride(cell.index, retrieveOverride(draft), "step"),
    ),
    button("run all", "btn-run-all", busy, () =>
      void actions.submitOverride(cell.index, retrieveOverride(draft), "all"),
    ),
  );
  body.append(controls);
  return body;
}

/** Manual checkbox toggles take precedence over parameter tweaks; the engine
 * treats a params override as re-enabling automatic retrieval anyway. */
export function retrieveOverride(draft: CellDraft) {
  if (draft.manualSelections.size > 0) {
    return {
      manual_chunks: [...draft.manualSelections].map(([chunk_id, selected]) => ({
        chunk_id,
        selected,
      })),
    };
  }
  return { retriever_params: { ...draft.retriever } };
}

function renderLlmCell(cell: CellView, state: UiState, actions: Actions): HTMLElement {
  const output = cell.output as LlmOutput;
  const draft = draftFor(state, cell);
  const body = el("div", "cell-body");
  const busy = state.runInProgress;

  body.append(el("div", "label", "prompt"));
  const promptArea = el("textarea", "prompt-input");
  promptArea.value = draft.promptText ?? output.prompt;
  promptArea.addEventListener("change", () => actions.setPromptDraft(cell.index, promptArea.value));
  body.append(promptArea);

  body.append(el("div", "label", output.edited ? "output (edited)" : "output"));
  const outputArea = el("textarea", "output-input");
  outputArea.value = draft.editedOutput ?? output.text;
  outputArea.addEventListener("change", () => actions.setOutputDraft(cell.index, outputArea.value));
  body.append(outputArea);

  if (output.items) {
    const list = el("ul", "parsed-items");
    for (const item of output.items) {
      list.append(el("li", "parsed-item", item));
    }
    body.append(list);
  }

  const override = () => {
    if (draft.promptText !== null) return { prompt_text: draft.promptText };
    if (draft.editedOutput !== null) return { edited_output: draft.editedOutput };
    return { llm_params: {} };
  };
  const controls = el("div", "cell-controls");
  controls.append(
    button("test prompt", "btn-test-prompt", busy, () =>
      void actions.submitOverride(
        cell.index,
        { prompt_text: draft.promptText ?? output.prompt },
        "step",
      ),
    ),
    button("run step", "btn-run-step", busy, () =>
      void actions.submitOverride(cell.index, override(), "step"),
    ),
    button("run all", "btn-run-all", busy, () =>
      void actions.submitOverride(cell.index, override(), "all"),
    ),
  );
  body.append(controls);
  return body;
}

function renderAnswerCell(cell: CellView, state: UiState, actions: Actions): HTMLElement {
  const output = cell.output as AnswerOutput;
  const draft = draftFor(state, cell);
  const body = el("div", "cell-body");
  const busy = state.runInProgress;

  const answerArea = el("textarea", "answer-input");
  answerArea.value = draft.editedOutput ?? output.answer_text;
  answerArea.addEventListener("change", () => actions.setOutputDraft(cell.index, answerArea.value));
  body.append(answerArea);

  const similarity = el("div", "similarity-line");
  if (output.has_golden && output.similarity_display !== null) {
    const score = el("span", "similarity-display", output.similarity_display);
    score.dataset.scoreDisplay = output.similarity_display;
    similarity.append(el("span", "label", "similarity to golden: "), score);
  } else if (output.has_golden) {
    similarity.append(el("span", "label", "golden saved"));
  } else {
    similarity.append(el("span", "label", "no golden answer yet"));
  }
  if (state.lastCheck) {
    const checked = el("span", "similarity-checked", state.lastCheck.display);
    checked.dataset.scoreDisplay = state.lastCheck.display;
    similarity.append(el("span", "label", " checked: "), checked);
  }
  body.append(similarity);

  const controls = el("div", "cell-controls");
  controls.append(
    button("save answer", "btn-save-answer", busy, () =>
      void actions.saveAnswer(draft.editedOutput ?? undefined),
    ),
    button("check similarity", "btn-check-similarity", busy, () => void actions.checkAnswer()),
  );
  if (draft.editedOutput !== null) {
    controls.append(
      button("run all", "btn-run-all", busy, () =>
        void actions.submitOverride(cell.index, { edited_output: draft.editedOutput ?? "" }, "all"),
      ),
    );
  }
  body.append(controls);
  return body;
}

export function renderCell(
  cell: CellView,
  state: UiState,
  panel: RetrievePanel,
  actions: Actions,
): HTMLElement {
  const root = el("section", `cell cell-${cell.kind}${cell.stale ? " stale" : ""}`);
  root.dataset.index = String(cell.index);
  try {
    root.append(cellHeader(cell, state, actions));
    if (cell.kind === "query") {
      root.append(renderQueryCell(cell, state, actions));
    } else if (cell.kind === "retrieve") {
      root.append(renderRetrieveCell(cell, state, panel, actions));
    } else if (cell.kind === "llm") {
      root.append(renderLlmCell(cell, state, actions));
    } else if (cell.kind === "answer") {
      root.append(renderAnswerCell(cell, state, actions));
    } else {
      throw new Error(`unknown cell kind ${(cell as CellView).kind}`);
    }
  } catch (error) {
    const boundary = el("section", "cell cell-error");
    boundary.dataset.index = String(cell.index);
    boundary.append(el("div", "cell-error-message", `cell ${cell.index} failed to render: ${error}`));
    return boundary;
  }
  return root;
}

export function renderCells(
  cells: CellView[],
  state: UiState,
  panels: Map<number, RetrievePanel>,
  actions: Actions,
): HTMLElement[] {
  return cells.map((cell) => {
    let panel = panels.get(cell.index);
    if (!panel) {
      panel = { search: "", page: 0, pageData: null, histogram: null };
      panels.set(cell.index, panel);
    }
    return renderCell(cell, state, panel, actions);
  });
}
