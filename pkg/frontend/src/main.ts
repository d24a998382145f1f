/** App controller: owns state, talks to the API, re-renders on change.
 *
 * All state transitions follow server responses (no optimistic updates);
 * the event stream only drives progress badges and a refresh on completion.
 */

import type { Actions } from "./actions.js";
import { ApiClient, ApiError } from "./api.js";
import type { RetrievePanel } from "./cells.js";
import { renderCells } from "./cells.js";
import { openEventStream } from "./events.js";
import type { EventStreamHandle } from "./events.js";
import { applySnapshot, draftFor, initialState } from "./state.js";
import type { UiState } from "./state.js";
import type { OverrideBody, RunEvent, SessionSnapshot } from "./types.js";

const PAGE_SIZE = 25;

export interface AppOptions {
  base?: string;
  fetchFn?: (input: string, init?: RequestInit) => Promise<Response>;
  connectEvents?: boolean;
}

export class App {
  readonly state: UiState = initialState();
  readonly panels = new Map<number, RetrievePanel>();
  private api: ApiClient;
  private stream: EventStreamHandle | null = null;
  readonly actions: Actions;

  constructor(
    private root: HTMLElement,
    options: AppOptions = {},
  ) {
    this.api = new ApiClient(options.base ?? "", options.fetchFn);
    this.actions = this.buildActions();
    if (options.connectEvents ?? true) {
      this.stream = openEventStream(
        options.base ?? "",
        (event) => this.onRunEvent(event),
        (connected) => {
          this.state.streamConnected = connected;
        },
      );
    }
  }

  async start(): Promise<void> {
    await this.refresh();
  }

  dispose(): void {
    this.stream?.close();
  }

  private onRunEvent(event: RunEvent): void {
    if (event.event === "run_started") {
      this.state.runInProgress = true;
      this.state.progress = new Set();
      this.render();
    } else if (event.event === "step_finished" && event.index !== undefined) {
      this.state.progress.add(event.index);
      this.render();
    } else if (event.event === "run_finished" || event.event === "run_failed") {
      this.state.runInProgress = false;
      void this.refresh();
    }
  }

  private async refresh(): Promise<void> {
    const snapshot = await this.api.session();
    this.installSnapshot(snapshot);
  }

  private installSnapshot(snapshot: SessionSnapshot): void {
    const previous = this.state.snapshot?.generation_counter;
    applySnapshot(this.state, snapshot);
    if (previous !== snapshot.generation_counter) {
      this.state.lastCheck = null;
      // stale cached pages belong to the superseded trace
      for (const panel of this.panels.values()) {
        panel.pageData = null;
        panel.histogram = null;
      }
    }
    this.render();
  }

  private toast(message: string): void {
    this.state.toast = message;
    this.render();
  }

  private async guarded(work: () => Promise<SessionSnapshot | null>): Promise<void> {
    this.state.toast = null;
    try {
      const snapshot = await work();
      if (snapshot) {
        this.installSnapshot(snapshot);
      }
    } catch (error) {
      if (error instanceof ApiError) {
        if (error.code === "ReplayDivergence") {
          this.state.banner =
            "The pipeline definition changed since this trace was recorded; " +
            "resume is not sound. Re-run the pipeline.";
        } else if (error.code === "RunInProgress") {
          this.toast("a run is already in progress");
        } else {
          this.toast(`${error.code}: ${error.body.message}`);
        }
      } else {
        this.toast(String(error));
      }
      this.render();
    }
  }

  private async loadPanelData(index: number): Promise<void> {
    const panel = this.panel(index);
    if (panel.page < 1) panel.page = 1;
    panel.pageData = await this.api.chunks(index, panel.search, panel.page, PAGE_SIZE);
    panel.histogram = await this.api.histogram(index);
    this.render();
  }

  private panel(index: number): RetrievePanel {
    let panel = this.panels.get(index);
    if (!panel) {
      panel = { search: "", page: 0, pageData: null, histogram: null };
      this.panels.set(index, panel);
    }
    return panel;
  }

  private cell(index: number) {
    const cell = this.state.snapshot?.cells.find((c) => c.index === index);
    if (!cell) throw new Error(`no cell ${index}`);
    return cell;
  }

  private buildActions(): Actions {
    return {
      runPipeline: (queryText) =>
        this.guarded(async () => {
          this.state.runInProgress = true;
          this.render();
          try {
            return await this.api.run(queryText);
          } finally {
            this.state.runInProgress = false;
          }
        }),
      submitOverride: (index, body: OverrideBody, mode) =>
        this.guarded(async () => {
          this.state.runInProgress = true;
          this.render();
          try {
            return mode === "step"
              ? await this.api.runStep(index, body)
              : await this.api.runAll(index, body);
          } finally {
            this.state.runInProgress = false;
          }
        }),
      saveAnswer: (answerText) =>
        this.guarded(async () => {
          const golden = await this.api.saveAnswer(answerText);
          this.toast(`saved golden for "${golden.query_text}"`);
          return this.api.session(); // answer cell now shows the similarity
        }),
      checkAnswer: () =>
        this.guarded(async () => {
          this.state.lastCheck = await this.api.checkAnswer();
          this.render();
          return null;
        }),
      exportStep: (index) =>
        this.guarded(async () => {
          const fragment = await this.api.exportStep(index);
          this.toast(`copy code:\n${fragment}`);
          return null;
        }),
      setChunkSearch: (index, search) => {
        const panel = this.panel(index);
        panel.search = search;
        panel.page = 1;
        void this.guarded(async () => {
          await this.loadPanelData(index);
          return null;
        });
      },
      setChunkPage: (index, page) => {
        const panel = this.panel(index);
        panel.page = Math.max(1, page);
        void this.guarded(async () => {
          await this.loadPanelData(index);
          return null;
        });
      },
      toggleChunk: (index, chunkId, selected) => {
        const draft = draftFor(this.state, this.cell(index));
        draft.manualSelections.set(chunkId, selected);
        this.render();
      },
      setRetrieverDraft: (index, field, value) => {
        const draft = draftFor(this.state, this.cell(index));
        const numeric = ["k", "chunk_size", "chunk_overlap"].includes(field)
          ? Number(value)
          : field === "mmr_lambda"
            ? Number(value)
            : value;
        draft.retriever[field] = numeric;
        this.render();
      },
      setPromptDraft: (index, text) => {
        draftFor(this.state, this.cell(index)).promptText = text;
      },
      setOutputDraft: (index, text) => {
        draftFor(this.state, this.cell(index)).editedOutput = text;
      },
      dismissBanner: () => {
        this.state.banner = null;
        this.render();
      },
    };
  }

  render(): void {
    const { state } = this;
    this.root.textContent = "";

    const header = document.createElement("header");
    header.className = "app-header";
    const title = document.createElement("h1");
    title.textContent = "ragforge";
    header.append(title);
    if (state.snapshot) {
      const gen = document.createElement("span");
      gen.className = "generation";
      gen.dataset.generation = String(state.snapshot.generation_counter);
      gen.textContent = `${state.snapshot.pipeline.name} · generation ${state.snapshot.generation_counter}`;
      header.append(gen);
    }
    if (state.runInProgress) {
      const busy = document.createElement("span");
      busy.className = "run-indicator";
      busy.textContent = "running…";
      header.append(busy);
    }
    this.root.append(header);

    if (state.banner) {
      const banner = document.createElement("div");
      banner.className = "banner banner-divergence";
      banner.textContent = state.banner;
      const rerun = document.createElement("button");
      rerun.className = "btn-rerun";
      rerun.textContent = "re-run pipeline";
      rerun.addEventListener("click", () => {
        const query = state.snapshot?.query_text ?? "";
        this.actions.dismissBanner();
        if (query) void this.actions.runPipeline(query);
      });
      banner.append(rerun);
      this.root.append(banner);
    }

    if (state.toast) {
      const toast = document.createElement("div");
      toast.className = "toast";
      toast.textContent = state.toast;
      this.root.append(toast);
    }

    const cellsRoot = document.createElement("main");
    cellsRoot.id = "cells";
    if (state.snapshot && state.snapshot.cells.length > 0) {
      cellsRoot.append(...renderCells(state.snapshot.cells, state, this.panels, this.actions));
    } else {
      const empty = document.createElement("div");
      empty.className = "empty-state";
      empty.textContent = "No run yet.";
      const queryBox = document.createElement("textarea");
      queryBox.className = "query-input";
      queryBox.placeholder = "Type a query to run the pipeline";
      const run = document.createElement("button");
      run.className = "btn-run-pipeline";
      run.textContent = "run pipeline";
      run.disabled = state.runInProgress;
      run.addEventListener("click", () => void this.actions.runPipeline(queryBox.value));
      empty.append(queryBox, run);
      cellsRoot.append(empty);
    }
    this.root.append(cellsRoot);
  }
}

export function mount(root: HTMLElement, options: AppOptions = {}): App {
  const app = new App(root, options);
  void app.start();
  return app;
}

declare global {
  interface Window {
    __ragforgeBoot?: boolean;
  }
}

if (typeof document !== "undefined" && document.getElementById("app") && !window.__ragforgeBoot) {
  window.__ragforgeBoot = true;
  mount(document.getElementById("app") as HTMLElement);
}
