/** Stateful in-memory stand-in for the ragforge server.
 *
 * Mirrors the documented wire schemas and records every response body so
 * tests can assert that any number shown in the DOM arrived over the
 * (intercepted) network rather than being computed client-side.
 */

import type {
  CellView,
  ChunksPage,
  ScoredChunk,
  SessionSnapshot,
} from "../src/types.js";

interface CorpusChunk {
  chunk_id: string;
  doc_id: string;
  start: number;
  end: number;
  text: string;
  score: number;
}

function scoreDisplay(score: number): string {
  return score.toFixed(4);
}

export class FakeServer {
  recordedBodies: string[] = [];
  requests: { method: string; url: string; body: unknown }[] = [];
  simulateBusy = false;
  simulateDivergence = false;

  private corpus: CorpusChunk[] = [];
  private generation = 0;
  private queryText: string | null = null;
  private k = 5;
  private chunkSize = 200;
  private method = "cosine";
  private retrieved: string[] = [];
  private manual: string[] | null = null;
  private staleFrom: number | null = null;
  private golden: string | null = null;
  private llmEdited: string | null = null;

  constructor(corpusSize = 60) {
    for (let i = 0; i < corpusSize; i++) {
      const text = `chunk ${String(i).padStart(3, "0")} about topic-${i % 7} with filler prose`;
      this.corpus.push({
        chunk_id: `doc${String(i).padStart(3, "0")}.txt#0..${text.length}`,
        doc_id: `doc${String(i).padStart(3, "0")}.txt`,
        start: 0,
        end: text.length,
        text,
        score: (corpusSize - i) / corpusSize,
      });
    }
  }

  readonly fetch = async (input: string, init?: RequestInit): Promise<Response> => {
    const method = init?.method ?? "GET";
    const url = new URL(input, "http://fake");
    const body = init?.body ? JSON.parse(String(init.body)) : undefined;
    this.requests.push({ method, url: url.pathname + url.search, body });
    const respond = (status: number, payload: unknown, contentType = "application/json") => {
      const text = contentType === "application/json" ? JSON.stringify(payload) : String(payload);
      this.recordedBodies.push(text);
      return new Response(text, { status, headers: { "Content-Type": contentType } });
    };

    const path = url.pathname;
    if (method === "GET" && path === "/api/session") {
      return respond(200, this.snapshot());
    }
    if (method === "POST" && path === "/api/run") {
      if (this.simulateBusy) {
        return respond(409, { code: "RunInProgress", message: "another run is in progress" });
      }
      const query = (body as { query_text?: string }).query_text ?? "";
      if (!query.trim()) {
        return respond(422, { code: "EmptyQuery", message: "query_text must be non-empty" });
      }
      this.queryText = query;
      this.manual = null;
      this.llmEdited = null;
      this.staleFrom = null;
      this.retrieved = this.topK();
      this.generation += 1;
      return respond(200, this.snapshot());
    }
    const stepMatch = path.match(/^\/api\/steps\/(\d+)\/(run_step|run_all)$/);
    if (method === "POST" && stepMatch) {
      const index = Number(stepMatch[1]);
      const mode = stepMatch[2];
      if (this.simulateBusy) {
        return respond(409, { code: "RunInProgress", message: "another run is in progress" });
      }
      if (this.simulateDivergence && mode === "run_all") {
        return respond(409, {
          code: "ReplayDivergence",
          message: "recorded step 1 no longer matches the pipeline definition",
          step_index: 1,
        });
      }
      if (index > 3) {
        return respond(404, { code: "NotFound", message: `no step at index ${index}` });
      }
      const override = body as Record<string, unknown>;
      if (index === 1 && "edited_output" in override) {
        return respond(422, {
          code: "IncompatibleOverride",
          message: "SetOutput cannot target a retrieve step",
        });
      }
      if ("retriever_params" in override) {
        const params = override.retriever_params as Record<string, unknown>;
        if (params.k !== undefined) this.k = Number(params.k);
        if (params.chunk_size !== undefined) this.chunkSize = Number(params.chunk_size);
        if (params.method !== undefined) this.method = String(params.method);
        this.manual = null;
        this.retrieved = this.topK();
      } else if ("manual_chunks" in override) {
        const entries = override.manual_chunks as { chunk_id: string; selected: boolean }[];
        this.manual = entries.filter((e) => e.selected).map((e) => e.chunk_id);
        this.retrieved = [...this.manual];
      } else if ("edited_output" in override && index === 2) {
        this.llmEdited = String(override.edited_output);
      }
      this.staleFrom = mode === "run_step" ? index + 1 : null;
      this.generation += 1;
      return respond(200, this.snapshot());
    }
    const chunksMatch = path.match(/^\/api\/steps\/(\d+)\/chunks$/);
    if (method === "GET" && chunksMatch) {
      const search = url.searchParams.get("search") ?? "";
      const page = Number(url.searchParams.get("page") ?? "1");
      const pageSize = Number(url.searchParams.get("page_size") ?? "50");
      let scored = this.corpus;
      if (search) {
        scored = scored.filter((c) => c.text.toLowerCase().includes(search.toLowerCase()));
      }
      const start = (page - 1) * pageSize;
      const payload: ChunksPage = {
        total: scored.length,
        page,
        page_size: pageSize,
        total_pages: Math.max(1, Math.ceil(scored.length / pageSize)),
        chunks: scored
          .slice(start, start + pageSize)
          .map((c, i) => this.scoredJson(c, start + i + 1, this.retrieved.includes(c.chunk_id))),
      };
      return respond(200, payload);
    }
    if (method === "GET" && /^\/api\/steps\/\d+\/histogram$/.test(path)) {
      const edges: number[] = [];
      for (let i = 0; i <= 20; i++) edges.push(i / 20);
      const all = new Array(20).fill(0);
      const selected = new Array(20).fill(0);
      for (const chunk of this.corpus) {
        const bin = Math.min(19, Math.floor(chunk.score * 20));
        all[bin] += 1;
        if (this.retrieved.includes(chunk.chunk_id)) selected[bin] += 1;
      }
      return respond(200, { bin_edges: edges, counts_all: all, counts_selected: selected });
    }
    if (method === "POST" && path === "/api/answers/save") {
      const override = (body ?? {}) as { answer_text?: string };
      this.golden = override.answer_text ?? this.answerText();
      return respond(200, {
        query_id: "qid",
        query_text: this.queryText,
        answer_text: this.golden,
        saved_at: "2026-08-09T00:00:00+00:00",
        pipeline_digest: "digest",
        edited: override.answer_text !== undefined,
      });
    }
    if (method === "POST" && path === "/api/answers/check") {
      if (this.golden === null) {
        return respond(404, { code: "NotFound", message: "no golden answer saved" });
      }
      const current = (body as { answer_text?: string }).answer_text ?? this.answerText();
      const similarity = current === this.golden ? 1.0 : 0.42;
      return respond(200, { similarity, display: similarity.toFixed(2) });
    }
    if (method === "GET" && /^\/api\/export\/step\/\d+$/.test(path)) {
      return respond(200, '[[steps]]\nname = "context"\nkind = "retrieve"\nk = 5\n', "text/plain");
    }
    if (method === "GET" && path === "/api/events") {
      return respond(200, "", "application/x-ndjson");
    }
    return respond(404, { code: "NotFound", message: path });
  };

  private topK(): string[] {
    return this.corpus.slice(0, this.k).map((c) => c.chunk_id);
  }

  private scoredJson(chunk: CorpusChunk, rank: number, selected: boolean): ScoredChunk {
    return {
      chunk_id: chunk.chunk_id,
      doc_id: chunk.doc_id,
      start: chunk.start,
      end: chunk.end,
      text: chunk.text,
      score: chunk.score,
      score_display: scoreDisplay(chunk.score),
      rank,
      selected,
    };
  }

  private answerText(): string {
    if (this.llmEdited !== null) return this.llmEdited;
    return `MOCK: Question: ${this.queryText ?? ""} [s${this.chunkSize} k${this.k} ${this.method}]`;
  }

  private snapshot(): SessionSnapshot {
    const cells: CellView[] = [];
    if (this.queryText !== null) {
      const retrievedChunks = this.retrieved
        .map((id) => this.corpus.find((c) => c.chunk_id === id))
        .filter((c): c is CorpusChunk => c !== undefined)
        .map((c, i) => this.scoredJson(c, i + 1, true));
      const llmText = this.llmEdited ?? this.answerText();
      cells.push(
        {
          index: 0,
          kind: "query",
          title: "question",
          resolved_params: { text: this.queryText },
          stale: this.isStale(0),
          origin: "recorded",
          output: { query_text: this.queryText },
        },
        {
          index: 1,
          kind: "retrieve",
          title: "context",
          resolved_params: {
            query: this.queryText,
            k: this.k,
            chunk_size: this.chunkSize,
            chunk_overlap: 0,
            method: this.method,
          },
          stale: this.isStale(1),
          origin: "recorded",
          output: { chunks: retrievedChunks, warnings: [] },
        },
        {
          index: 2,
          kind: "llm",
          title: "draft",
          resolved_params: { prompt: `Context...\nQuestion: ${this.queryText}`, max_tokens: 200, temperature: 0.2 },
          stale: this.isStale(2),
          origin: "recorded",
          output: {
            prompt: `Context...\nQuestion: ${this.queryText}`,
            text: llmText,
            edited: this.llmEdited !== null,
            finish_reason: "stop",
          },
        },
        {
          index: 3,
          kind: "answer",
          title: "final",
          resolved_params: { text: llmText },
          stale: this.isStale(3),
          origin: "recorded",
          output: {
            answer_text: llmText,
            has_golden: this.golden !== null,
            similarity: this.golden === null ? null : this.golden === llmText ? 1.0 : 0.42,
            similarity_display:
              this.golden === null ? null : this.golden === llmText ? "1.00" : "0.42",
          },
        },
      );
    }
    return {
      session_id: "fake-session",
      pipeline: { name: "baseline", defaults: { chunk_size: 200, k: 5 }, steps: [] },
      pipeline_digest: "digest",
      generation_counter: this.generation,
      query_text: this.queryText,
      cells,
    };
  }

  private isStale(index: number): boolean {
    return this.staleFrom !== null && index >= this.staleFrom;
  }
}

export async function flush(times = 6): Promise<void> {
  for (let i = 0; i < times; i++) {
    await new Promise((resolve) => setTimeout(resolve, 0));
  }
}
