/** Thin typed client over fetch; every displayed number originates in the
 * response bodies returned here. */

import type {
  ApiErrorBody,
  ChunksPage,
  GoldenAnswer,
  HistogramView,
  OverrideBody,
  SessionSnapshot,
  SimilarityCheck,
} from "./types.js";

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    public status: number,
    public body: ApiErrorBody,
  ) {
    super(`${body.code}: ${body.message}`);
  }

  get code(): string {
    return this.body.code;
  }
}

export class ApiClient {
  constructor(
    private base: string = "",
    private fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const init: RequestInit = { method };
    if (body !== undefined) {
      init.headers = { "Content-Type": "application/json" };
      init.body = JSON.stringify(body);
    }
    const response = await this.fetchFn(this.base + path, init);
    if (!response.ok) {
      let parsed: ApiErrorBody;
      try {
        parsed = (await response.json()) as ApiErrorBody;
      } catch {
        parsed = { code: "HttpError", message: `${response.status}` };
      }
      throw new ApiError(response.status, parsed);
    }
    return (await response.json()) as T;
  }

  session(): Promise<SessionSnapshot> {
    return this.request("GET", "/api/session");
  }

  run(queryText: string): Promise<SessionSnapshot> {
    return this.request("POST", "/api/run", { query_text: queryText });
  }

  runStep(index: number, override: OverrideBody): Promise<SessionSnapshot> {
    return this.request("POST", `/api/steps/${index}/run_step`, override);
  }

  runAll(index: number, override: OverrideBody): Promise<SessionSnapshot> {
    return this.request("POST", `/api/steps/${index}/run_all`, override);
  }

  chunks(index: number, search: string, page: number, pageSize: number): Promise<ChunksPage> {
    const params = new URLSearchParams({
      search,
      page: String(page),
      page_size: String(pageSize),
    });
    return this.request("GET", `/api/steps/${index}/chunks?${params}`);
  }

  histogram(index: number): Promise<HistogramView> {
    return this.request("GET", `/api/steps/${index}/histogram`);
  }

  saveAnswer(answerText?: string): Promise<GoldenAnswer> {
    return this.request(
      "POST",
      "/api/answers/save",
      answerText === undefined ? {} : { answer_text: answerText },
    );
  }

  checkAnswer(answerText?: string): Promise<SimilarityCheck> {
    return this.request(
      "POST",
      "/api/answers/check",
      answerText === undefined ? {} : { answer_text: answerText },
    );
  }

  async exportStep(index: number): Promise<string> {
    const response = await this.fetchFn(`${this.base}/api/export/step/${index}`, { method: "GET" });
    if (!response.ok) {
      throw new ApiError(response.status, { code: "HttpError", message: `${response.status}` });
    }
    return response.text();
  }
}
