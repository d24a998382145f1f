/** API client: verbs, paths, bodies, and typed error mapping. */

import { describe, expect, it } from "vitest";

import { ApiClient, ApiError } from "../src/api.js";
import { FakeServer } from "./fixtures.js";

describe("ApiClient", () => {
  it("runs the pipeline and reads the snapshot back", async () => {
    const server = new FakeServer();
    const api = new ApiClient("", server.fetch);
    const snap = await api.run("hello there");
    expect(snap.cells.length).toBe(4);
    expect(snap.generation_counter).toBe(1);
    const again = await api.session();
    expect(again.generation_counter).toBe(1);
    expect(server.requests[0]).toEqual({
      method: "POST",
      url: "/api/run",
      body: { query_text: "hello there" },
    });
  });

  it("sends overrides to the right endpoints", async () => {
    const server = new FakeServer();
    const api = new ApiClient("", server.fetch);
    await api.run("q");
    await api.runStep(1, { retriever_params: { k: 3 } });
    await api.runAll(2, { edited_output: "text" });
    const urls = server.requests.map((r) => r.url);
    expect(urls).toContain("/api/steps/1/run_step");
    expect(urls).toContain("/api/steps/2/run_all");
  });

  it("paginates chunk listings with search", async () => {
    const server = new FakeServer(30);
    const api = new ApiClient("", server.fetch);
    await api.run("q");
    const page = await api.chunks(1, "topic-3", 1, 10);
    expect(page.chunks.every((c) => c.text.includes("topic-3"))).toBe(true);
    expect(page.page).toBe(1);
  });

  it("maps error bodies to ApiError with code and status", async () => {
    const server = new FakeServer();
    const api = new ApiClient("", server.fetch);
    await api.run("q");
    server.simulateBusy = true;
    const error = await api.run("again").catch((e: unknown) => e);
    expect(error).toBeInstanceOf(ApiError);
    expect((error as ApiError).status).toBe(409);
    expect((error as ApiError).code).toBe("RunInProgress");
    server.simulateBusy = false;
    const bad = await api.run("   ").catch((e: unknown) => e);
    expect((bad as ApiError).code).toBe("EmptyQuery");
    expect((bad as ApiError).status).toBe(422);
  });

  it("fetches export fragments as plain text", async () => {
    const server = new FakeServer();
    const api = new ApiClient("", server.fetch);
    await api.run("q");
    const fragment = await api.exportStep(1);
    expect(fragment).toContain("[[steps]]");
    expect(fragment).toContain('kind = "retrieve"');
  });
});
