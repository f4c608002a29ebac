import { describe, expect, it } from "vitest";
import { ApiClient, ApiError, CompletionFailed } from "../src/api";
import type { AnswerView } from "../src/types";

const ANSWER: AnswerView = {
  answer_text: "42",
  confidence: 0.5,
  contexts: [
    {
      node_id: "n1",
      label: "TABLE",
      text: "X=42",
      doc_name: "handbook",
      page_idx: 1,
      scores: { rerank: 0.5 },
      fused_score: 0.1,
      highlight_spans: [[0, 1]],
      evidence_id: "ev-1",
    },
  ],
  trace: [{ stage: "hybrid", count: 3 }],
};

function jsonResponse(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

function clientWith(
  handler: (input: string, init?: RequestInit) => Response,
  calls: Array<{ input: string; init?: RequestInit }> = [],
): ApiClient {
  return new ApiClient("http://api.test", async (input, init) => {
    calls.push({ input, init });
    return handler(input, init);
  });
}

describe("ApiClient", () => {
  it("posts query requests and returns the answer bundle", async () => {
    const calls: Array<{ input: string; init?: RequestInit }> = [];
    const client = clientWith(() => jsonResponse(200, ANSWER), calls);
    const answer = await client.submitQuery("acme", "what is X", "setting3");
    expect(answer.answer_text).toBe("42");
    expect(calls[0].input).toBe("http://api.test/query");
    expect(JSON.parse(String(calls[0].init?.body))).toEqual({
      company: "acme",
      query: "what is X",
      preset: "setting3",
    });
  });

  it("maps 502 to CompletionFailed carrying the retrieved contexts", async () => {
    const payload = { ...ANSWER, answer_text: "", error: { code: "completion_failed", message: "llm down" } };
    const client = clientWith(() => jsonResponse(502, payload));
    const err = await client.submitQuery("acme", "q", "setting1").catch((e) => e);
    expect(err).toBeInstanceOf(CompletionFailed);
    expect(err.body.message).toBe("llm down");
    expect(err.partial.contexts.length).toBe(1);
  });

  it("maps 404 to ApiError with the server message", async () => {
    const client = clientWith(() =>
      jsonResponse(404, { code: "unknown_company", message: "no company 'ghost'" }),
    );
    const err = await client.submitQuery("ghost", "q", "setting1").catch((e) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect(err.status).toBe(404);
    expect(err.body.code).toBe("unknown_company");
  });

  it("upload distinguishes created from no-op and carries counts", async () => {
    const created = clientWith((input) => {
      expect(input).toBe("http://api.test/companies/acme/documents");
      return jsonResponse(201, { doc_name: "handbook", nodes_added: 15, edges_added: 24 });
    });
    const result = await created.uploadDocument("acme", "{}");
    expect(result).toEqual({
      doc_name: "handbook",
      nodes_added: 15,
      edges_added: 24,
      created: true,
    });

    const noop = clientWith(() =>
      jsonResponse(200, { doc_name: "handbook", nodes_added: 0, edges_added: 0 }),
    );
    expect((await noop.uploadDocument("acme", "{}")).created).toBe(false);
  });

  it("upload surfaces the parse position from 400 bodies", async () => {
    const client = clientWith(() =>
      jsonResponse(400, {
        code: "parse_error",
        message: "malformed interchange JSON at byte 12",
        detail: "byte_offset=12",
      }),
    );
    const err = await client.uploadDocument("acme", "{bad").catch((e) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect(err.body.message).toContain("byte 12");
    expect(err.body.detail).toBe("byte_offset=12");
  });

  it("fetches evidence by id", async () => {
    const client = clientWith((input) => {
      expect(input).toBe("http://api.test/evidence/ev-1");
      return jsonResponse(200, {
        id: "ev-1",
        text: "X=42",
        doc_name: "handbook",
        page_idx: 1,
        confidence: 0.5,
        highlight_spans: [[0, 1]],
      });
    });
    const evidence = await client.getEvidence("ev-1");
    expect(evidence.text).toBe("X=42");
  });

  it("sends the bearer token when configured", async () => {
    const calls: Array<{ input: string; init?: RequestInit }> = [];
    const client = new ApiClient(
      "http://api.test",
      async (input, init) => {
        calls.push({ input, init });
        return jsonResponse(200, ANSWER);
      },
      "sesame",
    );
    await client.submitQuery("acme", "q", "setting1");
    const headers = calls[0].init?.headers as Record<string, string>;
    expect(headers["Authorization"]).toBe("Bearer sesame");
  });
});
