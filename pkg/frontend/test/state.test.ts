import { describe, expect, it } from "vitest";
import {
  canSubmit,
  initialState,
  latestEvidence,
  selectEvidence,
  setDraft,
  submitFailed,
  submitStarted,
  submitSucceeded,
  uploadFailed,
  uploadSucceeded,
} from "../src/state";
import type { AnswerView } from "../src/types";

function answer(overrides: Partial<AnswerView> = {}): AnswerView {
  return {
    answer_text: "the value is 42",
    confidence: 0.8,
    contexts: [
      {
        node_id: "n1",
        label: "SECTION_CHUNK",
        text: "low score chunk",
        doc_name: "handbook",
        page_idx: 1,
        scores: { rerank: 0.2 },
        fused_score: 0.1,
        highlight_spans: [],
        evidence_id: "ev-1",
      },
      {
        node_id: "n2",
        label: "TABLE",
        text: "X=42",
        doc_name: "handbook",
        page_idx: 2,
        scores: { rerank: 0.9 },
        fused_score: 0.2,
        highlight_spans: [],
        evidence_id: "ev-2",
      },
    ],
    trace: [],
    ...overrides,
  };
}

describe("session state", () => {
  it("conversation is append-only across successful turns", () => {
    let state = initialState();
    state = submitSucceeded(state, "q1", answer());
    const afterFirst = state.conversation;
    state = submitSucceeded(state, "q2", answer());
    expect(state.conversation.length).toBe(2);
    expect(state.conversation[0]).toBe(afterFirst[0]);
    expect(state.conversation.map((t) => t.query)).toEqual(["q1", "q2"]);
  });

  it("failures leave the conversation unchanged and set a banner", () => {
    let state = submitSucceeded(initialState(), "q1", answer());
    const before = state.conversation;
    state = submitFailed(submitStarted(state), "backend unavailable");
    expect(state.conversation).toBe(before);
    expect(state.errorBanner).toBe("backend unavailable");
    expect(state.busy).toBe(false);
  });

  it("empty or busy drafts cannot submit", () => {
    let state = initialState();
    expect(canSubmit(state)).toBe(false);
    state = setDraft(state, "   ");
    expect(canSubmit(state)).toBe(false);
    state = setDraft(state, "real question");
    expect(canSubmit(state)).toBe(true);
    expect(canSubmit(submitStarted(state))).toBe(false);
  });

  it("evidence is sorted by rerank confidence descending", () => {
    const state = submitSucceeded(initialState(), "q", answer());
    expect(latestEvidence(state).map((c) => c.node_id)).toEqual(["n2", "n1"]);
  });

  it("evidence selection round-trips", () => {
    let state = submitSucceeded(initialState(), "q", answer());
    state = selectEvidence(state, "ev-2");
    expect(state.selectedEvidenceId).toBe("ev-2");
  });

  it("upload notices cover created, no-op and failure", () => {
    let state = initialState();
    state = uploadSucceeded(state, {
      doc_name: "handbook",
      nodes_added: 15,
      edges_added: 24,
      created: true,
    });
    expect(state.uploadNotice).toBe("uploaded handbook: 15 nodes, 24 edges");
    state = uploadSucceeded(state, {
      doc_name: "handbook",
      nodes_added: 0,
      edges_added: 0,
      created: false,
    });
    expect(state.uploadNotice).toContain("no-op");
    state = uploadFailed(state, "missing page_idx 1");
    expect(state.uploadNotice).toBe("upload failed: missing page_idx 1");
  });
});
