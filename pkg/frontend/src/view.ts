/**
 * Pure views: SessionState in, virtual-node tree out. No DOM access here,
 * so every component is testable headlessly; dom.ts realizes the tree in
 * the browser.
 */

import { segmentText } from "./highlight";
import { canSubmit, latestEvidence, SessionState } from "./state";
import type { ContextView } from "./types";

export interface VNode {
  tag: string;
  attrs: Record<string, string>;
  children: Array<VNode | string>;
}

export function h(
  tag: string,
  attrs: Record<string, string> = {},
  ...children: Array<VNode | string>
): VNode {
  return { tag, attrs, children };
}

export function renderEvidenceCard(ctx: ContextView): VNode {
  const { segments, invalid } = segmentText(ctx.text, ctx.highlight_spans);
  const body = segments.map((seg) =>
    seg.highlighted ? h("mark", {}, seg.text) : seg.text,
  );
  const confidence = (ctx.scores["rerank"] ?? 0).toFixed(2);
  const page = ctx.page_idx === null ? "?" : String(ctx.page_idx);
  const header: Array<VNode | string> = [
    h("span", { class: "badge doc" }, `${ctx.doc_name} p${page}`),
    h("span", { class: "badge confidence" }, confidence),
  ];
  if (invalid) {
    header.push(h("span", { class: "warning", title: "invalid highlight spans" }, "⚠"));
  }
  return h(
    "article",
    { class: "evidence-card", "data-evidence-id": ctx.evidence_id ?? "" },
    h("header", {}, ...header),
    h("p", { class: "evidence-text" }, ...body),
  );
}

export function renderEvidencePanel(state: SessionState): VNode {
  const cards = latestEvidence(state).map(renderEvidenceCard);
  return h(
    "section",
    { class: "panel evidence-panel" },
    h("h2", {}, "Evidence"),
    ...(cards.length ? cards : [h("p", { class: "empty" }, "no evidence yet")]),
  );
}

export function renderAnswerCard(query: string, answerText: string, confidence: number): VNode {
  return h(
    "article",
    { class: "answer-card" },
    h("p", { class: "query-echo" }, query),
    h("p", { class: "answer-text" }, answerText),
    h("span", { class: "badge confidence" }, confidence.toFixed(2)),
  );
}

export function renderQueryPanel(state: SessionState): VNode {
  const cards = state.conversation.map((turn) =>
    renderAnswerCard(turn.query, turn.answer.answer_text, turn.answer.confidence),
  );
  const children: Array<VNode | string> = [h("h2", {}, "Ask")];
  if (state.errorBanner) {
    children.push(
      h(
        "div",
        { class: "banner error", role: "alert" },
        state.errorBanner,
        h("button", { class: "retry", "data-action": "retry" }, "retry"),
      ),
    );
  }
  children.push(...cards);
  const submitAttrs: Record<string, string> = {
    "data-action": "submit",
    class: "submit",
  };
  if (!canSubmit(state)) {
    submitAttrs["disabled"] = "disabled";
  }
  children.push(
    h(
      "form",
      { class: "query-form" },
      h("input", {
        class: "query-input",
        "data-action": "draft",
        value: state.draft,
        placeholder: "ask about the uploaded documents",
      }),
      h("button", submitAttrs, state.busy ? "..." : "ask"),
    ),
  );
  return h("section", { class: "panel query-panel" }, ...children);
}

export function renderSettingsPanel(state: SessionState): VNode {
  const presetOption = (value: string) => {
    const attrs: Record<string, string> = { value };
    if (state.preset === value) attrs["selected"] = "selected";
    return h("option", attrs, value);
  };
  const children: Array<VNode | string> = [
    h("h2", {}, "Settings"),
    h("label", {}, "company", h("input", { class: "company-input", value: state.company })),
    h(
      "label",
      {},
      "retrieval preset",
      h(
        "select",
        { class: "preset-select", "data-action": "preset" },
        presetOption("setting1"),
        presetOption("setting2"),
        presetOption("setting3"),
      ),
    ),
    h(
      "label",
      { class: "upload" },
      "upload interchange document",
      h("input", { type: "file", "data-action": "upload", accept: "application/json" }),
    ),
  ];
  if (state.uploadNotice) {
    children.push(h("p", { class: "toast upload-notice" }, state.uploadNotice));
  }
  return h("section", { class: "panel settings-panel" }, ...children);
}

export function renderApp(state: SessionState): VNode {
  return h(
    "main",
    { class: "console" },
    renderSettingsPanel(state),
    renderQueryPanel(state),
    renderEvidencePanel(state),
  );
}

// -- helpers for tests and the dom adapter --

export function findAll(node: VNode, predicate: (n: VNode) => boolean): VNode[] {
  const out: VNode[] = [];
  const walk = (current: VNode) => {
    if (predicate(current)) out.push(current);
    for (const child of current.children) {
      if (typeof child !== "string") walk(child);
    }
  };
  walk(node);
  return out;
}

export function textOf(node: VNode): string {
  return node.children
    .map((child) => (typeof child === "string" ? child : textOf(child)))
    .join("");
}
