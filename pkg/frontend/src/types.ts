/** Wire types mirroring the retrieval service's JSON bodies. */

export type Span = [number, number];

export interface ContextView {
  node_id: string;
  label: string;
  text: string;
  doc_name: string;
  page_idx: number | null;
  scores: Record<string, number>;
  fused_score: number;
  highlight_spans: Span[];
  evidence_id?: string;
}

export interface TraceEvent {
  stage: string;
  count: number;
  note?: string;
}

export interface AnswerView {
  answer_text: string;
  confidence: number;
  contexts: ContextView[];
  trace: TraceEvent[];
}

export interface UploadResult {
  doc_name: string;
  nodes_added: number;
  edges_added: number;
  /** true when the server created new graph content (HTTP 201). */
  created: boolean;
}

export interface EvidenceView {
  id: string;
  text: string;
  doc_name: string;
  page_idx: number | null;
  confidence: number;
  highlight_spans: Span[];
}

export interface ApiErrorBody {
  code: string;
  message: string;
  detail?: string;
}

export type Preset = "setting1" | "setting2" | "setting3";

/** A chunk prepared for rendering: spans validated against the text. */
export interface HighlightedChunk {
  text: string;
  spans: Span[];
  doc_name: string;
  page_idx: number | null;
  confidence: number;
}
