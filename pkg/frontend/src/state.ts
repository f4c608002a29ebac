import type { AnswerView, Preset, UploadResult } from "./types";

export interface Turn {
  query: string;
  answer: AnswerView;
}

export interface SessionState {
  company: string;
  preset: Preset;
  /** Append-only within a session. */
  conversation: Turn[];
  selectedEvidenceId: string | null;
  draft: string;
  busy: boolean;
  errorBanner: string | null;
  uploadNotice: string | null;
}

export function initialState(company = "default", preset: Preset = "setting3"): SessionState {
  return {
    company,
    preset,
    conversation: [],
    selectedEvidenceId: null,
    draft: "",
    busy: false,
    errorBanner: null,
    uploadNotice: null,
  };
}

export function canSubmit(state: SessionState): boolean {
  return state.draft.trim().length > 0 && !state.busy;
}

export function setDraft(state: SessionState, draft: string): SessionState {
  return { ...state, draft };
}

export function setCompany(state: SessionState, company: string): SessionState {
  return { ...state, company };
}

export function setPreset(state: SessionState, preset: Preset): SessionState {
  return { ...state, preset };
}

export function submitStarted(state: SessionState): SessionState {
  return { ...state, busy: true, errorBanner: null };
}

export function submitSucceeded(
  state: SessionState,
  query: string,
  answer: AnswerView,
): SessionState {
  return {
    ...state,
    busy: false,
    draft: "",
    errorBanner: null,
    conversation: [...state.conversation, { query, answer }],
    selectedEvidenceId: null,
  };
}

/** Failures leave the conversation untouched; the banner is retryable. */
export function submitFailed(state: SessionState, message: string): SessionState {
  return { ...state, busy: false, errorBanner: message };
}

export function dismissError(state: SessionState): SessionState {
  return { ...state, errorBanner: null };
}

export function selectEvidence(state: SessionState, evidenceId: string | null): SessionState {
  return { ...state, selectedEvidenceId: evidenceId };
}

export function uploadSucceeded(state: SessionState, result: UploadResult): SessionState {
  const notice = result.created
    ? `uploaded ${result.doc_name}: ${result.nodes_added} nodes, ${result.edges_added} edges`
    : `${result.doc_name} already ingested (no-op)`;
  return { ...state, uploadNotice: notice };
}

export function uploadFailed(state: SessionState, message: string): SessionState {
  return { ...state, uploadNotice: `upload failed: ${message}` };
}

/** Evidence for the latest answer, sorted by confidence, best first. */
export function latestEvidence(state: SessionState) {
  const last = state.conversation[state.conversation.length - 1];
  if (!last) return [];
  return [...last.answer.contexts].sort(
    (a, b) => (b.scores["rerank"] ?? 0) - (a.scores["rerank"] ?? 0),
  );
}
