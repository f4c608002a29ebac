import type { Span } from "./types";

export interface Segment {
  text: string;
  highlighted: boolean;
}

export interface SegmentedText {
  segments: Segment[];
  /** true when a span fell outside the text and highlighting was dropped. */
  invalid: boolean;
}

function spansValid(text: string, spans: Span[]): boolean {
  let previousEnd = -1;
  for (const [start, end] of spans) {
    if (start < 0 || end > text.length || start >= end) return false;
    if (start < previousEnd) return false; // overlapping or unsorted
    previousEnd = end;
  }
  return true;
}

/**
 * Split text into plain/highlighted segments whose concatenation is exactly
 * the input. Invalid spans (out of bounds, overlapping, unsorted) never
 * throw: the text comes back as one unhighlighted segment with a flag the
 * view turns into a warning glyph.
 */
export function segmentText(text: string, spans: Span[]): SegmentedText {
  if (spans.length === 0) {
    return { segments: [{ text, highlighted: false }], invalid: false };
  }
  if (!spansValid(text, spans)) {
    return { segments: [{ text, highlighted: false }], invalid: true };
  }
  const segments: Segment[] = [];
  let cursor = 0;
  for (const [start, end] of spans) {
    if (start > cursor) {
      segments.push({ text: text.slice(cursor, start), highlighted: false });
    }
    segments.push({ text: text.slice(start, end), highlighted: true });
    cursor = end;
  }
  if (cursor < text.length) {
    segments.push({ text: text.slice(cursor), highlighted: false });
  }
  return { segments, invalid: false };
}
