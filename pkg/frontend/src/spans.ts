/**
 * Span selection helpers. Selections are made at character granularity
 * and snapped outward to word boundaries, which removes the off-by-one
 * disagreements two annotators would otherwise produce on the same words.
 * Overlapping spans are allowed: two readings of one clause are both
 * admissible.
 */

import type { StageCode, StageSpan } from "./types.js";

const isSpace = (ch: string) => /\s/.test(ch);

export interface CharRange {
  start: number;
  end: number;
}

/**
 * Snap [start, end) outward to whole words; returns null when the
 * selection contains no word characters.
 */
export function snapToWordBoundaries(
  text: string,
  start: number,
  end: number,
): CharRange | null {
  let lo = Math.max(0, Math.min(start, end));
  let hi = Math.min(text.length, Math.max(start, end));
  while (lo < hi && isSpace(text.charAt(lo))) lo++;
  while (hi > lo && isSpace(text.charAt(hi - 1))) hi--;
  if (lo >= hi) return null;
  while (lo > 0 && !isSpace(text.charAt(lo - 1))) lo--;
  while (hi < text.length && !isSpace(text.charAt(hi))) hi++;
  return { start: lo, end: hi };
}

/** Snap and tag a selection; null when nothing selectable was covered. */
export function makeSpan(
  text: string,
  stage: StageCode,
  start: number,
  end: number,
): StageSpan | null {
  const snapped = snapToWordBoundaries(text, start, end);
  if (snapped === null) return null;
  return { stage, start: snapped.start, end: snapped.end };
}

export function spansOverlap(a: StageSpan, b: StageSpan): boolean {
  return a.start < b.end && b.start < a.end;
}

/** Identical span+stage twice is a no-op; everything else (overlaps included) stacks. */
export function addSpan(spans: readonly StageSpan[], span: StageSpan): StageSpan[] {
  const duplicate = spans.some(
    (s) => s.stage === span.stage && s.start === span.start && s.end === span.end,
  );
  return duplicate ? [...spans] : [...spans, span];
}

export function removeSpan(spans: readonly StageSpan[], index: number): StageSpan[] {
  return spans.filter((_, i) => i !== index);
}
