/**
 * Client-side mirror of the server's derived scores.
 *
 * The live narrativity preview must agree with the server's recomputation
 * for every submission; the server's 422 NarrativityMismatch response
 * exists to catch drift between the two implementations.
 */

import type { CriteriaRatings, StageSpan } from "./types.js";

/** 1-5: distinct stage types present, floored at 1 for untagged text. */
export function narrativityScore(spans: readonly Pick<StageSpan, "stage">[]): number {
  const distinct = new Set(spans.map((span) => span.stage));
  return Math.max(1, distinct.size);
}

/** Overall quality: the minimum of the three criteria ratings. */
export function minLrc(ratings: CriteriaRatings): number {
  return Math.min(ratings.logical, ratings.rational, ratings.complete_n);
}

/** The string spans index into; must match the server's joining rule. */
export function annotatedText(
  premise: string,
  counterfactual: string,
  candidate: string,
): string {
  return [premise, counterfactual, candidate].map((part) => part.trim()).join(" ");
}
