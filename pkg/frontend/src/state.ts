/**
 * Local editing state for one task: spans, Likert ratings, and the live
 * narrativity preview. Submission stays disabled until all three criteria
 * are rated; the preview is derived, never stored independently.
 */

import { narrativityScore } from "./narrativity.js";
import { addSpan, makeSpan, removeSpan } from "./spans.js";
import {
  CRITERIA,
  type AnnotationPayload,
  type Criterion,
  type Likert3,
  type StageCode,
  type StageSpan,
  type TaskView,
} from "./types.js";

export class TaskSession {
  readonly task: TaskView;
  private spanList: StageSpan[] = [];
  private ratings: Partial<Record<Criterion, Likert3>> = {};

  constructor(task: TaskView) {
    this.task = task;
  }

  get spans(): readonly StageSpan[] {
    return this.spanList;
  }

  /** Tag a character selection; returns the snapped span or null. */
  tagSelection(stage: StageCode, start: number, end: number): StageSpan | null {
    const span = makeSpan(this.task.annotated_text, stage, start, end);
    if (span !== null) {
      this.spanList = addSpan(this.spanList, span);
    }
    return span;
  }

  removeSpanAt(index: number): void {
    this.spanList = removeSpan(this.spanList, index);
  }

  narrativityPreview(): number {
    return narrativityScore(this.spanList);
  }

  rate(criterion: Criterion, value: Likert3): void {
    this.ratings[criterion] = value;
  }

  ratingOf(criterion: Criterion): Likert3 | undefined {
    return this.ratings[criterion];
  }

  /** All three criteria must be rated before submit unlocks. */
  canSubmit(): boolean {
    return CRITERIA.every((criterion) => this.ratings[criterion] !== undefined);
  }

  buildPayload(annotatorId: string): AnnotationPayload {
    if (!this.canSubmit()) {
      throw new Error("all three criteria must be rated before submitting");
    }
    return {
      annotator_id: annotatorId,
      item_id: this.task.item.id,
      candidate_tag: this.task.candidate_tag,
      spans: [...this.spanList],
      criteria: {
        logical: this.ratings.logical as Likert3,
        rational: this.ratings.rational as Likert3,
        complete_n: this.ratings.complete_n as Likert3,
      },
      narrativity: this.narrativityPreview(),
      timestamp: new Date().toISOString(),
    };
  }
}
