/** Wire types shared with the annotation service. */

export const STAGES = [
  { code: 1, name: "Equilibrium", color: "#4e79a7", key: "1" },
  { code: 2, name: "Disruption", color: "#e15759", key: "2" },
  { code: 3, name: "Recognition", color: "#f28e2b", key: "3" },
  { code: 4, name: "Attempt", color: "#76b7b2", key: "4" },
  { code: 5, name: "New Equilibrium", color: "#59a14f", key: "5" },
] as const;

export type StageCode = 1 | 2 | 3 | 4 | 5;

export interface StageSpan {
  stage: StageCode;
  start: number;
  end: number;
}

export const CRITERIA = ["logical", "rational", "complete_n"] as const;
export type Criterion = (typeof CRITERIA)[number];

/** 3-point Likert coding: 3=Agree, 2=Neutral, 1=Disagree. */
export type Likert3 = 1 | 2 | 3;

export type CriteriaRatings = Record<Criterion, Likert3>;

export interface StoryFields {
  id: string;
  premise: string;
  initial: string;
  original_ending: string;
  counterfactual: string;
  edited_endings: string[];
}

/** One pending unit of work from GET /v1/annotation/tasks. */
export interface TaskView {
  item: StoryFields;
  candidate_tag: string;
  candidate_text: string;
  /** The exact string spans index into (server-computed). */
  annotated_text: string;
}

export interface AnnotationPayload {
  annotator_id: string;
  item_id: string;
  candidate_tag: string;
  spans: StageSpan[];
  criteria: CriteriaRatings;
  narrativity: number;
  timestamp?: string;
}

export interface StoredAnnotation extends AnnotationPayload {
  record_id: string;
  timestamp: string;
}

export interface ServiceError {
  error: string;
  message: string;
}
