/** Wire types for the grading service's /v1 endpoints. */

export interface AnnotationTask {
  task_id: string;
  image_uri: string;
  remaining: number;
  scale_version: string;
}

export interface ScaleExemplar {
  score: number;
  image_uri: string;
  source: string;
}

export interface ReferenceScale {
  version: string;
  exemplars: ScaleExemplar[];
}

export interface AnnotationSubmission {
  record_id: string;
  image_id: string;
  grader_id: string;
  score: number;
  scale_version: string;
}

export interface Violation {
  kind: string;
  message: string;
}

export type SubmitResult =
  | { kind: "accepted" }
  | { kind: "invalid"; violations: Violation[] } // 422: fix and resubmit
  | { kind: "stale" } // 409: task no longer known, re-fetch
  | { kind: "offline" }; // network failure, retry later
