/**
 * Typed client for the annotation endpoints. The submit outcome is a
 * discriminated union rather than thrown errors because every variant is
 * an expected state the queue must route on: duplicates mark the task
 * done, validation rejections block, transport problems retry.
 */

import type {
  AnnotationPayload,
  ServiceError,
  StoredAnnotation,
  TaskView,
} from "./types.js";

export type SubmitResult =
  | { kind: "stored"; record: StoredAnnotation }
  | { kind: "duplicate" }
  | { kind: "rejected"; error: string; message: string }
  | { kind: "transient"; status?: number; message: string };

export type FetchLike = (
  input: string,
  init?: {
    method?: string;
    headers?: Record<string, string>;
    body?: string;
  },
) => Promise<{
  ok: boolean;
  status: number;
  json(): Promise<unknown>;
}>;

export class AnnotatorClient {
  private readonly baseUrl: string;
  private readonly fetchFn: FetchLike;
  private readonly authToken: string;

  constructor(baseUrl: string, options: { fetchFn?: FetchLike; authToken?: string } = {}) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
    this.fetchFn = options.fetchFn ?? (globalThis.fetch as unknown as FetchLike);
    this.authToken = options.authToken ?? "";
  }

  private headers(json: boolean): Record<string, string> {
    const headers: Record<string, string> = {};
    if (json) headers["content-type"] = "application/json";
    if (this.authToken) headers["authorization"] = `Bearer ${this.authToken}`;
    return headers;
  }

  async fetchTasks(annotatorId: string): Promise<TaskView[]> {
    const response = await this.fetchFn(
      `${this.baseUrl}/v1/annotation/tasks?annotator=${encodeURIComponent(annotatorId)}`,
      { headers: this.headers(false) },
    );
    if (!response.ok) {
      const error = (await response.json()) as ServiceError;
      throw new Error(`task fetch failed (${response.status}): ${error.message}`);
    }
    const body = (await response.json()) as { tasks: TaskView[] };
    return body.tasks;
  }

  async submitAnnotation(payload: AnnotationPayload): Promise<SubmitResult> {
    let response;
    try {
      response = await this.fetchFn(`${this.baseUrl}/v1/annotation`, {
        method: "POST",
        headers: this.headers(true),
        body: JSON.stringify(payload),
      });
    } catch (err) {
      return { kind: "transient", message: String(err) };
    }
    if (response.ok) {
      return { kind: "stored", record: (await response.json()) as StoredAnnotation };
    }
    if (response.status === 409) {
      return { kind: "duplicate" };
    }
    if (response.status >= 500) {
      return { kind: "transient", status: response.status, message: "server error" };
    }
    const error = (await response.json()) as ServiceError;
    return { kind: "rejected", error: error.error, message: error.message };
  }

  async fetchAnnotation(recordId: string): Promise<StoredAnnotation> {
    const response = await this.fetchFn(
      `${this.baseUrl}/v1/annotation/${encodeURIComponent(recordId)}`,
      { headers: this.headers(false) },
    );
    if (!response.ok) {
      throw new Error(`record fetch failed (${response.status})`);
    }
    return (await response.json()) as StoredAnnotation;
  }
}
