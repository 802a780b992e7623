/**
 * Optimistic submission queue: annotations enqueue locally and flush in
 * the background. Outcome routing:
 *  - stored: done, record kept for audit;
 *  - duplicate (409): the server already has it, mark done;
 *  - rejected (422, e.g. NarrativityMismatch): a client/server scoring
 *    drift -- the queue halts in a blocking error state instead of
 *    retrying a doomed payload;
 *  - transient (network/5xx): retried with backoff up to maxAttempts.
 */

import type { AnnotatorClient, SubmitResult } from "./api.js";
import type { AnnotationPayload, StoredAnnotation } from "./types.js";

export interface QueueEntry {
  payload: AnnotationPayload;
  attempts: number;
  status: "pending" | "done" | "blocked";
  record?: StoredAnnotation;
  lastError?: string;
}

export interface FlushSummary {
  stored: number;
  duplicates: number;
  blocked: number;
  pending: number;
}

const sleep = (ms: number) => new Promise<void>((resolve) => setTimeout(resolve, ms));

export class SubmissionQueue {
  private entries: QueueEntry[] = [];
  private readonly maxAttempts: number;
  private readonly retryDelayMs: number;
  blockingError: string | null = null;

  constructor(options: { maxAttempts?: number; retryDelayMs?: number } = {}) {
    this.maxAttempts = options.maxAttempts ?? 3;
    this.retryDelayMs = options.retryDelayMs ?? 250;
  }

  enqueue(payload: AnnotationPayload): QueueEntry {
    const entry: QueueEntry = { payload, attempts: 0, status: "pending" };
    this.entries.push(entry);
    return entry;
  }

  get size(): number {
    return this.entries.filter((e) => e.status === "pending").length;
  }

  snapshot(): readonly QueueEntry[] {
    return this.entries;
  }

  /** Push every pending entry at the server; stops dead on a blocking 422. */
  async flush(client: AnnotatorClient): Promise<FlushSummary> {
    const summary: FlushSummary = { stored: 0, duplicates: 0, blocked: 0, pending: 0 };
    for (const entry of this.entries) {
      if (entry.status !== "pending") continue;
      if (this.blockingError !== null) break;
      let result: SubmitResult | null = null;
      for (let attempt = 1; attempt <= this.maxAttempts; attempt++) {
        entry.attempts += 1; // cumulative across flushes, for display only
        result = await client.submitAnnotation(entry.payload);
        if (result.kind !== "transient") break;
        entry.lastError = result.message;
        if (attempt < this.maxAttempts) await sleep(this.retryDelayMs);
      }
      if (result === null || result.kind === "transient") {
        continue; // out of attempts for now; stays pending for a later flush
      }
      if (result.kind === "stored") {
        entry.status = "done";
        entry.record = result.record;
        summary.stored += 1;
      } else if (result.kind === "duplicate") {
        entry.status = "done";
        summary.duplicates += 1;
      } else {
        entry.status = "blocked";
        entry.lastError = `${result.error}: ${result.message}`;
        this.blockingError = entry.lastError;
        summary.blocked += 1;
      }
    }
    summary.pending = this.size;
    return summary;
  }
}
