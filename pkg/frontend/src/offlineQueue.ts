import type { AnnotationSubmission, SubmitResult } from "./types.js";

/**
 * Offline submission queue with idempotent retries.
 *
 * The record_id of a submission doubles as its idempotency key
 * (grader id + task id), so re-sending after a lost response can never
 * create a second server log line: the server deduplicates on record_id
 * and the queue holds at most one entry per key.
 */

export interface QueueStore {
  getItem(key: string): string | null;
  setItem(key: string, value: string): void;
  removeItem(key: string): void;
}

/** In-memory store for tests and non-browser environments. */
export class MemoryStore implements QueueStore {
  private map = new Map<string, string>();
  getItem(key: string): string | null {
    return this.map.get(key) ?? null;
  }
  setItem(key: string, value: string): void {
    this.map.set(key, value);
  }
  removeItem(key: string): void {
    this.map.delete(key);
  }
}

export function idempotencyKey(graderId: string, taskId: string): string {
  return `${graderId}:${taskId}`;
}

const DEFAULT_KEY = "fundusq_offline_queue_v1";

export class OfflineQueue {
  private flushing = false;

  constructor(
    private readonly store: QueueStore,
    private readonly storageKey: string = DEFAULT_KEY,
  ) {}

  private load(): AnnotationSubmission[] {
    try {
      const raw = this.store.getItem(this.storageKey);
      return raw ? (JSON.parse(raw) as AnnotationSubmission[]) : [];
    } catch {
      return [];
    }
  }

  private save(items: AnnotationSubmission[]): void {
    this.store.setItem(this.storageKey, JSON.stringify(items));
  }

  pending(): AnnotationSubmission[] {
    return this.load();
  }

  /** Add or replace; one queued submission per record_id, ever. */
  enqueue(submission: AnnotationSubmission): void {
    const items = this.load().filter(
      (item) => item.record_id !== submission.record_id,
    );
    items.push(submission);
    this.save(items);
  }

  /**
   * Send everything queued. Accepted and permanently-rejected entries are
   * dropped; entries that failed transiently stay for the next flush.
   * Concurrent flushes are coalesced. Returns the number accepted.
   */
  async flush(
    send: (body: AnnotationSubmission) => Promise<SubmitResult>,
  ): Promise<number> {
    if (this.flushing) return 0;
    this.flushing = true;
    try {
      let accepted = 0;
      const remain: AnnotationSubmission[] = [];
      for (const item of this.load()) {
        const result = await send(item);
        if (result.kind === "accepted") {
          accepted += 1;
        } else if (result.kind === "offline") {
          remain.push(item); // retry on the next reconnect
        }
        // "invalid" and "stale" entries can never succeed: drop them
      }
      this.save(remain);
      return accepted;
    } finally {
      this.flushing = false;
    }
  }
}
