import type {
  AnnotationSubmission,
  AnnotationTask,
  ReferenceScale,
  SubmitResult,
} from "./types.js";

export interface ApiConfig {
  baseUrl: string;
  graderId: string;
  /** Injectable for tests and non-browser environments. */
  fetchFn?: typeof fetch;
}

/** Thin client over the service's /v1/reference-scale and /v1/annotation/*. */
export class AnnotationApi {
  private readonly baseUrl: string;
  readonly graderId: string;
  private readonly fetchFn: typeof fetch;

  constructor(config: ApiConfig) {
    this.baseUrl = config.baseUrl.replace(/\/$/, "");
    this.graderId = config.graderId;
    this.fetchFn = config.fetchFn ?? fetch.bind(globalThis);
  }

  exportUrl(): string {
    return `${this.baseUrl}/v1/annotation/export`;
  }

  async fetchScale(): Promise<ReferenceScale> {
    const res = await this.fetchFn(`${this.baseUrl}/v1/reference-scale`);
    if (!res.ok) throw new Error(`reference scale unavailable (${res.status})`);
    return (await res.json()) as ReferenceScale;
  }

  /** Next open task for this grader, or null when the queue is done. */
  async nextTask(): Promise<AnnotationTask | null> {
    const res = await this.fetchFn(`${this.baseUrl}/v1/annotation/next`, {
      headers: { "X-Grader-Id": this.graderId },
    });
    if (res.status === 204) return null;
    if (!res.ok) throw new Error(`next task failed (${res.status})`);
    return (await res.json()) as AnnotationTask;
  }

  async submit(body: AnnotationSubmission): Promise<SubmitResult> {
    let res: Response;
    try {
      res = await this.fetchFn(`${this.baseUrl}/v1/annotation`, {
        method: "POST",
        headers: {
          "Content-Type": "application/json",
          "X-Grader-Id": this.graderId,
        },
        body: JSON.stringify(body),
      });
    } catch {
      return { kind: "offline" };
    }
    if (res.status === 201) return { kind: "accepted" };
    if (res.status === 422) {
      const payload = await res.json().catch(() => ({ violations: [] }));
      return { kind: "invalid", violations: payload.violations ?? [] };
    }
    if (res.status === 409) return { kind: "stale" };
    // 5xx and anything unexpected: worth retrying later
    return { kind: "offline" };
  }
}
