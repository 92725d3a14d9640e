import type {
  AnnotationSubmission,
  AnnotationTask,
  ReferenceScale,
  SubmitResult,
} from "../src/types";
import { isOnGrid } from "../src/grid";

/** Deterministic RNG for property-style tests. */
export function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a |= 0;
    a = (a + 0x6d2b79f5) | 0;
    let t = Math.imul(a ^ (a >>> 15), 1 | a);
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t;
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

export function makeScale(count = 28): ReferenceScale {
  const grid = Array.from({ length: 19 }, (_, i) => 1.0 + 0.5 * i);
  const extras = [2.0, 3.5, 5.0, 6.0, 6.5, 7.0, 7.5, 8.5, 9.5];
  const scores = grid.concat(extras).slice(0, count);
  // deliberately shuffled: rendering must sort ascending itself
  scores.reverse();
  return {
    version: "1.0.0",
    exemplars: scores.map((score, i) => ({
      score,
      image_uri: `http://img.test/exemplar-${i}.png`,
      source: "ORIGA",
    })),
  };
}

/**
 * In-memory stand-in for the annotation service with the same semantics:
 * half-step validation, 409 for unknown tasks, append-only log that
 * deduplicates on record_id. Optional fault injection: `failNext` makes
 * the next submit fail BEFORE the server sees it, `loseNext` makes the
 * server process the submission but lose the response (the client sees a
 * network error although the log line exists).
 */
export class FakeService {
  log: AnnotationSubmission[] = [];
  tasks: string[];
  scale: ReferenceScale;
  failNext = 0;
  loseNext = 0;
  networkDown = false; // takes nextTask down too, like a real outage
  submitCalls = 0;

  constructor(taskIds: string[], scale: ReferenceScale = makeScale()) {
    this.tasks = [...taskIds];
    this.scale = scale;
  }

  private openTasks(): string[] {
    const done = new Set(this.log.map((entry) => entry.image_id));
    return this.tasks.filter((id) => !done.has(id));
  }

  nextTask(): AnnotationTask | null {
    if (this.networkDown) throw new Error("network unreachable");
    const open = this.openTasks();
    if (open.length === 0) return null;
    return {
      task_id: open[0],
      image_uri: `http://img.test/${open[0]}.png`,
      remaining: open.length,
      scale_version: this.scale.version,
    };
  }

  submit(body: AnnotationSubmission): SubmitResult {
    this.submitCalls += 1;
    if (this.networkDown) return { kind: "offline" };
    if (this.failNext > 0) {
      this.failNext -= 1;
      return { kind: "offline" };
    }
    if (!this.tasks.includes(body.image_id)) return { kind: "stale" };
    if (!isOnGrid(body.score)) {
      return {
        kind: "invalid",
        violations: [{ kind: "grid", message: `score ${body.score} off-grid` }],
      };
    }
    if (body.scale_version !== this.scale.version) {
      return {
        kind: "invalid",
        violations: [{ kind: "version", message: "stale scale version" }],
      };
    }
    // idempotent append, exactly like the real log
    if (!this.log.some((entry) => entry.record_id === body.record_id)) {
      this.log.push(body);
    }
    if (this.loseNext > 0) {
      this.loseNext -= 1;
      return { kind: "offline" }; // server wrote the line, client never knows
    }
    return { kind: "accepted" };
  }
}

/** AnnotationApi-compatible adapter over FakeService. */
export function fakeApi(service: FakeService, graderId = "g1") {
  return {
    graderId,
    exportUrl: () => "http://svc.test/v1/annotation/export",
    fetchScale: async () => service.scale,
    nextTask: async () => service.nextTask(),
    submit: async (body: AnnotationSubmission) => service.submit(body),
  };
}
