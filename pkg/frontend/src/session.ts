import type { AnnotationApi } from "./api.js";
import { isOnGrid, scoreFromDigit, stepScore } from "./grid.js";
import { idempotencyKey, OfflineQueue } from "./offlineQueue.js";
import type {
  AnnotationSubmission,
  AnnotationTask,
  ReferenceScale,
  Violation,
} from "./types.js";

export type View = "loading" | "grading" | "done" | "error";

export interface SessionState {
  view: View;
  scale: ReferenceScale | null;
  task: AnnotationTask | null;
  selected: number | null;
  completed: number;
  remaining: number;
  violations: Violation[];
  offline: boolean;
  queued: number;
  message: string;
}

type Listener = (state: SessionState) => void;

/**
 * Grading session state machine.
 *
 * Scores enter only through selectScore/adjust/handleKey, all of which
 * go through the grid module, so submit() can never send an off-grid or
 * out-of-range value. Submission stays disabled until a score is chosen.
 */
export class GradingSession {
  readonly state: SessionState = {
    view: "loading",
    scale: null,
    task: null,
    selected: null,
    completed: 0,
    remaining: 0,
    violations: [],
    offline: false,
    queued: 0,
    message: "",
  };

  private listeners: Listener[] = [];

  constructor(
    private readonly api: AnnotationApi,
    private readonly queue: OfflineQueue,
  ) {}

  onChange(listener: Listener): void {
    this.listeners.push(listener);
  }

  exportUrl(): string {
    return this.api.exportUrl();
  }

  private emit(): void {
    this.state.queued = this.queue.pending().length;
    for (const listener of this.listeners) listener(this.state);
  }

  async start(): Promise<void> {
    try {
      this.state.scale = await this.api.fetchScale();
      await this.advance();
    } catch (err) {
      this.state.view = "error";
      this.state.message = err instanceof Error ? err.message : String(err);
      this.emit();
    }
  }

  private async advance(): Promise<void> {
    try {
      const task = await this.api.nextTask();
      this.state.task = task;
      this.state.selected = null;
      this.state.violations = [];
      if (task === null) {
        this.state.view = "done";
        this.state.remaining = 0;
      } else {
        this.state.view = "grading";
        this.state.remaining = task.remaining;
      }
      this.state.offline = false;
    } catch {
      // offline: keep the current task on screen so nothing is lost
      this.state.offline = true;
      this.state.message = "offline: submissions will be queued";
    }
    this.emit();
  }

  /** Accepts only grid scores; anything else is ignored. */
  selectScore(value: number): boolean {
    if (!isOnGrid(value)) return false;
    this.state.selected = value;
    this.emit();
    return true;
  }

  adjust(direction: -1 | 1): void {
    this.state.selected = stepScore(this.state.selected, direction);
    this.emit();
  }

  /** Keyboard shortcuts: digits pick whole grades, arrows half-steps. */
  handleKey(key: string): void {
    const digit = scoreFromDigit(key);
    if (digit !== null) {
      this.selectScore(digit);
      return;
    }
    if (key === "ArrowUp" || key === "ArrowRight") this.adjust(1);
    if (key === "ArrowDown" || key === "ArrowLeft") this.adjust(-1);
  }

  get canSubmit(): boolean {
    return (
      this.state.view === "grading" &&
      this.state.task !== null &&
      this.state.selected !== null
    );
  }

  private buildSubmission(): AnnotationSubmission {
    const task = this.state.task!;
    return {
      record_id: idempotencyKey(this.api.graderId, task.task_id),
      image_id: task.task_id,
      grader_id: this.api.graderId,
      score: this.state.selected!,
      scale_version: task.scale_version,
    };
  }

  async submit(): Promise<void> {
    if (!this.canSubmit) return;
    const body = this.buildSubmission();
    const result = await this.api.submit(body);
    switch (result.kind) {
      case "accepted":
        this.state.completed += 1;
        await this.advance();
        break;
      case "invalid":
        // keep the selection so the grader can correct it
        this.state.violations = result.violations;
        this.emit();
        break;
      case "stale":
        this.state.message = "task was withdrawn; fetching the next one";
        await this.advance();
        break;
      case "offline":
        this.queue.enqueue(body);
        this.state.completed += 1; // acknowledged locally, will sync
        this.state.offline = true;
        this.state.message = "offline: submission queued";
        await this.advance();
        break;
    }
  }

  /** Called on reconnect: drain the queue, then refresh the task. */
  async sync(): Promise<number> {
    const accepted = await this.queue.flush((body) => this.api.submit(body));
    if (this.state.view === "loading") {
      // start() has not run yet; it will fetch the scale and first task
      this.emit();
      return accepted;
    }
    if (this.state.offline || this.state.task === null) {
      await this.advance();
    } else {
      this.emit();
    }
    return accepted;
  }
}
