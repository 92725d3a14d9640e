/**
 * The half-step score grid: 1.0, 1.5, ... 10.0.
 *
 * Every score that leaves the UI passes through this module, so an
 * off-grid or out-of-range value is unrepresentable by construction.
 */

export const SCORE_MIN = 1.0;
export const SCORE_MAX = 10.0;
export const STEP = 0.5;

/** All 19 legal grades in ascending order. */
export const GRID: readonly number[] = Object.freeze(
  Array.from({ length: 19 }, (_, i) => SCORE_MIN + i * STEP),
);

export function isOnGrid(value: number): boolean {
  if (!Number.isFinite(value)) return false;
  if (value < SCORE_MIN || value > SCORE_MAX) return false;
  return Math.abs(value * 2 - Math.round(value * 2)) < 1e-9;
}

/** Index of a grid score in GRID, or -1 when off-grid. */
export function gridIndex(value: number): number {
  if (!isOnGrid(value)) return -1;
  return Math.round((value - SCORE_MIN) / STEP);
}

/** Move one half-step from the current selection, staying in range. */
export function stepScore(current: number | null, direction: -1 | 1): number {
  if (current === null || !isOnGrid(current)) {
    return direction > 0 ? SCORE_MIN : SCORE_MAX;
  }
  const next = current + direction * STEP;
  return Math.min(Math.max(next, SCORE_MIN), SCORE_MAX);
}

/** Digit keys select whole grades: '1'..'9' -> 1..9, '0' -> 10. */
export function scoreFromDigit(key: string): number | null {
  if (!/^[0-9]$/.test(key)) return null;
  return key === "0" ? 10.0 : Number(key);
}
