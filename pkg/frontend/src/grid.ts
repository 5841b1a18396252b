/**
 * Week-granularity policy editing grid.
 *
 * The service wants one indicator vector per day over [t, t+T]; editing 29+
 * day rows by hand is unusable, so the grid holds one row per week and the
 * payload builder expands it. Levels are snapped into [0, 1].
 */

import { TimelineEditState, WeekLevels } from './types.js';

export const ALLOWED_LEVELS = [0, 0.25, 0.5, 0.75, 1];

export function weeksNeeded(horizonDays: number): number {
  return Math.ceil((horizonDays + 1) / 7);
}

export function clampLevel(value: number): number {
  if (!Number.isFinite(value)) return 0;
  return Math.min(1, Math.max(0, value));
}

/** Nearest allowed discrete level for a slider/typed value. */
export function snapLevel(value: number): number {
  const v = clampLevel(value);
  let best = ALLOWED_LEVELS[0];
  for (const level of ALLOWED_LEVELS) {
    if (Math.abs(level - v) < Math.abs(best - v)) best = level;
  }
  return best;
}

/** Grid initialised to a constant vector (typically the last observed policy). */
export function initialWeeks(horizonDays: number, baseVector: number[]): WeekLevels[] {
  const weeks: WeekLevels[] = [];
  for (let w = 0; w < weeksNeeded(horizonDays); w += 1) {
    weeks.push(baseVector.map(clampLevel));
  }
  return weeks;
}

/**
 * Expand week rows to the per-day matrix the service expects:
 * horizonDays + 1 rows (the present day plus the horizon).
 */
export function expandWeeksToDays(weeks: WeekLevels[], horizonDays: number): number[][] {
  const days: number[][] = [];
  for (let d = 0; d <= horizonDays; d += 1) {
    const week = Math.min(Math.floor(d / 7), weeks.length - 1);
    days.push(weeks[week].slice());
  }
  return days;
}

export function setLevel(state: TimelineEditState, week: number, indicator: number,
                         value: number): TimelineEditState {
  const weeks = state.weeks.map((row) => row.slice());
  weeks[week][indicator] = snapLevel(value);
  return { ...state, weeks };
}
