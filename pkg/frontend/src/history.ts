/**
 * In-browser scenario history: compare up to four submissions side by side.
 *
 * Oldest entries are evicted beyond the capacity. Submitting a request
 * identical to a stored one is reported as cached (the backend is
 * deterministic for a fixed seed, so the stored response is still exact).
 */

import { ScenarioRequest, ScenarioResponse } from './types.js';

export const HISTORY_CAPACITY = 4;

export interface HistoryEntry {
  label: string;
  request: ScenarioRequest;
  response: ScenarioResponse;
}

export function requestsEqual(a: ScenarioRequest, b: ScenarioRequest): boolean {
  return JSON.stringify(a) === JSON.stringify(b);
}

export class ScenarioHistory {
  private entries: HistoryEntry[] = [];
  private counter = 0;

  list(): readonly HistoryEntry[] {
    return this.entries;
  }

  /** Stored entry for an identical request, if any ("cached"). */
  findCached(request: ScenarioRequest): HistoryEntry | null {
    return this.entries.find((e) => requestsEqual(e.request, request)) ?? null;
  }

  push(request: ScenarioRequest, response: ScenarioResponse): HistoryEntry {
    this.counter += 1;
    const entry: HistoryEntry = {
      label: `scenario ${this.counter}`,
      request,
      response,
    };
    this.entries.push(entry);
    if (this.entries.length > HISTORY_CAPACITY) {
      this.entries.shift();
    }
    return entry;
  }

  clear(): void {
    this.entries = [];
    this.counter = 0;
  }
}
