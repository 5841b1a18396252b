/**
 * Payload building, client-side validation and the service client.
 *
 * The UI performs no model math: everything displayed comes verbatim from a
 * ScenarioResponse or is a pure display transform. Requests are validated
 * against the same ranges the server enforces before anything is sent.
 */

import { expandWeeksToDays } from './grid.js';
import {
  ErrorResponse,
  FieldError,
  HistoryResponse,
  RegionsResponse,
  ScenarioRequest,
  ScenarioResponse,
  TimelineEditState,
} from './types.js';

export const MAX_HORIZON = 365;
export const MIN_SAMPLES = 100;
export const MAX_SAMPLES = 10000;
export const MAX_SHIFT_DAYS = 28;

/** Build the exact JSON body for POST /scenario from the edit state. */
export function buildScenarioRequest(state: TimelineEditState): ScenarioRequest {
  const request: ScenarioRequest = {
    region_id: state.regionId,
    horizon_T: state.horizonDays,
    future_policy: expandWeeksToDays(state.weeks, state.horizonDays),
    num_samples: state.numSamples,
    seed: state.seed,
  };
  if (state.shiftDays !== null) {
    request.shift_days = state.shiftDays;
  }
  return request;
}

/** Mirror of the server's range rules; returns every violation, not the first. */
export function validateState(state: TimelineEditState): FieldError[] {
  const errors: FieldError[] = [];
  if (!state.regionId) {
    errors.push({ field: 'region_id', message: 'pick a region' });
  }
  if (!Number.isInteger(state.horizonDays) || state.horizonDays < 0
      || state.horizonDays > MAX_HORIZON) {
    errors.push({ field: 'horizon_T', message: `horizon must be 0..${MAX_HORIZON} days` });
  }
  if (!Number.isInteger(state.numSamples) || state.numSamples < MIN_SAMPLES
      || state.numSamples > MAX_SAMPLES) {
    errors.push({
      field: 'num_samples',
      message: `samples must be ${MIN_SAMPLES}..${MAX_SAMPLES}`,
    });
  }
  if (!Number.isInteger(state.seed)) {
    errors.push({ field: 'seed', message: 'seed must be an integer' });
  }
  if (state.shiftDays !== null
      && (!Number.isInteger(state.shiftDays) || Math.abs(state.shiftDays) > MAX_SHIFT_DAYS)) {
    errors.push({
      field: 'shift_days',
      message: `shift must be an integer within ±${MAX_SHIFT_DAYS} days`,
    });
  }
  state.weeks.forEach((week, w) => {
    week.forEach((level, i) => {
      if (!Number.isFinite(level) || level < 0 || level > 1) {
        errors.push({ field: 'future_policy', message: `week ${w}, indicator ${i}: level must be in [0, 1]` });
      }
    });
  });
  return errors;
}

/** Map server-side field errors back onto grid cells: "day 3, indicator 1". */
export function gridCellsFromErrors(errors: FieldError[]): Array<{ week: number; indicator: number }> {
  const cells: Array<{ week: number; indicator: number }> = [];
  for (const error of errors) {
    if (error.field !== 'future_policy') continue;
    const match = /day (\d+), indicator (\d+)/.exec(error.message);
    if (match) {
      cells.push({ week: Math.floor(Number(match[1]) / 7), indicator: Number(match[2]) });
    }
  }
  return cells;
}

export class ServiceError extends Error {
  constructor(readonly status: number, readonly body: ErrorResponse) {
    super(body.error ?? body.errors?.map((e) => e.message).join('; ') ?? `HTTP ${status}`);
  }
}

/** Small fetch wrapper around the four service endpoints. */
export class ApiClient {
  constructor(private readonly baseUrl: string,
              private readonly fetchFn: typeof fetch = fetch) {}

  private async get<T>(path: string): Promise<T> {
    const response = await this.fetchFn(`${this.baseUrl}${path}`);
    const body = await response.json();
    if (!response.ok) throw new ServiceError(response.status, body);
    return body as T;
  }

  regions(): Promise<RegionsResponse> {
    return this.get<RegionsResponse>('/regions');
  }

  history(regionId: string): Promise<HistoryResponse> {
    return this.get<HistoryResponse>(`/regions/${encodeURIComponent(regionId)}/history`);
  }

  async scenario(request: ScenarioRequest): Promise<ScenarioResponse> {
    const response = await this.fetchFn(`${this.baseUrl}/scenario`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(request),
    });
    const body = await response.json();
    if (!response.ok) throw new ServiceError(response.status, body);
    return body as ScenarioResponse;
  }

  async health(): Promise<boolean> {
    try {
      const response = await this.fetchFn(`${this.baseUrl}/health`);
      return response.ok;
    } catch {
      return false;
    }
  }
}
