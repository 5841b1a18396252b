/**
 * Wire types for the forecasting service (schema_version 1).
 *
 * These mirror the JSON bodies exactly; the contract tests replay recorded
 * fixtures through the builders to keep them honest.
 */

export interface RegionSummary {
  region_id: string;
  parent_country: string | null;
  population: number;
  anchor_date: string;
  observed_days: number;
  n_indicators: number;
  last_cumulative_deaths: number;
}

export interface RegionsResponse {
  schema_version: number;
  checkpoint: string;
  regions: RegionSummary[];
}

export interface HistoryResponse {
  schema_version: number;
  region_id: string;
  days: number[];
  dates: string[];
  cumulative_deaths: number[];
  daily_deaths: number[];
  stringency: number[];
}

export interface ForecastSeries {
  days: number[];
  dates: string[];
  mean: number[];
  q5: number[];
  q25: number[];
  q50: number[];
  q75: number[];
  q95: number[];
  daily_mean: number[];
  num_samples: number;
  seed: number;
}

export interface ScenarioRequest {
  region_id: string;
  horizon_T: number;
  future_policy: number[][];
  num_samples: number;
  seed: number;
  shift_days?: number;
}

export interface ScenarioResponse {
  schema_version: number;
  checkpoint: string;
  region: RegionSummary;
  horizon_T: number;
  shift_days: number | null;
  stringency: number[];
  forecast: ForecastSeries;
  baseline: ForecastSeries | null;
  cumulative_difference: number | null;
}

export interface FieldError {
  field: string;
  message: string;
}

export interface ErrorResponse {
  schema_version: number;
  errors?: FieldError[];
  error?: string;
}

/** One editable week: a level per indicator, applied to each of its days. */
export type WeekLevels = number[];

export interface TimelineEditState {
  regionId: string;
  nIndicators: number;
  horizonDays: number;
  /** Week-granularity grid; expanded to per-day vectors on submission. */
  weeks: WeekLevels[];
  shiftDays: number | null;
  numSamples: number;
  seed: number;
}
