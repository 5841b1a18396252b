/**
 * Pure dataset builders for the forecast chart.
 *
 * Everything here is a display transform of response arrays; chart.js is
 * instantiated in app.ts so these stay testable without a DOM.
 */

import { ForecastSeries, HistoryResponse, ScenarioResponse } from './types.js';

export interface XyPoint {
  x: number;
  y: number;
}

export interface OverlaySeries {
  label: string;
  mean: XyPoint[];
  band90: { lower: XyPoint[]; upper: XyPoint[] };
  band50: { lower: XyPoint[]; upper: XyPoint[] };
}

function points(days: number[], values: number[]): XyPoint[] {
  return days.map((day, i) => ({ x: day, y: values[i] }));
}

export function historySeries(history: HistoryResponse, daily = false): XyPoint[] {
  return points(history.days, daily ? history.daily_deaths : history.cumulative_deaths);
}

export function forecastOverlay(label: string, series: ForecastSeries,
                                daily = false): OverlaySeries {
  if (daily) {
    const d = points(series.days, series.daily_mean);
    return { label, mean: d, band90: { lower: d, upper: d }, band50: { lower: d, upper: d } };
  }
  return {
    label,
    mean: points(series.days, series.mean),
    band90: { lower: points(series.days, series.q5), upper: points(series.days, series.q95) },
    band50: { lower: points(series.days, series.q25), upper: points(series.days, series.q75) },
  };
}

/** Overlays for one response: edited scenario plus the baseline when present. */
export function responseOverlays(label: string, response: ScenarioResponse): OverlaySeries[] {
  const overlays = [forecastOverlay(label, response.forecast)];
  if (response.baseline) {
    overlays.push(forecastOverlay(`${label} (baseline)`, response.baseline));
  }
  return overlays;
}

/** Counterfactual difference readout, verbatim from the response. */
export function differenceText(response: ScenarioResponse): string | null {
  if (response.cumulative_difference === null) return null;
  const diff = response.cumulative_difference;
  const magnitude = Math.abs(diff).toFixed(1);
  if (diff === 0) return 'no change in final cumulative deaths';
  return diff < 0
    ? `${magnitude} fewer cumulative deaths than baseline`
    : `${magnitude} more cumulative deaths than baseline`;
}
