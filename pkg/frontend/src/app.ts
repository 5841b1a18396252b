/**
 * DOM wiring for the scenario explorer.
 *
 * One in-flight request at a time; further submissions are disabled until
 * the response or timeout lands. The service base URL is the only
 * configuration (?service=http://host:port, default localhost:8099).
 */

import { ApiClient, buildScenarioRequest, validateState, ServiceError } from './api.js';
import { differenceText, forecastOverlay, historySeries, OverlaySeries, responseOverlays } from './chart.js';
import { ALLOWED_LEVELS, initialWeeks, setLevel, weeksNeeded } from './grid.js';
import { HistoryEntry, ScenarioHistory } from './history.js';
import { HistoryResponse, RegionSummary, TimelineEditState } from './types.js';

declare const Chart: any; // chart.umd.js is loaded globally by index.html

const COLORS = ['#2a6fb0', '#c23b21', '#2e8540', '#8a4fb0'];

const serviceUrl = new URLSearchParams(window.location.search).get('service')
  ?? 'http://127.0.0.1:8099';
const api = new ApiClient(serviceUrl);
const history = new ScenarioHistory();

let regions: RegionSummary[] = [];
let regionHistory: HistoryResponse | null = null;
let state: TimelineEditState | null = null;
let inFlight = false;
let chart: any = null;

function el<T extends HTMLElement>(id: string): T {
  return document.getElementById(id) as T;
}

function banner(message: string | null, retry?: () => void) {
  const box = el<HTMLDivElement>('banner');
  box.innerHTML = '';
  if (!message) {
    box.style.display = 'none';
    return;
  }
  box.style.display = 'block';
  box.textContent = message;
  if (retry) {
    const button = document.createElement('button');
    button.textContent = 'retry';
    button.onclick = retry;
    box.appendChild(button);
  }
}

function currentRegion(): RegionSummary | null {
  const id = el<HTMLSelectElement>('region').value;
  return regions.find((r) => r.region_id === id) ?? null;
}

function resetState() {
  const region = currentRegion();
  if (!region || !regionHistory) return;
  const horizon = Number(el<HTMLInputElement>('horizon').value);
  // Seed the grid with a mid-level vector so edits start from something visible.
  const base = new Array(region.n_indicators).fill(0.5);
  state = {
    regionId: region.region_id,
    nIndicators: region.n_indicators,
    horizonDays: horizon,
    weeks: initialWeeks(horizon, base),
    shiftDays: el<HTMLInputElement>('shift-enabled').checked
      ? Number(el<HTMLInputElement>('shift').value) : null,
    numSamples: Number(el<HTMLInputElement>('samples').value),
    seed: Number(el<HTMLInputElement>('seed').value),
  };
  renderGrid();
}

function renderGrid() {
  if (!state) return;
  const table = el<HTMLTableElement>('grid');
  table.innerHTML = '';
  const head = table.insertRow();
  head.insertCell().textContent = 'indicator';
  for (let w = 0; w < state.weeks.length; w += 1) {
    head.insertCell().textContent = `week ${w + 1}`;
  }
  for (let i = 0; i < state.nIndicators; i += 1) {
    const row = table.insertRow();
    row.insertCell().textContent = `#${i + 1}`;
    for (let w = 0; w < state.weeks.length; w += 1) {
      const cell = row.insertCell();
      const select = document.createElement('select');
      for (const level of ALLOWED_LEVELS) {
        const option = document.createElement('option');
        option.value = String(level);
        option.textContent = level.toFixed(2);
        if (state.weeks[w][i] === level) option.selected = true;
        select.appendChild(option);
      }
      const week = w;
      const indicator = i;
      select.onchange = () => {
        if (state) state = setLevel(state, week, indicator, Number(select.value));
      };
      cell.appendChild(select);
    }
  }
}

function readControls() {
  if (!state) return;
  state = {
    ...state,
    horizonDays: Number(el<HTMLInputElement>('horizon').value),
    numSamples: Number(el<HTMLInputElement>('samples').value),
    seed: Number(el<HTMLInputElement>('seed').value),
    shiftDays: el<HTMLInputElement>('shift-enabled').checked
      ? Number(el<HTMLInputElement>('shift').value) : null,
  };
  if (state.weeks.length !== weeksNeeded(state.horizonDays)) {
    state = { ...state, weeks: initialWeeks(state.horizonDays, state.weeks[0]) };
    renderGrid();
  }
}

function showErrors(errors: { field: string; message: string }[]) {
  el<HTMLUListElement>('errors').innerHTML = errors
    .map((e) => `<li><b>${e.field}</b>: ${e.message}</li>`).join('');
}

function bandDataset(label: string, overlay: OverlaySeries, color: string) {
  return [
    { label: `${label} q5-q95`, data: overlay.band90.upper, fill: '+1',
      backgroundColor: `${color}22`, borderWidth: 0, pointRadius: 0 },
    { label: '_lower90', data: overlay.band90.lower, fill: false, borderWidth: 0,
      pointRadius: 0 },
    { label, data: overlay.mean, borderColor: color, borderWidth: 2,
      pointRadius: 0, fill: false },
  ];
}

function redraw() {
  if (!regionHistory) return;
  const datasets: any[] = [{
    label: 'observed',
    data: historySeries(regionHistory),
    borderColor: '#333333',
    borderWidth: 1.5,
    pointRadius: 0,
    fill: false,
  }];
  history.list().forEach((entry: HistoryEntry, index: number) => {
    const color = COLORS[index % COLORS.length];
    for (const overlay of responseOverlays(entry.label, entry.response)) {
      datasets.push(...bandDataset(overlay.label, overlay, color));
    }
  });
  const config = {
    type: 'line',
    data: { datasets },
    options: {
      animation: false,
      parsing: false,
      scales: {
        x: { type: 'linear', title: { display: true, text: 'outbreak day' } },
        y: { title: { display: true, text: 'cumulative deaths' } },
      },
      plugins: { legend: { labels: { filter: (item: any) => !item.text.startsWith('_') } } },
    },
  };
  if (chart) chart.destroy();
  chart = new Chart(el<HTMLCanvasElement>('chart'), config);
}

async function submit() {
  if (!state || inFlight) return;
  readControls();
  showErrors([]);
  const errors = validateState(state!);
  if (errors.length) {
    showErrors(errors);
    return;
  }
  const request = buildScenarioRequest(state!);
  const cached = history.findCached(request);
  if (cached) {
    el<HTMLSpanElement>('status').textContent = `cached (${cached.label})`;
    return;
  }
  inFlight = true;
  el<HTMLButtonElement>('submit').disabled = true;
  el<HTMLSpanElement>('status').textContent = 'computing...';
  try {
    const response = await api.scenario(request);
    const entry = history.push(request, response);
    const difference = differenceText(response);
    el<HTMLSpanElement>('status').textContent =
      difference ? `${entry.label}: ${difference}` : `${entry.label} done`;
    redraw();
  } catch (error) {
    if (error instanceof ServiceError && error.body.errors) {
      showErrors(error.body.errors);
    } else {
      banner(`service error: ${String(error)}`, () => { banner(null); void submit(); });
    }
    el<HTMLSpanElement>('status').textContent = '';
  } finally {
    inFlight = false;
    el<HTMLButtonElement>('submit').disabled = false;
  }
}

async function loadRegion() {
  const region = currentRegion();
  if (!region) return;
  regionHistory = await api.history(region.region_id);
  resetState();
  history.clear();
  redraw();
}

async function boot() {
  if (!(await api.health())) {
    banner(`cannot reach the forecasting service at ${serviceUrl}`, () => { banner(null); void boot(); });
    return;
  }
  banner(null);
  const listing = await api.regions();
  regions = listing.regions;
  const select = el<HTMLSelectElement>('region');
  select.innerHTML = regions
    .map((r) => `<option value="${r.region_id}">${r.region_id}</option>`).join('');
  select.onchange = () => { void loadRegion(); };
  el<HTMLButtonElement>('submit').onclick = () => { void submit(); };
  el<HTMLButtonElement>('reset').onclick = () => resetState();
  await loadRegion();
}

void boot();
