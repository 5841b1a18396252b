"""Local HTTP JSON service over a trained checkpoint.

A thin, stateless adapter: every response is reproducible by calling the
forecasting library directly with the same arguments. Scenario
computations run on a bounded worker pool; requests that cannot finish
within the timeout get a 503.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from concurrent.futures import TimeoutError as FutureTimeout
from dataclasses import dataclass
from typing import Optional

import numpy as np
from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from . import forecast as fc
from .data import Dataset, stringency_index
from .errors import PolicastError
from .svi import PosteriorModel, load_checkpoint

SCHEMA_VERSION = 1
MAX_HORIZON = 365
MAX_NUM_SAMPLES = 10000
DEFAULT_WORKERS = 2
DEFAULT_TIMEOUT_SECONDS = 60.0


@dataclass(frozen=True)
class ScenarioRequest:
    region_id: str
    horizon_T: int
    future_policy: np.ndarray
    num_samples: int = 1000
    seed: int = 0
    shift_days: Optional[int] = None


def validate_request(raw) -> tuple:
    """Full structural and range validation of a scenario request body.

    Returns (ScenarioRequest or None, errors); ``errors`` aggregates every
    violation as {"field", "message"} rather than stopping at the first.
    """
    errors = []

    def bad(field, message):
        errors.append({"field": field, "message": message})

    if not isinstance(raw, dict):
        return None, [{"field": "", "message": "request body must be a JSON object"}]

    region_id = raw.get("region_id")
    if not isinstance(region_id, str) or not region_id:
        bad("region_id", "required string")

    horizon = raw.get("horizon_T")
    if not isinstance(horizon, int) or isinstance(horizon, bool) or not 0 <= horizon <= MAX_HORIZON:
        bad("horizon_T", f"required integer in [0, {MAX_HORIZON}]")
        horizon = None

    num_samples = raw.get("num_samples", 1000)
    if (not isinstance(num_samples, int) or isinstance(num_samples, bool)
            or not fc.MIN_FORECAST_SAMPLES <= num_samples <= MAX_NUM_SAMPLES):
        bad("num_samples", f"integer in [{fc.MIN_FORECAST_SAMPLES}, {MAX_NUM_SAMPLES}]")

    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        bad("seed", "must be an integer")

    shift = raw.get("shift_days")
    if shift is not None and (not isinstance(shift, int) or isinstance(shift, bool)
                              or abs(shift) > fc.MAX_SHIFT_DAYS):
        bad("shift_days", f"integer with |shift_days| <= {fc.MAX_SHIFT_DAYS}")

    policy = raw.get("future_policy")
    matrix = None
    if not isinstance(policy, list) or not policy:
        bad("future_policy", "required non-empty list of per-day indicator vectors")
    else:
        widths = {len(row) if isinstance(row, list) else -1 for row in policy}
        if -1 in widths or len(widths) != 1:
            bad("future_policy", "every day must be a list of indicator values of equal length")
        else:
            for day_idx, row in enumerate(policy):
                for ind_idx, value in enumerate(row):
                    if not isinstance(value, (int, float)) or isinstance(value, bool) \
                            or not 0.0 <= float(value) <= 1.0:
                        bad("future_policy",
                            f"day {day_idx}, indicator {ind_idx}: value must lie in [0, 1]")
            if horizon is not None and len(policy) != horizon + 1:
                bad("future_policy",
                    f"expected horizon_T + 1 = {horizon + 1} rows, got {len(policy)}")
            if not errors:
                matrix = np.array(policy, dtype=float)

    if errors:
        return None, errors
    return ScenarioRequest(region_id, horizon, matrix, num_samples, seed, shift), []


def _region_summary(record) -> dict:
    return {
        "region_id": record.region_id,
        "parent_country": record.parent_country,
        "population": float(record.population),
        "anchor_date": record.anchor_date.isoformat(),
        "observed_days": record.n_observed_days,
        "n_indicators": record.policy.n_indicators,
        "last_cumulative_deaths": float(record.fatalities[-1]),
    }


def build_service(model: PosteriorModel, dataset: Dataset,
                  workers: int = DEFAULT_WORKERS,
                  timeout_seconds: float = DEFAULT_TIMEOUT_SECONDS,
                  ui_origin: str = "*") -> FastAPI:
    app = FastAPI(title="policast", docs_url=None, redoc_url=None)
    app.add_middleware(
        CORSMiddleware, allow_origins=[ui_origin], allow_methods=["*"], allow_headers=["*"],
    )
    records = {r.region_id: r for r in dataset}
    pool = ThreadPoolExecutor(max_workers=workers)
    checkpoint_id = model.checkpoint_id

    @app.get("/health")
    def health():
        return {"status": "ok", "checkpoint": checkpoint_id,
                "schema_version": SCHEMA_VERSION}

    @app.get("/regions")
    def regions():
        return {
            "schema_version": SCHEMA_VERSION,
            "checkpoint": checkpoint_id,
            "regions": [_region_summary(records[rid])
                        for rid in records if rid in model.regions],
        }

    @app.get("/regions/{region_id}/history")
    def history(region_id: str):
        if region_id not in records:
            return JSONResponse({"schema_version": SCHEMA_VERSION,
                                 "error": f"unknown region {region_id!r}"}, status_code=404)
        record = records[region_id]
        deaths = record.fatalities
        daily = np.diff(np.concatenate([[0.0], deaths]))
        return {
            "schema_version": SCHEMA_VERSION,
            "region_id": region_id,
            "days": list(range(1, record.n_observed_days + 1)),
            "dates": [record.date_of_day(d).isoformat()
                      for d in range(1, record.n_observed_days + 1)],
            "cumulative_deaths": [float(v) for v in deaths],
            "daily_deaths": [float(v) for v in daily],
            "stringency": [float(v) for v in
                           record.policy.stringency_series()[: record.n_observed_days]],
        }

    def _run_scenario(req: ScenarioRequest) -> dict:
        if req.shift_days is not None:
            baseline = fc.forecast(
                model, records,
                fc.ScenarioSpec(req.region_id, req.future_policy, req.horizon_T,
                                historical_edit=0),
                num_samples=req.num_samples, seed=req.seed,
            )
            shifted = fc.forecast(
                model, records,
                fc.ScenarioSpec(req.region_id, req.future_policy, req.horizon_T,
                                historical_edit=req.shift_days),
                num_samples=req.num_samples, seed=req.seed,
            )
            result, base_dict = shifted, baseline.to_dict()
            difference = float(shifted.mean[-1] - baseline.mean[-1])
        else:
            spec = fc.ScenarioSpec(req.region_id, req.future_policy, req.horizon_T)
            result = fc.forecast(model, records, spec,
                                 num_samples=req.num_samples, seed=req.seed)
            base_dict, difference = None, None
        return {
            "schema_version": SCHEMA_VERSION,
            "checkpoint": checkpoint_id,
            "region": _region_summary(records[req.region_id]),
            "horizon_T": req.horizon_T,
            "shift_days": req.shift_days,
            "stringency": [stringency_index(row) for row in req.future_policy],
            "forecast": result.to_dict(),
            "baseline": base_dict,
            "cumulative_difference": difference,
        }

    @app.post("/scenario")
    async def scenario(request: Request):
        try:
            raw = await request.json()
        except Exception:
            return JSONResponse({"schema_version": SCHEMA_VERSION,
                                 "errors": [{"field": "", "message": "invalid JSON body"}]},
                                status_code=400)
        req, errors = validate_request(raw)
        if errors:
            return JSONResponse({"schema_version": SCHEMA_VERSION, "errors": errors},
                                status_code=400)
        if req.region_id not in records or req.region_id not in model.regions:
            return JSONResponse({"schema_version": SCHEMA_VERSION,
                                 "error": f"unknown region {req.region_id!r}"},
                                status_code=404)
        if req.future_policy.shape[1] != records[req.region_id].policy.n_indicators:
            return JSONResponse(
                {"schema_version": SCHEMA_VERSION,
                 "errors": [{"field": "future_policy",
                             "message": f"expected {records[req.region_id].policy.n_indicators} "
                                        "indicators per day"}]},
                status_code=400)
        future = pool.submit(_run_scenario, req)
        try:
            payload = future.result(timeout=timeout_seconds)
        except FutureTimeout:
            future.cancel()
            return JSONResponse({"schema_version": SCHEMA_VERSION,
                                 "error": "scenario pool saturated; retry later"},
                                status_code=503)
        except PolicastError as exc:
            return JSONResponse({"schema_version": SCHEMA_VERSION,
                                 "error": str(exc), "error_id": type(exc).__name__},
                                status_code=500)
        return JSONResponse(payload)

    return app


def serve(checkpoint_path, dataset_paths: dict, bind_address: str = "127.0.0.1:8099",
          ingest_config=None):
    """Load the checkpoint and dataset, then serve until interrupted."""
    import uvicorn

    from .data import load_dataset

    model = load_checkpoint(checkpoint_path)
    dataset = load_dataset(dataset_paths["features"], dataset_paths["fatalities"],
                           dataset_paths["policies"], ingest_config)
    app = build_service(model, dataset)
    host, _, port = bind_address.partition(":")
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port or 8099), log_level="warning")
