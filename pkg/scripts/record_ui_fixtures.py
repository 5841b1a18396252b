#!/usr/bin/env python3
"""Record request/response fixtures for the scenario-explorer contract tests.

Trains the small deterministic demo model, runs the HTTP service in-process
and captures the JSON bodies the frontend replays in its tests.

Usage: python3 scripts/record_ui_fixtures.py [out_dir]
"""

import json
import sys
import tempfile
from pathlib import Path

from fastapi.testclient import TestClient

from policast import svi, synth
from policast.data import Dataset, load_dataset
from policast.forecast import hold_last_policy
from policast.model import ModelConfig
from policast.service import build_service

OUT = Path(sys.argv[1] if len(sys.argv) > 1 else "frontend/tests/fixtures")
SEED = 21
TRAIN_SEED = 3
REGION = "R01"


def demo_model():
    with tempfile.TemporaryDirectory() as tmp:
        paths = synth.generate_benchmark(tmp, seed=SEED, n_regions=3,
                                         observed_days=45, holdout_days=10)
        dataset = load_dataset(paths["features"], paths["fatalities"], paths["policies"])
    train = Dataset([r.truncated(45) for r in dataset], dataset.feature_names)
    model, _ = svi.train(train, ModelConfig(), iterations=200,
                         learning_rate=0.02, seed=TRAIN_SEED)
    return model, train


def write(name, payload):
    OUT.mkdir(parents=True, exist_ok=True)
    with open(OUT / name, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, indent=1, sort_keys=True)
        handle.write("\n")
    print(f"wrote {OUT / name}")


def main():
    model, train = demo_model()
    record = train.by_id(REGION)
    app = build_service(model, train)
    client = TestClient(app)

    write("regions.json", client.get("/regions").json())
    write("history_R01.json", client.get(f"/regions/{REGION}/history").json())

    horizon = 28
    hold = hold_last_policy(record, horizon).tolist()
    reopen = [[0.0] * record.policy.n_indicators for _ in range(horizon + 1)]

    identity = {
        "region_id": REGION, "horizon_T": horizon, "future_policy": hold,
        "num_samples": 200, "seed": 7, "shift_days": 0,
    }
    write("scenario_identity.json",
          {"request": identity, "response": client.post("/scenario", json=identity).json()})

    baseline_req = {
        "region_id": REGION, "horizon_T": horizon, "future_policy": reopen,
        "num_samples": 200, "seed": 7,
    }
    stricter_req = {
        "region_id": REGION, "horizon_T": horizon, "future_policy": hold,
        "num_samples": 200, "seed": 7,
    }
    write("scenario_reopen.json",
          {"request": baseline_req,
           "response": client.post("/scenario", json=baseline_req).json()})
    write("scenario_lockdown.json",
          {"request": stricter_req,
           "response": client.post("/scenario", json=stricter_req).json()})

    shift_req = {
        "region_id": REGION, "horizon_T": 14,
        "future_policy": hold_last_policy(record, 14).tolist(),
        "num_samples": 200, "seed": 7, "shift_days": -7,
    }
    write("scenario_shift.json",
          {"request": shift_req, "response": client.post("/scenario", json=shift_req).json()})

    invalid = {
        "region_id": REGION, "horizon_T": 2,
        "future_policy": [[1.5] * record.policy.n_indicators] * 2,
        "num_samples": 7, "seed": 0,
    }
    response = client.post("/scenario", json=invalid)
    write("scenario_invalid.json",
          {"request": invalid, "status": response.status_code, "response": response.json()})


if __name__ == "__main__":
    main()
