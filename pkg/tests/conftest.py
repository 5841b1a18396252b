import sys
from datetime import date
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from policast.data import Dataset, PolicyTimeline, RegionRecord
from policast.model import ModelConfig

FIXTURES = Path(__file__).parent / "fixtures"


def make_region(region_id="R1", n_days=20, lockdown_day=10, population=1e6,
                n_indicators=3, features=None, seed=0):
    """Small synthetic region with one policy change and a plausible curve."""
    rng = np.random.default_rng(seed)
    indicators = np.zeros((n_days, n_indicators))
    indicators[lockdown_day - 1 :, : max(1, n_indicators - 1)] = 1.0
    growth = np.where(np.arange(n_days) < lockdown_day, 0.18, 0.05)
    deaths = np.rint(np.exp(np.cumsum(growth)) + rng.uniform(0, 0.4, n_days))
    fatalities = np.maximum.accumulate(np.maximum(deaths, 1.0))
    return RegionRecord(
        region_id=region_id,
        features=features if features is not None else rng.standard_normal(2),
        population=population,
        fatalities=fatalities,
        anchor_date=date(2020, 3, 1),
        policy=PolicyTimeline(indicators, date(2020, 3, 1)),
    )


@pytest.fixture(scope="session")
def toy_region():
    return make_region()


@pytest.fixture(scope="session")
def toy_pair():
    return [make_region("A", seed=1, features=np.array([0.5, -0.3])),
            make_region("B", seed=2, lockdown_day=8, features=np.array([-0.8, 0.4]))]


@pytest.fixture(scope="session")
def config():
    return ModelConfig()


@pytest.fixture(scope="session")
def mini_benchmark(tmp_path_factory):
    """Three-region synthetic dataset, short training, shared across tests."""
    from policast import svi, synth
    from policast.data import load_dataset

    out = tmp_path_factory.mktemp("mini_bench")
    paths = synth.generate_benchmark(out, seed=21, n_regions=3, observed_days=45,
                                     holdout_days=10)
    dataset = load_dataset(paths["features"], paths["fatalities"], paths["policies"])
    train = Dataset([r.truncated(45) for r in dataset], dataset.feature_names)
    model, report = svi.train(train, ModelConfig(), iterations=200,
                              learning_rate=0.02, seed=3)
    return {"paths": paths, "full": dataset, "train": train, "model": model,
            "report": report}
