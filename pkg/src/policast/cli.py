"""Command-line entry point: ingest, train, forecast, scenario, evaluate, serve, synth.

Configuration is a flat key=value text file (one key per line, # comments
allowed); flags override file values and the effective configuration is
echoed into the output directory for reproducibility. Exit codes: 0 ok,
2 usage, 3 data error, 4 numerical error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import forecast as fc
from . import svi, synth
from .data import Dataset, IngestConfig, load_dataset, save_dataset
from .errors import (
    AlignmentError,
    FitError,
    ForecastError,
    IntegrationError,
    JoinError,
    NumericalError,
    ParseError,
    PolicastError,
    ShapeError,
    TrainingError,
)
from .model import ModelConfig

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

_DATA_ERRORS = (ParseError, JoinError, AlignmentError, ShapeError, KeyError, FileNotFoundError)
_NUMERIC_ERRORS = (NumericalError, IntegrationError, TrainingError, FitError, ForecastError)


@dataclass(frozen=True)
class RunConfig:
    """Every tunable of the pipeline, with defaults.

    Unknown keys in a config file are rejected.
    """

    # data feeds
    features_path: str = ""
    fatalities_path: str = ""
    policies_path: str = ""
    population_column: str = "population"
    outbreak_threshold: float = 1.0
    min_observed_days: int = 5
    # model (see ModelConfig)
    beta_reference: float = 0.5
    observation_space: str = "log1p_cumulative"
    seir_step_size: float = 0.25
    kernel_family: str = "matern_three_half"
    contact_mean: float = ModelConfig().contact_mean
    contact_signal_variance: float = 1.0
    contact_feature_lengthscale: float = 3.0
    contact_policy_lengthscale: float = 0.5
    timescale_mean: float = ModelConfig().timescale_mean
    timescale_signal_variance: float = 1.0
    incubation_mean: float = ModelConfig().incubation_mean
    incubation_signal_variance: float = 0.25
    recovery_mean: float = ModelConfig().recovery_mean
    recovery_signal_variance: float = 0.25
    mortality_mean: float = ModelConfig().mortality_mean
    mortality_signal_variance: float = 0.25
    lower_signal_variance: float = 0.05
    lower_noise_variance: float = 0.01
    initial_exposed_multiplier: float = 10.0
    initial_infectious_ratio: float = 0.5
    # training
    iterations: int = 1000
    learning_rate: float = 0.01
    num_samples: int = 8
    seed: int = 0
    train_days: int = 0  # 0 = use the full observed window
    # forecasting / evaluation
    horizon: int = 14
    forecast_samples: int = 1000
    shift_days: int = 0
    eval_horizons: str = "7,14"
    # synth benchmark
    synth_regions: int = 12
    synth_features: int = 6
    synth_indicators: int = 9
    synth_observed_days: int = 74
    synth_holdout_days: int = 14

    def model_config(self) -> ModelConfig:
        names = {f.name for f in fields(ModelConfig)}
        return ModelConfig(**{f.name: getattr(self, f.name)
                              for f in fields(RunConfig) if f.name in names})

    def ingest_config(self) -> IngestConfig:
        return IngestConfig(
            outbreak_threshold=self.outbreak_threshold,
            min_observed_days=self.min_observed_days,
            population_column=self.population_column,
        )

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def load_run_config(path=None, overrides=None) -> RunConfig:
    """Config file plus flag overrides; flags win."""
    values = {}
    if path:
        known = {f.name: f.type for f in fields(RunConfig)}
        defaults = RunConfig()
        with open(path, encoding="utf-8") as handle:
            for lineno, raw in enumerate(handle, start=1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ParseError("expected key=value", path=str(path), line=lineno)
                key, _, value = line.partition("=")
                key = key.strip()
                if key not in known:
                    raise ParseError(f"unknown config key {key!r}", path=str(path), line=lineno)
                default = getattr(defaults, key)
                try:
                    if isinstance(default, bool):
                        parsed = value.strip().lower() in ("1", "true", "yes")
                    elif isinstance(default, int):
                        parsed = int(value.strip())
                    elif isinstance(default, float):
                        parsed = float(value.strip())
                    else:
                        parsed = value.strip()
                except ValueError:
                    raise ParseError(f"bad value for {key}", path=str(path), line=lineno) from None
                values[key] = parsed
    config = RunConfig(**values)
    if overrides:
        config = replace(config, **{k: v for k, v in overrides.items() if v is not None})
    return config


def echo_config(config: RunConfig, out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "effective_config.txt", "w", encoding="utf-8") as handle:
        for key, value in sorted(config.as_dict().items()):
            handle.write(f"{key}={value}\n")


def _load_data(config: RunConfig) -> Dataset:
    for key in ("features_path", "fatalities_path", "policies_path"):
        if not getattr(config, key):
            raise ParseError(f"config key {key} is required for this subcommand")
    dataset = load_dataset(config.features_path, config.fatalities_path,
                           config.policies_path, config.ingest_config())
    if config.train_days > 0:
        dataset = Dataset(
            [r.truncated(min(config.train_days, r.n_observed_days)) for r in dataset.records],
            dataset.feature_names, dataset.dropped, dataset.imputed_cells,
            dataset.normalized_columns, dataset.repairs,
        )
    return dataset


def _cmd_ingest(config: RunConfig, args) -> int:
    out = Path(args.out)
    dataset = _load_data(config)
    save_dataset(dataset, out / "dataset")
    with open(out / "ingest_report.json", "w", encoding="utf-8") as handle:
        json.dump(dataset.report(), handle, sort_keys=True, indent=1)
        handle.write("\n")
    print(f"ingested {len(dataset)} regions, dropped {len(dataset.dropped)}")
    return EXIT_OK


def _cmd_synth(config: RunConfig, args) -> int:
    synth.generate_benchmark(
        args.out, seed=config.seed, n_regions=config.synth_regions,
        n_features=config.synth_features, n_indicators=config.synth_indicators,
        observed_days=config.synth_observed_days, holdout_days=config.synth_holdout_days,
        beta_reference=config.beta_reference,
    )
    print(f"synthetic benchmark written to {args.out}")
    return EXIT_OK


def _cmd_train(config: RunConfig, args) -> int:
    out = Path(args.out)
    dataset = _load_data(config)
    model, report = svi.train(
        dataset, config.model_config(), iterations=config.iterations,
        learning_rate=config.learning_rate, seed=config.seed,
        num_samples=config.num_samples,
    )
    out.mkdir(parents=True, exist_ok=True)
    checkpoint_id = svi.save_checkpoint(model, out / "checkpoint.json")
    svi.save_elbo_trace(report, out / "elbo_trace.csv")
    print(f"trained {len(model.regions)} regions in {report.wall_clock_seconds:.1f}s, "
          f"checkpoint {checkpoint_id}")
    return EXIT_OK


def _scenario_result(model, dataset, config: RunConfig, args, shifted: bool):
    record = dataset.by_id(args.region)
    horizon = args.horizon if args.horizon is not None else config.horizon
    samples = args.samples if args.samples is not None else config.forecast_samples
    if shifted:
        return fc.counterfactual_shift(
            model, dataset, args.region, config.shift_days, horizon,
            num_samples=samples, seed=config.seed,
        )
    spec = fc.ScenarioSpec(args.region, fc.hold_last_policy(record, horizon), horizon)
    return fc.forecast(model, dataset, spec, num_samples=samples, seed=config.seed)


def _plot(result, record, path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(9, 5))
    obs_days = np.arange(1, record.n_observed_days + 1)
    ax.plot(obs_days, record.fatalities, color="black", lw=1.2, label="observed")
    ax.plot(result.days, result.mean, color="tab:blue", lw=1.5, label="forecast mean")
    ax.fill_between(result.days, result.q5, result.q95, color="tab:blue", alpha=0.2,
                    label="q5-q95")
    ax.fill_between(result.days, result.q25, result.q75, color="tab:blue", alpha=0.35,
                    label="q25-q75")
    ax.set_xlabel("outbreak day")
    ax.set_ylabel("cumulative deaths")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)


def _cmd_forecast(config: RunConfig, args) -> int:
    out = Path(args.out)
    dataset = _load_data(config)
    model = svi.load_checkpoint(args.checkpoint)
    result = _scenario_result(model, dataset, config, args, shifted=False)
    out.mkdir(parents=True, exist_ok=True)
    result.write_csv(out / f"forecast_{args.region}.csv")
    if args.plot:
        _plot(result, dataset.by_id(args.region), out / f"forecast_{args.region}.png")
    print(f"forecast for {args.region}: final mean {result.mean[-1]:.1f}")
    return EXIT_OK


def _cmd_scenario(config: RunConfig, args) -> int:
    out = Path(args.out)
    dataset = _load_data(config)
    model = svi.load_checkpoint(args.checkpoint)
    baseline, shifted, difference = _scenario_result(model, dataset, config, args, shifted=True)
    out.mkdir(parents=True, exist_ok=True)
    baseline.write_csv(out / f"scenario_{args.region}_baseline.csv")
    shifted.write_csv(out / f"scenario_{args.region}_shifted.csv")
    with open(out / f"scenario_{args.region}.json", "w", encoding="utf-8") as handle:
        json.dump({"region_id": args.region, "shift_days": config.shift_days,
                   "cumulative_difference": difference}, handle, sort_keys=True)
        handle.write("\n")
    if args.plot:
        _plot(shifted, dataset.by_id(args.region), out / f"scenario_{args.region}.png")
    print(f"scenario {args.region} shift={config.shift_days}: difference {difference:.1f}")
    return EXIT_OK


def _cmd_evaluate(config: RunConfig, args) -> int:
    """Cumulative-error table over the requested horizons.

    Trains on data truncated before the forecast day, then scores the
    model and both reference baselines on held-out truth.
    """
    out = Path(args.out)
    full = _load_data(replace(config, train_days=0))
    horizons = [int(h) for h in config.eval_horizons.split(",") if h]
    max_h = max(horizons)
    cutoff = config.train_days or min(r.n_observed_days for r in full) - max_h
    if cutoff < config.min_observed_days:
        raise ShapeError(f"cutoff {cutoff} leaves too little training history")
    truncated = Dataset([r.truncated(cutoff) for r in full], full.feature_names)
    model, _ = svi.train(truncated, config.model_config(), iterations=config.iterations,
                         learning_rate=config.learning_rate, seed=config.seed,
                         num_samples=config.num_samples)
    rows = []
    for record in full:
        truth_all = record.fatalities
        trunc_rec = truncated.by_id(record.region_id)
        future = record.policy.indicators[cutoff - 1 : cutoff + max_h]
        spec = fc.ScenarioSpec(record.region_id, future, max_h)
        result = fc.forecast(model, truncated, spec,
                             num_samples=config.forecast_samples, seed=config.seed)
        for horizon in horizons:
            truth = truth_all[cutoff : cutoff + horizon]
            cgp_err = fc.cumulative_error(truth, _clip_result(result, horizon), horizon)
            rows.append((record.region_id, horizon, "model", cgp_err))
            for method in ("gompertz", "vanilla_seir"):
                try:
                    base = fc.baseline_forecast(method, trunc_rec.fatalities, horizon,
                                                population=record.population,
                                                seed=config.seed)
                    err = fc.cumulative_error(truth, base, horizon)
                except PolicastError:
                    err = float("nan")
                rows.append((record.region_id, horizon, method, err))
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "error_table.csv", "w", encoding="utf-8") as handle:
        handle.write("region_id,horizon_days,model,cumulative_error\n")
        for rid, horizon, name, err in rows:
            handle.write(f"{rid},{horizon},{name},{err!r}\n")
    print(f"error table over horizons {horizons} written ({len(rows)} rows)")
    return EXIT_OK


def _clip_result(result, horizon):
    """View of a forecast restricted to its first horizon+1 days."""
    import dataclasses

    n = horizon + 1
    return dataclasses.replace(
        result,
        days=result.days[:n], dates=result.dates[:n], mean=result.mean[:n],
        q5=result.q5[:n], q25=result.q25[:n], q50=result.q50[:n], q75=result.q75[:n],
        q95=result.q95[:n], daily_mean=result.daily_mean[:n], std=result.std[:n],
    )


def _cmd_serve(config: RunConfig, args) -> int:
    import uvicorn

    from .service import build_service

    dataset = _load_data(config)
    model = svi.load_checkpoint(args.checkpoint)
    app = build_service(model, dataset)
    host, _, port = args.bind.partition(":")
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port or 8099), log_level="warning")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="policast",
                                     description="epidemic policy-scenario forecasting")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in ("ingest", "train", "forecast", "scenario", "evaluate", "serve", "synth"):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="flat key=value config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--features", default=None, help="features CSV path")
        p.add_argument("--fatalities", default=None, help="fatalities CSV path")
        p.add_argument("--policies", default=None, help="policies CSV path")
        if name in ("forecast", "scenario"):
            p.add_argument("--region", required=True)
            p.add_argument("--horizon", type=int, default=None)
            p.add_argument("--samples", type=int, default=None)
            p.add_argument("--plot", action="store_true")
        if name == "scenario":
            p.add_argument("--shift-days", type=int, default=None, dest="shift_days")
        if name in ("forecast", "scenario", "serve"):
            p.add_argument("--checkpoint", required=True)
        if name == "serve":
            p.add_argument("--bind", default="127.0.0.1:8099")
        if name == "evaluate":
            p.add_argument("--horizons", default=None, help="comma-separated, e.g. 7,14")
            p.add_argument("--samples", type=int, default=None)
    return parser


_COMMANDS = {
    "ingest": _cmd_ingest,
    "train": _cmd_train,
    "forecast": _cmd_forecast,
    "scenario": _cmd_scenario,
    "evaluate": _cmd_evaluate,
    "serve": _cmd_serve,
    "synth": _cmd_synth,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {
        "seed": args.seed,
        "features_path": args.features,
        "fatalities_path": args.fatalities,
        "policies_path": args.policies,
    }
    if getattr(args, "shift_days", None) is not None:
        overrides["shift_days"] = args.shift_days
    if getattr(args, "horizons", None) is not None:
        overrides["eval_horizons"] = args.horizons
    if getattr(args, "samples", None) is not None and args.subcommand == "evaluate":
        overrides["forecast_samples"] = args.samples
    try:
        config = load_run_config(args.config, overrides)
        echo_config(config, Path(args.out))
        return _COMMANDS[args.subcommand](config, args)
    except _NUMERIC_ERRORS as exc:
        print(f"E_NUMERIC: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except _DATA_ERRORS as exc:
        print(f"E_DATA: {exc}", file=sys.stderr)
        return EXIT_DATA
    except PolicastError as exc:
        print(f"E_DATA: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
