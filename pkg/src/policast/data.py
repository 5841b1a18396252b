"""Loading, validation and alignment of the three data feeds.

Feeds: per-region features (one row per region, a required population
column plus arbitrary numeric feature columns), cumulative fatality
time-series, and per-day policy indicator levels in [0, 1]. Regions are
re-indexed to outbreak-relative days (day 1 = first day cumulative deaths
reach the configured threshold) and policy timelines are aligned to the
fatality range.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field, replace
from datetime import date, timedelta
from typing import Optional, Sequence

import numpy as np

from .errors import AlignmentError, DomainError, JoinError, ParseError, ShapeError


@dataclass(frozen=True)
class PolicyTimeline:
    """Per-day policy indicator vectors for one region.

    Row 0 corresponds to day 1 (the region's outbreak day). Stringency is
    passed through from the feed when published, otherwise computed from
    the indicators on demand.
    """

    indicators: np.ndarray  # (n_days, K), entries in [0, 1]
    anchor_date: date
    published_stringency: Optional[np.ndarray] = None

    def __post_init__(self):
        ind = np.atleast_2d(np.asarray(self.indicators, dtype=float))
        object.__setattr__(self, "indicators", ind)
        if np.any(ind < 0) or np.any(ind > 1) or not np.all(np.isfinite(ind)):
            raise DomainError("policy indicators must lie in [0, 1]")
        if self.published_stringency is not None:
            s = np.asarray(self.published_stringency, dtype=float)
            if s.shape[0] != ind.shape[0]:
                raise ShapeError("published stringency length != indicator days")
            object.__setattr__(self, "published_stringency", s)

    @property
    def n_days(self) -> int:
        return self.indicators.shape[0]

    @property
    def n_indicators(self) -> int:
        return self.indicators.shape[1]

    def vector(self, day: int) -> np.ndarray:
        """Indicator vector on a 1-based day; the last vector persists past the end."""
        idx = min(max(day, 1), self.n_days) - 1
        return self.indicators[idx]

    def stringency_series(self) -> np.ndarray:
        if self.published_stringency is not None:
            return self.published_stringency.copy()
        return np.array([stringency_index(row) for row in self.indicators])

    def date_of_day(self, day: int) -> date:
        return self.anchor_date + timedelta(days=day - 1)

    def sliced(self, n_days: int) -> "PolicyTimeline":
        s = self.published_stringency
        return PolicyTimeline(
            self.indicators[:n_days].copy(),
            self.anchor_date,
            None if s is None else s[:n_days].copy(),
        )

    def shift_changes(self, shift_days: int):
        """Shift every policy-change date by ``shift_days``.

        Negative shifts move changes earlier. Changes pushed before day 1
        collapse onto day 1 (clamped, with a warning). Returns the edited
        timeline.
        """
        n = self.n_days
        src = np.clip(np.arange(n) - shift_days, 0, n - 1)
        if shift_days < 0 and not np.all(self.indicators[0] == self.indicators[-shift_days]):
            warnings.warn(
                f"shift of {shift_days} days pushes policy changes before day 1; "
                "clamped to day 1"
            )
        s = self.published_stringency
        return PolicyTimeline(
            self.indicators[src].copy(),
            self.anchor_date,
            None if s is None else s[src].copy(),
        )


def stringency_index(p: Sequence[float]) -> float:
    """Collapse a policy vector into a severity scalar in [0, 100].

    Computed as 100 * mean(p); feeds that publish their own stringency are
    passed through at the PolicyTimeline level instead.
    """
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ShapeError("policy vector must be 1-D and non-empty")
    if np.any(p < 0) or np.any(p > 1):
        raise DomainError("policy entries must lie in [0, 1]")
    return float(100.0 * p.mean())


@dataclass(frozen=True)
class RegionRecord:
    """Features, fatality series and policy timeline for one region."""

    region_id: str
    features: np.ndarray  # standardized
    population: float
    fatalities: np.ndarray  # cumulative deaths, day 1..T
    anchor_date: date
    policy: PolicyTimeline
    parent_country: Optional[str] = None
    features_raw: Optional[np.ndarray] = None  # imputed, unstandardized
    repairs: int = 0

    def __post_init__(self):
        fat = np.asarray(self.fatalities, dtype=float)
        if np.any(fat < 0) or np.any(np.diff(fat) < 0):
            raise DomainError(f"{self.region_id}: fatalities must be non-negative and non-decreasing")
        object.__setattr__(self, "fatalities", fat)
        object.__setattr__(self, "features", np.asarray(self.features, dtype=float))
        if self.population <= 0:
            raise DomainError(f"{self.region_id}: population must be positive")
        if self.policy.n_days < len(fat):
            raise DomainError(
                f"{self.region_id}: policy covers {self.policy.n_days} days, "
                f"fatalities span {len(fat)}"
            )

    @property
    def n_observed_days(self) -> int:
        return len(self.fatalities)

    def date_of_day(self, day: int) -> date:
        return self.anchor_date + timedelta(days=day - 1)

    def truncated(self, keep_days: int) -> "RegionRecord":
        """Record restricted to the first ``keep_days`` observed days."""
        if keep_days < 1 or keep_days > self.n_observed_days:
            raise ShapeError(f"keep_days {keep_days} outside [1, {self.n_observed_days}]")
        return replace(
            self,
            fatalities=self.fatalities[:keep_days].copy(),
            policy=self.policy.sliced(keep_days),
        )


def records_equal(a: RegionRecord, b: RegionRecord) -> bool:
    return (
        a.region_id == b.region_id
        and a.parent_country == b.parent_country
        and a.anchor_date == b.anchor_date
        and abs(a.population - b.population) < 1e-9 * max(a.population, 1.0)
        and np.array_equal(a.fatalities, b.fatalities)
        and np.allclose(a.features, b.features, atol=1e-12)
        and np.allclose(a.policy.indicators, b.policy.indicators, atol=1e-12)
        and np.allclose(a.policy.stringency_series(), b.policy.stringency_series(), atol=1e-9)
    )


@dataclass
class Dataset:
    """Loaded records plus the ingestion report."""

    records: list
    feature_names: list
    dropped: list = field(default_factory=list)  # dicts: region_id, reason
    imputed_cells: list = field(default_factory=list)  # (region_id, column)
    normalized_columns: list = field(default_factory=list)
    repairs: int = 0

    def __iter__(self):
        return iter(self.records)

    def __len__(self):
        return len(self.records)

    def __getitem__(self, idx):
        return self.records[idx]

    def by_id(self, region_id: str) -> RegionRecord:
        for rec in self.records:
            if rec.region_id == region_id:
                return rec
        raise KeyError(region_id)

    def region_ids(self):
        return [r.region_id for r in self.records]

    def equals(self, other: "Dataset") -> bool:
        if self.region_ids() != other.region_ids():
            return False
        return all(records_equal(a, b) for a, b in zip(self.records, other.records))

    def report(self) -> dict:
        return {
            "regions": len(self.records),
            "dropped": self.dropped,
            "repairs": self.repairs,
            "imputed_cells": [list(c) for c in self.imputed_cells],
            "normalized_columns": self.normalized_columns,
        }


@dataclass(frozen=True)
class IngestConfig:
    outbreak_threshold: float = 1.0
    min_observed_days: int = 5
    population_column: str = "population"


def _parse_float(text: str, path: str, line: int, column: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ParseError(f"not a number: {text!r}", path=path, line=line, column=column) from None


def _parse_date(text: str, path: str, line: int) -> date:
    try:
        return date.fromisoformat(text.strip())
    except ValueError:
        raise ParseError(f"not an ISO date: {text!r}", path=path, line=line, column="date") from None


def _read_rows(path):
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        rows = list(reader)
    if not rows:
        raise ParseError("empty file", path=str(path), line=1)
    return rows[0], rows[1:]


def _load_features(path, population_column):
    header, rows = _read_rows(path)
    if not header or header[0] != "region_id":
        raise ParseError("first column must be region_id", path=str(path), line=1, column=1)
    if population_column not in header:
        raise ParseError(
            f"missing required {population_column!r} column", path=str(path), line=1
        )
    pop_idx = header.index(population_column)
    feature_names = [h for j, h in enumerate(header) if j not in (0, pop_idx)]
    raw = {}
    populations = {}
    for lineno, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise ParseError(
                f"expected {len(header)} fields, got {len(row)}", path=str(path), line=lineno
            )
        region = row[0]
        populations[region] = _parse_float(row[pop_idx], str(path), lineno, population_column)
        if populations[region] <= 0:
            raise ParseError("population must be positive", path=str(path), line=lineno,
                             column=population_column)
        values = []
        for j, h in enumerate(header):
            if j in (0, pop_idx):
                continue
            cell = row[j].strip()
            values.append(np.nan if cell == "" else _parse_float(cell, str(path), lineno, h))
        raw[region] = np.array(values)
    return feature_names, raw, populations


def _load_fatalities(path):
    header, rows = _read_rows(path)
    if header[:3] != ["region_id", "date", "cumulative_deaths"]:
        raise ParseError(
            "header must be region_id,date,cumulative_deaths", path=str(path), line=1
        )
    series = {}
    for lineno, row in enumerate(rows, start=2):
        if len(row) != 3:
            raise ParseError(f"expected 3 fields, got {len(row)}", path=str(path), line=lineno)
        region, day, deaths_text = row
        d = _parse_date(day, str(path), lineno)
        deaths = _parse_float(deaths_text, str(path), lineno, "cumulative_deaths")
        if deaths < 0 or abs(deaths - round(deaths)) > 1e-9:
            raise ParseError(
                f"cumulative_deaths must be a non-negative integer, got {deaths_text!r}",
                path=str(path), line=lineno, column="cumulative_deaths",
            )
        bucket = series.setdefault(region, {})
        if d in bucket:
            raise ParseError(f"duplicate date {d} for region {region}", path=str(path), line=lineno)
        bucket[d] = int(round(deaths))
    return series


def _load_policies(path):
    header, rows = _read_rows(path)
    if header[:2] != ["region_id", "date"]:
        raise ParseError("header must start region_id,date", path=str(path), line=1)
    has_stringency = header[-1] == "stringency"
    indicator_names = header[2 : len(header) - (1 if has_stringency else 0)]
    if not indicator_names:
        raise ParseError("no indicator columns", path=str(path), line=1)
    table = {}
    for lineno, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise ParseError(
                f"expected {len(header)} fields, got {len(row)}", path=str(path), line=lineno
            )
        region, day = row[0], _parse_date(row[1], str(path), lineno)
        values = np.array(
            [_parse_float(row[2 + j], str(path), lineno, name)
             for j, name in enumerate(indicator_names)]
        )
        if np.any(values < 0):
            raise ParseError("negative indicator value", path=str(path), line=lineno)
        stringency = None
        if has_stringency:
            stringency = _parse_float(row[-1], str(path), lineno, "stringency")
        bucket = table.setdefault(region, {})
        if day in bucket:
            raise ParseError(f"duplicate date {day} for region {region}", path=str(path), line=lineno)
        bucket[day] = (values, stringency)
    return indicator_names, table, has_stringency


def impute_features(raw: np.ndarray, feature_names: Sequence[str]):
    """Column-median imputation followed by per-column standardization.

    Returns (standardized, imputed_raw, mask, kept_names) where ``mask``
    flags imputed cells and all-missing columns have been dropped (with a
    warning).
    """
    raw = np.atleast_2d(np.asarray(raw, dtype=float))
    keep = []
    for j, name in enumerate(feature_names):
        if np.all(np.isnan(raw[:, j])):
            warnings.warn(f"feature column {name!r} is entirely missing; dropped")
        else:
            keep.append(j)
    kept_names = [feature_names[j] for j in keep]
    raw = raw[:, keep]
    mask = np.isnan(raw)
    imputed = raw.copy()
    for j in range(raw.shape[1]):
        col = imputed[:, j]
        col[np.isnan(col)] = np.nanmedian(raw[:, j])
    means = imputed.mean(axis=0)
    stds = imputed.std(axis=0)
    stds[stds == 0] = 1.0
    standardized = (imputed - means) / stds
    return standardized, imputed, mask, kept_names


def load_dataset(features_path, fatalities_path, policies_path, config: IngestConfig = None) -> Dataset:
    """Parse, validate and align the three feeds into a Dataset.

    Outbreak day 1 is the first date cumulative deaths reach the
    threshold; regions with fewer observed days than the minimum are
    dropped (reported, not raised). Non-monotone cumulative series are
    repaired by running maximum, missing intermediate dates are
    forward-filled, and ordinal indicator columns with levels above 1 are
    rescaled by their column maximum.
    """
    config = config or IngestConfig()
    feature_names, raw_features, populations = _load_features(features_path, config.population_column)
    fatality_table = _load_fatalities(fatalities_path)
    indicator_names, policy_table, _ = _load_policies(policies_path)

    orphans = sorted(set(fatality_table) - set(raw_features))
    if orphans:
        raise JoinError(f"fatality regions missing from features: {orphans}", orphans)

    if not fatality_table:
        warnings.warn("fatality file has no data rows; dataset is empty")

    # Ordinal normalization: any indicator column with levels above 1 is
    # rescaled to [0, 1] by its maximum across the whole feed.
    normalized_columns = []
    if policy_table:
        all_rows = np.array([v for bucket in policy_table.values() for v, _ in bucket.values()])
        col_max = all_rows.max(axis=0)
        scale = np.where(col_max > 1.0, col_max, 1.0)
        normalized_columns = [indicator_names[j] for j in range(len(indicator_names))
                              if col_max[j] > 1.0]

    dropped = []
    assembled = []  # (region_id, fatalities, anchor, policy, repairs)
    total_repairs = 0
    for region in sorted(fatality_table):
        by_date = fatality_table[region]
        dates = sorted(by_date)
        repairs = 0
        # Forward-fill missing intermediate dates.
        full_dates = []
        full_values = []
        current = dates[0]
        while current <= dates[-1]:
            if current in by_date:
                value = by_date[current]
            else:
                value = full_values[-1]
                repairs += 1
            full_dates.append(current)
            full_values.append(value)
            current += timedelta(days=1)
        values = np.array(full_values, dtype=float)
        monotone = np.maximum.accumulate(values)
        repairs += int(np.sum(monotone != values))
        values = monotone

        above = np.nonzero(values >= config.outbreak_threshold)[0]
        if above.size == 0:
            dropped.append({"region_id": region, "reason": "below_threshold"})
            continue
        start = above[0]
        values = values[start:]
        anchor = full_dates[start]
        if len(values) < config.min_observed_days:
            dropped.append({"region_id": region, "reason": "insufficient_history"})
            continue

        if region not in policy_table:
            raise JoinError(f"no policy rows for region {region!r}", [region])
        pol = policy_table[region]
        pol_dates = sorted(pol)
        vectors = []
        stringencies = []
        has_published = any(s is not None for _, s in pol.values())
        for offset in range(len(values)):
            day_date = anchor + timedelta(days=offset)
            if day_date in pol:
                vec, stri = pol[day_date]
            else:
                # Nearest available row fills edge/interior gaps.
                nearest = min(pol_dates, key=lambda d: abs((d - day_date).days))
                vec, stri = pol[nearest]
                repairs += 1
            vectors.append(vec / scale)
            stringencies.append(stri)
        indicators = np.array(vectors)
        if np.any(indicators > 1.0 + 1e-12):
            raise ParseError(
                f"indicator values above 1 after normalization for region {region}",
                path=str(policies_path), line=0,
            )
        published = (
            np.array([s if s is not None else stringency_index(v)
                      for v, s in zip(indicators, stringencies)])
            if has_published else None
        )
        timeline = PolicyTimeline(np.clip(indicators, 0.0, 1.0), anchor, published)
        assembled.append((region, values, anchor, timeline, repairs))
        total_repairs += repairs

    if not assembled:
        return Dataset([], feature_names, dropped, [], normalized_columns, total_repairs)

    survivor_ids = [a[0] for a in assembled]
    raw_matrix = np.array([raw_features[r] for r in survivor_ids])
    standardized, imputed_raw, mask, kept_names = impute_features(raw_matrix, feature_names)
    imputed_cells = [
        (survivor_ids[i], kept_names[j]) for i, j in zip(*np.nonzero(mask))
    ]

    records = []
    for k, (region, values, anchor, timeline, repairs) in enumerate(assembled):
        records.append(
            RegionRecord(
                region_id=region,
                features=standardized[k],
                population=populations[region],
                fatalities=values,
                anchor_date=anchor,
                policy=timeline,
                features_raw=imputed_raw[k],
                repairs=repairs,
            )
        )
    return Dataset(records, kept_names, dropped, imputed_cells, normalized_columns, total_repairs)


def save_dataset(dataset: Dataset, out_dir) -> dict:
    """Write the canonical three-CSV form; returns the file paths.

    Features are written imputed but unstandardized so a reload
    reproduces an equal dataset (standardization is recomputed over the
    same rows).
    """
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "features": out / "features.csv",
        "fatalities": out / "fatalities.csv",
        "policies": out / "policies.csv",
    }
    with open(paths["features"], "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["region_id", "population"] + list(dataset.feature_names))
        for rec in dataset.records:
            raw = rec.features_raw if rec.features_raw is not None else rec.features
            writer.writerow([rec.region_id, repr(float(rec.population))] +
                            [repr(float(v)) for v in raw])
    with open(paths["fatalities"], "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["region_id", "date", "cumulative_deaths"])
        for rec in dataset.records:
            for day, value in enumerate(rec.fatalities, start=1):
                writer.writerow([rec.region_id, rec.date_of_day(day).isoformat(), int(value)])
    with open(paths["policies"], "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        k = dataset.records[0].policy.n_indicators if dataset.records else 0
        writer.writerow(["region_id", "date"] + [f"indicator_{j+1}" for j in range(k)]
                        + ["stringency"])
        for rec in dataset.records:
            stringency = rec.policy.stringency_series()
            for day in range(1, rec.policy.n_days + 1):
                row = [rec.region_id, rec.policy.date_of_day(day).isoformat()]
                row += [repr(float(v)) for v in rec.policy.indicators[day - 1]]
                row.append(repr(float(stringency[day - 1])))
                writer.writerow(row)
    return {k: str(v) for k, v in paths.items()}


def aggregate_regions(children: Sequence[RegionRecord], national_id: str) -> RegionRecord:
    """Aggregate sub-national records into a national one.

    Fatalities are summed on calendar dates (children contribute zero
    before their own outbreak day, i.e. sub-threshold counts are treated
    as zero); features and policies are population-weighted means. All
    children must end on the same calendar date.
    """
    if not children:
        raise ShapeError("no children to aggregate")
    if len({c.parent_country for c in children}) != 1:
        raise DomainError("children must share parent_country")
    if len(children) == 1:
        child = children[0]
        return replace(child, region_id=national_id, parent_country=None)

    ends = {c.date_of_day(c.n_observed_days) for c in children}
    if len(ends) != 1:
        raise AlignmentError(f"children end on different dates: {sorted(str(e) for e in ends)}")
    end = ends.pop()
    start = min(c.anchor_date for c in children)
    n_days = (end - start).days + 1

    total = np.zeros(n_days)
    weights = np.array([c.population for c in children], dtype=float)
    k = children[0].policy.n_indicators
    indicators = np.zeros((n_days, k))
    stringency = np.zeros(n_days)
    for c in children:
        offset = (c.anchor_date - start).days
        total[offset : offset + c.n_observed_days] += c.fatalities
        # Cumulative counts persist: nothing to add before outbreak (zero),
        # and the series fully covers [anchor, end] by construction.
        child_ind = np.vstack([
            np.repeat(c.policy.indicators[:1], offset, axis=0),
            c.policy.indicators[: n_days - offset],
        ])
        child_str = np.concatenate([
            np.repeat(c.policy.stringency_series()[:1], offset),
            c.policy.stringency_series()[: n_days - offset],
        ])
        indicators += (c.population / weights.sum()) * child_ind
        stringency += (c.population / weights.sum()) * child_str

    features = np.average(np.array([c.features for c in children]), axis=0, weights=weights)
    timeline = PolicyTimeline(np.clip(indicators, 0.0, 1.0), start, stringency)
    return RegionRecord(
        region_id=national_id,
        features=features,
        population=float(weights.sum()),
        fatalities=np.maximum.accumulate(total),
        anchor_date=start,
        policy=timeline,
        parent_country=None,
    )
