"""Carbon-intensity resolution for a region and time.

Layered provider chain: a fresh cached value short-circuits, otherwise a
realtime endpoint is queried, otherwise the shipped static table, then a
configured global default. Realtime failures always degrade to the next
layer; tracking never stalls or aborts on a network problem.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field, replace
from typing import Mapping

import requests

from .errors import (
    HttpStatusError,
    MalformedResponseError,
    NetworkTimeoutError,
    UnknownRegionError,
)

SOURCE_REALTIME = "realtime"
SOURCE_CACHE = "cache"
SOURCE_STATIC = "static-table"
SOURCE_OVERRIDE = "override"

AVERAGE = "average"

#: Shipped regional averages, gCO2eq/kWh. DNK_RLT_SNAPSHOT is a one-week
#: winter realtime snapshot, not an annual average. EU-27 is intentionally
#: absent pending a sourced figure; supply it via a region table file.
STATIC_TABLE: dict[str, float] = {
    "DNK_AVG": 193.0,
    "DNK_RLT_SNAPSHOT": 266.0,
    "EST": 634.6,
    "WOR": 344.7,
}

STATIC_TABLE_NOTES: dict[str, str] = {
    "DNK_AVG": "2018 annual grid average, Denmark",
    "DNK_RLT_SNAPSHOT": "one-week realtime snapshot, Feb 2022 (not an annual average)",
    "EST": "annual grid average, Estonia",
    "WOR": "global average",
}


@dataclass(frozen=True)
class CarbonIntensity:
    """Grams CO2eq per kWh for a region, with source provenance."""

    region: str
    g_per_kwh: float
    observed_at: int | str = AVERAGE
    source: str = SOURCE_STATIC

    def __post_init__(self):
        if self.g_per_kwh < 0:
            raise ValueError(f"negative intensity: {self.g_per_kwh}")
        if self.source == SOURCE_REALTIME and not isinstance(self.observed_at, int):
            raise ValueError("realtime intensity requires a concrete timestamp")


@dataclass(frozen=True)
class IntensityForecast:
    """Time-varying intensity series for one region."""

    region: str
    points: tuple[tuple[int, float], ...]

    def __post_init__(self):
        for i, (ts, g) in enumerate(self.points):
            if g < 0:
                raise ValueError(f"negative intensity at point {i}")
            if i > 0 and ts <= self.points[i - 1][0]:
                raise ValueError(f"timestamps not strictly increasing at point {i}")

    @property
    def start_ms(self) -> int:
        return self.points[0][0]

    @property
    def end_ms(self) -> int:
        return self.points[-1][0]


@dataclass
class ChainConfig:
    """Provider-chain settings plus the shared response cache.

    The cache is read-mostly with atomic replacement, and at most one
    realtime request per region is in flight at a time; concurrent
    resolves for the same region coalesce onto the winner's response.
    """

    endpoint_url: str | None = None  # template; "{region}" is substituted
    timeout_s: float = 5.0
    cache_ttl_s: float = 300.0
    table: Mapping[str, float] = field(default_factory=lambda: dict(STATIC_TABLE))
    default_g_per_kwh: float | None = None
    _cache: dict = field(default_factory=dict, repr=False)
    _region_locks: dict = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)


DEFAULT_CONFIG = ChainConfig()


def static_table() -> dict[str, float]:
    """The shipped region table; pure and constant."""
    return dict(STATIC_TABLE)


def make_override(region: str, g_per_kwh: float) -> CarbonIntensity:
    return CarbonIntensity(region, g_per_kwh, AVERAGE, SOURCE_OVERRIDE)


def _fresh_cached(config: ChainConfig, region: str) -> CarbonIntensity | None:
    entry = config._cache.get(region)
    if entry is None:
        return None
    value, fetched_at = entry
    if time.monotonic() - fetched_at > config.cache_ttl_s:
        return None
    return replace(value, source=SOURCE_CACHE)


def _region_lock(config: ChainConfig, region: str) -> threading.Lock:
    with config._lock:
        return config._region_locks.setdefault(region, threading.Lock())


def fetch_realtime(region: str, config: ChainConfig) -> CarbonIntensity:
    """Query the realtime endpoint for a region and cache the result.

    The expected body is exactly ``{"g_per_kwh": <number>, "ts_ms":
    <integer>}``; anything else raises MalformedResponseError. All
    failures here mean "fall through to the next layer", never abort.
    """
    if not config.endpoint_url:
        raise ValueError(f"no realtime endpoint configured for {region!r}")
    url = config.endpoint_url.replace("{region}", region)
    try:
        response = requests.get(url, timeout=config.timeout_s)
    except requests.Timeout:
        raise NetworkTimeoutError(f"realtime fetch for {region} timed out")
    except requests.RequestException as e:
        raise NetworkTimeoutError(f"realtime fetch for {region} failed: {e}")
    if response.status_code != 200:
        raise HttpStatusError(response.status_code)
    try:
        body = response.json()
    except ValueError:
        raise MalformedResponseError("response body is not JSON")
    if (
        not isinstance(body, dict)
        or set(body) != {"g_per_kwh", "ts_ms"}
        or isinstance(body["g_per_kwh"], bool)
        or not isinstance(body["g_per_kwh"], (int, float))
        or isinstance(body["ts_ms"], bool)
        or not isinstance(body["ts_ms"], int)
        or body["g_per_kwh"] < 0
    ):
        raise MalformedResponseError(f"unexpected response shape: {body!r}")
    value = CarbonIntensity(
        region=region,
        g_per_kwh=float(body["g_per_kwh"]),
        observed_at=body["ts_ms"],
        source=SOURCE_REALTIME,
    )
    with config._lock:
        config._cache[region] = (value, time.monotonic())
    return value


def resolve(
    region: str,
    at_ms: int | None = None,
    config: ChainConfig | None = None,
) -> CarbonIntensity:
    """Resolve the carbon intensity for a region; first layer to succeed wins.

    A cached realtime value younger than the TTL is reused without a
    network call; a stale one is never used. Realtime failures fall
    through to the static table and the configured global default.
    """
    if not region:
        raise ValueError("region must be non-empty")
    config = config if config is not None else DEFAULT_CONFIG

    cached = _fresh_cached(config, region)
    if cached is not None:
        return cached

    if config.endpoint_url:
        with _region_lock(config, region):
            cached = _fresh_cached(config, region)
            if cached is not None:
                return cached
            try:
                return fetch_realtime(region, config)
            except (NetworkTimeoutError, MalformedResponseError, HttpStatusError):
                pass

    if region in config.table:
        return CarbonIntensity(region, float(config.table[region]), AVERAGE, SOURCE_STATIC)
    if config.default_g_per_kwh is not None:
        return CarbonIntensity(region, config.default_g_per_kwh, AVERAGE, SOURCE_STATIC)
    raise UnknownRegionError(
        f"region {region!r} not in the table and no global default configured"
    )


# --- file formats ---------------------------------------------------------

REGION_TABLE_HEADER = "region,g_per_kwh,source_note"
FORECAST_HEADER = "ts_ms,g_per_kwh"


def load_region_table(path: str) -> dict[str, float]:
    """Read a region table CSV (``region,g_per_kwh,source_note``)."""
    table: dict[str, float] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if line_no == 1:
                if line != REGION_TABLE_HEADER:
                    raise ValueError(
                        f"{path}:1: expected header {REGION_TABLE_HEADER!r}"
                    )
                continue
            if not line:
                continue
            parts = line.split(",", 2)
            if len(parts) < 2:
                raise ValueError(f"{path}:{line_no}: expected region,g_per_kwh[,note]")
            region, g_raw = parts[0], parts[1]
            try:
                g = float(g_raw)
            except ValueError:
                raise ValueError(f"{path}:{line_no}: bad g_per_kwh {g_raw!r}")
            if g < 0:
                raise ValueError(f"{path}:{line_no}: negative g_per_kwh")
            table[region] = g
    return table


def table_with_overrides(path: str | None) -> dict[str, float]:
    """Shipped table merged with overrides from a region table file."""
    table = static_table()
    if path:
        table.update(load_region_table(path))
    return table


def read_forecast_csv(path: str, region: str = "forecast") -> IntensityForecast:
    """Read a forecast CSV (``ts_ms,g_per_kwh``) into a forecast series."""
    points: list[tuple[int, float]] = []
    with open(path, encoding="utf-8", newline="") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if line_no == 1:
                if line != FORECAST_HEADER:
                    raise ValueError(f"{path}:1: expected header {FORECAST_HEADER!r}")
                continue
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise ValueError(f"{path}:{line_no}: expected ts_ms,g_per_kwh")
            try:
                ts = int(parts[0])
                g = float(parts[1])
            except ValueError:
                raise ValueError(f"{path}:{line_no}: bad row {line!r}")
            points.append((ts, g))
    try:
        return IntensityForecast(region=region, points=tuple(points))
    except ValueError as e:
        raise ValueError(f"{path}: {e}")


def write_forecast_csv(path: str, forecast: IntensityForecast) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(FORECAST_HEADER + "\n")
        for ts, g in forecast.points:
            fh.write(f"{ts},{g}\n")
