"""Carbon-aware start-time recommendation.

Given an intensity forecast and a job duration, pick the start in the
allowed range whose trapezoid-integrated intensity is lowest. Candidate
starts are the forecast's grid points (plus the "run immediately" start,
which anchors the savings figure); sub-grid optimization would pretend
to more precision than the forecast has.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass

from .errors import EmptyFeasibleSetError, ForecastTooShortError
from .intensity import IntensityForecast


@dataclass(frozen=True)
class ScheduleAdvice:
    start_ms: int
    end_ms: int
    mean_g_per_kwh: float
    savings_vs_now: float


class _CumulativeIntensity:
    """O(1) window integrals over a piecewise-linear forecast."""

    def __init__(self, forecast: IntensityForecast):
        self.ts = [t for t, _ in forecast.points]
        self.gs = [g for _, g in forecast.points]
        self.cum = [0.0]
        for i in range(1, len(self.ts)):
            area = 0.5 * (self.gs[i - 1] + self.gs[i]) * (self.ts[i] - self.ts[i - 1])
            self.cum.append(self.cum[-1] + area)

    def value_at(self, t: float) -> float:
        i = bisect_right(self.ts, t) - 1
        if i >= len(self.ts) - 1:
            return self.gs[-1]
        t0, t1 = self.ts[i], self.ts[i + 1]
        g0, g1 = self.gs[i], self.gs[i + 1]
        return g0 + (g1 - g0) * (t - t0) / (t1 - t0)

    def integral_to(self, t: float) -> float:
        i = bisect_right(self.ts, t) - 1
        if i >= len(self.ts) - 1:
            return self.cum[-1]
        partial = 0.5 * (self.gs[i] + self.value_at(t)) * (t - self.ts[i])
        return self.cum[i] + partial

    def window(self, start: float, end: float) -> float:
        return self.integral_to(end) - self.integral_to(start)


def best_window(
    forecast: IntensityForecast,
    duration_s: float,
    earliest_ms: int | None = None,
    latest_ms: int | None = None,
) -> ScheduleAdvice:
    """Start in [earliest, latest] minimizing integrated intensity.

    Ties break toward the earliest start. ``savings_vs_now`` compares the
    chosen window against starting at ``earliest`` (the actionable
    counterfactual), so it is always in [0, 1).
    """
    if duration_s <= 0:
        raise ValueError(f"duration must be > 0, got {duration_s}")
    if len(forecast.points) < 2:
        raise ForecastTooShortError("forecast needs at least 2 points")
    duration_ms = int(round(duration_s * 1000))
    earliest = forecast.start_ms if earliest_ms is None else earliest_ms
    latest = forecast.end_ms - duration_ms if latest_ms is None else latest_ms

    if latest < earliest:
        raise EmptyFeasibleSetError(f"latest {latest} precedes earliest {earliest}")
    if earliest < forecast.start_ms or latest + duration_ms > forecast.end_ms:
        raise ForecastTooShortError(
            f"forecast [{forecast.start_ms}, {forecast.end_ms}] does not cover "
            f"[{earliest}, {latest + duration_ms}]"
        )

    candidates = [t for t, _ in forecast.points if earliest <= t <= latest]
    if not candidates or candidates[0] != earliest:
        candidates.insert(0, earliest)

    cum = _CumulativeIntensity(forecast)
    now_cost = cum.window(earliest, earliest + duration_ms)
    best_start, best_cost = None, None
    for start in candidates:
        cost = cum.window(start, start + duration_ms)
        if best_cost is None or cost < best_cost:
            best_start, best_cost = start, cost

    mean = best_cost / duration_ms
    savings = 1.0 - best_cost / now_cost if now_cost > 0 else 0.0
    return ScheduleAdvice(
        start_ms=best_start,
        end_ms=best_start + duration_ms,
        mean_g_per_kwh=mean,
        savings_vs_now=max(0.0, savings),
    )


def advice_to_json_dict(advice: ScheduleAdvice) -> dict:
    return {
        "start_ms": advice.start_ms,
        "end_ms": advice.end_ms,
        "mean_g_per_kwh": advice.mean_g_per_kwh,
        "savings_vs_now": advice.savings_vs_now,
    }
