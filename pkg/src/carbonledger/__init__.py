"""carbonledger: energy and carbon accounting for long-running compute jobs."""

from .accounting import (
    AggregateEstimate,
    AggregateEstimateKg,
    EmissionsReport,
    aggregate_estimate,
    aggregate_estimate_kg,
    build_report,
    emissions,
    render_statement,
    to_car_km,
    to_person_years,
)
from .advisor import ScheduleAdvice, best_window
from .epochs import EnergyLedger, EpochRecord, Prediction, predict
from .intensity import (
    CarbonIntensity,
    ChainConfig,
    IntensityForecast,
    fetch_realtime,
    resolve,
    static_table,
)
from .telemetry import (
    EnergySpan,
    PowerSample,
    SampleLog,
    apply_pue,
    integrate,
    open_source,
)

__version__ = "0.1.0"

__all__ = [
    "AggregateEstimate",
    "AggregateEstimateKg",
    "CarbonIntensity",
    "ChainConfig",
    "EmissionsReport",
    "EnergyLedger",
    "EnergySpan",
    "EpochRecord",
    "IntensityForecast",
    "PowerSample",
    "Prediction",
    "SampleLog",
    "ScheduleAdvice",
    "aggregate_estimate",
    "aggregate_estimate_kg",
    "apply_pue",
    "best_window",
    "build_report",
    "emissions",
    "fetch_realtime",
    "integrate",
    "open_source",
    "predict",
    "render_statement",
    "resolve",
    "static_table",
    "to_car_km",
    "to_person_years",
]
