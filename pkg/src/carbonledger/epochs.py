"""Epoch segmentation and full-run prediction.

A run is segmented into epochs by start/end markers. Each closed epoch
records the energy integrated over its window, and a partial run's
ledger extrapolates to the full epoch count: measured total plus the
mean per-epoch energy times the remaining epochs.
"""

from __future__ import annotations

import json
import statistics
from dataclasses import dataclass
from typing import Mapping, Sequence

from . import accounting
from .errors import (
    EmptyLedgerError,
    EpochAlreadyOpenError,
    InsufficientSamplesError,
    NoOpenEpochError,
    TotalLessThanMeasuredError,
)
from .intensity import CarbonIntensity
from .telemetry import EnergySpan, PowerSample, integrate_report

#: Epoch 0 is excluded from the extrapolation mean once enough epochs
#: exist to spare it; first epochs carry one-time setup cost.
WARMUP_MIN_EPOCHS = 3


@dataclass(frozen=True)
class EpochRecord:
    index: int
    start_ms: int
    end_ms: int
    energy: EnergySpan
    degraded: bool = False

    @property
    def duration_s(self) -> float:
        return (self.end_ms - self.start_ms) / 1000.0

    @property
    def kwh_total(self) -> float:
        return self.energy.total_kwh


@dataclass(frozen=True)
class Prediction:
    """Extrapolated whole-run totals from a partially measured run.

    ``energy_cv`` is the coefficient of variation of per-epoch energy
    over the measured epochs; there is no interval math, it is reported
    as a plain dispersion figure.
    """

    measured_epochs: int
    total_epochs: int
    predicted_kwh: float
    predicted_duration_s: float
    predicted_kgco2: float
    intensity_used: CarbonIntensity
    energy_cv: float


class EnergyLedger:
    """Per-epoch energy totals for one tracked run.

    Marker handling is serialized by the caller (markers arrive over one
    connection in order); reads for prediction or reporting work on the
    closed-epoch list, which is append-only.
    """

    def __init__(self, run_id: str, pue: float = 1.0, max_gap_ms: float | None = None):
        self.run_id = run_id
        self.pue = pue
        self.max_gap_ms = max_gap_ms
        self.epochs: list[EpochRecord] = []
        self._open: tuple[int, int] | None = None  # (index, start_ms)

    @property
    def open_epoch(self) -> tuple[int, int] | None:
        return self._open

    @property
    def next_index(self) -> int:
        if self._open is not None:
            return self._open[0]
        return len(self.epochs)

    def epoch_start(self, ts_ms: int) -> int:
        """Open the next epoch at ``ts_ms``; returns its index."""
        if self._open is not None:
            raise EpochAlreadyOpenError(f"epoch {self._open[0]} is still open")
        index = len(self.epochs)
        self._open = (index, ts_ms)
        return index

    def epoch_end(
        self,
        ts_ms: int,
        samples: Mapping[str, Sequence[PowerSample]],
    ) -> EpochRecord:
        """Close the open epoch, integrating each component over its window.

        Components without enough samples contribute zero energy and mark
        the epoch degraded instead of failing the run.
        """
        if self._open is None:
            raise NoOpenEpochError("no epoch is open")
        index, start_ms = self._open
        if ts_ms < start_ms:
            raise ValueError(f"epoch end {ts_ms} precedes start {start_ms}")
        if hasattr(samples, "window"):
            samples = samples.window(start_ms, ts_ms)
        elif hasattr(samples, "snapshot"):
            samples = samples.snapshot()
        per_component: dict[str, float] = {}
        degraded = not samples
        for component, stream in sorted(samples.items()):
            try:
                result = integrate_report(
                    stream, start_ms, ts_ms, max_gap_ms=self.max_gap_ms
                )
            except InsufficientSamplesError:
                per_component[component] = 0.0
                degraded = True
                continue
            per_component[component] = result.kwh
            degraded = degraded or result.degraded
        record = EpochRecord(
            index=index,
            start_ms=start_ms,
            end_ms=ts_ms,
            energy=EnergySpan.build(start_ms, ts_ms, per_component, self.pue),
            degraded=degraded,
        )
        self.epochs.append(record)
        self._open = None
        return record

    @property
    def measured_epochs(self) -> int:
        return len(self.epochs)

    def total_kwh(self) -> float:
        return sum(e.kwh_total for e in self.epochs)

    def total_duration_s(self) -> float:
        return sum(e.duration_s for e in self.epochs)

    def any_degraded(self) -> bool:
        return any(e.degraded for e in self.epochs)

    # --- persistence (field names are a wire contract; keep them exact) ---

    def to_json_dict(self) -> dict:
        epochs = []
        for e in self.epochs:
            entry = {
                "index": e.index,
                "start_ms": e.start_ms,
                "end_ms": e.end_ms,
                "kwh_by_component": dict(e.energy.per_component_kwh),
                "kwh_total": e.energy.total_kwh,
            }
            if e.degraded:
                entry["degraded"] = True
            epochs.append(entry)
        return {"run_id": self.run_id, "epochs": epochs, "pue": self.pue}

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def from_json_dict(cls, doc: dict) -> "EnergyLedger":
        ledger = cls(run_id=doc["run_id"], pue=doc["pue"])
        for entry in doc["epochs"]:
            span = EnergySpan(
                start_ms=entry["start_ms"],
                end_ms=entry["end_ms"],
                per_component_kwh=dict(entry["kwh_by_component"]),
                total_kwh=entry["kwh_total"],
                pue=ledger.pue,
            )
            ledger.epochs.append(
                EpochRecord(
                    index=entry["index"],
                    start_ms=entry["start_ms"],
                    end_ms=entry["end_ms"],
                    energy=span,
                    degraded=bool(entry.get("degraded", False)),
                )
            )
        indices = [e.index for e in ledger.epochs]
        if indices != list(range(len(indices))):
            raise ValueError(f"epoch indices not contiguous from 0: {indices}")
        return ledger

    @classmethod
    def load(cls, path: str) -> "EnergyLedger":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json_dict(json.load(fh))


def predict(
    ledger: EnergyLedger,
    total_epochs: int,
    intensity: CarbonIntensity,
    *,
    exclude_warmup: bool = True,
    extrapolate_measured: bool = False,
) -> Prediction:
    """Extrapolate full-run energy, duration and emissions from a partial run.

    The default model keeps the measured portion verbatim and adds the
    mean per-epoch figures for the remaining epochs. With
    ``exclude_warmup`` (the default) epoch 0 is left out of the means when
    at least WARMUP_MIN_EPOCHS epochs are measured. ``extrapolate_measured``
    instead rescales the whole run from the mean (non-default; the
    measured-verbatim model is the documented behavior).
    """
    # snapshot once: marker ingestion may append concurrently
    epochs = list(ledger.epochs)
    m = len(epochs)
    if m < 1:
        raise EmptyLedgerError("cannot predict from a ledger with no closed epochs")
    if total_epochs < m:
        raise TotalLessThanMeasuredError(
            f"total_epochs {total_epochs} < measured {m}"
        )

    reference = epochs
    if exclude_warmup and m >= WARMUP_MIN_EPOCHS:
        reference = epochs[1:]
    mean_kwh = sum(e.kwh_total for e in reference) / len(reference)
    mean_dur = sum(e.duration_s for e in reference) / len(reference)

    measured_kwh = sum(e.kwh_total for e in epochs)
    measured_dur = sum(e.duration_s for e in epochs)

    if total_epochs == m:
        predicted_kwh = measured_kwh
        predicted_dur = measured_dur
    elif extrapolate_measured:
        predicted_kwh = mean_kwh * total_epochs
        predicted_dur = mean_dur * total_epochs
    else:
        predicted_kwh = measured_kwh + mean_kwh * (total_epochs - m)
        predicted_dur = measured_dur + mean_dur * (total_epochs - m)

    energies = [e.kwh_total for e in epochs]
    mean_all = sum(energies) / m
    cv = statistics.pstdev(energies) / mean_all if m > 1 and mean_all > 0 else 0.0

    return Prediction(
        measured_epochs=m,
        total_epochs=total_epochs,
        predicted_kwh=predicted_kwh,
        predicted_duration_s=predicted_dur,
        predicted_kgco2=accounting.emissions(predicted_kwh, intensity),
        intensity_used=intensity,
        energy_cv=cv,
    )
