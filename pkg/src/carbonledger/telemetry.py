"""Power sampling and energy integration.

Samples are instantaneous component power readings (watts at a UTC
millisecond timestamp). Energy over a window is the trapezoidal integral
of those readings, which is exact for piecewise-linear power. Gaps in a
stream larger than ``max_gap_ms`` are integrated by holding the last
value and flag the result as degraded instead of silently undercounting.
"""

from __future__ import annotations

import glob
import os
import shutil
import subprocess
import threading
import time
from bisect import bisect_left, bisect_right
from dataclasses import dataclass, replace
from typing import Iterable, Iterator, NamedTuple, Sequence

from .errors import (
    InsufficientSamplesError,
    InvalidPueError,
    MalformedReplayError,
    UnsupportedPlatformError,
)

JOULES_PER_KWH = 3_600_000.0

SAMPLE_CSV_HEADER = "ts_ms,component,watts"

#: Default sampling cadence. Epochs last minutes, so 1 Hz error is negligible.
DEFAULT_CADENCE_HZ = 1.0

#: A gap wider than 10x the cadence is held-last and flagged as degraded.
GAP_CADENCE_MULTIPLE = 10.0


def default_max_gap_ms(cadence_hz: float = DEFAULT_CADENCE_HZ) -> float:
    return GAP_CADENCE_MULTIPLE * 1000.0 / cadence_hz


@dataclass(frozen=True)
class PowerSample:
    """One instantaneous power reading for one hardware component."""

    ts_ms: int
    component: str
    watts: float

    def __post_init__(self):
        if self.watts < 0:
            raise ValueError(f"negative power reading: {self.watts} W")


@dataclass(frozen=True)
class EnergySpan:
    """Energy over [start_ms, end_ms], segmented by component.

    ``total_kwh`` always equals ``pue * sum(per_component_kwh.values())``;
    use :meth:`build` or :func:`apply_pue` rather than constructing totals
    by hand.
    """

    start_ms: int
    end_ms: int
    per_component_kwh: dict[str, float]
    total_kwh: float
    pue: float = 1.0

    def __post_init__(self):
        if self.end_ms < self.start_ms:
            raise ValueError("span ends before it starts")
        if self.pue < 1.0:
            raise InvalidPueError(f"pue {self.pue} < 1.0")
        if any(v < 0 for v in self.per_component_kwh.values()) or self.total_kwh < 0:
            raise ValueError("negative energy")
        expected = self.pue * sum(self.per_component_kwh.values())
        scale = max(abs(expected), abs(self.total_kwh), 1e-30)
        if abs(expected - self.total_kwh) > 1e-9 * scale:
            raise ValueError(
                f"total {self.total_kwh} inconsistent with pue x components {expected}"
            )

    @staticmethod
    def build(
        start_ms: int,
        end_ms: int,
        per_component_kwh: dict[str, float],
        pue: float = 1.0,
    ) -> "EnergySpan":
        total = pue * sum(per_component_kwh.values())
        return EnergySpan(start_ms, end_ms, dict(per_component_kwh), total, pue)


def apply_pue(span: EnergySpan, pue: float) -> EnergySpan:
    """Scale total energy by a facility overhead multiplier.

    Per-component values are unchanged. Not idempotent: apply once.
    """
    if pue < 1.0:
        raise InvalidPueError(f"pue {pue} < 1.0")
    return replace(span, total_kwh=span.total_kwh * pue, pue=span.pue * pue)


class IntegrationResult(NamedTuple):
    kwh: float
    degraded: bool


def integrate(
    samples: Sequence[PowerSample],
    start_ms: int,
    end_ms: int,
    *,
    max_gap_ms: float | None = None,
) -> float:
    """Trapezoidal integral of one component's power over a window, in kWh."""
    return integrate_report(samples, start_ms, end_ms, max_gap_ms=max_gap_ms).kwh


def integrate_report(
    samples: Sequence[PowerSample],
    start_ms: int,
    end_ms: int,
    *,
    max_gap_ms: float | None = None,
) -> IntegrationResult:
    """Like :func:`integrate` but also reports degraded confidence.

    The window may extend past the sampled range; uncovered stretches are
    integrated by holding the nearest reading. With ``max_gap_ms`` set,
    any held stretch (edge or interior gap) wider than the threshold
    marks the result degraded.
    """
    if end_ms < start_ms:
        raise ValueError("window ends before it starts")
    pts = [(s.ts_ms, s.watts) for s in samples]
    if len(pts) < 2:
        raise InsufficientSamplesError(
            f"need >= 2 samples to integrate, have {len(pts)}"
        )
    ts = [t for t, _ in pts]
    for i in range(1, len(ts)):
        if ts[i] <= ts[i - 1]:
            raise ValueError(f"timestamps not strictly increasing at index {i}")
    if start_ms == end_ms:
        return IntegrationResult(0.0, False)

    def is_gap(dt_ms: float) -> bool:
        return max_gap_ms is not None and dt_ms > max_gap_ms

    def value_at(t: float) -> float:
        if t <= ts[0]:
            return pts[0][1]
        if t >= ts[-1]:
            return pts[-1][1]
        i = bisect_right(ts, t) - 1
        t0, w0 = pts[i]
        if t == t0:
            return w0
        t1, w1 = pts[i + 1]
        if is_gap(t1 - t0):
            return w0
        return w0 + (w1 - w0) * (t - t0) / (t1 - t0)

    cuts = [float(start_ms)]
    cuts.extend(float(t) for t in ts if start_ms < t < end_ms)
    cuts.append(float(end_ms))

    joules = 0.0
    for u, v in zip(cuts, cuts[1:]):
        fu = value_at(u)
        # Interior of an edge-hold or gap-hold stretch integrates as a
        # rectangle at the held value; everything else is a trapezoid.
        if v <= ts[0] or u >= ts[-1]:
            area = fu * (v - u)
        else:
            i = bisect_right(ts, u) - 1 if u >= ts[0] else -1
            if 0 <= i < len(ts) - 1 and is_gap(ts[i + 1] - ts[i]):
                area = pts[i][1] * (v - u)
            else:
                area = 0.5 * (fu + value_at(v)) * (v - u)
        joules += area / 1000.0  # ms -> s

    degraded = False
    if max_gap_ms is not None:
        if start_ms < ts[0] and ts[0] - start_ms > max_gap_ms:
            degraded = True
        if end_ms > ts[-1] and end_ms - ts[-1] > max_gap_ms:
            degraded = True
        for i in range(len(ts) - 1):
            if is_gap(ts[i + 1] - ts[i]):
                if min(ts[i + 1], end_ms) > max(ts[i], start_ms):
                    degraded = True
                    break

    return IntegrationResult(joules / JOULES_PER_KWH, degraded)


class SampleLog:
    """Thread-safe sample sink shared by concurrently running sources.

    Appends may arrive from multiple sampler threads; reads always get an
    immutable snapshot. Samples violating per-component timestamp
    monotonicity are dropped and counted rather than corrupting streams.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._by_component: dict[str, list[PowerSample]] = {}
        self.dropped = 0

    def append(self, sample: PowerSample) -> None:
        with self._lock:
            stream = self._by_component.setdefault(sample.component, [])
            if stream and sample.ts_ms <= stream[-1].ts_ms:
                self.dropped += 1
                return
            stream.append(sample)

    def extend(self, samples: Iterable[PowerSample]) -> None:
        for s in samples:
            self.append(s)

    def snapshot(self) -> dict[str, tuple[PowerSample, ...]]:
        with self._lock:
            return {c: tuple(v) for c, v in self._by_component.items()}

    def window(self, start_ms: int, end_ms: int) -> dict[str, tuple[PowerSample, ...]]:
        """Snapshot restricted to a window, plus one neighbor on each side
        for boundary interpolation. Cost stays proportional to the window,
        not the whole run, so marker acks remain cheap on long runs.

        Integrating the slice gives the same result as the full stream:
        windows beyond the sampled range keep the two nearest samples, so
        edge-hold sees the same boundary values either way.
        """
        with self._lock:
            out = {}
            for component, stream in self._by_component.items():
                lo = max(0, bisect_left(stream, start_ms, key=lambda s: s.ts_ms) - 1)
                hi = min(len(stream), bisect_right(stream, end_ms, key=lambda s: s.ts_ms) + 1)
                if hi - lo < 2 and len(stream) >= 2:
                    if lo == 0:
                        hi = 2
                    else:
                        lo = hi - 2
                out[component] = tuple(stream[lo:hi])
            return out

    def extent(self) -> tuple[int, int] | None:
        snap = self.snapshot()
        all_ts = [s.ts_ms for stream in snap.values() for s in stream]
        if not all_ts:
            return None
        return min(all_ts), max(all_ts)


# --- sources -------------------------------------------------------------

SOURCE_KINDS = ("cpu-counter", "gpu-counter", "replay", "synthetic-constant")


@dataclass
class SyntheticConfig:
    watts: float
    cadence_hz: float = DEFAULT_CADENCE_HZ
    duration_s: float | None = None
    component: str = "synthetic:0"
    start_ms: int = 0


@dataclass
class ReplayConfig:
    path: str


@dataclass
class CpuCounterConfig:
    cadence_hz: float = DEFAULT_CADENCE_HZ
    rapl_root: str = "/sys/class/powercap"


@dataclass
class GpuCounterConfig:
    cadence_hz: float = DEFAULT_CADENCE_HZ


def open_source(kind: str, config) -> Iterator[PowerSample]:
    """Open a power source and return its sample stream.

    ``replay`` yields exactly the file's samples in order and
    ``synthetic-constant`` with a duration yields a fixed deterministic
    timeline; both are batch streams. Counter kinds raise
    UnsupportedPlatformError when the platform interface is absent, which
    signals the caller to fall back to replay or synthetic sources.
    """
    if kind == "replay":
        return iter(read_samples_csv(config.path))
    if kind == "synthetic-constant":
        return _synthetic_stream(config)
    if kind == "cpu-counter":
        return LiveSource(RaplProbe(config.rapl_root), config.cadence_hz)
    if kind == "gpu-counter":
        return LiveSource(NvidiaProbe(), config.cadence_hz)
    raise ValueError(f"unknown source kind: {kind!r}")


def _synthetic_stream(config: SyntheticConfig) -> Iterator[PowerSample]:
    if config.duration_s is None:
        raise ValueError("synthetic batch stream needs a duration; use LiveSource for live ticks")
    period_ms = 1000.0 / config.cadence_hz
    count = int(round(config.duration_s * config.cadence_hz))
    for i in range(count):
        yield PowerSample(
            ts_ms=int(config.start_ms + i * period_ms),
            component=config.component,
            watts=config.watts,
        )


def read_samples_csv(path: str) -> list[PowerSample]:
    """Parse a replay file: header ``ts_ms,component,watts``, LF endings."""
    samples: list[PowerSample] = []
    last_ts: dict[str, int] = {}
    try:
        fh = open(path, encoding="utf-8", newline="")
    except OSError as e:
        raise MalformedReplayError(path, 0, str(e))
    with fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if line_no == 1:
                if line != SAMPLE_CSV_HEADER:
                    raise MalformedReplayError(
                        path, 1, f"expected header {SAMPLE_CSV_HEADER!r}, got {line!r}"
                    )
                continue
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise MalformedReplayError(path, line_no, f"expected 3 fields, got {len(parts)}")
            ts_raw, component, watts_raw = parts
            try:
                ts_ms = int(ts_raw)
            except ValueError:
                raise MalformedReplayError(path, line_no, f"bad ts_ms {ts_raw!r}")
            try:
                watts = float(watts_raw)
            except ValueError:
                raise MalformedReplayError(path, line_no, f"bad watts {watts_raw!r}")
            if not watts >= 0 or watts != watts or watts == float("inf"):
                raise MalformedReplayError(path, line_no, f"bad watts {watts_raw!r}")
            if component in last_ts and ts_ms <= last_ts[component]:
                raise MalformedReplayError(
                    path, line_no, f"timestamps for {component!r} not strictly increasing"
                )
            last_ts[component] = ts_ms
            samples.append(PowerSample(ts_ms, component, watts))
    return samples


def write_samples_csv(path: str, samples: Iterable[PowerSample]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(SAMPLE_CSV_HEADER + "\n")
        for s in samples:
            fh.write(f"{s.ts_ms},{s.component},{s.watts}\n")


class LiveSource:
    """Ticks a probe at a fixed cadence against the wall clock.

    Iteration blocks between ticks and ends when :meth:`stop` is called;
    a final reading is taken at stop time so short windows stay accurate.
    """

    def __init__(self, probe, cadence_hz: float = DEFAULT_CADENCE_HZ):
        self.probe = probe
        self.period_s = 1.0 / cadence_hz
        self._stop = threading.Event()

    def stop(self) -> None:
        self._stop.set()

    def __iter__(self) -> Iterator[PowerSample]:
        while True:
            now_ms = int(time.time() * 1000)
            for component, watts in self.probe.read():
                yield PowerSample(now_ms, component, max(0.0, watts))
            if self._stop.wait(self.period_s):
                now_ms = int(time.time() * 1000)
                for component, watts in self.probe.read():
                    yield PowerSample(now_ms, component, max(0.0, watts))
                return


class SyntheticProbe:
    def __init__(self, watts: float, component: str = "synthetic:0"):
        self.watts = watts
        self.component = component

    def read(self) -> list[tuple[str, float]]:
        return [(self.component, self.watts)]


class RaplProbe:
    """CPU package power from the powercap energy counters.

    Power is the energy-counter delta over the tick interval, so the
    first tick after opening reports nothing.
    """

    def __init__(self, rapl_root: str = "/sys/class/powercap"):
        self._domains = []
        pattern = os.path.join(rapl_root, "intel-rapl:*")
        for domain in sorted(glob.glob(pattern)):
            # top-level zones only (intel-rapl:N); sub-zones would double-count
            if os.path.basename(domain).count(":") != 1:
                continue
            energy_file = os.path.join(domain, "energy_uj")
            if not os.access(energy_file, os.R_OK):
                continue
            max_range = None
            range_file = os.path.join(domain, "max_energy_range_uj")
            try:
                with open(range_file) as fh:
                    max_range = int(fh.read().strip())
            except (OSError, ValueError):
                pass
            self._domains.append((f"cpu:{len(self._domains)}", energy_file, max_range))
        if not self._domains:
            raise UnsupportedPlatformError(
                f"no readable powercap energy counters under {rapl_root}"
            )
        self._last: dict[str, tuple[float, int]] = {}

    def read(self) -> list[tuple[str, float]]:
        now = time.monotonic()
        out = []
        for component, energy_file, max_range in self._domains:
            try:
                with open(energy_file) as fh:
                    energy_uj = int(fh.read().strip())
            except (OSError, ValueError):
                continue
            prev = self._last.get(component)
            self._last[component] = (now, energy_uj)
            if prev is None:
                continue
            prev_t, prev_uj = prev
            delta_uj = energy_uj - prev_uj
            if delta_uj < 0:
                if max_range:
                    delta_uj += max_range
                else:
                    continue  # counter wrapped and range unknown; skip tick
            dt = now - prev_t
            if dt <= 0:
                continue
            out.append((component, delta_uj / 1e6 / dt))
        return out


class NvidiaProbe:
    """GPU power draw via NVML when importable, else the vendor CLI."""

    def __init__(self):
        self._nvml = None
        self._handles = []
        try:
            import pynvml

            pynvml.nvmlInit()
            count = pynvml.nvmlDeviceGetCount()
            if count == 0:
                raise UnsupportedPlatformError("no GPUs visible to NVML")
            self._nvml = pynvml
            self._handles = [pynvml.nvmlDeviceGetHandleByIndex(i) for i in range(count)]
            return
        except UnsupportedPlatformError:
            raise
        except Exception:
            self._nvml = None
        self._smi = shutil.which("nvidia-smi")
        if not self._smi:
            raise UnsupportedPlatformError("neither NVML nor nvidia-smi is available")

    def read(self) -> list[tuple[str, float]]:
        if self._nvml is not None:
            out = []
            for i, handle in enumerate(self._handles):
                try:
                    mw = self._nvml.nvmlDeviceGetPowerUsage(handle)
                except Exception:
                    continue
                out.append((f"gpu:{i}", mw / 1000.0))
            return out
        try:
            res = subprocess.run(
                [self._smi, "--query-gpu=power.draw", "--format=csv,noheader,nounits"],
                capture_output=True,
                text=True,
                timeout=5,
            )
        except (OSError, subprocess.TimeoutExpired):
            return []
        if res.returncode != 0:
            return []
        out = []
        for i, line in enumerate(res.stdout.strip().splitlines()):
            try:
                out.append((f"gpu:{i}", float(line.strip())))
            except ValueError:
                continue
        return out


class SamplerThread(threading.Thread):
    """Drains one source into the shared log without blocking others."""

    def __init__(self, stream: Iterable[PowerSample], log: SampleLog, name: str = "sampler"):
        super().__init__(name=name, daemon=True)
        self.stream = stream
        self.log = log
        self.error: Exception | None = None

    def run(self):
        try:
            for sample in self.stream:
                self.log.append(sample)
        except Exception as e:  # sampling must never take down tracking
            self.error = e

    def stop(self):
        stop = getattr(self.stream, "stop", None)
        if stop is not None:
            stop()
