"""Run tracking: sample power for a workload's lifetime and ledger it.

Three independent activities run during a tracked job: sampler threads
feeding the shared log, the marker daemon segmenting epochs, and child
supervision. The ledger writer is serialized behind one lock. If no
markers arrive, the whole run becomes a single implicit epoch.
"""

from __future__ import annotations

import json
import os
import subprocess
import threading
import time
from dataclasses import dataclass, field
from typing import NamedTuple

from . import accounting, intensity
from .epochs import EnergyLedger
from .errors import SpawnFailureError, TelemetryUnavailableError, UnsupportedPlatformError
from .markerd import MarkerDaemon
from .telemetry import (
    CpuCounterConfig,
    GpuCounterConfig,
    LiveSource,
    ReplayConfig,
    SampleLog,
    SamplerThread,
    SyntheticProbe,
    default_max_gap_ms,
    open_source,
    write_samples_csv,
)

MARKER_ENV_VAR = "CARBONLEDGER_MARKERS"


@dataclass
class RunManifest:
    """What to run and how to account for it."""

    run_id: str
    command: list[str] | None  # None = external, marker-driven run
    region: str
    pue: float = 1.0
    epochs_total: int | None = None
    output_dir: str = "."


@dataclass
class SourceSpec:
    """One requested power source, parsed from ``--source`` syntax."""

    kind: str
    watts: float = 100.0
    path: str = ""

    @classmethod
    def parse(cls, text: str) -> "SourceSpec":
        kind, _, arg = text.partition(":")
        if kind in ("cpu", "cpu-counter"):
            return cls(kind="cpu-counter")
        if kind in ("gpu", "gpu-counter"):
            return cls(kind="gpu-counter")
        if kind in ("synthetic", "synthetic-constant"):
            return cls(kind="synthetic-constant", watts=float(arg) if arg else 100.0)
        if kind == "replay":
            if not arg:
                raise ValueError("replay source needs a path: replay:FILE.csv")
            return cls(kind="replay", path=arg)
        raise ValueError(f"unknown source {text!r}")


class TrackResult(NamedTuple):
    exit_code: int
    ledger: EnergyLedger
    report: accounting.EmissionsReport
    ledger_path: str
    report_json_path: str
    report_text_path: str


@dataclass
class TrackOptions:
    sources: list[SourceSpec] = field(default_factory=list)
    allow_synthetic: bool = False
    cadence_hz: float = 1.0
    listen: bool = False
    listen_host: str = "127.0.0.1"
    listen_port: int = 0
    chain: intensity.ChainConfig = field(default_factory=intensity.ChainConfig)
    car_factor: float = accounting.CAR_FACTOR_STATEMENT
    per_capita_kg: float = accounting.PER_CAPITA_DEFAULT
    save_samples: bool = False


def _open_streams(opts: TrackOptions) -> tuple[list, bool]:
    """Open the requested (or default) sources; returns (streams, replay_only)."""
    specs = opts.sources
    defaulted = not specs
    if defaulted:
        specs = [SourceSpec(kind="cpu-counter"), SourceSpec(kind="gpu-counter")]

    streams = []
    unsupported = []
    for spec in specs:
        try:
            if spec.kind == "cpu-counter":
                streams.append(open_source(spec.kind, CpuCounterConfig(cadence_hz=opts.cadence_hz)))
            elif spec.kind == "gpu-counter":
                streams.append(open_source(spec.kind, GpuCounterConfig(cadence_hz=opts.cadence_hz)))
            elif spec.kind == "replay":
                streams.append(open_source(spec.kind, ReplayConfig(path=spec.path)))
            elif spec.kind == "synthetic-constant":
                streams.append(LiveSource(SyntheticProbe(spec.watts), opts.cadence_hz))
        except UnsupportedPlatformError as e:
            unsupported.append(f"{spec.kind}: {e}")

    if not streams:
        if opts.allow_synthetic:
            streams.append(LiveSource(SyntheticProbe(100.0), opts.cadence_hz))
        else:
            detail = "; ".join(unsupported) or "no sources requested"
            raise TelemetryUnavailableError(
                f"no usable power source ({detail}); re-run with --allow-synthetic "
                "to track against a constant synthetic load"
            )
    replay_only = all(spec.kind == "replay" for spec in specs) and not defaulted
    return streams, replay_only


def run_track(manifest: RunManifest, opts: TrackOptions) -> TrackResult:
    """Track a child command (or an external marker-driven run) end to end.

    Writes ``<run_id>.ledger.json``, ``.report.json`` and ``.report.txt``
    into the manifest's output directory and propagates the child's exit
    code. The report is written even when the child fails.
    """
    out_dir = manifest.output_dir
    os.makedirs(out_dir, exist_ok=True)
    base = os.path.join(out_dir, manifest.run_id)
    ledger_path = base + ".ledger.json"
    if os.path.exists(ledger_path):
        raise FileExistsError(f"run_id {manifest.run_id!r} already used in {out_dir}: {ledger_path}")

    log = SampleLog()
    ledger = EnergyLedger(
        run_id=manifest.run_id,
        pue=manifest.pue,
        max_gap_ms=default_max_gap_ms(opts.cadence_hz),
    )
    ledger_lock = threading.Lock()
    stop_event = threading.Event()

    streams, replay_only = _open_streams(opts)
    samplers = [SamplerThread(s, log, name=f"sampler-{i}") for i, s in enumerate(streams)]
    for t in samplers:
        t.start()

    daemon = None
    env = dict(os.environ)
    if opts.listen or manifest.command is None:
        daemon = MarkerDaemon(
            ledger, log, ledger_lock,
            host=opts.listen_host, port=opts.listen_port,
            on_stop=stop_event.set,
        )
        daemon.start()
        host, port = daemon.endpoint
        endpoint = f"{host}:{port}"
        env[MARKER_ENV_VAR] = endpoint
        with open(base + ".endpoint", "w", encoding="utf-8") as fh:
            fh.write(endpoint + "\n")
        print(f"carbonledger: markers on {endpoint}", flush=True)

    start_ms = int(time.time() * 1000)
    exit_code = 0
    try:
        if manifest.command is not None:
            try:
                child = subprocess.Popen(manifest.command, env=env)
            except OSError as e:
                raise SpawnFailureError(f"cannot spawn {manifest.command!r}: {e}")
            try:
                exit_code = child.wait()
            except KeyboardInterrupt:
                child.terminate()
                exit_code = child.wait()
        else:
            # external run: wait for the client's stop marker
            try:
                while not stop_event.wait(0.5):
                    pass
            except KeyboardInterrupt:
                pass
    finally:
        end_ms = int(time.time() * 1000)
        for t in samplers:
            t.stop()
        for t in samplers:
            t.join(timeout=5.0)
        if daemon is not None:
            daemon.close()

    with ledger_lock:
        if replay_only:
            extent = log.extent()
            if extent is not None:
                start_ms, end_ms = extent
        if ledger.open_epoch is not None:
            ledger.epoch_end(end_ms, log)
        if not ledger.epochs:
            ledger.epoch_start(start_ms)
            ledger.epoch_end(max(end_ms, start_ms), log)

    ledger.save(ledger_path)
    if opts.save_samples:
        snap = log.snapshot()
        flat = sorted(
            (s for stream in snap.values() for s in stream),
            key=lambda s: (s.ts_ms, s.component),
        )
        write_samples_csv(base + ".samples.csv", flat)

    resolved = intensity.resolve(manifest.region, end_ms, opts.chain)
    report = accounting.build_report(
        ledger.total_kwh(), resolved, opts.car_factor, opts.per_capita_kg
    )
    warnings = ()
    if ledger.any_degraded():
        warnings = ("sampling gaps degraded confidence for at least one epoch",)

    with open(base + ".report.json", "w", encoding="utf-8") as fh:
        json.dump(accounting.report_to_json_dict(report), fh, indent=2)
        fh.write("\n")
    with open(base + ".report.txt", "w", encoding="utf-8") as fh:
        fh.write(accounting.render_report_text(report, warnings) + "\n")

    return TrackResult(
        exit_code=exit_code,
        ledger=ledger,
        report=report,
        ledger_path=ledger_path,
        report_json_path=base + ".report.json",
        report_text_path=base + ".report.txt",
    )
