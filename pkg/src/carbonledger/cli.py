"""Operator command line.

Subcommands: ``track`` wraps a command (or an external marker-driven
run) under power sampling; ``predict`` extrapolates a partial ledger;
``report`` renders emissions and equivalents; ``estimate`` scales a
per-fold figure to a venue; ``advise`` picks the lowest-carbon start
window; ``plot`` writes static charts.

Exit codes: 0 success (track propagates the child's code), 2 usage
error, 3 I/O error, 4 telemetry unavailable.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

from . import accounting, advisor, epochs, intensity
from .errors import (
    CarbonLedgerError,
    EmptyFeasibleSetError,
    EmptyLedgerError,
    ForecastTooShortError,
    InvalidAcceptanceError,
    InvalidFactorError,
    InvalidPerCapitaError,
    InvalidPueError,
    TelemetryUnavailableError,
    TotalLessThanMeasuredError,
    UnknownRegionError,
)
from .tracker import RunManifest, SourceSpec, TrackOptions, run_track

REGION_ENV_VAR = "CARBONLEDGER_REGION"
INTENSITY_URL_ENV_VAR = "CARBONLEDGER_INTENSITY_URL"

DEFAULT_REGION = "WOR"

_USAGE_ERRORS = (
    InvalidAcceptanceError,
    InvalidFactorError,
    InvalidPerCapitaError,
    InvalidPueError,
    TotalLessThanMeasuredError,
    EmptyLedgerError,
    UnknownRegionError,
    ForecastTooShortError,
    EmptyFeasibleSetError,
)

CAR_FACTOR_PRESETS = {
    "statement": accounting.CAR_FACTOR_STATEMENT,
    "table": accounting.CAR_FACTOR_TABLE,
}


def parse_car_factor(text: str) -> float:
    if text in CAR_FACTOR_PRESETS:
        return CAR_FACTOR_PRESETS[text]
    value = float(text)
    if value <= 0:
        raise InvalidFactorError(f"car factor must be > 0, got {value}")
    return value


def _default_region() -> str:
    return os.environ.get(REGION_ENV_VAR, DEFAULT_REGION)


def _default_intensity_url() -> str | None:
    return os.environ.get(INTENSITY_URL_ENV_VAR) or None


def _add_intensity_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--region", default=_default_region(),
                   help=f"region code (default ${REGION_ENV_VAR} or {DEFAULT_REGION})")
    p.add_argument("--intensity-url", default=_default_intensity_url(),
                   help="realtime intensity endpoint template; {region} is substituted "
                        f"(default ${INTENSITY_URL_ENV_VAR})")
    p.add_argument("--region-table", default=None, metavar="CSV",
                   help="region,g_per_kwh,source_note file overriding the shipped table")


def _add_report_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--car-factor", default="statement", metavar="KG_PER_KM",
                   help="kgCO2/km, or preset 'statement' (~0.1204) or 'table' (~0.08725)")
    p.add_argument("--per-capita", type=float, default=accounting.PER_CAPITA_DEFAULT,
                   metavar="KG", help="annual per-capita footprint, kgCO2eq")


def _add_format_flag(p: argparse.ArgumentParser) -> None:
    p.add_argument("--format", choices=("text", "json"), default="text")


def _chain(args) -> intensity.ChainConfig:
    return intensity.ChainConfig(
        endpoint_url=getattr(args, "intensity_url", None),
        table=intensity.table_with_overrides(getattr(args, "region_table", None)),
    )


def _print_json(doc: dict) -> None:
    print(json.dumps(doc, indent=2))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="carbonledger",
        description="Track, predict and report the energy and carbon cost of compute jobs.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("track", help="run a command under power tracking")
    p.add_argument("command", nargs=argparse.REMAINDER,
                   help="command to wrap, after '--'")
    p.add_argument("--external", action="store_true",
                   help="no child process; run is driven by epoch markers until stop")
    p.add_argument("--run-id", default=None)
    p.add_argument("--pue", type=float, default=1.0,
                   help="facility overhead multiplier >= 1 (bare hardware: 1.0; "
                        "unknown datacenter: 1.58 is a common assumption)")
    p.add_argument("--epochs-total", type=int, default=None,
                   help="planned epoch count; writes a full-run prediction next to the report")
    p.add_argument("--out", default=".", metavar="DIR")
    p.add_argument("--source", action="append", default=[],
                   help="power source: cpu | gpu | synthetic[:WATTS] | replay:FILE "
                        "(repeatable; default: cpu and gpu counters)")
    p.add_argument("--cadence", type=float, default=1.0, metavar="HZ")
    p.add_argument("--allow-synthetic", action="store_true",
                   help="fall back to a constant synthetic source when counters are absent")
    p.add_argument("--listen", nargs="?", const="127.0.0.1:0", default=None,
                   metavar="HOST:PORT", help="accept epoch markers on a loopback socket")
    p.add_argument("--save-samples", action="store_true",
                   help="also write the raw sample CSV")
    _add_intensity_flags(p)
    _add_report_flags(p)
    _add_format_flag(p)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("predict", help="extrapolate full-run totals from a partial ledger")
    p.add_argument("ledger", help="ledger JSON path")
    p.add_argument("--epochs-total", type=int, required=True)
    p.add_argument("--include-warmup", action="store_true",
                   help="keep epoch 0 in the per-epoch means")
    p.add_argument("--extrapolate-measured", action="store_true",
                   help="rescale the whole run from the mean instead of keeping "
                        "the measured portion verbatim (non-default model)")
    _add_intensity_flags(p)
    _add_format_flag(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("report", help="render an emissions report from a ledger")
    p.add_argument("ledger", nargs="?", help="ledger JSON path")
    p.add_argument("--compare", nargs=2, metavar=("A", "B"),
                   help="compare two ledgers (per-run totals and deltas)")
    p.add_argument("--intensity-override", type=float, default=None, metavar="G_PER_KWH",
                   help="bypass the provider chain with a fixed intensity")
    _add_intensity_flags(p)
    _add_report_flags(p)
    _add_format_flag(p)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("estimate", help="venue-scale extrapolation from a per-fold figure")
    p.add_argument("-n", "--papers", type=int, required=True)
    p.add_argument("-k", "--folds", type=int, required=True)
    p.add_argument("-d", "--per-fold", type=float, required=True,
                   help="per-training-fold figure (km by default, kg with --unit kg)")
    p.add_argument("-a", "--acceptance", type=float, required=True,
                   help="acceptance ratio in (0, 1]")
    p.add_argument("--unit", choices=("km", "kg"), default="km")
    _add_format_flag(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("advise", help="lowest-carbon start window from a forecast")
    p.add_argument("forecast", help="forecast CSV path (ts_ms,g_per_kwh)")
    p.add_argument("--duration", type=float, required=True, metavar="SECONDS")
    p.add_argument("--earliest", type=int, default=None, metavar="TS_MS")
    p.add_argument("--latest", type=int, default=None, metavar="TS_MS")
    _add_format_flag(p)
    p.set_defaults(func=cmd_advise)

    p = sub.add_parser("plot", help="write a static chart for a ledger or forecast")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--ledger", help="ledger JSON; bar chart of energy per epoch")
    g.add_argument("--forecast", help="forecast CSV; intensity timeline")
    p.add_argument("--out", required=True, metavar="IMAGE")
    p.set_defaults(func=cmd_plot)

    return parser


# --- subcommands -----------------------------------------------------------


def _strip_dashdash(command: list[str]) -> list[str]:
    if command and command[0] == "--":
        return command[1:]
    return command


def cmd_track(args) -> int:
    command = _strip_dashdash(args.command)
    if args.external and command:
        print("carbonledger: --external takes no command", file=sys.stderr)
        return 2
    if not args.external and not command:
        print("carbonledger: nothing to track: give a command after '--' or use --external",
              file=sys.stderr)
        return 2
    if args.pue < 1.0:
        raise InvalidPueError(f"pue {args.pue} < 1.0")
    if args.cadence <= 0:
        raise ValueError(f"cadence must be > 0 Hz, got {args.cadence}")

    run_id = args.run_id or f"run-{time.strftime('%Y%m%d-%H%M%S')}-{os.getpid()}"
    manifest = RunManifest(
        run_id=run_id,
        command=command or None,
        region=args.region,
        pue=args.pue,
        epochs_total=args.epochs_total,
        output_dir=args.out,
    )

    listen = args.listen is not None or args.external
    host, port = "127.0.0.1", 0
    if args.listen:
        text = args.listen
        if ":" in text:
            host, port_s = text.rsplit(":", 1)
        else:
            host, port_s = "127.0.0.1", text
        port = int(port_s)

    opts = TrackOptions(
        sources=[SourceSpec.parse(s) for s in args.source],
        allow_synthetic=args.allow_synthetic,
        cadence_hz=args.cadence,
        listen=listen,
        listen_host=host,
        listen_port=port,
        chain=_chain(args),
        car_factor=parse_car_factor(args.car_factor),
        per_capita_kg=args.per_capita,
        save_samples=args.save_samples,
    )

    result = run_track(manifest, opts)

    if args.format == "json":
        with open(result.report_json_path, encoding="utf-8") as fh:
            print(fh.read(), end="")
    else:
        with open(result.report_text_path, encoding="utf-8") as fh:
            print(fh.read(), end="")
        print(f"ledger: {result.ledger_path}")

    if args.epochs_total and result.ledger.measured_epochs:
        resolved = intensity.resolve(args.region, None, opts.chain)
        prediction = epochs.predict(result.ledger, args.epochs_total, resolved)
        path = os.path.join(args.out, run_id + ".prediction.json")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(_prediction_json(result.ledger.run_id, prediction), fh, indent=2)
            fh.write("\n")
        if args.format == "text":
            print(f"prediction: {path}")

    return result.exit_code


def _prediction_json(run_id: str, p: epochs.Prediction) -> dict:
    return {
        "run_id": run_id,
        "measured_epochs": p.measured_epochs,
        "total_epochs": p.total_epochs,
        "predicted_kwh": round(p.predicted_kwh, 3),
        "predicted_duration_s": round(p.predicted_duration_s, 3),
        "predicted_kgco2": round(p.predicted_kgco2, 3),
        "energy_cv": round(p.energy_cv, 6),
        "region": p.intensity_used.region,
        "g_per_kwh": round(p.intensity_used.g_per_kwh, 3),
        "intensity_source": p.intensity_used.source,
    }


def cmd_predict(args) -> int:
    ledger = epochs.EnergyLedger.load(args.ledger)
    resolved = intensity.resolve(args.region, None, _chain(args))
    prediction = epochs.predict(
        ledger,
        args.epochs_total,
        resolved,
        exclude_warmup=not args.include_warmup,
        extrapolate_measured=args.extrapolate_measured,
    )
    if args.format == "json":
        _print_json(_prediction_json(ledger.run_id, prediction))
    else:
        print(f"run:              {ledger.run_id}")
        print(f"measured:         {prediction.measured_epochs} epochs, "
              f"{ledger.total_kwh():.3f} kWh, {ledger.total_duration_s():.1f} s")
        print(f"predicted @ {prediction.total_epochs}:   "
              f"{prediction.predicted_kwh:.3f} kWh, "
              f"{prediction.predicted_duration_s:.1f} s, "
              f"{prediction.predicted_kgco2:.3f} kg CO2eq")
        print(f"intensity:        {prediction.intensity_used.g_per_kwh:.3f} g/kWh "
              f"({prediction.intensity_used.region}, {prediction.intensity_used.source})")
        print(f"energy cv:        {prediction.energy_cv:.6f}")
    return 0


def _resolve_for_report(args) -> intensity.CarbonIntensity:
    if args.intensity_override is not None:
        return intensity.make_override(args.region, args.intensity_override)
    return intensity.resolve(args.region, None, _chain(args))


def cmd_report(args) -> int:
    if args.compare:
        return _report_compare(args)
    if not args.ledger:
        print("carbonledger: report needs a ledger path (or --compare A B)", file=sys.stderr)
        return 2
    ledger = epochs.EnergyLedger.load(args.ledger)
    resolved = _resolve_for_report(args)
    report = accounting.build_report(
        ledger.total_kwh(), resolved,
        parse_car_factor(args.car_factor), args.per_capita,
    )
    warnings = ()
    if ledger.any_degraded():
        warnings = ("sampling gaps degraded confidence for at least one epoch",)
    if args.format == "json":
        _print_json(accounting.report_to_json_dict(report))
    else:
        print(accounting.render_report_text(report, warnings))
    return 0


def _report_compare(args) -> int:
    resolved = _resolve_for_report(args)
    factor = parse_car_factor(args.car_factor)
    rows = []
    for path in args.compare:
        ledger = epochs.EnergyLedger.load(path)
        report = accounting.build_report(ledger.total_kwh(), resolved, factor, args.per_capita)
        rows.append((ledger.run_id, report))
    (id_a, a), (id_b, b) = rows
    if args.format == "json":
        _print_json({
            "runs": [
                {"run_id": id_a, **accounting.report_to_json_dict(a)},
                {"run_id": id_b, **accounting.report_to_json_dict(b)},
            ],
            "delta": {
                "kwh": round(b.kwh - a.kwh, 3),
                "kg_co2eq": round(b.kg_co2eq - a.kg_co2eq, 3),
                "km_car": round(b.km_car - a.km_car, 3),
            },
        })
    else:
        print(f"{'run':24} {'kWh':>10} {'kg CO2eq':>10} {'km car':>10}")
        for run_id, r in rows:
            print(f"{run_id:24} {r.kwh:>10.3f} {r.kg_co2eq:>10.3f} {r.km_car:>10.3f}")
        print(f"{'delta (B - A)':24} {b.kwh - a.kwh:>10.3f} "
              f"{b.kg_co2eq - a.kg_co2eq:>10.3f} {b.km_car - a.km_car:>10.3f}")
    return 0


def cmd_estimate(args) -> int:
    if args.unit == "km":
        est = accounting.aggregate_estimate(args.papers, args.folds, args.per_fold, args.acceptance)
        doc = {
            "n_papers": est.n_papers,
            "k_folds": est.k_folds,
            "per_fold_km": est.per_fold_km,
            "acceptance_ratio": est.acceptance_ratio,
            "total_km": round(est.total_km, 3),
        }
        total, unit = est.total_km, "km"
    else:
        est = accounting.aggregate_estimate_kg(args.papers, args.folds, args.per_fold, args.acceptance)
        doc = {
            "n_papers": est.n_papers,
            "k_folds": est.k_folds,
            "per_fold_kg": est.per_fold_kg,
            "acceptance_ratio": est.acceptance_ratio,
            "total_kg": round(est.total_kg, 3),
        }
        total, unit = est.total_kg, "kg"
    if args.format == "json":
        _print_json(doc)
    else:
        print(f"total: {total:.3f} {unit} "
              f"(N={args.papers}, K={args.folds}, per-fold={args.per_fold} {unit}, "
              f"acceptance={args.acceptance})")
    return 0


def cmd_advise(args) -> int:
    forecast = intensity.read_forecast_csv(args.forecast)
    advice = advisor.best_window(forecast, args.duration, args.earliest, args.latest)
    if args.format == "json":
        _print_json({
            "start_ms": advice.start_ms,
            "end_ms": advice.end_ms,
            "mean_g_per_kwh": round(advice.mean_g_per_kwh, 3),
            "savings_vs_now": round(advice.savings_vs_now, 6),
        })
    else:
        offset_h = (advice.start_ms - forecast.start_ms) / 3_600_000
        print(f"start:    {advice.start_ms} ({offset_h:.2f} h after forecast start)")
        print(f"end:      {advice.end_ms}")
        print(f"mean:     {advice.mean_g_per_kwh:.3f} gCO2eq/kWh")
        print(f"savings:  {advice.savings_vs_now * 100:.2f}% vs starting now")
    return 0


def cmd_plot(args) -> int:
    from . import plots  # matplotlib import is slow; keep it off other paths

    if args.ledger:
        plots.plot_epoch_energy(epochs.EnergyLedger.load(args.ledger), args.out)
    else:
        plots.plot_intensity(intensity.read_forecast_csv(args.forecast), args.out)
    print(f"wrote {args.out}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except TelemetryUnavailableError as e:
        print(f"carbonledger: {e}", file=sys.stderr)
        return 4
    except _USAGE_ERRORS as e:
        print(f"carbonledger: {e}", file=sys.stderr)
        return 2
    except (OSError, CarbonLedgerError) as e:
        print(f"carbonledger: {e}", file=sys.stderr)
        return 3
    except ValueError as e:
        print(f"carbonledger: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
