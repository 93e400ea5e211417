"""Static plot files: per-epoch energy bars and intensity timelines."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .epochs import EnergyLedger
from .intensity import IntensityForecast


def plot_epoch_energy(ledger: EnergyLedger, out_path: str) -> None:
    fig, ax = plt.subplots(figsize=(8, 4))
    indices = [e.index for e in ledger.epochs]
    totals = [e.kwh_total for e in ledger.epochs]
    ax.bar(indices, totals, color="#2a7f62")
    ax.set_xlabel("epoch")
    ax.set_ylabel("energy (kWh)")
    ax.set_title(f"energy per epoch - {ledger.run_id}")
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)


def plot_intensity(forecast: IntensityForecast, out_path: str) -> None:
    fig, ax = plt.subplots(figsize=(8, 4))
    ts = [t for t, _ in forecast.points]
    gs = [g for _, g in forecast.points]
    hours = [(t - ts[0]) / 3_600_000 for t in ts]
    ax.plot(hours, gs, color="#b2552e")
    ax.set_xlabel("hours from start")
    ax.set_ylabel("carbon intensity (gCO2eq/kWh)")
    ax.set_title(f"carbon intensity - {forecast.region}")
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)
