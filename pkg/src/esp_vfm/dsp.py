"""Butterworth low-pass conditioning and integer downsampling."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from .timeseries import SeriesError, TimeSeries


@dataclass(frozen=True)
class FilterDesign:
    """Digital Butterworth low-pass realized as second-order sections.

    scipy's design goes through the bilinear transform with the cutoff
    prewarped, so the -3 dB point lands exactly on ``cutoff_hz``.
    """

    order: int
    cutoff_hz: float
    sample_rate_hz: float
    sos: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if int(self.order) != self.order or self.order < 1:
            raise ValueError(f"filter order must be a positive integer, got {self.order}")
        nyq = self.sample_rate_hz / 2.0
        if not 0.0 < self.cutoff_hz < nyq:
            raise ValueError(f"cutoff {self.cutoff_hz} Hz must lie in (0, {nyq}) Hz")
        sos = signal.butter(int(self.order), self.cutoff_hz, btype="low",
                            fs=self.sample_rate_hz, output="sos")
        # spread the gain so every section has unit DC gain on its own
        sos[:, :3] *= (sos[:, 3:].sum(axis=1) / sos[:, :3].sum(axis=1))[:, None]
        object.__setattr__(self, "sos", sos)

    def gain(self, freq_hz) -> np.ndarray:
        _, h = signal.sosfreqz(self.sos, worN=np.atleast_1d(freq_hz), fs=self.sample_rate_hz)
        return np.abs(h)


def _check_uniform(series: TimeSeries, fs: float) -> None:
    if len(series) < 2:
        return
    if not series.is_uniform(1.0 / fs, jitter=1e-9):
        d = np.diff(series.times)
        raise SeriesError(f"series is not uniformly sampled at {fs} Hz "
                          f"(sample spacing {d.min():.9g} to {d.max():.9g} s)")


def butterworth_lowpass(series: TimeSeries, design: FilterDesign,
                        channels: list[str] | None = None) -> TimeSeries:
    """Causal single-pass filtering of the selected channels (all by default).

    The filter starts from rest, so a constant input shows a start-up
    transient before settling on its value.
    """
    _check_uniform(series, design.sample_rate_hz)
    names = series.names if channels is None else channels
    out = {n: signal.sosfilt(design.sos, series[n]) for n in names}
    return series.with_channels(out)


def downsample(series: TimeSeries, factor: int) -> TimeSeries:
    if int(factor) != factor or factor < 1:
        raise ValueError(f"downsampling factor must be an integer >= 1, got {factor}")
    if not series.is_uniform(jitter=1e-9 * max(1.0, abs(series.times[-1]))):
        raise SeriesError("downsampling requires a uniformly sampled series")
    idx = slice(0, None, int(factor))
    return TimeSeries(series.times[idx], {n: v[idx] for n, v in series.channels.items()},
                      dict(series.units), None, set(series.flags))


def tone_gain_db(design: FilterDesign, freq_hz: float, periods: int = 400) -> float:
    """Steady-state gain of a sinusoid pushed through the filter, in dB.

    The first half of the record is discarded as transient; amplitude is
    taken from a least-squares fit of sin/cos at the tone frequency.
    """
    fs = design.sample_rate_hz
    n = max(int(math.ceil(periods * fs / freq_hz)), 4000)
    t = np.arange(n) / fs
    x = np.sin(2 * np.pi * freq_hz * t)
    y = signal.sosfilt(design.sos, x)
    half = n // 2
    basis = np.column_stack([np.sin(2 * np.pi * freq_hz * t[half:]),
                             np.cos(2 * np.pi * freq_hz * t[half:])])
    coef, *_ = np.linalg.lstsq(basis, y[half:], rcond=None)
    amp = math.hypot(*coef)
    return 20.0 * math.log10(max(amp, 1e-300))
