"""Sampled signals and their CSV representation."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class SeriesError(ValueError):
    pass


@dataclass
class TimeSeries:
    """Named channels sampled on a common, strictly increasing time grid.

    ``derivatives`` optionally carries d(channel)/dt at the samples (the ODE
    solver fills it so dense output can use exact slopes).
    """

    times: np.ndarray
    channels: dict[str, np.ndarray]
    units: dict[str, str] = field(default_factory=dict)
    derivatives: dict[str, np.ndarray] | None = None
    flags: set[str] = field(default_factory=set)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if self.times.ndim != 1:
            raise SeriesError("times must be one-dimensional")
        n = self.times.size
        if n > 1 and not np.all(np.diff(self.times) > 0):
            bad = int(np.argmax(np.diff(self.times) <= 0)) + 1
            raise SeriesError(f"times are not strictly increasing at sample {bad}")
        if not np.all(np.isfinite(self.times)):
            raise SeriesError("times contain non-finite values")
        chans = {}
        for name, v in self.channels.items():
            v = np.asarray(v, dtype=float)
            if v.shape != (n,):
                raise SeriesError(f"channel {name} has shape {v.shape}, expected ({n},)")
            if not np.all(np.isfinite(v)):
                raise SeriesError(f"channel {name} contains non-finite values")
            chans[name] = v
        self.channels = chans
        for name in chans:
            self.units.setdefault(name, "")

    def __len__(self):
        return self.times.size

    def __getitem__(self, name: str) -> np.ndarray:
        return self.channels[name]

    @property
    def names(self) -> list[str]:
        return list(self.channels)

    @property
    def span(self) -> tuple[float, float]:
        return float(self.times[0]), float(self.times[-1])

    def select(self, names) -> "TimeSeries":
        derivs = None
        if self.derivatives is not None:
            derivs = {n: self.derivatives[n] for n in names if n in self.derivatives}
        return TimeSeries(self.times.copy(), {n: self.channels[n].copy() for n in names},
                          {n: self.units.get(n, "") for n in names}, derivs, set(self.flags))

    def with_channels(self, channels: dict[str, np.ndarray], units: dict[str, str] | None = None
                      ) -> "TimeSeries":
        merged = dict(self.channels)
        merged.update(channels)
        u = dict(self.units)
        u.update(units or {})
        return TimeSeries(self.times.copy(), merged, u, None, set(self.flags))

    def matrix(self, names) -> np.ndarray:
        return np.column_stack([self.channels[n] for n in names])

    def is_uniform(self, dt: float | None = None, jitter: float = 1e-9) -> bool:
        if self.times.size < 2:
            return True
        d = np.diff(self.times)
        ref = d.mean() if dt is None else dt
        return bool(np.all(np.abs(d - ref) <= jitter))

    def sample_interval(self) -> float:
        if self.times.size < 2:
            raise SeriesError("need at least two samples for a sampling interval")
        return float((self.times[-1] - self.times[0]) / (self.times.size - 1))

    def to_csv(self, path) -> None:
        header = ["t_s"] + [f"{n}_{self.units.get(n, '')}".rstrip("_") for n in self.channels]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            cols = [self.times] + list(self.channels.values())
            for row in zip(*cols):
                w.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path) -> "TimeSeries":
        rows, header, linenos = _read_csv(path)
        if not header or header[0] != "t_s":
            raise SeriesError("first CSV column must be t_s")
        data = np.array(rows, dtype=float).reshape(len(rows), len(header))
        steps = np.diff(data[:, 0]) <= 0
        if steps.any():
            k = int(np.argmax(steps)) + 1
            kind = "duplicated" if data[k, 0] == data[k - 1, 0] else "decreasing"
            raise SeriesError(f"{path}: row {linenos[k]} has a {kind} timestamp "
                              f"({data[k, 0]!r})")
        channels, units = {}, {}
        for j, col in enumerate(header[1:], start=1):
            name, unit = split_column(col)
            channels[name] = data[:, j]
            units[name] = unit
        return cls(data[:, 0], channels, units)


def split_column(col: str) -> tuple[str, str]:
    if "_" in col:
        name, unit = col.rsplit("_", 1)
        return name, unit
    return col, ""


def _read_csv(path):
    with open(Path(path), newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SeriesError(f"{path}: empty file") from None
        rows, linenos = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise SeriesError(f"{path}: row {lineno} has {len(row)} fields, "
                                  f"expected {len(header)}")
            try:
                vals = [float(v) for v in row]
            except ValueError as exc:
                raise SeriesError(f"{path}: row {lineno}: {exc}") from None
            if not all(math.isfinite(v) for v in vals):
                raise SeriesError(f"{path}: row {lineno} contains NaN/inf")
            rows.append(vals)
            linenos.append(lineno)
    return rows, header, linenos
