"""Dataset loading, normalization, windowing, and window partitioning.

Raw CSV rows become per-(subject, label) contiguous channel series, which are
z-scored with statistics fitted on the indexing split, sliced into fixed-size
windows, and split into Full/Start/Mid/End scopes for feature extraction.
"""

import csv
import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ChannelCountMismatch,
    EmptyFile,
    InsufficientData,
    MissingColumn,
    NonNumericValue,
    SeriesTooShort,
    WindowTooShort,
)

ZSCORE_EPS = 1e-8

SCOPE_NAMES = ("Full", "Start", "Mid", "End")


class SourceRole(enum.Enum):
    INDEXING = "indexing"
    VALIDATION = "validation"
    TEST = "test"


@dataclass(frozen=True)
class DatasetSchema:
    """Column layout and windowing geometry of one dataset.

    channel_columns is ordered; its length m fixes the channel count
    everywhere downstream.
    """

    channel_columns: tuple[str, ...]
    label_column: str
    subject_column: str
    sampling_rate_hz: float
    window_len: int
    step: int

    def __post_init__(self):
        object.__setattr__(self, "channel_columns", tuple(self.channel_columns))
        if len(self.channel_columns) < 1:
            raise ValueError("at least one channel column required")
        if self.sampling_rate_hz <= 0:
            raise ValueError("sampling_rate_hz must be positive")
        if self.window_len < 4:
            raise ValueError("window_len must be >= 4 so all partitions are non-empty")
        if not (1 <= self.step <= self.window_len):
            raise ValueError("step must satisfy 1 <= step <= window_len")

    @property
    def n_channels(self) -> int:
        return len(self.channel_columns)


@dataclass(frozen=True)
class ChannelSeries:
    """One contiguous run of samples sharing a subject and a label."""

    subject_id: str
    label: str | None
    values: np.ndarray  # shape (m, n), channel-major

    def __len__(self) -> int:
        return self.values.shape[1]


@dataclass
class SensorWindow:
    segment_id: int
    subject_id: str
    label: str | None
    samples: np.ndarray  # shape (m, L)
    source_role: SourceRole = SourceRole.INDEXING

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2:
            raise ValueError("samples must be a 2-D (channels x time) array")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError(f"segment {self.segment_id}: non-finite sample values")
        if self.label is None and self.source_role is not SourceRole.TEST:
            raise ValueError(
                f"segment {self.segment_id}: label required for {self.source_role.value} windows"
            )

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def length(self) -> int:
        return self.samples.shape[1]


@dataclass(frozen=True)
class PartitionedWindow:
    """A window plus its four scope slices over [0, L)."""

    window: SensorWindow
    bounds: tuple[tuple[int, int], ...]  # (start, stop) per scope, Full first

    def scope_samples(self, k: int) -> np.ndarray:
        start, stop = self.bounds[k]
        return self.window.samples[:, start:stop]


@dataclass(frozen=True)
class NormalizationStats:
    mean: np.ndarray  # per channel
    std: np.ndarray  # per channel, population
    computed_over: str = "indexing"

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64))
        object.__setattr__(self, "std", np.asarray(self.std, dtype=np.float64))
        if self.mean.shape != self.std.shape:
            raise ValueError("mean and std must have matching channel counts")
        if np.any(self.std < 0):
            raise ValueError("std must be non-negative")

    @property
    def n_channels(self) -> int:
        return self.mean.shape[0]


def load_dataset(path, schema: DatasetSchema) -> list[ChannelSeries]:
    """Read a CSV into contiguous per-(subject, label) channel series.

    Row order is preserved; a new series starts whenever the subject or the
    label changes between consecutive rows. Sensor cells must parse as finite
    decimal reals.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyFile(f"{path}: file is empty") from None
        header = [h.strip() for h in header]
        col_index: dict[str, int] = {}
        for col in (*schema.channel_columns, schema.label_column, schema.subject_column):
            if col not in header:
                raise MissingColumn(col)
            col_index[col] = header.index(col)

        runs: list[ChannelSeries] = []
        cur_key: tuple[str, str] | None = None
        cur_rows: list[list[float]] = []

        def flush():
            if cur_key is not None and cur_rows:
                subject, label = cur_key
                runs.append(
                    ChannelSeries(
                        subject_id=subject,
                        label=label,
                        values=np.asarray(cur_rows, dtype=np.float64).T,
                    )
                )

        def cell(row: list[str], col: str) -> str:
            i = col_index[col]
            return row[i].strip() if i < len(row) else ""

        n_rows = 0
        for row_idx, row in enumerate(reader):
            n_rows += 1
            subject = cell(row, schema.subject_column)
            label = cell(row, schema.label_column)
            sample = []
            for col in schema.channel_columns:
                raw = cell(row, col)
                try:
                    value = float(raw)
                except ValueError:
                    raise NonNumericValue(row_idx, col, raw) from None
                if not math.isfinite(value):
                    raise NonNumericValue(row_idx, col, raw)
                sample.append(value)
            key = (subject, label)
            if key != cur_key:
                flush()
                cur_key = key
                cur_rows = []
            cur_rows.append(sample)
        flush()

    if n_rows == 0:
        raise EmptyFile(f"{path}: no data rows")
    return runs


def fit_normalization(indexing_series: list[ChannelSeries]) -> NormalizationStats:
    """Per-channel mean and population std over the indexing split only."""
    if not indexing_series:
        raise InsufficientData("no indexing series provided")
    stacked = np.concatenate([s.values for s in indexing_series], axis=1)
    if stacked.shape[1] < 2:
        raise InsufficientData(
            f"need at least 2 samples per channel, got {stacked.shape[1]}"
        )
    return NormalizationStats(
        mean=stacked.mean(axis=1),
        std=stacked.std(axis=1),  # population (ddof=0)
    )


def apply_zscore(values: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    """z[c][t] = (x[c][t] - mean_c) / max(std_c, eps); constant channels map to 0."""
    values = np.asarray(values, dtype=np.float64)
    if values.shape[0] != stats.n_channels:
        raise ChannelCountMismatch(
            f"series has {values.shape[0]} channels, stats fitted for {stats.n_channels}"
        )
    denom = np.maximum(stats.std, ZSCORE_EPS)
    return (values - stats.mean[:, None]) / denom[:, None]


def slide_windows(
    series: ChannelSeries,
    window_len: int,
    step: int,
    first_id: int = 0,
    source_role: SourceRole = SourceRole.INDEXING,
) -> list[SensorWindow]:
    """Cut fixed-size windows at offsets 0, step, 2*step, ...

    The trailing partial window is discarded; the count is
    floor((n - L) / D) + 1. Windows never span series boundaries, so they
    never mix subjects or labels.
    """
    n = len(series)
    if n < window_len:
        raise SeriesTooShort(f"series length {n} < window length {window_len}")
    windows = []
    count = (n - window_len) // step + 1
    for i in range(count):
        offset = i * step
        windows.append(
            SensorWindow(
                segment_id=first_id + i,
                subject_id=series.subject_id,
                label=series.label,
                samples=series.values[:, offset : offset + window_len].copy(),
                source_role=source_role,
            )
        )
    return windows


def partition_window(window: SensorWindow) -> PartitionedWindow:
    """Split [0, L) into Full plus thirds at floor(L/3) and floor(2L/3)."""
    L = window.length
    if L < 4:
        raise WindowTooShort(f"window length {L} < 4")
    b1 = L // 3
    b2 = (2 * L) // 3
    return PartitionedWindow(
        window=window,
        bounds=((0, L), (0, b1), (b1, b2), (b2, L)),
    )


def windows_from_series(
    series_list: list[ChannelSeries],
    schema: DatasetSchema,
    stats: NormalizationStats | None = None,
    source_role: SourceRole = SourceRole.INDEXING,
    first_id: int = 0,
) -> list[SensorWindow]:
    """Normalize (optionally) and window every series, assigning sequential ids.

    Series shorter than one window are skipped rather than rejected: real
    recordings routinely contain short label runs.
    """
    out: list[SensorWindow] = []
    next_id = first_id
    for series in series_list:
        if len(series) < schema.window_len:
            continue
        values = apply_zscore(series.values, stats) if stats is not None else series.values
        normalized = ChannelSeries(series.subject_id, series.label, values)
        ws = slide_windows(
            normalized, schema.window_len, schema.step, first_id=next_id, source_role=source_role
        )
        next_id += len(ws)
        out.extend(ws)
    return out


def synth_dataset(
    n_classes: int,
    windows_per_class: int,
    m: int,
    L: int,
    seed: int,
) -> list[SensorWindow]:
    """Deterministic synthetic fixture: class c emits sinusoids of amplitude
    (c+1) and frequency (c+1)/L with small seeded noise.

    Channels carry a mild amplitude ramp and a fixed phase offset so the
    per-scope statistics of distinct classes point in distinct directions.
    """
    if n_classes <= 0 or windows_per_class <= 0 or m <= 0 or L <= 0:
        raise ValueError("all synth_dataset counts must be positive")
    rng = np.random.default_rng(seed)
    t = np.arange(L, dtype=np.float64)
    windows = []
    segment_id = 0
    for c in range(n_classes):
        amplitude = float(c + 1)
        freq = (c + 1) / L
        for w in range(windows_per_class):
            base_phase = rng.uniform(0.0, np.pi / 4)
            samples = np.empty((m, L), dtype=np.float64)
            for j in range(m):
                phase = base_phase + 2.0 * np.pi * j / max(m, 1)
                amp_j = amplitude * (1.0 + 0.05 * j)
                samples[j] = amp_j * np.sin(2.0 * np.pi * freq * t + phase)
            samples += rng.normal(0.0, 0.05, size=(m, L))
            windows.append(
                SensorWindow(
                    segment_id=segment_id,
                    subject_id=f"user_{w % 3}",
                    label=f"activity_{c}",
                    samples=samples,
                )
            )
            segment_id += 1
    return windows
