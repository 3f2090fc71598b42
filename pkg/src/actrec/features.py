"""Statistical descriptors per channel per scope, and their text template.

Each window yields four scope vectors (Full, Start, Mid, End) of 8 statistics
per channel, laid out channel-major. Each vector is also rendered to a fixed
text template so it can be embedded by a text model.
"""

import re
from dataclasses import dataclass

import numpy as np

from .errors import EmptyInput, LengthMismatch
from .ingest import SCOPE_NAMES, PartitionedWindow

STAT_NAMES = ("mean", "max", "min", "q1", "q3", "std", "median", "n_peaks")
N_STATS = len(STAT_NAMES)


@dataclass(frozen=True)
class StatVector:
    mean: float
    max: float
    min: float
    q1: float
    q3: float
    std: float
    median: float
    n_peaks: int

    def as_tuple(self) -> tuple[float, ...]:
        return (
            self.mean,
            self.max,
            self.min,
            self.q1,
            self.q3,
            self.std,
            self.median,
            float(self.n_peaks),
        )


@dataclass(frozen=True)
class FeatureBundle:
    """Per-scope stat vectors and serialized texts for one window."""

    segment_id: int
    vectors: tuple[np.ndarray, ...]  # 4 arrays of length 8*m, channel-major
    texts: tuple[str, ...]  # 4 serialized scope templates
    channel_names: tuple[str, ...]

    def __post_init__(self):
        if len(self.vectors) != 4 or len(self.texts) != 4:
            raise ValueError("a bundle holds exactly 4 scopes")


def count_peaks(values) -> int:
    """Strict interior local maxima; plateaus and endpoints never count."""
    x = np.asarray(values, dtype=np.float64)
    if x.size < 3:
        return 0
    interior = x[1:-1]
    return int(np.count_nonzero((interior > x[:-2]) & (interior > x[2:])))


def compute_stats(values) -> StatVector:
    """The eight descriptors for one channel slice.

    Quantiles use linear interpolation between order statistics at positions
    (n-1)*p; std is the population standard deviation.
    """
    x = np.asarray(values, dtype=np.float64)
    if x.size == 0:
        raise EmptyInput("cannot compute statistics of an empty sequence")
    q1, median, q3 = np.quantile(x, (0.25, 0.5, 0.75))
    return StatVector(
        mean=float(x.mean()),
        max=float(x.max()),
        min=float(x.min()),
        q1=float(q1),
        q3=float(q3),
        std=float(x.std()),
        median=float(median),
        n_peaks=count_peaks(x),
    )


def format_value(v: float) -> str:
    """6 significant digits, shortest form, '.' separator; -0 normalized."""
    v = float(v)
    if v == 0.0:
        v = 0.0
    return f"{v:.6g}"


def serialize_scope(scope_label: str, channel_names, vector) -> str:
    """Render one scope vector to the fixed template.

    Layout: a `segment=<scope>` line, then one line per channel of
    `<channel>: mean=<v>, max=<v>, min=<v>, q1=<v>, q3=<v>, std=<v>,
    median=<v>, n_peaks=<v>`.
    """
    channel_names = tuple(channel_names)
    vector = np.asarray(vector, dtype=np.float64)
    if len(channel_names) == 0 or vector.size != N_STATS * len(channel_names):
        raise LengthMismatch(
            f"vector of length {vector.size} does not match "
            f"{len(channel_names)} channels x {N_STATS} stats"
        )
    lines = [f"segment={scope_label}"]
    for c, name in enumerate(channel_names):
        stats = vector[c * N_STATS : (c + 1) * N_STATS]
        parts = []
        for stat_name, value in zip(STAT_NAMES, stats):
            if stat_name == "n_peaks":
                parts.append(f"n_peaks={int(round(value))}")
            else:
                parts.append(f"{stat_name}={format_value(value)}")
        lines.append(f"{name}: " + ", ".join(parts))
    return "\n".join(lines)


_TEMPLATE_PAIR = re.compile(r"(\w+)=([-+0-9.eE]+|nan|inf)")


def parse_scope_text(text: str) -> dict[str, dict[str, float]]:
    """Inverse of serialize_scope, used by round-trip tests and mocks."""
    out: dict[str, dict[str, float]] = {}
    lines = text.splitlines()
    for line in lines[1:]:
        channel, _, rest = line.partition(": ")
        out[channel] = {k: float(v) for k, v in _TEMPLATE_PAIR.findall(rest)}
    return out


def build_bundle(pw: PartitionedWindow, channel_names) -> FeatureBundle:
    """Compute all four scope vectors of a partitioned window and render them."""
    channel_names = tuple(channel_names)
    m = pw.window.n_channels
    if len(channel_names) != m:
        raise LengthMismatch(
            f"{len(channel_names)} channel names for {m} channels"
        )
    vectors = []
    texts = []
    for k, scope in enumerate(SCOPE_NAMES):
        samples = pw.scope_samples(k)
        vec = np.empty(N_STATS * m, dtype=np.float64)
        for c in range(m):
            vec[c * N_STATS : (c + 1) * N_STATS] = compute_stats(samples[c]).as_tuple()
        vectors.append(vec)
        texts.append(serialize_scope(scope, channel_names, vec))
    return FeatureBundle(
        segment_id=pw.window.segment_id,
        vectors=tuple(vectors),
        texts=tuple(texts),
        channel_names=channel_names,
    )
