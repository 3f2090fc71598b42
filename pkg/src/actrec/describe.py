"""Narrative window descriptors as an alternative to statistic templates.

An LLM receives the raw samples plus the sensor configuration and must answer
in a fixed markup: one section per scope (FULL/START/MID/END), each carrying
dominant_axis / smoothness / intensity / transitions facet lines. The four
sections then replace the four template texts in the embedding/indexing path;
retrieval machinery is untouched.
"""

import re
from dataclasses import dataclass

import numpy as np

from .embed import ProviderConfig, embed_batch
from .errors import ConfigMismatch, MalformedDescriptor
from .features import count_peaks, format_value
from .ingest import SensorWindow
from .store import VectorStore

SECTION_HEADERS = ("## FULL", "## START", "## MID", "## END")
FACETS = ("dominant_axis", "smoothness", "intensity", "transitions")
DEFAULT_SAMPLE_BUDGET = 4000  # max numbers included verbatim in the prompt


@dataclass(frozen=True)
class ChannelInfo:
    name: str
    placement: str = "unspecified"
    orientation: str = "unspecified"
    axis_mapping: str = "unspecified"


@dataclass(frozen=True)
class SensorConfig:
    sampling_rate_hz: float
    channels: tuple[ChannelInfo, ...]

    def __post_init__(self):
        if self.sampling_rate_hz <= 0:
            raise ValueError("sampling_rate_hz must be positive")

    @classmethod
    def generic(cls, channel_names, sampling_rate_hz: float) -> "SensorConfig":
        return cls(
            sampling_rate_hz=sampling_rate_hz,
            channels=tuple(ChannelInfo(name=n) for n in channel_names),
        )


@dataclass(frozen=True)
class ActivityDescriptor:
    segment_id: int
    full_analysis: str
    start_analysis: str
    mid_analysis: str
    end_analysis: str

    def section_texts(self) -> tuple[str, str, str, str]:
        return (
            self.full_analysis,
            self.start_analysis,
            self.mid_analysis,
            self.end_analysis,
        )


def build_descriptor_prompt(
    window: SensorWindow,
    cfg: SensorConfig,
    sample_budget: int = DEFAULT_SAMPLE_BUDGET,
) -> str:
    """Raw samples + sensor configuration + required output markup.

    Windows larger than the sample budget are uniformly strided down, and the
    prompt says so.
    """
    if len(cfg.channels) != window.n_channels:
        raise ConfigMismatch(
            f"sensor config covers {len(cfg.channels)} channels, "
            f"window has {window.n_channels}"
        )
    m, L = window.samples.shape
    stride = 1
    total = m * L
    if total > sample_budget:
        stride = -(-total // sample_budget)  # ceil division
    lines = [
        "Analyze the motion characteristics of this sensor window.",
        "",
        "Sensor configuration:",
        f"sampling_rate_hz={format_value(cfg.sampling_rate_hz)}",
    ]
    for ch in cfg.channels:
        lines.append(
            f"channel {ch.name}: placement={ch.placement}, "
            f"orientation={ch.orientation}, axis={ch.axis_mapping}"
        )
    lines.append("")
    if stride > 1:
        lines.append(
            f"Raw samples (uniformly subsampled, every {stride}th of "
            f"{L} samples, 4 decimal places):"
        )
    else:
        lines.append("Raw samples (4 decimal places):")
    for c, ch in enumerate(cfg.channels):
        values = window.samples[c, ::stride]
        lines.append(f"channel {ch.name}: " + " ".join(f"{v:.4f}" for v in values))
    lines.extend(
        [
            "",
            "Respond with exactly these four sections:",
            *SECTION_HEADERS,
            "Within each section include one line per facet, in this order:",
            *[f"{facet}: <analysis>" for facet in FACETS],
            "Cover the whole window under ## FULL and the three thirds of the "
            "window under ## START, ## MID, ## END.",
        ]
    )
    return "\n".join(lines)


def parse_descriptor(response: str, segment_id: int) -> ActivityDescriptor:
    """Split the response into the four sections and validate the facets."""
    positions = []
    for header in SECTION_HEADERS:
        match = re.search(rf"^{re.escape(header)}\s*$", response, re.MULTILINE)
        if match is None:
            raise MalformedDescriptor(f"missing section header {header!r}")
        positions.append((match.start(), match.end(), header))
    positions.sort()
    if [p[2] for p in positions] != list(SECTION_HEADERS):
        raise MalformedDescriptor("section headers out of order")
    sections = []
    for i, (_, end, header) in enumerate(positions):
        stop = positions[i + 1][0] if i + 1 < len(positions) else len(response)
        body = response[end:stop].strip()
        if not body:
            raise MalformedDescriptor(f"section {header!r} is empty")
        for facet in FACETS:
            if not re.search(rf"^{facet}\s*:", body, re.MULTILINE):
                raise MalformedDescriptor(
                    f"section {header!r} lacks facet {facet!r}"
                )
        sections.append(f"{header}\n{body}")
    return ActivityDescriptor(segment_id, *sections)


def generate_descriptor(client, prompt: str, segment_id: int = -1) -> ActivityDescriptor:
    """Ask the client for a descriptor; tolerate 2 malformed regenerations."""
    last_error: Exception | None = None
    for _ in range(3):
        response = client.describe(prompt)
        try:
            return parse_descriptor(response, segment_id)
        except MalformedDescriptor as exc:
            last_error = exc
    raise MalformedDescriptor(
        f"descriptor still malformed after 2 regenerations: {last_error}"
    )


def describe_window(window: SensorWindow, cfg: SensorConfig, client) -> ActivityDescriptor:
    prompt = build_descriptor_prompt(window, cfg)
    return generate_descriptor(client, prompt, segment_id=window.segment_id)


class MockDescriptorClient:
    """Deterministic descriptor generator driven by the window's own numbers.

    It reads the raw samples back out of the prompt (the only thing a real
    client would see) and fills each facet with simple measurements, so the
    sections both satisfy the markup and still separate different motions.
    """

    def describe(self, prompt: str) -> str:
        channels: dict[str, np.ndarray] = {}
        in_samples = False
        for line in prompt.splitlines():
            if line.startswith("Raw samples"):
                in_samples = True
                continue
            if in_samples:
                match = re.match(r"channel (\S+): (.+)$", line)
                if match:
                    channels[match.group(1)] = np.array(
                        [float(tok) for tok in match.group(2).split()]
                    )
                elif line.strip() == "":
                    break
        if not channels:
            return "no samples found"
        names = list(channels)
        data = np.vstack([channels[n] for n in names])
        L = data.shape[1]
        b1, b2 = L // 3, (2 * L) // 3
        scopes = {
            "## FULL": data,
            "## START": data[:, :b1],
            "## MID": data[:, b1:b2],
            "## END": data[:, b2:],
        }
        blocks = []
        for header, scoped in scopes.items():
            variances = scoped.var(axis=1)
            dominant = names[int(np.argmax(variances))]
            jerk = float(np.mean(np.abs(np.diff(scoped, axis=1)))) if scoped.shape[1] > 1 else 0.0
            intensity = float(np.mean(scoped.std(axis=1)))
            peaks = int(sum(count_peaks(scoped[c]) for c in range(scoped.shape[0])))
            blocks.append(
                "\n".join(
                    [
                        header,
                        f"dominant_axis: {dominant} carries the most motion "
                        f"(variance {format_value(float(variances.max()))})",
                        f"smoothness: mean step-to-step change {format_value(jerk)}",
                        f"intensity: average per-channel deviation {format_value(intensity)}",
                        f"transitions: {peaks} local peaks across channels",
                    ]
                )
            )
        return "\n".join(blocks)


class ChatDescriptorClient:
    """Adapter running descriptor prompts through any chat client."""

    SYSTEM = (
        "You analyze wearable sensor windows and answer strictly in the "
        "requested markup."
    )

    def __init__(self, chat_client):
        self.chat_client = chat_client

    def describe(self, prompt: str) -> str:
        from .classify import PromptBundle

        bundle = PromptBundle(
            system_text=self.SYSTEM, user_text=prompt, label_set=(), labeled_samples=()
        )
        return self.chat_client.reply(bundle)


def index_with_descriptors(
    store: VectorStore,
    windows: list[SensorWindow],
    sensor_cfg: SensorConfig,
    describe_client,
    embed_cfg: ProviderConfig,
    ledger=None,
) -> None:
    """Index labeled windows with descriptor sections as the embedded texts."""
    for window in windows:
        if window.label is None:
            raise ValueError(f"window {window.segment_id} has no label")
        descriptor = describe_window(window, sensor_cfg, describe_client)
        texts = descriptor.section_texts()
        vectors = embed_batch(embed_cfg, list(texts), ledger=ledger)
        store.index_segment(
            segment_id=window.segment_id,
            texts=texts,
            vectors=vectors,
            label=window.label,
            user_id=window.subject_id,
            mode="descriptor",
        )
