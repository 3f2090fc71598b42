"""Prompt assembly, LLM clients, and label parsing.

The system prompt carries the classification instruction plus the admissible
label set; the user prompt lists the retrieved labeled samples followed by
the unlabeled candidate. Clients are pluggable: a remote chat endpoint for
live runs, and a deterministic majority-vote mock for offline runs and tests.
"""

import enum
import os
import re
import time
from dataclasses import dataclass, field

import requests

from .errors import EmptyContexts, AuthMissing, ProviderUnavailable, Timeout
from .features import FeatureBundle, format_value
from .store import RetrievalContext

DEFAULT_INSTRUCTION = (
    "You are an expert at recognizing physical activities from wearable "
    "sensor statistics. Compare the candidate's statistical features against "
    "the labeled samples, weighing whole-window trends as well as the "
    "start/mid/end sub-segments, and decide which activity the candidate "
    "shows."
)


class ParseStatus(enum.Enum):
    EXACT = "exact"
    FUZZY = "fuzzy"
    FALLBACK = "fallback"


class LlmKind(enum.Enum):
    REMOTE_CHAT = "remote"
    MOCK_MAJORITY = "majority"


@dataclass(frozen=True)
class LlmClientConfig:
    kind: LlmKind = LlmKind.MOCK_MAJORITY
    endpoint_url: str = ""
    api_key_env_var: str = ""
    model_name: str = ""
    temperature: float = 0.0
    max_retries: int = 5
    backoff_base_ms: int = 250
    timeout_ms: int = 60_000

    def __post_init__(self):
        if self.kind is LlmKind.REMOTE_CHAT and not self.endpoint_url:
            raise ValueError("remote chat client requires endpoint_url")


@dataclass(frozen=True)
class PromptBundle:
    system_text: str
    user_text: str
    label_set: tuple[str, ...]
    # structured copy of what the user text renders, for mock clients and
    # invariant checks
    labeled_samples: tuple[tuple[str, float], ...] = ()


@dataclass(frozen=True)
class Prediction:
    label: str
    rationale: str
    raw_response: str
    parse_status: ParseStatus


@dataclass(frozen=True)
class RetrievalVote:
    """Outcome of the retrieval-only baseline."""

    label: str
    fallback: bool  # True when no context cleared the threshold
    n_used: int


def build_prompt(
    instruction: str,
    contexts: list[RetrievalContext],
    candidate: FeatureBundle,
    label_set,
) -> PromptBundle:
    """Render the system/user prompt pair for one candidate window."""
    if not contexts:
        raise EmptyContexts("cannot build a prompt without retrieved contexts")
    label_set = tuple(label_set)
    if not label_set:
        raise ValueError("label_set must be non-empty")
    if len(set(label_set)) != len(label_set):
        raise ValueError("label_set contains duplicates")

    ordered = sorted(contexts, key=lambda c: (-c.fused_score, c.segment_id))
    system_text = (
        f"{instruction}\n\n"
        f"Allowed labels: {', '.join(label_set)}.\n"
        "Answer with a line `label: <one of the allowed labels>` followed by "
        "a one-sentence rationale."
    )
    blocks = ["== LABELED SAMPLES =="]
    for rank, ctx in enumerate(ordered, start=1):
        blocks.append(f"-- sample {rank} (score={format_value(ctx.fused_score)}) --")
        blocks.append(f"LABEL: {ctx.label}")
        blocks.extend(ctx.feature_texts)
    blocks.append("== CANDIDATE ==")
    blocks.extend(candidate.texts)
    return PromptBundle(
        system_text=system_text,
        user_text="\n".join(blocks),
        label_set=label_set,
        labeled_samples=tuple((c.label, c.fused_score) for c in ordered),
    )


_LABEL_LINE = re.compile(r"^\s*label\s*:\s*(.+?)\s*$", re.IGNORECASE | re.MULTILINE)


def parse_prediction(raw_response: str, label_set) -> tuple[str, ParseStatus]:
    """Total parser: exact `label:` line, else unique whole-word mention,
    else the lexicographically smallest label as a flagged fallback."""
    label_set = tuple(label_set)
    by_lower = {label.lower(): label for label in label_set}
    for match in _LABEL_LINE.finditer(raw_response):
        candidate = match.group(1).strip().lower()
        if candidate in by_lower:
            return by_lower[candidate], ParseStatus.EXACT
    mentioned = [
        label
        for label in label_set
        if re.search(rf"\b{re.escape(label)}\b", raw_response, re.IGNORECASE)
    ]
    if len(mentioned) == 1:
        return mentioned[0], ParseStatus.FUZZY
    return min(label_set), ParseStatus.FALLBACK


def _majority(pairs) -> str:
    """Modal label; ties broken by larger summed score, then lexicographic."""
    tally: dict[str, list[float]] = {}
    for label, score in pairs:
        tally.setdefault(label, []).append(float(score))
    ranked = sorted(
        tally.items(), key=lambda kv: (-len(kv[1]), -sum(kv[1]), kv[0])
    )
    return ranked[0][0]


class MockMajorityClient:
    """Deterministic stand-in for a chat model: answers with the modal label
    among the prompt's labeled samples."""

    def __init__(self, ledger=None):
        self.ledger = ledger

    def reply(self, prompt: PromptBundle) -> str:
        if not prompt.labeled_samples:
            raise EmptyContexts("majority mock needs labeled samples in the prompt")
        winner = _majority(prompt.labeled_samples)
        text = (
            f"label: {winner}\n"
            "The candidate's statistics align with the majority of the "
            "retrieved samples."
        )
        if self.ledger is not None:
            self.ledger.record_llm(
                requests=1,
                chars_in=len(prompt.system_text) + len(prompt.user_text),
                chars_out=len(text),
            )
        return text


class RemoteChatClient:
    """Bearer-auth JSON chat endpoint with retry/backoff."""

    def __init__(self, cfg: LlmClientConfig, ledger=None):
        self.cfg = cfg
        self.ledger = ledger

    def reply(self, prompt: PromptBundle) -> str:
        cfg = self.cfg
        api_key = os.environ.get(cfg.api_key_env_var) if cfg.api_key_env_var else None
        if not api_key:
            raise AuthMissing(f"environment variable {cfg.api_key_env_var!r} is not set")
        payload = {
            "model": cfg.model_name,
            "temperature": cfg.temperature,
            "messages": [
                {"role": "system", "content": prompt.system_text},
                {"role": "user", "content": prompt.user_text},
            ],
        }
        headers = {"Authorization": f"Bearer {api_key}"}
        last_error: Exception | None = None
        timed_out = False
        for attempt in range(cfg.max_retries + 1):
            if attempt > 0:
                time.sleep(cfg.backoff_base_ms * (2 ** (attempt - 1)) / 1000.0)
            try:
                resp = requests.post(
                    cfg.endpoint_url,
                    json=payload,
                    headers=headers,
                    timeout=cfg.timeout_ms / 1000.0,
                )
            except requests.Timeout as exc:
                last_error, timed_out = exc, True
                continue
            except requests.RequestException as exc:
                last_error = exc
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last_error = ProviderUnavailable(f"chat endpoint returned HTTP {resp.status_code}")
                continue
            if resp.status_code != 200:
                raise ProviderUnavailable(
                    f"chat endpoint returned HTTP {resp.status_code}: {resp.text[:200]}"
                )
            text = resp.json()["choices"][0]["message"]["content"]
            if self.ledger is not None:
                self.ledger.record_llm(
                    requests=1,
                    chars_in=len(prompt.system_text) + len(prompt.user_text),
                    chars_out=len(text),
                )
            return text
        if timed_out:
            raise Timeout(f"chat endpoint timed out after {cfg.max_retries} retries")
        raise ProviderUnavailable(
            f"chat endpoint failed after {cfg.max_retries} retries: {last_error}"
        )


def build_llm_client(cfg: LlmClientConfig, ledger=None):
    if cfg.kind is LlmKind.MOCK_MAJORITY:
        return MockMajorityClient(ledger=ledger)
    return RemoteChatClient(cfg, ledger=ledger)


def llm_classify(client, prompt: PromptBundle) -> Prediction:
    """One chat call plus label parsing."""
    raw = client.reply(prompt)
    label, status = parse_prediction(raw, prompt.label_set)
    rationale = ""
    if status is ParseStatus.EXACT:
        match = _LABEL_LINE.search(raw)
        rationale = (raw[: match.start()] + raw[match.end() :]).strip()
    return Prediction(
        label=label, rationale=rationale, raw_response=raw, parse_status=status
    )


def retrieve_only_classify(
    contexts: list[RetrievalContext], threshold: float
) -> RetrievalVote:
    """Majority vote over contexts whose fused score clears the threshold.

    When nothing clears it, vote over all contexts and flag the fallback.
    """
    if not contexts:
        raise EmptyContexts("no contexts to vote over")
    if not -1.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [-1, 1]")
    kept = [c for c in contexts if c.fused_score >= threshold]
    fallback = not kept
    if fallback:
        kept = list(contexts)
    label = _majority((c.label, c.fused_score) for c in kept)
    return RetrievalVote(label=label, fallback=fallback, n_used=len(kept))
