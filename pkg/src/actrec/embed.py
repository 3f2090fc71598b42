"""Text-to-vector providers.

Two providers behind one call: a remote HTTP embeddings endpoint (bearer-auth
JSON API) and a local deterministic embedder so the whole engine runs offline.
All vectors are L2-normalized on receipt, which reduces cosine similarity to a
dot product downstream.
"""

import enum
import hashlib
import os
import re
import threading
import time
from dataclasses import dataclass, field

import numpy as np
import requests

from .errors import (
    AuthMissing,
    NoNumericContent,
    ProviderUnavailable,
    TextTooLong,
)

DEFAULT_DIM = 1536


class ProviderKind(enum.Enum):
    REMOTE_HTTP = "remote"
    LOCAL_DETERMINISTIC = "local"


@dataclass(frozen=True)
class ProviderConfig:
    kind: ProviderKind = ProviderKind.LOCAL_DETERMINISTIC
    d: int = DEFAULT_DIM
    batch_size: int = 64
    max_retries: int = 5
    backoff_base_ms: int = 250
    endpoint_url: str = ""
    api_key_env_var: str = ""
    model_name: str = ""
    timeout_ms: int = 30_000
    max_text_chars: int = 100_000
    max_concurrency: int = 4

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.d < 8:
            raise ValueError("embedding dimension must be >= 8")
        if self.kind is ProviderKind.REMOTE_HTTP and not self.endpoint_url:
            raise ValueError("remote provider requires endpoint_url")

    @property
    def provider_id(self) -> str:
        if self.kind is ProviderKind.REMOTE_HTTP:
            return f"remote:{self.model_name or self.endpoint_url}"
        return f"local:d{self.d}"


@dataclass(frozen=True)
class EmbeddingVector:
    values: np.ndarray
    provider_id: str

    def __post_init__(self):
        object.__setattr__(
            self, "values", np.asarray(self.values, dtype=np.float64)
        )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("embedding contains non-finite values")

    @property
    def d(self) -> int:
        return int(self.values.shape[0])


def _l2_normalize(values: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(values))
    if norm == 0.0:
        raise ValueError("cannot normalize an all-zero embedding")
    return values / norm


_NUMBER = re.compile(r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?")
_NAME_BEFORE = re.compile(r"([A-Za-z_][A-Za-z0-9_]*)[^A-Za-z0-9_]*$")

_row_cache: dict[tuple[str, int, int], np.ndarray] = {}
_row_cache_lock = threading.Lock()
_ROW_CACHE_MAX = 1 << 16


def _projection_row(name: str, position: int, d: int) -> np.ndarray:
    key = (name, position, d)
    with _row_cache_lock:
        row = _row_cache.get(key)
    if row is None:
        digest = hashlib.blake2b(
            f"{name}|{position}".encode(), digest_size=8
        ).digest()
        rng = np.random.default_rng(int.from_bytes(digest, "little"))
        row = rng.standard_normal(d)
        row.flags.writeable = False
        with _row_cache_lock:
            if len(_row_cache) >= _ROW_CACHE_MAX:
                _row_cache.clear()
            _row_cache[key] = row
    return row


def local_deterministic_embed(text: str, d: int = DEFAULT_DIM) -> EmbeddingVector:
    """Hash-based stand-in for a pre-trained text embedding model.

    Every numeric token is paired with the nearest preceding identifier (its
    feature name); each (name, position) pair selects a fixed random
    projection row, and the output is the L2-normalized sum of rows scaled by
    the token values. Equal names and numbers give equal vectors, and small
    value perturbations move the vector only slightly.
    """
    if d < 8:
        raise ValueError("embedding dimension must be >= 8")
    tokens: list[tuple[str, int, float]] = []
    for position, match in enumerate(_NUMBER.finditer(text)):
        prefix = text[: match.start()]
        name_match = _NAME_BEFORE.search(prefix[-64:])
        name = name_match.group(1) if name_match else ""
        tokens.append((name, position, float(match.group())))
    if not tokens:
        raise NoNumericContent("text contains no numeric tokens to embed")
    acc = np.zeros(d, dtype=np.float64)
    for name, position, value in tokens:
        acc += _projection_row(name, position, d) * value
    if float(np.linalg.norm(acc)) < 1e-12:
        # all-zero feature values: fall back to a pure structure fingerprint
        for name, position, _ in tokens:
            acc += _projection_row(name, position, d)
    return EmbeddingVector(_l2_normalize(acc), provider_id=f"local:d{d}")


_semaphores: dict[tuple[str, int], threading.Semaphore] = {}
_semaphores_lock = threading.Lock()


def _request_slot(cfg: ProviderConfig) -> threading.Semaphore:
    key = (cfg.endpoint_url, cfg.max_concurrency)
    with _semaphores_lock:
        sem = _semaphores.get(key)
        if sem is None:
            sem = threading.Semaphore(cfg.max_concurrency)
            _semaphores[key] = sem
    return sem


def _remote_embed_request(cfg: ProviderConfig, texts: list[str]) -> list[np.ndarray]:
    api_key = os.environ.get(cfg.api_key_env_var) if cfg.api_key_env_var else None
    if not api_key:
        raise AuthMissing(
            f"environment variable {cfg.api_key_env_var!r} is not set"
        )
    payload = {"model": cfg.model_name, "input": list(texts)}
    headers = {"Authorization": f"Bearer {api_key}"}
    last_error: Exception | None = None
    sem = _request_slot(cfg)
    for attempt in range(cfg.max_retries + 1):
        if attempt > 0:
            delay_s = cfg.backoff_base_ms * (2 ** (attempt - 1)) / 1000.0
            time.sleep(delay_s)
        try:
            with sem:
                resp = requests.post(
                    cfg.endpoint_url,
                    json=payload,
                    headers=headers,
                    timeout=cfg.timeout_ms / 1000.0,
                )
        except requests.RequestException as exc:
            last_error = exc
            continue
        if resp.status_code == 429 or resp.status_code >= 500:
            last_error = ProviderUnavailable(
                f"embedding endpoint returned HTTP {resp.status_code}"
            )
            retry_after = resp.headers.get("Retry-After")
            if retry_after is not None:
                try:
                    time.sleep(min(float(retry_after), 30.0))
                except ValueError:
                    pass
            continue
        if resp.status_code != 200:
            raise ProviderUnavailable(
                f"embedding endpoint returned HTTP {resp.status_code}: {resp.text[:200]}"
            )
        data = resp.json()["data"]
        vectors = [None] * len(texts)
        for item in data:
            vectors[int(item["index"])] = np.asarray(item["embedding"], dtype=np.float64)
        if any(v is None for v in vectors):
            raise ProviderUnavailable("embedding response missing indices")
        return vectors
    raise ProviderUnavailable(
        f"embedding endpoint failed after {cfg.max_retries} retries: {last_error}"
    )


def embed_batch(cfg: ProviderConfig, texts, ledger=None) -> list[EmbeddingVector]:
    """Embed texts in input order, batching per cfg.batch_size.

    Vectors come back L2-normalized. Remote failures are retried with
    exponential backoff before ProviderUnavailable is raised; the optional
    ledger records request counts and character volume for cost accounting.
    """
    texts = list(texts)
    if not texts:
        raise ValueError("texts must be non-empty")
    for text in texts:
        if len(text) > cfg.max_text_chars:
            raise TextTooLong(
                f"text of {len(text)} chars exceeds limit {cfg.max_text_chars}"
            )
    out: list[EmbeddingVector] = []
    for start in range(0, len(texts), cfg.batch_size):
        chunk = texts[start : start + cfg.batch_size]
        if cfg.kind is ProviderKind.LOCAL_DETERMINISTIC:
            out.extend(local_deterministic_embed(t, cfg.d) for t in chunk)
        else:
            raw = _remote_embed_request(cfg, chunk)
            for values in raw:
                out.append(
                    EmbeddingVector(_l2_normalize(values), provider_id=cfg.provider_id)
                )
        if ledger is not None:
            ledger.record_embedding(requests=1, chars=sum(len(t) for t in chunk))
    return out
