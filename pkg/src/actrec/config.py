"""Engine configuration: one YAML file wires datasets, providers, and
retrieval constants into a runnable pipeline.

Unknown keys are rejected so typos fail loudly; API keys are only ever named
via environment variables, never stored as values.
"""

import json
from dataclasses import dataclass, field

import numpy as np
import yaml

from .classify import DEFAULT_INSTRUCTION, LlmClientConfig, LlmKind, build_llm_client
from .embed import ProviderConfig, ProviderKind
from .errors import ConfigInvalid
from .evaluation import CostRates
from .ingest import DatasetSchema, NormalizationStats, load_dataset, windows_from_series
from .optimize import OptimizerConfig
from .pipeline import ActivityPipeline
from .store import RetrievalWeights, default_pool_size
from . import describe as describe_mod


def _take(section: dict, allowed: dict, where: str) -> dict:
    """Overlay `section` on `allowed` defaults, rejecting unknown keys."""
    section = dict(section or {})
    unknown = set(section) - set(allowed)
    if unknown:
        raise ConfigInvalid(f"unknown keys in {where}: {sorted(unknown)}")
    merged = dict(allowed)
    merged.update(section)
    return merged


@dataclass
class SplitConfig:
    test_fraction: float = 0.2
    validation_fraction: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigInvalid("split.test_fraction must lie in (0, 1)")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ConfigInvalid("split.validation_fraction must lie in [0, 1)")


@dataclass
class EngineConfig:
    schema: DatasetSchema
    dataset_path: str
    embed: ProviderConfig
    llm: LlmClientConfig
    optimizer: OptimizerConfig
    weights: RetrievalWeights
    q: int
    p: int
    threshold: float
    rescore_missing: bool
    descriptor_mode: bool
    instruction: str
    split: SplitConfig
    costs: CostRates
    seed: int

    def build_pipeline(self, ledger=None, descriptor_mode: bool | None = None) -> ActivityPipeline:
        descriptor = self.descriptor_mode if descriptor_mode is None else descriptor_mode
        sensor_cfg = None
        if descriptor:
            sensor_cfg = describe_mod.SensorConfig.generic(
                self.schema.channel_columns, self.schema.sampling_rate_hz
            )
        return ActivityPipeline(
            channel_names=self.schema.channel_columns,
            embed_cfg=self.embed,
            llm_client=build_llm_client(self.llm, ledger=ledger),
            weights=self.weights,
            q=self.q,
            p=self.p,
            instruction=self.instruction,
            threshold=self.threshold,
            descriptor_mode=descriptor,
            sensor_cfg=sensor_cfg,
            rescore_missing=self.rescore_missing,
            ledger=ledger,
        )

    def load_windows(self, path=None, role=None):
        from .ingest import SourceRole

        series = load_dataset(path or self.dataset_path, self.schema)
        return windows_from_series(
            series, self.schema,
            source_role=role or SourceRole.INDEXING,
        )


def load_config(path) -> EngineConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise ConfigInvalid(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigInvalid("config root must be a mapping")

    top = _take(
        raw,
        {
            "dataset": {},
            "retrieval": {},
            "embedding": {},
            "llm": {},
            "optimizer": {},
            "split": {},
            "costs": {},
            "descriptor_mode": False,
            "instruction": None,
            "seed": 0,
        },
        "config",
    )

    ds = _take(
        top["dataset"],
        {
            "path": None,
            "channel_columns": None,
            "label_column": "label",
            "subject_column": "subject",
            "sampling_rate_hz": 1.0,
            "window_len": None,
            "step": None,
        },
        "dataset",
    )
    for key in ("path", "channel_columns", "window_len", "step"):
        if ds[key] is None:
            raise ConfigInvalid(f"dataset.{key} is required")
    try:
        schema = DatasetSchema(
            channel_columns=tuple(ds["channel_columns"]),
            label_column=ds["label_column"],
            subject_column=ds["subject_column"],
            sampling_rate_hz=float(ds["sampling_rate_hz"]),
            window_len=int(ds["window_len"]),
            step=int(ds["step"]),
        )
    except ValueError as exc:
        raise ConfigInvalid(f"dataset: {exc}") from exc

    rt = _take(
        top["retrieval"],
        {
            "weights": [0.4, 0.2, 0.2, 0.2],
            "q": 10,
            "p": None,
            "threshold": 0.75,
            "rescore_missing": False,
        },
        "retrieval",
    )
    try:
        weights = RetrievalWeights(tuple(float(w) for w in rt["weights"]))
    except ValueError as exc:
        raise ConfigInvalid(f"retrieval.weights: {exc}") from exc
    q = int(rt["q"])
    if q < 1:
        raise ConfigInvalid("retrieval.q must be >= 1")
    p = int(rt["p"]) if rt["p"] is not None else default_pool_size(q)
    if p < 1:
        raise ConfigInvalid("retrieval.p must be >= 1")
    threshold = float(rt["threshold"])
    if not -1.0 <= threshold <= 1.0:
        raise ConfigInvalid("retrieval.threshold must lie in [-1, 1]")

    em = _take(
        top["embedding"],
        {
            "kind": "local",
            "d": 1536,
            "batch_size": 64,
            "max_retries": 5,
            "backoff_base_ms": 250,
            "endpoint_url": "",
            "api_key_env_var": "",
            "model_name": "",
            "timeout_ms": 30_000,
            "max_text_chars": 100_000,
            "max_concurrency": 4,
        },
        "embedding",
    )
    try:
        embed_cfg = ProviderConfig(
            kind=ProviderKind.REMOTE_HTTP if em["kind"] == "remote" else ProviderKind.LOCAL_DETERMINISTIC,
            d=int(em["d"]),
            batch_size=int(em["batch_size"]),
            max_retries=int(em["max_retries"]),
            backoff_base_ms=int(em["backoff_base_ms"]),
            endpoint_url=em["endpoint_url"],
            api_key_env_var=em["api_key_env_var"],
            model_name=em["model_name"],
            timeout_ms=int(em["timeout_ms"]),
            max_text_chars=int(em["max_text_chars"]),
            max_concurrency=int(em["max_concurrency"]),
        )
    except ValueError as exc:
        raise ConfigInvalid(f"embedding: {exc}") from exc
    if em["kind"] not in ("local", "remote"):
        raise ConfigInvalid(f"embedding.kind must be local or remote, got {em['kind']!r}")

    lm = _take(
        top["llm"],
        {
            "kind": "majority",
            "endpoint_url": "",
            "api_key_env_var": "",
            "model_name": "",
            "temperature": 0.0,
            "max_retries": 5,
            "backoff_base_ms": 250,
            "timeout_ms": 60_000,
        },
        "llm",
    )
    if lm["kind"] not in ("majority", "remote"):
        raise ConfigInvalid(f"llm.kind must be majority or remote, got {lm['kind']!r}")
    try:
        llm_cfg = LlmClientConfig(
            kind=LlmKind.REMOTE_CHAT if lm["kind"] == "remote" else LlmKind.MOCK_MAJORITY,
            endpoint_url=lm["endpoint_url"],
            api_key_env_var=lm["api_key_env_var"],
            model_name=lm["model_name"],
            temperature=float(lm["temperature"]),
            max_retries=int(lm["max_retries"]),
            backoff_base_ms=int(lm["backoff_base_ms"]),
            timeout_ms=int(lm["timeout_ms"]),
        )
    except ValueError as exc:
        raise ConfigInvalid(f"llm: {exc}") from exc

    op = _take(
        top["optimizer"],
        {
            "m": 20,
            "r": 5,
            "max_iterations": 10,
            "patience": 3,
            "exemplar_count": 2,
            "subsample_fraction": 1.0,
        },
        "optimizer",
    )
    try:
        optimizer_cfg = OptimizerConfig(
            m=int(op["m"]),
            r=int(op["r"]),
            max_iterations=int(op["max_iterations"]),
            patience=int(op["patience"]),
            exemplar_count=int(op["exemplar_count"]),
            seed=int(top["seed"]),
            subsample_fraction=float(op["subsample_fraction"]),
        )
    except ValueError as exc:
        raise ConfigInvalid(f"optimizer: {exc}") from exc

    sp = _take(top["split"], {"test_fraction": 0.2, "validation_fraction": 0.0}, "split")
    split = SplitConfig(
        test_fraction=float(sp["test_fraction"]),
        validation_fraction=float(sp["validation_fraction"]),
    )

    co = _take(
        top["costs"],
        {"embedding_per_1k": 0.0, "llm_input_per_1k": 0.0, "llm_output_per_1k": 0.0},
        "costs",
    )
    costs = CostRates(
        embedding_per_1k=float(co["embedding_per_1k"]),
        llm_input_per_1k=float(co["llm_input_per_1k"]),
        llm_output_per_1k=float(co["llm_output_per_1k"]),
    )

    return EngineConfig(
        schema=schema,
        dataset_path=str(ds["path"]),
        embed=embed_cfg,
        llm=llm_cfg,
        optimizer=optimizer_cfg,
        weights=weights,
        q=q,
        p=p,
        threshold=threshold,
        rescore_missing=bool(rt["rescore_missing"]),
        descriptor_mode=bool(top["descriptor_mode"]),
        instruction=top["instruction"] or DEFAULT_INSTRUCTION,
        split=split,
        costs=costs,
        seed=int(top["seed"]),
    )


def split_windows(windows, test_fraction: float, validation_fraction: float, seed: int):
    """Seeded per-class split into (indexing, validation, test) lists."""
    by_class: dict[str, list] = {}
    for w in windows:
        by_class.setdefault(w.label, []).append(w)
    rng = np.random.default_rng(seed)
    indexing, validation, test = [], [], []
    for label in sorted(by_class):
        group = by_class[label]
        n = len(group)
        order = rng.permutation(n)
        n_test = max(1, int(round(test_fraction * n))) if n > 1 else 0
        n_val = int(round(validation_fraction * n))
        for pos, idx in enumerate(order):
            if pos < n_test:
                test.append(group[idx])
            elif pos < n_test + n_val:
                validation.append(group[idx])
            else:
                indexing.append(group[idx])
    key = lambda w: w.segment_id
    return sorted(indexing, key=key), sorted(validation, key=key), sorted(test, key=key)


def save_normalization_sidecar(path, stats: NormalizationStats | None, config: EngineConfig) -> None:
    """Metadata that a saved store needs at query time."""
    payload = {
        "channel_names": list(config.schema.channel_columns),
        "d": config.embed.d,
        "descriptor_mode": config.descriptor_mode,
        "normalization": None
        if stats is None
        else {"mean": stats.mean.tolist(), "std": stats.std.tolist()},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)


def load_normalization_sidecar(path) -> tuple[NormalizationStats | None, dict]:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    stats = None
    if payload.get("normalization"):
        stats = NormalizationStats(
            mean=np.asarray(payload["normalization"]["mean"]),
            std=np.asarray(payload["normalization"]["std"]),
        )
    return stats, payload
