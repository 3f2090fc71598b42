"""End-to-end engine: index labeled windows, classify new ones.

Indexing plays the role of training: windows are normalized, partitioned,
described (template statistics or generated narratives), embedded, and stored.
Classification embeds the query window the same way, retrieves and re-ranks
neighbors per sub-segment, and asks the configured LLM client for the label.
"""

from dataclasses import dataclass, replace

import numpy as np

from . import describe as describe_mod
from .classify import (
    DEFAULT_INSTRUCTION,
    LlmClientConfig,
    Prediction,
    PromptBundle,
    RetrievalVote,
    build_llm_client,
    build_prompt,
    llm_classify,
    retrieve_only_classify,
)
from .embed import ProviderConfig, embed_batch
from .errors import ConfigInvalid
from .features import FeatureBundle, build_bundle
from .ingest import (
    ChannelSeries,
    NormalizationStats,
    SensorWindow,
    apply_zscore,
    fit_normalization,
    partition_window,
)
from .store import (
    DEFAULT_TOP_Q,
    RetrievalContext,
    RetrievalWeights,
    VectorStore,
    default_pool_size,
)

DEFAULT_THRESHOLD = 0.75


class ActivityPipeline:
    """Holds the fitted normalization, the vector store, and the clients."""

    def __init__(
        self,
        channel_names,
        embed_cfg: ProviderConfig | None = None,
        llm_cfg: LlmClientConfig | None = None,
        llm_client=None,
        weights: RetrievalWeights | None = None,
        q: int = DEFAULT_TOP_Q,
        p: int | None = None,
        instruction: str = DEFAULT_INSTRUCTION,
        threshold: float = DEFAULT_THRESHOLD,
        descriptor_mode: bool = False,
        sensor_cfg: "describe_mod.SensorConfig | None" = None,
        describe_client=None,
        rescore_missing: bool = False,
        normalize: bool = True,
        ledger=None,
    ):
        self.channel_names = tuple(channel_names)
        self.embed_cfg = embed_cfg or ProviderConfig()
        self.ledger = ledger
        if llm_client is None:
            llm_client = build_llm_client(llm_cfg or LlmClientConfig(), ledger=ledger)
        self.llm_client = llm_client
        self.weights = weights or RetrievalWeights()
        if q < 1:
            raise ConfigInvalid("q must be >= 1")
        self.q = q
        self.p = p if p is not None else default_pool_size(q)
        self.instruction = instruction
        self.threshold = threshold
        self.descriptor_mode = descriptor_mode
        self.rescore_missing = rescore_missing
        self.normalize = normalize
        if descriptor_mode:
            if sensor_cfg is None:
                sensor_cfg = describe_mod.SensorConfig.generic(
                    self.channel_names, sampling_rate_hz=1.0
                )
            if describe_client is None:
                describe_client = describe_mod.MockDescriptorClient()
        self.sensor_cfg = sensor_cfg
        self.describe_client = describe_client

        self.normalization: NormalizationStats | None = None
        self.store: VectorStore | None = None

    # --- indexing ----------------------------------------------------------

    def index(self, windows: list[SensorWindow]) -> VectorStore:
        """Fit normalization on the given windows and index all of them."""
        if not windows:
            raise ConfigInvalid("cannot index an empty window list")
        for w in windows:
            if w.label is None:
                raise ConfigInvalid(f"indexing window {w.segment_id} has no label")
            if w.n_channels != len(self.channel_names):
                raise ConfigInvalid(
                    f"window {w.segment_id} has {w.n_channels} channels, "
                    f"schema names {len(self.channel_names)}"
                )
        if self.normalize:
            stacked = ChannelSeries(
                subject_id="*",
                label=None,
                values=np.concatenate([w.samples for w in windows], axis=1),
            )
            self.normalization = fit_normalization([stacked])
        mode = "descriptor" if self.descriptor_mode else "template"
        self.store = VectorStore(d=self.embed_cfg.d, mode=mode)

        all_texts: list[str] = []
        per_window: list[tuple[SensorWindow, tuple[str, ...]]] = []
        for w in windows:
            texts = self.window_texts(w)
            per_window.append((w, texts))
            all_texts.extend(texts)
        vectors = embed_batch(self.embed_cfg, all_texts, ledger=self.ledger)
        for i, (w, texts) in enumerate(per_window):
            self.store.index_segment(
                segment_id=w.segment_id,
                texts=texts,
                vectors=vectors[4 * i : 4 * i + 4],
                label=w.label,
                user_id=w.subject_id,
                mode=mode,
            )
        return self.store

    # --- per-window plumbing ------------------------------------------------

    def normalized_window(self, window: SensorWindow) -> SensorWindow:
        if self.normalization is None:
            return window
        return replace(window, samples=apply_zscore(window.samples, self.normalization))

    def bundle_for(self, window: SensorWindow) -> FeatureBundle:
        pw = partition_window(self.normalized_window(window))
        return build_bundle(pw, self.channel_names)

    def window_texts(self, window: SensorWindow) -> tuple[str, ...]:
        """The four texts that get embedded for a window (both sides of
        retrieval use the same representation)."""
        if self.descriptor_mode:
            descriptor = describe_mod.describe_window(
                self.normalized_window(window), self.sensor_cfg, self.describe_client
            )
            return descriptor.section_texts()
        return self.bundle_for(window).texts

    # --- retrieval and classification ---------------------------------------

    def _require_store(self) -> VectorStore:
        if self.store is None or self.store.n_segments == 0:
            raise ConfigInvalid("pipeline has no indexed store; call index() first")
        return self.store

    def retrieve(self, window: SensorWindow, q: int | None = None) -> list[RetrievalContext]:
        store = self._require_store()
        q = q if q is not None else self.q
        q = min(q, store.n_segments)
        p = min(self.p, store.n_segments)
        texts = self.window_texts(window)
        queries = embed_batch(self.embed_cfg, list(texts), ledger=self.ledger)
        lists = {k: store.ann_search(queries[k], k=k, p=p) for k in range(4)}
        return store.weighted_rerank(
            lists,
            self.weights,
            q=q,
            queries={k: queries[k] for k in range(4)},
            rescore_missing=self.rescore_missing,
        )

    def label_set(self) -> tuple[str, ...]:
        return tuple(self._require_store().labels())

    def prompt_for(
        self,
        window: SensorWindow,
        instruction: str | None = None,
        label_set=None,
        contexts: list[RetrievalContext] | None = None,
    ) -> PromptBundle:
        if contexts is None:
            contexts = self.retrieve(window)
        return build_prompt(
            instruction if instruction is not None else self.instruction,
            contexts,
            self.bundle_for(window),
            label_set if label_set is not None else self.label_set(),
        )

    def classify_window(
        self,
        window: SensorWindow,
        instruction: str | None = None,
        label_set=None,
    ) -> Prediction:
        prompt = self.prompt_for(window, instruction=instruction, label_set=label_set)
        return llm_classify(self.llm_client, prompt)

    def retrieval_vote(
        self, window: SensorWindow, threshold: float | None = None
    ) -> RetrievalVote:
        contexts = self.retrieve(window)
        return retrieve_only_classify(
            contexts, self.threshold if threshold is None else threshold
        )
