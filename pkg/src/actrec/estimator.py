"""scikit-learn style facade over the retrieval pipeline.

Indexing the reference windows is `fit`; classifying new windows is
`predict`. Windows arrive either as a (n_windows, n_channels, window_len)
array plus a label vector, or as ready-made SensorWindow lists. With the
default local embedder and majority-vote client the classifiers are fully
offline and deterministic, so they compose with model selection tooling out
of the box.
"""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin

from .classify import DEFAULT_INSTRUCTION, LlmClientConfig, LlmKind, build_llm_client
from .embed import DEFAULT_DIM, ProviderConfig, ProviderKind
from .features import N_STATS, build_bundle
from .ingest import (
    ChannelSeries,
    NormalizationStats,
    SensorWindow,
    apply_zscore,
    fit_normalization,
    partition_window,
)
from .pipeline import ActivityPipeline
from .store import RetrievalWeights


def check_windows(X, y=None, channel_names=None):
    """Validate inputs and convert them to SensorWindow lists.

    Accepts a 3-D array (n, m, L) or an iterable of SensorWindow. Returns
    (windows, channel_names); y overrides window labels when given.
    """
    if isinstance(X, np.ndarray) or (
        isinstance(X, (list, tuple)) and X and not isinstance(X[0], SensorWindow)
    ):
        arr = np.asarray(X, dtype=np.float64)
        if arr.ndim != 3:
            raise ValueError(
                f"expected windows of shape (n, channels, length), got {arr.shape}"
            )
        if not np.all(np.isfinite(arr)):
            raise ValueError("windows contain non-finite values")
        labels = None if y is None else np.asarray(y, dtype=object)
        if labels is not None and labels.shape[0] != arr.shape[0]:
            raise ValueError(
                f"{labels.shape[0]} labels for {arr.shape[0]} windows"
            )
        windows = [
            SensorWindow(
                segment_id=i,
                subject_id="unknown",
                label=None if labels is None else str(labels[i]),
                samples=arr[i],
            )
            for i in range(arr.shape[0])
        ]
    else:
        windows = list(X)
        if not windows:
            raise ValueError("no windows given")
        if y is not None:
            labels = np.asarray(y, dtype=object)
            if labels.shape[0] != len(windows):
                raise ValueError(f"{labels.shape[0]} labels for {len(windows)} windows")
            windows = [
                SensorWindow(
                    segment_id=w.segment_id,
                    subject_id=w.subject_id,
                    label=str(labels[i]),
                    samples=w.samples,
                    source_role=w.source_role,
                )
                for i, w in enumerate(windows)
            ]
        shapes = {w.samples.shape for w in windows}
        if len({s[0] for s in shapes}) != 1:
            raise ValueError("windows disagree on channel count")
    m = windows[0].n_channels
    if channel_names is None:
        channel_names = tuple(f"ch{c}" for c in range(m))
    else:
        channel_names = tuple(channel_names)
        if len(channel_names) != m:
            raise ValueError(
                f"{len(channel_names)} channel names for {m} channels"
            )
    return windows, channel_names


class WindowStatsTransformer(TransformerMixin, BaseEstimator):
    """Windows -> flat per-scope statistics matrix of shape (n, 4*8*m).

    Useful on its own for feeding conventional classifiers the same features
    the retrieval engine indexes.
    """

    def __init__(self, channel_names=None, normalize=True):
        self.channel_names = channel_names
        self.normalize = normalize

    def fit(self, X, y=None):
        windows, names = check_windows(X, channel_names=self.channel_names)
        self.channel_names_ = names
        if self.normalize:
            stacked = ChannelSeries(
                "*", None, np.concatenate([w.samples for w in windows], axis=1)
            )
            self.normalization_: NormalizationStats | None = fit_normalization([stacked])
        else:
            self.normalization_ = None
        return self

    def transform(self, X):
        if not hasattr(self, "channel_names_"):
            raise RuntimeError("transformer is not fitted")
        windows, _ = check_windows(X, channel_names=self.channel_names_)
        rows = []
        for w in windows:
            samples = (
                apply_zscore(w.samples, self.normalization_)
                if self.normalization_ is not None
                else w.samples
            )
            pw = partition_window(
                SensorWindow(w.segment_id, w.subject_id, w.label, samples,
                             source_role=w.source_role)
            )
            bundle = build_bundle(pw, self.channel_names_)
            rows.append(np.concatenate(bundle.vectors))
        return np.vstack(rows)


class _RetrievalBase(BaseEstimator):
    """Shared fit/plumbing for the retrieval-backed classifiers."""

    def _build_pipeline(self) -> ActivityPipeline:
        raise NotImplementedError

    def fit(self, X, y=None):
        windows, names = check_windows(X, y, channel_names=self.channel_names)
        for w in windows:
            if w.label is None:
                raise ValueError("labels are required to fit (pass y)")
        self.channel_names_ = names
        self.pipeline_ = self._build_pipeline()
        self.pipeline_.index(windows)
        self.classes_ = np.array(self.pipeline_.label_set(), dtype=object)
        return self

    def _check_fitted(self):
        if not hasattr(self, "pipeline_"):
            raise RuntimeError("classifier is not fitted")


class ActivityRetrievalClassifier(ClassifierMixin, _RetrievalBase):
    """Full engine: retrieval plus an LLM (mock by default) names the label."""

    def __init__(
        self,
        channel_names=None,
        q=10,
        p=None,
        weights=(0.4, 0.2, 0.2, 0.2),
        embed_dim=DEFAULT_DIM,
        instruction=DEFAULT_INSTRUCTION,
        llm_kind="majority",
        threshold=0.75,
        descriptor_mode=False,
        normalize=True,
    ):
        self.channel_names = channel_names
        self.q = q
        self.p = p
        self.weights = weights
        self.embed_dim = embed_dim
        self.instruction = instruction
        self.llm_kind = llm_kind
        self.threshold = threshold
        self.descriptor_mode = descriptor_mode
        self.normalize = normalize

    def _build_pipeline(self) -> ActivityPipeline:
        return ActivityPipeline(
            channel_names=self.channel_names_,
            embed_cfg=ProviderConfig(
                kind=ProviderKind.LOCAL_DETERMINISTIC, d=self.embed_dim
            ),
            llm_client=build_llm_client(LlmClientConfig(kind=LlmKind(self.llm_kind))),
            weights=RetrievalWeights(tuple(self.weights)),
            q=self.q,
            p=self.p,
            instruction=self.instruction,
            threshold=self.threshold,
            descriptor_mode=self.descriptor_mode,
            normalize=self.normalize,
        )

    def predict(self, X):
        self._check_fitted()
        windows, _ = check_windows(X, channel_names=self.channel_names_)
        return np.array(
            [self.pipeline_.classify_window(w).label for w in windows], dtype=object
        )

    def retrieve(self, X):
        """Re-ranked contexts per window, for inspection."""
        self._check_fitted()
        windows, _ = check_windows(X, channel_names=self.channel_names_)
        return [self.pipeline_.retrieve(w) for w in windows]


class RetrievalVoteClassifier(ClassifierMixin, _RetrievalBase):
    """Retrieval-only baseline: threshold the fused scores, majority-vote."""

    def __init__(
        self,
        channel_names=None,
        q=10,
        p=None,
        weights=(0.4, 0.2, 0.2, 0.2),
        embed_dim=DEFAULT_DIM,
        threshold=0.75,
        normalize=True,
    ):
        self.channel_names = channel_names
        self.q = q
        self.p = p
        self.weights = weights
        self.embed_dim = embed_dim
        self.threshold = threshold
        self.normalize = normalize

    def _build_pipeline(self) -> ActivityPipeline:
        return ActivityPipeline(
            channel_names=self.channel_names_,
            embed_cfg=ProviderConfig(
                kind=ProviderKind.LOCAL_DETERMINISTIC, d=self.embed_dim
            ),
            weights=RetrievalWeights(tuple(self.weights)),
            q=self.q,
            p=self.p,
            threshold=self.threshold,
            normalize=self.normalize,
        )

    def predict(self, X):
        self._check_fitted()
        windows, _ = check_windows(X, channel_names=self.channel_names_)
        return np.array(
            [self.pipeline_.retrieval_vote(w).label for w in windows], dtype=object
        )
