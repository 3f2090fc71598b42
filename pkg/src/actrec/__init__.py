"""Training-free human activity recognition by multi-vector retrieval.

Sensor windows become statistical text descriptors, four embeddings per
window (whole window plus start/mid/end thirds) live in an exact-search
vector store, and new windows are classified by weighted re-ranked retrieval
plus a pluggable LLM call — or a pure retrieval majority vote.
"""

from .classify import (
    DEFAULT_INSTRUCTION,
    LlmClientConfig,
    LlmKind,
    MockMajorityClient,
    ParseStatus,
    Prediction,
    PromptBundle,
    RemoteChatClient,
    RetrievalVote,
    build_llm_client,
    build_prompt,
    llm_classify,
    parse_prediction,
    retrieve_only_classify,
)
from .embed import (
    DEFAULT_DIM,
    EmbeddingVector,
    ProviderConfig,
    ProviderKind,
    embed_batch,
    local_deterministic_embed,
)
from .errors import ActrecError
from .estimator import (
    ActivityRetrievalClassifier,
    RetrievalVoteClassifier,
    WindowStatsTransformer,
    check_windows,
)
from .evaluation import (
    CostLedger,
    CostRates,
    EvalReport,
    confusion,
    cost_report,
    evaluate_predictions,
    f1_scores,
    run_benchmark,
)
from .features import (
    FeatureBundle,
    StatVector,
    build_bundle,
    compute_stats,
    count_peaks,
    serialize_scope,
)
from .ingest import (
    DatasetSchema,
    NormalizationStats,
    PartitionedWindow,
    SensorWindow,
    SourceRole,
    apply_zscore,
    fit_normalization,
    load_dataset,
    partition_window,
    slide_windows,
    synth_dataset,
)
from .pipeline import ActivityPipeline
from .store import (
    EmbeddingRecord,
    RetrievalContext,
    RetrievalWeights,
    VectorStore,
    load_store,
    save_store,
)

__version__ = "0.1.0"
