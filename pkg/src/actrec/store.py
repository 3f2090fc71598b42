"""Multi-vector index over training segments.

Each indexed segment contributes four records (sub-segment ids 0..3 for the
Full/Start/Mid/End scope vectors) sharing label/user metadata. Search is an
exact exhaustive cosine scan per sub-segment id; at desk scale this satisfies
the nearest-neighbor contract without approximation. Re-ranking fuses the
per-sub-segment scores with convex weights into one ranked context set.
"""

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

from .embed import EmbeddingVector
from .errors import (
    CorruptStore,
    DimensionMismatch,
    DuplicateSegment,
    EmptyIndex,
    ModeMismatch,
    NoCandidates,
    StoreIoError,
)

N_SUBSEGMENTS = 4
DEFAULT_WEIGHTS = (0.4, 0.2, 0.2, 0.2)
DEFAULT_TOP_Q = 10


def default_pool_size(q: int) -> int:
    """Per-sub-segment candidate pool: 3q keeps the union rich, work bounded."""
    return 3 * q


@dataclass(frozen=True)
class RetrievalWeights:
    values: tuple[float, float, float, float] = DEFAULT_WEIGHTS

    def __post_init__(self):
        values = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", values)
        if len(values) != N_SUBSEGMENTS:
            raise ValueError(f"exactly {N_SUBSEGMENTS} weights required")
        if any(v < 0 for v in values):
            raise ValueError("weights must be non-negative")
        if abs(sum(values) - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1, got {sum(values)!r}")


@dataclass(frozen=True)
class EmbeddingRecord:
    segment_id: int
    subsegment_id: int
    label: str
    user_id: str
    feature_text: str
    vector: EmbeddingVector


@dataclass(frozen=True)
class RetrievalContext:
    """One re-ranked training segment: the evidence handed to the classifier."""

    segment_id: int
    label: str
    user_id: str
    per_k_scores: dict[int, float]
    fused_score: float
    feature_texts: tuple[str, str, str, str]


@dataclass
class _SegmentMeta:
    label: str
    user_id: str
    feature_texts: list[str | None]
    provider_ids: list[str | None]


class VectorStore:
    """In-memory exact-search index with binary persistence.

    Concurrency contract: any number of concurrent readers, or one writer.
    """

    def __init__(self, d: int, mode: str = "template"):
        if d < 1:
            raise ValueError("dimension must be positive")
        if mode not in ("template", "descriptor"):
            raise ValueError(f"unknown store mode {mode!r}")
        self.d = int(d)
        self.mode = mode
        self._meta: dict[int, _SegmentMeta] = {}
        self._ids: list[list[int]] = [[] for _ in range(N_SUBSEGMENTS)]
        self._vecs: list[list[np.ndarray]] = [[] for _ in range(N_SUBSEGMENTS)]

    def __len__(self) -> int:
        return sum(len(ids) for ids in self._ids)

    @property
    def n_segments(self) -> int:
        return len(self._meta)

    def labels(self) -> list[str]:
        return sorted({meta.label for meta in self._meta.values()})

    def segment_ids(self) -> list[int]:
        return sorted(self._meta)

    def __contains__(self, segment_id: int) -> bool:
        return segment_id in self._meta

    @staticmethod
    def _canonical(values: np.ndarray) -> np.ndarray:
        # round-trip through the persisted float32 precision once, up front,
        # so saved and in-memory stores are bit-identical
        return np.asarray(values, dtype=np.float32).astype(np.float64)

    def index_segment(self, segment_id: int, texts, vectors, label: str, user_id: str,
                      mode: str = "template") -> None:
        """Insert the four scope records of one segment atomically."""
        if mode != self.mode:
            raise ModeMismatch(
                f"store is {self.mode}-mode; refusing {mode}-mode records"
            )
        if segment_id in self._meta:
            raise DuplicateSegment(f"segment {segment_id} already indexed")
        texts = tuple(texts)
        vectors = tuple(vectors)
        if len(texts) != N_SUBSEGMENTS or len(vectors) != N_SUBSEGMENTS:
            raise ValueError(f"expected {N_SUBSEGMENTS} texts and vectors")
        for vec in vectors:
            if vec.d != self.d:
                raise DimensionMismatch(
                    f"vector of dimension {vec.d} in a d={self.d} store"
                )
        meta = _SegmentMeta(
            label=label,
            user_id=user_id,
            feature_texts=[t for t in texts],
            provider_ids=[v.provider_id for v in vectors],
        )
        self._meta[segment_id] = meta
        for k in range(N_SUBSEGMENTS):
            self._ids[k].append(segment_id)
            self._vecs[k].append(self._canonical(vectors[k].values))

    def ann_search(self, query, k: int, p: int) -> list[tuple[int, float]]:
        """Top-p segments by cosine score among records with sub-segment id k.

        Scores descend; ties break by ascending segment id. Vectors are
        normalized at ingestion, so the dot product is the cosine.
        """
        if not 0 <= k < N_SUBSEGMENTS:
            raise ValueError(f"sub-segment id {k} out of range")
        if p < 1:
            raise ValueError("p must be >= 1")
        ids = self._ids[k]
        if not ids:
            raise EmptyIndex(f"no records indexed for sub-segment {k}")
        q = np.asarray(
            query.values if isinstance(query, EmbeddingVector) else query,
            dtype=np.float64,
        )
        if q.shape[0] != self.d:
            raise DimensionMismatch(
                f"query of dimension {q.shape[0]} against a d={self.d} store"
            )
        scored = [
            (float(np.dot(vec, q)), sid)
            for sid, vec in zip(ids, self._vecs[k])
        ]
        scored.sort(key=lambda t: (-t[0], t[1]))
        return [(sid, score) for score, sid in scored[:p]]

    def score_pair(self, segment_id: int, k: int, query) -> float:
        """Exact cosine of one stored (segment, sub-segment) against a query."""
        idx = self._ids[k].index(segment_id)
        q = np.asarray(
            query.values if isinstance(query, EmbeddingVector) else query,
            dtype=np.float64,
        )
        return float(np.dot(self._vecs[k][idx], q))

    def weighted_rerank(
        self,
        lists: dict[int, list[tuple[int, float]]],
        weights: RetrievalWeights,
        q: int,
        queries=None,
        rescore_missing: bool = False,
    ) -> list[RetrievalContext]:
        """Fuse per-sub-segment rankings into one top-q context list.

        The candidate set is the union of segment ids across lists; each
        candidate's fused score is sum_k w_k * score_k. A candidate absent
        from some list contributes 0 for that k unless rescore_missing is
        set, in which case the exact cosine is computed from `queries`.
        """
        if q < 1:
            raise ValueError("q must be >= 1")
        per_candidate: dict[int, dict[int, float]] = {}
        for k, ranked in lists.items():
            for sid, score in ranked:
                per_candidate.setdefault(sid, {})[k] = float(score)
        if not per_candidate:
            raise NoCandidates("all ranked lists are empty")
        if rescore_missing and queries is None:
            raise ValueError("rescore_missing requires the per-k query vectors")

        w = weights.values
        fused: list[tuple[float, int, dict[int, float]]] = []
        for sid, scores in per_candidate.items():
            if rescore_missing:
                for k in range(N_SUBSEGMENTS):
                    if k not in scores and queries.get(k) is not None:
                        scores[k] = self.score_pair(sid, k, queries[k])
            total = 0.0
            for k in range(N_SUBSEGMENTS):
                total += w[k] * scores.get(k, 0.0)
            fused.append((total, sid, scores))
        fused.sort(key=lambda t: (-t[0], t[1]))

        contexts = []
        for total, sid, scores in fused[:q]:
            meta = self._meta[sid]
            contexts.append(
                RetrievalContext(
                    segment_id=sid,
                    label=meta.label,
                    user_id=meta.user_id,
                    per_k_scores=dict(sorted(scores.items())),
                    fused_score=total,
                    feature_texts=tuple(meta.feature_texts),
                )
            )
        return contexts

    def records(self):
        """Iterate records in (segment insertion, k) order."""
        for k in range(N_SUBSEGMENTS):
            for sid, vec in zip(self._ids[k], self._vecs[k]):
                meta = self._meta[sid]
                yield EmbeddingRecord(
                    segment_id=sid,
                    subsegment_id=k,
                    label=meta.label,
                    user_id=meta.user_id,
                    feature_text=meta.feature_texts[k],
                    vector=EmbeddingVector(vec, provider_id=meta.provider_ids[k]),
                )

    # --- persistence ------------------------------------------------------

    _MAGIC = b"ACTRVS01"
    _VERSION = 1
    _HEADER = struct.Struct("<8sIIBQ32s")

    def save(self, path) -> None:
        payload = bytearray()
        for record in self.records():
            payload += _pack_record(record, self.d)
        digest = hashlib.sha256(bytes(payload)).digest()
        header = self._HEADER.pack(
            self._MAGIC,
            self._VERSION,
            self.d,
            0 if self.mode == "template" else 1,
            len(self),
            digest,
        )
        try:
            with open(path, "wb") as fh:
                fh.write(header)
                fh.write(payload)
        except OSError as exc:
            raise StoreIoError(f"cannot write store to {path}: {exc}") from exc

    @classmethod
    def load(cls, path) -> "VectorStore":
        try:
            with open(path, "rb") as fh:
                blob = fh.read()
        except OSError as exc:
            raise StoreIoError(f"cannot read store from {path}: {exc}") from exc
        if len(blob) < cls._HEADER.size:
            raise CorruptStore("file shorter than the store header")
        magic, version, d, mode_flag, count, digest = cls._HEADER.unpack_from(blob)
        if magic != cls._MAGIC:
            raise CorruptStore("bad magic; not a vector store file")
        if version != cls._VERSION:
            raise CorruptStore(f"unsupported store version {version}")
        payload = blob[cls._HEADER.size :]
        if hashlib.sha256(payload).digest() != digest:
            raise CorruptStore("checksum mismatch; file truncated or damaged")
        store = cls(d=d, mode="template" if mode_flag == 0 else "descriptor")
        offset = 0
        staged: dict[int, dict] = {}
        order: list[int] = []
        for _ in range(count):
            record, offset = _unpack_record(payload, offset, d)
            entry = staged.setdefault(record.segment_id, {})
            if not entry:
                order.append(record.segment_id)
            entry[record.subsegment_id] = record
        if offset != len(payload):
            raise CorruptStore("trailing bytes after the last record")
        for sid in order:
            entry = staged[sid]
            if sorted(entry) != list(range(N_SUBSEGMENTS)):
                raise CorruptStore(
                    f"segment {sid} does not have exactly {N_SUBSEGMENTS} records"
                )
            recs = [entry[k] for k in range(N_SUBSEGMENTS)]
            store.index_segment(
                segment_id=sid,
                texts=[r.feature_text for r in recs],
                vectors=[r.vector for r in recs],
                label=recs[0].label,
                user_id=recs[0].user_id,
                mode=store.mode,
            )
        return store

    def __eq__(self, other) -> bool:
        if not isinstance(other, VectorStore):
            return NotImplemented
        if (self.d, self.mode, self.n_segments) != (other.d, other.mode, other.n_segments):
            return False
        mine = list(self.records())
        theirs = list(other.records())
        if len(mine) != len(theirs):
            return False
        key = lambda r: (r.segment_id, r.subsegment_id)
        for a, b in zip(sorted(mine, key=key), sorted(theirs, key=key)):
            if (a.segment_id, a.subsegment_id, a.label, a.user_id, a.feature_text) != (
                b.segment_id, b.subsegment_id, b.label, b.user_id, b.feature_text
            ):
                return False
            if a.vector.provider_id != b.vector.provider_id:
                return False
            if not np.array_equal(a.vector.values, b.vector.values):
                return False
        return True


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def _unpack_str(payload: bytes, offset: int) -> tuple[str, int]:
    if offset + 4 > len(payload):
        raise CorruptStore("unexpected end of file in string length")
    (length,) = struct.unpack_from("<I", payload, offset)
    offset += 4
    if offset + length > len(payload):
        raise CorruptStore("unexpected end of file in string body")
    return payload[offset : offset + length].decode("utf-8"), offset + length


def _pack_record(record: EmbeddingRecord, d: int) -> bytes:
    out = struct.pack("<QB", record.segment_id, record.subsegment_id)
    out += _pack_str(record.label)
    out += _pack_str(record.user_id)
    out += _pack_str(record.vector.provider_id)
    out += _pack_str(record.feature_text)
    out += record.vector.values.astype("<f4").tobytes()
    return out


def _unpack_record(payload: bytes, offset: int, d: int) -> tuple[EmbeddingRecord, int]:
    head = struct.Struct("<QB")
    if offset + head.size > len(payload):
        raise CorruptStore("unexpected end of file in record header")
    segment_id, k = head.unpack_from(payload, offset)
    offset += head.size
    label, offset = _unpack_str(payload, offset)
    user_id, offset = _unpack_str(payload, offset)
    provider_id, offset = _unpack_str(payload, offset)
    feature_text, offset = _unpack_str(payload, offset)
    nbytes = 4 * d
    if offset + nbytes > len(payload):
        raise CorruptStore("unexpected end of file in vector body")
    values = np.frombuffer(payload, dtype="<f4", count=d, offset=offset).astype(np.float64)
    offset += nbytes
    record = EmbeddingRecord(
        segment_id=int(segment_id),
        subsegment_id=int(k),
        label=label,
        user_id=user_id,
        feature_text=feature_text,
        vector=EmbeddingVector(values, provider_id=provider_id),
    )
    return record, offset


def save_store(store: VectorStore, path) -> None:
    store.save(path)


def load_store(path) -> VectorStore:
    return VectorStore.load(path)
