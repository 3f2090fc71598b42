"""Metrics, benchmark orchestration, and cost accounting.

Scoring conventions: precision/recall/F1 treat 0/0 as 0; macro-F1 averages
all classes unweighted, weighted-F1 weights by true support (so empty classes
drop out). Token counts are estimated as ceil(chars / 4) and clearly labeled
as estimates.
"""

import json
import math
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigInvalid, LabelOutOfSet, LengthMismatch
from .ingest import SensorWindow
from .pipeline import ActivityPipeline


def confusion(true_labels, predicted_labels, label_set) -> np.ndarray:
    """counts[i][j] = how often label_set[i] was predicted as label_set[j]."""
    true_labels = list(true_labels)
    predicted_labels = list(predicted_labels)
    if len(true_labels) != len(predicted_labels):
        raise LengthMismatch(
            f"{len(true_labels)} true vs {len(predicted_labels)} predicted labels"
        )
    label_set = list(label_set)
    index = {label: i for i, label in enumerate(label_set)}
    matrix = np.zeros((len(label_set), len(label_set)), dtype=np.int64)
    for t, p in zip(true_labels, predicted_labels):
        if t not in index:
            raise LabelOutOfSet(f"true label {t!r} not in label set")
        if p not in index:
            raise LabelOutOfSet(f"predicted label {p!r} not in label set")
        matrix[index[t], index[p]] += 1
    return matrix


@dataclass(frozen=True)
class ClassScores:
    precision: float
    recall: float
    f1: float
    support: int


def f1_scores(matrix: np.ndarray) -> tuple[float, float, list[ClassScores]]:
    """(macro_f1, weighted_f1, per-class scores) from a confusion matrix."""
    matrix = np.asarray(matrix)
    if matrix.size == 0:
        raise ValueError("confusion matrix is empty")
    n = matrix.shape[0]
    per_class = []
    for i in range(n):
        tp = float(matrix[i, i])
        fp = float(matrix[:, i].sum() - matrix[i, i])
        fn = float(matrix[i, :].sum() - matrix[i, i])
        precision = tp / (tp + fp) if tp + fp > 0 else 0.0
        recall = tp / (tp + fn) if tp + fn > 0 else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        per_class.append(
            ClassScores(precision=precision, recall=recall, f1=f1, support=int(matrix[i, :].sum()))
        )
    macro = sum(c.f1 for c in per_class) / n
    total_support = sum(c.support for c in per_class)
    weighted = (
        sum(c.f1 * c.support for c in per_class) / total_support
        if total_support > 0
        else 0.0
    )
    return macro, weighted, per_class


def accuracy_from_confusion(matrix: np.ndarray) -> float:
    matrix = np.asarray(matrix)
    total = matrix.sum()
    return float(matrix.trace() / total) if total > 0 else 0.0


# --- cost accounting -------------------------------------------------------

def estimate_tokens(chars: int) -> int:
    return math.ceil(chars / 4)


@dataclass(frozen=True)
class CostRates:
    """USD per 1,000 estimated tokens; local/mock providers default to 0."""

    embedding_per_1k: float = 0.0
    llm_input_per_1k: float = 0.0
    llm_output_per_1k: float = 0.0


class CostLedger:
    """Append-only request log; totals are always replayed from the entries."""

    def __init__(self):
        self._entries: list[dict] = []
        self._lock = threading.Lock()

    def record_embedding(self, requests: int, chars: int) -> None:
        with self._lock:
            self._entries.append(
                {"kind": "embedding", "requests": requests, "chars_in": chars, "chars_out": 0}
            )

    def record_llm(self, requests: int, chars_in: int, chars_out: int) -> None:
        with self._lock:
            self._entries.append(
                {"kind": "llm", "requests": requests, "chars_in": chars_in, "chars_out": chars_out}
            )

    def entries(self) -> list[dict]:
        with self._lock:
            return [dict(e) for e in self._entries]

    def totals(self) -> dict:
        out = {
            "embedding": {"requests": 0, "chars": 0},
            "llm": {"requests": 0, "chars_in": 0, "chars_out": 0},
        }
        for entry in self.entries():
            if entry["kind"] == "embedding":
                out["embedding"]["requests"] += entry["requests"]
                out["embedding"]["chars"] += entry["chars_in"]
            else:
                out["llm"]["requests"] += entry["requests"]
                out["llm"]["chars_in"] += entry["chars_in"]
                out["llm"]["chars_out"] += entry["chars_out"]
        return out

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for entry in self.entries():
                fh.write(json.dumps(entry, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "CostLedger":
        ledger = cls()
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    ledger._entries.append(json.loads(line))
        return ledger


def cost_report(ledger: CostLedger, rates: CostRates | None = None, n_samples: int | None = None) -> dict:
    """Totals plus per-sample amortization, replayed from the request log."""
    rates = rates or CostRates()
    totals = ledger.totals()
    embed_tokens = estimate_tokens(totals["embedding"]["chars"])
    llm_in_tokens = estimate_tokens(totals["llm"]["chars_in"])
    llm_out_tokens = estimate_tokens(totals["llm"]["chars_out"])
    embed_cost = embed_tokens / 1000.0 * rates.embedding_per_1k
    llm_cost = (
        llm_in_tokens / 1000.0 * rates.llm_input_per_1k
        + llm_out_tokens / 1000.0 * rates.llm_output_per_1k
    )
    report = {
        "embedding": {
            **totals["embedding"],
            "tokens_est": embed_tokens,
            "cost_usd": round(embed_cost, 6),
        },
        "llm": {
            **totals["llm"],
            "tokens_in_est": llm_in_tokens,
            "tokens_out_est": llm_out_tokens,
            "cost_usd": round(llm_cost, 6),
        },
        "total_usd": round(embed_cost + llm_cost, 6),
    }
    if n_samples:
        report["n_samples"] = n_samples
        report["per_sample_usd"] = round((embed_cost + llm_cost) / n_samples, 6)
    return report


def cost_report_text(report: dict) -> str:
    lines = [
        "cost summary (token counts estimated as ceil(chars/4))",
        f"  embedding: {report['embedding']['requests']} requests, "
        f"{report['embedding']['chars']} chars, "
        f"~{report['embedding']['tokens_est']} tokens, "
        f"${report['embedding']['cost_usd']:.6f}",
        f"  llm: {report['llm']['requests']} requests, "
        f"{report['llm']['chars_in']}+{report['llm']['chars_out']} chars, "
        f"~{report['llm']['tokens_in_est']}+{report['llm']['tokens_out_est']} tokens, "
        f"${report['llm']['cost_usd']:.6f}",
        f"  total: ${report['total_usd']:.6f}",
    ]
    if "per_sample_usd" in report:
        lines.append(
            f"  per sample ({report['n_samples']}): ${report['per_sample_usd']:.6f}"
        )
    return "\n".join(lines)


# --- benchmark runner -------------------------------------------------------

@dataclass
class EvalReport:
    accuracy: float
    macro_f1: float
    weighted_f1: float
    per_class: dict[str, ClassScores]
    label_set: tuple[str, ...]
    matrix: np.ndarray
    n_samples: int
    n_failed: int
    failures: list[dict]
    runtime_s: float
    cost: dict | None = None

    def to_dict(self, omit_runtime: bool = False) -> dict:
        out = {
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "weighted_f1": self.weighted_f1,
            "per_class": {
                label: {
                    "precision": s.precision,
                    "recall": s.recall,
                    "f1": s.f1,
                    "support": s.support,
                }
                for label, s in self.per_class.items()
            },
            "label_set": list(self.label_set),
            "confusion": self.matrix.tolist(),
            "n_samples": self.n_samples,
            "n_failed": self.n_failed,
            "failures": self.failures,
            "cost": self.cost,
        }
        if not omit_runtime:
            out["runtime_s"] = self.runtime_s
        return out

    def to_json(self, omit_runtime: bool = False) -> str:
        return json.dumps(self.to_dict(omit_runtime=omit_runtime), indent=2, sort_keys=True)

    def to_text(self) -> str:
        width = max((len(l) for l in self.label_set), default=5)
        lines = [
            f"samples: {self.n_samples}  failed: {self.n_failed}  "
            f"runtime: {self.runtime_s:.2f}s",
            f"accuracy: {self.accuracy:.4f}  macro-F1: {self.macro_f1:.4f}  "
            f"weighted-F1: {self.weighted_f1:.4f}",
            "per class:",
        ]
        for label, s in self.per_class.items():
            lines.append(
                f"  {label:<{width}}  P={s.precision:.4f} R={s.recall:.4f} "
                f"F1={s.f1:.4f} n={s.support}"
            )
        return "\n".join(lines)

    def confusion_csv(self) -> str:
        rows = ["true\\pred," + ",".join(self.label_set)]
        for i, label in enumerate(self.label_set):
            rows.append(label + "," + ",".join(str(int(v)) for v in self.matrix[i]))
        return "\n".join(rows) + "\n"


def evaluate_predictions(true_labels, predicted_labels, label_set=None) -> EvalReport:
    """Assemble a report from already-collected predictions."""
    if label_set is None:
        label_set = sorted(set(true_labels) | set(predicted_labels))
    label_set = tuple(label_set)
    matrix = confusion(true_labels, predicted_labels, label_set)
    macro, weighted, per_class = f1_scores(matrix)
    return EvalReport(
        accuracy=accuracy_from_confusion(matrix),
        macro_f1=macro,
        weighted_f1=weighted,
        per_class={label: s for label, s in zip(label_set, per_class)},
        label_set=label_set,
        matrix=matrix,
        n_samples=len(list(true_labels)),
        n_failed=0,
        failures=[],
        runtime_s=0.0,
    )


def run_benchmark(
    pipeline: ActivityPipeline,
    indexing_windows: list[SensorWindow],
    test_windows: list[SensorWindow],
    rates: CostRates | None = None,
    jobs: int = 1,
    retrieval_only: bool = False,
    threshold: float | None = None,
) -> EvalReport:
    """Index, classify every test window, and assemble the report.

    Per-window failures are recorded and skipped rather than aborting the
    sweep; they show up in the report as n_failed plus a failure list.
    """
    if not indexing_windows:
        raise ConfigInvalid("indexing windows must be non-empty")
    if not test_windows:
        raise ConfigInvalid("test windows must be non-empty")
    for w in test_windows:
        if w.label is None:
            raise ConfigInvalid(f"test window {w.segment_id} has no true label")
    started = time.perf_counter()
    pipeline.index(indexing_windows)

    def classify_one(window: SensorWindow):
        if retrieval_only:
            vote = pipeline.retrieval_vote(window, threshold=threshold)
            return vote.label
        return pipeline.classify_window(window).label

    results: list[str | None] = [None] * len(test_windows)
    failures: list[dict] = []
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = {
                pool.submit(classify_one, w): i for i, w in enumerate(test_windows)
            }
            for future, i in futures.items():
                try:
                    results[i] = future.result()
                except Exception as exc:  # per-window isolation
                    failures.append(
                        {"segment_id": test_windows[i].segment_id, "error": str(exc)}
                    )
    else:
        for i, w in enumerate(test_windows):
            try:
                results[i] = classify_one(w)
            except Exception as exc:
                failures.append({"segment_id": w.segment_id, "error": str(exc)})

    pairs = [
        (w.label, predicted)
        for w, predicted in zip(test_windows, results)
        if predicted is not None
    ]
    label_set = sorted(
        set(pipeline.label_set()) | {true for true, _ in pairs}
    )
    matrix = confusion(
        [t for t, _ in pairs], [p for _, p in pairs], label_set
    )
    macro, weighted, per_class = f1_scores(matrix)
    failures.sort(key=lambda f: f["segment_id"])
    cost = None
    if pipeline.ledger is not None:
        cost = cost_report(pipeline.ledger, rates, n_samples=len(pairs))
    return EvalReport(
        accuracy=accuracy_from_confusion(matrix),
        macro_f1=macro,
        weighted_f1=weighted,
        per_class={label: s for label, s in zip(label_set, per_class)},
        label_set=tuple(label_set),
        matrix=matrix,
        n_samples=len(pairs),
        n_failed=len(failures),
        failures=failures,
        runtime_s=time.perf_counter() - started,
        cost=cost,
    )
